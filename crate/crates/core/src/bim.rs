//! Bidirectional fusion of the edge and semantic streams.
//!
//! Each stream is refined by a local operator (depthwise filter times a
//! sigmoid channel gate) and a global one (multi-head dot-product attention
//! over flattened positions with a learnable distance penalty), then the two
//! are aligned by cross attention in both directions and merged by a 1x1
//! convolution. Two simpler fusion blocks (joint attention over the
//! concatenated streams, and merge-then-attend) exist as comparison stubs.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{self, Bound, Params};
use crate::tensor::{Real, Tensor};

// ── configuration ──

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BimCfg {
    pub c_edge: usize,
    pub c_sem: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub c_out: usize,
    /// Step-1 refinement (also reapplied before the fuse); off = pass-through.
    pub use_local: bool,
    /// Per-path self attention; off = the local output feeds cross attention.
    pub use_global: bool,
    /// Distance penalty in every attention block; off = plain logits (B = 0).
    pub use_bias: bool,
    /// Reuse the step-1 local params for the pre-fuse reapplication.
    pub share_local: bool,
}

impl BimCfg {
    pub fn reference(c_edge: usize, c_sem: usize, c_out: usize) -> BimCfg {
        BimCfg {
            c_edge,
            c_sem,
            heads: 4,
            head_dim: 32,
            c_out,
            use_local: true,
            use_global: true,
            use_bias: true,
            share_local: false,
        }
    }

    /// Width of the concatenated head outputs.
    pub fn proj_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("c_edge", self.c_edge),
            ("c_sem", self.c_sem),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("c_out", self.c_out),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("bim: {what} must be positive")));
            }
        }
        Ok(())
    }
}

/// softplus(GAUSS_RAW_INIT) ~= 0.1: a mild locality prior at startup.
const GAUSS_RAW_INIT: Real = -2.252168461044091;

// ── pairwise squared distances ──

/// Squared Euclidean distances between grid positions in row-major order.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    pub h: usize,
    pub w: usize,
    /// [N,N], N = h*w; symmetric, zero diagonal, integer-valued.
    pub d2: Tensor,
}

pub fn pairwise_sq_dist(h: usize, w: usize) -> DistanceTable {
    assert!(h >= 1 && w >= 1, "degenerate grid {h}x{w}");
    let n = h * w;
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let (yi, xi) = ((i / w) as isize, (i % w) as isize);
        for j in 0..n {
            let (yj, xj) = ((j / w) as isize, (j % w) as isize);
            let dy = yi - yj;
            let dx = xi - xj;
            d[i * n + j] = (dy * dy + dx * dx) as Real;
        }
    }
    DistanceTable {
        h,
        w,
        d2: Tensor::new(&[n, n], d).expect("distance table shape"),
    }
}

impl DistanceTable {
    /// Constant (no-grad) graph leaf holding the table.
    pub fn leaf(&self, g: &mut Graph) -> Var {
        g.leaf(&self.d2)
    }
}

/// Distance penalty applied inside attention logits: B = -w * D2.
#[derive(Debug, Clone, Copy)]
pub enum GaussBias {
    /// No penalty term at all.
    Off,
    /// Fixed nonnegative strength (ablations and tests).
    Fixed { w: Real, d2: Var },
    /// Learnable strength w = softplus(raw), guaranteeing w > 0.
    Learned { raw: Var, d2: Var },
}

// ── attention ──

/// Multi-head scaled dot-product attention over position rows.
///
/// `q_src` is [N, Cq], `kv_src` is [N, Ckv]; `wq`/`wk`/`wv` project to
/// heads*head_dim columns. Logits are (QK^T + B) / sqrt(head_dim) per head,
/// with the same B in every head. Returns the concatenated head outputs
/// [N, heads*head_dim] and each head's row-stochastic attention matrix.
pub fn attention(
    g: &mut Graph,
    q_src: Var,
    kv_src: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    bias: &GaussBias,
    heads: usize,
    head_dim: usize,
) -> Result<(Var, Vec<Var>)> {
    let n = g.shape(q_src)[0];
    if g.shape(kv_src)[0] != n {
        return Err(Error::DimMismatch {
            op: "attention",
            axis: 0,
            left: n,
            right: g.shape(kv_src)[0],
        });
    }
    let q = g.matmul(q_src, wq)?;
    let k = g.matmul(kv_src, wk)?;
    let v = g.matmul(kv_src, wv)?;
    let dh = heads * head_dim;
    if g.shape(q)[1] != dh {
        return Err(Error::Shape {
            op: "attention",
            msg: format!("projection width {} != heads*head_dim {}", g.shape(q)[1], dh),
        });
    }

    // Shared penalty matrix; built once, reused by every head.
    let b_mat = match *bias {
        GaussBias::Off => None,
        GaussBias::Fixed { w, d2 } => Some(g.scale(d2, -w)),
        GaussBias::Learned { raw, d2 } => {
            let w = g.softplus(raw);
            let neg = g.scale(d2, -1.0);
            Some(g.mul_scalar(neg, w)?)
        }
    };
    if let Some(b) = b_mat {
        if g.shape(b) != [n, n] {
            return Err(Error::Shape {
                op: "attention",
                msg: format!("distance table {:?} for {} positions", g.shape(b), n),
            });
        }
    }

    let inv_sqrt_d = 1.0 / (head_dim as Real).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut attns = Vec::with_capacity(heads);
    for hh in 0..heads {
        let qh = g.slice_cols(q, hh * head_dim, head_dim)?;
        let kh = g.slice_cols(k, hh * head_dim, head_dim)?;
        let vh = g.slice_cols(v, hh * head_dim, head_dim)?;
        let kt = g.transpose2(kh)?;
        let mut logits = g.matmul(qh, kt)?;
        if let Some(b) = b_mat {
            logits = g.add(logits, b)?;
        }
        let scaled = g.scale(logits, inv_sqrt_d);
        let attn = g.softmax_rows(scaled)?;
        outs.push(g.matmul(attn, vh)?);
        attns.push(attn);
    }
    let z = g.concat_cols(&outs)?;
    Ok((z, attns))
}

// ── parameter bundles ──

/// Depthwise 3x3 filter (bias-free) gated by a sigmoid 1x1 channel map.
#[derive(Debug, Clone, Copy)]
pub struct LocalVars {
    pub dw: Var,
    pub gate_w: Var,
    pub gate_b: Var,
}

pub fn local_self_attention(g: &mut Graph, x: Var, p: &LocalVars) -> Result<Var> {
    let filtered = g.depthwise_conv2d(x, p.dw, 1)?;
    let lin = g.conv1x1(x, p.gate_w, Some(p.gate_b))?;
    let gate = g.sigmoid(lin);
    g.mul(filtered, gate)
}

/// One stream's parameters: local refiner(s), shared Q/K/V projections used
/// by both the self and cross attention, the self-attention output restore,
/// and the 1x1 projection that returns cross-attention output to this
/// stream's width.
#[derive(Debug, Clone, Copy)]
pub struct PathVars {
    pub loc1: Option<LocalVars>,
    pub loc2: Option<LocalVars>,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    /// Restore [heads*head_dim] -> [C] after self attention.
    pub o: Option<(Var, Var)>,
    /// Restore [heads*head_dim] -> [C] for the incoming cross output.
    pub proj_w: Var,
    pub proj_b: Var,
}

#[derive(Debug, Clone)]
pub struct BimVars {
    pub e: PathVars,
    pub s: PathVars,
    /// Raw scalar behind the softplus; absent when the penalty is ablated.
    pub gauss_raw: Option<Var>,
    pub fuse_w: Var,
    pub fuse_b: Var,
}

fn define_local(p: &mut Params, rng: &mut ChaCha8Rng, prefix: &str, c: usize) {
    p.insert(format!("{prefix}.dw"), params::depthwise_weight(rng, c, 3));
    p.insert(format!("{prefix}.gate.w"), params::conv1x1_weight(rng, c, c));
    p.insert(format!("{prefix}.gate.b"), params::zeros(&[c]));
}

fn define_path(p: &mut Params, rng: &mut ChaCha8Rng, prefix: &str, c: usize, cfg: &BimCfg) {
    let dh = cfg.proj_dim();
    if cfg.use_local {
        define_local(p, rng, &format!("{prefix}.loc1"), c);
        if !cfg.share_local {
            define_local(p, rng, &format!("{prefix}.loc2"), c);
        }
    }
    p.insert(format!("{prefix}.q.w"), params::linear_weight(rng, c, dh));
    p.insert(format!("{prefix}.k.w"), params::linear_weight(rng, c, dh));
    p.insert(format!("{prefix}.v.w"), params::linear_weight(rng, c, dh));
    if cfg.use_global {
        p.insert(format!("{prefix}.o.w"), params::linear_weight(rng, dh, c));
        p.insert(format!("{prefix}.o.b"), params::zeros(&[c]));
    }
    p.insert(format!("{prefix}.proj.w"), params::linear_weight(rng, dh, c));
    p.insert(format!("{prefix}.proj.b"), params::zeros(&[c]));
}

/// Register all fusion-module parameters under the `bim.` prefix. The name
/// set depends only on the configuration, so checkpoints are self-describing.
pub fn define_bim(p: &mut Params, rng: &mut ChaCha8Rng, cfg: &BimCfg) {
    define_path(p, rng, "bim.e", cfg.c_edge, cfg);
    define_path(p, rng, "bim.s", cfg.c_sem, cfg);
    if cfg.use_bias {
        p.insert("bim.gauss", Tensor::new(&[1], vec![GAUSS_RAW_INIT]).unwrap());
    }
    p.insert(
        "bim.fuse.w",
        params::conv1x1_weight(rng, cfg.c_out, cfg.c_edge + cfg.c_sem),
    );
    p.insert("bim.fuse.b", params::zeros(&[cfg.c_out]));
}

fn bind_local(b: &Bound, prefix: &str) -> LocalVars {
    LocalVars {
        dw: b.var(&format!("{prefix}.dw")),
        gate_w: b.var(&format!("{prefix}.gate.w")),
        gate_b: b.var(&format!("{prefix}.gate.b")),
    }
}

fn bind_path(b: &Bound, prefix: &str, cfg: &BimCfg) -> PathVars {
    let loc1 = cfg.use_local.then(|| bind_local(b, &format!("{prefix}.loc1")));
    let loc2 = if cfg.use_local && !cfg.share_local {
        Some(bind_local(b, &format!("{prefix}.loc2")))
    } else {
        loc1
    };
    PathVars {
        loc1,
        loc2,
        wq: b.var(&format!("{prefix}.q.w")),
        wk: b.var(&format!("{prefix}.k.w")),
        wv: b.var(&format!("{prefix}.v.w")),
        o: cfg
            .use_global
            .then(|| (b.var(&format!("{prefix}.o.w")), b.var(&format!("{prefix}.o.b")))),
        proj_w: b.var(&format!("{prefix}.proj.w")),
        proj_b: b.var(&format!("{prefix}.proj.b")),
    }
}

impl BimVars {
    pub fn bind(b: &Bound, cfg: &BimCfg) -> BimVars {
        BimVars {
            e: bind_path(b, "bim.e", cfg),
            s: bind_path(b, "bim.s", cfg),
            gauss_raw: cfg.use_bias.then(|| b.var("bim.gauss")),
            fuse_w: b.var("bim.fuse.w"),
            fuse_b: b.var("bim.fuse.b"),
        }
    }
}

// ── forward passes ──

/// Self attention over one stream, restored to its channel width.
pub fn global_self_attention(
    g: &mut Graph,
    x: Var,
    path: &PathVars,
    bias: &GaussBias,
    heads: usize,
    head_dim: usize,
) -> Result<(Var, Vec<Var>)> {
    let shape = g.shape(x).to_vec();
    let (h, w) = (shape[1], shape[2]);
    let nc = g.chw_to_nc(x)?;
    let (z, attns) = attention(g, nc, nc, path.wq, path.wk, path.wv, bias, heads, head_dim)?;
    let (ow, ob) = path.o.ok_or(Error::Shape {
        op: "global_self_attention",
        msg: "path has no output restore projection".into(),
    })?;
    let restored = g.matmul(z, ow)?;
    let restored = g.add_row_bias(restored, ob)?;
    let out = g.nc_to_chw(restored, h, w)?;
    Ok((out, attns))
}

/// Cross attention: queries from one stream, keys/values from the other.
/// Returns the raw concatenated head outputs [N, heads*head_dim]; the caller
/// restores width with the destination stream's projection.
pub fn cross_attention(
    g: &mut Graph,
    q_x: Var,
    kv_x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    bias: &GaussBias,
    heads: usize,
    head_dim: usize,
) -> Result<(Var, Vec<Var>)> {
    let qs = g.shape(q_x).to_vec();
    let ks = g.shape(kv_x).to_vec();
    if qs[1..] != ks[1..] {
        return Err(Error::Shape {
            op: "cross_attention",
            msg: format!("spatial sizes differ: {:?} vs {:?}", &qs[1..], &ks[1..]),
        });
    }
    let q_nc = g.chw_to_nc(q_x)?;
    let kv_nc = g.chw_to_nc(kv_x)?;
    attention(g, q_nc, kv_nc, wq, wk, wv, bias, heads, head_dim)
}

/// Intermediate tensors of one fusion pass, exposed for invariant tests.
pub struct BimTrace {
    pub x_e_loc: Var,
    pub x_s_loc: Var,
    pub x_e_glob: Var,
    pub x_s_glob: Var,
    /// Cross output routed into the edge residual (queries from the semantic
    /// stream, keys/values from the edge stream), pre-projection.
    pub z_for_e: Var,
    /// Cross output routed into the semantic residual (queries from the edge
    /// stream, keys/values from the semantic stream), pre-projection.
    pub z_for_s: Var,
    pub u_e: Var,
    pub u_s: Var,
    pub self_attn_e: Vec<Var>,
    pub self_attn_s: Vec<Var>,
    pub cross_attn_for_e: Vec<Var>,
    pub cross_attn_for_s: Vec<Var>,
    pub out: Var,
}

fn restore_cross(g: &mut Graph, z: Var, path: &PathVars, h: usize, w: usize) -> Result<Var> {
    let r = g.matmul(z, path.proj_w)?;
    let r = g.add_row_bias(r, path.proj_b)?;
    g.nc_to_chw(r, h, w)
}

/// Full fusion pass over the two streams at a shared spatial size.
pub fn bim_forward(
    g: &mut Graph,
    v: &BimVars,
    cfg: &BimCfg,
    f_edge: Var,
    f_sem: Var,
    dist: &DistanceTable,
) -> Result<BimTrace> {
    cfg.validate()?;
    let es = g.shape(f_edge).to_vec();
    let ss = g.shape(f_sem).to_vec();
    if es[1..] != ss[1..] {
        return Err(Error::Shape {
            op: "bim_forward",
            msg: format!("stream sizes differ: {:?} vs {:?}", &es[1..], &ss[1..]),
        });
    }
    if es[0] != cfg.c_edge || ss[0] != cfg.c_sem {
        return Err(Error::DimMismatch {
            op: "bim_forward",
            axis: 0,
            left: es[0],
            right: cfg.c_edge,
        });
    }
    let (h, w) = (es[1], es[2]);
    if (dist.h, dist.w) != (h, w) {
        return Err(Error::Shape {
            op: "bim_forward",
            msg: format!("distance table is {}x{}, features {}x{}", dist.h, dist.w, h, w),
        });
    }

    // One penalty strength shared by every attention block in the module.
    let bias = match v.gauss_raw {
        Some(raw) if cfg.use_bias => GaussBias::Learned {
            raw,
            d2: dist.leaf(g),
        },
        _ if cfg.use_bias => {
            return Err(Error::Config("bim: penalty enabled but unbound".into()))
        }
        _ => GaussBias::Fixed {
            w: 0.0,
            d2: dist.leaf(g),
        },
    };

    let x_e_loc = match v.e.loc1 {
        Some(ref l) => local_self_attention(g, f_edge, l)?,
        None => f_edge,
    };
    let x_s_loc = match v.s.loc1 {
        Some(ref l) => local_self_attention(g, f_sem, l)?,
        None => f_sem,
    };

    let (x_e_glob, self_attn_e) = if cfg.use_global {
        global_self_attention(g, x_e_loc, &v.e, &bias, cfg.heads, cfg.head_dim)?
    } else {
        (x_e_loc, Vec::new())
    };
    let (x_s_glob, self_attn_s) = if cfg.use_global {
        global_self_attention(g, x_s_loc, &v.s, &bias, cfg.heads, cfg.head_dim)?
    } else {
        (x_s_loc, Vec::new())
    };

    // Queries from the opposite stream, values kept on the destination side.
    let (z_for_e, cross_attn_for_e) = cross_attention(
        g, x_s_glob, x_e_glob, v.s.wq, v.e.wk, v.e.wv, &bias, cfg.heads, cfg.head_dim,
    )?;
    let (z_for_s, cross_attn_for_s) = cross_attention(
        g, x_e_glob, x_s_glob, v.e.wq, v.s.wk, v.s.wv, &bias, cfg.heads, cfg.head_dim,
    )?;

    let r_e = restore_cross(g, z_for_e, &v.e, h, w)?;
    let r_s = restore_cross(g, z_for_s, &v.s, h, w)?;
    let u_e = g.add(x_e_glob, r_e)?;
    let u_s = g.add(x_s_glob, r_s)?;

    let t_e = match v.e.loc2 {
        Some(ref l) => local_self_attention(g, u_e, l)?,
        None => u_e,
    };
    let t_s = match v.s.loc2 {
        Some(ref l) => local_self_attention(g, u_s, l)?,
        None => u_s,
    };
    let cat = g.concat_channels(t_e, t_s)?;
    let out = g.conv1x1(cat, v.fuse_w, Some(v.fuse_b))?;

    Ok(BimTrace {
        x_e_loc,
        x_s_loc,
        x_e_glob,
        x_s_glob,
        z_for_e,
        z_for_s,
        u_e,
        u_s,
        self_attn_e,
        self_attn_s,
        cross_attn_for_e,
        cross_attn_for_s,
        out,
    })
}

// ── comparison fusion stubs ──

/// Joint attention over the concatenated streams (single shared block).
pub fn define_co_attention(p: &mut Params, rng: &mut ChaCha8Rng, cfg: &BimCfg) {
    let c_in = cfg.c_edge + cfg.c_sem;
    let dh = cfg.proj_dim();
    p.insert("coatt.q.w", params::linear_weight(rng, c_in, dh));
    p.insert("coatt.k.w", params::linear_weight(rng, c_in, dh));
    p.insert("coatt.v.w", params::linear_weight(rng, c_in, dh));
    p.insert("coatt.o.w", params::linear_weight(rng, dh, cfg.c_out));
    p.insert("coatt.o.b", params::zeros(&[cfg.c_out]));
    p.insert("coatt.gauss", Tensor::new(&[1], vec![GAUSS_RAW_INIT]).unwrap());
}

pub fn co_attention_forward(
    g: &mut Graph,
    b: &Bound,
    cfg: &BimCfg,
    f_edge: Var,
    f_sem: Var,
    dist: &DistanceTable,
) -> Result<Var> {
    let cat = g.concat_channels(f_edge, f_sem)?;
    let (h, w) = {
        let s = g.shape(cat);
        (s[1], s[2])
    };
    let bias = GaussBias::Learned {
        raw: b.var("coatt.gauss"),
        d2: dist.leaf(g),
    };
    let nc = g.chw_to_nc(cat)?;
    let (z, _) = attention(
        g,
        nc,
        nc,
        b.var("coatt.q.w"),
        b.var("coatt.k.w"),
        b.var("coatt.v.w"),
        &bias,
        cfg.heads,
        cfg.head_dim,
    )?;
    let r = g.matmul(z, b.var("coatt.o.w"))?;
    let r = g.add_row_bias(r, b.var("coatt.o.b"))?;
    g.nc_to_chw(r, h, w)
}

/// Merge first with a 1x1, then refine locally and attend globally.
pub fn define_merged_attention(p: &mut Params, rng: &mut ChaCha8Rng, cfg: &BimCfg) {
    let c_in = cfg.c_edge + cfg.c_sem;
    let c = cfg.c_out;
    let dh = cfg.proj_dim();
    p.insert("merge.pre.w", params::conv1x1_weight(rng, c, c_in));
    p.insert("merge.pre.b", params::zeros(&[c]));
    define_local(p, rng, "merge.loc", c);
    p.insert("merge.q.w", params::linear_weight(rng, c, dh));
    p.insert("merge.k.w", params::linear_weight(rng, c, dh));
    p.insert("merge.v.w", params::linear_weight(rng, c, dh));
    p.insert("merge.o.w", params::linear_weight(rng, dh, c));
    p.insert("merge.o.b", params::zeros(&[c]));
    p.insert("merge.gauss", Tensor::new(&[1], vec![GAUSS_RAW_INIT]).unwrap());
}

pub fn merged_attention_forward(
    g: &mut Graph,
    b: &Bound,
    cfg: &BimCfg,
    f_edge: Var,
    f_sem: Var,
    dist: &DistanceTable,
) -> Result<Var> {
    let cat = g.concat_channels(f_edge, f_sem)?;
    let merged = g.conv1x1(cat, b.var("merge.pre.w"), Some(b.var("merge.pre.b")))?;
    let loc = bind_local(b, "merge.loc");
    let refined = local_self_attention(g, merged, &loc)?;
    let (h, w) = {
        let s = g.shape(refined);
        (s[1], s[2])
    };
    let path = PathVars {
        loc1: None,
        loc2: None,
        wq: b.var("merge.q.w"),
        wk: b.var("merge.k.w"),
        wv: b.var("merge.v.w"),
        o: Some((b.var("merge.o.w"), b.var("merge.o.b"))),
        proj_w: b.var("merge.q.w"), // unused by self attention
        proj_b: b.var("merge.o.b"), // unused by self attention
    };
    let bias = GaussBias::Learned {
        raw: b.var("merge.gauss"),
        d2: dist.leaf(g),
    };
    let (out, _) = global_self_attention(g, refined, &path, &bias, cfg.heads, cfg.head_dim)?;
    debug_assert_eq!(g.shape(out)[1..], [h, w][..]);
    Ok(out)
}

// ── tests ──

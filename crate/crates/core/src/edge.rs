//! Edge path: a fixed Sobel seed refined by a cascade of gated stages.
//!
//! Each stage lifts the seed through a small filter branch, forms a gated
//! combination with the incoming features (spatial gate times channel gate
//! over the concatenation), projects back to the stage width, and applies a
//! second-order residual extrapolation over the previous two states.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{self, Bound, Params};
use crate::tensor::{Real, Tensor};

pub const SOBEL_X: [Real; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
pub const SOBEL_Y: [Real; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

/// Guard inside the magnitude sqrt; keeps the gradient finite on flat input.
pub const SOBEL_MAG_EPS: Real = 1e-12;

/// Per-channel Sobel gradient magnitude, sqrt(gx^2 + gy^2 + eps).
/// The border is replicate-padded so flat images stay flat to the edge.
pub fn sobel_seed(g: &mut Graph, x: Var) -> Result<Var> {
    let c = g.shape(x)[0];
    let tile = |k: &[Real; 9]| {
        Tensor::from_fn(&[c, 3, 3], |i| k[i % 9])
    };
    let kx = g.leaf_owned(tile(&SOBEL_X));
    let ky = g.leaf_owned(tile(&SOBEL_Y));
    let padded = g.replicate_pad1(x)?;
    let gx = g.depthwise_conv2d(padded, kx, 0)?;
    let gy = g.depthwise_conv2d(padded, ky, 0)?;
    let gx2 = g.mul(gx, gx)?;
    let gy2 = g.mul(gy, gy)?;
    let s = g.add(gx2, gy2)?;
    Ok(g.sqrt_eps(s, SOBEL_MAG_EPS))
}

/// Mean over channels as a single-channel map (constant 1/C projection).
pub fn channel_mean(g: &mut Graph, x: Var) -> Result<Var> {
    let c = g.shape(x)[0];
    let w = g.leaf_owned(Tensor::full(&[1, c], 1.0 / c as Real));
    g.conv1x1(x, w, None)
}

// ── refiner stage ──

/// Graph-bound parameter handles for one refiner stage of width `c`:
/// filter branch (1 -> c -> c, 3x3), seed projection, spatial gate stack,
/// channel gate MLP over the 2c concat, and the 2c -> c align projection.
#[derive(Clone, Copy)]
pub struct StageVars {
    pub f1_w: Var,
    pub f1_b: Var,
    pub f2_w: Var,
    pub f2_b: Var,
    pub seed_w: Var,
    pub seed_b: Var,
    pub sg1_w: Var,
    pub sg1_b: Var,
    pub sg2_w: Var,
    pub sg2_b: Var,
    pub cg1_w: Var,
    pub cg1_b: Var,
    pub cg2_w: Var,
    pub cg2_b: Var,
    pub align_w: Var,
    pub align_b: Var,
}

fn sgate_mid(c: usize) -> usize {
    (c / 8).max(4)
}

fn cgate_mid(c2: usize) -> usize {
    (c2 / 2).max(2)
}

pub fn define_stage(p: &mut Params, rng: &mut ChaCha8Rng, prefix: &str, c: usize) {
    let c2 = 2 * c;
    let sm = sgate_mid(c);
    let cm = cgate_mid(c2);
    p.insert(format!("{prefix}.f1.w"), params::conv_weight(rng, c, 1, 3));
    p.insert(format!("{prefix}.f1.b"), params::zeros(&[c]));
    p.insert(format!("{prefix}.f2.w"), params::conv_weight(rng, c, c, 3));
    p.insert(format!("{prefix}.f2.b"), params::zeros(&[c]));
    p.insert(format!("{prefix}.seed.w"), params::conv1x1_weight(rng, c, c));
    p.insert(format!("{prefix}.seed.b"), params::zeros(&[c]));
    p.insert(format!("{prefix}.sg1.w"), params::conv_weight(rng, sm, c2, 3));
    p.insert(format!("{prefix}.sg1.b"), params::zeros(&[sm]));
    p.insert(format!("{prefix}.sg2.w"), params::conv_weight(rng, 1, sm, 3));
    p.insert(format!("{prefix}.sg2.b"), params::zeros(&[1]));
    p.insert(format!("{prefix}.cg1.w"), params::linear_weight(rng, c2, cm));
    p.insert(format!("{prefix}.cg1.b"), params::zeros(&[cm]));
    p.insert(format!("{prefix}.cg2.w"), params::linear_weight(rng, cm, c2));
    p.insert(format!("{prefix}.cg2.b"), params::zeros(&[c2]));
    p.insert(format!("{prefix}.align.w"), params::conv1x1_weight(rng, c, c2));
    p.insert(format!("{prefix}.align.b"), params::zeros(&[c]));
}

impl StageVars {
    pub fn bind(b: &Bound, prefix: &str) -> StageVars {
        let v = |s: &str| b.var(&format!("{prefix}.{s}"));
        StageVars {
            f1_w: v("f1.w"),
            f1_b: v("f1.b"),
            f2_w: v("f2.w"),
            f2_b: v("f2.b"),
            seed_w: v("seed.w"),
            seed_b: v("seed.b"),
            sg1_w: v("sg1.w"),
            sg1_b: v("sg1.b"),
            sg2_w: v("sg2.w"),
            sg2_b: v("sg2.b"),
            cg1_w: v("cg1.w"),
            cg1_b: v("cg1.b"),
            cg2_w: v("cg2.w"),
            cg2_b: v("cg2.b"),
            align_w: v("align.w"),
            align_b: v("align.b"),
        }
    }
}

/// Two stacked 3x3 convs lifting the one-channel seed to the stage width.
pub fn filter_branch(g: &mut Graph, sv: &StageVars, e: Var) -> Result<Var> {
    let h = g.conv2d(e, sv.f1_w, Some(sv.f1_b), 1, 1)?;
    let h = g.relu(h);
    g.conv2d(h, sv.f2_w, Some(sv.f2_b), 1, 1)
}

/// Sigmoid gate map [1,H,W] from the concatenation of features and the
/// filtered seed.
pub fn spatial_attention(g: &mut Graph, sv: &StageVars, t: Var, e: Var) -> Result<Var> {
    let cat = g.concat_channels(t, e)?;
    spatial_attention_cat(g, sv, cat)
}

fn spatial_attention_cat(g: &mut Graph, sv: &StageVars, cat: Var) -> Result<Var> {
    let h = g.conv2d(cat, sv.sg1_w, Some(sv.sg1_b), 1, 1)?;
    let h = g.relu(h);
    let h = g.conv2d(h, sv.sg2_w, Some(sv.sg2_b), 1, 1)?;
    Ok(g.sigmoid(h))
}

/// Softmax channel weights over the input's channels (GAP + two linear maps).
pub fn channel_attention(g: &mut Graph, sv: &StageVars, t: Var) -> Result<Var> {
    let c = g.shape(t)[0];
    let pooled = g.global_avg_pool(t)?;
    let row = g.reshape(pooled, &[1, c])?;
    let h = g.matmul(row, sv.cg1_w)?;
    let h = g.add_row_bias(h, sv.cg1_b)?;
    let h = g.relu(h);
    let h = g.matmul(h, sv.cg2_w)?;
    let h = g.add_row_bias(h, sv.cg2_b)?;
    let sm = g.softmax_rows(h)?;
    g.reshape(sm, &[c])
}

/// a ⊗ (b ⊙ cat) followed by the align projection.
pub fn gated_core(
    g: &mut Graph,
    a: Var,
    b: Var,
    cat: Var,
    align_w: Var,
    align_b: Var,
) -> Result<Var> {
    let cb = g.mul_channel(cat, b)?;
    let ab = g.mul_spatial(cb, a)?;
    g.conv1x1(ab, align_w, Some(align_b))
}

/// Full gated input: filters the seed, concatenates, applies both gates and
/// aligns back to the stage width.
pub fn gated_input(g: &mut Graph, sv: &StageVars, t_next: Var, e: Var) -> Result<Var> {
    let fe = filter_branch(g, sv, e)?;
    gated_with_filter(g, sv, t_next, fe)
}

fn gated_with_filter(g: &mut Graph, sv: &StageVars, t_next: Var, fe: Var) -> Result<Var> {
    let cat = g.concat_channels(t_next, fe)?;
    let a = spatial_attention_cat(g, sv, cat)?;
    let b = channel_attention(g, sv, cat)?;
    gated_core(g, a, b, cat, sv.align_w, sv.align_b)
}

/// t_gate + t_next - 3 (t_next - t_prev): second-order residual step.
pub fn taylor_update(g: &mut Graph, t_gate: Var, t_next: Var, t_prev: Var) -> Result<Var> {
    let delta = g.sub(t_next, t_prev)?;
    let d3 = g.scale(delta, 3.0);
    let lin = g.sub(t_next, d3)?;
    g.add(t_gate, lin)
}

/// One refiner stage: seed-projected init, gated combination, residual step.
/// Output has the same shape as `t_prev`.
pub fn stage_forward(g: &mut Graph, sv: &StageVars, t_prev: Var, e: Var) -> Result<Var> {
    let fe = filter_branch(g, sv, e)?;
    let seed = g.conv1x1(fe, sv.seed_w, Some(sv.seed_b))?;
    let t_next = g.add(t_prev, seed)?;
    let t_gate = gated_with_filter(g, sv, t_next, fe)?;
    taylor_update(g, t_gate, t_next, t_prev)
}

// ── cascade ──

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSource {
    /// Sobel of the raw input image (default).
    Image,
    /// Sobel of the channel-mean of the shallowest backbone feature.
    Backbone,
}

#[derive(Debug, Clone)]
pub struct MultiErCfg {
    /// Number of active refiner stages, 0..=3. With k stages the cascade
    /// enters at scale 1/2^(4-k) using the matching backbone feature; 0
    /// degenerates to a 1x1 projection of the deepest edge feature.
    pub stages: usize,
    /// Stage widths at scales /2, /4, /8.
    pub stage_channels: [usize; 3],
    pub seed_source: SeedSource,
}

pub struct BackboneFeats {
    pub f2: Var,
    pub f4: Var,
    pub f8_edge: Var,
}

pub struct MultiErOut {
    /// Refined edge feature at 1/8 scale.
    pub feature: Var,
    /// Full-resolution edge logits from the auxiliary head.
    pub edge_logits: Var,
}

pub fn define_multi_er(p: &mut Params, rng: &mut ChaCha8Rng, cfg: &MultiErCfg) {
    assert!(cfg.stages <= 3, "at most three refiner stages");
    let ch = cfg.stage_channels;
    if cfg.stages == 0 {
        p.insert("er.bypass.w", params::conv1x1_weight(rng, ch[2], ch[2]));
        p.insert("er.bypass.b", params::zeros(&[ch[2]]));
    } else {
        let entry = 4 - cfg.stages;
        for s in entry..=3 {
            define_stage(p, rng, &format!("er.s{s}"), ch[s - 1]);
            if s > entry {
                let name = format!("er.b{}{}", s - 1, s);
                p.insert(
                    format!("{name}.w"),
                    params::kaiming(rng, &[ch[s - 1], ch[s - 2], 1, 1], ch[s - 2]),
                );
                p.insert(format!("{name}.b"), params::zeros(&[ch[s - 1]]));
            }
        }
    }
    p.insert("er.edge_head.w", params::conv1x1_weight(rng, 1, ch[2]));
    p.insert("er.edge_head.b", params::zeros(&[1]));
}

pub fn multi_er_forward(
    g: &mut Graph,
    b: &Bound,
    cfg: &MultiErCfg,
    feats: &BackboneFeats,
    image: Var,
) -> Result<MultiErOut> {
    let (hf, wf) = (g.shape(image)[1], g.shape(image)[2]);
    let feature = if cfg.stages == 0 {
        let w = b.var("er.bypass.w");
        let bias = b.var("er.bypass.b");
        g.conv1x1(feats.f8_edge, w, Some(bias))?
    } else {
        let seed_base = match cfg.seed_source {
            SeedSource::Image => sobel_seed(g, image)?,
            SeedSource::Backbone => {
                let m = channel_mean(g, feats.f2)?;
                sobel_seed(g, m)?
            }
        };
        let entry = 4 - cfg.stages;
        let mut t = match entry {
            1 => feats.f2,
            2 => feats.f4,
            _ => feats.f8_edge,
        };
        for s in entry..=3 {
            if s > entry {
                let name = format!("er.b{}{}", s - 1, s);
                let w = b.var(&format!("{name}.w"));
                let bias = b.var(&format!("{name}.b"));
                t = g.conv2d(t, w, Some(bias), 2, 0)?;
            }
            let sv = StageVars::bind(b, &format!("er.s{s}"));
            let (hs, ws) = (g.shape(t)[1], g.shape(t)[2]);
            let e_s = g.bilinear_resize(seed_base, hs, ws)?;
            t = stage_forward(g, &sv, t, e_s)?;
        }
        t
    };
    let head_w = b.var("er.edge_head.w");
    let head_b = b.var("er.edge_head.b");
    let logits_low = g.conv1x1(feature, head_w, Some(head_b))?;
    let edge_logits = g.bilinear_resize(logits_low, hf, wf)?;
    Ok(MultiErOut {
        feature,
        edge_logits,
    })
}

// ── tests ──

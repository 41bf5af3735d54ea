//! Finite-difference verification of every reverse-mode gradient.
//!
//! Each family draws random small inputs, builds a scalar probe loss, and
//! compares `backward` against central differences coordinate by
//! coordinate. Families cover single ops (tight tolerance, many trials) and
//! whole modules (looser tolerance, few trials). A deliberate-corruption
//! hook scales the analytic gradients of one named family so the harness
//! can prove it would catch a broken backward.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bim::{self, BimCfg, BimVars, GaussBias};
use crate::edge::{self, BackboneFeats, MultiErCfg, SeedSource, StageVars};
use crate::network::{self, BimToggles, NetworkConfig};
use crate::graph::{Graph, Var};
use crate::params::{Bound, Params};
use crate::tensor::{Real, Tensor};

pub const FD_STEP: Real = 1e-5;
pub const OP_TOL: Real = 1e-4;
pub const MODULE_TOL: Real = 1e-3;

/// Central differences (f(x+h·e_i) − f(x−h·e_i)) / 2h for every coordinate.
pub fn finite_diff_grad<F: FnMut(&Tensor) -> Real>(mut f: F, x: &Tensor, h: Real) -> Tensor {
    assert!(h > 0.0, "step must be positive");
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let mut hi = x.clone();
        hi.data_mut()[i] += h;
        let mut lo = x.clone();
        lo.data_mut()[i] -= h;
        out.data_mut()[i] = (f(&hi) - f(&lo)) / (2.0 * h);
    }
    out
}

/// |a−n| relative to the larger magnitude, floored to dodge 0/0.
pub fn rel_err(a: Real, n: Real) -> Real {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

// ── check machinery ──

/// One randomized instance: named leaf tensors plus a builder that maps the
/// bound leaves to a scalar loss.
pub struct Trial {
    pub inputs: Vec<(String, Tensor)>,
    pub build: Box<dyn Fn(&mut Graph, &Bound) -> Var>,
}

pub struct Family {
    pub name: &'static str,
    pub tol: Real,
    pub trials: usize,
    /// Finite-difference coordinate budget per tensor (whole tensor if its
    /// element count is at or below the budget).
    pub max_coords: usize,
    pub make: Box<dyn Fn(&mut ChaCha8Rng) -> Trial>,
}

#[derive(Debug, Clone)]
pub struct OpReport {
    pub family: String,
    pub trials: usize,
    pub coords: usize,
    pub worst: Real,
    pub tol: Real,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.worst.is_finite() && self.worst < self.tol
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<18} worst {:.3e}  (tol {:.0e}, {} trials, {} coords)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.family,
            self.worst,
            self.tol,
            self.trials,
            self.coords
        )
    }
}

fn eval_loss(trial: &Trial, inputs: &[(String, Tensor)]) -> Real {
    let mut g = Graph::new();
    let vars: BTreeMap<String, Var> = inputs
        .iter()
        .map(|(n, t)| (n.clone(), g.leaf(t)))
        .collect();
    let b = Bound::from_vars(vars);
    let loss = (trial.build)(&mut g, &b);
    g.value(loss).item()
}

fn coord_sample(rng: &mut ChaCha8Rng, numel: usize, budget: usize) -> Vec<usize> {
    if numel <= budget {
        return (0..numel).collect();
    }
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < budget {
        picked.insert(rng.gen_range(0..numel));
    }
    picked.into_iter().collect()
}

/// Run one family; `corrupt` scales its analytic gradients by 1.01 to prove
/// the harness detects a wrong backward implementation.
pub fn run_family(f: &Family, seed: u64, corrupt: bool) -> OpReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Real = 0.0;
    let mut coords = 0usize;
    for _ in 0..f.trials {
        let trial = (f.make)(&mut rng);

        // Analytic pass with gradient-tracking leaves.
        let mut g = Graph::new();
        let mut order = Vec::with_capacity(trial.inputs.len());
        let mut vars = BTreeMap::new();
        for (n, t) in &trial.inputs {
            let v = g.leaf(&t.clone().with_grad());
            order.push(v);
            vars.insert(n.clone(), v);
        }
        let b = Bound::from_vars(vars);
        let loss = (trial.build)(&mut g, &b);
        g.backward(loss).expect("scalar loss");
        let mut grads: Vec<Tensor> = order.iter().map(|&v| g.grad(v)).collect();
        if corrupt {
            for gr in &mut grads {
                for v in gr.data_mut() {
                    *v *= 1.01;
                }
            }
        }

        // Numeric pass, rebuilding the graph per perturbed coordinate.
        for (i, (_, t)) in trial.inputs.iter().enumerate() {
            for j in coord_sample(&mut rng, t.numel(), f.max_coords) {
                let probe = |delta: Real| {
                    let mut ins = trial.inputs.clone();
                    ins[i].1.data_mut()[j] += delta;
                    eval_loss(&trial, &ins)
                };
                let numeric = (probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(grads[i].data()[j], numeric));
                coords += 1;
            }
        }
    }
    OpReport {
        family: f.name.to_string(),
        trials: f.trials,
        coords,
        worst,
        tol: f.tol,
    }
}

pub fn run_suite(corrupt: Option<&str>) -> Vec<OpReport> {
    families()
        .iter()
        .enumerate()
        .map(|(i, f)| run_family(f, 0x9e3779b9 + i as u64, corrupt == Some(f.name)))
        .collect()
}

// ── samplers ──

fn uni(rng: &mut ChaCha8Rng, shape: &[usize], lo: Real, hi: Real) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen::<f64>() as Real * (hi - lo) + lo)
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn uni_off_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: Real) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v = rng.gen::<f64>() as Real * 2.0 - 1.0;
        v + margin * v.signum()
    })
}

fn binary(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| if rng.gen::<f64>() < 0.4 { 1.0 } else { 0.0 })
}

/// Index-hashed constant weights make the probe loss sensitive to every
/// output coordinate without adding checked leaves.
fn probe_sum(g: &mut Graph, y: Var) -> Var {
    let shape = g.shape(y).to_vec();
    let w = Tensor::from_fn(&shape, |i| {
        ((i.wrapping_mul(2654435761) % 97) as Real) / 97.0 - 0.5
    });
    let wl = g.leaf_owned(w);
    let prod = g.mul(y, wl).expect("probe shapes match");
    g.sum_all(prod)
}

// ── families ──

#[allow(clippy::too_many_lines)]
pub fn families() -> Vec<Family> {
    let mut fams: Vec<Family> = Vec::new();
    let mut fam = |name: &'static str,
                   tol: Real,
                   trials: usize,
                   max_coords: usize,
                   make: Box<dyn Fn(&mut ChaCha8Rng) -> Trial>| {
        fams.push(Family {
            name,
            tol,
            trials,
            max_coords,
            make,
        });
    };

    fam(
        "conv2d",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| {
            let stride = if r.gen::<bool>() { 1 } else { 2 };
            Trial {
                inputs: vec![
                    ("x".into(), uni(r, &[2, 5, 5], -1.0, 1.0)),
                    ("w".into(), uni(r, &[3, 2, 3, 3], -0.5, 0.5)),
                    ("b".into(), uni(r, &[3], -0.5, 0.5)),
                ],
                build: Box::new(move |g, p| {
                    let y = g
                        .conv2d(p.var("x"), p.var("w"), Some(p.var("b")), stride, 1)
                        .unwrap();
                    probe_sum(g, y)
                }),
            }
        }),
    );

    fam(
        "depthwise_conv2d",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![
                ("x".into(), uni(r, &[3, 5, 4], -1.0, 1.0)),
                ("w".into(), uni(r, &[3, 3, 3], -0.5, 0.5)),
            ],
            build: Box::new(|g, p| {
                let y = g.depthwise_conv2d(p.var("x"), p.var("w"), 1).unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "conv1x1",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![
                ("x".into(), uni(r, &[3, 4, 4], -1.0, 1.0)),
                ("w".into(), uni(r, &[2, 3], -0.5, 0.5)),
                ("b".into(), uni(r, &[2], -0.5, 0.5)),
            ],
            build: Box::new(|g, p| {
                let y = g
                    .conv1x1(p.var("x"), p.var("w"), Some(p.var("b")))
                    .unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "matmul",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![
                ("a".into(), uni(r, &[3, 4], -1.0, 1.0)),
                ("b".into(), uni(r, &[4, 2], -1.0, 1.0)),
            ],
            build: Box::new(|g, p| {
                let y = g.matmul(p.var("a"), p.var("b")).unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "softmax_rows",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![("x".into(), uni(r, &[3, 5], -2.0, 2.0))],
            build: Box::new(|g, p| {
                let y = g.softmax_rows(p.var("x")).unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "sigmoid",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![("x".into(), uni(r, &[2, 3, 3], -3.0, 3.0))],
            build: Box::new(|g, p| {
                let y = g.sigmoid(p.var("x"));
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "relu",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            // Kink at zero: keep samples a margin away so the secant is valid.
            inputs: vec![("x".into(), uni_off_zero(r, &[4, 6], 0.05))],
            build: Box::new(|g, p| {
                let y = g.relu(p.var("x"));
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "softplus",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![("x".into(), uni(r, &[7], -4.0, 4.0))],
            build: Box::new(|g, p| {
                let y = g.softplus(p.var("x"));
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "sqrt_eps",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![("x".into(), uni(r, &[2, 3, 3], 0.1, 2.0))],
            build: Box::new(|g, p| {
                let y = g.sqrt_eps(p.var("x"), 1e-6);
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "elementwise",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![
                ("a".into(), uni(r, &[2, 3, 3], -1.0, 1.0)),
                ("b".into(), uni(r, &[2, 3, 3], -1.0, 1.0)),
            ],
            build: Box::new(|g, p| {
                // (2a − b) ⊙ b + a exercises add, sub, mul and scale.
                let (a, b) = (p.var("a"), p.var("b"));
                let two_a = g.scale(a, 2.0);
                let diff = g.sub(two_a, b).unwrap();
                let prod = g.mul(diff, b).unwrap();
                let y = g.add(prod, a).unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "channel_norm",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![("x".into(), uni(r, &[3, 4, 4], -1.0, 1.0))],
            build: Box::new(|g, p| {
                let y = g.channel_norm(p.var("x"), 1e-5).unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "bilinear_resize",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| {
            let up = r.gen::<bool>();
            Trial {
                inputs: vec![("x".into(), uni(r, &[2, 4, 4], -1.0, 1.0))],
                build: Box::new(move |g, p| {
                    let (oh, ow) = if up { (6, 7) } else { (2, 3) };
                    let y = g.bilinear_resize(p.var("x"), oh, ow).unwrap();
                    probe_sum(g, y)
                }),
            }
        }),
    );

    fam(
        "global_avg_pool",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![("x".into(), uni(r, &[4, 3, 3], -1.0, 1.0))],
            build: Box::new(|g, p| {
                let y = g.global_avg_pool(p.var("x")).unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "broadcast_mul",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![
                ("x".into(), uni(r, &[3, 4, 4], -1.0, 1.0)),
                ("s".into(), uni(r, &[3], -1.0, 1.0)),
                ("a".into(), uni(r, &[1, 4, 4], -1.0, 1.0)),
            ],
            build: Box::new(|g, p| {
                let cs = g.mul_channel(p.var("x"), p.var("s")).unwrap();
                let y = g.mul_spatial(cs, p.var("a")).unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "replicate_pad",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![("x".into(), uni(r, &[2, 3, 4], -1.0, 1.0))],
            build: Box::new(|g, p| {
                let y = g.replicate_pad1(p.var("x")).unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "reshape_ops",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![
                ("x".into(), uni(r, &[3, 2, 4], -1.0, 1.0)),
                ("b".into(), uni(r, &[3], -1.0, 1.0)),
            ],
            build: Box::new(|g, p| {
                // chw -> nc -> bias -> transpose -> slice -> concat -> chw.
                let nc = g.chw_to_nc(p.var("x")).unwrap();
                let biased = g.add_row_bias(nc, p.var("b")).unwrap();
                let t = g.transpose2(biased).unwrap();
                let head = g.slice_cols(t, 0, 3).unwrap();
                let tail = g.slice_cols(t, 3, 5).unwrap();
                let cat = g.concat_cols(&[tail, head]).unwrap();
                let back = g.transpose2(cat).unwrap();
                let y = g.nc_to_chw(back, 2, 4).unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "concat_slice_channels",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![
                ("a".into(), uni(r, &[2, 3, 3], -1.0, 1.0)),
                ("b".into(), uni(r, &[3, 3, 3], -1.0, 1.0)),
            ],
            build: Box::new(|g, p| {
                let cat = g.concat_channels(p.var("a"), p.var("b")).unwrap();
                let mid = g.slice_channels(cat, 1, 3).unwrap();
                probe_sum(g, mid)
            }),
        }),
    );

    fam(
        "bce",
        1e-5,
        50,
        usize::MAX,
        Box::new(|r| {
            let target = binary(r, &[1, 8, 8]);
            Trial {
                inputs: vec![("p".into(), uni(r, &[1, 8, 8], 0.05, 0.95))],
                build: Box::new(move |g, p| g.bce_loss(p.var("p"), &target).unwrap()),
            }
        }),
    );

    fam(
        "soft_iou",
        1e-5,
        50,
        usize::MAX,
        Box::new(|r| {
            let target = binary(r, &[1, 8, 8]);
            Trial {
                inputs: vec![("p".into(), uni(r, &[1, 8, 8], 0.05, 0.95))],
                build: Box::new(move |g, p| g.soft_iou_loss(p.var("p"), &target, 1e-6).unwrap()),
            }
        }),
    );

    fam(
        "attention",
        OP_TOL,
        25,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![
                ("x".into(), uni(r, &[4, 2, 3], -1.0, 1.0)),
                ("wq".into(), uni(r, &[4, 6], -0.5, 0.5)),
                ("wk".into(), uni(r, &[4, 6], -0.5, 0.5)),
                ("wv".into(), uni(r, &[4, 6], -0.5, 0.5)),
                ("raw".into(), uni(r, &[1], -2.0, 2.0)),
            ],
            build: Box::new(|g, p| {
                let nc = g.chw_to_nc(p.var("x")).unwrap();
                let dist = bim::pairwise_sq_dist(2, 3);
                let d2 = dist.leaf(g);
                let bias = GaussBias::Learned {
                    raw: p.var("raw"),
                    d2,
                };
                let (z, _) = bim::attention(
                    g,
                    nc,
                    nc,
                    p.var("wq"),
                    p.var("wk"),
                    p.var("wv"),
                    &bias,
                    2,
                    3,
                )
                .unwrap();
                probe_sum(g, z)
            }),
        }),
    );

    fam(
        "local_gate",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![
                ("x".into(), uni(r, &[3, 4, 4], -1.0, 1.0)),
                ("dw".into(), uni(r, &[3, 3, 3], -0.5, 0.5)),
                ("gw".into(), uni(r, &[3, 3], -0.5, 0.5)),
                ("gb".into(), uni(r, &[3], -0.5, 0.5)),
            ],
            build: Box::new(|g, p| {
                let lv = bim::LocalVars {
                    dw: p.var("dw"),
                    gate_w: p.var("gw"),
                    gate_b: p.var("gb"),
                };
                let y = bim::local_self_attention(g, p.var("x"), &lv).unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "sobel_seed",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![("x".into(), uni(r, &[1, 5, 5], 0.0, 1.0))],
            build: Box::new(|g, p| {
                let y = edge::sobel_seed(g, p.var("x")).unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    fam(
        "taylor_update",
        OP_TOL,
        50,
        usize::MAX,
        Box::new(|r| Trial {
            inputs: vec![
                ("tg".into(), uni(r, &[2, 3, 3], -1.0, 1.0)),
                ("tn".into(), uni(r, &[2, 3, 3], -1.0, 1.0)),
                ("tp".into(), uni(r, &[2, 3, 3], -1.0, 1.0)),
            ],
            build: Box::new(|g, p| {
                let y = edge::taylor_update(g, p.var("tg"), p.var("tn"), p.var("tp")).unwrap();
                probe_sum(g, y)
            }),
        }),
    );

    // Stage parameters enter as named leaves so the whole gating stack,
    // filter branch and align projection are checked together.
    let stage_trial = |r: &mut ChaCha8Rng, full_stage: bool| {
        let mut p = Params::new();
        edge::define_stage(&mut p, r, "s", 4);
        let mut inputs: Vec<(String, Tensor)> = p
            .iter()
            .map(|(n, t)| (n.clone(), uni_like(r, t)))
            .collect();
        inputs.push(("t".into(), uni(r, &[4, 4, 4], -1.0, 1.0)));
        inputs.push(("e".into(), uni(r, &[1, 4, 4], -1.0, 1.0)));
        Trial {
            inputs,
            build: Box::new(move |g, b| {
                let sv = StageVars::bind(b, "s");
                let y = if full_stage {
                    edge::stage_forward(g, &sv, b.var("t"), b.var("e")).unwrap()
                } else {
                    edge::gated_input(g, &sv, b.var("t"), b.var("e")).unwrap()
                };
                probe_sum(g, y)
            }),
        }
    };
    fam(
        "gated_input",
        OP_TOL,
        8,
        16,
        Box::new(move |r| stage_trial(r, false)),
    );
    fam(
        "refiner_stage",
        MODULE_TOL,
        4,
        12,
        Box::new(move |r| stage_trial(r, true)),
    );

    fam(
        "multi_er",
        MODULE_TOL,
        2,
        4,
        Box::new(|r| {
            let cfg = MultiErCfg {
                stages: 3,
                stage_channels: [4, 6, 6],
                seed_source: SeedSource::Image,
            };
            let mut p = Params::new();
            edge::define_multi_er(&mut p, r, &cfg);
            let mut inputs: Vec<(String, Tensor)> = p
                .iter()
                .map(|(n, t)| (n.clone(), uni_like(r, t)))
                .collect();
            inputs.push(("img".into(), uni(r, &[1, 16, 16], 0.0, 1.0)));
            inputs.push(("f2".into(), uni(r, &[4, 8, 8], -1.0, 1.0)));
            inputs.push(("f4".into(), uni(r, &[6, 4, 4], -1.0, 1.0)));
            inputs.push(("f8".into(), uni(r, &[6, 2, 2], -1.0, 1.0)));
            Trial {
                inputs,
                build: Box::new(move |g, b| {
                    let feats = BackboneFeats {
                        f2: b.var("f2"),
                        f4: b.var("f4"),
                        f8_edge: b.var("f8"),
                    };
                    let out = edge::multi_er_forward(g, b, &cfg, &feats, b.var("img")).unwrap();
                    let a = probe_sum(g, out.feature);
                    let bq = probe_sum(g, out.edge_logits);
                    g.add(a, bq).unwrap()
                }),
            }
        }),
    );

    fam(
        "bim_forward",
        MODULE_TOL,
        2,
        3,
        Box::new(|r| {
            let cfg = BimCfg {
                c_edge: 8,
                c_sem: 64,
                heads: 2,
                head_dim: 4,
                c_out: 8,
                use_local: true,
                use_global: true,
                use_bias: true,
                share_local: false,
            };
            let mut p = Params::new();
            bim::define_bim(&mut p, r, &cfg);
            let mut inputs: Vec<(String, Tensor)> = p
                .iter()
                .map(|(n, t)| (n.clone(), uni_like(r, t)))
                .collect();
            inputs.push(("fe".into(), uni(r, &[8, 4, 4], -1.0, 1.0)));
            inputs.push(("fs".into(), uni(r, &[64, 4, 4], -1.0, 1.0)));
            Trial {
                inputs,
                build: Box::new(move |g, b| {
                    let v = BimVars::bind(b, &cfg);
                    let dist = bim::pairwise_sq_dist(4, 4);
                    let tr =
                        bim::bim_forward(g, &v, &cfg, b.var("fe"), b.var("fs"), &dist).unwrap();
                    probe_sum(g, tr.out)
                }),
            }
        }),
    );

    fam(
        "model_forward",
        MODULE_TOL,
        1,
        2,
        Box::new(|r| {
            let cfg = NetworkConfig {
                input_size: (8, 8),
                base_channels: 2,
                edge_channels: 6,
                sem_channels: 6,
                bim: BimToggles {
                    heads: 2,
                    head_dim: 2,
                    ..BimToggles::default()
                },
                ..NetworkConfig::default()
            };
            let p = network::define_model(&cfg);
            let mut inputs: Vec<(String, Tensor)> = p
                .iter()
                .map(|(n, t)| (n.clone(), uni_like(r, t)))
                .collect();
            inputs.push(("img".into(), uni(r, &[1, 8, 8], 0.0, 1.0)));
            Trial {
                inputs,
                build: Box::new(move |g, b| {
                    let out = network::model_forward(g, b, &cfg, b.var("img")).unwrap();
                    let a = probe_sum(g, out.mask_logits);
                    let bq = probe_sum(g, out.edge_logits);
                    g.add(a, bq).unwrap()
                }),
            }
        }),
    );

    fams
}

/// Fresh random values in a parameter tensor's shape, scaled like a small
/// fan-in init so composite modules stay in a well-conditioned regime.
fn uni_like(rng: &mut ChaCha8Rng, t: &Tensor) -> Tensor {
    let fan = (t.numel() / t.shape()[0]).max(1) as Real;
    let bound = (1.5 / fan).sqrt().min(1.0);
    uni(rng, t.shape(), -bound, bound)
}

// ── tests ──

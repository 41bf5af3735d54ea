//! Full model assembly: a three-block strided conv encoder feeding the
//! edge refiner cascade and a semantic stream, fused at 1/8 scale, then a
//! U-shaped decoder with additive skips emitting full-resolution mask
//! logits alongside the auxiliary edge logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bim::{self, BimCfg, BimVars};
use crate::edge::{self, BackboneFeats, MultiErCfg, SeedSource};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{self, Bound, Params};
use crate::tensor::Tensor;

const NORM_EPS: crate::tensor::Real = 1e-5;

/// Background-heavy masks start near zero probability.
const MASK_HEAD_BIAS: crate::tensor::Real = -2.0;

// ── configuration ──

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Bim,
    CoAttention,
    MergedAttention,
}

/// Attention geometry and ablation switches for the fusion module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BimToggles {
    pub heads: usize,
    pub head_dim: usize,
    pub use_local: bool,
    pub use_global: bool,
    pub use_bias: bool,
    pub share_local: bool,
}

impl Default for BimToggles {
    fn default() -> Self {
        BimToggles {
            heads: 4,
            head_dim: 32,
            use_local: true,
            use_global: true,
            use_bias: true,
            share_local: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// (H, W), both multiples of 8.
    pub input_size: (usize, usize),
    pub base_channels: usize,
    pub edge_channels: usize,
    pub sem_channels: usize,
    /// Active refiner stages, 0..=3.
    pub er_stages: usize,
    /// false replaces the fusion module with plain concat + 1x1.
    pub bim_enabled: bool,
    pub fusion_mode: FusionMode,
    pub bim: BimToggles,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: (64, 64),
            base_channels: 32,
            edge_channels: 128,
            sem_channels: 512,
            er_stages: 3,
            bim_enabled: true,
            fusion_mode: FusionMode::Bim,
            bim: BimToggles::default(),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Encoder widths at scales /2, /4, /8.
    pub fn channels(&self) -> (usize, usize, usize) {
        let b = self.base_channels;
        (2 * b, 4 * b, 4 * b)
    }

    pub fn er_cfg(&self) -> MultiErCfg {
        let (c2, c4, _) = self.channels();
        MultiErCfg {
            stages: self.er_stages,
            stage_channels: [c2, c4, self.edge_channels],
            seed_source: SeedSource::Image,
        }
    }

    /// The fused stream keeps the edge width so the decoder entry is
    /// independent of the fusion variant.
    pub fn bim_cfg(&self) -> BimCfg {
        BimCfg {
            c_edge: self.edge_channels,
            c_sem: self.sem_channels,
            heads: self.bim.heads,
            head_dim: self.bim.head_dim,
            c_out: self.edge_channels,
            use_local: self.bim.use_local,
            use_global: self.bim.use_global,
            use_bias: self.bim.use_bias,
            share_local: self.bim.share_local,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be positive multiples of 8"
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be >= 1".into()));
        }
        if self.er_stages > 3 {
            return Err(Error::Config(format!(
                "er_stages {} outside 0..=3",
                self.er_stages
            )));
        }
        if self.bim_enabled {
            self.bim_cfg().validate()?;
        }
        Ok(())
    }
}

// ── parameter schema ──

fn define_enc_block(p: &mut Params, rng: &mut ChaCha8Rng, prefix: &str, cin: usize, cout: usize) {
    p.insert(format!("{prefix}.c1.w"), params::conv_weight(rng, cout, cin, 3));
    p.insert(format!("{prefix}.c1.b"), params::zeros(&[cout]));
    p.insert(format!("{prefix}.c2.w"), params::conv_weight(rng, cout, cout, 3));
    p.insert(format!("{prefix}.c2.b"), params::zeros(&[cout]));
}

fn define_dec_stage(
    p: &mut Params,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cin: usize,
    skip: Option<usize>,
    cout: usize,
) {
    p.insert(format!("{prefix}.in.w"), params::conv1x1_weight(rng, cout, cin));
    p.insert(format!("{prefix}.in.b"), params::zeros(&[cout]));
    if let Some(cs) = skip {
        p.insert(format!("{prefix}.skip.w"), params::conv1x1_weight(rng, cout, cs));
        p.insert(format!("{prefix}.skip.b"), params::zeros(&[cout]));
    }
    p.insert(format!("{prefix}.conv.w"), params::conv_weight(rng, cout, cout, 3));
    p.insert(format!("{prefix}.conv.b"), params::zeros(&[cout]));
}

/// Every tensor the model owns, registered in a fixed order from one seeded
/// stream; the name set depends only on the configuration.
pub fn define_model(cfg: &NetworkConfig) -> Params {
    let mut p = Params::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (c2, c4, c8) = cfg.channels();

    define_enc_block(&mut p, &mut rng, "enc.b1", 1, c2);
    define_enc_block(&mut p, &mut rng, "enc.b2", c2, c4);
    define_enc_block(&mut p, &mut rng, "enc.b3", c4, c8);
    p.insert("enc.edge_head.w", params::conv1x1_weight(&mut rng, cfg.edge_channels, c8));
    p.insert("enc.edge_head.b", params::zeros(&[cfg.edge_channels]));
    p.insert("enc.sem_head.w", params::conv1x1_weight(&mut rng, cfg.sem_channels, c8));
    p.insert("enc.sem_head.b", params::zeros(&[cfg.sem_channels]));

    edge::define_multi_er(&mut p, &mut rng, &cfg.er_cfg());

    let bcfg = cfg.bim_cfg();
    if !cfg.bim_enabled {
        p.insert(
            "fuse.cat.w",
            params::conv1x1_weight(&mut rng, bcfg.c_out, bcfg.c_edge + bcfg.c_sem),
        );
        p.insert("fuse.cat.b", params::zeros(&[bcfg.c_out]));
    } else {
        match cfg.fusion_mode {
            FusionMode::Bim => bim::define_bim(&mut p, &mut rng, &bcfg),
            FusionMode::CoAttention => bim::define_co_attention(&mut p, &mut rng, &bcfg),
            FusionMode::MergedAttention => bim::define_merged_attention(&mut p, &mut rng, &bcfg),
        }
        // Head count is invisible in the weight shapes (2x16 and 4x8 heads
        // share a projection width), so the schema carries it explicitly.
        // meta.* tensors never enter a forward graph and are never trained.
        p.insert("meta.bim_heads", Tensor::full(&[1], bcfg.heads as crate::tensor::Real));
    }

    define_dec_stage(&mut p, &mut rng, "dec.s4", bcfg.c_out, Some(c4), c4);
    define_dec_stage(&mut p, &mut rng, "dec.s2", c4, Some(c2), c2);
    define_dec_stage(&mut p, &mut rng, "dec.s1", c2, None, cfg.base_channels);
    p.insert("dec.mask_head.w", params::conv1x1_weight(&mut rng, 1, cfg.base_channels));
    p.insert("dec.mask_head.b", Tensor::full(&[1], MASK_HEAD_BIAS));
    p
}

/// Trainable scalar count; meta schema carriers are excluded.
pub fn param_count(cfg: &NetworkConfig) -> usize {
    define_model(cfg)
        .iter()
        .filter(|(n, _)| !n.starts_with("meta."))
        .map(|(_, t)| t.numel())
        .sum()
}

// ── forward ──

pub struct EncoderFeats {
    pub f2: Var,
    pub f4: Var,
    pub f8_edge: Var,
    pub f8_sem: Var,
}

fn enc_block(g: &mut Graph, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let v = |s: &str| format!("{prefix}.{s}");
    let y = g.conv2d(x, b.var(&v("c1.w")), Some(b.var(&v("c1.b"))), 2, 1)?;
    let y = g.channel_norm(y, NORM_EPS)?;
    let y = g.relu(y);
    let y = g.conv2d(y, b.var(&v("c2.w")), Some(b.var(&v("c2.b"))), 1, 1)?;
    let y = g.channel_norm(y, NORM_EPS)?;
    Ok(g.relu(y))
}

/// Three stride-2 blocks, then 1x1 heads splitting the deepest feature
/// into the edge and semantic streams.
pub fn encoder_forward(g: &mut Graph, b: &Bound, image: Var) -> Result<EncoderFeats> {
    let s = g.shape(image);
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::Shape {
            op: "encoder_forward",
            msg: format!("expected [1,H,W], got {s:?}"),
        });
    }
    let (h, w) = (s[1], s[2]);
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::Shape {
            op: "encoder_forward",
            msg: format!("{h}x{w} not divisible by 8"),
        });
    }
    let f2 = enc_block(g, b, "enc.b1", image)?;
    let f4 = enc_block(g, b, "enc.b2", f2)?;
    let f8 = enc_block(g, b, "enc.b3", f4)?;
    let f8_edge = g.conv1x1(f8, b.var("enc.edge_head.w"), Some(b.var("enc.edge_head.b")))?;
    let f8_sem = g.conv1x1(f8, b.var("enc.sem_head.w"), Some(b.var("enc.sem_head.b")))?;
    Ok(EncoderFeats {
        f2,
        f4,
        f8_edge,
        f8_sem,
    })
}

fn dec_stage(g: &mut Graph, b: &Bound, prefix: &str, x: Var, skip: Option<Var>) -> Result<Var> {
    let v = |s: &str| format!("{prefix}.{s}");
    let (h, w) = {
        let s = g.shape(x);
        (s[1], s[2])
    };
    let up = g.bilinear_resize(x, 2 * h, 2 * w)?;
    let mut y = g.conv1x1(up, b.var(&v("in.w")), Some(b.var(&v("in.b"))))?;
    if let Some(sk) = skip {
        let aligned = g.conv1x1(sk, b.var(&v("skip.w")), Some(b.var(&v("skip.b"))))?;
        y = g.add(y, aligned)?;
    }
    let y = g.conv2d(y, b.var(&v("conv.w")), Some(b.var(&v("conv.b"))), 1, 1)?;
    let y = g.channel_norm(y, NORM_EPS)?;
    Ok(g.relu(y))
}

pub struct ModelOut {
    pub mask_logits: Var,
    pub edge_logits: Var,
}

/// Encoder, refiner cascade, stream fusion at 1/8 scale, decoder; both
/// outputs are full-resolution pre-sigmoid logits.
pub fn model_forward(g: &mut Graph, b: &Bound, cfg: &NetworkConfig, image: Var) -> Result<ModelOut> {
    let feats = encoder_forward(g, b, image)?;
    let er = edge::multi_er_forward(
        g,
        b,
        &cfg.er_cfg(),
        &BackboneFeats {
            f2: feats.f2,
            f4: feats.f4,
            f8_edge: feats.f8_edge,
        },
        image,
    )?;
    let (h8, w8) = {
        let s = g.shape(er.feature);
        (s[1], s[2])
    };
    let fused = if !cfg.bim_enabled {
        let cat = g.concat_channels(er.feature, feats.f8_sem)?;
        g.conv1x1(cat, b.var("fuse.cat.w"), Some(b.var("fuse.cat.b")))?
    } else {
        let bcfg = cfg.bim_cfg();
        let dist = bim::pairwise_sq_dist(h8, w8);
        match cfg.fusion_mode {
            FusionMode::Bim => {
                let bv = BimVars::bind(b, &bcfg);
                bim::bim_forward(g, &bv, &bcfg, er.feature, feats.f8_sem, &dist)?.out
            }
            FusionMode::CoAttention => {
                bim::co_attention_forward(g, b, &bcfg, er.feature, feats.f8_sem, &dist)?
            }
            FusionMode::MergedAttention => {
                bim::merged_attention_forward(g, b, &bcfg, er.feature, feats.f8_sem, &dist)?
            }
        }
    };
    let d4 = dec_stage(g, b, "dec.s4", fused, Some(feats.f4))?;
    let d2 = dec_stage(g, b, "dec.s2", d4, Some(feats.f2))?;
    let d1 = dec_stage(g, b, "dec.s1", d2, None)?;
    let mask_logits = g.conv1x1(d1, b.var("dec.mask_head.w"), Some(b.var("dec.mask_head.b")))?;
    Ok(ModelOut {
        mask_logits,
        edge_logits: er.edge_logits,
    })
}

// ── config inference ──

fn require<'p>(p: &'p Params, name: &str) -> Result<&'p Tensor> {
    p.get(name).ok_or_else(|| Error::SchemaMismatch { name: name.into() })
}

/// Reconstruct the architecture from a checkpoint's names and shapes
/// (plus the meta head-count carrier). Spatial input size is data-driven
/// and left at its default.
pub fn infer_config(p: &Params) -> Result<NetworkConfig> {
    let c2 = require(p, "enc.b1.c1.w")?.shape()[0];
    let edge_channels = require(p, "enc.edge_head.w")?.shape()[0];
    let sem_channels = require(p, "enc.sem_head.w")?.shape()[0];
    let er_stages = if p.contains("er.bypass.w") {
        0
    } else {
        (1..=3).filter(|s| p.contains(&format!("er.s{s}.f1.w"))).count()
    };
    let (bim_enabled, fusion_mode) = if p.contains("fuse.cat.w") {
        (false, FusionMode::Bim)
    } else if p.contains("bim.fuse.w") {
        (true, FusionMode::Bim)
    } else if p.contains("coatt.q.w") {
        (true, FusionMode::CoAttention)
    } else if p.contains("merge.pre.w") {
        (true, FusionMode::MergedAttention)
    } else {
        return Err(Error::SchemaMismatch {
            name: "fusion parameters".into(),
        });
    };
    let mut bim = BimToggles::default();
    if bim_enabled {
        let proj = match fusion_mode {
            FusionMode::Bim => require(p, "bim.e.q.w")?.shape()[1],
            FusionMode::CoAttention => require(p, "coatt.q.w")?.shape()[1],
            FusionMode::MergedAttention => require(p, "merge.q.w")?.shape()[1],
        };
        let heads = require(p, "meta.bim_heads")?.item().round() as usize;
        if heads == 0 || proj % heads != 0 {
            return Err(Error::Config(format!(
                "head count {heads} does not divide projection width {proj}"
            )));
        }
        bim.heads = heads;
        bim.head_dim = proj / heads;
        if fusion_mode == FusionMode::Bim {
            bim.use_local = p.contains("bim.e.loc1.dw");
            bim.use_global = p.contains("bim.e.o.w");
            bim.use_bias = p.contains("bim.gauss");
            bim.share_local = bim.use_local && !p.contains("bim.e.loc2.dw");
        }
    }
    let cfg = NetworkConfig {
        base_channels: c2 / 2,
        edge_channels,
        sem_channels,
        er_stages,
        bim_enabled,
        fusion_mode,
        bim,
        ..NetworkConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

// ── tests ──

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{edge_gt_from_mask, total_loss, LossWeights};
    use rand::Rng;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            input_size: (16, 16),
            base_channels: 2,
            edge_channels: 8,
            sem_channels: 8,
            bim: BimToggles {
                heads: 2,
                head_dim: 2,
                ..BimToggles::default()
            },
            ..NetworkConfig::default()
        }
    }

    fn rand_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[1, h, w], |_| rng.gen::<crate::tensor::Real>())
    }

    #[test]
    fn encoder_shapes_follow_the_contract() {
        let cfg = NetworkConfig::default();
        let p = define_model(&cfg);
        let mut g = Graph::new();
        let b = Bound::new(&mut g, &p);
        let img = g.leaf_owned(rand_image(64, 64, 1));
        let f = encoder_forward(&mut g, &b, img).unwrap();
        assert_eq!(g.shape(f.f2), &[64, 32, 32]);
        assert_eq!(g.shape(f.f4), &[128, 16, 16]);
        assert_eq!(g.shape(f.f8_edge), &[128, 8, 8]);
        assert_eq!(g.shape(f.f8_sem), &[512, 8, 8]);
    }

    #[test]
    fn zero_image_with_zero_biases_gives_zero_features() {
        let cfg = tiny();
        let p = define_model(&cfg); // biases are zero-initialized
        let mut g = Graph::new();
        let b = Bound::new(&mut g, &p);
        let img = g.leaf(&Tensor::zeros(&[1, 16, 16]));
        let f = encoder_forward(&mut g, &b, img).unwrap();
        for v in [f.f2, f.f4, f.f8_edge, f.f8_sem] {
            assert!(g.value(v).data().iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn encoder_rejects_misaligned_sizes() {
        let cfg = tiny();
        let p = define_model(&cfg);
        let mut g = Graph::new();
        let b = Bound::new(&mut g, &p);
        let img = g.leaf(&Tensor::zeros(&[1, 12, 16]));
        assert!(encoder_forward(&mut g, &b, img).is_err());
    }

    #[test]
    fn forward_is_deterministic_for_a_fixed_seed() {
        let cfg = tiny();
        let (p1, p2) = (define_model(&cfg), define_model(&cfg));
        for (a, b) in p1.iter().zip(p2.iter()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.data(), b.1.data());
        }
        let img = rand_image(16, 16, 2);
        let run = |p: &Params| {
            let mut g = Graph::new();
            let b = Bound::new(&mut g, p);
            let x = g.leaf(&img);
            let out = model_forward(&mut g, &b, &cfg, x).unwrap();
            (
                g.value(out.mask_logits).data().to_vec(),
                g.value(out.edge_logits).data().to_vec(),
            )
        };
        assert_eq!(run(&p1), run(&p2));
    }

    #[test]
    fn every_fusion_variant_emits_full_resolution_logits() {
        let variants = [
            (true, FusionMode::Bim),
            (true, FusionMode::CoAttention),
            (true, FusionMode::MergedAttention),
            (false, FusionMode::Bim),
        ];
        for (enabled, mode) in variants {
            let cfg = NetworkConfig {
                bim_enabled: enabled,
                fusion_mode: mode,
                ..tiny()
            };
            let p = define_model(&cfg);
            let mut g = Graph::new();
            let b = Bound::new(&mut g, &p);
            let img = g.leaf_owned(rand_image(16, 16, 3));
            let out = model_forward(&mut g, &b, &cfg, img).unwrap();
            assert_eq!(g.shape(out.mask_logits), &[1, 16, 16], "{mode:?}");
            assert_eq!(g.shape(out.edge_logits), &[1, 16, 16], "{mode:?}");
        }
    }

    #[test]
    fn refiner_depths_instantiate_and_run() {
        for stages in 0..=3 {
            let cfg = NetworkConfig {
                er_stages: stages,
                ..tiny()
            };
            let p = define_model(&cfg);
            let mut g = Graph::new();
            let b = Bound::new(&mut g, &p);
            let img = g.leaf_owned(rand_image(16, 16, 4));
            let out = model_forward(&mut g, &b, &cfg, img).unwrap();
            assert_eq!(g.shape(out.mask_logits), &[1, 16, 16], "stages={stages}");
        }
    }

    #[test]
    fn param_count_grows_with_width_and_depth() {
        let cfg = tiny();
        let wide = NetworkConfig {
            base_channels: 2 * cfg.base_channels,
            ..cfg.clone()
        };
        assert!(param_count(&wide) > param_count(&cfg));
        let shallow = NetworkConfig {
            er_stages: 0,
            ..cfg.clone()
        };
        assert!(param_count(&shallow) < param_count(&cfg));
    }

    #[test]
    fn reference_param_count_is_frozen() {
        // Regression anchor, recorded from the first successful build.
        assert_eq!(param_count(&NetworkConfig::default()), 2_644_086);
    }

    #[test]
    fn one_backward_pass_yields_finite_gradients_everywhere() {
        let cfg = tiny();
        let p = define_model(&cfg);
        let mut g = Graph::new();
        let b = Bound::new(&mut g, &p);
        let img = g.leaf_owned(rand_image(16, 16, 5));
        let out = model_forward(&mut g, &b, &cfg, img).unwrap();
        let mask = Tensor::from_fn(&[1, 16, 16], |i| if i == 100 || i == 101 { 1.0 } else { 0.0 });
        let edge = edge_gt_from_mask(&mask);
        let edge_p = g.sigmoid(out.edge_logits);
        let mask_p = g.sigmoid(out.mask_logits);
        let lt = total_loss(&mut g, edge_p, &edge, mask_p, &mask, &LossWeights::default()).unwrap();
        assert!(g.value(lt.total).item().is_finite());
        g.backward(lt.total).unwrap();
        for (name, var) in b.iter() {
            let grad = g.grad(*var);
            assert!(
                grad.data().iter().all(|v| v.is_finite()),
                "non-finite gradient in {name}"
            );
        }
    }

    #[test]
    fn config_roundtrips_through_the_parameter_schema() {
        let mut cases = vec![
            NetworkConfig::default(),
            NetworkConfig {
                er_stages: 0,
                ..NetworkConfig::default()
            },
            NetworkConfig {
                bim_enabled: false,
                ..NetworkConfig::default()
            },
            NetworkConfig {
                fusion_mode: FusionMode::CoAttention,
                ..NetworkConfig::default()
            },
            NetworkConfig {
                fusion_mode: FusionMode::MergedAttention,
                ..NetworkConfig::default()
            },
        ];
        for toggles in [
            BimToggles {
                use_local: false,
                ..BimToggles::default()
            },
            BimToggles {
                use_global: false,
                ..BimToggles::default()
            },
            BimToggles {
                use_bias: false,
                ..BimToggles::default()
            },
            BimToggles {
                share_local: true,
                ..BimToggles::default()
            },
        ] {
            cases.push(NetworkConfig {
                bim: toggles,
                ..NetworkConfig::default()
            });
        }
        for cfg in cases {
            let p = define_model(&cfg);
            let got = infer_config(&p).unwrap();
            assert_eq!(got, cfg, "schema did not pin the config");
        }
    }

    #[test]
    fn config_json_rejects_unknown_keys_and_fills_defaults() {
        let cfg: NetworkConfig = serde_json::from_str(r#"{"base_channels": 8}"#).unwrap();
        assert_eq!(cfg.base_channels, 8);
        assert_eq!(cfg.sem_channels, 512);
        assert!(serde_json::from_str::<NetworkConfig>(r#"{"depth": 3}"#).is_err());
        let round: NetworkConfig =
            serde_json::from_str(&serde_json::to_string(&NetworkConfig::default()).unwrap())
                .unwrap();
        assert_eq!(round, NetworkConfig::default());
    }

    #[test]
    fn validation_rejects_bad_geometry() {
        let bad_size = NetworkConfig {
            input_size: (60, 64),
            ..NetworkConfig::default()
        };
        assert!(bad_size.validate().is_err());
        let bad_stages = NetworkConfig {
            er_stages: 4,
            ..NetworkConfig::default()
        };
        assert!(bad_stages.validate().is_err());
    }
}

//! Training loop, evaluation driver, and ablation harness.
//!
//! Single-threaded and fully seeded: the same run configuration produces
//! the same loss curve bit for bit. Checkpoints store the best validation
//! mIoU model; the log is a CSV with one row per epoch.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{load_sample, read_manifest};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{total_loss, LossWeights};
use crate::metrics::{miou, MetricsReport};
use crate::network::{define_model, infer_config, model_forward, NetworkConfig};
use crate::optim::{poly_lr, GradStore, OptimConfig, Optimizer};
use crate::params::{Bound, Params};
use crate::tensor::{Real, Tensor};

pub const LOG_HEADER: &str = "epoch,lr,edge_loss,mask_loss,total_loss,val_miou";
pub const DEFAULT_THRESHOLD: Real = 0.5;
pub const DEFAULT_ROC_POINTS: usize = 33;

// ── configuration ──

/// On-disk config file: JSON with exactly these top-level keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub network: NetworkConfig,
    pub optim: OptimConfig,
    pub loss: LossWeights,
    pub seed: u64,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "config",
            msg: format!("{}: {e}", path.display()),
        })
    }

    pub fn into_run(self, data_dir: PathBuf, out_dir: PathBuf) -> RunConfig {
        RunConfig {
            network: self.network,
            optim: self.optim,
            loss: self.loss,
            data_dir,
            out_dir,
            eval_every: 5,
            seed: self.seed,
            val_fraction: 0.1,
            early_stop_val_miou: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub optim: OptimConfig,
    pub loss: LossWeights,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub eval_every: usize,
    pub seed: u64,
    /// Tail share of the manifest held out for validation.
    pub val_fraction: Real,
    /// Stop once the validation mIoU reaches this value (test budgets).
    pub early_stop_val_miou: Option<Real>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.optim.validate()?;
        self.loss.validate()?;
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if !(0.0 < self.val_fraction && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction {} outside (0,1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

// ── samples ──

pub struct Sample {
    pub image: Tensor,
    pub mask: Tensor,
    pub edge: Tensor,
}

pub fn load_all(data_dir: &Path) -> Result<Vec<Sample>> {
    let entries = read_manifest(data_dir)?;
    let mut out = Vec::with_capacity(entries.len());
    for e in &entries {
        let (image, mask, edge) = load_sample(data_dir, e)?;
        out.push(Sample { image, mask, edge });
    }
    Ok(out)
}

fn split_tail(n: usize, frac: Real) -> Result<usize> {
    if n < 2 {
        return Err(Error::Config(format!(
            "dataset of {n} samples cannot be split for validation"
        )));
    }
    let n_val = ((n as Real * frac).ceil() as usize).clamp(1, n - 1);
    Ok(n - n_val)
}

// ── forward helpers ──

fn forward_probs(params: &Params, cfg: &NetworkConfig, image: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params);
    let x = g.leaf(image);
    let out = model_forward(&mut g, &b, cfg, x)?;
    let probs = g.sigmoid(out.mask_logits);
    Ok(g.value(probs).clone())
}

fn val_miou(params: &Params, cfg: &NetworkConfig, val: &[Sample], threshold: Real) -> Result<Real> {
    let mut preds = Vec::with_capacity(val.len());
    let mut gts = Vec::with_capacity(val.len());
    for s in val {
        let p = forward_probs(params, cfg, &s.image)?;
        preds.push(p.map(|v| if v >= threshold { 1.0 } else { 0.0 }));
        gts.push(s.mask.clone());
    }
    Ok(miou(&preds, &gts))
}

// ── training ──

#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: Real,
    pub edge_loss: Real,
    pub mask_loss: Real,
    pub total_loss: Real,
    pub val_miou: Option<Real>,
}

impl EpochRow {
    pub fn csv(&self) -> String {
        let val = self
            .val_miou
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        format!(
            "{},{:.8},{:.8},{:.8},{:.8},{}",
            self.epoch, self.lr, self.edge_loss, self.mask_loss, self.total_loss, val
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochRow>,
    pub best_val_miou: Real,
    pub best_epoch: usize,
    pub ckpt_path: PathBuf,
    pub log_path: PathBuf,
}

/// One gradient-accumulation pass over a batch; returns per-sample mean
/// loss terms and mean gradients.
fn batch_grads(
    params: &Params,
    run: &RunConfig,
    batch: &[&Sample],
) -> Result<(Real, Real, Real, GradStore)> {
    let mut grads = GradStore::new();
    let (mut edge_sum, mut mask_sum, mut total_sum) = (0.0, 0.0, 0.0);
    for s in batch {
        let mut g = Graph::new();
        let b = Bound::new(&mut g, params);
        let x = g.leaf(&s.image);
        let out = model_forward(&mut g, &b, &run.network, x)?;
        // Both loss terms are defined on probabilities, not logits.
        let edge_p = g.sigmoid(out.edge_logits);
        let mask_p = g.sigmoid(out.mask_logits);
        let lt = total_loss(&mut g, edge_p, &s.edge, mask_p, &s.mask, &run.loss)?;
        edge_sum += g.value(lt.edge).item();
        mask_sum += g.value(lt.mask).item();
        total_sum += g.value(lt.total).item();
        g.backward(lt.total)?;
        for (name, var) in b.iter() {
            if name.starts_with("meta.") {
                continue; // schema carriers are not trainable
            }
            let grad = g.grad(*var);
            match grads.get_mut(name) {
                Some(acc) => {
                    for (a, v) in acc.data_mut().iter_mut().zip(grad.data()) {
                        *a += v;
                    }
                }
                None => {
                    grads.insert(name.clone(), grad);
                }
            }
        }
    }
    let inv = 1.0 / batch.len() as Real;
    for t in grads.values_mut() {
        for v in t.data_mut() {
            *v *= inv;
        }
    }
    Ok((edge_sum * inv, mask_sum * inv, total_sum * inv, grads))
}

/// Shuffled mini-batch SGD with the poly schedule; logs one CSV row per
/// epoch and keeps the checkpoint with the best validation mIoU.
pub fn train(run: &RunConfig) -> Result<TrainOutcome> {
    run.validate()?;
    let samples = load_all(&run.data_dir)?;
    if samples.is_empty() {
        return Err(Error::Config(format!(
            "no samples in {}",
            run.data_dir.display()
        )));
    }
    let n_train = split_tail(samples.len(), run.val_fraction)?;
    let (train_set, val_set) = samples.split_at(n_train);

    fs::create_dir_all(&run.out_dir).map_err(|e| Error::io(&run.out_dir, e))?;
    let log_path = run.out_dir.join("log.csv");
    let ckpt_path = run.out_dir.join("best.ckpt");
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log_file, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;

    let mut params = define_model(&run.network);
    let mut opt = Optimizer::new();
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best = (Real::NEG_INFINITY, 0usize);

    for epoch in 0..run.optim.total_epochs {
        let lr = poly_lr(epoch, &run.optim)?;
        order.shuffle(&mut rng);
        let (mut e_sum, mut m_sum, mut t_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(run.optim.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (e, m, t, grads) = batch_grads(&params, run, &batch)?;
            opt.step(&mut params, &grads, lr, run.optim.weight_decay, run.optim.momentum)?;
            e_sum += e;
            m_sum += m;
            t_sum += t;
            batches += 1;
        }
        let nb = batches.max(1) as Real;

        let last_epoch = epoch + 1 == run.optim.total_epochs;
        let mut val = None;
        if (epoch + 1) % run.eval_every == 0 || last_epoch {
            let v = val_miou(&params, &run.network, val_set, DEFAULT_THRESHOLD)?;
            val = Some(v);
            if v > best.0 {
                best = (v, epoch);
                checkpoint::save(&ckpt_path, &params)?;
            }
        }
        let row = EpochRow {
            epoch,
            lr,
            edge_loss: e_sum / nb,
            mask_loss: m_sum / nb,
            total_loss: t_sum / nb,
            val_miou: val,
        };
        writeln!(log_file, "{}", row.csv()).map_err(|e| Error::io(&log_path, e))?;
        log.push(row);
        if let (Some(stop), Some(v)) = (run.early_stop_val_miou, val) {
            if v >= stop {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        log,
        best_val_miou: best.0,
        best_epoch: best.1,
        ckpt_path,
        log_path,
    })
}

// ── evaluation ──

pub enum EvalSource<'a> {
    Checkpoint(&'a Path),
    /// Score the ground-truth masks as if they were predictions.
    GroundTruth,
}

/// Every checkpoint must carry exactly the schema its inferred
/// configuration defines, shape for shape.
pub fn verify_schema(params: &Params) -> Result<NetworkConfig> {
    let cfg = infer_config(params)?;
    let expected = define_model(&cfg);
    for (name, t) in expected.iter() {
        match params.get(name) {
            None => return Err(Error::SchemaMismatch { name: name.clone() }),
            Some(got) if got.shape() != t.shape() => {
                return Err(Error::Shape {
                    op: "verify_schema",
                    msg: format!("{name}: {:?} vs expected {:?}", got.shape(), t.shape()),
                })
            }
            Some(_) => {}
        }
    }
    for (name, _) in params.iter() {
        if !expected.contains(name) {
            return Err(Error::SchemaMismatch { name: name.clone() });
        }
    }
    Ok(cfg)
}

pub fn evaluate(
    source: EvalSource,
    data_dir: &Path,
    threshold: Real,
    roc_points: usize,
) -> Result<MetricsReport> {
    let samples = load_all(data_dir)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("no samples in {}", data_dir.display())));
    }
    let gts: Vec<Tensor> = samples.iter().map(|s| s.mask.clone()).collect();
    let probs: Vec<Tensor> = match source {
        EvalSource::GroundTruth => gts.clone(),
        EvalSource::Checkpoint(path) => {
            let params = checkpoint::load(path)?;
            let cfg = verify_schema(&params)?;
            let mut out = Vec::with_capacity(samples.len());
            for s in &samples {
                out.push(forward_probs(&params, &cfg, &s.image)?);
            }
            out
        }
    };
    Ok(MetricsReport::compute(&probs, &gts, threshold, roc_points))
}

// ── ablation harness ──

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationSuite {
    Core,
    Bim,
    Fusion,
    Stages,
}

impl std::str::FromStr for AblationSuite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "core" => Ok(AblationSuite::Core),
            "bim" => Ok(AblationSuite::Bim),
            "fusion" => Ok(AblationSuite::Fusion),
            "stages" => Ok(AblationSuite::Stages),
            other => Err(Error::Config(format!(
                "unknown suite {other:?}; expected core|bim|fusion|stages"
            ))),
        }
    }
}

/// FNV-1a over the manifest and every referenced file, in manifest order.
pub fn dataset_hash(data_dir: &Path) -> Result<u64> {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    };
    let index = data_dir.join("index.tsv");
    feed(&fs::read(&index).map_err(|e| Error::io(&index, e))?);
    for e in read_manifest(data_dir)? {
        for name in [&e.img, &e.mask, &e.edge] {
            let p = data_dir.join(name);
            feed(&fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
    }
    Ok(h)
}

fn suite_rows(suite: AblationSuite, base: &NetworkConfig) -> Vec<(String, NetworkConfig)> {
    let full = base.clone();
    match suite {
        AblationSuite::Core => vec![
            ("baseline".into(), {
                let mut c = full.clone();
                c.er_stages = 0;
                c.bim_enabled = false;
                c
            }),
            ("wo_multi_er".into(), {
                let mut c = full.clone();
                c.er_stages = 0;
                c
            }),
            ("wo_bim".into(), {
                let mut c = full.clone();
                c.bim_enabled = false;
                c
            }),
            ("full".into(), full),
        ],
        AblationSuite::Bim => vec![
            ("wo_global".into(), {
                let mut c = full.clone();
                c.bim.use_global = false;
                c
            }),
            ("wo_local".into(), {
                let mut c = full.clone();
                c.bim.use_local = false;
                c
            }),
            ("wo_gauss_bias".into(), {
                let mut c = full.clone();
                c.bim.use_bias = false;
                c
            }),
            ("full".into(), full),
        ],
        AblationSuite::Fusion => ["co_attention", "merged_attention", "bim"]
            .iter()
            .map(|m| {
                let mut c = full.clone();
                c.fusion_mode = serde_json::from_value(serde_json::json!(m)).unwrap();
                (m.to_string(), c)
            })
            .collect(),
        AblationSuite::Stages => (0..=3)
            .map(|s| {
                let mut c = full.clone();
                c.er_stages = s;
                (format!("stages_{s}"), c)
            })
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub miou: Real,
    pub niou: Real,
    pub pd: Real,
    pub fa: Real,
    pub dataset_hash: u64,
}

pub const ABLATE_HEADER: &str = "config,miou,niou,pd,fa_e6,dataset_hash";

impl AblationRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:016x}",
            self.label,
            self.miou,
            self.niou,
            self.pd,
            self.fa * 1e6,
            self.dataset_hash
        )
    }
}

/// Train and score every configuration in the suite on the same data and
/// seed; metrics come from the best checkpoint on the validation tail.
pub fn ablate(run: &RunConfig, suite: AblationSuite) -> Result<Vec<AblationRow>> {
    run.validate()?;
    let hash = dataset_hash(&run.data_dir)?;
    let samples = load_all(&run.data_dir)?;
    let n_train = split_tail(samples.len(), run.val_fraction)?;
    let val_set = &samples[n_train..];
    let gts: Vec<Tensor> = val_set.iter().map(|s| s.mask.clone()).collect();

    let mut rows = Vec::new();
    for (label, net) in suite_rows(suite, &run.network) {
        let sub = RunConfig {
            network: net,
            out_dir: run.out_dir.join(format!("ablate_{label}")),
            ..run.clone()
        };
        let outcome = train(&sub)?;
        let params = checkpoint::load(&outcome.ckpt_path)?;
        let cfg = verify_schema(&params)?;
        let mut probs = Vec::with_capacity(val_set.len());
        for s in val_set {
            probs.push(forward_probs(&params, &cfg, &s.image)?);
        }
        let rep = MetricsReport::compute(&probs, &gts, DEFAULT_THRESHOLD, DEFAULT_ROC_POINTS);
        rows.push(AblationRow {
            label,
            miou: rep.miou,
            niou: rep.niou,
            pd: rep.pd,
            fa: rep.fa,
            dataset_hash: hash,
        });
    }
    let csv_path = run.out_dir.join("ablation.csv");
    let mut body = format!("{ABLATE_HEADER}\n");
    for r in &rows {
        body.push_str(&r.csv());
        body.push('\n');
    }
    fs::write(&csv_path, body).map_err(|e| Error::io(&csv_path, e))?;
    Ok(rows)
}

// ── tests ──

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_dataset, SceneSpec};
    use crate::network::BimToggles;

    fn tiny_net() -> NetworkConfig {
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

    fn tiny_scene() -> SceneSpec {
        SceneSpec {
            size: (16, 16),
            n_targets: 1,
            target_radius_px: (1.0, 1.6),
            target_contrast: (0.25, 0.4),
            clutter_scale: 2,
            noise_sigma: 0.01,
            seed: 0,
        }
    }

    fn tiny_run(data: &Path, out: &Path, epochs: usize) -> RunConfig {
        RunConfig {
            network: tiny_net(),
            optim: OptimConfig {
                total_epochs: epochs,
                warmup_epochs: 1.min(epochs.saturating_sub(1)).max(usize::from(epochs > 1)),
                batch_size: 2,
                ..OptimConfig::default()
            },
            loss: LossWeights::default(),
            data_dir: data.to_path_buf(),
            out_dir: out.to_path_buf(),
            eval_every: 1,
            seed: 3,
            val_fraction: 0.25,
            early_stop_val_miou: None,
        }
    }

    #[test]
    fn one_epoch_smoke_writes_log_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        gen_dataset(&data, 4, &tiny_scene(), 1).unwrap();
        let run = tiny_run(&data, &dir.path().join("out"), 2);
        let outcome = train(&run).unwrap();
        assert_eq!(outcome.log.len(), 2);

        let log = fs::read_to_string(&outcome.log_path).unwrap();
        let mut lines = log.lines();
        assert_eq!(lines.next().unwrap(), LOG_HEADER);
        assert_eq!(lines.count(), 2);

        let params = checkpoint::load(&outcome.ckpt_path).unwrap();
        let mut cfg = verify_schema(&params).unwrap();
        cfg.input_size = run.network.input_size; // spatial size is data-driven
        assert_eq!(cfg, run.network);
    }

    #[test]
    fn restored_checkpoint_reproduces_forward_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        gen_dataset(&data, 4, &tiny_scene(), 2).unwrap();
        let run = tiny_run(&data, &dir.path().join("out"), 1);
        let outcome = train(&run).unwrap();

        let restored = checkpoint::load(&outcome.ckpt_path).unwrap();
        let again = checkpoint::load(&outcome.ckpt_path).unwrap();
        let img = load_all(&data).unwrap().remove(0).image;
        let a = forward_probs(&restored, &run.network, &img).unwrap();
        let b = forward_probs(&again, &run.network, &img).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn same_seed_gives_the_same_loss_curve() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        gen_dataset(&data, 4, &tiny_scene(), 3).unwrap();
        let a = train(&tiny_run(&data, &dir.path().join("a"), 2)).unwrap();
        let b = train(&tiny_run(&data, &dir.path().join("b"), 2)).unwrap();
        let rows = |o: &TrainOutcome| o.log.iter().map(|r| r.csv()).collect::<Vec<_>>();
        assert_eq!(rows(&a), rows(&b));
    }

    #[test]
    fn early_stop_cuts_the_run_short() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        gen_dataset(&data, 4, &tiny_scene(), 4).unwrap();
        let mut run = tiny_run(&data, &dir.path().join("out"), 10);
        run.early_stop_val_miou = Some(-1.0); // any score passes
        let outcome = train(&run).unwrap();
        assert_eq!(outcome.log.len(), 1);
    }

    #[test]
    fn ground_truth_bypass_scores_perfectly() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        gen_dataset(&data, 3, &tiny_scene(), 5).unwrap();
        let rep = evaluate(EvalSource::GroundTruth, &data, 0.5, 5).unwrap();
        assert_eq!(rep.miou, 1.0);
        assert_eq!(rep.niou, 1.0);
        assert_eq!(rep.pd, 1.0);
        assert_eq!(rep.fa, 0.0);
    }

    #[test]
    fn threshold_one_empties_model_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        gen_dataset(&data, 4, &tiny_scene(), 6).unwrap();
        let run = tiny_run(&data, &dir.path().join("out"), 1);
        let outcome = train(&run).unwrap();
        let rep = evaluate(EvalSource::Checkpoint(&outcome.ckpt_path), &data, 1.0, 5).unwrap();
        assert_eq!(rep.pd, 0.0, "sigmoid stays below 1, so nothing fires");
        assert_eq!(rep.fa, 0.0);
    }

    #[test]
    fn schema_verification_names_the_first_missing_tensor() {
        let full = define_model(&tiny_net());
        let mut pruned = Params::new();
        for (name, t) in full.iter() {
            if name != "dec.mask_head.w" {
                pruned.insert(name.clone(), t.clone());
            }
        }
        match verify_schema(&pruned) {
            Err(Error::SchemaMismatch { name }) => assert_eq!(name, "dec.mask_head.w"),
            other => panic!("expected schema mismatch, got {other:?}"),
        }
    }

    #[test]
    fn stages_suite_emits_four_rows_with_one_dataset_hash() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        gen_dataset(&data, 4, &tiny_scene(), 7).unwrap();
        let mut run = tiny_run(&data, &dir.path().join("out"), 1);
        run.optim.batch_size = 4;
        let rows = ablate(&run, AblationSuite::Stages).unwrap();
        assert_eq!(rows.len(), 4);
        let h = rows[0].dataset_hash;
        assert!(rows.iter().all(|r| r.dataset_hash == h));
        let csv = fs::read_to_string(run.out_dir.join("ablation.csv")).unwrap();
        assert!(csv.starts_with(ABLATE_HEADER));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn dataset_hash_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        gen_dataset(&data, 2, &tiny_scene(), 8).unwrap();
        let h1 = dataset_hash(&data).unwrap();
        assert_eq!(h1, dataset_hash(&data).unwrap());
        gen_dataset(&data, 2, &tiny_scene(), 9).unwrap();
        assert_ne!(h1, dataset_hash(&data).unwrap());
    }

    #[test]
    fn config_file_schema_is_strict() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(
            &path,
            r#"{"network": {"base_channels": 4}, "optim": {"total_epochs": 9}, "seed": 12}"#,
        )
        .unwrap();
        let fc = FileConfig::load(&path).unwrap();
        assert_eq!(fc.network.base_channels, 4);
        assert_eq!(fc.optim.total_epochs, 9);
        assert_eq!(fc.seed, 12);
        assert_eq!(fc.loss, LossWeights::default());

        fs::write(&path, r#"{"learning_rate": 0.1}"#).unwrap();
        assert!(FileConfig::load(&path).is_err());
    }
}

//! Command-line front end: data generation, training, evaluation,
//! inference, gradient verification, ROC export, and ablation suites.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use denet::checkpoint;
use denet::data::{gen_dataset, read_pgm, write_pgm, SceneSpec};
use denet::gradcheck::run_suite;
use denet::graph::Graph;
use denet::params::Bound;
use denet::tensor::Real;
use denet::trainer::{
    ablate, evaluate, train, AblationSuite, EvalSource, FileConfig, ABLATE_HEADER,
    DEFAULT_ROC_POINTS,
};

#[derive(Parser)]
#[command(name = "denet", about = "Dual-path edge network for infrared small target detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene dataset with masks and edge labels.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        /// Square image side in pixels, a multiple of 8.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a JSON config; writes log.csv and best.ckpt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint over a dataset and write the metrics report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: Real,
    },
    /// Predict a mask for one image and write it as a PGM.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify every gradient family against finite differences.
    Gradcheck,
    /// Sweep thresholds and export an fpr,tpr curve.
    Roc {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ROC_POINTS)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score a family of configurations on shared data.
    Ablate {
        /// core | bim | fusion | stages
        #[arg(long)]
        suite: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData {
            out,
            count,
            size,
            seed,
        } => {
            if size % 8 != 0 {
                bail!("--size {size} must be a multiple of 8");
            }
            let spec = SceneSpec {
                size: (size, size),
                ..SceneSpec::default()
            };
            let entries = gen_dataset(&out, count, &spec, seed)?;
            println!("wrote {} samples to {}", entries.len(), out.display());
        }
        Cmd::Train { config, data, out } => {
            let run = FileConfig::load(&config)?.into_run(data, out);
            let outcome = train(&run)?;
            let last = outcome.log.last().context("empty training log")?;
            println!(
                "trained {} epochs: total_loss {:.6}, best val miou {:.4} at epoch {}",
                outcome.log.len(),
                last.total_loss,
                outcome.best_val_miou,
                outcome.best_epoch
            );
            println!("log: {}", outcome.log_path.display());
            println!("checkpoint: {}", outcome.ckpt_path.display());
        }
        Cmd::Eval {
            ckpt,
            data,
            report,
            threshold,
        } => {
            let rep = evaluate(
                EvalSource::Checkpoint(&ckpt),
                &data,
                threshold,
                DEFAULT_ROC_POINTS,
            )?;
            let text = rep.render();
            fs::write(&report, &text).with_context(|| report.display().to_string())?;
            print!("{text}");
        }
        Cmd::Infer { ckpt, image, out } => {
            let params = checkpoint::load(&ckpt)?;
            let cfg = denet::trainer::verify_schema(&params)?;
            let img = read_pgm(&image)?;
            let mut g = Graph::new();
            let b = Bound::new(&mut g, &params);
            let x = g.leaf(&img);
            let y = denet::network::model_forward(&mut g, &b, &cfg, x)?;
            let probs = g.sigmoid(y.mask_logits);
            let mask = g
                .value(probs)
                .map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
            write_pgm(&out, &mask)?;
            println!("wrote {}", out.display());
        }
        Cmd::Gradcheck => {
            let reports = run_suite(None);
            for r in &reports {
                println!("{}", r.line());
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            println!("{} families, {} failed", reports.len(), failed);
            if failed > 0 {
                std::process::exit(1);
            }
        }
        Cmd::Roc {
            ckpt,
            data,
            points,
            out,
        } => {
            let rep = evaluate(EvalSource::Checkpoint(&ckpt), &data, 0.5, points)?;
            let mut csv = String::from("fpr,tpr\n");
            for (fpr, tpr) in &rep.roc {
                csv.push_str(&format!("{fpr:.8},{tpr:.8}\n"));
            }
            fs::write(&out, csv).with_context(|| out.display().to_string())?;
            println!("wrote {} sweep points to {}", rep.roc.len(), out.display());
        }
        Cmd::Ablate {
            suite,
            config,
            data,
            out,
        } => {
            let suite: AblationSuite = suite.parse()?;
            let run = FileConfig::load(&config)?.into_run(data, out);
            let rows = ablate(&run, suite)?;
            println!("{ABLATE_HEADER}");
            for r in &rows {
                println!("{}", r.csv());
            }
        }
    }
    Ok(())
}

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use rand::seq::SliceRandom;
use serde_json::json;

use ccma::conformal::{
    audit, calibrate_coverage_target, calibrate_size_target, nonconformity, predict_sets, scores_at_truth,
    DEFAULT_SIZE_TOLERANCE,
};
use ccma::feature_store::{generate_synthetic, load_cache, save_bundle, LabelVector, SyntheticSpec};
use ccma::harness::{
    labels_to_accuracy, read_aggregate, read_manifest, run_experiment, write_report, ExperimentConfig,
};
use ccma::matrix::Matrix;
use ccma::posterior::PosteriorMatrix;
use ccma::rng::rng_from_seed;
use ccma::{Error, Result};

#[derive(Parser)]
#[command(name = "engine", version, about = "Pool-based active learning over embedding caches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic EMBC bundle.
    Synth {
        /// JSON synthetic spec; omitted fields take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment and write per-seed CSVs, aggregate.csv and manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Summarize a finished run: AULC and labels needed per target accuracy.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.85, 0.9])]
        target_acc: Vec<f64>,
        /// Report the first round reaching each target instead of interpolating.
        #[arg(long)]
        exact: bool,
    },
    /// Fit a conformal threshold to a posterior cache (rows are class
    /// probabilities, labels stored in the same file).
    Calibrate {
        #[arg(long)]
        posteriors: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Size)]
        mode: Mode,
        /// Target mean set size (size mode).
        #[arg(long, default_value_t = 3.0)]
        target: f64,
        /// Miscoverage level (coverage mode).
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Share of rows used for fitting in coverage mode; the rest are audited.
        #[arg(long, default_value_t = 0.5)]
        cal_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Size,
    Coverage,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn synth(spec: Option<PathBuf>, out: &Path) -> Result<()> {
    let spec: SyntheticSpec = match spec {
        Some(p) => read_json(&p)?,
        None => SyntheticSpec::default(),
    };
    let bundle = generate_synthetic(&spec)?;
    save_bundle(&bundle, out)?;
    println!("wrote {} (train {}, test {}, C = {})", out.display(), bundle.n_train(), bundle.test_labels.len(), bundle.num_classes());
    Ok(())
}

fn run(config: &Path, out: Option<PathBuf>, force: bool) -> Result<()> {
    let cfg: ExperimentConfig = read_json(config)?;
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::InvalidArgument("no output directory: pass --out or set output_dir".into()))?;
    // Fail before the run, not after it.
    if !force && fs::read_dir(&out).is_ok_and(|mut d| d.next().is_some()) {
        return Err(Error::OutputNotEmpty(out));
    }
    let result = run_experiment(&cfg)?;
    write_report(&result, &out, force)?;
    info!("wrote report to {}", out.display());
    println!("AULC {:.4} +- {:.4} over {} seed(s)", result.aulc.mean[0], result.aulc.std[0], result.seeds.len());
    Ok(())
}

fn report(input: &Path, targets: &[f64], exact: bool) -> Result<()> {
    let manifest = read_manifest(input)?;
    let curve = read_aggregate(input)?;
    let labels: Vec<_> = targets
        .iter()
        .map(|&t| json!({ "target_acc": t, "labels": labels_to_accuracy(&curve, t, exact) }))
        .collect();
    let summary = json!({
        "strategy": manifest.config.strategy,
        "variant": manifest.config.variant,
        "aulc_mean": manifest.aulc_mean,
        "aulc_std": manifest.aulc_std,
        "final_acc": curve.last().map(|c| c.1),
        "labels_to_accuracy": labels,
        "interpolated": !exact,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// Rows are rescaled to sum to one, which absorbs f32 rounding.
fn posterior_rows(path: &Path) -> Result<(PosteriorMatrix, Option<LabelVector>)> {
    let (table, labels) = load_cache(path)?;
    let mut m = Matrix::zeros(table.n(), table.d());
    for (i, row) in table.iter_rows().enumerate() {
        let s: f64 = row.iter().map(|&v| f64::from(v)).sum();
        if !(s > 0.0) || row.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!("row {i} is not a probability vector")));
        }
        for (o, &v) in m.row_mut(i).iter_mut().zip(row) {
            *o = f64::from(v) / s;
        }
    }
    Ok((PosteriorMatrix::new(m)?, labels))
}

fn calibrate(path: &Path, mode: Mode, target: f64, alpha: f64, cal_fraction: f64, seed: u64) -> Result<()> {
    let (post, labels) = posterior_rows(path)?;
    let scores = nonconformity(&post);
    let summary = match mode {
        Mode::Size => {
            let cal = calibrate_size_target(&scores, target, DEFAULT_SIZE_TOLERANCE)?;
            let sets = predict_sets(&cal, &scores)?;
            let mean_size = sets.sizes().iter().sum::<usize>() as f64 / sets.len() as f64;
            let coverage = labels.as_ref().map(|l| audit(&sets, l)).transpose()?.map(|a| a.coverage);
            json!({ "mode": "size_target", "target": target, "q": cal.threshold(),
                    "mean_size": mean_size, "coverage": coverage, "n": post.rows() })
        }
        Mode::Coverage => {
            let labels = labels.ok_or_else(|| Error::InvalidArgument("coverage mode needs labels".into()))?;
            if !(cal_fraction > 0.0 && cal_fraction < 1.0) {
                return Err(Error::InvalidArgument("cal_fraction must lie in (0, 1)".into()));
            }
            let mut order: Vec<usize> = (0..post.rows()).collect();
            order.shuffle(&mut rng_from_seed(seed));
            let n_cal = ((cal_fraction * order.len() as f64).round() as usize).clamp(1, order.len() - 1);
            let (cal_idx, eval_idx) = order.split_at(n_cal);
            let cal_scores = nonconformity(&post.select_rows(cal_idx));
            let at_truth = scores_at_truth(&cal_scores, &labels.select(cal_idx))?;
            let cal = calibrate_coverage_target(&at_truth, alpha)?;
            let sets = predict_sets(&cal, &nonconformity(&post.select_rows(eval_idx)))?;
            let a = audit(&sets, &labels.select(eval_idx))?;
            json!({ "mode": "coverage_target", "alpha": alpha, "q": cal.threshold(),
                    "coverage": a.coverage, "mean_size": a.mean_size,
                    "n_cal": cal_idx.len(), "n_eval": eval_idx.len() })
        }
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Synth { spec, out } => synth(spec, &out),
        Command::Run { config, out, force } => run(&config, out, force),
        Command::Report {
            input,
            target_acc,
            exact,
        } => report(&input, &target_acc, exact),
        Command::Calibrate {
            posteriors,
            mode,
            target,
            alpha,
            cal_fraction,
            seed,
        } => calibrate(&posteriors, mode, target, alpha, cal_fraction, seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

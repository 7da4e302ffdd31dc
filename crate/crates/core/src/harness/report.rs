use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::AULC_DEFINITION;
use super::run::{RunResult, SeedRun};
use crate::error::{Error, Result};

pub const SEED_CSV_HEADER: &str = "round,n_labeled,test_acc,query_sec,train_sec,mean_overlap,mean_symdiff,\
frac_top1_disagree,mean_js,mean_conf_s,mean_conf_t,cov_s,size_s,cov_t,size_t";
pub const AGGREGATE_CSV_HEADER: &str = "round,n_labeled,acc_mean,acc_std,n_seeds";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

pub fn seed_csv_name(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub rounds: usize,
    pub aulc: f64,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub engine_version: String,
    pub aulc_definition: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedSummary>,
    pub aulc_mean: f64,
    pub aulc_std: f64,
    pub single_seed: bool,
    pub truncated: bool,
}

impl Manifest {
    pub fn from_result(result: &RunResult) -> Self {
        Manifest {
            engine_version: crate::ENGINE_VERSION.to_string(),
            aulc_definition: AULC_DEFINITION.to_string(),
            config: result.config.clone(),
            seeds: result
                .seeds
                .iter()
                .map(|s| SeedSummary {
                    seed: s.seed,
                    rounds: s.records.len(),
                    aulc: s.aulc,
                    truncated: s.truncated,
                })
                .collect(),
            aulc_mean: result.aulc.mean[0],
            aulc_std: result.aulc.std[0],
            single_seed: result.aulc.single_seed,
            truncated: result.truncated,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn seed_csv(run: &SeedRun) -> String {
    let mut out = String::from(SEED_CSV_HEADER);
    out.push('\n');
    for r in &run.records {
        let d = r.diagnostics;
        let fields = [
            r.round.to_string(),
            r.n_labeled.to_string(),
            r.test_acc.to_string(),
            r.query_sec.to_string(),
            r.train_sec.to_string(),
            opt(d.map(|d| d.mean_overlap)),
            opt(d.map(|d| d.mean_symdiff)),
            opt(d.map(|d| d.frac_top1_disagree)),
            opt(d.map(|d| d.mean_js)),
            opt(d.map(|d| d.mean_conf_s)),
            opt(d.map(|d| d.mean_conf_t)),
            opt(r.audit_s.map(|a| a.coverage)),
            opt(r.audit_s.map(|a| a.mean_size)),
            opt(r.audit_t.map(|a| a.coverage)),
            opt(r.audit_t.map(|a| a.mean_size)),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn aggregate_csv(result: &RunResult) -> String {
    let mut out = String::from(AGGREGATE_CSV_HEADER);
    out.push('\n');
    let agg = &result.accuracy;
    for (r, n) in result.n_labeled.iter().enumerate() {
        writeln!(out, "{},{},{},{},{}", r + 1, n, agg.mean[r], agg.std[r], agg.n_seeds).unwrap();
    }
    out
}

/// Writes `seed_<s>.csv` per seed, `aggregate.csv` and `manifest.json`.
/// A non-empty `dir` is refused unless `force` is set.
pub fn write_report(result: &RunResult, dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(Error::OutputNotEmpty(dir.to_path_buf()));
        }
    } else {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut files = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        Ok(())
    };
    for run in &result.seeds {
        put(seed_csv_name(run.seed), seed_csv(run))?;
    }
    put(AGGREGATE_FILE.into(), aggregate_csv(result))?;
    let manifest = serde_json::to_string_pretty(&Manifest::from_result(result))? + "\n";
    put(MANIFEST_FILE.into(), manifest)?;
    Ok(files)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// `(n_labeled, acc_mean)` rows of a written `aggregate.csv`.
pub fn read_aggregate(dir: &Path) -> Result<Vec<(usize, f64)>> {
    let path = dir.join(AGGREGATE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(AGGREGATE_CSV_HEADER) {
        return Err(Error::invalid(format!("{} has an unexpected header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::invalid(format!("malformed aggregate row {line:?}"));
            if cols.len() != 5 {
                return Err(bad());
            }
            let n: f64 = cols[1].parse().map_err(|_| bad())?;
            let acc: f64 = cols[2].parse().map_err(|_| bad())?;
            Ok((n.round() as usize, acc))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::Strategy;
    use crate::feature_store::SyntheticSpec;
    use crate::harness::{run_experiment, DatasetSource};
    use crate::student::TrainConfig;

    fn tiny() -> RunResult {
        let cfg = ExperimentConfig {
            dataset: DatasetSource::Synthetic(SyntheticSpec {
                num_classes: 3,
                n_train: 60,
                n_test: 30,
                d_student: 4,
                d_teacher: 4,
                ..Default::default()
            }),
            strategy: Strategy::Random,
            rounds: 3,
            seeds: vec![5, 6],
            train: TrainConfig {
                epochs: 5,
                ..Default::default()
            },
            timings: false,
            ..Default::default()
        };
        run_experiment(&cfg).unwrap()
    }

    #[test]
    fn files_and_headers() {
        let res = tiny();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("r");
        let files = write_report(&res, &out, false).unwrap();
        assert_eq!(files.len(), 4);
        let csv = fs::read_to_string(out.join("seed_5.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), SEED_CSV_HEADER);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 15));
        let agg = read_aggregate(&out).unwrap();
        assert_eq!(agg.iter().map(|a| a.0).collect::<Vec<_>>(), vec![3, 6, 9]);
        assert_eq!(read_manifest(&out).unwrap().config, res.config);
    }

    #[test]
    fn refuses_non_empty_dir() {
        let res = tiny();
        let dir = tempfile::tempdir().unwrap();
        write_report(&res, dir.path(), false).unwrap();
        assert!(matches!(write_report(&res, dir.path(), false), Err(Error::OutputNotEmpty(_))));
        write_report(&res, dir.path(), true).unwrap();
    }
}

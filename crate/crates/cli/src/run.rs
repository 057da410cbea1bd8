//! Command implementations and their JSON report types.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dedpul_core::data::{encode_normalize, load_csv, pu_benchmark_split};
use dedpul_core::estimators::{compute_d_curve, ratio_curve};
use dedpul_core::eval::{classification_scores, posterior_mae, prior_error};
use dedpul_core::stats::derive_seed;
use dedpul_core::synth::{alpha_star, oracle_posteriors, sample_mixture};
use dedpul_core::{
    ntc, Branch, DCurve, DedpulConfig, Laplace, Method, MixtureSpec, NtcPredictions, PuDataset,
    RepeatScores, ScoreReport, Truth,
};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{cell_seed, config_hash, repeat_seed, ConfigError, ExperimentConfig, Source, SweepConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("[{stage}] {message}")]
    Stage { stage: &'static str, message: String },
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl RunError {
    fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        RunError::Stage {
            stage,
            message: e.to_string(),
        }
    }

    fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        RunError::Output {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// One method's result on one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub alpha_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_trace: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_curve: Option<DCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posteriors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<RepeatScores>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub repeat: usize,
    pub seed: u64,
    pub n_p: usize,
    pub n_u: usize,
    /// The prior scored against: `α*` for synthetic data, the split's `α`
    /// for benchmark splits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_alpha: Option<f64>,
    pub methods: BTreeMap<String, MethodRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    /// Scores aggregated over repeats, per method; empty without ground truth.
    pub summary: BTreeMap<String, ScoreReport>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub key: String,
    pub negative: Laplace,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_star: Option<f64>,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub runs: Vec<RunRecord>,
    pub summary: BTreeMap<String, ScoreReport>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub config: SweepConfig,
    /// Ordered by negative component, then alpha, as listed in the config.
    pub cells: Vec<CellReport>,
    pub wall_time_secs: f64,
}

/// What a repeat is scored against.
struct GroundTruth {
    prior: f64,
    posteriors: Option<Vec<f64>>,
    labels: Option<Vec<Truth>>,
}

struct RepeatData {
    preds: NtcPredictions,
    truth: Option<GroundTruth>,
}

/// Output options that differ between commands.
#[derive(Debug, Clone, Copy)]
struct Detail {
    posteriors: bool,
    curves: bool,
}

fn synthetic_repeat(
    spec: &MixtureSpec,
    n_p: usize,
    n_u: usize,
    pipeline: &DedpulConfig,
    seed: u64,
) -> Result<RepeatData, RunError> {
    let ds = sample_mixture(spec, n_p, n_u, derive_seed(seed, 0)).map_err(|e| RunError::stage("synth", e))?;
    let xs: Vec<f64> = {
        let x = ds.feature_matrix().map_err(|e| RunError::stage("data", e))?;
        ds.unlabeled_rows().into_iter().map(|i| x[[i, 0]]).collect()
    };
    let truth = GroundTruth {
        prior: alpha_star(spec).map_err(|e| RunError::stage("synth", e))?,
        posteriors: Some(oracle_posteriors(spec, &xs).map_err(|e| RunError::stage("synth", e))?),
        labels: ds.unlabeled_truth(),
    };
    Ok(RepeatData {
        preds: classify(&ds, pipeline, seed)?,
        truth: Some(truth),
    })
}

fn classify(ds: &PuDataset, pipeline: &DedpulConfig, seed: u64) -> Result<NtcPredictions, RunError> {
    let ntc_cfg = pipeline.ntc.clone().with_seed(derive_seed(seed, 1));
    ntc::cv_predict(ds, pipeline.folds, &ntc_cfg).map_err(|e| RunError::stage("ntc", e))
}

#[derive(Deserialize)]
struct PredictionRow {
    split: String,
    y: f64,
}

/// Reads a `split,y` CSV of externally computed classifier outputs.
pub fn read_external_predictions(path: &Path) -> Result<NtcPredictions, RunError> {
    let err = |e: &dyn std::fmt::Display| RunError::stage("data", format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(&e))?;
    let (mut y_p, mut y_u) = (Vec::new(), Vec::new());
    for (i, row) in reader.deserialize::<PredictionRow>().enumerate() {
        let row = row.map_err(|e| err(&e))?;
        match row.split.trim() {
            "p" => y_p.push(row.y),
            "u" => y_u.push(row.y),
            other => {
                return Err(err(&format!(
                    "record {}: split must be `p` or `u`, got `{other}`",
                    i + 1
                )))
            }
        }
    }
    NtcPredictions::new(y_p, y_u).map_err(|e| RunError::stage("data", e))
}

fn experiment_repeat(cfg: &ExperimentConfig, pipeline: &DedpulConfig, seed: u64) -> Result<RepeatData, RunError> {
    if let Some(path) = &cfg.external_predictions {
        return Ok(RepeatData {
            preds: read_external_predictions(path)?,
            truth: None,
        });
    }
    match cfg.source.as_ref().expect("validated: source or external predictions") {
        Source::Synthetic {
            positive,
            negative,
            alpha,
            n_p,
            n_u,
        } => {
            let spec = MixtureSpec::new(*positive, *negative, *alpha).map_err(|e| RunError::stage("synth", e))?;
            synthetic_repeat(&spec, *n_p, *n_u, pipeline, seed)
        }
        Source::Csv {
            path,
            label_column,
            positive_value,
            benchmark,
        } => {
            let data = |e| RunError::stage("data", e);
            let raw = load_csv(path, label_column, positive_value).map_err(data)?;
            let (ds, truth) = match benchmark {
                Some(b) => {
                    let ds = pu_benchmark_split(&raw, b.n_p, b.alpha, derive_seed(seed, 0)).map_err(data)?;
                    let truth = GroundTruth {
                        prior: b.alpha,
                        posteriors: None,
                        labels: ds.unlabeled_truth(),
                    };
                    (ds, Some(truth))
                }
                None => (raw, None),
            };
            let ds = encode_normalize(&ds);
            Ok(RepeatData {
                preds: classify(&ds, pipeline, seed)?,
                truth,
            })
        }
    }
}

fn score(estimate: &dedpul_core::MethodEstimate, truth: &GroundTruth) -> Result<RepeatScores, RunError> {
    let eval = |e| RunError::stage("eval", e);
    let posterior_mae = truth
        .posteriors
        .as_ref()
        .map(|t| posterior_mae(&estimate.posteriors, t))
        .transpose()
        .map_err(eval)?;
    let cls = truth
        .labels
        .as_ref()
        .map(|l| classification_scores(&estimate.posteriors, l))
        .transpose()
        .map_err(eval)?;
    Ok(RepeatScores {
        prior_abs_err: prior_error(estimate.alpha, truth.prior),
        posterior_mae,
        accuracy: cls.map(|c| c.accuracy),
        f1: cls.map(|c| c.f1),
        roc_auc: cls.and_then(|c| c.roc_auc),
    })
}

fn run_methods(
    data: &RepeatData,
    methods: &[Method],
    pipeline: &DedpulConfig,
    seed: u64,
    repeat: usize,
    detail: Detail,
) -> Result<RunRecord, RunError> {
    let pipeline = DedpulConfig {
        density: dedpul_core::DensitySettings {
            seed: derive_seed(seed, 2),
            ..pipeline.density.clone()
        },
        ..pipeline.clone()
    };
    let mut out = BTreeMap::new();
    for &m in methods {
        let start = Instant::now();
        let est = dedpul_core::run_method(m, &data.preds, &pipeline)
            .map_err(|e| RunError::stage(e.stage(), format!("{}: {e}", m.name())))?;
        let scores = data.truth.as_ref().map(|t| score(&est, t)).transpose()?;
        let em_iterations = est.em_trace.as_ref().map(|t| t.len().saturating_sub(1));
        out.insert(
            m.name().to_owned(),
            MethodRun {
                alpha_star: est.alpha,
                branch: est.branch,
                em_iterations,
                em_trace: if detail.curves { est.em_trace } else { None },
                d_curve: if detail.curves { est.d_curve } else { None },
                posteriors: detail.posteriors.then_some(est.posteriors),
                scores,
                wall_time_secs: start.elapsed().as_secs_f64(),
            },
        );
    }
    Ok(RunRecord {
        repeat,
        seed,
        n_p: data.preds.y_p.len(),
        n_u: data.preds.y_u.len(),
        truth_alpha: data.truth.as_ref().map(|t| t.prior),
        methods: out,
    })
}

fn summarize(runs: &[RunRecord], methods: &[Method]) -> Result<BTreeMap<String, ScoreReport>, RunError> {
    let mut out = BTreeMap::new();
    for m in methods {
        let per: Option<Vec<RepeatScores>> = runs.iter().map(|r| r.methods.get(m.name()).and_then(|x| x.scores)).collect();
        if let Some(per) = per {
            out.insert(
                m.name().to_owned(),
                ScoreReport::aggregate(per).map_err(|e| RunError::stage("eval", e))?,
            );
        }
    }
    Ok(out)
}

/// Runs every configured method on each repeat of one dataset.
pub fn estimate(cfg: &ExperimentConfig) -> Result<EstimateReport, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let pipeline = cfg.pipeline();
    let detail = Detail {
        posteriors: cfg.include_posteriors,
        curves: true,
    };
    let runs = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let seed = repeat_seed(cfg.seed, r);
            let data = experiment_repeat(cfg, &pipeline, seed)?;
            run_methods(&data, &cfg.methods, &pipeline, seed, r, detail)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EstimateReport {
        schema_version: SCHEMA_VERSION,
        command: "estimate".into(),
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        summary: summarize(&runs, &cfg.methods)?,
        runs,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn cell_key(negative: Laplace, alpha: f64) -> String {
    format!("L({},{})|alpha={alpha}", negative.loc, negative.scale)
}

fn run_cell(cfg: &SweepConfig, pipeline: &DedpulConfig, negative: Laplace, alpha: f64) -> CellReport {
    let start = Instant::now();
    let key = cell_key(negative, alpha);
    let detail = Detail {
        posteriors: cfg.include_posteriors,
        curves: false,
    };
    let result = MixtureSpec::new(cfg.positive, negative, alpha)
        .map_err(|e| RunError::stage("synth", e))
        .and_then(|spec| {
            let a_star = alpha_star(&spec).map_err(|e| RunError::stage("synth", e))?;
            let runs = (0..cfg.repeats)
                .into_par_iter()
                .map(|r| {
                    let seed = cell_seed(cfg.seed, cfg.positive, negative, alpha, r);
                    let data = synthetic_repeat(&spec, cfg.n_p, cfg.n_u, pipeline, seed)?;
                    run_methods(&data, &cfg.methods, pipeline, seed, r, detail)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let summary = summarize(&runs, &cfg.methods)?;
            Ok((a_star, runs, summary))
        });
    let wall_time_secs = start.elapsed().as_secs_f64();
    match result {
        Ok((a_star, runs, summary)) => {
            info!("cell {key} done in {wall_time_secs:.1}s");
            CellReport {
                key,
                negative,
                alpha,
                alpha_star: Some(a_star),
                status: CellStatus::Ok,
                error: None,
                runs,
                summary,
                wall_time_secs,
            }
        }
        Err(e) => {
            warn!("cell {key} failed: {e}");
            CellReport {
                key,
                negative,
                alpha,
                alpha_star: None,
                status: CellStatus::Failed,
                error: Some(e.to_string()),
                runs: Vec::new(),
                summary: BTreeMap::new(),
                wall_time_secs,
            }
        }
    }
}

/// Every `(negative, alpha)` cell of the sweep. A failing cell is reported
/// as failed and the others still run.
pub fn synth_bench(cfg: &SweepConfig) -> Result<SweepReport, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let pipeline = cfg.pipeline();
    let jobs: Vec<(Laplace, f64)> = cfg
        .negatives
        .iter()
        .flat_map(|&n| cfg.alphas.iter().map(move |&a| (n, a)))
        .collect();
    let cells = jobs
        .into_par_iter()
        .map(|(n, a)| run_cell(cfg, &pipeline, n, a))
        .collect();
    Ok(SweepReport {
        schema_version: SCHEMA_VERSION,
        command: "synth-bench".into(),
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        cells,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Empirical D-curve and the ratio curve it was computed from, for the
/// first repeat of the configured dataset.
pub fn dcurve(cfg: &ExperimentConfig) -> Result<(DCurve, dedpul_core::RatioCurve), RunError> {
    cfg.validate()?;
    let pipeline = cfg.pipeline();
    let seed = repeat_seed(cfg.seed, 0);
    let data = experiment_repeat(cfg, &pipeline, seed)?;
    let pipeline = DedpulConfig {
        density: dedpul_core::DensitySettings {
            seed: derive_seed(seed, 2),
            ..pipeline.density.clone()
        },
        ..pipeline
    };
    let curve = ratio_curve(&data.preds, &pipeline).map_err(|e| RunError::stage(e.stage(), e))?;
    let d = compute_d_curve(&curve, pipeline.eps).map_err(|e| RunError::stage("estimators", e))?;
    Ok((d, curve))
}

fn write_columns(path: &Path, header: [&str; 2], a: &[f64], b: &[f64]) -> Result<(), RunError> {
    let file = File::create(path).map_err(|e| RunError::output(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(|e| RunError::output(path, e))?;
    for (x, y) in a.iter().zip(b) {
        w.write_record([x.to_string(), y.to_string()])
            .map_err(|e| RunError::output(path, e))?;
    }
    w.flush().map_err(|e| RunError::output(path, e))
}

pub fn write_dcurve(path: &Path, d: &DCurve) -> Result<(), RunError> {
    write_columns(path, ["alpha", "D"], &d.alphas, &d.d)
}

pub fn write_ratio(path: &Path, curve: &dedpul_core::RatioCurve) -> Result<(), RunError> {
    write_columns(path, ["y", "r"], curve.y(), curve.r())
}

/// Pretty JSON with a trailing newline; stdout when `path` is `None`.
pub fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| RunError::output(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| RunError::output(Path::new("<stdout>"), e))
        }
    }
}

//! End-to-end runs: ingest, fit both models, score, and write every report.
//!
//! Files written by [`run_pipeline`] into the output directory:
//!
//! | file | content |
//! |------|---------|
//! | `cleaning.json` | row accounting and the first row-level errors |
//! | `fit.json` | convergence diagnostics for both models |
//! | `params.json`, `params.csv` | fitted abilities and difficulties keyed by label |
//! | `metrics.json` | AUC and log-loss for baseline and hierarchical models |
//! | `calibration.csv` | equal-count calibration bins of the hierarchical model |
//! | `summary.csv` | ability/difficulty descriptive statistics |
//! | `rankings.csv` | easiest and hardest skills |
//! | `fig1_hist.csv` | ability histogram |
//! | `fig2_scatter.csv` | log10 attempts per skill vs difficulty |
//! | `fig3_scatter.csv` | log10 attempts per student vs ability |
//! | `fig5_extremes.csv` | observed vs predicted success on extreme skills |
//! | `fig6_trajectory.csv` | per-attempt predictions for one student |
//! | `report.json` | everything above in one document |
//! | `recovery.json` | correlations with known parameters (only with `truth`) |
//!
//! No file depends on wall-clock time or hash-map iteration order, so equal
//! inputs give byte-identical outputs.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::{
    self, CohortSummary, LinearTrend, SkillComparison, SkillRanking, StudentSelector,
};
use crate::error::{Error, Result};
use crate::fit::{self, BaselineModel, FitConfig, FitDiagnostics, FitResult};
use crate::ingest::{self, CleaningReport, ColumnSchema, InteractionTable, RowError};
use crate::metrics::{self, CalibrationTable};
use crate::model::{sigmoid, ModelParams, ParamsDocument, PriorConfig};
use crate::synth::pearson;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum EvaluationMode {
    InSample,
    /// Record-level holdout of the given fraction, drawn with the run seed.
    Holdout {
        fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: PathBuf,
    pub schema: ColumnSchema,
    pub subsample_size: Option<usize>,
    pub seed: u64,
    pub sigma_squared: f64,
    pub fit: FitConfig,
    pub ridge_epsilon: f64,
    pub output_dir: PathBuf,
    pub evaluation: EvaluationMode,
    pub top_k: usize,
    pub histogram_bins: usize,
    pub calibration_bins: usize,
    pub trajectory: StudentSelector,
    /// Known generating parameters (a params document) for a recovery report.
    pub truth: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            schema: ColumnSchema::default(),
            subsample_size: None,
            seed: 42,
            sigma_squared: 100.0,
            fit: FitConfig::default(),
            ridge_epsilon: fit::DEFAULT_RIDGE_EPSILON,
            output_dir: PathBuf::from("out"),
            evaluation: EvaluationMode::InSample,
            top_k: 5,
            histogram_bins: 30,
            calibration_bins: 10,
            trajectory: StudentSelector::Lowest,
            truth: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input.as_os_str().is_empty() {
            return Err(Error::InvalidArgument("input path is empty".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::InvalidArgument("output directory is empty".into()));
        }
        if let EvaluationMode::Holdout { fraction } = self.evaluation {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "holdout fraction must lie in (0, 1), got {fraction}"
                )));
            }
        }
        if self.top_k == 0 || self.histogram_bins == 0 || self.calibration_bins == 0 {
            return Err(Error::InvalidArgument(
                "report sizes must be positive".into(),
            ));
        }
        self.schema.validate()?;
        self.fit.validate()?;
        PriorConfig::new(self.sigma_squared)?;
        Ok(())
    }

    pub fn prior(&self) -> Result<PriorConfig> {
        PriorConfig::new(self.sigma_squared)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CleaningSummary {
    #[serde(flatten)]
    pub report: CleaningReport,
    pub row_error_count: usize,
    pub row_errors: Vec<RowError>,
}

const MAX_LISTED_ROW_ERRORS: usize = 20;

/// Parses, cleans and interns a delimited file.
pub fn load_table(
    path: &Path,
    schema: &ColumnSchema,
) -> Result<(InteractionTable, CleaningSummary)> {
    let log = ingest::parse_records(open(path)?, schema)?;
    let row_error_count = log.row_errors.len();
    let row_errors: Vec<RowError> = log
        .row_errors
        .iter()
        .take(MAX_LISTED_ROW_ERRORS)
        .cloned()
        .collect();
    for e in &row_errors {
        log::warn!("{}:{}: {}", path.display(), e.line, e.message);
    }
    let (records, report) = ingest::clean(log);
    log::info!(
        "read {} rows, kept {} records ({} malformed, {} missing field, {} bad correctness, {} multi-skill)",
        report.rows_read,
        report.rows_kept,
        report.rows_malformed,
        report.rows_dropped_missing_field,
        report.rows_dropped_bad_correctness,
        report.rows_dropped_multi_skill
    );
    let table = ingest::build_table(&records)?;
    Ok((
        table,
        CleaningSummary {
            report,
            row_error_count,
            row_errors,
        },
    ))
}

/// AUC and log-loss of one model on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub records: usize,
    /// `None` when the evaluation labels contain a single class.
    pub auc: Option<f64>,
    pub log_loss: f64,
}

pub fn score(model: &str, labels: &[bool], probs: &[f64]) -> Result<ModelMetrics> {
    let auc = match metrics::auc(labels, probs) {
        Ok(a) => Some(a),
        Err(Error::AucUndefined) => {
            log::warn!("{model}: AUC undefined on a single-class evaluation set");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(ModelMetrics {
        model: model.to_string(),
        records: labels.len(),
        auc,
        log_loss: metrics::log_loss(labels, probs)?,
    })
}

/// Hierarchical-model probabilities for `eval` records using parameters fitted
/// on `train`. Students or skills unseen in training get the prior mean 0.
pub fn predict_map(
    params: &ModelParams,
    train: &InteractionTable,
    eval: &InteractionTable,
) -> Vec<f64> {
    let thetas: Vec<f64> = eval
        .student_labels()
        .iter()
        .map(|l| train.student_index(l).map_or(0.0, |i| params.theta[i]))
        .collect();
    let betas: Vec<f64> = eval
        .skill_labels()
        .iter()
        .map(|l| train.skill_index(l).map_or(0.0, |k| params.beta[k]))
        .collect();
    eval.records()
        .iter()
        .map(|r| sigmoid(thetas[r.student] - betas[r.skill]))
        .collect()
}

/// Baseline probabilities for `eval` records; unseen entities get effect 0.
pub fn predict_baseline(
    model: &BaselineModel,
    train: &InteractionTable,
    eval: &InteractionTable,
) -> Vec<f64> {
    let students: Vec<f64> = eval
        .student_labels()
        .iter()
        .map(|l| {
            train
                .student_index(l)
                .map_or(0.0, |i| model.student_effects[i])
        })
        .collect();
    let skills: Vec<f64> = eval
        .skill_labels()
        .iter()
        .map(|l| train.skill_index(l).map_or(0.0, |k| model.skill_effects[k]))
        .collect();
    eval.records()
        .iter()
        .map(|r| sigmoid(model.intercept + students[r.student] + skills[r.skill]))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub evaluation: EvaluationMode,
    pub training_records: usize,
    pub evaluation_records: usize,
    /// Baseline first, then hierarchical.
    pub models: Vec<ModelMetrics>,
}

impl MetricsReport {
    pub fn get(&self, model: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.model == model)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendReport {
    pub difficulty_vs_log10_attempts: Option<LinearTrend>,
    pub ability_vs_log10_attempts: Option<LinearTrend>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyticsReport {
    pub summary: CohortSummary,
    pub relative_mastery: f64,
    pub rankings: SkillRanking,
    pub extremes_easiest: Vec<SkillComparison>,
    pub extremes_hardest: Vec<SkillComparison>,
    pub trends: TrendReport,
    pub trajectory_student: String,
    pub trajectory_length: usize,
}

fn as_refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::Open {
            path: path.to_path_buf(),
            source,
        })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes the analytics CSVs (`summary`, `rankings`, `fig1`-`fig6`) for
/// `params` fitted on `table`.
pub fn write_analytics(
    dir: &Path,
    params: &ModelParams,
    table: &InteractionTable,
    config: &RunConfig,
) -> Result<AnalyticsReport> {
    params.check_against(table)?;
    let summary = analytics::cohort_summary(params);
    summary.write_csv(create(dir, "summary.csv")?)?;

    let k = config.top_k.min(table.num_skills());
    let rankings = analytics::rank_skills(params, table, k)?;
    rankings.write_csv(create(dir, "rankings.csv")?)?;

    analytics::ability_histogram(params, config.histogram_bins)?
        .write_csv(create(dir, "fig1_hist.csv")?)?;

    let fig2 = analytics::difficulty_vs_practice(params, table)?;
    fig2.write_csv(create(dir, "fig2_scatter.csv")?, "skill", "beta")?;
    let fig3 = analytics::ability_vs_attempts(params, table)?;
    fig3.write_csv(create(dir, "fig3_scatter.csv")?, "student", "theta")?;

    let names = |list: &[analytics::RankedSkill]| -> Vec<String> {
        list.iter().map(|s| s.skill.clone()).collect()
    };
    let easy_names = names(&rankings.easiest);
    let hard_names = names(&rankings.hardest);
    let extremes_easiest =
        analytics::skill_observed_vs_predicted(params, table, &as_refs(&easy_names))?;
    let extremes_hardest =
        analytics::skill_observed_vs_predicted(params, table, &as_refs(&hard_names))?;
    analytics::write_extremes_csv(
        &extremes_easiest,
        &extremes_hardest,
        create(dir, "fig5_extremes.csv")?,
    )?;

    let trajectory = analytics::student_trajectory(params, table, &config.trajectory)?;
    trajectory.write_csv(create(dir, "fig6_trajectory.csv")?)?;

    Ok(AnalyticsReport {
        relative_mastery: analytics::relative_mastery(&summary),
        summary,
        rankings,
        extremes_easiest,
        extremes_hardest,
        trends: TrendReport {
            difficulty_vs_log10_attempts: fig2.trend,
            ability_vs_log10_attempts: fig3.trend,
        },
        trajectory_student: trajectory.student,
        trajectory_length: trajectory.points.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub prior: PriorConfig,
    pub config: FitConfig,
    pub hierarchical: FitDiagnostics,
    pub baseline: FitDiagnostics,
    pub baseline_ridge_epsilon: f64,
    pub baseline_intercept: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub matched_students: usize,
    pub matched_skills: usize,
    pub theta_correlation: f64,
    pub beta_correlation: f64,
}

/// Correlations between fitted and known parameters over shared labels.
pub fn recovery(
    fitted: &ModelParams,
    table: &InteractionTable,
    truth: &ParamsDocument,
) -> RecoveryReport {
    let pairs = |entries: &[crate::model::LabeledValue], lookup: &dyn Fn(&str) -> Option<f64>| {
        entries
            .iter()
            .filter_map(|e| lookup(&e.label).map(|v| (v, e.value)))
            .unzip::<f64, f64, Vec<f64>, Vec<f64>>()
    };
    let (ft, tt) = pairs(&truth.theta, &|l| {
        table.student_index(l).map(|i| fitted.theta[i])
    });
    let (fb, tb) = pairs(&truth.beta, &|l| {
        table.skill_index(l).map(|k| fitted.beta[k])
    });
    RecoveryReport {
        matched_students: ft.len(),
        matched_skills: fb.len(),
        theta_correlation: if ft.len() > 1 {
            pearson(&ft, &tt)
        } else {
            f64::NAN
        },
        beta_correlation: if fb.len() > 1 {
            pearson(&fb, &tb)
        } else {
            f64::NAN
        },
    }
}

pub fn read_params_document(path: &Path) -> Result<ParamsDocument> {
    Ok(serde_json::from_reader(open(path)?)?)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub converged: bool,
    pub table: InteractionTable,
    pub map: FitResult,
    pub baseline: BaselineModel,
    pub metrics: MetricsReport,
    pub calibration: CalibrationTable,
    pub analytics: AnalyticsReport,
    pub recovery: Option<RecoveryReport>,
}

/// Loads the configured input and applies the optional subsample.
pub fn prepare_table(config: &RunConfig) -> Result<(InteractionTable, CleaningSummary)> {
    config.validate()?;
    let (table, cleaning) = load_table(&config.input, &config.schema)?;
    let table = match config.subsample_size {
        Some(n) => {
            let sub = ingest::subsample(&table, n, config.seed)?;
            log::info!(
                "subsample of {n} records (seed {}): {} students, {} skills",
                config.seed,
                sub.num_students(),
                sub.num_skills()
            );
            sub
        }
        None => table,
    };
    Ok((table, cleaning))
}

/// Fits both models on one table and scores them under `mode`.
fn fit_and_score(
    table: &InteractionTable,
    config: &RunConfig,
) -> Result<(
    InteractionTable,
    FitResult,
    BaselineModel,
    MetricsReport,
    CalibrationTable,
)> {
    let prior = config.prior()?;
    let (train, eval) = match config.evaluation {
        EvaluationMode::InSample => (table.clone(), None),
        EvaluationMode::Holdout { fraction } => {
            let (train, test) = ingest::holdout_split(table, fraction, config.seed)?;
            (train, Some(test))
        }
    };
    let map = fit::fit_map(&train, &prior, &config.fit)?;
    let baseline = fit::fit_baseline_with_ridge(&train, &config.fit, config.ridge_epsilon)?;
    if !map.converged() {
        log::warn!("hierarchical fit stopped at max_iterations");
    }
    if !baseline.diagnostics.converged {
        log::warn!("baseline fit stopped at max_iterations");
    }

    let eval_table = eval.as_ref().unwrap_or(&train);
    let labels = eval_table.labels();
    let map_probs = predict_map(&map.params, &train, eval_table);
    let base_probs = predict_baseline(&baseline, &train, eval_table);
    let metrics = MetricsReport {
        evaluation: config.evaluation,
        training_records: train.len(),
        evaluation_records: eval_table.len(),
        models: vec![
            score("baseline", &labels, &base_probs)?,
            score("hierarchical", &labels, &map_probs)?,
        ],
    };
    let bins = config.calibration_bins.min(labels.len());
    let calibration = metrics::calibration(&labels, &map_probs, bins)?;
    Ok((train, map, baseline, metrics, calibration))
}

/// The full workflow. Reports are written even when a fit stops at
/// `max_iterations`; check [`PipelineOutcome::converged`].
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutcome> {
    let (table, cleaning) = prepare_table(config)?;
    let (train, map, baseline, metrics, calibration) = fit_and_score(&table, config)?;

    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    write_json(dir, "cleaning.json", &cleaning)?;
    let prior = config.prior()?;
    let fit_report = FitReport {
        prior,
        config: config.fit,
        hierarchical: map.diagnostics.clone(),
        baseline: baseline.diagnostics.clone(),
        baseline_ridge_epsilon: baseline.ridge_epsilon,
        baseline_intercept: baseline.intercept,
    };
    write_json(dir, "fit.json", &fit_report)?;
    let doc = map.params.to_document(&train, &prior);
    write_json(dir, "params.json", &doc)?;
    doc.write_csv(create(dir, "params.csv")?)?;
    write_json(dir, "metrics.json", &metrics)?;
    calibration.write_csv(create(dir, "calibration.csv")?)?;
    let analytics = write_analytics(dir, &map.params, &train, config)?;

    let recovery = match &config.truth {
        Some(path) => {
            let truth = read_params_document(path)?;
            let r = recovery(&map.params, &train, &truth);
            write_json(dir, "recovery.json", &r)?;
            Some(r)
        }
        None => None,
    };

    #[derive(Serialize)]
    struct Combined<'a> {
        cleaning: &'a CleaningSummary,
        students: usize,
        skills: usize,
        records: usize,
        fit: &'a FitReport,
        metrics: &'a MetricsReport,
        calibration: &'a CalibrationTable,
        analytics: &'a AnalyticsReport,
        recovery: &'a Option<RecoveryReport>,
    }
    write_json(
        dir,
        "report.json",
        &Combined {
            cleaning: &cleaning,
            students: train.num_students(),
            skills: train.num_skills(),
            records: train.len(),
            fit: &fit_report,
            metrics: &metrics,
            calibration: &calibration,
            analytics: &analytics,
            recovery: &recovery,
        },
    )?;

    Ok(PipelineOutcome {
        converged: map.converged() && baseline.diagnostics.converged,
        table: train,
        map,
        baseline,
        metrics,
        calibration,
        analytics,
        recovery,
    })
}

/// Scores a saved params document on the configured data. Writes
/// `metrics.json` and `calibration.csv`.
pub fn run_evaluate(
    config: &RunConfig,
    params_path: &Path,
) -> Result<(ModelMetrics, CalibrationTable)> {
    let (table, _) = prepare_table(config)?;
    let doc = read_params_document(params_path)?;
    let mut thetas = Vec::with_capacity(table.num_students());
    for l in table.student_labels() {
        thetas.push(
            doc.theta
                .iter()
                .find(|e| &e.label == l)
                .map_or(0.0, |e| e.value),
        );
    }
    let mut betas = Vec::with_capacity(table.num_skills());
    for l in table.skill_labels() {
        betas.push(
            doc.beta
                .iter()
                .find(|e| &e.label == l)
                .map_or(0.0, |e| e.value),
        );
    }
    let params = ModelParams {
        theta: thetas,
        beta: betas,
    };
    let labels = table.labels();
    let probs = params.predict_table(&table);
    let m = score("hierarchical", &labels, &probs)?;
    let calibration =
        metrics::calibration(&labels, &probs, config.calibration_bins.min(labels.len()))?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    write_json(dir, "metrics.json", &m)?;
    calibration.write_csv(create(dir, "calibration.csv")?)?;
    Ok((m, calibration))
}

/// Writes the analytics CSVs for a saved params document. Every student and
/// skill of the configured data must be present in the document.
pub fn run_report(config: &RunConfig, params_path: &Path) -> Result<AnalyticsReport> {
    let (table, _) = prepare_table(config)?;
    let doc = read_params_document(params_path)?;
    let params = ModelParams::from_document(&doc, &table)?;
    fs::create_dir_all(&config.output_dir)?;
    let report = write_analytics(&config.output_dir, &params, &table, config)?;
    write_json(&config.output_dir, "report.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub model: String,
    pub subsample_size: Option<usize>,
    pub seed: Option<u64>,
    pub records: usize,
    pub auc: Option<f64>,
    pub log_loss: f64,
    pub converged: bool,
    pub termination_reason: fit::Termination,
}

/// The subsample-size by seed grid used for stability checks.
pub const SENSITIVITY_SIZES: [usize; 2] = [20_000, 40_000];
pub const SENSITIVITY_SEEDS: [u64; 2] = [42, 2025];

/// Baseline on the full table plus one hierarchical fit per (size, seed).
/// Writes `sensitivity.csv` and `sensitivity.json`.
pub fn run_sensitivity(
    config: &RunConfig,
    sizes: &[usize],
    seeds: &[u64],
) -> Result<Vec<SensitivityRow>> {
    config.validate()?;
    let (full, _) = load_table(&config.input, &config.schema)?;
    let prior = config.prior()?;
    let mut rows = Vec::new();

    let baseline = fit::fit_baseline_with_ridge(&full, &config.fit, config.ridge_epsilon)?;
    let labels = full.labels();
    let m = score("baseline", &labels, &baseline.predict_table(&full))?;
    rows.push(SensitivityRow {
        model: "baseline".into(),
        subsample_size: None,
        seed: None,
        records: full.len(),
        auc: m.auc,
        log_loss: m.log_loss,
        converged: baseline.diagnostics.converged,
        termination_reason: baseline.diagnostics.termination_reason,
    });

    for &size in sizes {
        for &seed in seeds {
            let sub = ingest::subsample(&full, size, seed)?;
            let (train, eval) = match config.evaluation {
                EvaluationMode::InSample => (sub, None),
                EvaluationMode::Holdout { fraction } => {
                    let (a, b) = ingest::holdout_split(&sub, fraction, seed)?;
                    (a, Some(b))
                }
            };
            let map = fit::fit_map(&train, &prior, &config.fit)?;
            let eval_table = eval.as_ref().unwrap_or(&train);
            let m = score(
                "hierarchical",
                &eval_table.labels(),
                &predict_map(&map.params, &train, eval_table),
            )?;
            rows.push(SensitivityRow {
                model: "hierarchical".into(),
                subsample_size: Some(size),
                seed: Some(seed),
                records: eval_table.len(),
                auc: m.auc,
                log_loss: m.log_loss,
                converged: map.converged(),
                termination_reason: map.diagnostics.termination_reason,
            });
        }
    }

    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(create(dir, "sensitivity.csv")?);
    w.write_record([
        "model",
        "subsample_size",
        "seed",
        "records",
        "auc",
        "log_loss",
        "converged",
    ])?;
    for r in &rows {
        w.write_record([
            r.model.clone(),
            r.subsample_size
                .map_or_else(|| "all".into(), |v| v.to_string()),
            r.seed.map_or_else(String::new, |v| v.to_string()),
            r.records.to_string(),
            r.auc.map_or_else(String::new, |v| format!("{v:.3}")),
            format!("{:.3}", r.log_loss),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    write_json(dir, "sensitivity.json", &rows)?;
    Ok(rows)
}

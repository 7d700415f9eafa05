//! MAP estimation of abilities and difficulties, the one-hot baseline, and a
//! finite-difference gradient check.
//!
//! Box bounds are never needed: the MAP objective is strictly convex and
//! unconstrained, so plain L-BFGS reaches the same optimum an L-BFGS-B run
//! without active bounds would.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::InteractionTable;
use crate::model::{self, response_loss, sigmoid, ModelParams, PriorConfig};
use crate::optim::{self, LbfgsSettings, Objective};

pub use crate::optim::Termination;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Infinity-norm of the gradient.
    pub gradient_tolerance: f64,
    pub objective_relative_tolerance: f64,
    pub history_size: usize,
    /// Starting value of every parameter.
    pub initial_value: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-5,
            objective_relative_tolerance: 1e-9,
            history_size: 10,
            initial_value: 0.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument(
                "max_iterations must be at least 1".into(),
            ));
        }
        let bad = |t: f64| t.is_nan() || t <= 0.0;
        if bad(self.gradient_tolerance) || bad(self.objective_relative_tolerance) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.history_size < 1 {
            return Err(Error::InvalidArgument(
                "history_size must be at least 1".into(),
            ));
        }
        if !self.initial_value.is_finite() {
            return Err(Error::InvalidArgument(
                "initial_value must be finite".into(),
            ));
        }
        Ok(())
    }

    fn settings(&self) -> LbfgsSettings {
        LbfgsSettings {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            objective_relative_tolerance: self.objective_relative_tolerance,
            history_size: self.history_size,
        }
    }
}

/// Convergence diagnostics shared by both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub final_objective: f64,
    pub final_gradient_norm: f64,
    pub termination_reason: Termination,
    /// Objective at the start and after each accepted step.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl FitDiagnostics {
    fn from_minimum(m: &optim::Minimum) -> Self {
        Self {
            converged: m.termination != Termination::MaxIter,
            iterations: m.iterations,
            final_objective: m.value,
            final_gradient_norm: m.gradient.iter().fold(0.0_f64, |a, g| a.max(g.abs())),
            termination_reason: m.termination,
            objective_trace: m.trace.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    pub prior: PriorConfig,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }
}

struct MapObjective<'a> {
    table: &'a InteractionTable,
    prior: &'a PriorConfig,
}

impl Objective for MapObjective<'_> {
    fn dim(&self) -> usize {
        self.table.num_students() + self.table.num_skills()
    }

    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let ns = self.table.num_students();
        let (theta, beta) = x.split_at(ns);
        let (gt, gb) = grad.split_at_mut(ns);
        model::value_and_gradient(theta, beta, self.table, self.prior, gt, gb)
    }
}

/// MAP fit starting from `config.initial_value` everywhere.
pub fn fit_map(
    table: &InteractionTable,
    prior: &PriorConfig,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    let start = ModelParams::filled(
        table.num_students(),
        table.num_skills(),
        config.initial_value,
    );
    fit_map_from(table, prior, config, start)
}

/// MAP fit from an explicit starting point.
pub fn fit_map_from(
    table: &InteractionTable,
    prior: &PriorConfig,
    config: &FitConfig,
    start: ModelParams,
) -> Result<FitResult> {
    config.validate()?;
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    start.check_against(table)?;
    let objective = MapObjective { table, prior };
    let x0: Vec<f64> = start.theta.into_iter().chain(start.beta).collect();
    let m = optim::minimize(&objective, x0, &config.settings())?;
    let diagnostics = FitDiagnostics::from_minimum(&m);
    let mut theta = m.x;
    let beta = theta.split_off(table.num_students());
    log::debug!(
        "MAP fit: {} iterations, objective {:.6}, reason {:?}",
        diagnostics.iterations,
        diagnostics.final_objective,
        diagnostics.termination_reason
    );
    Ok(FitResult {
        params: ModelParams { theta, beta },
        prior: *prior,
        diagnostics,
    })
}

/// One-hot logistic regression: `logit = intercept + student_effect + skill_effect`.
///
/// The intercept is unpenalized; every effect carries a `ridge_epsilon * c^2 / 2`
/// penalty, which pins the otherwise rank-deficient parameterization and keeps
/// separated entities finite.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub intercept: f64,
    pub student_effects: Vec<f64>,
    pub skill_effects: Vec<f64>,
    pub ridge_epsilon: f64,
    pub diagnostics: FitDiagnostics,
}

pub const DEFAULT_RIDGE_EPSILON: f64 = 1e-6;

impl BaselineModel {
    pub fn logit(&self, student: usize, skill: usize) -> f64 {
        self.intercept + self.student_effects[student] + self.skill_effects[skill]
    }

    pub fn predict(&self, student: usize, skill: usize) -> f64 {
        sigmoid(self.logit(student, skill))
    }

    pub fn predict_table(&self, table: &InteractionTable) -> Vec<f64> {
        table
            .records()
            .iter()
            .map(|r| self.predict(r.student, r.skill))
            .collect()
    }
}

struct BaselineObjective<'a> {
    table: &'a InteractionTable,
    ridge: f64,
}

impl Objective for BaselineObjective<'_> {
    fn dim(&self) -> usize {
        1 + self.table.num_students() + self.table.num_skills()
    }

    // Layout: [intercept, student effects.., skill effects..]
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let ns = self.table.num_students();
        grad.fill(0.0);
        let intercept = x[0];
        let (students, skills) = x[1..].split_at(ns);
        let mut f = 0.0;
        for r in self.table.records() {
            let z = intercept + students[r.student] + skills[r.skill];
            f += response_loss(z, r.correct);
            let residual = sigmoid(z) - if r.correct { 1.0 } else { 0.0 };
            grad[0] += residual;
            grad[1 + r.student] += residual;
            grad[1 + ns + r.skill] += residual;
        }
        for (g, c) in grad[1..].iter_mut().zip(&x[1..]) {
            f += 0.5 * self.ridge * c * c;
            *g += self.ridge * c;
        }
        f
    }
}

/// Fits [`BaselineModel`] with the default ridge.
pub fn fit_baseline(table: &InteractionTable, config: &FitConfig) -> Result<BaselineModel> {
    fit_baseline_with_ridge(table, config, DEFAULT_RIDGE_EPSILON)
}

pub fn fit_baseline_with_ridge(
    table: &InteractionTable,
    config: &FitConfig,
    ridge_epsilon: f64,
) -> Result<BaselineModel> {
    config.validate()?;
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    if !(ridge_epsilon > 0.0 && ridge_epsilon.is_finite()) {
        return Err(Error::InvalidArgument(
            "ridge_epsilon must be positive".into(),
        ));
    }
    let objective = BaselineObjective {
        table,
        ridge: ridge_epsilon,
    };
    let x0 = vec![config.initial_value; objective.dim()];
    let m = optim::minimize(&objective, x0, &config.settings())?;
    let diagnostics = FitDiagnostics::from_minimum(&m);
    let ns = table.num_students();
    Ok(BaselineModel {
        intercept: m.x[0],
        student_effects: m.x[1..1 + ns].to_vec(),
        skill_effects: m.x[1 + ns..].to_vec(),
        ridge_epsilon,
        diagnostics,
    })
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences `(f(x + h e_i) - f(x - h e_i)) / 2h` over every coordinate.
///
/// Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, 1)`,
/// so near-zero components are compared absolutely.
pub fn check_gradient(
    table: &InteractionTable,
    prior: &PriorConfig,
    trial: &ModelParams,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let analytic = model::gradient(trial, table, prior)?;
    let mut probe = trial.clone();
    let mut worst = 0.0_f64;

    let mut compare = |a: f64, numeric: f64| {
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        worst = worst.max(err);
    };
    for i in 0..trial.theta.len() {
        let numeric = central_difference(&mut probe, table, prior, step, |p| &mut p.theta[i])?;
        compare(analytic.theta[i], numeric);
    }
    for k in 0..trial.beta.len() {
        let numeric = central_difference(&mut probe, table, prior, step, |p| &mut p.beta[k])?;
        compare(analytic.beta[k], numeric);
    }
    Ok(worst)
}

fn central_difference(
    probe: &mut ModelParams,
    table: &InteractionTable,
    prior: &PriorConfig,
    step: f64,
    coord: impl Fn(&mut ModelParams) -> &mut f64,
) -> Result<f64> {
    let original = *coord(probe);
    *coord(probe) = original + step;
    let plus = model::neg_log_posterior(probe, table, prior)?;
    *coord(probe) = original - step;
    let minus = model::neg_log_posterior(probe, table, prior)?;
    *coord(probe) = original;
    Ok((plus - minus) / (2.0 * step))
}

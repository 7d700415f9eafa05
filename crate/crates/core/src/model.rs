//! Response model, negative log-posterior and its analytic gradient.
//!
//! For record `i` with student `s` and skill `k`, the logit is
//! `x_i = theta_s - beta_k` and `p_i = sigmoid(x_i)`. The objective is
//!
//! ```text
//! f = sum_i softplus(-x_i) if y_i = 1 else softplus(x_i)
//!   + sum_s theta_s^2 / (2 var_theta) + sum_k beta_k^2 / (2 var_beta)
//! ```
//!
//! which equals the negative Bernoulli log-likelihood plus Gaussian prior
//! penalties, evaluated without ever forming `log(p)` from a rounded `p`.
//!
//! Summation order is fixed: likelihood terms left to right in record order,
//! then the ability penalties in index order, then the difficulty penalties.
//! Gradients accumulate residuals in record order into per-entity slots before
//! the penalty term is added. Results are therefore bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::InteractionTable;

/// Prior variances in logits². Both default to 100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub theta_variance: f64,
    pub beta_variance: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self::new(100.0).unwrap()
    }
}

impl PriorConfig {
    /// One shared variance for abilities and difficulties.
    pub fn new(sigma_squared: f64) -> Result<Self> {
        Self::with_variances(sigma_squared, sigma_squared)
    }

    pub fn with_variances(theta_variance: f64, beta_variance: f64) -> Result<Self> {
        for v in [theta_variance, beta_variance] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "prior variance must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self {
            theta_variance,
            beta_variance,
        })
    }
}

/// Abilities (one per student) and difficulties (one per skill), in logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(num_students: usize, num_skills: usize) -> Self {
        Self::filled(num_students, num_skills, 0.0)
    }

    pub fn filled(num_students: usize, num_skills: usize, value: f64) -> Self {
        Self {
            theta: vec![value; num_students],
            beta: vec![value; num_skills],
        }
    }

    pub fn for_table(table: &InteractionTable) -> Self {
        Self::zeros(table.num_students(), table.num_skills())
    }

    pub fn check_against(&self, table: &InteractionTable) -> Result<()> {
        if self.theta.len() != table.num_students() {
            return Err(Error::SizeMismatch {
                what: "theta",
                expected: table.num_students(),
                found: self.theta.len(),
            });
        }
        if self.beta.len() != table.num_skills() {
            return Err(Error::SizeMismatch {
                what: "beta",
                expected: table.num_skills(),
                found: self.beta.len(),
            });
        }
        if let Some(v) = self.theta.iter().chain(&self.beta).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter value {v}")));
        }
        Ok(())
    }

    /// Fitted probability for every record of `table`, in record order.
    pub fn predict_table(&self, table: &InteractionTable) -> Vec<f64> {
        table
            .records()
            .iter()
            .map(|r| sigmoid(self.theta[r.student] - self.beta[r.skill]))
            .collect()
    }

    /// Flat label-keyed document for serialization.
    pub fn to_document(&self, table: &InteractionTable, prior: &PriorConfig) -> ParamsDocument {
        let entries = |labels: &[String], values: &[f64]| {
            labels
                .iter()
                .zip(values)
                .map(|(label, &value)| LabeledValue {
                    label: label.clone(),
                    value,
                })
                .collect()
        };
        ParamsDocument {
            prior: *prior,
            theta: entries(table.student_labels(), &self.theta),
            beta: entries(table.skill_labels(), &self.beta),
        }
    }

    /// Aligns a label-keyed document to `table`'s indices. Every student and
    /// skill of the table must be present; extra labels are ignored.
    pub fn from_document(doc: &ParamsDocument, table: &InteractionTable) -> Result<Self> {
        let mut params = ModelParams::filled(table.num_students(), table.num_skills(), f64::NAN);
        for e in &doc.theta {
            if let Some(i) = table.student_index(&e.label) {
                params.theta[i] = e.value;
            }
        }
        for e in &doc.beta {
            if let Some(k) = table.skill_index(&e.label) {
                params.beta[k] = e.value;
            }
        }
        if let Some(i) = params.theta.iter().position(|v| v.is_nan()) {
            return Err(Error::UnknownStudent(table.student_label(i).to_string()));
        }
        if let Some(k) = params.beta.iter().position(|v| v.is_nan()) {
            return Err(Error::UnknownSkill(table.skill_label(k).to_string()));
        }
        params.check_against(table)?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledValue {
    pub label: String,
    pub value: f64,
}

/// Serialized parameters: abilities and difficulties keyed by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub prior: PriorConfig,
    pub theta: Vec<LabeledValue>,
    pub beta: Vec<LabeledValue>,
}

impl ParamsDocument {
    /// `kind,label,value` rows, abilities first.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "label", "value"])?;
        for (kind, entries) in [("theta", &self.theta), ("beta", &self.beta)] {
            for e in entries {
                w.write_record([kind, e.label.as_str(), &e.value.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Logistic function, stable for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(sigmoid(x))`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Probability that a student of ability `theta` answers a skill of
/// difficulty `beta` correctly.
pub fn predict_prob(theta: f64, beta: f64) -> Result<f64> {
    if !theta.is_finite() || !beta.is_finite() {
        return Err(Error::NonFinite(format!("predict_prob({theta}, {beta})")));
    }
    Ok(sigmoid(theta - beta))
}

/// Negative log-likelihood contribution of one response with logit `x`.
#[inline]
pub(crate) fn response_loss(x: f64, correct: bool) -> f64 {
    if correct {
        softplus(-x)
    } else {
        softplus(x)
    }
}

fn penalty(values: &[f64], variance: f64) -> f64 {
    let denom = 2.0 * variance;
    values.iter().fold(0.0, |acc, v| acc + v * v / denom)
}

fn check_inputs(params: &ModelParams, table: &InteractionTable) -> Result<()> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    params.check_against(table)
}

/// Negative log-likelihood term alone, in record order.
pub fn neg_log_likelihood(params: &ModelParams, table: &InteractionTable) -> Result<f64> {
    check_inputs(params, table)?;
    Ok(nll_unchecked(&params.theta, &params.beta, table))
}

fn nll_unchecked(theta: &[f64], beta: &[f64], table: &InteractionTable) -> f64 {
    table.records().iter().fold(0.0, |acc, r| {
        acc + response_loss(theta[r.student] - beta[r.skill], r.correct)
    })
}

pub fn neg_log_posterior(
    params: &ModelParams,
    table: &InteractionTable,
    prior: &PriorConfig,
) -> Result<f64> {
    check_inputs(params, table)?;
    Ok(objective_unchecked(
        &params.theta,
        &params.beta,
        table,
        prior,
    ))
}

fn objective_unchecked(
    theta: &[f64],
    beta: &[f64],
    table: &InteractionTable,
    prior: &PriorConfig,
) -> f64 {
    nll_unchecked(theta, beta, table)
        + penalty(theta, prior.theta_variance)
        + penalty(beta, prior.beta_variance)
}

/// Gradient of [`neg_log_posterior`] with respect to abilities and difficulties.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn gradient(
    params: &ModelParams,
    table: &InteractionTable,
    prior: &PriorConfig,
) -> Result<Gradient> {
    check_inputs(params, table)?;
    let mut grad = Gradient {
        theta: vec![0.0; params.theta.len()],
        beta: vec![0.0; params.beta.len()],
    };
    value_and_gradient(
        &params.theta,
        &params.beta,
        table,
        prior,
        &mut grad.theta,
        &mut grad.beta,
    );
    Ok(grad)
}

/// Objective and gradient in one pass. Output slices are overwritten.
/// The returned value is bit-identical to [`neg_log_posterior`].
pub(crate) fn value_and_gradient(
    theta: &[f64],
    beta: &[f64],
    table: &InteractionTable,
    prior: &PriorConfig,
    grad_theta: &mut [f64],
    grad_beta: &mut [f64],
) -> f64 {
    grad_theta.fill(0.0);
    grad_beta.fill(0.0);
    let mut nll = 0.0;
    for r in table.records() {
        let x = theta[r.student] - beta[r.skill];
        nll += response_loss(x, r.correct);
        // d loss / d x = p - y
        let residual = sigmoid(x) - if r.correct { 1.0 } else { 0.0 };
        grad_theta[r.student] += residual;
        grad_beta[r.skill] -= residual;
    }
    for (g, t) in grad_theta.iter_mut().zip(theta) {
        *g += t / prior.theta_variance;
    }
    for (g, b) in grad_beta.iter_mut().zip(beta) {
        *g += b / prior.beta_variance;
    }
    nll + penalty(theta, prior.theta_variance) + penalty(beta, prior.beta_variance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_table, ResponseRecord};

    fn table(rows: &[(&str, &str, bool)]) -> InteractionTable {
        let records: Vec<_> = rows
            .iter()
            .enumerate()
            .map(|(i, (s, k, c))| ResponseRecord {
                student: s.to_string(),
                skill: k.to_string(),
                correct: *c,
                order: i as u64,
            })
            .collect();
        build_table(&records).unwrap()
    }

    #[test]
    fn predict_prob_values() {
        assert_eq!(predict_prob(0.0, 0.0).unwrap(), 0.5);
        for t in [-40.0, -3.3, 0.0, 7.0, 800.0] {
            assert_eq!(predict_prob(t, t).unwrap(), 0.5);
        }
        // 1 / (1 + e^-2) = 0.8807970779778823
        assert!((predict_prob(2.0, 0.0).unwrap() - 0.880_797).abs() < 5e-7);
        assert!(predict_prob(f64::NAN, 0.0).is_err());
        assert!(predict_prob(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn predict_prob_extremes_stay_in_unit_interval() {
        let lo = predict_prob(-800.0, 0.0).unwrap();
        let hi = predict_prob(800.0, 0.0).unwrap();
        assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        assert!(log_sigmoid(-800.0).is_finite());
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
    }

    #[test]
    fn objective_single_record() {
        let t = table(&[("s", "k", true)]);
        let prior = PriorConfig::default();
        let f = neg_log_posterior(&ModelParams::zeros(1, 1), &t, &prior).unwrap();
        assert!((f - std::f64::consts::LN_2).abs() < 1e-12);

        let params = ModelParams {
            theta: vec![2.0],
            beta: vec![0.0],
        };
        // ln(1 + e^-2) = 0.12692801104297263, plus 4 / 200
        let f = neg_log_posterior(&params, &t, &prior).unwrap();
        assert!((f - 0.146_928).abs() < 1e-6);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let t = table(&[("s", "k", true)]);
        let prior = PriorConfig::default();
        let bad = ModelParams::zeros(2, 1);
        assert!(matches!(
            neg_log_posterior(&bad, &t, &prior),
            Err(Error::SizeMismatch { what: "theta", .. })
        ));
        assert!(gradient(&bad, &t, &prior).is_err());
    }

    #[test]
    fn gradient_single_record() {
        let t = table(&[("s", "k", true)]);
        let g = gradient(&ModelParams::zeros(1, 1), &t, &PriorConfig::default()).unwrap();
        assert_eq!(g.theta, vec![-0.5]);
        assert_eq!(g.beta, vec![0.5]);
    }

    #[test]
    fn balanced_table_has_zero_gradient_at_origin() {
        let t = table(&[
            ("a", "x", true),
            ("a", "x", false),
            ("a", "y", true),
            ("a", "y", false),
            ("b", "x", false),
            ("b", "y", true),
            ("b", "x", true),
            ("b", "y", false),
        ]);
        let g = gradient(&ModelParams::for_table(&t), &t, &PriorConfig::default()).unwrap();
        assert!(g.theta.iter().chain(&g.beta).all(|&v| v == 0.0));
    }

    #[test]
    fn value_and_gradient_matches_objective_bitwise() {
        let t = table(&[("a", "x", true), ("b", "x", false), ("a", "y", false)]);
        let params = ModelParams {
            theta: vec![0.3, -1.7],
            beta: vec![2.2, -0.4],
        };
        let prior = PriorConfig::new(3.0).unwrap();
        let f = neg_log_posterior(&params, &t, &prior).unwrap();
        let mut gt = vec![0.0; 2];
        let mut gb = vec![0.0; 2];
        let f2 = value_and_gradient(&params.theta, &params.beta, &t, &prior, &mut gt, &mut gb);
        assert_eq!(f.to_bits(), f2.to_bits());
    }

    #[test]
    fn prior_rejects_non_positive_variance() {
        assert!(PriorConfig::new(0.0).is_err());
        assert!(PriorConfig::new(-1.0).is_err());
        assert!(PriorConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn document_round_trip() {
        let t = table(&[("a", "x", true), ("b", "y", false)]);
        let params = ModelParams {
            theta: vec![1.5, -2.0],
            beta: vec![0.25, 3.0],
        };
        let doc = params.to_document(&t, &PriorConfig::default());
        let json = serde_json::to_string(&doc).unwrap();
        let back: ParamsDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(ModelParams::from_document(&back, &t).unwrap(), params);

        let other = table(&[("a", "x", true), ("c", "y", false)]);
        assert!(matches!(
            ModelParams::from_document(&back, &other),
            Err(Error::UnknownStudent(s)) if s == "c"
        ));
    }
}

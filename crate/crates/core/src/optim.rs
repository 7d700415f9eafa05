//! Limited-memory BFGS for smooth unconstrained minimization.
//!
//! Search directions come from the standard two-loop recursion with the
//! `s'y / y'y` initial Hessian scaling. Step lengths satisfy the strong Wolfe
//! conditions (`c1 = 1e-4`, `c2 = 0.9`) via bracketing followed by a
//! safeguarded cubic-interpolation zoom. Correction pairs with non-positive
//! curvature are skipped, so the implicit inverse Hessian stays positive
//! definite and every accepted step strictly decreases the objective.
//!
//! Termination, checked after each accepted step:
//!
//! - `GradientTol`: `max_i |g_i| <= gradient_tolerance`
//! - `ObjectiveTol`: `(f_prev - f) / max(|f_prev|, |f|, 1) <= objective_relative_tolerance`,
//!   or the line search can no longer resolve a decrease above rounding noise
//! - `MaxIter`: `max_iterations` accepted steps taken

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A differentiable objective over `R^dim`.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Returns `f(x)` and writes `grad f(x)` into `grad`.
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsSettings {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub objective_relative_tolerance: f64,
    pub history_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTol,
    ObjectiveTol,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("objective is not finite at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("line search failed at iteration {iteration}")]
    LineSearch { iteration: usize },
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective at the start point and after every accepted step.
    pub trace: Vec<f64>,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_BRACKET_STEPS: usize = 40;
const MAX_ZOOM_STEPS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// `-H g` by the two-loop recursion.
fn search_direction(grad: &[f64], history: &VecDeque<Pair>) -> Vec<f64> {
    let mut q: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut alpha = vec![0.0; history.len()];
    for (i, pair) in history.iter().enumerate().rev() {
        alpha[i] = pair.rho * dot(&pair.s, &q);
        for (qj, yj) in q.iter_mut().zip(&pair.y) {
            *qj -= alpha[i] * yj;
        }
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (i, pair) in history.iter().enumerate() {
        let b = pair.rho * dot(&pair.y, &q);
        for (qj, sj) in q.iter_mut().zip(&pair.s) {
            *qj += (alpha[i] - b) * sj;
        }
    }
    q
}

struct Trial {
    step: f64,
    value: f64,
    slope: f64,
}

enum Search {
    /// The step is the lowest-valued Armijo trial, held in `LineSearch::best`.
    Accepted,
    /// Expected decrease fell below rounding noise.
    Flat,
    Failed,
}

struct LineSearch<'a, O: Objective> {
    objective: &'a O,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    trial_x: Vec<f64>,
    trial_g: Vec<f64>,
    // Point/gradient of the best Armijo-satisfying trial seen so far.
    best: Option<(f64, f64, Vec<f64>, Vec<f64>)>,
    saw_finite: bool,
}

impl<'a, O: Objective> LineSearch<'a, O> {
    fn eval(&mut self, step: f64) -> Trial {
        for ((t, xi), di) in self.trial_x.iter_mut().zip(self.x).zip(self.dir) {
            *t = xi + step * di;
        }
        let value = self.objective.evaluate(&self.trial_x, &mut self.trial_g);
        let slope = dot(&self.trial_g, self.dir);
        if value.is_finite() {
            self.saw_finite = true;
        }
        if value.is_finite() && slope.is_finite() && self.armijo(step, value) {
            let better = self.best.as_ref().is_none_or(|(_, v, _, _)| value < *v);
            if better {
                self.best = Some((step, value, self.trial_x.clone(), self.trial_g.clone()));
            }
        }
        if value.is_finite() && slope.is_finite() {
            Trial { step, value, slope }
        } else {
            Trial {
                step,
                value: f64::INFINITY,
                slope: f64::NAN,
            }
        }
    }

    fn armijo(&self, step: f64, value: f64) -> bool {
        value <= self.f0 + C1 * step * self.slope0 && value < self.f0
    }

    fn curvature_ok(&self, slope: f64) -> bool {
        slope.abs() <= -C2 * self.slope0
    }

    fn run(&mut self, initial_step: f64) -> Search {
        let mut prev = Trial {
            step: 0.0,
            value: self.f0,
            slope: self.slope0,
        };
        let mut step = initial_step;
        for i in 0..MAX_BRACKET_STEPS {
            let cur = self.eval(step);
            if !self.armijo(cur.step, cur.value) || (i > 0 && cur.value >= prev.value) {
                return self.zoom(prev, cur);
            }
            if self.curvature_ok(cur.slope) {
                return Search::Accepted;
            }
            if cur.slope >= 0.0 {
                return self.zoom(cur, prev);
            }
            step = cur.step * 4.0;
            prev = cur;
        }
        self.fallback()
    }

    fn zoom(&mut self, mut lo: Trial, mut hi: Trial) -> Search {
        for _ in 0..MAX_ZOOM_STEPS {
            let width = (hi.step - lo.step).abs();
            if width <= f64::EPSILON * lo.step.abs().max(hi.step.abs()) {
                break;
            }
            let step = interpolate(&lo, &hi);
            let cur = self.eval(step);
            if !self.armijo(cur.step, cur.value) || cur.value >= lo.value {
                hi = cur;
            } else {
                if self.curvature_ok(cur.slope) {
                    return Search::Accepted;
                }
                if cur.slope * (hi.step - lo.step) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
        self.fallback()
    }

    fn fallback(&mut self) -> Search {
        if self.best.is_some() {
            return Search::Accepted;
        }
        // A unit step along the quasi-Newton direction predicts a decrease of
        // |slope0|; below this floor it cannot be told apart from rounding.
        if self.slope0.abs() <= 1e4 * f64::EPSILON * self.f0.abs().max(1.0) {
            Search::Flat
        } else {
            Search::Failed
        }
    }
}

/// Safeguarded cubic-interpolation minimizer inside the bracket; falls back to
/// bisection when the cubic is unusable.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.step, hi.step);
    let mid = 0.5 * (a + b);
    if !hi.value.is_finite() || !hi.slope.is_finite() {
        return mid;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = hi.slope - lo.slope + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let t = b - (b - a) * (hi.slope + d2 - d1) / denom;
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if t.is_finite() && t > left + margin && t < right - margin {
        t
    } else {
        mid
    }
}

/// Minimizes `objective` from `x0`.
pub fn minimize<O: Objective>(
    objective: &O,
    x0: Vec<f64>,
    settings: &LbfgsSettings,
) -> Result<Minimum, OptimError> {
    let n = objective.dim();
    assert_eq!(x0.len(), n, "start point has wrong dimension");
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut value = objective.evaluate(&x, &mut grad);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(OptimError::NonFinite { iteration: 0 });
    }
    let mut trace = vec![value];
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(settings.history_size);

    if inf_norm(&grad) <= settings.gradient_tolerance {
        return Ok(Minimum {
            x,
            value,
            gradient: grad,
            iterations: 0,
            termination: Termination::GradientTol,
            trace,
        });
    }

    let mut iteration = 0;
    while iteration < settings.max_iterations {
        let mut dir = search_direction(&grad, &history);
        let mut slope = dot(&dir, &grad);
        if slope.is_nan() || slope >= 0.0 {
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&dir, &grad);
        }
        let initial_step = if history.is_empty() {
            (1.0 / inf_norm(&grad)).min(1.0)
        } else {
            1.0
        };

        let mut search = LineSearch {
            objective,
            x: &x,
            dir: &dir,
            f0: value,
            slope0: slope,
            trial_x: vec![0.0; n],
            trial_g: vec![0.0; n],
            best: None,
            saw_finite: false,
        };
        let outcome = search.run(initial_step);
        let (step, new_value, new_x, new_grad) = match outcome {
            Search::Accepted => search.best.take().expect("accepted step is recorded"),
            Search::Flat => {
                return Ok(Minimum {
                    x,
                    value,
                    gradient: grad,
                    iterations: iteration,
                    termination: Termination::ObjectiveTol,
                    trace,
                });
            }
            Search::Failed if !history.is_empty() => {
                log::debug!("line search failed at iteration {iteration}; resetting memory");
                history.clear();
                continue;
            }
            Search::Failed => {
                let iteration = iteration + 1;
                return Err(if search.saw_finite {
                    OptimError::LineSearch { iteration }
                } else {
                    OptimError::NonFinite { iteration }
                });
            }
        };
        iteration += 1;

        let s: Vec<f64> = dir.iter().map(|d| step * d).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == settings.history_size {
                history.pop_front();
            }
            history.push_back(Pair {
                s,
                y,
                rho: 1.0 / sy,
            });
        }

        let decrease = (value - new_value) / value.abs().max(new_value.abs()).max(1.0);
        x = new_x;
        grad = new_grad;
        value = new_value;
        trace.push(value);

        let termination = if inf_norm(&grad) <= settings.gradient_tolerance {
            Some(Termination::GradientTol)
        } else if decrease <= settings.objective_relative_tolerance {
            Some(Termination::ObjectiveTol)
        } else {
            None
        };
        if let Some(termination) = termination {
            return Ok(Minimum {
                x,
                value,
                gradient: grad,
                iterations: iteration,
                termination,
                trace,
            });
        }
    }

    Ok(Minimum {
        x,
        value,
        gradient: grad,
        iterations: iteration,
        termination: Termination::MaxIter,
        trace,
    })
}

//! Synthetic response tables drawn from known abilities and difficulties.
//!
//! Draw order for a given seed (all from one [`SeededRng`]):
//!
//! 1. abilities, student by student, from the ability Gaussian;
//! 2. difficulties, skill by skill, from the difficulty Gaussian;
//! 3. the number of attempts of each student (when a range is given);
//! 4. one skill per attempt, uniform or by popularity weights, redrawn as a
//!    whole until every skill is used at least once;
//! 5. one outcome per attempt: correct iff `unit_f64() < P(correct)`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{build_table, InteractionTable, ResponseRecord};
use crate::model::{sigmoid, ModelParams};
use crate::rng::SeededRng;

const MAX_ASSIGNMENT_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    pub const STANDARD: Gaussian = Gaussian { mean: 0.0, sd: 1.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponsesPerStudent {
    Fixed(usize),
    /// Uniform on `min..=max`.
    Range {
        min: usize,
        max: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_students: usize,
    pub num_skills: usize,
    pub responses_per_student: ResponsesPerStudent,
    pub theta: Gaussian,
    pub beta: Gaussian,
    /// Relative skill popularity; uniform when `None`.
    pub skill_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl SynthSpec {
    /// Standard-normal abilities and difficulties, fixed attempts per student.
    pub fn new(num_students: usize, num_skills: usize, per_student: usize, seed: u64) -> Self {
        Self {
            num_students,
            num_skills,
            responses_per_student: ResponsesPerStudent::Fixed(per_student),
            theta: Gaussian::STANDARD,
            beta: Gaussian::STANDARD,
            skill_weights: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_students < 1 || self.num_skills < 1 {
            return Err(Error::InvalidArgument(
                "synthetic data needs at least one student and one skill".into(),
            ));
        }
        match self.responses_per_student {
            ResponsesPerStudent::Fixed(n) if n >= 1 => {}
            ResponsesPerStudent::Range { min, max } if min >= 1 && min <= max => {}
            other => {
                return Err(Error::InvalidArgument(format!(
                    "invalid responses per student {other:?}"
                )))
            }
        }
        for g in [self.theta, self.beta] {
            if !(g.mean.is_finite() && g.sd.is_finite() && g.sd >= 0.0) {
                return Err(Error::InvalidArgument(format!("invalid Gaussian {g:?}")));
            }
        }
        if let Some(w) = &self.skill_weights {
            if w.len() != self.num_skills {
                return Err(Error::SizeMismatch {
                    what: "skill weights",
                    expected: self.num_skills,
                    found: w.len(),
                });
            }
            if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidArgument(
                    "skill weights must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A generated table with the parameters that produced it, indexed like the
/// table (first-appearance order).
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub table: InteractionTable,
    pub truth: ModelParams,
}

fn label(prefix: &str, i: usize, total: usize) -> String {
    let width = total.saturating_sub(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

fn draw_skill(rng: &mut SeededRng, num_skills: usize, cumulative: Option<&[f64]>) -> usize {
    match cumulative {
        None => rng.uniform_below(num_skills as u64) as usize,
        Some(cum) => {
            let u = rng.unit_f64() * cum[cum.len() - 1];
            cum.partition_point(|&c| c <= u).min(num_skills - 1)
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let normal = |g: Gaussian| Normal::new(g.mean, g.sd).expect("validated Gaussian");

    let theta_dist = normal(spec.theta);
    let theta: Vec<f64> = (0..spec.num_students)
        .map(|_| theta_dist.sample(&mut rng))
        .collect();
    let beta_dist = normal(spec.beta);
    let beta: Vec<f64> = (0..spec.num_skills)
        .map(|_| beta_dist.sample(&mut rng))
        .collect();

    let counts: Vec<usize> = (0..spec.num_students)
        .map(|_| match spec.responses_per_student {
            ResponsesPerStudent::Fixed(n) => n,
            ResponsesPerStudent::Range { min, max } => {
                min + rng.uniform_below((max - min + 1) as u64) as usize
            }
        })
        .collect();
    let total: usize = counts.iter().sum();
    if spec.num_skills > total {
        return Err(Error::InvalidArgument(format!(
            "{} skills cannot all appear in {total} attempts",
            spec.num_skills
        )));
    }

    let cumulative: Option<Vec<f64>> = spec.skill_weights.as_ref().map(|w| {
        w.iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    });
    let mut assignment = vec![0usize; total];
    let mut covered = false;
    for _ in 0..MAX_ASSIGNMENT_DRAWS {
        let mut seen = vec![false; spec.num_skills];
        for slot in assignment.iter_mut() {
            *slot = draw_skill(&mut rng, spec.num_skills, cumulative.as_deref());
            seen[*slot] = true;
        }
        if seen.iter().all(|&s| s) {
            covered = true;
            break;
        }
    }
    if !covered {
        return Err(Error::InvalidArgument(format!(
            "no skill assignment covering all skills after {MAX_ASSIGNMENT_DRAWS} draws"
        )));
    }

    let student_labels: Vec<String> = (0..spec.num_students)
        .map(|s| label("student_", s, spec.num_students))
        .collect();
    let skill_labels: Vec<String> = (0..spec.num_skills)
        .map(|k| label("skill_", k, spec.num_skills))
        .collect();
    let mut records = Vec::with_capacity(total);
    let mut attempt = 0usize;
    for (s, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let k = assignment[attempt];
            let p = sigmoid(theta[s] - beta[k]);
            records.push(ResponseRecord {
                student: student_labels[s].clone(),
                skill: skill_labels[k].clone(),
                correct: rng.unit_f64() < p,
                order: attempt as u64,
            });
            attempt += 1;
        }
    }
    let table = build_table(&records)?;

    let mut truth = ModelParams::zeros(table.num_students(), table.num_skills());
    for (s, label) in student_labels.iter().enumerate() {
        let i = table
            .student_index(label)
            .expect("every student has an attempt");
        truth.theta[i] = theta[s];
    }
    for (k, label) in skill_labels.iter().enumerate() {
        let i = table.skill_index(label).expect("coverage checked");
        truth.beta[i] = beta[k];
    }
    Ok(SyntheticData { table, truth })
}

/// Pearson correlation coefficient. `NaN` when either side has no spread.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

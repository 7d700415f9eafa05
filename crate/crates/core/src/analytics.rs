//! Descriptive reports over fitted parameters: cohort summaries, skill
//! rankings, relative mastery, and plot-ready series.
//!
//! Everything here is a read-only function of fitted [`ModelParams`] and the
//! [`InteractionTable`] they were fitted on.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::InteractionTable;
use crate::model::{sigmoid, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub std_dev: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
}

/// Percentile of sorted data by linear interpolation between the closest
/// order statistics: position `h = (n - 1) q`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn describe(values: &[f64]) -> Descriptive {
    if values.is_empty() {
        return Descriptive {
            count: 0,
            mean: f64::NAN,
            std_dev: f64::NAN,
            p25: f64::NAN,
            median: f64::NAN,
            p75: f64::NAN,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_dev = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Descriptive {
        count: values.len(),
        mean,
        std_dev,
        p25: percentile(&sorted, 0.25),
        median: percentile(&sorted, 0.5),
        p75: percentile(&sorted, 0.75),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub theta: Descriptive,
    pub beta: Descriptive,
}

impl CohortSummary {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "parameter",
            "count",
            "mean",
            "std_dev",
            "p25",
            "median",
            "p75",
        ])?;
        for (name, d) in [("theta", &self.theta), ("beta", &self.beta)] {
            w.write_record([
                name.to_string(),
                d.count.to_string(),
                d.mean.to_string(),
                d.std_dev.to_string(),
                d.p25.to_string(),
                d.median.to_string(),
                d.p75.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn cohort_summary(params: &ModelParams) -> CohortSummary {
    CohortSummary {
        theta: describe(&params.theta),
        beta: describe(&params.beta),
    }
}

/// Mean ability minus mean difficulty, in logits.
pub fn relative_mastery(summary: &CohortSummary) -> f64 {
    summary.theta.mean - summary.beta.mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSkill {
    pub skill: String,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRanking {
    /// Ascending difficulty from the global minimum.
    pub easiest: Vec<RankedSkill>,
    /// Descending difficulty from the global maximum.
    pub hardest: Vec<RankedSkill>,
}

impl SkillRanking {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["list", "rank", "skill", "beta"])?;
        for (name, list) in [("easiest", &self.easiest), ("hardest", &self.hardest)] {
            for (rank, s) in list.iter().enumerate() {
                w.write_record([name, &(rank + 1).to_string(), &s.skill, &s.beta.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// The `k` easiest and `k` hardest skills. Equal difficulties are ordered by
/// label (lexicographic, ascending) in both lists.
pub fn rank_skills(
    params: &ModelParams,
    table: &InteractionTable,
    k: usize,
) -> Result<SkillRanking> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k > params.beta.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of skills ({})",
            params.beta.len()
        )));
    }
    let mut idx: Vec<usize> = (0..params.beta.len()).collect();
    let by_label = |a: &usize, b: &usize| table.skill_label(*a).cmp(table.skill_label(*b));
    let take = |idx: &[usize]| {
        idx.iter()
            .take(k)
            .map(|&i| RankedSkill {
                skill: table.skill_label(i).to_string(),
                beta: params.beta[i],
            })
            .collect()
    };
    idx.sort_by(|a, b| {
        params.beta[*a]
            .total_cmp(&params.beta[*b])
            .then_with(|| by_label(a, b))
    });
    let easiest = take(&idx);
    idx.sort_by(|a, b| {
        params.beta[*b]
            .total_cmp(&params.beta[*a])
            .then_with(|| by_label(a, b))
    });
    let hardest = take(&idx);
    Ok(SkillRanking { easiest, hardest })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Fraction of values per bin; sums to 1.
    pub proportions: Vec<f64>,
}

impl Histogram {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_index", "left", "right", "count", "proportion"])?;
        for (i, (&count, &prop)) in self.counts.iter().zip(&self.proportions).enumerate() {
            w.write_record([
                i.to_string(),
                self.edges[i].to_string(),
                self.edges[i + 1].to_string(),
                count.to_string(),
                prop.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Equal-width histogram over `[min, max]` with proportions as heights.
///
/// When every value is equal the result is a single bin of width 1 centred on
/// that value.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 1 {
        return Err(Error::InvalidArgument("bins must be at least 1".into()));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("histogram of no values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("histogram input".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = values.len() as f64;
    if min == max {
        return Ok(Histogram {
            edges: vec![min - 0.5, min + 0.5],
            counts: vec![values.len()],
            proportions: vec![1.0],
        });
    }
    let span = max - min;
    let mut edges: Vec<f64> = (0..bins)
        .map(|i| min + span * i as f64 / bins as f64)
        .collect();
    edges.push(max);
    let mut counts = vec![0usize; bins];
    for &v in values {
        let pos = ((v - min) / span * bins as f64).floor() as usize;
        counts[pos.min(bins - 1)] += 1;
    }
    let proportions = counts.iter().map(|&c| c as f64 / n).collect();
    Ok(Histogram {
        edges,
        counts,
        proportions,
    })
}

/// Histogram of fitted abilities (30 bins in the standard report).
pub fn ability_histogram(params: &ModelParams, bins: usize) -> Result<Histogram> {
    histogram(&params.theta, bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTrend {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares of `y` on `x`. `None` when `x` has no spread.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<LinearTrend> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some(LinearTrend {
        slope,
        intercept: my - slope * mx,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub label: String,
    pub log10_attempts: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterSeries {
    pub points: Vec<ScatterPoint>,
    pub trend: Option<LinearTrend>,
}

impl ScatterSeries {
    fn build(labels: &[String], counts: &[usize], estimates: &[f64]) -> Self {
        let points: Vec<ScatterPoint> = labels
            .iter()
            .zip(counts)
            .zip(estimates)
            .map(|((label, &c), &e)| ScatterPoint {
                label: label.clone(),
                log10_attempts: (c as f64).log10(),
                estimate: e,
            })
            .collect();
        let xs: Vec<f64> = points.iter().map(|p| p.log10_attempts).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.estimate).collect();
        Self {
            trend: least_squares(&xs, &ys),
            points,
        }
    }

    pub fn write_csv<W: Write>(
        &self,
        out: W,
        label_column: &str,
        estimate_column: &str,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([label_column, "log10_attempts", estimate_column])?;
        for p in &self.points {
            w.write_record([
                p.label.as_str(),
                &p.log10_attempts.to_string(),
                &p.estimate.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One point per skill: (log10 attempts on that skill, difficulty).
pub fn difficulty_vs_practice(
    params: &ModelParams,
    table: &InteractionTable,
) -> Result<ScatterSeries> {
    params.check_against(table)?;
    Ok(ScatterSeries::build(
        table.skill_labels(),
        table.attempts_per_skill(),
        &params.beta,
    ))
}

/// One point per student: (log10 attempts by that student, ability).
pub fn ability_vs_attempts(
    params: &ModelParams,
    table: &InteractionTable,
) -> Result<ScatterSeries> {
    params.check_against(table)?;
    Ok(ScatterSeries::build(
        table.student_labels(),
        table.attempts_per_student(),
        &params.theta,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillComparison {
    pub skill: String,
    pub count: usize,
    pub observed: f64,
    pub predicted: f64,
}

/// Observed fraction correct vs mean fitted probability over each named
/// skill's records.
pub fn skill_observed_vs_predicted(
    params: &ModelParams,
    table: &InteractionTable,
    skills: &[&str],
) -> Result<Vec<SkillComparison>> {
    params.check_against(table)?;
    let indices = skills
        .iter()
        .map(|s| {
            table
                .skill_index(s)
                .ok_or_else(|| Error::UnknownSkill(s.to_string()))
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut hits = vec![0usize; table.num_skills()];
    let mut prob_sum = vec![0.0; table.num_skills()];
    for r in table.records() {
        hits[r.skill] += usize::from(r.correct);
        prob_sum[r.skill] += sigmoid(params.theta[r.student] - params.beta[r.skill]);
    }
    Ok(indices
        .into_iter()
        .map(|k| {
            let count = table.attempts_per_skill()[k];
            SkillComparison {
                skill: table.skill_label(k).to_string(),
                count,
                observed: hits[k] as f64 / count as f64,
                predicted: prob_sum[k] / count as f64,
            }
        })
        .collect())
}

/// Writes easiest/hardest comparisons as `group,skill,count,observed,predicted`.
pub fn write_extremes_csv<W: Write>(
    easiest: &[SkillComparison],
    hardest: &[SkillComparison],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "skill", "count", "observed", "predicted"])?;
    for (group, list) in [("easiest", easiest), ("hardest", hardest)] {
        for c in list {
            w.write_record([
                group,
                c.skill.as_str(),
                &c.count.to_string(),
                &c.observed.to_string(),
                &c.predicted.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentSelector {
    Label(String),
    /// Minimum ability; ties go to the first-interned student.
    Lowest,
    /// Maximum ability; ties go to the first-interned student.
    Highest,
}

impl std::str::FromStr for StudentSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lowest" => StudentSelector::Lowest,
            "highest" => StudentSelector::Highest,
            "" => return Err(Error::InvalidArgument("empty student selector".into())),
            other => StudentSelector::Label(other.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub attempt_index: usize,
    pub order: u64,
    pub skill: String,
    pub predicted: f64,
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub student: String,
    pub theta: f64,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "student",
            "attempt_index",
            "order",
            "skill",
            "predicted",
            "observed",
        ])?;
        for p in &self.points {
            w.write_record([
                self.student.as_str(),
                &p.attempt_index.to_string(),
                &p.order.to_string(),
                p.skill.as_str(),
                &p.predicted.to_string(),
                if p.observed { "1" } else { "0" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn extreme_index(values: &[f64], want: Ordering) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if v.total_cmp(&values[best]) == want {
            best = i;
        }
    }
    best
}

/// Fitted success probability on each of one student's attempts, in table
/// order. The model is static, so the sequence varies only with skill.
pub fn student_trajectory(
    params: &ModelParams,
    table: &InteractionTable,
    selector: &StudentSelector,
) -> Result<Trajectory> {
    params.check_against(table)?;
    let student = match selector {
        StudentSelector::Label(label) => table
            .student_index(label)
            .ok_or_else(|| Error::UnknownStudent(label.clone()))?,
        StudentSelector::Lowest => extreme_index(&params.theta, Ordering::Less),
        StudentSelector::Highest => extreme_index(&params.theta, Ordering::Greater),
    };
    let theta = params.theta[student];
    let points = table
        .records()
        .iter()
        .filter(|r| r.student == student)
        .enumerate()
        .map(|(attempt_index, r)| TrajectoryPoint {
            attempt_index,
            order: r.order,
            skill: table.skill_label(r.skill).to_string(),
            predicted: sigmoid(theta - params.beta[r.skill]),
            observed: r.correct,
        })
        .collect();
    Ok(Trajectory {
        student: table.student_label(student).to_string(),
        theta,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_table, ResponseRecord};
    use crate::model::predict_prob;

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
    fn describe_basic() {
        let d = describe(&[1.0, 2.0, 3.0]);
        assert_eq!(d.mean, 2.0);
        assert_eq!(d.median, 2.0);
        assert_eq!(d.p25, 1.5);
        assert_eq!(d.p75, 2.5);
        assert_eq!(d.std_dev, 1.0);

        let d = describe(&[4.2; 7]);
        assert_eq!(d.std_dev, 0.0);
        assert!(d.p25 == 4.2 && d.median == 4.2 && d.p75 == 4.2);
    }

    #[test]
    fn relative_mastery_values() {
        let s = |t: f64, b: f64| CohortSummary {
            theta: describe(&[t]),
            beta: describe(&[b]),
        };
        assert_eq!(relative_mastery(&s(0.0, 0.0)), 0.0);
        assert_eq!(relative_mastery(&s(1.0, 1.0)), 0.0);
        assert!((relative_mastery(&s(0.09, -2.40)) - 2.49).abs() < 1e-12);
    }

    #[test]
    fn rank_skills_extremes_and_ties() {
        let t = table(&[("a", "mid", true), ("a", "lo", true), ("a", "hi", false)]);
        let params = ModelParams {
            theta: vec![0.0],
            beta: vec![0.0, -1.0, 1.0],
        };
        let r = rank_skills(&params, &t, 1).unwrap();
        assert_eq!(r.easiest[0].skill, "lo");
        assert_eq!(r.hardest[0].skill, "hi");

        let flat = ModelParams {
            theta: vec![0.0],
            beta: vec![0.3; 3],
        };
        let r = rank_skills(&flat, &t, 1).unwrap();
        assert_eq!(r.easiest[0].skill, "hi");
        assert_eq!(r.hardest[0].skill, "hi");

        assert!(rank_skills(&params, &t, 0).is_err());
        assert!(rank_skills(&params, &t, 4).is_err());
    }

    #[test]
    fn histogram_cases() {
        let h = histogram(&[3.0], 30).unwrap();
        assert_eq!(h.proportions, vec![1.0]);
        assert_eq!(h.edges, vec![2.5, 3.5]);

        let grid: Vec<f64> = (0..30).map(f64::from).collect();
        let h = histogram(&grid, 30).unwrap();
        assert_eq!(h.counts, vec![1; 30]);
        assert!(h.proportions.iter().all(|&p| p == 1.0 / 30.0));
        assert_eq!(*h.edges.last().unwrap(), 29.0);

        assert!(histogram(&grid, 0).is_err());
    }

    #[test]
    fn scatter_series() {
        let mut rows = vec![("a", "k1", true); 100];
        rows.extend(vec![("b", "k2", false); 10]);
        let t = table(&rows);
        let params = ModelParams {
            theta: vec![1.0, -1.0],
            beta: vec![0.5, 0.5],
        };
        let fig2 = difficulty_vs_practice(&params, &t).unwrap();
        assert_eq!(fig2.points[0].log10_attempts, 2.0);
        assert_eq!(fig2.trend.unwrap().slope, 0.0);
        let fig3 = ability_vs_attempts(&params, &t).unwrap();
        assert_eq!(fig3.points.len(), t.num_students());
        assert_eq!(fig3.points[1].log10_attempts, 1.0);
    }

    #[test]
    fn least_squares_line() {
        let fit = least_squares(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12 && (fit.intercept - 1.0).abs() < 1e-12);
        assert!(least_squares(&[1.0, 1.0], &[0.0, 2.0]).is_none());
    }

    #[test]
    fn skill_comparison_single_record() {
        let t = table(&[("a", "k", true)]);
        // sigmoid(ln 9) = 0.9
        let params = ModelParams {
            theta: vec![9f64.ln()],
            beta: vec![0.0],
        };
        let c = skill_observed_vs_predicted(&params, &t, &["k"]).unwrap();
        assert_eq!(c[0].observed, 1.0);
        assert!((c[0].predicted - 0.9).abs() < 1e-12);
        assert!(matches!(
            skill_observed_vs_predicted(&params, &t, &["nope"]),
            Err(Error::UnknownSkill(_))
        ));
    }

    #[test]
    fn trajectory_selection() {
        let t = table(&[
            ("a", "x", true),
            ("b", "x", false),
            ("a", "y", false),
            ("b", "x", true),
            ("c", "y", true),
        ]);
        let params = ModelParams {
            theta: vec![0.5, -2.0, 3.0],
            beta: vec![0.1, -0.7],
        };
        let low = student_trajectory(&params, &t, &StudentSelector::Lowest).unwrap();
        assert_eq!(low.student, "b");
        assert_eq!(low.points.len(), t.attempts_per_student()[1]);
        // Single skill: constant probability.
        assert_eq!(low.points[0].predicted, low.points[1].predicted);
        assert_eq!(low.points[0].predicted, predict_prob(-2.0, 0.1).unwrap());

        let high = student_trajectory(&params, &t, &StudentSelector::Highest).unwrap();
        assert_eq!(high.student, "c");
        let a = student_trajectory(&params, &t, &"a".parse().unwrap()).unwrap();
        assert_eq!(
            a.points.iter().map(|p| p.order).collect::<Vec<_>>(),
            vec![0, 2]
        );
        assert!(student_trajectory(&params, &t, &StudentSelector::Label("z".into())).is_err());
    }
}

//! Discrimination, accuracy and calibration metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logs in [`log_loss`].
pub const LOG_LOSS_EPSILON: f64 = 1e-12;

fn check_lengths(labels: usize, values: usize) -> Result<()> {
    if labels != values {
        return Err(Error::SizeMismatch {
            what: "labels vs predictions",
            expected: labels,
            found: values,
        });
    }
    Ok(())
}

/// Area under the ROC curve, i.e. the Mann-Whitney probability that a positive
/// outscores a negative, ties counting one half.
///
/// Computed from the rank sum of the positives with mid-ranks for tied scores:
/// `U = R_pos - n_pos (n_pos + 1) / 2`, `AUC = U / (n_pos n_neg)`. All
/// intermediate quantities are exact in `f64` for realistic sizes.
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_lengths(labels.len(), scores.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share the mid-rank (i + 1 + j) / 2.
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        let positives = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += mid_rank * positives as f64;
        i = j;
    }
    let n_pos_f = n_pos as f64;
    let u = rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0;
    Ok(u / (n_pos_f * n_neg as f64))
}

/// Mean binary cross-entropy with `p` clamped to `[1e-12, 1 - 1e-12]`.
pub fn log_loss(labels: &[bool], probs: &[f64]) -> Result<f64> {
    check_lengths(labels.len(), probs.len())?;
    if labels.is_empty() {
        return Err(Error::InvalidArgument("log_loss of an empty sample".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    let total = labels.iter().zip(probs).fold(0.0, |acc, (&y, &p)| {
        let p = p.clamp(LOG_LOSS_EPSILON, 1.0 - LOG_LOSS_EPSILON);
        acc - if y { p.ln() } else { (1.0 - p).ln() }
    });
    Ok(total / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub bin_index: usize,
    pub count: usize,
    pub mean_predicted: f64,
    pub observed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationTable {
    pub fn max_abs_gap(&self) -> f64 {
        self.bins
            .iter()
            .map(|b| (b.observed_fraction - b.mean_predicted).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for b in &self.bins {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Equal-count calibration bins.
///
/// Records are stably sorted by predicted probability and cut into `num_bins`
/// contiguous groups; the first `n % num_bins` groups hold one extra record.
pub fn calibration(labels: &[bool], probs: &[f64], num_bins: usize) -> Result<CalibrationTable> {
    if num_bins < 1 {
        return Err(Error::InvalidArgument("num_bins must be at least 1".into()));
    }
    check_lengths(labels.len(), probs.len())?;
    if labels.len() < num_bins {
        return Err(Error::InvalidArgument(format!(
            "{} records cannot fill {num_bins} bins",
            labels.len()
        )));
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::NonFinite("NaN probability".into()));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));

    let base = labels.len() / num_bins;
    let extra = labels.len() % num_bins;
    let mut bins = Vec::with_capacity(num_bins);
    let mut start = 0;
    for bin_index in 0..num_bins {
        let count = base + usize::from(bin_index < extra);
        let members = &order[start..start + count];
        start += count;
        let sum_p = members.iter().fold(0.0, |acc, &i| acc + probs[i]);
        let hits = members.iter().filter(|&&i| labels[i]).count();
        bins.push(CalibrationBin {
            bin_index,
            count,
            mean_predicted: sum_p / count as f64,
            observed_fraction: hits as f64 / count as f64,
        });
    }
    Ok(CalibrationTable { bins })
}

//! ROC/AUC and Kolmogorov-Smirnov discrimination measures.
//!
//! Both are rank statistics: any strictly increasing transform of the scores
//! leaves them unchanged. Equal scores form a single threshold step.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("both classes are required, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("score {0} is not finite")]
    NonFinite(f64),
    #[error("labels and scores differ in length ({0} vs {1})")]
    Length(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    /// 1 = default (bad).
    pub label: u8,
}

pub fn scored(scores: &[f64], labels: &[u8]) -> Result<Vec<ScoredSample>, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::Length(scores.len(), labels.len()));
    }
    Ok(scores
        .iter()
        .zip(labels)
        .map(|(&score, &label)| ScoredSample { score, label })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub curve: Vec<(f64, f64)>,
    pub auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsPoint {
    /// Samples scoring at or above the threshold are counted.
    pub threshold: f64,
    /// Cumulative share of defaults.
    pub cp1: f64,
    /// Cumulative share of non-defaults.
    pub cp0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub curve: Vec<KsPoint>,
    pub statistic: f64,
    pub argmax_threshold: f64,
}

fn class_counts(samples: &[ScoredSample]) -> Result<(usize, usize), MetricsError> {
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(MetricsError::NonFinite(s.score));
    }
    let positives = samples.iter().filter(|s| s.label == 1).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass {
            positives,
            negatives,
        });
    }
    Ok((positives, negatives))
}

/// Groups of equal scores in descending order, as `(score, positives, negatives)`.
fn descending_groups(samples: &[ScoredSample]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for s in sorted {
        match groups.last_mut() {
            Some(g) if g.0 == s.score => {
                if s.label == 1 {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s.score, (s.label == 1) as usize, (s.label != 1) as usize)),
        }
    }
    groups
}

/// AUC as the Mann-Whitney statistic `P(s+ > s-) + P(s+ = s-) / 2`, via
/// average-rank summation.
pub fn roc_auc(samples: &[ScoredSample]) -> Result<RocResult, MetricsError> {
    let (pos, neg) = class_counts(samples)?;
    let groups = descending_groups(samples);

    // Ranks ascending: the lowest group holds ranks 1..=size.
    let mut rank_sum_pos = 0.0;
    let mut below = 0usize;
    for &(_, p, n) in groups.iter().rev() {
        let size = p + n;
        let mean_rank = below as f64 + (size as f64 + 1.0) / 2.0;
        rank_sum_pos += p as f64 * mean_rank;
        below += size;
    }
    let (pos_f, neg_f) = (pos as f64, neg as f64);
    let auc = (rank_sum_pos - pos_f * (pos_f + 1.0) / 2.0) / (pos_f * neg_f);

    let mut curve = Vec::with_capacity(groups.len() + 1);
    curve.push((0.0, 0.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, p, n) in &groups {
        tp += p;
        fp += n;
        curve.push((fp as f64 / neg_f, tp as f64 / pos_f));
    }
    Ok(RocResult { curve, auc })
}

/// `D_KS = max |cp1 - cp0|` over all score thresholds, scanning from the
/// riskiest score down. Ties in the gap resolve to the lowest threshold.
pub fn ks(samples: &[ScoredSample]) -> Result<KsResult, MetricsError> {
    let (pos, neg) = class_counts(samples)?;
    let groups = descending_groups(samples);
    let mut curve = Vec::with_capacity(groups.len() + 1);
    curve.push(KsPoint {
        threshold: f64::INFINITY,
        cp1: 0.0,
        cp0: 0.0,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut statistic = 0.0;
    let mut argmax_threshold = f64::INFINITY;
    for &(score, p, n) in &groups {
        tp += p;
        fp += n;
        let point = KsPoint {
            threshold: score,
            cp1: tp as f64 / pos as f64,
            cp0: fp as f64 / neg as f64,
        };
        let gap = (point.cp1 - point.cp0).abs();
        if gap >= statistic {
            statistic = gap;
            argmax_threshold = score;
        }
        curve.push(point);
    }
    Ok(KsResult {
        curve,
        statistic,
        argmax_threshold,
    })
}

/// Two-column `x y` text, one point per line.
pub fn format_xy(points: &[(f64, f64)], header: &str) -> String {
    let mut out = format!("# {header}\n");
    for (x, y) in points {
        let _ = writeln!(out, "{x} {y}");
    }
    out
}

/// KS curve as two `threshold cumulative-share` blocks (defaults, then
/// non-defaults) separated by a blank line.
pub fn format_ks(result: &KsResult) -> String {
    let mut out = format!(
        "# ks statistic {} at threshold {}\n# block 0: threshold cp1 (defaults)\n",
        result.statistic, result.argmax_threshold
    );
    for p in &result.curve {
        let _ = writeln!(out, "{} {}", p.threshold, p.cp1);
    }
    out.push_str("\n\n# block 1: threshold cp0 (non-defaults)\n");
    for p in &result.curve {
        let _ = writeln!(out, "{} {}", p.threshold, p.cp0);
    }
    out
}

pub fn write_roc(path: &Path, roc: &RocResult) -> io::Result<()> {
    std::fs::write(
        path,
        format_xy(&roc.curve, &format!("fpr tpr (auc {})", roc.auc)),
    )
}

pub fn write_ks(path: &Path, ks: &KsResult) -> io::Result<()> {
    std::fs::write(path, format_ks(ks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(pairs: &[(f64, u8)]) -> Vec<ScoredSample> {
        pairs
            .iter()
            .map(|&(score, label)| ScoredSample { score, label })
            .collect()
    }

    #[test]
    fn auc_cases() {
        let sep = s(&[(0.9, 1), (0.8, 1), (0.3, 0), (0.1, 0)]);
        assert_eq!(roc_auc(&sep).unwrap().auc, 1.0);
        let tied = s(&[(0.5, 1), (0.5, 0), (0.5, 1), (0.5, 0)]);
        assert_eq!(roc_auc(&tied).unwrap().auc, 0.5);
        let four = s(&[(0.9, 1), (0.8, 0), (0.7, 1), (0.1, 0)]);
        assert_eq!(roc_auc(&four).unwrap().auc, 0.75);
    }

    #[test]
    fn roc_curve_shape() {
        let four = s(&[(0.9, 1), (0.8, 0), (0.7, 1), (0.1, 0)]);
        let r = roc_auc(&four).unwrap();
        assert_eq!(
            r.curve,
            vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        );
    }

    #[test]
    fn ks_cases() {
        let sep = s(&[(0.9, 1), (0.8, 1), (0.3, 0), (0.1, 0)]);
        assert_eq!(ks(&sep).unwrap().statistic, 1.0);
        let four = s(&[(0.9, 1), (0.8, 0), (0.7, 1), (0.1, 0)]);
        let r = ks(&four).unwrap();
        assert_eq!(r.statistic, 0.5);
        assert_eq!(r.argmax_threshold, 0.7);
        // Interleaved pairs: every threshold step closes the gap again.
        let inter = s(&[(0.4, 1), (0.4, 0), (0.3, 1), (0.3, 0), (0.2, 0), (0.2, 1)]);
        assert_eq!(ks(&inter).unwrap().statistic, 0.0);
    }

    #[test]
    fn ks_endpoints() {
        let r = ks(&s(&[(0.2, 0), (0.7, 1), (0.4, 0), (0.4, 1)])).unwrap();
        let last = r.curve.last().unwrap();
        assert_eq!((last.cp1, last.cp0), (1.0, 1.0));
        assert_eq!((r.curve[0].cp1, r.curve[0].cp0), (0.0, 0.0));
    }

    #[test]
    fn single_class_rejected() {
        let one = s(&[(0.1, 1), (0.2, 1)]);
        assert!(matches!(
            roc_auc(&one),
            Err(MetricsError::SingleClass { .. })
        ));
        assert!(matches!(ks(&one), Err(MetricsError::SingleClass { .. })));
        assert!(matches!(
            roc_auc(&s(&[(f64::NAN, 1), (0.2, 0)])),
            Err(MetricsError::NonFinite(_))
        ));
    }

    #[test]
    fn ks_file_has_two_blocks() {
        let r = ks(&s(&[(0.9, 1), (0.1, 0)])).unwrap();
        let text = format_ks(&r);
        assert_eq!(text.matches("\n\n").count(), 1);
        assert!(text.contains("inf 0"));
    }
}

//! Per-point precision/recall evaluation.
//!
//! Scores are ground probabilities; a point is predicted ground at
//! threshold `t` when `score >= t`. Curves are built from a [`ScoreTally`]
//! (positive/negative counts per distinct score), which can be merged
//! across frames before the curve is formed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::cloud::{horizontal_range, PointCloud};
use crate::error::{Error, Result};

/// Points within `max_range` meters horizontally; all points when `None`.
pub fn range_mask(cloud: &PointCloud, max_range: Option<f64>) -> Vec<bool> {
    match max_range {
        None => vec![true; cloud.len()],
        Some(limit) => cloud.points.iter().map(|p| horizontal_range(p) <= limit).collect(),
    }
}

/// Positive/negative counts keyed by score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTally {
    // keyed by the bit pattern of a non-negative score, which orders like the value
    counts: BTreeMap<u64, (u64, u64)>,
}

impl ScoreTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(scores: &[f64], truth: &[bool], mask: Option<&[bool]>) -> Result<Self> {
        let mut tally = Self::new();
        tally.add_points(scores, truth, mask)?;
        Ok(tally)
    }

    pub fn add_points(&mut self, scores: &[f64], truth: &[bool], mask: Option<&[bool]>) -> Result<()> {
        if scores.len() != truth.len() || mask.is_some_and(|m| m.len() != scores.len()) {
            return Err(Error::Shape(format!(
                "{} scores, {} truth labels, {} mask entries",
                scores.len(),
                truth.len(),
                mask.map_or(scores.len(), |m| m.len())
            )));
        }
        for (i, (&s, &t)) in scores.iter().zip(truth).enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            self.add(s, t)?;
        }
        Ok(())
    }

    pub fn add(&mut self, score: f64, truth: bool) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Config(format!("score {score} outside [0, 1]")));
        }
        let key = (score + 0.0).to_bits();
        let e = self.counts.entry(key).or_default();
        if truth {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ScoreTally) {
        for (&k, &(p, n)) in &other.counts {
            let e = self.counts.entry(k).or_default();
            e.0 += p;
            e.1 += n;
        }
    }

    pub fn positives(&self) -> u64 {
        self.counts.values().map(|c| c.0).sum()
    }

    pub fn negatives(&self) -> u64 {
        self.counts.values().map(|c| c.1).sum()
    }

    pub fn curve(&self) -> Result<PrCurve> {
        let positives = self.positives();
        if positives == 0 {
            return Err(Error::DegenerateTruth);
        }
        let mut thresholds: Vec<u64> = self.counts.keys().copied().collect();
        for extra in [0.0f64.to_bits(), 1.0f64.to_bits()] {
            if !self.counts.contains_key(&extra) {
                thresholds.push(extra);
            }
        }
        thresholds.sort_unstable();
        let mut points = Vec::with_capacity(thresholds.len());
        let (mut tp, mut fp) = (0u64, 0u64);
        for &key in thresholds.iter().rev() {
            if let Some(&(p, n)) = self.counts.get(&key) {
                tp += p;
                fp += n;
            }
            let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
            points.push(CurvePoint {
                threshold: f64::from_bits(key),
                precision,
                recall: tp as f64 / positives as f64,
                true_positives: tp,
                false_positives: fp,
            });
        }
        points.reverse();
        Ok(PrCurve { points, positive_count: positives, negative_count: self.negatives() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: u64,
    pub false_positives: u64,
}

impl CurvePoint {
    pub fn predicted_positives(&self) -> u64 {
        self.true_positives + self.false_positives
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// Ascending threshold.
    pub points: Vec<CurvePoint>,
    pub positive_count: u64,
    pub negative_count: u64,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for p in &self.points {
            let _ = writeln!(s, "{:.6},{:.6},{:.6}", p.threshold, p.precision, p.recall);
        }
        s
    }
}

pub fn pr_curve(scores: &[f64], truth: &[bool], mask: Option<&[bool]>) -> Result<PrCurve> {
    ScoreTally::from_points(scores, truth, mask)?.curve()
}

/// Step-wise area under the curve: walking from the highest threshold down
/// (ascending recall), every recall increment is weighted by the precision
/// at the point where that recall is first reached.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for p in curve.points.iter().rev() {
        ap += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    ap
}

pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn best_f_score(curve: &PrCurve) -> f64 {
    curve.points.iter().map(|p| f_score(p.precision, p.recall)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoints {
    /// Precision where recall first reaches the target (highest such threshold).
    pub precision_at_recall: Option<f64>,
    /// Best recall among points that predict something and meet the precision target.
    pub recall_at_precision: Option<f64>,
}

pub fn fixed_operating_points(curve: &PrCurve, target_recall: f64, target_precision: f64) -> OperatingPoints {
    let precision_at_recall = curve
        .points
        .iter()
        .rev()
        .find(|p| p.recall >= target_recall && p.predicted_positives() > 0)
        .map(|p| p.precision);
    let recall_at_precision = curve
        .points
        .iter()
        .filter(|p| p.predicted_positives() > 0 && p.precision >= target_precision)
        .map(|p| p.recall)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
    OperatingPoints { precision_at_recall, recall_at_precision }
}

/// Reference operating points used for the fixed-point metrics by default.
pub const DEFAULT_TARGET_RECALL: f64 = 0.992;
pub const DEFAULT_TARGET_PRECISION: f64 = 0.924;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub average_precision: f64,
    pub best_f_score: f64,
    pub operating: OperatingPoints,
    pub target_recall: f64,
    pub target_precision: f64,
    pub positives: u64,
    pub negatives: u64,
}

impl EvalReport {
    pub fn from_curve(curve: &PrCurve, target_recall: f64, target_precision: f64) -> Self {
        Self {
            average_precision: average_precision(curve),
            best_f_score: best_f_score(curve),
            operating: fixed_operating_points(curve, target_recall, target_precision),
            target_recall,
            target_precision,
            positives: curve.positive_count,
            negatives: curve.negative_count,
        }
    }

    /// `name<TAB>value` lines: metrics with six decimals, counts as integers,
    /// unattainable operating points as `NA`.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        let mut s = String::new();
        let _ = writeln!(s, "average_precision\t{:.6}", self.average_precision);
        let _ = writeln!(s, "best_f_score\t{:.6}", self.best_f_score);
        let _ = writeln!(s, "precision_at_recall_{:.3}\t{}", self.target_recall, opt(self.operating.precision_at_recall));
        let _ = writeln!(s, "recall_at_precision_{:.3}\t{}", self.target_precision, opt(self.operating.recall_at_precision));
        let _ = writeln!(s, "positives\t{}", self.positives);
        let _ = writeln!(s, "negatives\t{}", self.negatives);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;
    use proptest::prelude::*;

    #[test]
    fn range_mask_cases() {
        let cloud = PointCloud::new(vec![Point::new(59.9, 0.0, 0.0, 0.0), Point::new(0.0, 60.1, 0.0, 0.0)], 64, "r");
        assert_eq!(range_mask(&cloud, Some(60.0)), vec![true, false]);
        assert_eq!(range_mask(&cloud, None), vec![true, true]);
    }

    #[test]
    fn perfect_predictor() {
        let truth = [true, false, true, false];
        let scores: Vec<f64> = truth.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
        let c = pr_curve(&scores, &truth, None).unwrap();
        assert!(c.points.iter().any(|p| p.precision == 1.0 && p.recall == 1.0));
        assert_eq!(average_precision(&c), 1.0);
        assert_eq!(best_f_score(&c), 1.0);
        assert_eq!(fixed_operating_points(&c, 0.992, 0.924).precision_at_recall, Some(1.0));
    }

    #[test]
    fn constant_predictor() {
        let truth = [true, false, true, false];
        let c = pr_curve(&[0.5; 4], &truth, None).unwrap();
        for p in &c.points {
            if p.threshold <= 0.5 {
                assert_eq!((p.precision, p.recall), (0.5, 1.0));
            } else {
                assert_eq!(p.recall, 0.0);
            }
        }
        assert_eq!(average_precision(&c), 0.5);
        assert_eq!(fixed_operating_points(&c, 0.5, 0.9).recall_at_precision, None);
    }

    #[test]
    fn inverted_predictor() {
        let truth = [true, false, true, false, false];
        let scores: Vec<f64> = truth.iter().map(|&t| if t { 0.0 } else { 1.0 }).collect();
        let c = pr_curve(&scores, &truth, None).unwrap();
        for p in &c.points {
            if p.predicted_positives() > 0 && p.threshold > 0.0 {
                assert_eq!(p.precision, 0.0);
            }
        }
    }

    #[test]
    fn best_f_arithmetic() {
        let mk = |precision, recall| CurvePoint { threshold: 0.0, precision, recall, true_positives: 1, false_positives: 0 };
        let c = PrCurve { points: vec![mk(0.5, 1.0), mk(1.0, 0.2)], positive_count: 1, negative_count: 0 };
        assert!((best_f_score(&c) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn operating_point_lookup() {
        let mk = |threshold, precision, recall| CurvePoint { threshold, precision, recall, true_positives: 1, false_positives: 1 };
        let c = PrCurve {
            points: vec![mk(0.0, 0.5, 1.0), mk(0.3, 0.93, 0.992), mk(0.7, 0.99, 0.6)],
            positive_count: 1,
            negative_count: 1,
        };
        let op = fixed_operating_points(&c, 0.992, 0.924);
        assert_eq!(op.precision_at_recall, Some(0.93));
        assert_eq!(op.recall_at_precision, Some(0.992));
    }

    #[test]
    fn degenerate_truth() {
        assert!(matches!(pr_curve(&[0.3, 0.2], &[false, false], None), Err(Error::DegenerateTruth)));
        let mask = [false, true];
        assert!(matches!(pr_curve(&[0.3, 0.2], &[true, false], Some(&mask)), Err(Error::DegenerateTruth)));
    }

    #[test]
    fn merged_tallies_equal_joint_tally() {
        let s1 = [0.1, 0.9, 0.5];
        let t1 = [false, true, true];
        let s2 = [0.5, 0.2];
        let t2 = [false, true];
        let mut a = ScoreTally::from_points(&s1, &t1, None).unwrap();
        a.merge(&ScoreTally::from_points(&s2, &t2, None).unwrap());
        let joint = ScoreTally::from_points(&[s1.as_slice(), &s2].concat(), &[t1.as_slice(), &t2].concat(), None).unwrap();
        assert_eq!(a, joint);
    }

    #[test]
    fn report_format() {
        let c = pr_curve(&[1.0, 0.0], &[true, false], None).unwrap();
        let text = EvalReport::from_curve(&c, 0.992, 0.924).to_text();
        assert!(text.starts_with("average_precision\t1.000000\n"));
        assert!(text.lines().all(|l| l.split('\t').count() == 2));
        assert!(c.to_csv().starts_with("threshold,precision,recall\n0.000000,"));
    }

    proptest! {
        #[test]
        fn recall_non_increasing(scores in proptest::collection::vec(0.0f64..=1.0, 1..100), seed in any::<u64>()) {
            let truth: Vec<bool> = scores.iter().enumerate().map(|(i, _)| (seed >> (i % 64)) & 1 == 1 || i == 0).collect();
            let c = pr_curve(&scores, &truth, None).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[0].threshold < w[1].threshold);
                prop_assert!(w[0].recall >= w[1].recall);
            }
        }

        #[test]
        fn monotone_transform_keeps_curve(scores in proptest::collection::vec(0.0f64..=1.0, 1..100), seed in any::<u64>()) {
            let truth: Vec<bool> = scores.iter().enumerate().map(|(i, _)| (seed >> (i % 64)) & 1 == 1 || i == 0).collect();
            let squashed: Vec<f64> = scores.iter().map(|s| s * s * 0.5 + 0.25).collect();
            let pr = |c: &PrCurve| -> std::collections::BTreeSet<(u64, u64)> {
                c.points.iter().filter(|p| p.predicted_positives() > 0)
                    .map(|p| (p.precision.to_bits(), p.recall.to_bits())).collect()
            };
            let a = pr_curve(&scores, &truth, None).unwrap();
            let b = pr_curve(&squashed, &truth, None).unwrap();
            prop_assert_eq!(pr(&a), pr(&b));
        }
    }
}

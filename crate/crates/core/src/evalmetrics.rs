//! Placement and selection metrics, per chart and grouped by difficulty.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::simfile::{CoarseDifficulty, StepSymbol};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{what}: {left} vs {right} entries")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("no predictions")]
    Empty,
}

fn same_len(what: &'static str, left: usize, right: usize) -> Result<(), MetricError> {
    if left != right {
        return Err(MetricError::LengthMismatch { what, left, right });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 from confusion counts; empty denominators give 0.
pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// A slot counts as predicted when its probability is at least `threshold`.
pub fn prf_at_threshold(
    probs: &[f64],
    targets: &[bool],
    threshold: f64,
) -> Result<Prf, MetricError> {
    same_len("prf", probs.len(), targets.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &t) in probs.iter().zip(targets) {
        match (p >= threshold, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(prf_from_counts(tp, fp, fn_))
}

/// Threshold maximizing F1 over the distinct probabilities and 0.5; ties go
/// to the larger threshold.
pub fn max_f1_threshold(probs: &[f64], targets: &[bool]) -> Result<(f64, Prf), MetricError> {
    same_len("max_f1", probs.len(), targets.len())?;
    if probs.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut candidates: Vec<f64> = probs.to_vec();
    candidates.push(DEFAULT_THRESHOLD);
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();

    let positives = targets.iter().filter(|&&t| t).count();
    let (mut tp, mut fp) = (0, 0);
    let mut next = 0;
    let mut best: Option<(f64, Prf)> = None;
    for &theta in &candidates {
        while next < order.len() && probs[order[next]] >= theta {
            if targets[order[next]] {
                tp += 1;
            } else {
                fp += 1;
            }
            next += 1;
        }
        let prf = prf_from_counts(tp, fp, positives - tp);
        if best.map_or(true, |(_, b)| prf.f1 > b.f1) {
            best = Some((theta, prf));
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Trapezoidal area under the precision-recall curve traced over every
/// distinct threshold, starting from recall 0 at the first precision.
/// `None` when there are no positive targets.
pub fn pr_auc(probs: &[f64], targets: &[bool]) -> Result<Option<f64>, MetricError> {
    same_len("pr_auc", probs.len(), targets.len())?;
    let positives = targets.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let theta = probs[order[i]];
        while i < order.len() && probs[order[i]] == theta {
            if targets[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut area = 0.0;
    let mut prev = (0.0, points[0].1);
    for &(r, p) in &points {
        area += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    Ok(Some(area))
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(probs: &[f64], targets: &[bool]) -> Result<f64, MetricError> {
    same_len("bce", probs.len(), targets.len())?;
    if probs.is_empty() {
        return Err(MetricError::Empty);
    }
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if t {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementEval {
    pub at_half: Prf,
    pub best_threshold: f64,
    pub at_best: Prf,
    pub pr_auc: Option<f64>,
    pub loss: f64,
}

impl PlacementEval {
    pub fn metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("f1", Some(self.at_half.f1)),
            ("precision", Some(self.at_half.precision)),
            ("recall", Some(self.at_half.recall)),
            ("max_f1", Some(self.at_best.f1)),
            ("max_precision", Some(self.at_best.precision)),
            ("max_recall", Some(self.at_best.recall)),
            ("pr_auc", self.pr_auc),
            ("loss", Some(self.loss)),
        ]
    }
}

/// All placement metrics for one chart's slots.
pub fn placement_eval(probs: &[f64], targets: &[bool]) -> Result<PlacementEval, MetricError> {
    let (best_threshold, at_best) = max_f1_threshold(probs, targets)?;
    Ok(PlacementEval {
        at_half: prf_at_threshold(probs, targets, DEFAULT_THRESHOLD)?,
        best_threshold,
        at_best,
        pr_auc: pr_auc(probs, targets)?,
        loss: bce(probs, targets)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionEval {
    pub loss: Option<f64>,
    pub accuracy: f64,
    /// Over target rows that start a hold; `None` if there are none.
    pub hold_accuracy: Option<f64>,
    /// Over target rows made only of taps; `None` if there are none.
    pub step_accuracy: Option<f64>,
}

impl SelectionEval {
    pub fn metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("loss", self.loss),
            ("accuracy", Some(self.accuracy)),
            ("hold_accuracy", self.hold_accuracy),
            ("step_accuracy", self.step_accuracy),
        ]
    }
}

/// Accuracies of predicted symbol indices; `distributions`, when given, are
/// the predicted probabilities used for the cross-entropy.
pub fn selection_scores(
    predictions: &[u8],
    distributions: Option<&[Vec<f64>]>,
    targets: &[StepSymbol],
) -> Result<SelectionEval, MetricError> {
    same_len("selection", predictions.len(), targets.len())?;
    if targets.is_empty() {
        return Err(MetricError::Empty);
    }
    let rate = |filter: &dyn Fn(StepSymbol) -> bool| -> Option<f64> {
        let (mut hit, mut n) = (0usize, 0usize);
        for (&p, &t) in predictions.iter().zip(targets) {
            if filter(t) {
                n += 1;
                hit += usize::from(p == t.index());
            }
        }
        (n > 0).then(|| hit as f64 / n as f64)
    };
    let loss = match distributions {
        Some(d) => {
            same_len("selection distributions", d.len(), targets.len())?;
            let total: f64 = d
                .iter()
                .zip(targets)
                .map(|(dist, t)| -dist[t.index() as usize].max(1e-300).ln())
                .sum();
            Some(total / targets.len() as f64)
        }
        None => None,
    };
    Ok(SelectionEval {
        loss,
        accuracy: rate(&|_| true).expect("non-empty"),
        hold_accuracy: rate(&|t| t.has_hold_start()),
        step_accuracy: rate(&|t| t.is_tap_only()),
    })
}

/// Metric values of one chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartMetrics {
    pub chart_id: String,
    pub fine: u32,
    pub coarse: CoarseDifficulty,
    pub metrics: Vec<(String, Option<f64>)>,
}

impl ChartMetrics {
    pub fn new(
        chart_id: &str,
        fine: u32,
        coarse: CoarseDifficulty,
        metrics: Vec<(&'static str, Option<f64>)>,
    ) -> Self {
        ChartMetrics {
            chart_id: chart_id.to_string(),
            fine,
            coarse,
            metrics: metrics
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Fine,
    Coarse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub difficulty: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum GroupKey {
    Coarse(CoarseDifficulty),
    Fine(u32),
    All,
}

fn group_label(k: GroupKey) -> String {
    match k {
        GroupKey::Coarse(c) => c.name().to_string(),
        GroupKey::Fine(f) => f.to_string(),
        GroupKey::All => "all".to_string(),
    }
}

fn grouped_means(
    charts: &[ChartMetrics],
    key: impl Fn(&ChartMetrics) -> GroupKey,
) -> Vec<ReportRow> {
    let mut order: Vec<String> = Vec::new();
    let mut sums: BTreeMap<(usize, GroupKey), (f64, usize)> = BTreeMap::new();
    for c in charts {
        for (name, value) in &c.metrics {
            let m = order.iter().position(|n| n == name).unwrap_or_else(|| {
                order.push(name.clone());
                order.len() - 1
            });
            let Some(v) = value else { continue };
            let e = sums.entry((m, key(c))).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|((m, k), (s, n))| ReportRow {
            metric: order[m].clone(),
            difficulty: group_label(k),
            value: s / n as f64,
        })
        .collect()
}

/// Unweighted mean of each metric per difficulty group; charts missing a
/// metric do not count toward that metric's mean.
pub fn difficulty_report(charts: &[ChartMetrics], grouping: Grouping) -> Vec<ReportRow> {
    grouped_means(charts, |c| match grouping {
        Grouping::Fine => GroupKey::Fine(c.fine),
        Grouping::Coarse => GroupKey::Coarse(c.coarse),
    })
}

/// Per-chart average of every metric over all charts.
pub fn chart_average(charts: &[ChartMetrics]) -> Vec<ReportRow> {
    grouped_means(charts, |_| GroupKey::All)
}

/// Metrics computed over the concatenation of all charts' slots.
pub fn pooled_placement(charts: &[(Vec<f64>, Vec<bool>)]) -> Result<PlacementEval, MetricError> {
    let probs: Vec<f64> = charts.iter().flat_map(|c| c.0.iter().copied()).collect();
    let targets: Vec<bool> = charts.iter().flat_map(|c| c.1.iter().copied()).collect();
    placement_eval(&probs, &targets)
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v}"))
}

pub fn metrics_csv(charts: &[ChartMetrics]) -> String {
    let mut out = String::from("chart_id,difficulty_fine,difficulty_coarse,metric,value\n");
    for c in charts {
        for (name, v) in &c.metrics {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.chart_id,
                c.fine,
                c.coarse.name(),
                name,
                fmt_value(*v)
            );
        }
    }
    out
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("metric,difficulty,value\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.metric, r.difficulty, r.value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(s: &str) -> StepSymbol {
        s.parse().unwrap()
    }

    #[test]
    fn hand_counted_prf() {
        let p = prf_at_threshold(&[0.9, 0.4, 0.8], &[true, true, false], 0.5).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
        let p = prf_at_threshold(&[0.1, 0.2], &[false, false], 0.5).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        let p = prf_at_threshold(&[0.9, 0.1], &[true, false], 0.5).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        assert!(prf_at_threshold(&[0.1], &[], 0.5).is_err());
    }

    #[test]
    fn threshold_search_reaches_low_positive() {
        let (theta, p) = max_f1_threshold(&[0.3, 0.6], &[true, false]).unwrap();
        assert_eq!(theta, 0.3);
        assert!((p.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pr_auc_simple_cases() {
        assert_eq!(
            pr_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(),
            Some(1.0)
        );
        let auc = pr_auc(
            &[0.4; 8],
            &[true, false, false, true, false, false, false, false],
        )
        .unwrap();
        assert!((auc.unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(pr_auc(&[0.4; 3], &[false; 3]).unwrap(), None);
    }

    #[test]
    fn selection_hand_count() {
        let e =
            selection_scores(&[sym("1000").index(); 2], None, &[sym("1000"), sym("2000")]).unwrap();
        assert_eq!(e.accuracy, 0.5);
        assert_eq!(e.hold_accuracy, Some(0.0));
        assert_eq!(e.step_accuracy, Some(1.0));
        let e = selection_scores(&[sym("0100").index()], None, &[sym("0100")]).unwrap();
        assert_eq!(e.hold_accuracy, None);
        let uniform = vec![vec![1.0 / 256.0; 256]];
        let e = selection_scores(&[3], Some(&uniform), &[sym("0100")]).unwrap();
        assert!((e.loss.unwrap() - 256f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn grouped_reports() {
        let mk = |id: &str, fine, coarse, f1| {
            ChartMetrics::new(
                id,
                fine,
                coarse,
                vec![("f1", Some(f1)), ("hold_accuracy", None)],
            )
        };
        let charts = vec![
            mk("a", 3, CoarseDifficulty::Easy, 0.6),
            mk("b", 3, CoarseDifficulty::Easy, 0.8),
            mk("c", 9, CoarseDifficulty::Challenge, 0.5),
        ];
        let fine = difficulty_report(&charts, Grouping::Fine);
        assert_eq!(fine.len(), 2);
        assert_eq!(fine[0].difficulty, "3");
        assert!((fine[0].value - 0.7).abs() < 1e-12);
        assert_eq!(fine[1].value, 0.5);
        let coarse = difficulty_report(&charts, Grouping::Coarse);
        assert_eq!(coarse[0].difficulty, "Easy");
        assert_eq!(coarse[1].difficulty, "Challenge");
        let csv = metrics_csv(&charts);
        assert!(csv.contains("a,3,Easy,hold_accuracy,NA\n"));
        assert!(report_csv(&coarse).starts_with("metric,difficulty,value\nf1,Easy,0.7"));
    }
}

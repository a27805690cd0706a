//! Hierarchical risks, coverage, severity loss, ECE, and risk/calibration
//! curve construction with hAURC and hierarchical-gain summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, NodeId};
use crate::rules::{self, Prediction, RuleId};
use crate::scores::{lift_to_nodes, NodeScores, ScoreTable};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("LengthMismatch")]
    LengthMismatch,
    #[error("EmptyInput")]
    EmptyInput,
    #[error("TooFewPoints")]
    TooFewPoints,
    #[error("ZeroBaseline")]
    ZeroBaseline,
    #[error("LabelNotLeaf")]
    LabelNotLeaf,
}

/// Loss used on risk curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    ZeroOne,
    Severity,
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero-one" => Ok(LossKind::ZeroOne),
            "severity" => Ok(LossKind::Severity),
            other => Err(format!("unknown loss: {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    Risk,
    Ece,
}

/// One operating point: the threshold it was produced at, mean coverage, and
/// the curve value (risk or ECE).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub coverage: f64,
    pub value: f64,
}

/// Curve points ordered by ascending coverage (thresholds non-increasing).
#[derive(Debug, Clone)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    pub kind: CurveKind,
}

impl Curve {
    /// CSV with header `threshold,coverage,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,coverage,value\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.coverage, p.value));
        }
        out
    }
}

/// Per-run evaluation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub haurc: f64,
    pub haurc_selective_baseline: f64,
    pub hierarchical_gain_percent: f64,
    pub full_coverage_risk: f64,
    pub ece_full_coverage: f64,
    pub rule: RuleId,
    pub n_samples: usize,
}

/// Order-insensitive sum (pairwise reduction).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

fn pairwise_mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Fraction of predictions that are not an ancestor of their label (the 0/1
/// hierarchical risk).
pub fn hier_risk_01(
    h: &Hierarchy,
    predictions: &[Prediction],
    labels: &[NodeId],
) -> Result<f64, MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch);
    }
    if predictions.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let losses: Vec<f64> = predictions
        .iter()
        .zip(labels)
        .map(|(p, &y)| if h.is_ancestor(p.node, y) { 0.0 } else { 1.0 })
        .collect();
    Ok(pairwise_mean(&losses))
}

/// Mistake-severity loss `1 - φ(LCA(v̂,y)) / φ(v̂)`.
///
/// 0 whenever the prediction is correct (the LCA is the prediction itself),
/// and 0 at the root by the 0/0 convention — the root is correct for every
/// label.
pub fn severity_loss(h: &Hierarchy, predicted: NodeId, label: NodeId) -> Result<f64, MetricError> {
    if !h.is_leaf(label) {
        return Err(MetricError::LabelNotLeaf);
    }
    if predicted == h.root() || h.is_ancestor(predicted, label) {
        return Ok(0.0);
    }
    let lca = h.lca(predicted, label);
    Ok(1.0 - h.node_coverage(lca) / h.node_coverage(predicted))
}

/// Arithmetic mean of node coverage over predicted nodes.
pub fn mean_coverage(h: &Hierarchy, predictions: &[Prediction]) -> Result<f64, MetricError> {
    if predictions.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let covs: Vec<f64> = predictions
        .iter()
        .map(|p| h.node_coverage(p.node))
        .collect();
    Ok(pairwise_mean(&covs))
}

/// Expected calibration error over equal-width confidence bins on `[0,1]`.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64, MetricError> {
    if confidences.len() != correct.len() {
        return Err(MetricError::LengthMismatch);
    }
    assert!(n_bins >= 1);
    let n = confidences.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut bin_conf = vec![Vec::new(); n_bins];
    let mut bin_acc = vec![Vec::new(); n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * n_bins as f64) as usize).min(n_bins - 1);
        bin_conf[b].push(c);
        bin_acc[b].push(if ok { 1.0 } else { 0.0 });
    }
    let mut total = 0.0;
    for b in 0..n_bins {
        if bin_conf[b].is_empty() {
            continue;
        }
        let w = bin_conf[b].len() as f64 / n as f64;
        total += w * (pairwise_mean(&bin_acc[b]) - pairwise_mean(&bin_conf[b])).abs();
    }
    Ok(total)
}

/// Relative hAURC improvement over the selective baseline, in percent.
pub fn hierarchical_gain(haurc_selective: f64, haurc_rule: f64) -> Result<f64, MetricError> {
    if haurc_selective <= 0.0 {
        return Err(MetricError::ZeroBaseline);
    }
    Ok(100.0 * (haurc_selective - haurc_rule) / haurc_selective)
}

fn loss_of(h: &Hierarchy, pred: &Prediction, label: NodeId, loss: LossKind) -> f64 {
    match loss {
        LossKind::ZeroOne => {
            if h.is_ancestor(pred.node, label) {
                0.0
            } else {
                1.0
            }
        }
        LossKind::Severity => severity_loss(h, pred.node, label).expect("leaf label"),
    }
}

/// Lifts every row of a table once; shared by curve construction and
/// calibration.
pub fn lift_table(h: &Hierarchy, table: &ScoreTable) -> Vec<NodeScores> {
    (0..table.n_samples())
        .into_par_iter()
        .map(|i| lift_to_nodes(h, table.row(i)))
        .collect()
}

/// The threshold just above 1 at which every rule predicts the root.
pub fn theta_above_one() -> f64 {
    1.0 + f64::EPSILON
}

/// The exact breakpoint set for a rule: the union over samples of all node
/// confidences on each sample's rule-reachable set, plus `{0, 1 + ulp}`,
/// sorted and deduplicated.
fn breakpoints(h: &Hierarchy, lifted: &[NodeScores], rule: RuleId) -> Vec<f64> {
    let mut thetas = vec![0.0, theta_above_one()];
    for ns in lifted {
        match rule {
            RuleId::Selective => thetas.push(ns.get(rules::argmax_leaf(h, ns))),
            RuleId::Climbing => {
                let mut v = rules::argmax_leaf(h, ns);
                loop {
                    thetas.push(ns.get(v));
                    match h.parent(v) {
                        Some(p) => v = p,
                        None => break,
                    }
                }
            }
            // reachable set is not a single path; every node confidence can
            // change the outcome
            RuleId::MaxCoverage | RuleId::Jumping => thetas.extend_from_slice(ns.values()),
        }
    }
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    thetas
}

fn curve_point_risk(
    h: &Hierarchy,
    lifted: &[NodeScores],
    labels: &[NodeId],
    rule: RuleId,
    loss: LossKind,
    theta: f64,
) -> CurvePoint {
    let preds: Vec<Prediction> = lifted
        .iter()
        .map(|ns| rules::infer(rule, h, ns, theta))
        .collect();
    let losses: Vec<f64> = preds
        .iter()
        .zip(labels)
        .map(|(p, &y)| loss_of(h, p, y, loss))
        .collect();
    CurvePoint {
        threshold: theta,
        coverage: mean_coverage(h, &preds).expect("non-empty"),
        value: pairwise_mean(&losses),
    }
}

fn curve_point_ece(
    h: &Hierarchy,
    lifted: &[NodeScores],
    labels: &[NodeId],
    rule: RuleId,
    n_bins: usize,
    theta: f64,
) -> CurvePoint {
    let preds: Vec<Prediction> = lifted
        .iter()
        .map(|ns| rules::infer(rule, h, ns, theta))
        .collect();
    let mut confs = Vec::new();
    let mut correct = Vec::new();
    for (p, &y) in preds.iter().zip(labels) {
        if p.node != h.root() {
            confs.push(p.confidence);
            correct.push(h.is_ancestor(p.node, y));
        }
    }
    CurvePoint {
        threshold: theta,
        coverage: mean_coverage(h, &preds).expect("non-empty"),
        value: ece(&confs, &correct, n_bins).expect("equal lengths"),
    }
}

/// Sorts descending by threshold (ascending coverage for monotone rules) and
/// drops points whose operating point repeats, keeping the largest threshold
/// for each distinct (coverage, value) pair.
fn finish_curve(mut pts: Vec<CurvePoint>, kind: CurveKind) -> Curve {
    // descending threshold is ascending coverage for threshold-monotone rules
    pts.sort_by(|a, b| b.threshold.total_cmp(&a.threshold));
    pts.dedup_by(|next, kept| next.coverage == kept.coverage && next.value == kept.value);
    Curve { points: pts, kind }
}

/// Risk-coverage curve evaluated at the exact breakpoint set.
///
/// The risk is the unconditional mean loss over all samples (no coverage
/// denominator); points are ordered by ascending coverage.
pub fn rc_curve(
    h: &Hierarchy,
    table: &ScoreTable,
    rule: RuleId,
    loss: LossKind,
) -> Result<Curve, MetricError> {
    if table.n_samples() == 0 {
        return Err(MetricError::EmptyInput);
    }
    let lifted = lift_table(h, table);
    let thetas = breakpoints(h, &lifted, rule);
    let pts: Vec<CurvePoint> = thetas
        .par_iter()
        .map(|&t| curve_point_risk(h, &lifted, table.labels(), rule, loss, t))
        .collect();
    Ok(finish_curve(pts, CurveKind::Risk))
}

/// Calibration-coverage curve: ECE over non-root predictions as a function of
/// mean coverage, over the same threshold sweep as [`rc_curve`].
pub fn cc_curve(
    h: &Hierarchy,
    table: &ScoreTable,
    rule: RuleId,
    n_bins: usize,
) -> Result<Curve, MetricError> {
    if table.n_samples() == 0 {
        return Err(MetricError::EmptyInput);
    }
    let lifted = lift_table(h, table);
    let thetas = breakpoints(h, &lifted, rule);
    let pts: Vec<CurvePoint> = thetas
        .par_iter()
        .map(|&t| curve_point_ece(h, &lifted, table.labels(), rule, n_bins, t))
        .collect();
    Ok(finish_curve(pts, CurveKind::Ece))
}

/// Trapezoidal integral of value over coverage, from 0 to the maximum
/// achieved coverage.
pub fn haurc(curve: &Curve) -> Result<f64, MetricError> {
    if curve.points.len() < 2 {
        return Err(MetricError::TooFewPoints);
    }
    let mut pts = curve.points.clone();
    pts.sort_by(|a, b| a.coverage.total_cmp(&b.coverage));
    let mut area = 0.0;
    for w in pts.windows(2) {
        area += (w[1].coverage - w[0].coverage) * 0.5 * (w[0].value + w[1].value);
    }
    Ok(area)
}

/// Full evaluation: hAURC, selective baseline, gain, and full-coverage
/// risk/ECE for a single rule.
pub fn evaluate(
    h: &Hierarchy,
    table: &ScoreTable,
    rule: RuleId,
    loss: LossKind,
    n_bins: usize,
) -> Result<(EvalReport, Curve), MetricError> {
    let curve = rc_curve(h, table, rule, loss)?;
    let area = haurc(&curve)?;
    let baseline_area = if rule == RuleId::Selective {
        area
    } else {
        haurc(&rc_curve(h, table, RuleId::Selective, loss)?)?
    };
    let gain = if baseline_area > 0.0 {
        100.0 * (baseline_area - area) / baseline_area
    } else {
        0.0
    };

    // full-coverage operating point: θ = 0, every rule predicts leaves
    let lifted = lift_table(h, table);
    let full = curve_point_risk(h, &lifted, table.labels(), rule, loss, 0.0);
    let full_ece = curve_point_ece(h, &lifted, table.labels(), rule, n_bins, 0.0);

    Ok((
        EvalReport {
            haurc: area,
            haurc_selective_baseline: baseline_area,
            hierarchical_gain_percent: gain,
            full_coverage_risk: full.value,
            ece_full_coverage: full_ece.value,
            rule,
            n_samples: table.n_samples(),
        },
        curve,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::parse_hierarchy;
    use crate::scores::ScoreKind;

    fn five_node() -> Hierarchy {
        parse_hierarchy("r\ta\nr\tb\na\ta1\na\ta2").unwrap()
    }

    fn pred(h: &Hierarchy, name: &str) -> Prediction {
        let node = h.node_by_name(name).unwrap();
        Prediction {
            node,
            confidence: 1.0,
        }
    }

    #[test]
    fn risk_hand_count() {
        let h = five_node();
        let labels = [
            h.node_by_name("a1").unwrap(),
            h.node_by_name("b").unwrap(),
            h.node_by_name("b").unwrap(),
        ];
        let preds = [pred(&h, "a"), pred(&h, "a"), pred(&h, "b")];
        let r = hier_risk_01(&h, &preds, &labels).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-12);

        let roots = [pred(&h, "r"), pred(&h, "r"), pred(&h, "r")];
        assert_eq!(hier_risk_01(&h, &roots, &labels).unwrap(), 0.0);
        assert_eq!(
            hier_risk_01(&h, &preds, &labels[..2]).unwrap_err(),
            MetricError::LengthMismatch
        );
    }

    #[test]
    fn severity_examples() {
        let h = five_node();
        let a1 = h.node_by_name("a1").unwrap();
        let a2 = h.node_by_name("a2").unwrap();
        let b = h.node_by_name("b").unwrap();
        let a = h.node_by_name("a").unwrap();

        assert_eq!(severity_loss(&h, a, a1).unwrap(), 0.0);
        assert_eq!(severity_loss(&h, h.root(), b).unwrap(), 0.0);
        let expected = 1.0 - (1.0 - 2f64.ln() / 3f64.ln());
        assert!((severity_loss(&h, a1, a2).unwrap() - expected).abs() < 1e-12);
        assert!((severity_loss(&h, a1, b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            severity_loss(&h, a1, a).unwrap_err(),
            MetricError::LabelNotLeaf
        );
    }

    #[test]
    fn mean_coverage_cases() {
        let h = five_node();
        let all_roots = vec![pred(&h, "r"); 4];
        assert_eq!(mean_coverage(&h, &all_roots).unwrap(), 0.0);
        let all_leaves = vec![pred(&h, "a1"), pred(&h, "b")];
        assert!((mean_coverage(&h, &all_leaves).unwrap() - 1.0).abs() < 1e-12);
        let mixed = vec![pred(&h, "a1"), pred(&h, "a")];
        let expected = (1.0 + (1.0 - 2f64.ln() / 3f64.ln())) / 2.0;
        assert!((mean_coverage(&h, &mixed).unwrap() - expected).abs() < 1e-12);
        assert_eq!(mean_coverage(&h, &[]).unwrap_err(), MetricError::EmptyInput);
    }

    #[test]
    fn ece_examples() {
        let r = ece(&[1.0, 1.0], &[true, true], 15).unwrap();
        assert!(r.abs() < 1e-12);
        let r = ece(&[1.0, 1.0], &[false, false], 15).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let r = ece(&[0.8, 0.6], &[true, false], 1).unwrap();
        assert!((r - 0.2).abs() < 1e-12);
        assert_eq!(
            ece(&[0.5], &[], 15).unwrap_err(),
            MetricError::LengthMismatch
        );
    }

    #[test]
    fn gain_cases() {
        assert_eq!(hierarchical_gain(0.5, 0.5).unwrap(), 0.0);
        let g = hierarchical_gain(42.27e-3, 36.51e-3).unwrap();
        assert!((g - 13.626).abs() < 0.01);
        assert!(hierarchical_gain(0.3, 0.4).unwrap() < 0.0);
        assert_eq!(
            hierarchical_gain(0.0, 0.1).unwrap_err(),
            MetricError::ZeroBaseline
        );
    }

    fn single_sample_table(h: &Hierarchy) -> ScoreTable {
        // probs a1=0.4, a2=0.35, b=0.25; label b; canonical order [b, a1, a2]
        ScoreTable::new(
            vec!["s0".into()],
            vec![h.node_by_name("b").unwrap()],
            vec![0.25, 0.4, 0.35],
            3,
            ScoreKind::Probs,
        )
    }

    #[test]
    fn single_sample_curve_points() {
        let h = five_node();
        let table = single_sample_table(&h);
        let curve = rc_curve(&h, &table, RuleId::Climbing, LossKind::ZeroOne).unwrap();
        let cov_a = h.node_coverage(h.node_by_name("a").unwrap());
        assert_eq!(curve.points.len(), 3);
        let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.coverage, p.value)).collect();
        assert_eq!(pts[0], (0.0, 0.0));
        assert!((pts[1].0 - cov_a).abs() < 1e-12 && pts[1].1 == 1.0);
        assert_eq!(pts[2], (1.0, 1.0));
        // thresholds non-increasing in ascending-coverage order
        assert!(curve
            .points
            .windows(2)
            .all(|w| w[0].threshold >= w[1].threshold));

        let area = haurc(&curve).unwrap();
        let expected = 0.5 * cov_a + (1.0 - cov_a);
        assert!((area - expected).abs() < 1e-12);
        assert!((expected - 0.8155).abs() < 5e-4);
    }

    #[test]
    fn haurc_degenerate() {
        let c = Curve {
            points: vec![
                CurvePoint {
                    threshold: 1.0,
                    coverage: 0.0,
                    value: 0.25,
                },
                CurvePoint {
                    threshold: 0.0,
                    coverage: 1.0,
                    value: 0.25,
                },
            ],
            kind: CurveKind::Risk,
        };
        assert!((haurc(&c).unwrap() - 0.25).abs() < 1e-12);
        let short = Curve {
            points: c.points[..1].to_vec(),
            kind: CurveKind::Risk,
        };
        assert_eq!(haurc(&short).unwrap_err(), MetricError::TooFewPoints);
    }

    #[test]
    fn cc_curve_extremes() {
        let h = five_node();
        let table = single_sample_table(&h);
        let curve = cc_curve(&h, &table, RuleId::Climbing, 15).unwrap();
        let zero_cov = curve
            .points
            .iter()
            .find(|p| p.coverage == 0.0)
            .expect("all-root point");
        assert_eq!(zero_cov.value, 0.0);
    }

    #[test]
    fn perfect_classifier_zero_haurc() {
        let h = five_node();
        // one-hot on the true label for each of the 3 leaves
        let labels: Vec<NodeId> = h.leaves().to_vec();
        let mut values = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                values.push(if i == j { 1.0 } else { 0.0 });
            }
        }
        let table = ScoreTable::new(
            vec!["s0".into(), "s1".into(), "s2".into()],
            labels,
            values,
            3,
            ScoreKind::Probs,
        );
        let curve = rc_curve(&h, &table, RuleId::Climbing, LossKind::ZeroOne).unwrap();
        assert_eq!(haurc(&curve).unwrap(), 0.0);
    }

    #[test]
    fn eval_report_consistency() {
        let h = five_node();
        let table = single_sample_table(&h);
        let (report, _) = evaluate(&h, &table, RuleId::Climbing, LossKind::ZeroOne, 15).unwrap();
        assert_eq!(report.n_samples, 1);
        assert!((report.full_coverage_risk - 1.0).abs() < 1e-12);
        let expected_gain = 100.0 * (report.haurc_selective_baseline - report.haurc)
            / report.haurc_selective_baseline;
        assert!((report.hierarchical_gain_percent - expected_gain).abs() < 1e-12);
    }
}

//! Per-sample leaf scores: CSV ingestion, temperature scaling, and lifting
//! leaf probabilities to internal-node confidences.

use std::io::Read;

use thiserror::Error;

use crate::hierarchy::{Hierarchy, NodeId};

/// Row-sum tolerance for probability tables before renormalization.
pub const ROW_SUM_TOL: f64 = 1e-4;

/// Floor applied when taking logs of probabilities as surrogate logits.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("UnknownLeafColumn({0})")]
    UnknownLeafColumn(String),
    #[error("MissingLeafColumn({0})")]
    MissingLeafColumn(String),
    #[error("UnknownLabel({0})")]
    UnknownLabel(String),
    #[error("NonFiniteValue(row {0})")]
    NonFiniteValue(usize),
    #[error("RowSumOutOfTolerance(row {row}, sum {sum})")]
    RowSumOutOfTolerance { row: usize, sum: f64 },
    #[error("KindMismatch")]
    KindMismatch,
    #[error("EmptyTable")]
    EmptyTable,
    #[error("MalformedCsv: {0}")]
    MalformedCsv(#[from] csv::Error),
    #[error("MalformedHeader")]
    MalformedHeader,
    #[error("MalformedNumber(row {0})")]
    MalformedNumber(usize),
}

/// Interpretation of the values in a [`ScoreTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Probs,
    Logits,
}

impl std::str::FromStr for ScoreKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "probs" => Ok(ScoreKind::Probs),
            "logits" => Ok(ScoreKind::Logits),
            other => Err(format!("unknown score kind: {other}")),
        }
    }
}

/// Logit scaling divisor fitted by [`fit_temperature`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(pub f64);

/// Golden-section search bounds for the temperature.
pub const TEMP_BOUNDS: (f64, f64) = (0.05, 10.0);
const TEMP_TOL: f64 = 1e-4;

/// Per-sample leaf score rows plus ground-truth leaf labels.
///
/// Columns follow the owning hierarchy's canonical leaf order
/// ([`Hierarchy::leaves`]); rows are stored row-major.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    sample_ids: Vec<String>,
    labels: Vec<NodeId>,
    values: Vec<f64>,
    n_cols: usize,
    kind: ScoreKind,
}

impl ScoreTable {
    pub fn new(
        sample_ids: Vec<String>,
        labels: Vec<NodeId>,
        values: Vec<f64>,
        n_cols: usize,
        kind: ScoreKind,
    ) -> Self {
        assert_eq!(sample_ids.len(), labels.len());
        assert_eq!(values.len(), sample_ids.len() * n_cols);
        ScoreTable {
            sample_ids,
            labels,
            values,
            n_cols,
            kind,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn label(&self, i: usize) -> NodeId {
        self.labels[i]
    }

    pub fn labels(&self) -> &[NodeId] {
        &self.labels
    }

    pub fn sample_id(&self, i: usize) -> &str {
        &self.sample_ids[i]
    }

    /// Column index of a leaf in the canonical order, given the hierarchy.
    pub fn leaf_col(h: &Hierarchy, leaf: NodeId) -> usize {
        h.leaves()
            .iter()
            .position(|&l| l == leaf)
            .expect("leaf of h")
    }

    /// Converts a logits table to probabilities at temperature `t`.
    pub fn to_probs(&self, t: Temperature) -> ScoreTable {
        match self.kind {
            ScoreKind::Probs => self.clone(),
            ScoreKind::Logits => {
                let mut values = Vec::with_capacity(self.values.len());
                for i in 0..self.n_samples() {
                    let scaled: Vec<f64> = self.row(i).iter().map(|&z| z / t.0).collect();
                    values.extend(softmax(&scaled));
                }
                ScoreTable::new(
                    self.sample_ids.clone(),
                    self.labels.clone(),
                    values,
                    self.n_cols,
                    ScoreKind::Probs,
                )
            }
        }
    }

    /// Reinterprets a probability table as surrogate logits via
    /// `ln(max(p, 1e-12))`, preserving ranking.
    pub fn to_surrogate_logits(&self) -> ScoreTable {
        let values = self
            .values
            .iter()
            .map(|&p| p.max(PROB_FLOOR).ln())
            .collect();
        ScoreTable::new(
            self.sample_ids.clone(),
            self.labels.clone(),
            values,
            self.n_cols,
            ScoreKind::Logits,
        )
    }

    /// Serializes to the scores CSV format (`sample_id,label,<leaf...>`).
    pub fn to_csv(&self, h: &Hierarchy) -> String {
        let mut out = String::from("sample_id,label");
        for &leaf in h.leaves() {
            out.push(',');
            out.push_str(h.name(leaf));
        }
        out.push('\n');
        for i in 0..self.n_samples() {
            out.push_str(self.sample_id(i));
            out.push(',');
            out.push_str(h.name(self.label(i)));
            for v in self.row(i) {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// One sample's confidence for every node: leaf probabilities plus internal
/// sums, indexed by `NodeId`.
#[derive(Debug, Clone)]
pub struct NodeScores {
    values: Vec<f64>,
}

impl NodeScores {
    #[inline]
    pub fn get(&self, v: NodeId) -> f64 {
        self.values[v.index()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Loads a scores CSV (`sample_id,label,<leaf names...>`) and reorders leaf
/// columns to the hierarchy's canonical leaf order.
pub fn load_scores<R: Read>(
    reader: R,
    h: &Hierarchy,
    kind: ScoreKind,
) -> Result<ScoreTable, ScoreError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "sample_id" || &header[1] != "label" {
        return Err(ScoreError::MalformedHeader);
    }

    let n_leaves = h.leaves().len();
    // csv column index -> canonical column index
    let mut col_map = Vec::with_capacity(header.len() - 2);
    let mut seen = vec![false; n_leaves];
    for raw in header.iter().skip(2) {
        let name = raw.trim();
        let leaf = h
            .node_by_name(name)
            .filter(|&v| h.is_leaf(v))
            .ok_or_else(|| ScoreError::UnknownLeafColumn(name.to_owned()))?;
        let col = ScoreTable::leaf_col(h, leaf);
        if seen[col] {
            return Err(ScoreError::UnknownLeafColumn(name.to_owned()));
        }
        seen[col] = true;
        col_map.push(col);
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(ScoreError::MissingLeafColumn(
            h.name(h.leaves()[missing]).to_owned(),
        ));
    }

    let mut sample_ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != n_leaves + 2 {
            return Err(ScoreError::MalformedNumber(i));
        }
        sample_ids.push(record[0].to_owned());
        let label_name = record[1].trim();
        let label = h
            .node_by_name(label_name)
            .filter(|&v| h.is_leaf(v))
            .ok_or_else(|| ScoreError::UnknownLabel(label_name.to_owned()))?;
        labels.push(label);

        let mut row = vec![0.0; n_leaves];
        let mut sum = 0.0;
        for (j, field) in record.iter().skip(2).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| ScoreError::MalformedNumber(i))?;
            if !v.is_finite() {
                return Err(ScoreError::NonFiniteValue(i));
            }
            row[col_map[j]] = v;
            sum += v;
        }
        if kind == ScoreKind::Probs {
            if row.iter().any(|&v| v < 0.0) {
                return Err(ScoreError::RowSumOutOfTolerance { row: i, sum });
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ScoreError::RowSumOutOfTolerance { row: i, sum });
            }
        }
        values.extend_from_slice(&row);
    }

    Ok(ScoreTable::new(sample_ids, labels, values, n_leaves, kind))
}

/// Numerically stable softmax (max-subtraction); preserves the argmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Mean negative log-likelihood of the true leaf under `softmax(logits / t)`.
fn mean_nll(table: &ScoreTable, h: &Hierarchy, t: f64) -> f64 {
    let n = table.n_samples();
    let mut total = 0.0;
    for i in 0..n {
        let scaled: Vec<f64> = table.row(i).iter().map(|&z| z / t).collect();
        let probs = softmax(&scaled);
        let col = ScoreTable::leaf_col(h, table.label(i));
        total -= probs[col].max(PROB_FLOOR).ln();
    }
    total / n as f64
}

/// Fits the temperature minimizing mean NLL by golden-section search over
/// `[0.05, 10.0]` to absolute tolerance 1e-4 in `t`.
pub fn fit_temperature(table: &ScoreTable, h: &Hierarchy) -> Result<Temperature, ScoreError> {
    if table.kind() != ScoreKind::Logits {
        return Err(ScoreError::KindMismatch);
    }
    if table.n_samples() == 0 {
        return Err(ScoreError::EmptyTable);
    }
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = TEMP_BOUNDS;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = mean_nll(table, h, x1);
    let mut f2 = mean_nll(table, h, x2);
    while hi - lo > TEMP_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = mean_nll(table, h, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = mean_nll(table, h, x2);
        }
    }
    Ok(Temperature(0.5 * (lo + hi)))
}

/// Lifts one probability row to confidences over all nodes.
///
/// The row is renormalized to sum exactly 1, internal nodes get the sum of
/// their children (one bottom-up pass in reverse topological order), and the
/// result is clamped to `[0, 1]`.
pub fn lift_to_nodes(h: &Hierarchy, prob_row: &[f64]) -> NodeScores {
    debug_assert_eq!(prob_row.len(), h.leaves().len());
    let sum: f64 = prob_row.iter().sum();
    let mut values = vec![0.0; h.node_count()];
    for (col, &leaf) in h.leaves().iter().enumerate() {
        values[leaf.index()] = prob_row[col] / sum;
    }
    for &v in h.topo_order().iter().rev() {
        if !h.is_leaf(v) {
            values[v.index()] = h.children(v).iter().map(|c| values[c.index()]).sum();
        }
    }
    for v in values.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    NodeScores { values }
}

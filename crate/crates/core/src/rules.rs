//! Hierarchical selective inference rules.
//!
//! Each rule maps one sample's node confidences and a threshold θ to a
//! predicted node. All rules use the same comparison direction: a node is
//! accepted as soon as its confidence is ≥ θ, so θ = 0 always yields a leaf
//! and θ just above 1 always yields the root.

use crate::hierarchy::{Hierarchy, HierarchyError, NodeId};
use crate::scores::NodeScores;

/// Default tightness coefficient for [`min_correct_threshold`].
pub const DEFAULT_EPS_TIGHT: f64 = 1e-9;

/// A committed prediction: the node and the confidence it was accepted at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub node: NodeId,
    pub confidence: f64,
}

/// The four supported inference rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleId {
    Selective,
    Climbing,
    MaxCoverage,
    Jumping,
}

impl std::str::FromStr for RuleId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "selective" => Ok(RuleId::Selective),
            "climbing" => Ok(RuleId::Climbing),
            "max-coverage" => Ok(RuleId::MaxCoverage),
            "jumping" => Ok(RuleId::Jumping),
            other => Err(format!("unknown rule: {other}")),
        }
    }
}

impl std::fmt::Display for RuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self {
            RuleId::Selective => "selective",
            RuleId::Climbing => "climbing",
            RuleId::MaxCoverage => "max-coverage",
            RuleId::Jumping => "jumping",
        };
        write!(f, "{tag}")
    }
}

/// Argmax over leaves; ties broken by lowest `NodeId` for determinism.
pub fn argmax_leaf(h: &Hierarchy, ns: &NodeScores) -> NodeId {
    let mut best = h.leaves()[0];
    let mut best_val = ns.get(best);
    for &leaf in &h.leaves()[1..] {
        let v = ns.get(leaf);
        if v > best_val {
            best = leaf;
            best_val = v;
        }
    }
    best
}

/// Flat selective baseline: the argmax leaf if confident enough, else root.
pub fn infer_selective(h: &Hierarchy, ns: &NodeScores, theta: f64) -> Prediction {
    let leaf = argmax_leaf(h, ns);
    let node = if ns.get(leaf) >= theta {
        leaf
    } else {
        h.root()
    };
    Prediction {
        node,
        confidence: ns.get(node),
    }
}

/// Climbing: start at the argmax leaf and walk toward the root until the
/// confidence threshold is met.
pub fn infer_climbing(h: &Hierarchy, ns: &NodeScores, theta: f64) -> Prediction {
    let mut v = argmax_leaf(h, ns);
    while ns.get(v) < theta {
        match h.parent(v) {
            Some(p) => v = p,
            None => break,
        }
    }
    Prediction {
        node: v,
        confidence: ns.get(v),
    }
}

/// Max-Coverage: among all nodes with confidence ≥ θ, the one with maximal
/// coverage; ties broken by higher confidence, then by lower `NodeId`.
pub fn infer_max_coverage(h: &Hierarchy, ns: &NodeScores, theta: f64) -> Prediction {
    let mut best: Option<(f64, f64, NodeId)> = None;
    for i in 0..h.node_count() {
        let v = NodeId(i as u32);
        let conf = ns.get(v);
        if conf < theta {
            continue;
        }
        let cov = h.node_coverage(v);
        let better = match best {
            None => true,
            Some((bc, bconf, _)) => cov > bc || (cov == bc && conf > bconf),
        };
        if better {
            best = Some((cov, conf, v));
        }
    }
    let node = best.map(|(_, _, v)| v).unwrap_or(h.root());
    Prediction {
        node,
        confidence: ns.get(node),
    }
}

/// Jumping: traverse the argmax node at each height until the threshold is
/// met.
///
/// Leaves are implicitly padded to a common depth with dummy chain nodes at
/// inference time; a dummy inherits its leaf's confidence and is reported as
/// that leaf, so the user-visible node set never changes.
pub fn infer_jumping(h: &Hierarchy, ns: &NodeScores, theta: f64) -> Prediction {
    let d_max = h
        .leaves()
        .iter()
        .map(|&l| h.depth(l))
        .max()
        .expect("at least 2 leaves");

    let mut v = argmax_leaf(h, ns);
    if ns.get(v) >= theta {
        return Prediction {
            node: v,
            confidence: ns.get(v),
        };
    }
    for height in 1..=d_max {
        // Padded-tree height: internal nodes sit at d_max - depth; a leaf's
        // dummy chain spans heights 1 ..= d_max - depth(leaf).
        let mut best: Option<(f64, NodeId)> = None;
        for i in 0..h.node_count() {
            let u = NodeId(i as u32);
            let candidate = if h.is_leaf(u) {
                height <= d_max - h.depth(u)
            } else {
                d_max - h.depth(u) == height
            };
            if candidate {
                let conf = ns.get(u);
                if best.is_none_or(|(bc, _)| conf > bc) {
                    best = Some((conf, u));
                }
            }
        }
        if let Some((conf, u)) = best {
            v = u;
            if conf >= theta {
                return Prediction {
                    node: v,
                    confidence: conf,
                };
            }
        }
    }
    Prediction {
        node: h.root(),
        confidence: ns.get(h.root()),
    }
}

/// Dispatch by rule tag.
pub fn infer(rule: RuleId, h: &Hierarchy, ns: &NodeScores, theta: f64) -> Prediction {
    match rule {
        RuleId::Selective => infer_selective(h, ns, theta),
        RuleId::Climbing => infer_climbing(h, ns, theta),
        RuleId::MaxCoverage => infer_max_coverage(h, ns, theta),
        RuleId::Jumping => infer_jumping(h, ns, theta),
    }
}

/// Variant of the threshold update in the inverse traversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TightenVariant {
    /// `f(v) + ε·f(parent(v))` — can overshoot the first correct ancestor's
    /// confidence when the gap is below `ε·f(parent)`, landing on a higher
    /// (still correct) ancestor.
    #[default]
    Additive,
    /// `f(v) + ε·(f(parent(v)) − f(v))` — never overshoots.
    Convex,
}

/// Inverse traversal for Climbing: the minimal threshold that makes the
/// prediction for this sample hierarchically correct.
///
/// Walks up from the argmax leaf; at every node outside the label's ancestor
/// path the threshold is raised just past that node's confidence. The result
/// is clamped to `[0, 1]` and satisfies: `infer_climbing` at the returned
/// threshold is correct for this sample.
pub fn min_correct_threshold(
    h: &Hierarchy,
    ns: &NodeScores,
    label: NodeId,
    eps_tight: f64,
    variant: TightenVariant,
) -> Result<f64, HierarchyError> {
    if !h.is_leaf(label) {
        return Err(HierarchyError::LabelNotLeaf);
    }
    let mut theta = 0.0;
    let mut v = argmax_leaf(h, ns);
    while !h.is_ancestor(v, label) {
        let p = h.parent(v).expect("only root is a universal ancestor");
        theta = match variant {
            TightenVariant::Additive => ns.get(v) + eps_tight * ns.get(p),
            TightenVariant::Convex => ns.get(v) + eps_tight * (ns.get(p) - ns.get(v)),
        };
        v = p;
    }
    Ok(theta.clamp(0.0, 1.0))
}

/// Confidence of the last incorrect node on the argmax-to-root climbing path,
/// or `None` when the argmax leaf is already correct.
///
/// Climbing is correct at θ exactly when θ is strictly above this value, which
/// makes batch accuracy-vs-threshold sweeps a sorted-array lookup.
pub fn last_incorrect_confidence(
    h: &Hierarchy,
    ns: &NodeScores,
    label: NodeId,
) -> Result<Option<f64>, HierarchyError> {
    if !h.is_leaf(label) {
        return Err(HierarchyError::LabelNotLeaf);
    }
    let mut v = argmax_leaf(h, ns);
    let mut last = None;
    while !h.is_ancestor(v, label) {
        last = Some(ns.get(v));
        v = h.parent(v).expect("only root is a universal ancestor");
    }
    Ok(last)
}

//! Seeded generators for random hierarchies and synthetic classifier
//! outputs, plus brute-force oracles used by property tests and the
//! threshold-guarantee Monte Carlo harness.
//!
//! Everything here is deterministic per seed (ChaCha8 keyed by the 64-bit
//! config seed; parallel trials derive per-trial seeds from the base seed).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::guarantee::{calibrate_threshold, epsilon_for_lenient};
use crate::hierarchy::{Hierarchy, NodeId};
use crate::metrics::{Curve, CurveKind, CurvePoint, LossKind};
use crate::rules::{self, last_incorrect_confidence, RuleId};
use crate::scores::{lift_to_nodes, ScoreKind, ScoreTable};

/// Configuration shared by all generators.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_leaves: usize,
    pub max_branching: usize,
    /// Concentration of probability mass on the target leaf; the target's
    /// share is `0.5 * (1 + u^(1/sharpness))` with `u ~ U(0,1)`, so it always
    /// exceeds 1/2 and tends to 1 as sharpness grows.
    pub sharpness: f64,
    /// Chance that the target leaf (the argmax) is the true label.
    pub correct_prob: f64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_leaves < 2 {
            return Err("n_leaves must be >= 2".into());
        }
        if self.max_branching < 2 {
            return Err("max_branching must be >= 2".into());
        }
        if self.sharpness <= 0.0 {
            return Err("sharpness must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.correct_prob) {
            return Err("correct_prob must be in [0,1]".into());
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(
            self.seed
                .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        )
    }
}

/// Random tree with exactly `n_leaves` leaves; every internal node has
/// between 2 and `max_branching` children.
///
/// Built bottom-up: active subtree roots are grouped under fresh parents
/// until a single root remains.
pub fn random_hierarchy(cfg: &GeneratorConfig) -> Hierarchy {
    cfg.validate().expect("valid config");
    let mut rng = cfg.rng(1);

    let mut names: Vec<String> = (0..cfg.n_leaves).map(|i| format!("leaf_{i}")).collect();
    let mut parent: Vec<Option<usize>> = vec![None; cfg.n_leaves];
    let mut active: Vec<usize> = (0..cfg.n_leaves).collect();
    let mut internal = 0usize;

    while active.len() > 1 {
        let k = rng.random_range(2..=cfg.max_branching.min(active.len()));
        let new = names.len();
        names.push(if k == active.len() {
            "root".to_string()
        } else {
            internal += 1;
            format!("node_{internal}")
        });
        parent.push(None);
        let mut picked = rand::seq::index::sample(&mut rng, active.len(), k).into_vec();
        picked.sort_unstable_by(|a, b| b.cmp(a));
        for idx in picked {
            parent[active.swap_remove(idx)] = Some(new);
        }
        active.push(new);
    }

    Hierarchy::from_parents(names, parent).expect("generator output is valid")
}

fn peaked_row(rng: &mut ChaCha8Rng, n_leaves: usize, target: usize, sharpness: f64) -> Vec<f64> {
    let u: f64 = rng.random();
    let p = 0.5 * (1.0 + u.powf(1.0 / sharpness));
    // remainder spread by exponential weights
    let mut row = vec![0.0; n_leaves];
    let mut weights = Vec::with_capacity(n_leaves - 1);
    let mut total = 0.0;
    for j in 0..n_leaves {
        if j != target {
            let w = -rng.random::<f64>().max(f64::MIN_POSITIVE).ln();
            weights.push((j, w));
            total += w;
        }
    }
    row[target] = p;
    for (j, w) in weights {
        row[j] = (1.0 - p) * w / total;
    }
    row
}

/// Synthetic probability table: a true leaf drawn uniformly per sample, mass
/// concentrated on it with probability `correct_prob`, otherwise on a random
/// other leaf. Top-1 leaf accuracy is `correct_prob` by construction.
pub fn synth_scores(cfg: &GeneratorConfig, h: &Hierarchy, n_samples: usize) -> ScoreTable {
    cfg.validate().expect("valid config");
    let mut rng = cfg.rng(2);
    let n_leaves = h.leaves().len();

    let mut sample_ids = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    let mut values = Vec::with_capacity(n_samples * n_leaves);
    for i in 0..n_samples {
        sample_ids.push(format!("s{i}"));
        let true_col = rng.random_range(0..n_leaves);
        labels.push(h.leaves()[true_col]);
        let target = if rng.random::<f64>() < cfg.correct_prob {
            true_col
        } else {
            let mut other = rng.random_range(0..n_leaves - 1);
            if other >= true_col {
                other += 1;
            }
            other
        };
        values.extend(peaked_row(&mut rng, n_leaves, target, cfg.sharpness));
    }
    ScoreTable::new(sample_ids, labels, values, n_leaves, ScoreKind::Probs)
}

/// Like [`synth_scores`] but a wrong target is preferentially a *sibling*
/// leaf of the truth, so the shared parent stays hierarchically correct.
/// Used for fixtures where internal nodes rescue wrong leaf predictions.
pub fn synth_scores_sibling_confusion(
    cfg: &GeneratorConfig,
    h: &Hierarchy,
    n_samples: usize,
) -> ScoreTable {
    cfg.validate().expect("valid config");
    let mut rng = cfg.rng(3);
    let n_leaves = h.leaves().len();
    let col_of = |leaf: NodeId| h.leaves().iter().position(|&l| l == leaf).unwrap();

    let mut sample_ids = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    let mut values = Vec::with_capacity(n_samples * n_leaves);
    for i in 0..n_samples {
        sample_ids.push(format!("s{i}"));
        let true_col = rng.random_range(0..n_leaves);
        let true_leaf = h.leaves()[true_col];
        labels.push(true_leaf);
        let target = if rng.random::<f64>() < cfg.correct_prob {
            true_col
        } else {
            let parent = h.parent(true_leaf).expect("leaf has a parent");
            let siblings: Vec<usize> = h
                .children(parent)
                .iter()
                .filter(|&&c| c != true_leaf && h.is_leaf(c))
                .map(|&c| col_of(c))
                .collect();
            if siblings.is_empty() {
                let mut other = rng.random_range(0..n_leaves - 1);
                if other >= true_col {
                    other += 1;
                }
                other
            } else {
                siblings[rng.random_range(0..siblings.len())]
            }
        };
        values.extend(peaked_row(&mut rng, n_leaves, target, cfg.sharpness));
    }
    ScoreTable::new(sample_ids, labels, values, n_leaves, ScoreKind::Probs)
}

/// Calibrated-by-construction logits: each row's label is *sampled from* the
/// row's own softmax distribution and the logits are the log-probabilities,
/// so the NLL-minimizing temperature concentrates near `scale`.
pub fn synth_calibrated_logits(
    cfg: &GeneratorConfig,
    h: &Hierarchy,
    n_samples: usize,
    scale: f64,
) -> ScoreTable {
    cfg.validate().expect("valid config");
    let mut rng = cfg.rng(4);
    let n_leaves = h.leaves().len();

    let mut sample_ids = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    let mut values = Vec::with_capacity(n_samples * n_leaves);
    for i in 0..n_samples {
        sample_ids.push(format!("s{i}"));
        let target = rng.random_range(0..n_leaves);
        let row = peaked_row(&mut rng, n_leaves, target, cfg.sharpness);
        // label ~ Categorical(row)
        let mut u: f64 = rng.random();
        let mut label_col = n_leaves - 1;
        for (j, &p) in row.iter().enumerate() {
            if u < p {
                label_col = j;
                break;
            }
            u -= p;
        }
        labels.push(h.leaves()[label_col]);
        values.extend(row.iter().map(|&p| scale * p.max(1e-300).ln()));
    }
    ScoreTable::new(sample_ids, labels, values, n_leaves, ScoreKind::Logits)
}

/// Reference risk-coverage curve over a uniform threshold grid on
/// `[0, 1 + ulp]`; no breakpoint shortcuts, no deduplication.
pub fn brute_force_rc(
    h: &Hierarchy,
    table: &ScoreTable,
    rule: RuleId,
    loss: LossKind,
    grid_size: usize,
) -> Curve {
    assert!(grid_size >= 2);
    let top = crate::metrics::theta_above_one();
    let lifted: Vec<_> = (0..table.n_samples())
        .map(|i| lift_to_nodes(h, table.row(i)))
        .collect();
    let n = table.n_samples() as f64;

    let mut points = Vec::with_capacity(grid_size);
    for g in 0..grid_size {
        let theta = top * g as f64 / (grid_size - 1) as f64;
        let mut cov_sum = 0.0;
        let mut loss_sum = 0.0;
        for (ns, &y) in lifted.iter().zip(table.labels()) {
            let p = rules::infer(rule, h, ns, theta);
            cov_sum += h.node_coverage(p.node);
            loss_sum += match loss {
                LossKind::ZeroOne => {
                    if h.is_ancestor(p.node, y) {
                        0.0
                    } else {
                        1.0
                    }
                }
                LossKind::Severity => crate::metrics::severity_loss(h, p.node, y).unwrap(),
            };
        }
        points.push(CurvePoint {
            threshold: theta,
            coverage: cov_sum / n,
            value: loss_sum / n,
        });
    }
    points.reverse(); // ascending coverage for monotone rules
    Curve {
        points,
        kind: CurveKind::Risk,
    }
}

/// Summary of the Monte Carlo check of the calibration guarantee.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem1Summary {
    /// Fraction of calibration draws whose test-pool accuracy landed within
    /// ε of the target accuracy.
    pub empirical_confidence: f64,
    pub mean_abs_error: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub delta: f64,
    pub n_cal: usize,
    pub n_trials: usize,
    pub test_pool: usize,
}

/// Repeatedly calibrates on fresh draws and measures accuracy at θ̂ on a
/// fixed test pool.
///
/// Pool accuracy at θ is a sorted-array lookup: a sample is correct exactly
/// when θ is strictly above the confidence of the last incorrect node on its
/// climbing path.
pub fn monte_carlo_theorem1(
    cfg: &GeneratorConfig,
    alpha: f64,
    delta: f64,
    n_cal: usize,
    n_trials: usize,
    test_pool: usize,
) -> Theorem1Summary {
    assert!(n_trials >= 100);
    let h = random_hierarchy(cfg);
    let (epsilon, _) = epsilon_for_lenient(n_cal as u64, alpha, delta).expect("valid params");

    let pool_cfg = GeneratorConfig {
        seed: cfg.seed.wrapping_add(0x0700_D1E5),
        ..*cfg
    };
    let pool = synth_scores(&pool_cfg, &h, test_pool);
    let mut cutoffs: Vec<f64> = (0..pool.n_samples())
        .map(|i| {
            let ns = lift_to_nodes(&h, pool.row(i));
            // always-correct samples sort below every threshold
            last_incorrect_confidence(&h, &ns, pool.label(i))
                .expect("leaf labels")
                .unwrap_or(-1.0)
        })
        .collect();
    cutoffs.sort_by(f64::total_cmp);

    let accuracy_at = |theta: f64| -> f64 {
        let correct = cutoffs.partition_point(|&c| c < theta);
        correct as f64 / cutoffs.len() as f64
    };

    let results: Vec<(bool, f64)> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let trial_cfg = GeneratorConfig {
                seed: cfg
                    .seed
                    .wrapping_add(1_000_003)
                    .wrapping_mul(trial as u64 + 1),
                ..*cfg
            };
            let cal = synth_scores(&trial_cfg, &h, n_cal);
            let out = calibrate_threshold(&h, &cal, RuleId::Climbing, alpha, delta, 1e-9)
                .expect("valid calibration");
            let acc = accuracy_at(out.certificate.theta_hat);
            let err = (acc - (1.0 - alpha)).abs();
            (err <= epsilon, err)
        })
        .collect();

    let hits = results.iter().filter(|(ok, _)| *ok).count();
    let mean_err = results.iter().map(|(_, e)| e).sum::<f64>() / n_trials as f64;
    Theorem1Summary {
        empirical_confidence: hits as f64 / n_trials as f64,
        mean_abs_error: mean_err,
        epsilon,
        alpha,
        delta,
        n_cal,
        n_trials,
        test_pool,
    }
}

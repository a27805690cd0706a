//! Threshold calibration with a distribution-free guarantee.
//!
//! Calibration computes, for each calibration sample, the minimal threshold
//! that would have made the Climbing prediction hierarchically correct, and
//! returns the `⌈(n+1)(1-α)⌉`-th order statistic. For exchangeable data the
//! marginal correctness probability of the calibrated threshold follows a
//! `Beta(n+1-l, l)` law with `l = ⌊(n+1)α⌋`, which lets any one of
//! `(n, α, ε, δ)` be solved from the other three via the Beta CDF.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::Hierarchy;
use crate::metrics::{lift_table, mean_coverage, pairwise_sum};
use crate::rules::{self, Prediction, RuleId, TightenVariant};
use crate::scores::{fit_temperature, ScoreKind, ScoreTable, Temperature};

#[derive(Debug, Error, PartialEq)]
pub enum GuaranteeError {
    #[error("DomainError({0})")]
    DomainError(f64),
    #[error("DegenerateBeta: floor((n+1)*alpha) = 0")]
    DegenerateBeta,
    #[error("CapExceeded")]
    CapExceeded,
    #[error("UnsupportedRule({0})")]
    UnsupportedRule(RuleId),
    #[error("EmptyCalibrationSet")]
    EmptyCalibrationSet,
    #[error("EmptyInput")]
    EmptyInput,
    #[error("InvalidParameter({0})")]
    InvalidParameter(&'static str),
}

/// Parameters of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn new(a: f64, b: f64) -> Self {
        assert!(a > 0.0 && b > 0.0, "Beta parameters must be positive");
        BetaParams { a, b }
    }
}

// Lanczos approximation, g = 7, n = 9; coefficients kept at published
// precision.
#[allow(clippy::excessive_precision)]
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

// Continued fraction for I_x(a,b) by the modified Lentz method.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;

    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=MAX_ITER {
        let m_f = m as f64;
        let m2 = 2.0 * m_f;

        let aa = m_f * (b - m_f) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m_f) * (qab + m_f) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;

        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`, the CDF of
/// `Beta(a, b)` at `x`. Absolute error ≤ 1e-10.
///
/// Uses the continued-fraction expansion, switching to the symmetric form for
/// `x > (a+1)/(a+b+2)`.
pub fn beta_cdf(p: BetaParams, x: f64) -> Result<f64, GuaranteeError> {
    let (a, b) = (p.a, p.b);
    if !(0.0..=1.0).contains(&x) {
        return Err(GuaranteeError::DomainError(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x) / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x) / b)
    }
}

/// The marginal-correctness law `Beta(n+1-l, l)` with `l = ⌊(n+1)α⌋`.
///
/// When `l = 0` the law degenerates to a point mass at 1; the closest
/// non-degenerate member `Beta(n, 1)` is returned with `degenerate = true`.
pub fn coverage_law(n: u64, alpha: f64) -> Result<(BetaParams, bool), GuaranteeError> {
    if n < 1 {
        return Err(GuaranteeError::InvalidParameter("n"));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(GuaranteeError::InvalidParameter("alpha"));
    }
    let l = (((n + 1) as f64) * alpha).floor();
    if l < 1.0 {
        Ok((BetaParams::new(n as f64, 1.0), true))
    } else {
        Ok((BetaParams::new((n + 1) as f64 - l, l), false))
    }
}

fn band_mass(law: BetaParams, alpha: f64, eps: f64) -> f64 {
    let hi = (1.0 - alpha + eps).min(1.0);
    let lo = (1.0 - alpha - eps).max(0.0);
    beta_cdf(law, hi).unwrap() - beta_cdf(law, lo).unwrap()
}

fn epsilon_for_law(law: BetaParams, alpha: f64, delta: f64) -> f64 {
    // minimal eps with band mass >= 1 - delta; band mass is non-decreasing
    let target = 1.0 - delta;
    if band_mass(law, alpha, 0.0) >= target {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if band_mass(law, alpha, mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Minimal ε such that `P(|C(n,α) - (1-α)| ≤ ε) ≥ 1-δ` under the
/// `Beta(n+1-l, l)` law, found by bisection.
pub fn epsilon_for(n: u64, alpha: f64, delta: f64) -> Result<f64, GuaranteeError> {
    if !(0.0 < delta && delta < 1.0) {
        return Err(GuaranteeError::InvalidParameter("delta"));
    }
    let (law, degenerate) = coverage_law(n, alpha)?;
    if degenerate {
        return Err(GuaranteeError::DegenerateBeta);
    }
    Ok(epsilon_for_law(law, alpha, delta))
}

/// As [`epsilon_for`] but substituting `Beta(n, 1)` in the degenerate
/// `l = 0` regime instead of failing; returns the degeneracy flag.
pub fn epsilon_for_lenient(n: u64, alpha: f64, delta: f64) -> Result<(f64, bool), GuaranteeError> {
    if !(0.0 < delta && delta < 1.0) {
        return Err(GuaranteeError::InvalidParameter("delta"));
    }
    let (law, degenerate) = coverage_law(n, alpha)?;
    Ok((epsilon_for_law(law, alpha, delta), degenerate))
}

/// Guarantee failure probability for a given band half-width:
/// `1 - [F(1-α+ε) - F(1-α-ε)]`.
pub fn delta_for(n: u64, alpha: f64, epsilon: f64) -> Result<f64, GuaranteeError> {
    if !(0.0 < epsilon && epsilon < 1.0) {
        return Err(GuaranteeError::InvalidParameter("epsilon"));
    }
    let (law, degenerate) = coverage_law(n, alpha)?;
    if degenerate {
        return Err(GuaranteeError::DegenerateBeta);
    }
    Ok(1.0 - band_mass(law, alpha, epsilon))
}

const N_CAP: u64 = 100_000_000;

/// Smallest calibration size `n` with `epsilon_for(n, α, δ) ≤ ε`, found by
/// doubling then binary search; capped at 10^8.
pub fn n_for(alpha: f64, epsilon: f64, delta: f64) -> Result<u64, GuaranteeError> {
    if !(0.0 < epsilon && epsilon < 1.0) {
        return Err(GuaranteeError::InvalidParameter("epsilon"));
    }
    let satisfied = |n: u64| -> bool {
        match epsilon_for(n, alpha, delta) {
            Ok(e) => e <= epsilon,
            Err(_) => false,
        }
    };
    let mut hi = 1u64;
    while !satisfied(hi) {
        hi *= 2;
        if hi > N_CAP {
            return Err(GuaranteeError::CapExceeded);
        }
    }
    let mut lo = hi / 2; // lo is unsatisfied (or 0)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if satisfied(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // epsilon_for is only piecewise monotone in n (l jumps with n), so fix up
    // around the binary-search answer to restore exact minimality.
    let mut n = hi;
    while n > 1 && satisfied(n - 1) {
        n -= 1;
    }
    Ok(n)
}

/// Calibrated threshold together with the parameters documenting the
/// guarantee `P(|C(n,α) - (1-α)| ≤ ε) ≥ 1-δ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdCertificate {
    pub theta_hat: f64,
    pub n: u64,
    pub alpha: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub rule: RuleId,
    pub degenerate: bool,
}

/// Result of calibration: the certificate plus the temperature fitted on the
/// calibration split (present only when the table held logits).
#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub certificate: ThresholdCertificate,
    pub temperature: Option<Temperature>,
}

/// Computes each calibration sample's minimal correct threshold, sorts them,
/// and takes the `⌈(n+1)(1-α)⌉`-th order statistic (clamped to 1 when the
/// index exceeds `n`).
///
/// Logit tables are temperature-scaled first, with the temperature fitted on
/// the same calibration split.
pub fn calibrate_threshold(
    h: &Hierarchy,
    table: &ScoreTable,
    rule: RuleId,
    alpha: f64,
    delta: f64,
    eps_tight: f64,
) -> Result<CalibrationOutcome, GuaranteeError> {
    if rule != RuleId::Climbing {
        return Err(GuaranteeError::UnsupportedRule(rule));
    }
    if table.n_samples() == 0 {
        return Err(GuaranteeError::EmptyCalibrationSet);
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(GuaranteeError::InvalidParameter("alpha"));
    }

    let (probs, temperature) = match table.kind() {
        ScoreKind::Probs => (table.clone(), None),
        ScoreKind::Logits => {
            let t = fit_temperature(table, h).map_err(|_| GuaranteeError::EmptyCalibrationSet)?;
            (table.to_probs(t), Some(t))
        }
    };

    let lifted = lift_table(h, &probs);
    let mut thetas: Vec<f64> = lifted
        .par_iter()
        .zip(probs.labels().par_iter())
        .map(|(ns, &y)| {
            rules::min_correct_threshold(h, ns, y, eps_tight, TightenVariant::Additive)
                .expect("labels validated at load")
        })
        .collect();
    thetas.sort_by(f64::total_cmp);

    let n = thetas.len() as u64;
    let k = (((n + 1) as f64) * (1.0 - alpha)).ceil() as u64;
    let theta_hat = if k <= n {
        thetas[(k - 1) as usize]
    } else {
        1.0
    };

    let (epsilon, degenerate) = epsilon_for_lenient(n, alpha, delta)?;
    Ok(CalibrationOutcome {
        certificate: ThresholdCertificate {
            theta_hat,
            n,
            alpha,
            delta,
            epsilon,
            rule,
            degenerate,
        },
        temperature,
    })
}

/// Test-set performance of a calibrated threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateEvaluation {
    pub accuracy: f64,
    pub coverage: f64,
    pub accuracy_error: f64,
}

/// Applies the certificate's rule at θ̂ on a test table and reports
/// hierarchical accuracy, mean coverage, and `|accuracy - (1-α)|`.
///
/// `temperature` must be the one fitted during calibration when the test
/// table holds logits.
pub fn evaluate_certificate(
    cert: &ThresholdCertificate,
    temperature: Option<Temperature>,
    h: &Hierarchy,
    test: &ScoreTable,
) -> Result<CertificateEvaluation, GuaranteeError> {
    if test.n_samples() == 0 {
        return Err(GuaranteeError::EmptyInput);
    }
    let probs = match test.kind() {
        ScoreKind::Probs => test.clone(),
        ScoreKind::Logits => test.to_probs(temperature.unwrap_or(Temperature(1.0))),
    };
    let lifted = lift_table(h, &probs);
    let preds: Vec<Prediction> = lifted
        .iter()
        .map(|ns| rules::infer(cert.rule, h, ns, cert.theta_hat))
        .collect();
    let correct: Vec<f64> = preds
        .iter()
        .zip(probs.labels())
        .map(|(p, &y)| if h.is_ancestor(p.node, y) { 1.0 } else { 0.0 })
        .collect();
    let accuracy = pairwise_sum(&correct) / correct.len() as f64;
    let coverage = mean_coverage(h, &preds).expect("non-empty");
    Ok(CertificateEvaluation {
        accuracy,
        coverage,
        accuracy_error: (accuracy - (1.0 - cert.alpha)).abs(),
    })
}

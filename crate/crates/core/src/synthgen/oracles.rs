//! Slow reference implementations of the quantities the fast paths compute,
//! used to cross-check them.

use crate::metrics::{PredictionRecord, UncertaintyKind};
use crate::nn::sigmoid;

/// Two-pass population variance.
pub fn oracle_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// AUC as a fraction in [0, 1] by comparing every positive/negative pair.
pub fn oracle_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut credit = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 1 {
                continue;
            }
            pairs += 1;
            if si > sj {
                credit += 1.0;
            } else if si == sj {
                credit += 0.5;
            }
        }
    }
    (pairs > 0).then(|| credit / pairs as f64)
}

/// UA in percent by counting the four correctness/certainty categories.
pub fn oracle_ua(records: &[PredictionRecord], ut: f64, which: UncertaintyKind) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let raw: Vec<f64> = records.iter().map(|r| which.value(&r.estimate)).collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut cc, mut cu, mut ic, mut iu) = (0usize, 0usize, 0usize, 0usize);
    for (r, u) in records.iter().zip(&raw) {
        let norm = if hi > lo { (u - lo) / (hi - lo) } else { 0.0 };
        let correct = u8::from(r.p_f >= 0.5) == r.y_true;
        match (correct, norm >= ut) {
            (true, false) => cc += 1,
            (true, true) => cu += 1,
            (false, false) => ic += 1,
            (false, true) => iu += 1,
        }
    }
    Some(100.0 * (cc + iu) as f64 / (cc + cu + ic + iu) as f64)
}

/// AUC-UA by the trapezoid rule on a uniform grid of `points` thresholds.
pub fn oracle_auc_ua(records: &[PredictionRecord], which: UncertaintyKind, points: usize) -> Option<f64> {
    let step = 1.0 / (points - 1) as f64;
    let ua: Vec<f64> = (0..points)
        .map(|k| oracle_ua(records, k as f64 * step, which))
        .collect::<Option<_>>()?;
    Some(ua.windows(2).map(|w| 0.5 * (w[0] + w[1]) * step).sum())
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// `∫ S(z) N(z; mu, σ²) dz` by adaptive Simpson quadrature over ±15 standard
/// deviations.
pub fn oracle_quadrature(mu: f64, sigma2: f64) -> f64 {
    if sigma2 <= 0.0 {
        return sigmoid(mu);
    }
    let s = sigma2.sqrt();
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let f = move |u: f64| sigmoid(mu + s * u) * norm * (-0.5 * u * u).exp();
    let f: &dyn Fn(f64) -> f64 = &f;
    // Split at 0 so the peak of the Gaussian is a node.
    let mut total = 0.0;
    for (a, b) in [(-15.0, 0.0), (0.0, 15.0)] {
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = simpson(a, b, fa, fm, fb);
        total += adaptive(f, a, b, fa, fm, fb, whole, 1e-13, 48);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_examples() {
        assert!((oracle_variance(&[0.2, 0.4, 0.6, 0.8]) - 0.05).abs() < 1e-15);
        assert_eq!(oracle_auc(&[0.9, 0.8, 0.1], &[1, 1, 0]), Some(1.0));
        for s2 in [0.1, 1.0, 4.0, 25.0] {
            assert!((oracle_quadrature(0.0, s2) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_matches_probit_approximation_loosely() {
        // S(mu / sqrt(1 + π σ²/8)) is a well-known ≈1e-2 approximation.
        let (mu, s2) = (1.0, 4.0);
        let approx = sigmoid(mu / (1.0 + std::f64::consts::PI * s2 / 8.0).sqrt());
        assert!((oracle_quadrature(mu, s2) - approx).abs() < 0.02);
    }
}

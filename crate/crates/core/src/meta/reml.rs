//! Restricted likelihood for the between-study variance and the bounded
//! scalar maximiser shared with meta-regression.

use crate::{Error, Result};

pub(crate) fn check_inputs(effects: &[f64], variances: &[f64]) -> Result<()> {
    if effects.len() != variances.len() {
        return Err(Error::invalid(format!(
            "{} effects but {} variances",
            effects.len(),
            variances.len()
        )));
    }
    if effects.len() < 2 {
        return Err(Error::invalid(format!(
            "random-effects estimation needs n >= 2 studies, got {}",
            effects.len()
        )));
    }
    if let Some(v) = variances.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!("variance {v} is not positive and finite")));
    }
    if effects.iter().any(|y| !y.is_finite()) {
        return Err(Error::invalid("effects must be finite"));
    }
    Ok(())
}

fn weighted_mean(effects: &[f64], weights: &[f64]) -> (f64, f64) {
    let sw: f64 = weights.iter().sum();
    let swy: f64 = weights.iter().zip(effects).map(|(w, y)| w * y).sum();
    (swy / sw, sw)
}

/// `ℓ_R(τ²) = −½ Σ ln(v_i + τ²) − ½ ln Σ w_i − ½ Σ w_i (y_i − μ̂)²`.
pub fn restricted_loglik(effects: &[f64], variances: &[f64], tau2: f64) -> f64 {
    let w: Vec<f64> = variances.iter().map(|v| 1.0 / (v + tau2)).collect();
    let (mu, sw) = weighted_mean(effects, &w);
    let log_det: f64 = variances.iter().map(|v| (v + tau2).ln()).sum();
    let rss: f64 = w.iter().zip(effects).map(|(w, y)| w * (y - mu) * (y - mu)).sum();
    -0.5 * log_det - 0.5 * sw.ln() - 0.5 * rss
}

/// `dℓ_R/dτ²`.
pub(crate) fn restricted_score(effects: &[f64], variances: &[f64], tau2: f64) -> f64 {
    let w: Vec<f64> = variances.iter().map(|v| 1.0 / (v + tau2)).collect();
    let (mu, sw) = weighted_mean(effects, &w);
    let sw2: f64 = w.iter().map(|w| w * w).sum();
    let r2: f64 = w
        .iter()
        .zip(effects)
        .map(|(w, y)| w * w * (y - mu) * (y - mu))
        .sum();
    0.5 * (-sw + sw2 / sw + r2)
}

fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Search interval upper end: `10 · max(sample variance of y, max v_i)`.
pub fn tau2_upper_bound(effects: &[f64], variances: &[f64]) -> f64 {
    let vmax = variances.iter().copied().fold(0.0, f64::max);
    10.0 * sample_variance(effects).max(vmax)
}

const GRID_POINTS: usize = 200;
const GOLDEN_TOL: f64 = 1e-8;

/// Maximises `f` on `[lo, hi]`.
///
/// A coarse grid picks the bracket, golden-section search narrows it to
/// `1e-8`, and the root of `score` (the derivative) is then bisected to
/// machine precision when it can be bracketed near the golden-section
/// result. The lower bound is returned whenever the score there is `<= 0`
/// and the search ends against it.
pub(crate) fn maximize_bounded(
    f: impl Fn(f64) -> f64,
    score: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
) -> f64 {
    if hi <= lo {
        return lo;
    }
    let step = (hi - lo) / GRID_POINTS as f64;
    let grid = |i: usize| if i == GRID_POINTS { hi } else { lo + step * i as f64 };
    let mut best_i = 0;
    let mut best_f = f(lo);
    for i in 1..=GRID_POINTS {
        let fi = f(grid(i));
        if fi > best_f {
            best_f = fi;
            best_i = i;
        }
    }
    let mut a = grid(best_i.saturating_sub(1));
    let mut b = grid((best_i + 1).min(GRID_POINTS));

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let golden = 0.5 * (a + b);

    let polished = polish_root(&score, golden, lo, hi).unwrap_or(golden);
    if score(lo) <= 0.0 && f(lo) >= f(polished) {
        return lo;
    }
    polished
}

fn polish_root(score: &impl Fn(f64) -> f64, x: f64, lo: f64, hi: f64) -> Option<f64> {
    let mut h = (1e-6 * x.abs()).max(1e-9 * (hi - lo)).max(f64::MIN_POSITIVE);
    let (mut a, mut b) = (x, x);
    for _ in 0..60 {
        a = (x - h).max(lo);
        b = (x + h).min(hi);
        if score(a) > 0.0 && score(b) < 0.0 {
            break;
        }
        if a == lo && b == hi {
            break;
        }
        h *= 4.0;
    }
    if !(score(a) > 0.0 && score(b) < 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if score(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}

/// REML estimate of τ², clipped at 0.
pub fn reml_tau2(effects: &[f64], variances: &[f64]) -> Result<f64> {
    check_inputs(effects, variances)?;
    if effects.iter().all(|&y| y == effects[0]) {
        return Ok(0.0);
    }
    let hi = tau2_upper_bound(effects, variances);
    let t = maximize_bounded(
        |t| restricted_loglik(effects, variances, t),
        |t| restricted_score(effects, variances, t),
        0.0,
        hi,
    );
    Ok(t.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_argmax(y: &[f64], v: &[f64], hi: f64, step: f64) -> f64 {
        let n = (hi / step).floor() as usize;
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 0..=n {
            let t = i as f64 * step;
            let l = restricted_loglik(y, v, t);
            if l > best.1 {
                best = (t, l);
            }
        }
        best.0
    }

    #[test]
    fn equal_effects_give_zero() {
        assert_eq!(reml_tau2(&[0.3, 0.3, 0.3], &[0.1, 0.5, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn two_studies_equal_variance() {
        let t = reml_tau2(&[-1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((t - 1.0).abs() < 1e-12, "{t}");
        let g = grid_argmax(&[-1.0, 1.0], &[1.0, 1.0], 10.0, 1e-4);
        assert!((g - 1.0).abs() <= 1e-4);
        // below the sampling variance the estimate clips at zero
        assert_eq!(reml_tau2(&[-0.5, 0.5], &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn score_matches_finite_differences() {
        let y = [0.1, 0.7, -0.3, 1.2];
        let v = [0.05, 0.2, 0.1, 0.3];
        for t in [0.0, 0.05, 0.3, 1.5] {
            let h = 1e-6;
            let fd = (restricted_loglik(&y, &v, t + h) - restricted_loglik(&y, &v, (t - h).max(0.0)))
                / (t + h - (t - h).max(0.0));
            let s = restricted_score(&y, &v, t);
            assert!((fd - s).abs() < 1e-5 * (1.0 + s.abs()), "{t}: {fd} vs {s}");
        }
    }

    #[test]
    fn input_errors() {
        assert!(reml_tau2(&[1.0], &[1.0]).is_err());
        assert!(reml_tau2(&[1.0, 2.0], &[1.0, 0.0]).is_err());
        assert!(reml_tau2(&[1.0, 2.0], &[1.0]).is_err());
    }
}

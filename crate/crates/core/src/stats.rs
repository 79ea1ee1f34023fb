//! Scalar statistics shared by the oracles, the tuner and the evaluation
//! harness.

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

/// Standard normal CDF, Φ(z).
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// CDF of the noncentral t distribution with `df` degrees of freedom and
/// noncentrality `ncp`.
///
/// For `x >= 0` this is the Poisson mixture
///
/// ```text
/// F(x) = Φ(-δ) + ½ Σ_j [ P_j · I_y(j + ½, ν/2) + Q_j · I_y(j + 1, ν/2) ]
/// P_j = e^{-λ} λ^j / j!,   Q_j = δ/√2 · e^{-λ} λ^j / Γ(j + 3/2)
/// ```
///
/// with `λ = δ²/2`, `y = x²/(x² + ν)` and `I` the regularized incomplete beta.
/// Terms are summed over a window around the Poisson mode, with weights in
/// log space, so large `δ` does not underflow. Negative `x` uses `F(x; δ) = 1 − F(−x; −δ)`.
pub fn noncentral_t_cdf(x: f64, df: f64, ncp: f64) -> f64 {
    assert!(df > 0.0, "degrees of freedom must be positive");
    if x.is_nan() || ncp.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x < 0.0 {
        return (1.0 - nct_upper_half(-x, df, -ncp)).clamp(0.0, 1.0);
    }
    nct_upper_half(x, df, ncp).clamp(0.0, 1.0)
}

fn nct_upper_half(x: f64, df: f64, ncp: f64) -> f64 {
    let base = std_normal_cdf(-ncp);
    if x == 0.0 {
        return base;
    }
    let y = x * x / (x * x + df);
    let b = df / 2.0;
    let lambda = ncp * ncp / 2.0;

    let term = |j: f64| -> f64 {
        let (p, q) = if lambda > 0.0 {
            let log_l = lambda.ln();
            let p = (-lambda + j * log_l - ln_gamma(j + 1.0)).exp();
            let q = (-lambda + j * log_l - ln_gamma(j + 1.5)).exp() * ncp / std::f64::consts::SQRT_2;
            (p, q)
        } else if j == 0.0 {
            (1.0, 0.0)
        } else {
            (0.0, 0.0)
        };
        let mut t = 0.0;
        if p > 0.0 {
            t += p * beta_reg(j + 0.5, b, y);
        }
        if q != 0.0 {
            t += q * beta_reg(j + 1.0, b, y);
        }
        t
    };

    // Poisson weights beyond mode ± 12 sd are below 1e-30 and the beta
    // factors are bounded by one.
    let mode = lambda.floor();
    let reach = (12.0 * lambda.sqrt() + 40.0).ceil();
    let first = (mode - reach).max(0.0) as u64;
    let last = (mode + reach) as u64;
    let sum: f64 = (first..=last).map(|j| term(j as f64)).sum();
    base + 0.5 * sum
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Average ranks (1-based), ties share the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of average ranks.
/// `None` when either side is constant or fewer than two pairs exist.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let (mx, my) = (mean(&rx), mean(&ry));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

//! Exact binomial intervals and small summary helpers.

use statrs::function::beta::beta_reg;

/// Inverse of the regularized incomplete beta function in `x`, by bisection.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p) && a > 0.0 && b > 0.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Two-sided Clopper–Pearson interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: u64, n: u64, confidence: f64) -> (f64, f64) {
    assert!(n > 0 && k <= n && confidence > 0.0 && confidence < 1.0);
    let tail = 0.5 * (1.0 - confidence);
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 { 0.0 } else { beta_quantile(tail, kf, nf - kf + 1.0) };
    let hi = if k == n { 1.0 } else { beta_quantile(1.0 - tail, kf + 1.0, nf - kf) };
    (lo, hi)
}

/// One-sided upper Clopper–Pearson bound at the given confidence.
pub fn clopper_pearson_upper(k: u64, n: u64, confidence: f64) -> f64 {
    assert!(n > 0 && k <= n && confidence > 0.0 && confidence < 1.0);
    if k == n {
        1.0
    } else {
        beta_quantile(confidence, k as f64 + 1.0, (n - k) as f64)
    }
}

/// One-sided lower Clopper–Pearson bound at the given confidence.
pub fn clopper_pearson_lower(k: u64, n: u64, confidence: f64) -> f64 {
    assert!(n > 0 && k <= n && confidence > 0.0 && confidence < 1.0);
    if k == 0 {
        0.0
    } else {
        beta_quantile(1.0 - confidence, k as f64, (n - k + 1) as f64)
    }
}

/// Ordinary least squares `y = a + b x`; returns `(slope, slope stderr)`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let stderr = if x.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, stderr)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

//! Closed-form subsampled Gaussian RDP, kept apart from the quadrature path
//! so the two can be checked against each other.

/// Integer-order RDP of the Poisson-subsampled Gaussian mechanism with
/// sensitivity 1 and noise standard deviation `sigma`:
/// `1/(α-1) · ln Σ_k C(α,k) (1-q)^{α-k} q^k exp((k² - k) / (2σ²))`.
pub fn reference_subsampled_gaussian(alpha: u32, q: f64, sigma: f64) -> f64 {
    assert!(alpha >= 2, "order must be at least 2");
    assert!((0.0..=1.0).contains(&q), "sampling rate must lie in [0, 1]");
    if q == 0.0 {
        return 0.0;
    }
    let a = alpha as f64;
    let mut log_terms = Vec::with_capacity(alpha as usize + 1);
    let mut log_binom = 0.0f64;
    for k in 0..=alpha {
        let kf = k as f64;
        if k > 0 {
            // C(α,k) = C(α,k-1) (α-k+1)/k
            log_binom += (a - kf + 1.0).ln() - kf.ln();
        }
        let weight = if q == 1.0 {
            if k == alpha {
                0.0
            } else {
                continue;
            }
        } else {
            kf * q.ln() + (a - kf) * (1.0 - q).ln()
        };
        log_terms.push(log_binom + weight + (kf * kf - kf) / (2.0 * sigma * sigma));
    }
    let m = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total = m + log_terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    (total / (a - 1.0)).max(0.0)
}

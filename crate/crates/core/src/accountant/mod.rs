//! Rényi-DP accounting for the subsampled encoded-gradient mechanism.
//!
//! For a single codeword `ψ`, sampling rate `q` and integer order `α`:
//!
//! ```text
//! ε(α) = 1/(α-1) · ln Σ_{k=0}^{α} C(α,k) q^k (1-q)^{α-k} Π_{τ∈ψ} M_k(τ)
//! ```
//!
//! where `M_k` is the ratio moment of the noise density. A codebook is
//! charged the largest single-codeword value, iterations compose additively,
//! and curves convert to `(ε, δ)`-DP through `ε(α) + ln(1/δ)/(α-1)`.

mod moments;
mod reference;

use serde::{Deserialize, Serialize};

pub use moments::{cached_table, log_ratio_moment, ratio_moment, MomentTable, MOMENT_REL_TOL};
pub use reference::reference_subsampled_gaussian;

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::quadrature::{ln_binomial, log_sum_exp};

pub const DEFAULT_ALPHA_MAX: u32 = 64;

/// Codebooks whose stored entries exceed this count are accounted through a
/// [`MomentTable`] instead of per-coordinate quadrature.
const DIRECT_ENTRY_LIMIT: usize = 4096;

/// Values this far below zero are rounding; anything lower is a bug.
const NEGATIVE_SLACK: f64 = 1e-12;

/// RDP budget per integer order `α ∈ {2, …, alpha_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    alpha_max: u32,
    eps: Vec<f64>,
}

impl RdpCurve {
    pub fn zeros(alpha_max: u32) -> Self {
        assert!(alpha_max >= 2, "alpha_max must be at least 2");
        RdpCurve { alpha_max, eps: vec![0.0; alpha_max as usize - 1] }
    }

    pub fn from_fn<F: FnMut(u32) -> Result<f64>>(alpha_max: u32, mut f: F) -> Result<Self> {
        let mut curve = Self::zeros(alpha_max);
        for alpha in 2..=alpha_max {
            let v = f(alpha)?;
            if v < 0.0 || v.is_nan() {
                return Err(Error::NegativeRdp { alpha, value: v });
            }
            curve.eps[alpha as usize - 2] = v;
        }
        Ok(curve)
    }

    pub fn alpha_max(&self) -> u32 {
        self.alpha_max
    }

    pub fn get(&self, alpha: u32) -> Option<f64> {
        alpha.checked_sub(2).and_then(|i| self.eps.get(i as usize)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.eps.iter().enumerate().map(|(i, e)| (i as u32 + 2, *e))
    }

    pub fn add(&mut self, other: &RdpCurve) -> Result<()> {
        if self.alpha_max != other.alpha_max {
            return Err(Error::GridMismatch { left: self.alpha_max, right: other.alpha_max });
        }
        for (a, b) in self.eps.iter_mut().zip(&other.eps) {
            *a += b;
        }
        Ok(())
    }

    /// The curve of `times` identical compositions.
    pub fn scaled(&self, times: usize) -> RdpCurve {
        RdpCurve { alpha_max: self.alpha_max, eps: self.eps.iter().map(|e| e * times as f64).collect() }
    }
}

/// Pointwise sum of per-iteration curves; the empty list yields zeros on the
/// default grid.
pub fn compose(curves: &[RdpCurve]) -> Result<RdpCurve> {
    let Some(first) = curves.first() else {
        return Ok(RdpCurve::zeros(DEFAULT_ALPHA_MAX));
    };
    let mut total = RdpCurve::zeros(first.alpha_max);
    for c in curves {
        total.add(c)?;
    }
    Ok(total)
}

/// `(ε, δ)` obtained from an RDP curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub achieving_alpha: u32,
}

/// Converts an RDP curve to `(ε, δ)`-DP, minimizing over the order grid.
/// Ties keep the smallest order.
pub fn to_dp(curve: &RdpCurve, delta: f64) -> Result<PrivacyParams> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let log_inv_delta = (1.0 / delta).ln();
    let (alpha, epsilon) = curve
        .iter()
        .map(|(a, e)| (a, e + log_inv_delta / (a - 1) as f64))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    if alpha == 0 {
        return Err(Error::Empty("RDP curve"));
    }
    Ok(PrivacyParams { epsilon, delta, achieving_alpha: alpha })
}

fn check_inputs(alpha: u32, q: f64) -> Result<()> {
    if alpha < 2 {
        return Err(Error::InvalidArgument(format!("RDP order must be an integer >= 2, got {alpha}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("sampling rate must lie in [0, 1], got {q}")));
    }
    Ok(())
}

/// RDP at order `alpha` from the per-order log-moment sums
/// `log_moments[k] = Σ_τ ln M_k(τ)`, `k = 0..=alpha`.
///
/// Since `Σ_k C(α,k) q^k (1-q)^{α-k} = 1`, the sum is evaluated as
/// `1 + Σ_{k≥2} C(α,k) q^k (1-q)^{α-k} (M_k - 1)`, which keeps full relative
/// precision when the result is tiny.
pub fn rdp_from_log_moments(alpha: u32, q: f64, log_moments: &[f64]) -> Result<f64> {
    check_inputs(alpha, q)?;
    if q == 0.0 {
        return Ok(0.0);
    }
    let ln_q = q.ln();
    let ln_1q = (-q).ln_1p();
    let terms: Vec<f64> = (2..=alpha)
        .filter_map(|k| {
            let lm = log_moments[k as usize];
            if lm <= 0.0 {
                return None;
            }
            // ln(M - 1) = L + ln(1 - e^{-L})
            let ln_excess = lm + (-(-lm).exp_m1()).ln();
            let ln_weight = if k == alpha && q == 1.0 {
                0.0
            } else if q == 1.0 {
                return None;
            } else {
                ln_binomial(alpha, k) + k as f64 * ln_q + (alpha - k) as f64 * ln_1q
            };
            Some(ln_weight + ln_excess)
        })
        .collect();
    let s = log_sum_exp(&terms);
    let ln_total = if s == f64::NEG_INFINITY {
        0.0
    } else if s > 30.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    };
    let eps = ln_total / (alpha - 1) as f64;
    if eps < -NEGATIVE_SLACK || eps.is_nan() {
        return Err(Error::NegativeRdp { alpha, value: eps });
    }
    Ok(eps.max(0.0))
}

fn direct_log_moment_sums(psi: &[f64], spec: &NoiseSpec, k_max: u32) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; k_max as usize + 1];
    for k in 2..=k_max {
        let mut acc = 0.0;
        for &tau in psi.iter().filter(|t| **t != 0.0) {
            acc += log_ratio_moment(spec, tau, k)?;
        }
        sums[k as usize] = acc;
    }
    Ok(sums)
}

/// RDP of one iteration with the single codeword `psi` (any order of
/// magnitudes; zero entries contribute nothing).
pub fn single_psi_rdp(alpha: u32, q: f64, psi: &[f64], spec: &NoiseSpec) -> Result<f64> {
    check_inputs(alpha, q)?;
    if q == 0.0 {
        return Ok(0.0);
    }
    let sums = direct_log_moment_sums(psi, spec, alpha)?;
    rdp_from_log_moments(alpha, q, &sums)
}

/// `Σ_τ ln M_k(τ)` for every codeword and `k = 0..=k_max`.
fn codebook_log_moment_sums(codebook: &Codebook, spec: &NoiseSpec, k_max: u32) -> Result<Vec<Vec<f64>>> {
    let entries: usize = codebook.codewords().iter().map(|c| c.magnitudes().len()).sum();
    if entries <= DIRECT_ENTRY_LIMIT {
        return codebook
            .codewords()
            .iter()
            .map(|c| direct_log_moment_sums(c.magnitudes(), spec, k_max))
            .collect();
    }
    let tau_max = codebook
        .codewords()
        .iter()
        .filter_map(|c| c.magnitudes().first().copied())
        .fold(0.0, f64::max);
    if tau_max == 0.0 {
        return Ok(vec![vec![0.0; k_max as usize + 1]; codebook.len()]);
    }
    let table = cached_table(spec, tau_max, k_max)?;
    Ok(codebook.codewords().iter().map(|c| table.log_moment_sums(c.magnitudes(), k_max)).collect())
}

/// Worst case over the codebook of [`single_psi_rdp`].
pub fn codebook_rdp(alpha: u32, q: f64, codebook: &Codebook, spec: &NoiseSpec) -> Result<f64> {
    check_inputs(alpha, q)?;
    let curve = codebook_rdp_curve(alpha, q, codebook, spec)?;
    Ok(curve.get(alpha).expect("order on grid"))
}

/// Per-iteration RDP curve of the codebook mechanism on `{2, …, alpha_max}`.
pub fn codebook_rdp_curve(alpha_max: u32, q: f64, codebook: &Codebook, spec: &NoiseSpec) -> Result<RdpCurve> {
    check_inputs(alpha_max, q)?;
    if q == 0.0 {
        return Ok(RdpCurve::zeros(alpha_max));
    }
    let sums = codebook_log_moment_sums(codebook, spec, alpha_max)?;
    RdpCurve::from_fn(alpha_max, |alpha| {
        let mut worst = 0.0f64;
        for s in &sums {
            worst = worst.max(rdp_from_log_moments(alpha, q, s)?);
        }
        Ok(worst)
    })
}

/// Per-iteration curve of the clip-and-Gaussian baseline with unit clipping.
pub fn gaussian_baseline_curve(alpha_max: u32, q: f64, sigma: f64) -> Result<RdpCurve> {
    check_inputs(alpha_max, q)?;
    RdpCurve::from_fn(alpha_max, |alpha| Ok(reference_subsampled_gaussian(alpha, q, sigma)))
}

//! Per-coordinate ratio moments `M_k(τ) = ∫ (z(x;τ)/z(x;0))^k z(x;0) dx`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::noise::{NoiseSpec, SpecKey};
use crate::quadrature::{integrate_line, log_integrate_exp, Tail};

/// Target relative accuracy of a single moment.
pub const MOMENT_REL_TOL: f64 = 1e-11;

/// Memo key resolution for τ.
const TAU_QUANTUM: f64 = 1e-12;

type MemoKey = (SpecKey, i64, u32);

fn memo() -> &'static Mutex<HashMap<MemoKey, f64>> {
    static MEMO: OnceLock<Mutex<HashMap<MemoKey, f64>>> = OnceLock::new();
    MEMO.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `ln M_k(τ)`, memoized on the spec, `|τ|` rounded to 1e-12, and `k`.
pub fn log_ratio_moment(spec: &NoiseSpec, tau: f64, k: u32) -> Result<f64> {
    if !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau must be finite, got {tau}")));
    }
    let steps = (tau.abs() / TAU_QUANTUM).round();
    if k <= 1 || steps == 0.0 {
        return Ok(0.0);
    }
    let key = (spec.key(), steps as i64, k);
    if let Some(v) = memo().lock().expect("moment memo poisoned").get(&key) {
        return Ok(*v);
    }
    let value = compute_log_moment(spec, steps * TAU_QUANTUM, k)?;
    memo().lock().expect("moment memo poisoned").insert(key, value);
    Ok(value)
}

/// `M_k(τ)`; equals 1 for `k ∈ {0, 1}` and is at least 1 for `k ≥ 2`.
pub fn ratio_moment(spec: &NoiseSpec, tau: f64, k: u32) -> Result<f64> {
    log_ratio_moment(spec, tau, k).map(f64::exp)
}

fn compute_log_moment(spec: &NoiseSpec, tau: f64, k: u32) -> Result<f64> {
    let kf = k as f64;
    let width = spec.scale();
    let breaks_buf = [0.0, tau];
    let breaks: &[f64] = if spec.has_kink() { &breaks_buf } else { &[] };
    let diverges = || Error::MomentDiverges { family: spec.family().to_string(), k, tau };

    let value = if kf * tau <= width {
        // Close to 1: since ∫ (r - 1) z(x;0) = 0, the excess equals the
        // integral of the nonnegative, second-order (r^k - 1 - k(r - 1)) z(x;0).
        let f = |x: f64| {
            let base = spec.log_pdf(x, 0.0);
            let lr = spec.log_pdf(x, tau) - base;
            convex_excess(kf, lr) * base.exp()
        };
        let excess = integrate_line(f, spec.family().tail(), 0.5 * tau, width, breaks, MOMENT_REL_TOL)
            .map_err(|_| diverges())?;
        excess.ln_1p()
    } else {
        let h = |x: f64| kf * spec.log_pdf(x, tau) - (kf - 1.0) * spec.log_pdf(x, 0.0);
        let center = match spec.family().tail() {
            Tail::Light => kf * tau,
            Tail::Heavy => tau,
        };
        log_integrate_exp(h, spec.family().tail(), center, width, breaks, MOMENT_REL_TOL).map_err(|_| diverges())?
    };
    if !value.is_finite() {
        return Err(diverges());
    }
    // Jensen: M_k ≥ 1. Quadrature noise can push a tiny excess below zero.
    Ok(value.max(0.0))
}

/// `e^{ku} - 1 - k(e^u - 1)`, by its power series when `ku` is small.
fn convex_excess(k: f64, u: f64) -> f64 {
    if (k * u).abs() > 0.25 {
        return (k * u).exp_m1() - k * u.exp_m1();
    }
    // Σ_{j≥2} (k^j - k) u^j / j!
    let mut sum = 0.0;
    let mut ku_pow = k * u;
    let mut u_pow = u;
    let mut fact = 1.0;
    for j in 2..40 {
        ku_pow *= k * u;
        u_pow *= u;
        fact *= j as f64;
        let term = (ku_pow - k * u_pow) / fact;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Chebyshev interpolants of `τ ↦ ln M_k(τ)` on `[0, τ_max]` for every
/// `k ≤ k_max`, fitted on Chebyshev–Lobatto nodes.
#[derive(Debug, Clone)]
pub struct MomentTable {
    tau_max: f64,
    /// `coefs[k]` holds the series for order `k` (empty for `k ≤ 1`).
    coefs: Vec<Vec<f64>>,
    degree: usize,
}

const MIN_DEGREE: usize = 16;
const MAX_DEGREE: usize = 256;

impl MomentTable {
    pub fn build(spec: &NoiseSpec, tau_max: f64, k_max: u32) -> Result<Self> {
        if !(tau_max > 0.0) || !tau_max.is_finite() {
            return Err(Error::InvalidArgument(format!("tau_max must be positive, got {tau_max}")));
        }
        let mut degree = MIN_DEGREE;
        loop {
            let table = Self::fit(spec, tau_max, k_max, degree)?;
            if table.validate(spec, k_max)? || degree >= MAX_DEGREE {
                return Ok(table);
            }
            degree *= 2;
        }
    }

    fn fit(spec: &NoiseSpec, tau_max: f64, k_max: u32, degree: usize) -> Result<Self> {
        let n = degree;
        let taus: Vec<f64> = (0..=n).map(|j| 0.5 * tau_max * (1.0 + (PI * j as f64 / n as f64).cos())).collect();
        let mut coefs = vec![Vec::new(); k_max as usize + 1];
        for k in 2..=k_max {
            let values = taus.iter().map(|&t| log_ratio_moment(spec, t, k)).collect::<Result<Vec<f64>>>()?;
            // DCT-I: c_m = (2/n) Σ'' f_j cos(π m j / n), endpoints halved.
            let mut c = vec![0.0; n + 1];
            for (m, cm) in c.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, v) in values.iter().enumerate() {
                    let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                    acc += w * v * (PI * (m * j) as f64 / n as f64).cos();
                }
                *cm = 2.0 * acc / n as f64;
            }
            c[0] *= 0.5;
            c[n] *= 0.5;
            coefs[k as usize] = c;
        }
        Ok(MomentTable { tau_max, coefs, degree })
    }

    /// Compares the interpolant against direct quadrature between nodes.
    fn validate(&self, spec: &NoiseSpec, k_max: u32) -> Result<bool> {
        let probes = [0.137, 0.5137, 0.8731];
        for k in 2..=k_max {
            let scale = self.eval(self.tau_max, k).abs().max(1e-300);
            for p in probes {
                let tau = p * self.tau_max;
                let direct = log_ratio_moment(spec, tau, k)?;
                let approx = self.eval(tau, k);
                if (direct - approx).abs() > 1e-9 * scale {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    fn to_unit(&self, tau: f64) -> f64 {
        (2.0 * tau.abs() / self.tau_max - 1.0).clamp(-1.0, 1.0)
    }

    /// Interpolated `ln M_k(τ)` for `|τ| ≤ τ_max`.
    pub fn eval(&self, tau: f64, k: u32) -> f64 {
        if k <= 1 || tau == 0.0 {
            return 0.0;
        }
        let x = self.to_unit(tau);
        let c = &self.coefs[k as usize];
        // Clenshaw recurrence.
        let (mut b1, mut b2) = (0.0, 0.0);
        for &cm in c.iter().skip(1).rev() {
            let b0 = 2.0 * x * b1 - b2 + cm;
            b2 = b1;
            b1 = b0;
        }
        (x * b1 - b2 + c[0]).max(0.0)
    }

    /// `Σ_τ ln M_k(τ)` over the nonzero entries of `taus`, for `k = 0..=k_max`.
    ///
    /// Chebyshev sums `S_m = Σ_τ T_m(x(τ))` are accumulated once and then
    /// contracted with each order's coefficients.
    pub fn log_moment_sums(&self, taus: &[f64], k_max: u32) -> Vec<f64> {
        let n = self.degree;
        let mut sums = vec![0.0; n + 1];
        let mut count = 0usize;
        for &tau in taus {
            if tau == 0.0 {
                continue;
            }
            count += 1;
            let x = self.to_unit(tau);
            let (mut t_prev, mut t_cur) = (1.0, x);
            sums[0] += 1.0;
            sums[1] += x;
            for s in sums.iter_mut().skip(2) {
                let t_next = 2.0 * x * t_cur - t_prev;
                *s += t_next;
                t_prev = t_cur;
                t_cur = t_next;
            }
        }
        let mut out = vec![0.0; k_max as usize + 1];
        if count == 0 {
            return out;
        }
        for k in 2..=k_max.min(self.coefs.len() as u32 - 1) {
            let c = &self.coefs[k as usize];
            out[k as usize] = c.iter().zip(&sums).map(|(a, b)| a * b).sum::<f64>().max(0.0);
        }
        out
    }
}

type TableKey = (SpecKey, u64, u32);

/// Shared table cache keyed on spec, `τ_max` bits and `k_max`.
pub fn cached_table(spec: &NoiseSpec, tau_max: f64, k_max: u32) -> Result<Arc<MomentTable>> {
    static TABLES: OnceLock<Mutex<HashMap<TableKey, Arc<MomentTable>>>> = OnceLock::new();
    let tables = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (spec.key(), tau_max.to_bits(), k_max);
    if let Some(t) = tables.lock().expect("table cache poisoned").get(&key) {
        return Ok(Arc::clone(t));
    }
    let table = Arc::new(MomentTable::build(spec, tau_max, k_max)?);
    tables.lock().expect("table cache poisoned").insert(key, Arc::clone(&table));
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseFamily;

    #[test]
    fn convex_excess_series_agrees_with_direct_form() {
        for &k in &[2.0f64, 3.0, 17.0] {
            for &u in &[-0.014f64, -1e-3, 2e-4, 0.012] {
                let direct = (k * u).exp_m1() - k * u.exp_m1();
                let series = convex_excess(k, u);
                assert!((series - direct).abs() <= 1e-9 * direct.abs(), "k={k} u={u}");
                assert!(series > 0.0);
            }
        }
        // leading term k(k-1)u²/2 at a scale where the direct form is useless
        let v = convex_excess(2.0, 1e-9);
        assert!((v - 1e-18).abs() < 1e-8 * 1e-18, "{v}");
    }

    fn specs() -> Vec<NoiseSpec> {
        vec![
            NoiseSpec::gaussian(1.0).unwrap(),
            NoiseSpec::student_t(1.0, 9.0).unwrap(),
            NoiseSpec::laplace(1.0).unwrap(),
            NoiseSpec::cauchy(1.0).unwrap(),
            NoiseSpec::variance_gamma(1.0, 2.0).unwrap(),
            NoiseSpec::hyperbolic_secant(1.0).unwrap(),
        ]
    }

    #[test]
    fn trivial_orders_are_one() {
        for spec in specs() {
            for tau in [0.0, 0.3, -1.0] {
                assert_eq!(ratio_moment(&spec, tau, 0).unwrap(), 1.0);
                assert_eq!(ratio_moment(&spec, tau, 1).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn gaussian_closed_form() {
        let g = NoiseSpec::gaussian(1.0).unwrap();
        let m = ratio_moment(&g, 0.5, 2).unwrap();
        assert!((m - 0.25f64.exp()).abs() / 0.25f64.exp() < 1e-10, "{m}");
        for &(tau, k) in &[(1.0, 32u32), (0.01, 2), (0.001, 64), (0.75, 10)] {
            let expected = (k * (k - 1)) as f64 * tau * tau / 2.0;
            let got = log_ratio_moment(&g, tau, k).unwrap();
            assert!((got - expected).abs() <= 1e-10 * expected.max(1e-6), "tau={tau} k={k}: {got} vs {expected}");
        }
    }

    #[test]
    fn laplace_closed_form() {
        // M_k = k/(2k-1) e^{(k-1)τ/b} + (k-1)/(2k-1) e^{-kτ/b}
        let l = NoiseSpec::laplace(2.0).unwrap();
        for &(tau, k) in &[(0.2, 2u32), (1.0, 5), (0.03, 16)] {
            let kf = k as f64;
            let exact = kf / (2.0 * kf - 1.0) * ((kf - 1.0) * tau).exp() + (kf - 1.0) / (2.0 * kf - 1.0) * (-kf * tau).exp();
            let got = ratio_moment(&l, tau, k).unwrap();
            assert!((got - exact).abs() / exact < 1e-10, "tau={tau} k={k}: {got} vs {exact}");
        }
    }

    #[test]
    fn moments_are_even_in_tau_and_at_least_one() {
        for spec in specs() {
            for k in 2..6 {
                let a = log_ratio_moment(&spec, 0.4, k).unwrap();
                let b = log_ratio_moment(&spec, -0.4, k).unwrap();
                assert_eq!(a, b);
                assert!(a > 0.0, "{spec} k={k}");
            }
        }
    }

    #[test]
    fn heavy_tails_have_bounded_growth() {
        // The Cauchy likelihood ratio is bounded, so moments stay finite for large k.
        let c = NoiseSpec::cauchy(1.0).unwrap();
        assert_eq!(c.family(), NoiseFamily::Cauchy);
        let v = log_ratio_moment(&c, 1.0, 64).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn table_matches_direct_moments() {
        for spec in specs() {
            let table = MomentTable::build(&spec, 0.05, 12).unwrap();
            for &tau in &[0.001, 0.0123, 0.031, 0.05] {
                for k in [2u32, 7, 12] {
                    let direct = log_ratio_moment(&spec, tau, k).unwrap();
                    let approx = table.eval(tau, k);
                    assert!((direct - approx).abs() <= 1e-9 * table.eval(0.05, k), "{spec} tau={tau} k={k}");
                }
            }
            let taus = [0.01, 0.0, 0.02, 0.045];
            let sums = table.log_moment_sums(&taus, 12);
            let direct: f64 = taus.iter().map(|t| log_ratio_moment(&spec, *t, 9).unwrap()).sum();
            assert!((sums[9] - direct).abs() < 1e-9 * direct, "{spec}");
        }
    }
}

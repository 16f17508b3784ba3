//! Adaptive Simpson quadrature, including log-space integration of
//! positive integrands over the whole real line.
//!
//! Integrands that may over- or underflow are supplied as their logarithm
//! `h(x) = ln f(x)`. The integral is evaluated as `m + ln ∫ exp(h(x) - m) dx`
//! with `m` the largest value of `h` seen on a scan grid.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 48;

/// Tail growth stops once a new block adds less than this fraction of the total.
const TAIL_FRACTION: f64 = 1e-13;

/// Maximum half-width, in units of the integrand's natural width, before a
/// light-tailed integral is declared divergent.
const MAX_EXTENT: f64 = 1e7;

const SCAN_POINTS: usize = 4096;

/// How the real line is mapped to a finite domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    /// Exponentially (or faster) decaying tails: integrate over `[-L, L]`,
    /// growing `L` until the added mass is negligible.
    Light,
    /// Polynomial tails: substitute `x = c + w tan(u)`, `u ∈ [-π/2, π/2]`.
    Heavy,
}

#[derive(Debug, Default, Clone, Copy)]
struct Stats {
    unconverged: u32,
}

fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    fa: f64,
    m: f64,
    fm: f64,
    b: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    stats: &mut Stats,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // Differences at the rounding level of the local integrand cannot shrink further.
    let roundoff = 1e-14 * (b - a).abs() * (fa.abs() + 4.0 * fm.abs() + fb.abs()) / 6.0;
    if delta.abs() <= 15.0 * tol.max(roundoff) || depth == 0 || (b - a).abs() < 1e-14 * (a.abs() + b.abs()) {
        if depth == 0 && delta.abs() > 15.0 * tol.max(roundoff) {
            stats.unconverged += 1;
        }
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, fa, lm, flm, m, fm, left, 0.5 * tol, depth - 1, stats)
        + simpson_rec(f, m, fm, rm, frm, b, fb, right, 0.5 * tol, depth - 1, stats)
}

fn simpson_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, stats: &mut Stats) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, fa, m, fm, b, fb, whole, tol, MAX_DEPTH, stats)
}

/// Adaptive Simpson integral of `f` over `[a, b]` split into `panels` equal
/// pieces, with absolute tolerance `abs_tol` shared across the panels.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, panels: usize) -> Result<f64> {
    let mut stats = Stats::default();
    let total = integrate_panels(&f, a, b, abs_tol, panels.max(1), &mut stats);
    if stats.unconverged > 0 {
        return Err(Error::Quadrature(format!(
            "{} panels hit the depth limit on [{a}, {b}]",
            stats.unconverged
        )));
    }
    Ok(total)
}

fn integrate_panels<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64, panels: usize, stats: &mut Stats) -> f64 {
    let width = (b - a) / panels as f64;
    let tol = abs_tol / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + width * i as f64;
            let hi = if i + 1 == panels { b } else { lo + width };
            simpson_panel(f, lo, hi, tol, stats)
        })
        .sum()
}

/// Integrates `f` over the sub-intervals delimited by `points` (sorted).
fn integrate_pieces<F: Fn(f64) -> f64>(f: &F, points: &[f64], abs_tol: f64, panels_per_piece: usize, stats: &mut Stats) -> f64 {
    let span = points[points.len() - 1] - points[0];
    points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let share = abs_tol * (w[1] - w[0]) / span;
            integrate_panels(f, w[0], w[1], share, panels_per_piece, stats)
        })
        .sum()
}

/// Natural logarithm of `∫ exp(h(x)) dx` over the real line.
///
/// `center` and `width` locate the bulk of the integrand (typically the mode
/// and the noise scale), `breaks` lists points where `h` has a kink, and
/// `rel_tol` is the target relative accuracy of the integral.
pub fn log_integrate_exp<H: Fn(f64) -> f64>(
    h: H,
    tail: Tail,
    center: f64,
    width: f64,
    breaks: &[f64],
    rel_tol: f64,
) -> Result<f64> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(Error::Quadrature(format!("non-positive width {width}")));
    }
    match tail {
        Tail::Light => log_integrate_light(&h, center, width, breaks, rel_tol),
        Tail::Heavy => log_integrate_heavy(&h, center, width, breaks, rel_tol),
    }
}

fn log_integrate_light<H: Fn(f64) -> f64>(h: &H, center: f64, width: f64, breaks: &[f64], rel_tol: f64) -> Result<f64> {
    // Locate the peak of h on a wide grid so that the shifted integrand is O(1).
    let reach = 64.0 * width;
    let (mut peak_x, mut shift) = (center, h(center));
    for i in 0..=SCAN_POINTS {
        let x = center - reach + 2.0 * reach * i as f64 / SCAN_POINTS as f64;
        let v = h(x);
        if v > shift {
            shift = v;
            peak_x = x;
        }
    }
    for &b in breaks {
        let v = h(b);
        if v > shift {
            shift = v;
            peak_x = b;
        }
    }
    if !shift.is_finite() {
        return Err(Error::Quadrature(format!("log-integrand peak is {shift}")));
    }
    let f = |x: f64| (h(x) - shift).exp();

    let block = 8.0 * width;
    let mut lo = peak_x - block;
    let mut hi = peak_x + block;
    for &b in breaks {
        lo = lo.min(b - block);
        hi = hi.max(b + block);
    }
    let mut stats = Stats::default();
    // Coarse estimate sets the absolute tolerance for the refined pass.
    let coarse = {
        let mut s = Stats::default();
        core_pieces(&f, lo, hi, breaks, 1e-3, &mut s)
    };
    let abs_tol = rel_tol * coarse.max(f64::MIN_POSITIVE);
    let mut total = core_pieces_tol(&f, lo, hi, breaks, abs_tol, &mut stats);

    // Grow the interval on each side until a block contributes negligibly.
    for side in [-1.0, 1.0] {
        let mut edge = if side < 0.0 { lo } else { hi };
        loop {
            let next = edge + side * block;
            let (a, b) = if side < 0.0 { (next, edge) } else { (edge, next) };
            let piece = integrate_panels(&f, a, b, abs_tol * 1e-2, 8, &mut stats);
            total += piece;
            edge = next;
            if piece <= TAIL_FRACTION * total {
                break;
            }
            if (edge - peak_x).abs() > MAX_EXTENT * width {
                return Err(Error::Quadrature("tail mass does not vanish".into()));
            }
        }
    }
    if stats.unconverged > 0 {
        return Err(Error::Quadrature(format!("{} panels hit the depth limit", stats.unconverged)));
    }
    Ok(shift + total.ln())
}

fn core_pieces<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, breaks: &[f64], rel: f64, stats: &mut Stats) -> f64 {
    let rough = core_pieces_tol(f, lo, hi, breaks, f64::INFINITY, stats);
    core_pieces_tol(f, lo, hi, breaks, rel * rough.abs().max(f64::MIN_POSITIVE), stats)
}

fn core_pieces_tol<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, breaks: &[f64], abs_tol: f64, stats: &mut Stats) -> f64 {
    let mut points = Vec::with_capacity(breaks.len() + 2);
    points.push(lo);
    points.extend(breaks.iter().copied().filter(|b| *b > lo && *b < hi));
    points.push(hi);
    points.sort_by(f64::total_cmp);
    points.dedup();
    integrate_pieces(f, &points, abs_tol, 16, stats)
}

fn log_integrate_heavy<H: Fn(f64) -> f64>(h: &H, center: f64, width: f64, breaks: &[f64], rel_tol: f64) -> Result<f64> {
    // x = center + width * tan(u); dx = width / cos(u)^2 du.
    let ln_w = width.ln();
    let g = |u: f64| {
        let c = u.cos();
        h(center + width * u.tan()) + ln_w - 2.0 * c.abs().ln()
    };
    let (mut peak_u, mut shift) = (0.0, g(0.0));
    for i in 0..=SCAN_POINTS {
        let u = -FRAC_PI_2 + std::f64::consts::PI * i as f64 / SCAN_POINTS as f64;
        let v = g(u);
        if v > shift {
            shift = v;
            peak_u = u;
        }
    }
    let ubreaks: Vec<f64> = breaks.iter().map(|b| ((b - center) / width).atan()).collect();
    for &u in &ubreaks {
        let v = g(u);
        if v > shift {
            shift = v;
            peak_u = u;
        }
    }
    if !shift.is_finite() {
        return Err(Error::Quadrature(format!("log-integrand peak is {shift} near u={peak_u}")));
    }
    let f = |u: f64| {
        let v = (g(u) - shift).exp();
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut stats = Stats::default();
    let total = core_pieces(&f, -FRAC_PI_2, FRAC_PI_2, &ubreaks, rel_tol, &mut stats);
    if stats.unconverged > 0 {
        return Err(Error::Quadrature(format!("{} panels hit the depth limit", stats.unconverged)));
    }
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Quadrature(format!("integral evaluated to {total}")));
    }
    Ok(shift + total.ln())
}

/// Integral of a signed, integrable `f` over the real line, using the same
/// domain handling as [`log_integrate_exp`]. `rel_tol` is relative to the
/// value of the integral.
pub fn integrate_line<F: Fn(f64) -> f64>(
    f: F,
    tail: Tail,
    center: f64,
    width: f64,
    breaks: &[f64],
    rel_tol: f64,
) -> Result<f64> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(Error::Quadrature(format!("non-positive width {width}")));
    }
    let mut stats = Stats::default();
    let total = match tail {
        Tail::Heavy => {
            let g = |u: f64| {
                let c = u.cos();
                let v = f(center + width * u.tan()) * width / (c * c);
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            };
            let ubreaks: Vec<f64> = breaks.iter().map(|b| ((b - center) / width).atan()).collect();
            core_pieces(&g, -FRAC_PI_2, FRAC_PI_2, &ubreaks, rel_tol, &mut stats)
        }
        Tail::Light => {
            let block = 8.0 * width;
            let mut lo = center - block;
            let mut hi = center + block;
            for &b in breaks {
                lo = lo.min(b - block);
                hi = hi.max(b + block);
            }
            let mut total = core_pieces(&f, lo, hi, breaks, rel_tol, &mut stats);
            let abs_tol = rel_tol * total.abs().max(f64::MIN_POSITIVE);
            for side in [-1.0, 1.0] {
                let mut edge = if side < 0.0 { lo } else { hi };
                loop {
                    let next = edge + side * block;
                    let (a, b) = if side < 0.0 { (next, edge) } else { (edge, next) };
                    let piece = integrate_panels(&f, a, b, abs_tol * 1e-2, 8, &mut stats);
                    total += piece;
                    edge = next;
                    if piece.abs() <= TAIL_FRACTION * total.abs() {
                        break;
                    }
                    if (edge - center).abs() > MAX_EXTENT * width {
                        return Err(Error::Quadrature("tail mass does not vanish".into()));
                    }
                }
            }
            total
        }
    };
    if stats.unconverged > 0 {
        return Err(Error::Quadrature(format!("{} panels hit the depth limit", stats.unconverged)));
    }
    Ok(total)
}

/// Numerically stable `ln(Σ exp(v))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln C(n, k)` via log-gamma.
pub fn ln_binomial(n: u32, k: u32) -> f64 {
    use statrs::function::gamma::ln_gamma;
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 1e-12, 4).unwrap();
        // ∫ x³ - 2x + 1 over [-1, 3] = (81 - 1)/4 - (9 - 1) + 4 = 16
        assert!((v - 16.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_mass_light_tail() {
        let h = |x: f64| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let v = log_integrate_exp(h, Tail::Light, 0.0, 1.0, &[], 1e-12).unwrap();
        assert!(v.abs() < 1e-11, "{v}");
    }

    #[test]
    fn cauchy_mass_heavy_tail() {
        let h = |x: f64| -(std::f64::consts::PI).ln() - (1.0 + x * x).ln();
        let v = log_integrate_exp(h, Tail::Heavy, 0.0, 1.0, &[], 1e-12).unwrap();
        assert!(v.abs() < 1e-11, "{v}");
    }

    #[test]
    fn huge_integrands_stay_finite() {
        // ∫ exp(1000 - (x - 50)^2 / 2) dx = exp(1000) sqrt(2π)
        let h = |x: f64| 1000.0 - 0.5 * (x - 50.0) * (x - 50.0);
        let v = log_integrate_exp(h, Tail::Light, 0.0, 1.0, &[], 1e-12).unwrap();
        let expected = 1000.0 + 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - expected).abs() < 1e-10, "{v} vs {expected}");
    }

    #[test]
    fn kinked_integrand_with_breaks() {
        // Laplace density with unit scale.
        let h = |x: f64| -(x as f64).abs() - 2f64.ln();
        let v = log_integrate_exp(h, Tail::Light, 0.0, 1.0, &[0.0], 1e-12).unwrap();
        assert!(v.abs() < 1e-11, "{v}");
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[0.0, f64::NEG_INFINITY]) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn binomials() {
        assert!((ln_binomial(8, 3) - 56f64.ln()).abs() < 1e-12);
        assert_eq!(ln_binomial(5, 0), 0.0);
        assert_eq!(ln_binomial(5, 5), 0.0);
    }
}

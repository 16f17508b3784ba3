//! Symmetric univariate noise families.
//!
//! Every family is parameterized by its variance; the natural scale of each
//! family is derived from it. Cauchy has no variance, so its `variance` field
//! holds the squared scale.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Exp1, Gamma, Open01, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::codebook::{GradientVector, Stage};
use crate::error::{Error, Result};
use crate::quadrature::{adaptive_simpson, Tail};

/// Number of intervals in the tabulated CDF for families without a closed form.
pub const DEFAULT_DOF: f64 = 9.0;
pub const DEFAULT_LAMBDA: f64 = 2.0;

pub const CDF_GRID_POINTS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseFamily {
    Gaussian,
    StudentT,
    Laplace,
    Cauchy,
    VarianceGamma,
    HyperbolicSecant,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 6] = [
        NoiseFamily::Gaussian,
        NoiseFamily::StudentT,
        NoiseFamily::Laplace,
        NoiseFamily::Cauchy,
        NoiseFamily::VarianceGamma,
        NoiseFamily::HyperbolicSecant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::StudentT => "student_t",
            NoiseFamily::Laplace => "laplace",
            NoiseFamily::Cauchy => "cauchy",
            NoiseFamily::VarianceGamma => "variance_gamma",
            NoiseFamily::HyperbolicSecant => "sech",
        }
    }

    pub fn tail(self) -> Tail {
        match self {
            NoiseFamily::StudentT | NoiseFamily::Cauchy => Tail::Heavy,
            _ => Tail::Light,
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "gaussian" | "normal" => Ok(NoiseFamily::Gaussian),
            "student_t" | "studentt" | "student" | "t" => Ok(NoiseFamily::StudentT),
            "laplace" => Ok(NoiseFamily::Laplace),
            "cauchy" => Ok(NoiseFamily::Cauchy),
            "variance_gamma" | "variancegamma" | "vg" => Ok(NoiseFamily::VarianceGamma),
            "sech" | "hyperbolic_secant" | "hyperbolicsecant" => Ok(NoiseFamily::HyperbolicSecant),
            other => Err(Error::InvalidNoise(format!("unknown family '{other}'"))),
        }
    }
}

/// Hashable identity of a noise spec (family plus exact parameter bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpecKey {
    family: NoiseFamily,
    variance: u64,
    dof: u64,
    lambda: u64,
}

/// Family-specific constants derived once at construction.
#[derive(Debug, Clone, Copy)]
enum Shape {
    Gaussian { sigma: f64 },
    StudentT { nu: f64, scale: f64, log_norm: f64 },
    Laplace { b: f64 },
    Cauchy { scale: f64 },
    /// Symmetric variance-gamma with integer shape `lambda = n + 1`; the
    /// density is `c · e^{-a|x|} · Σ_j coef[j] |x|^{n-j}`.
    VarianceGamma { rate: f64, log_norm: f64 },
    Sech { scale: f64 },
}

/// An immutable, validated noise distribution `z(x; μ)`.
#[derive(Clone)]
pub struct NoiseSpec {
    family: NoiseFamily,
    variance: f64,
    degrees_of_freedom: Option<f64>,
    lambda: Option<f64>,
    shape: Shape,
    vg_coefs: Arc<[f64]>,
    cdf_grid: Arc<OnceLock<CdfGrid>>,
}

impl fmt::Debug for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NoiseSpec({self})")
    }
}

impl PartialEq for NoiseSpec {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, variance: f64, degrees_of_freedom: Option<f64>, lambda: Option<f64>) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::InvalidNoise(format!("variance must be positive and finite, got {variance}")));
        }
        let mut dof = None;
        let mut lam = None;
        let mut vg_coefs: Arc<[f64]> = Arc::from(Vec::new());
        let shape = match family {
            NoiseFamily::Gaussian => Shape::Gaussian { sigma: variance.sqrt() },
            NoiseFamily::StudentT => {
                let nu = degrees_of_freedom
                    .ok_or_else(|| Error::InvalidNoise("student_t requires degrees_of_freedom".into()))?;
                if !(nu > 2.0) || !nu.is_finite() {
                    return Err(Error::InvalidNoise(format!(
                        "student_t needs degrees_of_freedom > 2 for a finite variance, got {nu}"
                    )));
                }
                dof = Some(nu);
                // v = s^2 ν / (ν - 2)
                let scale = (variance * (nu - 2.0) / nu).sqrt();
                let log_norm = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln() - scale.ln();
                Shape::StudentT { nu, scale, log_norm }
            }
            NoiseFamily::Laplace => Shape::Laplace { b: (0.5 * variance).sqrt() },
            NoiseFamily::Cauchy => Shape::Cauchy { scale: variance.sqrt() },
            NoiseFamily::VarianceGamma => {
                let l = lambda.ok_or_else(|| Error::InvalidNoise("variance_gamma requires lambda".into()))?;
                if !(l >= 1.0) || l.fract() != 0.0 || l > 64.0 {
                    return Err(Error::InvalidNoise(format!(
                        "variance_gamma supports integer lambda in [1, 64], got {l}"
                    )));
                }
                lam = Some(l);
                // Var = 2λ / a²
                let rate = (2.0 * l / variance).sqrt();
                let n = l as usize - 1;
                // K_{n+1/2}(z) = sqrt(π/2z) e^{-z} Σ_j (n+j)!/(j!(n-j)!) (2z)^{-j}
                let coefs: Vec<f64> = (0..=n)
                    .map(|j| {
                        let c = ln_gamma((n + j + 1) as f64) - ln_gamma((j + 1) as f64) - ln_gamma((n - j + 1) as f64);
                        (c - j as f64 * (2.0 * rate).ln()).exp()
                    })
                    .collect();
                vg_coefs = Arc::from(coefs);
                let log_norm = 2.0 * l * rate.ln() - ln_gamma(l) - (n as f64 + 1.0) * (2.0 * rate).ln();
                Shape::VarianceGamma { rate, log_norm }
            }
            NoiseFamily::HyperbolicSecant => Shape::Sech { scale: variance.sqrt() },
        };
        Ok(NoiseSpec {
            family,
            variance,
            degrees_of_freedom: dof,
            lambda: lam,
            shape,
            vg_coefs,
            cdf_grid: Arc::new(OnceLock::new()),
        })
    }

    /// `family` at `variance`, with [`DEFAULT_DOF`] or [`DEFAULT_LAMBDA`]
    /// where a shape parameter is needed.
    pub fn with_defaults(family: NoiseFamily, variance: f64) -> Result<Self> {
        match family {
            NoiseFamily::StudentT => Self::new(family, variance, Some(DEFAULT_DOF), None),
            NoiseFamily::VarianceGamma => Self::new(family, variance, None, Some(DEFAULT_LAMBDA)),
            _ => Self::new(family, variance, None, None),
        }
    }

    pub fn gaussian(variance: f64) -> Result<Self> {
        Self::new(NoiseFamily::Gaussian, variance, None, None)
    }

    pub fn student_t(variance: f64, degrees_of_freedom: f64) -> Result<Self> {
        Self::new(NoiseFamily::StudentT, variance, Some(degrees_of_freedom), None)
    }

    pub fn laplace(variance: f64) -> Result<Self> {
        Self::new(NoiseFamily::Laplace, variance, None, None)
    }

    /// `scale_squared` is stored in the variance slot.
    pub fn cauchy(scale_squared: f64) -> Result<Self> {
        Self::new(NoiseFamily::Cauchy, scale_squared, None, None)
    }

    pub fn variance_gamma(variance: f64, lambda: f64) -> Result<Self> {
        Self::new(NoiseFamily::VarianceGamma, variance, None, Some(lambda))
    }

    pub fn hyperbolic_secant(variance: f64) -> Result<Self> {
        Self::new(NoiseFamily::HyperbolicSecant, variance, None, None)
    }

    /// Same family and shape parameters with a different variance.
    pub fn with_variance(&self, variance: f64) -> Result<Self> {
        Self::new(self.family, variance, self.degrees_of_freedom, self.lambda)
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn degrees_of_freedom(&self) -> Option<f64> {
        self.degrees_of_freedom
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn key(&self) -> SpecKey {
        SpecKey {
            family: self.family,
            variance: self.variance.to_bits(),
            dof: self.degrees_of_freedom.map_or(0, f64::to_bits),
            lambda: self.lambda.map_or(0, f64::to_bits),
        }
    }

    /// Natural width of the distribution, used to size integration domains.
    pub fn scale(&self) -> f64 {
        match self.shape {
            Shape::Gaussian { sigma } => sigma,
            Shape::StudentT { scale, .. } => scale,
            Shape::Laplace { b } => b,
            Shape::Cauchy { scale } => scale,
            Shape::VarianceGamma { .. } => self.variance.sqrt(),
            Shape::Sech { scale } => scale,
        }
    }

    /// Whether the density has a kink at its center, which quadrature must
    /// treat as a breakpoint.
    pub(crate) fn has_kink(&self) -> bool {
        matches!(self.shape, Shape::Laplace { .. } | Shape::VarianceGamma { .. })
    }

    pub fn log_pdf(&self, x: f64, mu: f64) -> f64 {
        let d = x - mu;
        match self.shape {
            Shape::Gaussian { sigma } => {
                let z = d / sigma;
                -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * PI).ln()
            }
            Shape::StudentT { nu, scale, log_norm } => {
                let z = d / scale;
                log_norm - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
            }
            Shape::Laplace { b } => -(2.0 * b).ln() - d.abs() / b,
            Shape::Cauchy { scale } => {
                let z = d / scale;
                -(PI * scale).ln() - (z * z).ln_1p()
            }
            Shape::VarianceGamma { rate, log_norm } => {
                let y = d.abs();
                let n = self.vg_coefs.len() - 1;
                // Horner in y over coef[j] y^{n-j}
                let poly = self.vg_coefs.iter().take(n + 1).fold(0.0, |acc, c| acc * y + c);
                log_norm - rate * y + poly.ln()
            }
            Shape::Sech { scale } => {
                let z = (FRAC_PI_2 * d / scale).abs();
                -scale.ln() - z - (-2.0 * z).exp().ln_1p()
            }
        }
    }

    pub fn pdf(&self, x: f64, mu: f64) -> f64 {
        self.log_pdf(x, mu).exp()
    }

    /// Upper tail `P(X > mu + d)` for `d >= 0`.
    fn upper_tail(&self, d: f64) -> f64 {
        match self.shape {
            Shape::Gaussian { sigma } => 0.5 * erfc(d / (sigma * std::f64::consts::SQRT_2)),
            Shape::Laplace { b } => 0.5 * (-d / b).exp(),
            Shape::Cauchy { scale } => 0.5 - (d / scale).atan() / PI,
            Shape::Sech { scale } => (-FRAC_PI_2 * d / scale).exp().atan() * 2.0 / PI,
            Shape::StudentT { .. } | Shape::VarianceGamma { .. } => self.grid().tail_mass(d),
        }
    }

    pub fn cdf(&self, x: f64, mu: f64) -> f64 {
        let d = x - mu;
        if d == 0.0 {
            0.5
        } else if d > 0.0 {
            1.0 - self.upper_tail(d)
        } else {
            self.upper_tail(-d)
        }
    }

    fn grid(&self) -> &CdfGrid {
        self.cdf_grid.get_or_init(|| CdfGrid::build(self))
    }

    /// Draws one centered sample.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.shape {
            Shape::Gaussian { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            Shape::StudentT { nu, scale, .. } => {
                let t = StudentT::new(nu).expect("validated degrees of freedom");
                scale * t.sample(rng)
            }
            Shape::Laplace { b } => {
                let e: f64 = rng.sample(Exp1);
                if rng.random::<bool>() {
                    b * e
                } else {
                    -b * e
                }
            }
            Shape::Cauchy { scale } => Cauchy::new(0.0, scale).expect("validated scale").sample(rng),
            Shape::VarianceGamma { rate, .. } => {
                // Normal variance-mean mixture: X = sqrt(G) Z, G ~ Gamma(λ, 2/a²).
                let lambda = self.lambda.expect("variance gamma has lambda");
                let g = Gamma::new(lambda, 2.0 / (rate * rate)).expect("validated shape").sample(rng);
                g.sqrt() * rng.sample::<f64, _>(StandardNormal)
            }
            Shape::Sech { scale } => {
                let p: f64 = rng.sample(Open01);
                2.0 * scale / PI * (FRAC_PI_2 * p).tan().ln()
            }
        }
    }

    /// Overwrites `out` with i.i.d. centered draws.
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.draw(rng);
        }
    }

    /// `dim` i.i.d. centered draws, deterministic in `seed`.
    pub fn sample(&self, dim: usize, seed: u64) -> Result<GradientVector> {
        if dim == 0 {
            return Err(Error::InvalidArgument("noise sample dimension must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; dim];
        self.fill(&mut rng, &mut values);
        Ok(GradientVector::new(values, Stage::Privatized))
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(variance={}", self.family, self.variance)?;
        if let Some(nu) = self.degrees_of_freedom {
            write!(f, ",dof={nu}")?;
        }
        if let Some(l) = self.lambda {
            write!(f, ",lambda={l}")?;
        }
        f.write_str(")")
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    /// Parses `family(variance=V[,dof=N][,lambda=L])`. Student-t defaults to
    /// 9 degrees of freedom and variance-gamma to lambda 2.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, params) = match s.find('(') {
            Some(open) => {
                let close = s
                    .rfind(')')
                    .filter(|c| *c > open && s[*c + 1..].trim().is_empty())
                    .ok_or_else(|| Error::InvalidNoise(format!("unbalanced parentheses in '{s}'")))?;
                (&s[..open], &s[open + 1..close])
            }
            None => (s, ""),
        };
        let family: NoiseFamily = name.parse()?;
        let mut variance = None;
        let mut dof = None;
        let mut lambda = None;
        for part in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidNoise(format!("expected key=value, got '{part}'")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidNoise(format!("bad number in '{part}'")))?;
            match k.trim() {
                "variance" | "var" => variance = Some(v),
                "sigma" => variance = Some(v * v),
                "dof" | "nu" | "degrees_of_freedom" => dof = Some(v),
                "lambda" => lambda = Some(v),
                other => return Err(Error::InvalidNoise(format!("unknown parameter '{other}'"))),
            }
        }
        let variance = variance.ok_or_else(|| Error::InvalidNoise(format!("missing variance in '{s}'")))?;
        match family {
            NoiseFamily::StudentT => NoiseSpec::new(family, variance, Some(dof.unwrap_or(DEFAULT_DOF)), None),
            NoiseFamily::VarianceGamma => NoiseSpec::new(family, variance, None, Some(lambda.unwrap_or(DEFAULT_LAMBDA))),
            _ => {
                if dof.is_some() || lambda.is_some() {
                    return Err(Error::InvalidNoise(format!("{family} takes only a variance")));
                }
                NoiseSpec::new(family, variance, None, None)
            }
        }
    }
}

/// Tabulated `G(d) = ∫_0^d z(x; 0) dx` on `d = w tan(u)`, `u` uniform on
/// `[0, π/2]`, interpolated by monotone cubic Hermite splines in `u`.
struct CdfGrid {
    width: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl CdfGrid {
    fn build(spec: &NoiseSpec) -> Self {
        let width = spec.scale();
        let n = CDF_GRID_POINTS;
        let step = FRAC_PI_2 / n as f64;
        let du_density = |u: f64| {
            if u >= FRAC_PI_2 {
                return 0.0;
            }
            let c = u.cos();
            let d = width * u.tan();
            spec.pdf(d, 0.0) * width / (c * c)
        };
        // Tail masses are accumulated from the far end inward so the
        // extreme tail keeps full relative precision.
        let mut values = vec![0.0; n + 1];
        let mut acc = 0.0;
        for i in (0..n).rev() {
            let a = step * i as f64;
            let b = if i + 1 == n { FRAC_PI_2 } else { step * (i + 1) as f64 };
            acc += adaptive_simpson(du_density, a, b, 1e-15, 1).unwrap_or_else(|_| {
                // Depth exhaustion here means a tolerance far below the
                // segment's own rounding; the estimate is still accurate.
                let m = 0.5 * (a + b);
                (b - a) / 6.0 * (du_density(a) + 4.0 * du_density(m) + du_density(b))
            });
            values[i] = acc;
        }
        let total = values[0];
        for v in values.iter_mut() {
            *v *= 0.5 / total;
        }
        let mut slopes: Vec<f64> = (0..=n).map(|i| -du_density(step * i as f64) * 0.5 / total).collect();
        // Fritsch-Carlson limiter keeps every cubic piece monotone.
        for i in 0..n {
            let secant = (values[i + 1] - values[i]) / step;
            if secant >= 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
                continue;
            }
            let a = slopes[i] / secant;
            let b = slopes[i + 1] / secant;
            let r = a * a + b * b;
            if r > 9.0 {
                let t = 3.0 / r.sqrt();
                slopes[i] = t * a * secant;
                slopes[i + 1] = t * b * secant;
            }
        }
        CdfGrid { width, step, values, slopes }
    }

    /// `P(X > d)` for `d >= 0`.
    fn tail_mass(&self, d: f64) -> f64 {
        let u = (d / self.width).atan();
        let pos = u / self.step;
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let t = pos - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.step, self.slopes[i + 1] * self.step);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1;
        v.clamp(0.0, 0.5)
    }
}

//! KS-distance rescaling of privatized gradients.
//!
//! The coordinates of a privatized gradient are treated as a one-dimensional
//! sample and compared with the (centered) noise distribution. The KS
//! distance `D ∈ [0, 1]` becomes a multiplicative scale: pure noise yields a
//! small `D` and is damped, while a gradient with signal is kept. Only the
//! noise distribution is consulted, never the realized noise.

use serde::{Deserialize, Serialize};

use crate::codebook::{GradientVector, Stage};
use crate::error::{Error, Result};
use crate::noise::NoiseSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseConfig {
    pub enabled: bool,
    /// Updates with `D <= threshold` are skipped. Zero never skips.
    pub threshold: f64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig { enabled: true, threshold: 0.0 }
    }
}

impl DenoiseConfig {
    pub fn disabled() -> Self {
        DenoiseConfig { enabled: false, threshold: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(format!("denoise threshold must lie in [0, 1), got {}", self.threshold)));
        }
        Ok(())
    }
}

/// One-sample KS statistic of `values` against `spec` centered at zero.
pub fn ks_statistic_values(values: &[f64], spec: &NoiseSpec) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("KS sample"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = spec.cdf(*x, 0.0);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above).max(below);
    }
    Ok(d.clamp(0.0, 1.0))
}

pub fn ks_statistic(vector: &GradientVector, spec: &NoiseSpec) -> Result<f64> {
    ks_statistic_values(vector.values(), spec)
}

/// Outcome of denoising one privatized gradient.
#[derive(Debug, Clone)]
pub struct Denoised {
    pub gradient: GradientVector,
    /// `false` when the thresholded variant says to skip the update.
    pub applied: bool,
    /// The KS distance, when it was computed.
    pub ks: Option<f64>,
}

pub fn denoise(privatized: &GradientVector, spec: &NoiseSpec, config: &DenoiseConfig) -> Result<Denoised> {
    config.validate()?;
    if !config.enabled {
        return Ok(Denoised { gradient: privatized.clone().with_stage(Stage::Denoised), applied: true, ks: None });
    }
    let d = ks_statistic(privatized, spec)?;
    if d <= config.threshold {
        return Ok(Denoised { gradient: privatized.clone().with_stage(Stage::Denoised), applied: false, ks: Some(d) });
    }
    let scaled = privatized.values().iter().map(|v| d * v).collect();
    Ok(Denoised { gradient: GradientVector::new(scaled, Stage::Denoised), applied: true, ks: Some(d) })
}

//! Distortion of privatized gradients at matched privacy.
//!
//! For each noise family and each target `D₂` (the order-2 RDP of one
//! release), the variance achieving the target is found by bisection.
//! Synthetic gradients are then encoded, noised, and compared with the
//! originals in L1 distance.

use std::fmt::Write as _;

use encdp::accountant::codebook_rdp;
use encdp::codebook::{encode_batch, generate_codebook, Codebook, GradientVector, Stage};
use encdp::noise::{NoiseFamily, NoiseSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CliError, Result};
use crate::output::Table;

/// Largest accepted gap between the achieved and the requested `D₂`.
pub const D2_TOLERANCE: f64 = 1e-4;

const CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct L1Params {
    pub targets: Vec<f64>,
    pub families: Vec<NoiseFamily>,
    pub dim: usize,
    pub codebook_size: usize,
    pub q: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for L1Params {
    fn default() -> Self {
        L1Params {
            targets: vec![0.1, 0.18, 0.26, 0.34, 0.42, 0.5],
            families: vec![NoiseFamily::StudentT, NoiseFamily::Gaussian, NoiseFamily::Laplace],
            dim: 64,
            codebook_size: 100,
            q: 1.0,
            trials: 200_000,
            seed: 0,
        }
    }
}

impl L1Params {
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut s = String::new();
        let _ = writeln!(s, "targets = {}", join(self.targets.iter().map(|t| t.to_string()).collect()));
        let _ = writeln!(s, "families = {}", join(self.families.iter().map(|f| f.to_string()).collect()));
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "codebook_size = {}", self.codebook_size);
        let _ = writeln!(s, "q = {}", self.q);
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Row {
    pub family: NoiseFamily,
    pub target: f64,
    pub achieved: f64,
    pub variance: f64,
    pub mean_l1: f64,
}

/// Noise of `family` whose single-release order-2 RDP equals `target`.
/// Returns the spec and the achieved `D₂`.
pub fn match_d2(family: NoiseFamily, target: f64, q: f64, codebook: &Codebook) -> Result<(NoiseSpec, f64)> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(CliError::Setting(format!("D2 target must be positive and finite, got {target}")));
    }
    let d2 = |log_var: f64| -> Result<f64> {
        Ok(codebook_rdp(2, q, codebook, &NoiseSpec::with_defaults(family, log_var.exp())?)?)
    };
    // D₂ falls as the variance grows; bracket the target in log-variance
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    let mut tries = 0;
    while d2(lo)? <= target {
        lo -= 2.0;
        tries += 1;
        if tries > 40 {
            return Err(CliError::Setting(format!("{family}: D2 target {target} is unreachable at q={q}")));
        }
    }
    while d2(hi)? > target {
        hi += 2.0;
        tries += 1;
        if tries > 40 {
            return Err(CliError::Setting(format!("{family}: D2 target {target} is unreachable at q={q}")));
        }
    }
    for _ in 0..200 {
        if hi - lo < 1e-13 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if d2(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let spec = NoiseSpec::with_defaults(family, (0.5 * (lo + hi)).exp())?;
    let achieved = codebook_rdp(2, q, codebook, &spec)?;
    if (achieved - target).abs() >= D2_TOLERANCE {
        return Err(CliError::Setting(format!("{family}: bisection ended at D2={achieved}, target {target}")));
    }
    Ok((spec, achieved))
}

/// Runs the experiment; rows are grouped by family in `params.families`
/// order, targets in the given order.
pub fn l1_experiment(params: &L1Params) -> Result<Vec<L1Row>> {
    if params.trials == 0 || params.targets.is_empty() || params.families.is_empty() {
        return Err(CliError::Setting("l1-experiment needs trials, targets and families".into()));
    }
    if !(params.q > 0.0 && params.q <= 1.0) {
        return Err(CliError::Setting(format!("q must lie in (0, 1], got {}", params.q)));
    }
    let codebook = generate_codebook(params.codebook_size, params.dim, params.seed)?;
    let mut points = Vec::new();
    for &family in &params.families {
        for &target in &params.targets {
            let (spec, achieved) = match_d2(family, target, params.q, &codebook)?;
            points.push((family, target, achieved, spec));
        }
    }

    // one noise stream per point, so results do not depend on chunking
    let mut noise_rngs: Vec<ChaCha8Rng> = (0..points.len())
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(1 + i as u64);
            rng
        })
        .collect();
    let mut grad_rng = ChaCha8Rng::seed_from_u64(params.seed);
    let scale = 1.0 / (params.dim as f64).sqrt();
    let mut totals = vec![0.0; points.len()];
    let mut noise = vec![0.0; params.dim];
    let mut done = 0;
    while done < params.trials {
        let n = CHUNK.min(params.trials - done);
        let grads: Vec<GradientVector> = (0..n)
            .map(|_| {
                let v = (0..params.dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut grad_rng);
                        scale * z
                    })
                    .collect();
                GradientVector::new(v, Stage::Raw)
            })
            .collect();
        let encoded = encode_batch(&grads, &codebook)?;
        for (p, (_, _, _, spec)) in points.iter().enumerate() {
            let rng = &mut noise_rngs[p];
            for (g, e) in grads.iter().zip(&encoded) {
                spec.fill(rng, &mut noise);
                totals[p] += g
                    .values()
                    .iter()
                    .zip(e.gradient.values())
                    .zip(&noise)
                    .map(|((orig, enc), z)| (enc + z - orig).abs())
                    .sum::<f64>();
            }
        }
        done += n;
    }
    Ok(points
        .into_iter()
        .zip(totals)
        .map(|((family, target, achieved, spec), total)| L1Row {
            family,
            target,
            achieved,
            variance: spec.variance(),
            mean_l1: total / params.trials as f64,
        })
        .collect())
}

pub fn rows_table(rows: &[L1Row]) -> Table {
    let mut table = Table::new(&["family", "d2_target", "d2_achieved", "variance", "mean_l1"]);
    for r in rows {
        table.push(vec![
            r.family.to_string(),
            r.target.to_string(),
            r.achieved.to_string(),
            r.variance.to_string(),
            r.mean_l1.to_string(),
        ]);
    }
    table
}

/// Number of targets at which mean L1 error strictly increases along
/// `order`, out of the targets where every family in `order` was run.
pub fn ordering_hits(rows: &[L1Row], order: &[NoiseFamily]) -> (usize, usize) {
    let mut targets: Vec<f64> = rows.iter().map(|r| r.target).collect();
    targets.sort_by(f64::total_cmp);
    targets.dedup();
    let (mut hits, mut total) = (0, 0);
    for t in targets {
        let errs: Option<Vec<f64>> = order
            .iter()
            .map(|f| rows.iter().find(|r| r.family == *f && r.target == t).map(|r| r.mean_l1))
            .collect();
        if let Some(errs) = errs {
            total += 1;
            if errs.windows(2).all(|w| w[0] < w[1]) {
                hits += 1;
            }
        }
    }
    (hits, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> L1Params {
        L1Params { targets: vec![0.2, 0.4], dim: 8, codebook_size: 5, trials: 300, seed: 3, ..L1Params::default() }
    }

    #[test]
    fn bisection_hits_target() {
        let cb = generate_codebook(5, 8, 1).unwrap();
        for family in [NoiseFamily::Gaussian, NoiseFamily::StudentT, NoiseFamily::Laplace] {
            for &q in &[1.0, 0.3] {
                let (spec, achieved) = match_d2(family, 0.25, q, &cb).unwrap();
                assert!((achieved - 0.25).abs() < D2_TOLERANCE);
                assert_eq!(codebook_rdp(2, q, &cb, &spec).unwrap(), achieved);
            }
        }
        assert!(match_d2(NoiseFamily::Gaussian, 0.0, 1.0, &cb).is_err());
    }

    #[test]
    fn gaussian_match_is_closed_form_at_full_rate() {
        // at q = 1 one release costs D₂ = |c|² / σ² for a unit codeword
        let cb = Codebook::from_magnitudes(3, 0, vec![vec![1.0]]).unwrap();
        let (spec, _) = match_d2(NoiseFamily::Gaussian, 0.3, 1.0, &cb).unwrap();
        assert!((spec.variance() - 1.0 / 0.3).abs() < 1e-9, "{}", spec.variance());
    }

    #[test]
    fn deterministic_and_shaped() {
        let a = l1_experiment(&small()).unwrap();
        let b = l1_experiment(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        // more privacy budget, less noise
        for pair in a.chunks(2) {
            assert!(pair[0].variance > pair[1].variance);
            assert!(pair[0].mean_l1 > pair[1].mean_l1);
        }
    }

    #[test]
    fn counts_ordered_targets() {
        let row = |family, target, mean_l1| L1Row { family, target, achieved: target, variance: 1.0, mean_l1 };
        let rows = vec![
            row(NoiseFamily::StudentT, 0.1, 1.0),
            row(NoiseFamily::Gaussian, 0.1, 2.0),
            row(NoiseFamily::StudentT, 0.2, 3.0),
            row(NoiseFamily::Gaussian, 0.2, 2.0),
            row(NoiseFamily::StudentT, 0.3, 1.0),
        ];
        assert_eq!(ordering_hits(&rows, &[NoiseFamily::StudentT, NoiseFamily::Gaussian]), (1, 2));
    }
}

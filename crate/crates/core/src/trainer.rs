//! Private training loop: Poisson subsampling, per-micro-batch gradients,
//! encoding (or unit clipping for the baseline), aggregation, noise,
//! denoising and the SGD update, with privacy accounted alongside.

use std::collections::HashMap;
use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accountant::{codebook_rdp_curve, gaussian_baseline_curve, to_dp, PrivacyParams, RdpCurve, DEFAULT_ALPHA_MAX};
use crate::codebook::{encode_batch, l2_norm, Codebook, GradientVector, Stage};
use crate::data::Dataset;
use crate::denoise::{denoise, DenoiseConfig};
use crate::error::{Error, Result};
use crate::model::{evaluate_accuracy, Mlp};
use crate::noise::{NoiseFamily, NoiseSpec, SpecKey};

pub const DEFAULT_DELTA: f64 = 1e-5;

/// Noise distribution per iteration.
#[derive(Debug, Clone)]
pub enum NoiseSchedule {
    Constant(NoiseSpec),
    PerStep(Vec<NoiseSpec>),
}

impl NoiseSchedule {
    pub fn spec_at(&self, iteration: usize) -> &NoiseSpec {
        match self {
            NoiseSchedule::Constant(s) => s,
            NoiseSchedule::PerStep(v) => &v[iteration],
        }
    }

    fn specs(&self) -> Vec<&NoiseSpec> {
        match self {
            NoiseSchedule::Constant(s) => vec![s],
            NoiseSchedule::PerStep(v) => v.iter().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingConfig {
    /// Independent inclusion probability of each record.
    pub q: f64,
    pub micro_batch_size: usize,
    pub iterations: usize,
    pub eta: f64,
    pub schedule: NoiseSchedule,
    pub denoise: DenoiseConfig,
    pub seed: u64,
    /// Accuracy checkpoint period; 0 evaluates only after the last step.
    pub eval_every: usize,
    /// Clip each micro-batch gradient to unit norm and add Gaussian noise
    /// instead of encoding.
    pub baseline: bool,
    pub alpha_max: u32,
    pub delta: f64,
}

impl TrainingConfig {
    pub fn new(q: f64, iterations: usize, eta: f64, spec: NoiseSpec) -> Self {
        TrainingConfig {
            q,
            micro_batch_size: 1,
            iterations,
            eta,
            schedule: NoiseSchedule::Constant(spec),
            denoise: DenoiseConfig::default(),
            seed: 0,
            eval_every: 0,
            baseline: false,
            alpha_max: DEFAULT_ALPHA_MAX,
            delta: DEFAULT_DELTA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::InvalidArgument(format!("q must lie in (0, 1], got {}", self.q)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.eta)));
        }
        if self.micro_batch_size == 0 {
            return Err(Error::InvalidArgument("micro_batch_size must be at least 1".into()));
        }
        if self.alpha_max < 2 {
            return Err(Error::InvalidArgument("alpha_max must be at least 2".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if let NoiseSchedule::PerStep(v) = &self.schedule {
            if v.len() != self.iterations {
                return Err(Error::InvalidArgument(format!(
                    "noise schedule has {} entries for {} iterations",
                    v.len(),
                    self.iterations
                )));
            }
        }
        if self.baseline && self.schedule.specs().iter().any(|s| s.family() != NoiseFamily::Gaussian) {
            return Err(Error::InvalidArgument("the clipping baseline needs Gaussian noise".into()));
        }
        self.denoise.validate()
    }
}

/// Poisson subsampling: each of `n` records is kept with probability `q`,
/// and kept records are grouped in order into micro-batches (the last one
/// may be short).
pub fn sample_minibatch<R: Rng + ?Sized>(n: usize, q: f64, micro_batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let size = micro_batch_size.max(1);
    let included: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < q).collect();
    included.chunks(size).map(|c| c.to_vec()).collect()
}

/// Scales `v` down to L2 norm at most `bound`.
pub fn clip_to_norm(v: &mut [f64], bound: f64) {
    let norm = l2_norm(v);
    if norm > bound {
        let s = bound / norm;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: usize,
    pub included: usize,
    pub micro_batches: usize,
    /// Mean L2 norm of the raw micro-batch gradients (0 when none).
    pub mean_raw_norm: f64,
    /// Norm of the aggregate before noise.
    pub aggregate_norm: f64,
    pub privatized_norm: f64,
    pub ks: Option<f64>,
    pub applied: bool,
}

/// One iteration of the private update applied to `model` in place.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut Mlp,
    dataset: &Dataset,
    config: &TrainingConfig,
    codebook: Option<&Codebook>,
    spec: &NoiseSpec,
    rng: &mut R,
    iteration: usize,
) -> Result<StepReport> {
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let codebook = match (config.baseline, codebook) {
        (false, None) => return Err(Error::InvalidArgument("encoded training needs a codebook".into())),
        (false, Some(cb)) if cb.dim() != model.dim() => {
            return Err(Error::DimensionMismatch { expected: model.dim(), actual: cb.dim() })
        }
        (_, cb) => cb,
    };
    let batches = sample_minibatch(dataset.len(), config.q, config.micro_batch_size, rng);
    let mut raw = Vec::with_capacity(batches.len());
    for batch in &batches {
        raw.push(model.micro_batch_gradient(dataset, batch)?);
    }
    let raw_norm_sum: f64 = raw.iter().map(|g| g.norm()).sum();
    let contributions: Vec<GradientVector> = if config.baseline {
        raw.into_iter()
            .map(|g| {
                let mut v = g.into_values();
                clip_to_norm(&mut v, 1.0);
                GradientVector::new(v, Stage::Encoded)
            })
            .collect()
    } else {
        encode_batch(&raw, codebook.expect("checked above"))?.into_iter().map(|e| e.gradient).collect()
    };
    // summed in micro-batch order
    let mut aggregate = vec![0.0; model.dim()];
    for c in &contributions {
        for (a, v) in aggregate.iter_mut().zip(c.values()) {
            *a += v;
        }
    }
    let aggregate_norm = l2_norm(&aggregate);
    let mut noise = vec![0.0; model.dim()];
    spec.fill(rng, &mut noise);
    for (a, z) in aggregate.iter_mut().zip(&noise) {
        *a += z;
    }
    let privatized = GradientVector::new(aggregate, Stage::Privatized);
    let privatized_norm = privatized.norm();
    let out = denoise(&privatized, spec, &config.denoise)?;
    if out.applied {
        model.apply_update(out.gradient.values(), config.eta)?;
        if let Some(pos) = model.params().iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { what: format!("parameter {pos}"), iteration: Some(iteration) });
        }
    }
    let included: usize = batches.iter().map(|b| b.len()).sum();
    Ok(StepReport {
        iteration,
        included,
        micro_batches: batches.len(),
        mean_raw_norm: if batches.is_empty() { 0.0 } else { raw_norm_sum / batches.len() as f64 },
        aggregate_norm,
        privatized_norm,
        ks: out.ks,
        applied: out.applied,
    })
}

/// Privacy spent by a run; a function of the mechanism, `q`, the codebook,
/// the noise schedule and the iteration count only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub mechanism: String,
    pub q: f64,
    pub iterations: usize,
    pub noise: Vec<String>,
    pub codebook: Option<String>,
    pub rdp: RdpCurve,
    pub dp: PrivacyParams,
}

impl PrivacyReport {
    /// Canonical text form; equal reports give byte-identical text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mechanism={}", self.mechanism);
        let _ = writeln!(s, "q={:e}", self.q);
        let _ = writeln!(s, "iterations={}", self.iterations);
        let _ = writeln!(s, "noise={}", self.noise.join(";"));
        let _ = writeln!(s, "codebook={}", self.codebook.as_deref().unwrap_or("none"));
        let _ = writeln!(s, "delta={:e}", self.dp.delta);
        let _ = writeln!(s, "epsilon={:e}", self.dp.epsilon);
        let _ = writeln!(s, "achieving_alpha={}", self.dp.achieving_alpha);
        for (alpha, eps) in self.rdp.iter() {
            let _ = writeln!(s, "rdp[{alpha}]={eps:e}");
        }
        s
    }
}

/// Incrementally composed privacy of a run, caching per-spec curves.
pub struct PrivacyLedger<'a> {
    baseline: bool,
    q: f64,
    alpha_max: u32,
    delta: f64,
    codebook: Option<&'a Codebook>,
    cache: HashMap<SpecKey, RdpCurve>,
    total: RdpCurve,
    steps: usize,
    noise: Vec<String>,
}

impl<'a> PrivacyLedger<'a> {
    pub fn new(config: &TrainingConfig, codebook: Option<&'a Codebook>) -> Self {
        PrivacyLedger {
            baseline: config.baseline,
            q: config.q,
            alpha_max: config.alpha_max,
            delta: config.delta,
            codebook,
            cache: HashMap::new(),
            total: RdpCurve::zeros(config.alpha_max),
            steps: 0,
            noise: Vec::new(),
        }
    }

    /// Per-iteration curve for `spec`.
    pub fn step_curve(&mut self, spec: &NoiseSpec) -> Result<RdpCurve> {
        if let Some(c) = self.cache.get(&spec.key()) {
            return Ok(c.clone());
        }
        let curve = if self.baseline {
            gaussian_baseline_curve(self.alpha_max, self.q, spec.variance().sqrt())?
        } else {
            let cb = self.codebook.ok_or_else(|| Error::InvalidArgument("encoded accounting needs a codebook".into()))?;
            codebook_rdp_curve(self.alpha_max, self.q, cb, spec)?
        };
        self.cache.insert(spec.key(), curve.clone());
        Ok(curve)
    }

    pub fn record(&mut self, spec: &NoiseSpec) -> Result<()> {
        let curve = self.step_curve(spec)?;
        self.total.add(&curve)?;
        self.steps += 1;
        let name = spec.to_string();
        if self.noise.last() != Some(&name) {
            self.noise.push(name);
        }
        Ok(())
    }

    pub fn epsilon(&self) -> Result<f64> {
        if self.steps == 0 {
            return Ok(0.0);
        }
        Ok(to_dp(&self.total, self.delta)?.epsilon)
    }

    pub fn report(&self) -> Result<PrivacyReport> {
        let dp = if self.steps == 0 {
            PrivacyParams { epsilon: 0.0, delta: self.delta, achieving_alpha: 2 }
        } else {
            to_dp(&self.total, self.delta)?
        };
        Ok(PrivacyReport {
            mechanism: if self.baseline { "clip-gaussian" } else { "encoded" }.to_string(),
            q: self.q,
            iterations: self.steps,
            noise: self.noise.clone(),
            codebook: if self.baseline {
                None
            } else {
                self.codebook.map(|c| format!("n={},dim={},seed={}", c.len(), c.dim(), c.seed()))
            },
            rdp: self.total.clone(),
            dp,
        })
    }
}

/// Privacy of a run without training it.
pub fn account_run(config: &TrainingConfig, codebook: Option<&Codebook>) -> Result<PrivacyReport> {
    config.validate()?;
    let mut ledger = PrivacyLedger::new(config, codebook);
    for t in 0..config.iterations {
        ledger.record(config.schedule.spec_at(t))?;
    }
    ledger.report()
}

/// One row of the training trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// 1-based count of completed iterations.
    pub iteration: usize,
    pub accuracy: Option<f64>,
    pub eps_dp_so_far: f64,
    pub ks_value: Option<f64>,
    pub update_applied: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: Mlp,
    pub trajectory: Vec<TrajectoryPoint>,
    pub privacy: PrivacyReport,
    pub final_accuracy: Option<f64>,
}

/// Runs `config.iterations` steps starting from `model`, evaluating on
/// `eval_set` every `eval_every` iterations and after the last one.
pub fn train(
    mut model: Mlp,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    codebook: Option<&Codebook>,
    config: &TrainingConfig,
) -> Result<TrainingOutcome> {
    config.validate()?;
    if train_set.dim() != model.architecture().input_dim() {
        return Err(Error::DimensionMismatch { expected: model.architecture().input_dim(), actual: train_set.dim() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ledger = PrivacyLedger::new(config, codebook);
    let mut trajectory = Vec::with_capacity(config.iterations);
    let mut final_accuracy = None;
    for t in 0..config.iterations {
        let spec = config.schedule.spec_at(t);
        let report = train_step(&mut model, train_set, config, codebook, spec, &mut rng, t)?;
        ledger.record(spec)?;
        let done = t + 1;
        let checkpoint = done == config.iterations || (config.eval_every > 0 && done % config.eval_every == 0);
        let accuracy = match (checkpoint, eval_set) {
            (true, Some(test)) => Some(evaluate_accuracy(&model, test)?),
            _ => None,
        };
        if accuracy.is_some() {
            final_accuracy = accuracy;
            info!("iteration {done}: accuracy {:.4}, eps {:.4}", accuracy.unwrap(), ledger.epsilon()?);
        }
        debug!("step {t}: {report:?}");
        trajectory.push(TrajectoryPoint {
            iteration: done,
            accuracy,
            eps_dp_so_far: ledger.epsilon()?,
            ks_value: report.ks,
            update_applied: report.applied,
        });
    }
    if config.iterations == 0 {
        final_accuracy = eval_set.map(|test| evaluate_accuracy(&model, test)).transpose()?;
    }
    Ok(TrainingOutcome { model, trajectory, privacy: ledger.report()?, final_accuracy })
}

/// Plain minibatch SGD with no privacy, used as a sanity reference.
pub fn fit_non_private(model: &mut Mlp, dataset: &Dataset, epochs: usize, batch_size: usize, eta: f64, seed: u64) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size.max(1)) {
            let g = model.micro_batch_gradient(dataset, chunk)?;
            model.apply_update(g.values(), eta)?;
        }
    }
    Ok(())
}

/// Fixed-width histogram whose range covers the observed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self> {
        let mut h = Histogram::empty_range(values.iter().copied(), bins)?;
        h.add(values);
        Ok(h)
    }

    fn empty_range(values: impl Iterator<Item = f64>, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "histogram input".into(), iteration: None });
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            return Err(Error::Empty("histogram input"));
        }
        if lo == hi {
            // a single value sits in the middle of a unit-wide range
            lo -= 0.5;
            hi += 0.5;
        }
        let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + (hi - lo) * i as f64 / bins as f64 }).collect();
        Ok(Histogram { edges, counts: vec![0; bins] })
    }

    fn add(&mut self, values: &[f64]) {
        let bins = self.counts.len();
        let lo = self.edges[0];
        let hi = self.edges[bins];
        for v in values {
            let i = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
            self.counts[i.min(bins - 1)] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Pools every per-example gradient coordinate over `dataset`.
pub fn gradient_histogram(model: &Mlp, dataset: &Dataset, bins: usize) -> Result<Histogram> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut g = vec![0.0; model.dim()];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..dataset.len() {
        model.example_gradient(dataset.features(i), dataset.label(i), &mut g)?;
        for v in &g {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    let mut h = Histogram::empty_range([lo, hi].into_iter(), bins)?;
    for i in 0..dataset.len() {
        model.example_gradient(dataset.features(i), dataset.label(i), &mut g)?;
        h.add(&g);
    }
    Ok(h)
}

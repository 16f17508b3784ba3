//! Run configuration: a flat `key = value` document.
//!
//! Blank lines and `#` comments are ignored, every key may appear at most
//! once, and unknown keys are rejected. [`RunConfig::to_text`] renders the
//! fully resolved configuration (defaults filled in, command-line overrides
//! applied) in a canonical order, and that text is what gets hashed and
//! echoed next to every output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use encdp::data::{load_idx, subset, synth_gaussian_blobs, Dataset};
use encdp::denoise::DenoiseConfig;
use encdp::model::Architecture;
use encdp::noise::NoiseSpec;
use encdp::trainer::{NoiseSchedule, TrainingConfig, DEFAULT_DELTA};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// MNIST-style IDX files.
    Idx,
    /// Synthetic Gaussian blobs, handy for smoke runs.
    Blobs,
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "idx" => Ok(DataSource::Idx),
            "blobs" => Ok(DataSource::Blobs),
            other => Err(format!("unknown dataset '{other}' (expected idx or blobs)")),
        }
    }
}

impl DataSource {
    fn as_str(self) -> &'static str {
        match self {
            DataSource::Idx => "idx",
            DataSource::Blobs => "blobs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub dataset: DataSource,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Records drawn from the training file; 0 keeps all of them.
    pub train_subset: usize,
    pub subset_seed: u64,
    pub blobs_classes: usize,
    pub blobs_dim: usize,
    pub blobs_train: usize,
    pub blobs_test: usize,
    /// Hidden layer width; 0 gives a linear softmax model.
    pub hidden: usize,
    pub model_seed: u64,
    pub q: f64,
    pub micro_batch_size: usize,
    pub iterations: usize,
    pub eta: f64,
    /// One spec, or `spec*count; spec*count; ...` covering every iteration.
    pub noise: String,
    pub codebook: Option<PathBuf>,
    pub codebook_size: usize,
    pub codebook_seed: u64,
    pub denoise: bool,
    pub denoise_threshold: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub baseline: bool,
    pub delta: f64,
    pub alpha_max: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            dataset: DataSource::Idx,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_subset: 0,
            subset_seed: 0,
            blobs_classes: 10,
            blobs_dim: 20,
            blobs_train: 1000,
            blobs_test: 500,
            hidden: 32,
            model_seed: 0,
            q: 0.01,
            micro_batch_size: 1,
            iterations: 2000,
            eta: 0.3,
            noise: "gaussian(variance=1.21)".into(),
            codebook: None,
            codebook_size: 1000,
            codebook_seed: 0,
            denoise: true,
            denoise_threshold: 0.0,
            seed: 0,
            eval_every: 0,
            baseline: false,
            delta: DEFAULT_DELTA,
            alpha_max: 64,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse '{value}' for {key}"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("cannot parse '{value}' for {key} (expected true or false)")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config { line: line_no, reason: format!("expected key = value, got '{line}'") })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(CliError::Config { line: line_no, reason: format!("duplicate key '{key}'") });
            }
            cfg.set(key, value).map_err(|reason| CliError::Config { line: line_no, reason })?;
            seen.push(key.to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        RunConfig::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let path = || Some(PathBuf::from(value));
        match key {
            "name" => self.name = value.to_string(),
            "dataset" => self.dataset = value.parse()?,
            "train_images" => self.train_images = path(),
            "train_labels" => self.train_labels = path(),
            "test_images" => self.test_images = path(),
            "test_labels" => self.test_labels = path(),
            "train_subset" => self.train_subset = parse_value(key, value)?,
            "subset_seed" => self.subset_seed = parse_value(key, value)?,
            "blobs_classes" => self.blobs_classes = parse_value(key, value)?,
            "blobs_dim" => self.blobs_dim = parse_value(key, value)?,
            "blobs_train" => self.blobs_train = parse_value(key, value)?,
            "blobs_test" => self.blobs_test = parse_value(key, value)?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "model_seed" => self.model_seed = parse_value(key, value)?,
            "q" => self.q = parse_value(key, value)?,
            "micro_batch_size" => self.micro_batch_size = parse_value(key, value)?,
            "iterations" => self.iterations = parse_value(key, value)?,
            "eta" => self.eta = parse_value(key, value)?,
            "noise" => {
                parse_schedule(value, None).map_err(|e| e.to_string())?;
                self.noise = value.to_string();
            }
            "codebook" => self.codebook = path(),
            "codebook_size" => self.codebook_size = parse_value(key, value)?,
            "codebook_seed" => self.codebook_seed = parse_value(key, value)?,
            "denoise" => self.denoise = parse_bool(key, value)?,
            "denoise_threshold" => self.denoise_threshold = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "baseline" => self.baseline = parse_bool(key, value)?,
            "delta" => self.delta = parse_value(key, value)?,
            "alpha_max" => self.alpha_max = parse_value(key, value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Canonical `key = value` rendering of every setting.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("name", self.name.clone());
        put("dataset", self.dataset.as_str().into());
        for (k, p) in [
            ("train_images", &self.train_images),
            ("train_labels", &self.train_labels),
            ("test_images", &self.test_images),
            ("test_labels", &self.test_labels),
        ] {
            if let Some(p) = p {
                put(k, p.display().to_string());
            }
        }
        put("train_subset", self.train_subset.to_string());
        put("subset_seed", self.subset_seed.to_string());
        put("blobs_classes", self.blobs_classes.to_string());
        put("blobs_dim", self.blobs_dim.to_string());
        put("blobs_train", self.blobs_train.to_string());
        put("blobs_test", self.blobs_test.to_string());
        put("hidden", self.hidden.to_string());
        put("model_seed", self.model_seed.to_string());
        put("q", self.q.to_string());
        put("micro_batch_size", self.micro_batch_size.to_string());
        put("iterations", self.iterations.to_string());
        put("eta", self.eta.to_string());
        put("noise", self.noise.clone());
        if let Some(p) = &self.codebook {
            put("codebook", p.display().to_string());
        }
        put("codebook_size", self.codebook_size.to_string());
        put("codebook_seed", self.codebook_seed.to_string());
        put("denoise", self.denoise.to_string());
        put("denoise_threshold", self.denoise_threshold.to_string());
        put("seed", self.seed.to_string());
        put("eval_every", self.eval_every.to_string());
        put("baseline", self.baseline.to_string());
        put("delta", self.delta.to_string());
        put("alpha_max", self.alpha_max.to_string());
        s
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        parse_schedule(&self.noise, Some(self.iterations))
    }

    pub fn training_config(&self) -> Result<TrainingConfig> {
        let mut cfg = TrainingConfig::new(self.q, self.iterations, self.eta, NoiseSpec::gaussian(1.0)?);
        cfg.schedule = self.schedule()?;
        cfg.micro_batch_size = self.micro_batch_size;
        cfg.denoise = DenoiseConfig { enabled: self.denoise, threshold: self.denoise_threshold };
        cfg.seed = self.seed;
        cfg.eval_every = self.eval_every;
        cfg.baseline = self.baseline;
        cfg.alpha_max = self.alpha_max;
        cfg.delta = self.delta;
        Ok(cfg)
    }

    /// Loads (or synthesizes) the training and evaluation sets.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        match self.dataset {
            DataSource::Blobs => {
                let train = synth_gaussian_blobs(self.blobs_classes, self.blobs_train, self.blobs_dim, self.subset_seed)?;
                let test = synth_gaussian_blobs(
                    self.blobs_classes,
                    self.blobs_test,
                    self.blobs_dim,
                    self.subset_seed.wrapping_add(1),
                )?;
                Ok((train, test))
            }
            DataSource::Idx => {
                let need = |p: &Option<PathBuf>, key: &str| {
                    p.clone().ok_or_else(|| CliError::Setting(format!("dataset = idx requires {key}")))
                };
                let train = load_idx(&need(&self.train_images, "train_images")?, &need(&self.train_labels, "train_labels")?)?;
                let test = load_idx(&need(&self.test_images, "test_images")?, &need(&self.test_labels, "test_labels")?)?;
                let train = if self.train_subset > 0 { subset(&train, self.train_subset, self.subset_seed)? } else { train };
                Ok((train, test))
            }
        }
    }

    pub fn architecture(&self, data: &Dataset) -> Result<Architecture> {
        let mut sizes = vec![data.dim()];
        if self.hidden > 0 {
            sizes.push(self.hidden);
        }
        sizes.push(data.classes());
        Ok(Architecture::new(sizes)?)
    }
}

/// Parses a noise schedule. A single spec without a count is constant; a
/// `;`-separated list of `spec*count` entries must cover `iterations` when
/// that is given.
pub fn parse_schedule(text: &str, iterations: Option<usize>) -> Result<NoiseSchedule> {
    let parts: Vec<&str> = text.split(';').map(str::trim).filter(|p| !p.is_empty()).collect();
    let bad = |reason: String| CliError::Setting(format!("noise: {reason}"));
    if parts.is_empty() {
        return Err(bad("empty schedule".into()));
    }
    if parts.len() == 1 && !parts[0].contains('*') {
        return Ok(NoiseSchedule::Constant(parts[0].parse()?));
    }
    let mut steps = Vec::new();
    for part in parts {
        let (spec, count) = part.rsplit_once('*').ok_or_else(|| bad(format!("'{part}' needs a *count suffix")))?;
        let count: usize = count.trim().parse().map_err(|_| bad(format!("bad count in '{part}'")))?;
        let spec: NoiseSpec = spec.parse()?;
        steps.extend(std::iter::repeat_n(spec, count));
    }
    if let Some(t) = iterations {
        if steps.len() != t {
            return Err(bad(format!("schedule covers {} iterations, config has {t}", steps.len())));
        }
    }
    Ok(NoiseSchedule::PerStep(steps))
}

/// Lowercase hex SHA-256 of `text`.
pub fn sha256_hex(text: &[u8]) -> String {
    Sha256::digest(text).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

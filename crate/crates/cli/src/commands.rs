//! Subcommand implementations. Each returns its result table so callers
//! (the binary, tests) can print or inspect it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use encdp::accountant::PrivacyParams;
use encdp::codebook::{generate_codebook, Codebook};
use encdp::data::parse_idx_images;
use encdp::model::{Architecture, Mlp};
use encdp::noise::{NoiseFamily, NoiseSpec};
use encdp::trainer::{gradient_histogram, train, PrivacyLedger, TrainingOutcome};
use log::info;
use serde::Serialize;

use crate::config::{sha256_hex, DataSource, RunConfig};
use crate::error::{io_err, CliError, Result};
use crate::output::{cell, RunDir, Table};

pub const DEFAULT_CODEBOOK_SIZE: usize = 1000;
pub const GAUSSIAN_SWEEP: [f64; 4] = [0.8, 1.0, 1.2, 1.4];
pub const STUDENT_T_SWEEP: [f64; 7] = [0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5];

/// Writes a generated codebook to `path` and returns the file's SHA-256.
pub fn gen_codebook(size: usize, dim: usize, seed: u64, path: &Path) -> Result<String> {
    let cb = generate_codebook(size, dim, seed)?;
    cb.save(path)?;
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(sha256_hex(&bytes))
}

/// Parameter count of the model a config describes, found without loading
/// the training records.
pub fn model_dim(cfg: &RunConfig) -> Result<usize> {
    let (input, classes) = match cfg.dataset {
        DataSource::Blobs => (cfg.blobs_dim, cfg.blobs_classes),
        DataSource::Idx => {
            let path = cfg
                .train_images
                .as_ref()
                .ok_or_else(|| CliError::Setting("dataset = idx requires train_images".into()))?;
            let bytes = fs::read(path).map_err(io_err(path))?;
            let (_, rows, cols, _) = parse_idx_images(&bytes)?;
            (rows * cols, 10)
        }
    };
    let mut sizes = vec![input];
    if cfg.hidden > 0 {
        sizes.push(cfg.hidden);
    }
    sizes.push(classes);
    Ok(Architecture::new(sizes)?.param_count())
}

/// The configured codebook: loaded from `codebook` if set, generated
/// otherwise. `None` in baseline mode.
pub fn resolve_codebook(cfg: &RunConfig, dim: usize) -> Result<Option<Codebook>> {
    if cfg.baseline {
        return Ok(None);
    }
    let cb = match &cfg.codebook {
        Some(path) => Codebook::load(path)?,
        None => generate_codebook(cfg.codebook_size, dim, cfg.codebook_seed)?,
    };
    if cb.dim() != dim {
        return Err(CliError::Setting(format!("codebook dimension {} does not match model dimension {dim}", cb.dim())));
    }
    Ok(Some(cb))
}

fn check_common(cfg: &RunConfig) -> Result<()> {
    if !(0.0..=1.0).contains(&cfg.q) {
        return Err(CliError::Setting(format!("q must lie in [0, 1], got {}", cfg.q)));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(CliError::Setting(format!("delta must lie in (0, 1), got {}", cfg.delta)));
    }
    if cfg.alpha_max < 2 {
        return Err(CliError::Setting("alpha_max must be at least 2".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AccountResult {
    /// Columns `alpha, eps_rdp, eps_dp`.
    pub table: Table,
    pub best: PrivacyParams,
    pub report_text: String,
}

/// Privacy of the configured run at every order. `q = 0` is allowed here
/// (it spends nothing) even though training needs `q > 0`.
pub fn account(cfg: &RunConfig) -> Result<AccountResult> {
    check_common(cfg)?;
    let schedule = cfg.schedule()?;
    let tcfg = cfg.training_config()?;
    if cfg.baseline && (0..cfg.iterations).any(|t| schedule.spec_at(t).family() != NoiseFamily::Gaussian) {
        return Err(CliError::Setting("the clipping baseline needs Gaussian noise".into()));
    }
    let codebook = if cfg.baseline { None } else { resolve_codebook(cfg, model_dim(cfg)?)? };
    let mut ledger = PrivacyLedger::new(&tcfg, codebook.as_ref());
    for t in 0..cfg.iterations {
        ledger.record(schedule.spec_at(t))?;
    }
    let report = ledger.report()?;
    let log_inv_delta = (1.0 / cfg.delta).ln();
    let mut table = Table::new(&["alpha", "eps_rdp", "eps_dp"]);
    for (alpha, eps) in report.rdp.iter() {
        let dp = eps + log_inv_delta / (alpha - 1) as f64;
        table.push(vec![alpha.to_string(), eps.to_string(), dp.to_string()]);
    }
    Ok(AccountResult { table, best: report.dp, report_text: report.to_text() })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub name: String,
    pub mechanism: String,
    pub iterations: usize,
    pub final_accuracy: Option<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub achieving_alpha: u32,
    pub updates_applied: usize,
    pub mean_ks: Option<f64>,
    pub config_sha256: String,
}

/// Trains per `cfg`, writing `trajectory.csv`, `summary.json` and
/// `privacy.txt` into `run`.
pub fn train_run(cfg: &RunConfig, run: &RunDir) -> Result<(TrainingOutcome, TrainSummary)> {
    check_common(cfg)?;
    let tcfg = cfg.training_config()?;
    tcfg.validate()?;
    let (train_set, test_set) = cfg.datasets()?;
    let model = Mlp::he_init(cfg.architecture(&train_set)?, cfg.model_seed);
    let codebook = resolve_codebook(cfg, model.dim())?;
    info!("training {} on {} records, {} parameters", cfg.name, train_set.len(), model.dim());
    let outcome = train(model, &train_set, Some(&test_set), codebook.as_ref(), &tcfg)?;

    let mut table = Table::new(&["iteration", "accuracy", "eps_dp_so_far", "ks_value", "update_applied"]);
    for p in &outcome.trajectory {
        table.push(vec![
            p.iteration.to_string(),
            cell(p.accuracy),
            p.eps_dp_so_far.to_string(),
            cell(p.ks_value),
            p.update_applied.to_string(),
        ]);
    }
    run.write_csv("trajectory.csv", &table)?;
    run.write("privacy.txt", &outcome.privacy.to_text())?;

    let ks: Vec<f64> = outcome.trajectory.iter().filter_map(|p| p.ks_value).collect();
    let summary = TrainSummary {
        name: cfg.name.clone(),
        mechanism: outcome.privacy.mechanism.clone(),
        iterations: cfg.iterations,
        final_accuracy: outcome.final_accuracy,
        epsilon: outcome.privacy.dp.epsilon,
        delta: outcome.privacy.dp.delta,
        achieving_alpha: outcome.privacy.dp.achieving_alpha,
        updates_applied: outcome.trajectory.iter().filter(|p| p.update_applied).count(),
        mean_ks: (!ks.is_empty()).then(|| ks.iter().sum::<f64>() / ks.len() as f64),
        config_sha256: run.hash().to_string(),
    };
    run.write("summary.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok((outcome, summary))
}

/// Default variance grid for a sweep over `family`.
pub fn default_grid(family: NoiseFamily) -> Result<Vec<f64>> {
    match family {
        NoiseFamily::Gaussian => Ok(GAUSSIAN_SWEEP.to_vec()),
        NoiseFamily::StudentT => Ok(STUDENT_T_SWEEP.to_vec()),
        other => Err(CliError::Setting(format!("no default sweep grid for {other}; pass --variances"))),
    }
}

/// Trains once per variance, each point in its own subdirectory of `out`,
/// and returns the accuracy-versus-ε table in grid order.
pub fn sweep(cfg: &RunConfig, family: NoiseFamily, variances: &[f64], out: &Path) -> Result<Table> {
    if variances.is_empty() {
        return Err(CliError::Setting("sweep needs at least one variance".into()));
    }
    let mut table = Table::new(&["family", "variance", "epsilon", "delta", "final_accuracy"]);
    for &v in variances {
        let spec = NoiseSpec::with_defaults(family, v)?;
        let mut point = cfg.clone();
        point.noise = spec.to_string();
        point.name = format!("{}-{family}-{v}", cfg.name);
        let run = RunDir::create(&out.join(format!("{family}_{v}")), "config.resolved", &point.to_text())?;
        let (outcome, _) = train_run(&point, &run)?;
        table.push(vec![
            family.to_string(),
            v.to_string(),
            outcome.privacy.dp.epsilon.to_string(),
            outcome.privacy.dp.delta.to_string(),
            cell(outcome.final_accuracy),
        ]);
    }
    Ok(table)
}

/// Text recording the sweep grid, hashed for the sweep CSV header.
pub fn sweep_resolved(cfg: &RunConfig, family: NoiseFamily, variances: &[f64]) -> String {
    let mut s = cfg.to_text();
    let grid: Vec<String> = variances.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(s, "# sweep family = {family}");
    let _ = writeln!(s, "# sweep variances = {}", grid.join(","));
    s
}

/// Histogram of raw per-example gradient coordinates of the freshly
/// initialized model over the training set.
pub fn histogram(cfg: &RunConfig, bins: usize) -> Result<Table> {
    let (train_set, _) = cfg.datasets()?;
    let model = Mlp::he_init(cfg.architecture(&train_set)?, cfg.model_seed);
    let h = gradient_histogram(&model, &train_set, bins)?;
    let mut table = Table::new(&["lower", "upper", "count"]);
    for (i, c) in h.counts.iter().enumerate() {
        table.push(vec![h.edges[i].to_string(), h.edges[i + 1].to_string(), c.to_string()]);
    }
    Ok(table)
}

/// Output directory: the explicit one, else `runs/<name>`.
pub fn out_dir(explicit: Option<&Path>, name: &str) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| Path::new("runs").join(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(iterations: usize) -> RunConfig {
        RunConfig {
            dataset: DataSource::Blobs,
            blobs_dim: 6,
            blobs_classes: 3,
            blobs_train: 60,
            blobs_test: 30,
            hidden: 4,
            codebook_size: 8,
            iterations,
            q: 0.1,
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_rate_spends_nothing() {
        let mut cfg = blobs(50);
        cfg.q = 0.0;
        let res = account(&cfg).unwrap();
        assert!(res.table.rows.iter().all(|r| r[1] == "0"));
        assert_eq!(res.table.rows.len(), 63);
    }

    #[test]
    fn model_dim_counts_parameters() {
        assert_eq!(model_dim(&blobs(1)).unwrap(), 6 * 4 + 4 + 4 * 3 + 3);
        let mut linear = blobs(1);
        linear.hidden = 0;
        assert_eq!(model_dim(&linear).unwrap(), 6 * 3 + 3);
    }

    #[test]
    fn codebook_dimension_is_checked() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("cb.bin");
        gen_codebook(4, 10, 1, &path).unwrap();
        let mut cfg = blobs(1);
        cfg.codebook = Some(path);
        assert!(resolve_codebook(&cfg, 10).unwrap().is_some());
        assert!(resolve_codebook(&cfg, 11).is_err());
        cfg.baseline = true;
        assert!(resolve_codebook(&cfg, 11).unwrap().is_none());
    }

    #[test]
    fn sweep_grids() {
        assert_eq!(default_grid(NoiseFamily::Gaussian).unwrap(), vec![0.8, 1.0, 1.2, 1.4]);
        assert_eq!(default_grid(NoiseFamily::StudentT).unwrap().len(), 7);
        assert!(default_grid(NoiseFamily::Cauchy).is_err());
    }

    #[test]
    fn one_point_sweep_matches_train_and_account() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = blobs(5);
        let table = sweep(&cfg, NoiseFamily::Gaussian, &[1.2], tmp.path()).unwrap();
        cfg.noise = NoiseSpec::gaussian(1.2).unwrap().to_string();
        cfg.name = "direct".into();
        let run = RunDir::create(&tmp.path().join("direct"), "config.resolved", &cfg.to_text()).unwrap();
        let (outcome, summary) = train_run(&cfg, &run).unwrap();
        let acc = account(&cfg).unwrap();
        assert_eq!(table.rows[0][2], summary.epsilon.to_string());
        assert_eq!(table.rows[0][2], acc.best.epsilon.to_string());
        assert_eq!(table.rows[0][4], cell(outcome.final_accuracy));
    }
}

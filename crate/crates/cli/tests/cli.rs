use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use encdp::accountant::reference_subsampled_gaussian;
use encdp::codebook::Codebook;
use encdp_cli::config::sha256_hex;

fn encdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_encdp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = encdp(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const BLOBS: &str = "\
dataset = blobs
blobs_dim = 6
blobs_classes = 3
blobs_train = 90
blobs_test = 30
hidden = 4
codebook_size = 8
q = 0.1
eta = 0.5
noise = student_t(variance=1.3)
";

/// Parses a CSV written by the tool into (comment, header, rows).
fn read_csv(path: &Path) -> (String, Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let comment = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (comment, header, rows)
}

#[test]
fn gen_codebook_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for (dir, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        ok(&["gen-codebook", "--size", "4", "--dim", "12", "--seed", seed, "--out", dir.to_str().unwrap()]);
    }
    let hash = |d: &Path| sha256_hex(&fs::read(d.join("codebook.bin")).unwrap());
    assert_eq!(hash(&a), hash(&b));
    assert_ne!(hash(&a), hash(&c));
    assert_eq!(Codebook::load(&a.join("codebook.bin")).unwrap().len(), 4);

    ok(&["gen-codebook", "--dim", "3", "--out", a.to_str().unwrap()]);
    assert_eq!(Codebook::load(&a.join("codebook.bin")).unwrap().len(), 1000);
}

#[test]
fn account_zero_rate_is_free() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "zero.cfg", &format!("{BLOBS}q = 0\n").replace("q = 0.1\n", ""));
    let out = tmp.path().join("zero");
    ok(&["account", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--csv"]);
    let (_, header, rows) = read_csv(&out.join("account.csv"));
    assert_eq!(header, ["alpha", "eps_rdp", "eps_dp"]);
    assert_eq!(rows.len(), 63);
    assert!(rows.iter().all(|r| r[1] == "0"));
}

#[test]
fn account_matches_subsampled_gaussian_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("{BLOBS}iterations = 2000\n")
        .replace("q = 0.1", "q = 0.01")
        .replace("noise = student_t(variance=1.3)", "noise = gaussian(variance=1.21)");
    let cfg = write_config(tmp.path(), "g.cfg", &body);
    let check = |dir: &Path| {
        let (_, _, rows) = read_csv(&dir.join("account.csv"));
        for r in rows {
            let alpha: u32 = r[0].parse().unwrap();
            let got: f64 = r[1].parse().unwrap();
            let want = 2000.0 * reference_subsampled_gaussian(alpha, 0.01, 1.1);
            assert!((got - want).abs() <= 1e-6 * want, "alpha {alpha}: {got} vs {want}");
        }
        let privacy = fs::read_to_string(dir.join("privacy.txt")).unwrap();
        assert!(privacy.contains("delta=1e-5"), "{privacy}");
    };
    let base = tmp.path().join("base");
    ok(&["account", "--config", cfg.to_str().unwrap(), "--baseline", "--out", base.to_str().unwrap()]);
    check(&base);

    // a single 1-sparse unit codeword costs exactly the subsampled Gaussian
    let cb_path = tmp.path().join("unit.bin");
    Codebook::from_magnitudes(6 * 4 + 4 + 4 * 3 + 3, 0, vec![vec![1.0]]).unwrap().save(&cb_path).unwrap();
    let cfg = write_config(tmp.path(), "u.cfg", &format!("{body}codebook = {}\n", cb_path.display()));
    let enc = tmp.path().join("enc");
    ok(&["account", "--config", cfg.to_str().unwrap(), "--out", enc.to_str().unwrap()]);
    check(&enc);
}

#[test]
fn train_outputs_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.cfg", &format!("{BLOBS}iterations = 15\neval_every = 5\n"));
    let run = |name: &str, extra: &[&str]| {
        let dir = tmp.path().join(name);
        let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        ok(&args);
        dir
    };
    let a = run("a", &["--seed", "3"]);
    let b = run("b", &["--seed", "3"]);
    let c = run("c", &["--seed", "4"]);
    let csv = |d: &Path| fs::read(d.join("trajectory.csv")).unwrap();
    assert_eq!(csv(&a), csv(&b));
    assert_ne!(csv(&a), csv(&c));

    let (comment, header, rows) = read_csv(&a.join("trajectory.csv"));
    let resolved = fs::read(a.join("config.resolved")).unwrap();
    assert!(comment.starts_with("# encdp ") && comment.ends_with(&format!("config_sha256={}", sha256_hex(&resolved))));
    assert_eq!(header, ["iteration", "accuracy", "eps_dp_so_far", "ks_value", "update_applied"]);
    assert_eq!(rows.len(), 15);
    assert!(rows[4][1].parse::<f64>().is_ok() && rows[3][1].is_empty());
    assert!(String::from_utf8(resolved).unwrap().contains("seed = 3\n"));

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iterations"], 15);
    assert_eq!(summary["mechanism"], "encoded");
    assert!(fs::read_to_string(a.join("privacy.txt")).unwrap().starts_with("mechanism=encoded"));
}

#[test]
fn zero_iterations_give_header_only_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "z.cfg", &format!("{BLOBS}iterations = 0\n"));
    let dir = tmp.path().join("z");
    ok(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    let (_, header, rows) = read_csv(&dir.join("trajectory.csv"));
    assert_eq!(header.len(), 5);
    assert!(rows.is_empty());
}

#[test]
fn baseline_flag_switches_mechanism() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("{BLOBS}iterations = 3\n").replace("student_t(variance=1.3)", "gaussian(variance=1.21)");
    let cfg = write_config(tmp.path(), "b.cfg", &body);
    let dir = tmp.path().join("b");
    ok(&["train", "--config", cfg.to_str().unwrap(), "--baseline", "--out", dir.to_str().unwrap()]);
    assert!(fs::read_to_string(dir.join("privacy.txt")).unwrap().starts_with("mechanism=clip-gaussian"));
    assert!(fs::read_to_string(dir.join("config.resolved")).unwrap().contains("baseline = true"));
}

#[test]
fn preconditions_fail_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let bad = |body: &str, cmd: &str| {
        let cfg = write_config(tmp.path(), "bad.cfg", body);
        let res = encdp(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(!res.status.success(), "{cmd} accepted {body:?}");
        assert!(!res.stderr.is_empty());
    };
    bad(&format!("{BLOBS}learning_rate = 1\n"), "train");
    bad(&format!("{BLOBS}iterations = 2\n").replace("q = 0.1", "q = 1.5"), "train");
    bad(&format!("{BLOBS}iterations = 2\ndelta = 2\n"), "account");
    bad(&format!("{BLOBS}iterations = 2\nbaseline = true\n"), "train");
    bad("dataset = idx\niterations = 1\n", "train");
    assert!(!encdp(&["sweep", "--config", "/nonexistent/cfg"]).status.success());
    assert!(!encdp(&["l1-experiment", "--targets", "0", "--out", out.to_str().unwrap()]).status.success());
}

#[test]
fn one_point_sweep_agrees_with_train_and_account() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.cfg", &format!("{BLOBS}iterations = 6\n"));
    let c = cfg.to_str().unwrap();
    let sweep = tmp.path().join("sweep");
    ok(&["sweep", "--config", c, "--variances", "1.3", "--out", sweep.to_str().unwrap()]);
    let (_, header, rows) = read_csv(&sweep.join("sweep.csv"));
    assert_eq!(header, ["family", "variance", "epsilon", "delta", "final_accuracy"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "student_t");

    let train = tmp.path().join("train");
    ok(&["train", "--config", c, "--out", train.to_str().unwrap()]);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(train.join("summary.json")).unwrap()).unwrap();
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), summary["epsilon"].as_f64().unwrap());
    assert_eq!(rows[0][4].parse::<f64>().unwrap(), summary["final_accuracy"].as_f64().unwrap());

    let acct = tmp.path().join("acct");
    let table = ok(&["account", "--config", c, "--out", acct.to_str().unwrap()]);
    assert!(table.contains(&format!("epsilon = {}", rows[0][2])), "{table}");
}

#[test]
fn l1_experiment_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let args = [
            "l1-experiment", "--targets", "0.1,0.3", "--dim", "8", "--codebook-size", "5", "--trials", "200", "--seed", "2",
            "--out", dir.to_str().unwrap(),
        ];
        ok(&args);
        fs::read_to_string(dir.join("l1.csv")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let rows: Vec<Vec<&str>> = a.lines().skip(2).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let target: f64 = r[1].parse().unwrap();
        let achieved: f64 = r[2].parse().unwrap();
        assert!((target - achieved).abs() < 1e-4);
    }
}

#[test]
fn histogram_counts_every_coordinate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "h.cfg", BLOBS);
    let dir = tmp.path().join("h");
    ok(&["histogram", "--config", cfg.to_str().unwrap(), "--bins", "12", "--out", dir.to_str().unwrap()]);
    let (_, header, rows) = read_csv(&dir.join("histogram.csv"));
    assert_eq!(header, ["lower", "upper", "count"]);
    assert_eq!(rows.len(), 12);
    let total: u64 = rows.iter().map(|r| r[2].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 90 * (6 * 4 + 4 + 4 * 3 + 3));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = encdp_cli::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.training_config().unwrap().validate().unwrap();
        n += 1;
    }
    assert!(n >= 3);
}

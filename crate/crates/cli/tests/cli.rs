use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use homlab_cli::summary::{regenerate, Summary};
use homlab_cli::ExperimentConfig;

fn homlab() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_homlab"));
    c.env_remove("HOMLAB_OUTPUT_DIR").env_remove("HOMLAB_THREADS");
    c
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    homlab().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn summary(dir: &Path) -> Summary {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

const SMALL_SWEEP: &str = r#"kind = "sweep"
dim = 2
seed = 3
m = 2
samples = 16
scales = [2, 4, 8]

[field]
kind = "checkerboard"
a_lo = 1.0
a_hi = 4.0
prob_hi = 0.5
"#;

#[test]
fn shipped_configs_round_trip_byte_identically() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let c = ExperimentConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(c.to_toml().unwrap(), text, "{}", path.display());
        n += 1;
    }
    assert!(n >= 6);
}

#[test]
fn constant_field_sweep_has_zero_defects() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let o = run(&["sweep", configs_dir().join("sweep_constant.toml").to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert!(s.all_checks_pass() && s.failures == 0);
    let tau: Vec<f64> = s.levels.iter().filter(|l| l.statistic == "tau" || l.statistic == "gap").map(|l| l.value).collect();
    assert!(!tau.is_empty() && tau.iter().all(|t| t.abs() < 1e-12), "{tau:?}");
}

#[test]
fn outputs_are_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", SMALL_SWEEP);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&run(&["sweep", cfg.to_str().unwrap(), "--output-dir", a.to_str().unwrap(), "--threads", "1"])), 0);
    assert_eq!(code(&run(&["sweep", cfg.to_str().unwrap(), "--output-dir", b.to_str().unwrap(), "--threads", "3"])), 0);
    for f in ["config.toml", "sweep.csv", "failures.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn environment_sets_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from-env");
    let o = homlab()
        .args(["sweep", configs_dir().join("sweep_constant.toml").to_str().unwrap()])
        .env("HOMLAB_OUTPUT_DIR", &out)
        .env("HOMLAB_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let record: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["threads"], 2);
}

#[test]
fn summary_regenerates_from_csv() {
    let tmp = tempfile::tempdir().unwrap();
    for (kind, text) in [
        ("sweep", SMALL_SWEEP.to_string()),
        ("effmat", SMALL_SWEEP.replace("kind = \"sweep\"", "kind = \"effmat\"").replace("samples = 16", "samples = 4")),
        ("regularity", SMALL_SWEEP.replace("kind = \"sweep\"", "kind = \"regularity\"").replace("scales = [2, 4, 8]", "scales = [4, 8]")),
    ] {
        let cfg = write_config(tmp.path(), &format!("{kind}.toml"), &text);
        let out = tmp.path().join(kind);
        let o = run(&[kind, cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
        assert!(code(&o) <= 1, "{kind}: {}", String::from_utf8_lossy(&o.stderr));
        let stored: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(serde_json::to_value(regenerate(&out).unwrap()).unwrap(), stored, "{kind}");
    }
}

#[test]
fn failed_solves_give_partial_bundle_and_failed_report() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL_SWEEP.replace("scales = [2, 4, 8]", "scales = [2, 4, 8]\nmax_iter_factor = 0.000001");
    let cfg = write_config(tmp.path(), "f.toml", &text);
    let out = tmp.path().join("f");
    let o = run(&["sweep", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(std::fs::read_to_string(out.join("failures.csv")).unwrap().contains("did not converge"));
    assert!(summary(&out).failures > 0);
    let json = tmp.path().join("report.json");
    let r = run(&["report", out.to_str().unwrap(), "--json", json.to_str().unwrap()]);
    assert_eq!(code(&r), 1);
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.lines().any(|l| l.contains("solves") && l.contains("FAILED")), "{text}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn report_rejects_other_schema_versions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    assert_eq!(code(&run(&["sweep", configs_dir().join("sweep_constant.toml").to_str().unwrap(), "--output-dir", out.to_str().unwrap()])), 0);
    let ok = run(&["report", out.to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
    assert!(String::from_utf8_lossy(&ok.stdout).contains("ALL PASS"));

    let path = out.join("summary.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"schema\": 1", "\"schema\": 2", 1)).unwrap();
    let r = run(&["report", out.to_str().unwrap()]);
    assert_eq!(code(&r), 2);
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("version 2") && err.contains("expected 1"), "{err}");

    std::fs::write(&path, text).unwrap();
    let csv = out.join("sweep.csv");
    let body = std::fs::read_to_string(&csv).unwrap();
    std::fs::write(&csv, body.replacen("#schema=1", "#schema=9", 1)).unwrap();
    let r = run(&["report", out.to_str().unwrap()]);
    assert_eq!(code(&r), 2);
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("schema version 9") && err.contains("expected 1"), "{err}");
}

#[test]
fn seeds_agree_within_confidence_intervals() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for seed in [3, 4] {
        let cfg = write_config(tmp.path(), &format!("s{seed}.toml"), &SMALL_SWEEP.replace("seed = 3", &format!("seed = {seed}")));
        let out = tmp.path().join(format!("s{seed}"));
        assert!(code(&run(&["sweep", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()])) <= 1);
        dirs.push(out);
    }
    let json = tmp.path().join("r.json");
    run(&["report", dirs[0].to_str().unwrap(), dirs[1].to_str().unwrap(), "--json", json.to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    let cons = report["consistency"].as_array().unwrap();
    assert!(!cons.is_empty());
    assert!(cons.iter().all(|c| c["overlap"] == true), "{cons:?}");
}

#[test]
fn invalid_configs_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad.toml", &SMALL_SWEEP.replace("\nm = 2", "\nm = \"two\""));
    let o = run(&["sweep", bad.to_str().unwrap(), "--output-dir", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
    let wrong = write_config(tmp.path(), "w.toml", SMALL_SWEEP);
    assert_eq!(code(&run(&["effmat", wrong.to_str().unwrap()])), 2);
}

#[test]
fn gen_field_exports_a_readable_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", SMALL_SWEEP);
    let path = tmp.path().join("f.csv");
    let o = run(&["gen-field", cfg.to_str().unwrap(), "--side", "4", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let grid = homlab::io::read_grid_csv(&path).unwrap();
    assert_eq!((grid.dim(), grid.side(), grid.cells().len()), (2, 4, 64));
    let bin = tmp.path().join("f.bin");
    assert_eq!(code(&run(&["gen-field", cfg.to_str().unwrap(), "--side", "4", "--format", "binary", "--out", bin.to_str().unwrap()])), 0);
    assert_eq!(std::fs::metadata(bin).unwrap().len(), 8 + 12 + 8 + 16 + 64 * 3 * 8);
}

#[test]
fn shipped_one_dimensional_error_config_has_square_root_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("e1");
    let o = run(&["error-scaling", configs_dir().join("error_scaling_1d.toml").to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit = summary(&out).fits.into_iter().find(|f| f.name == "l2-error-vs-eps").expect("fit present");
    assert!((0.4..=0.6).contains(&fit.slope), "{}", fit.slope);
}

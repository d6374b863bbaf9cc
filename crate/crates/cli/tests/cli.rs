use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const HEADER: &str =
    "step,t,loss,test_loss,lambda_min_KW,lambda_min_K,det_KW,oppenheim_lower,omega,\
gen_bound_rhs_delta0p1,xi_mass_min,mean_disp,sup_disp";

fn p3l(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_p3l"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(format!("{name}.cfg"));
    let text = format!(
        "[run]\nname = {name}\nout_dir = {}\n{body}",
        dir.join("out").display()
    );
    fs::write(&path, text).unwrap();
    path
}

fn run_ok(cfg: &Path) -> PathBuf {
    let out = p3l(&["run", cfg.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

/// Every non-empty field below the header parses as a finite number.
fn assert_numeric_csv(path: &Path) -> usize {
    let text = fs::read_to_string(path).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        for field in line.split(',').filter(|f| !f.is_empty()) {
            let v: f64 = field
                .parse()
                .unwrap_or_else(|_| panic!("{field:?} in {}", path.display()));
            assert!(v.is_finite(), "{field} in {}", path.display());
        }
        rows += 1;
    }
    rows
}

const SMALL_FINITE: &str =
    "mode = finite\n[model]\nm1 = 32\nm2 = 32\n[train]\nT = 2\nlog_every = 10\n";

#[test]
fn finite_run_writes_the_documented_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_ok(&write_config(tmp.path(), "fin", SMALL_FINITE));
    assert_eq!(dir, tmp.path().join("out").join("fin"));
    let csv = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), HEADER);
    assert_eq!(assert_numeric_csv(&dir.join("trajectory.csv")), 5);

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["model"]["m1"], 32);
    // Defaults are echoed too.
    assert_eq!(manifest["config"]["analysis"]["delta"], 0.1);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mode"], "finite");
    assert_eq!(summary["config_sha256"], manifest["config_sha256"]);
    assert!(dir.join("kernel_drift.csv").exists());
}

#[test]
fn reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "mf",
        "mode = mf\n[mf]\nM = 100\n[train]\nT = 1\nlog_every = 5\n",
    );
    let files = ["manifest.json", "trajectory.csv", "summary.json"];
    let dir = run_ok(&cfg);
    let first: Vec<Vec<u8>> = files
        .iter()
        .map(|f| fs::read(dir.join(f)).unwrap())
        .collect();
    run_ok(&cfg);
    let second: Vec<Vec<u8>> = files
        .iter()
        .map(|f| fs::read(dir.join(f)).unwrap())
        .collect();
    assert_eq!(first, second);
}

#[test]
fn worker_count_does_not_change_sweeps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "kmc",
        "mode = sweep_kernel_mc\n[sweep]\nm1_list = [100, 400, 1600, 6400]\nseeds = 4\n",
    );
    let run = |threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_p3l"))
            .args(["run", cfg.to_str().unwrap()])
            .env("P3L_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        let dir = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
        (
            fs::read(dir.join("kernel_mc.csv")).unwrap(),
            fs::read(dir.join("summary.json")).unwrap(),
        )
    };
    let one = run("1");
    assert_eq!(one, run("3"));
    let table = String::from_utf8(one.0).unwrap();
    assert_eq!(table.lines().count(), 5);
    let summary: serde_json::Value = serde_json::from_slice(&one.1).unwrap();
    let slope = summary["slopes"]["log_error_vs_log_m1"].as_f64().unwrap();
    assert!((slope + 0.5).abs() < 0.25, "slope {slope}");
}

#[test]
fn compare_mode_tracks_the_mean_field_limit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cmp",
        "mode = compare\n[model]\nm1 = 512\nm2 = 512\n[mf]\nM = 2000\n[train]\nT = 2\nlog_every = 10\n\
         [analysis]\nsnapshots = false\ntest_loss = false\n",
    );
    let dir = run_ok(&cfg);
    let rows = assert_numeric_csv(&dir.join("comparison.csv"));
    assert_eq!(rows, 5 * 18);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    let diff = summary["max_abs_output_diff"].as_f64().unwrap();
    // Both start from independent draws with O(1/sqrt(m)) output noise.
    assert!(diff < 0.5, "max output gap {diff}");
    assert_eq!(assert_numeric_csv(&dir.join("trajectory.csv")), 5);
    assert_eq!(assert_numeric_csv(&dir.join("trajectory_finite.csv")), 5);
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad", "[model]\nbogus = 3\n");
    let out = p3l(&["run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("[config]") && err.contains("model.bogus"),
        "{err}"
    );

    let out = p3l(&["run", tmp.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let dup = write_config(tmp.path(), "dup", "[train]\ndt = 0.1\ndt = 0.2\n");
    let out = p3l(&["run", dup.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn divergence_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "div",
        "mode = finite\n[model]\nm1 = 16\nm2 = 16\nalpha = 1\nbeta_a = 1\n[train]\ndt = 1e300\nT = 1e301\n",
    );
    let out = p3l(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[finite_model]"));
}

#[test]
fn validate_reports_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write_config(tmp.path(), "good", "");
    let out = p3l(&["validate", good.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "ok"), "{text}");
    let lmin: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("lambda_min(G) = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(lmin > 0.0);

    let mismatch = write_config(
        tmp.path(),
        "mm",
        "[model]\nalpha = 0.5\n[mf]\nregime = gt_half\n",
    );
    let text = String::from_utf8(p3l(&["validate", mismatch.to_str().unwrap()]).stdout).unwrap();
    assert!(text.contains("FAIL mf.regime"), "{text}");

    let data = tmp.path().join("dup.csv");
    fs::write(&data, "x1,x2,y\n1,0,1\n0,1,-1\n1,0,0.5\n").unwrap();
    let dup = write_config(
        tmp.path(),
        "dupdata",
        &format!("[data]\ntrain_csv = {}\n", data.display()),
    );
    let text = String::from_utf8(p3l(&["validate", dup.to_str().unwrap()]).stdout).unwrap();
    assert!(text.contains("FAIL training inputs 0 and 2"), "{text}");
}

#[test]
fn version_prints_the_crate_version() {
    let out = p3l(&["version"]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().trim(),
        format!("p3l {}", env!("CARGO_PKG_VERSION"))
    );
}

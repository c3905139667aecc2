use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_phi4-lsi")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .env_remove("PHI4_LSI_WORKERS")
        .output()
        .unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

const SMALL_SAMPLER: &str = "[sampler]\nn_burn = 200\nn_keep = 2000\nchains = 2\n";

#[test]
fn one_site_covariance_is_unit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[lattice]\nd = 2\neps = 1.0\nL = 1.0\n");
    let out = tmp.path().join("o");
    let o = run(&["covariance"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("covariance.csv")).unwrap();
    assert_eq!(csv, "coord_1,coord_2,value\n0,0,1.0\n");
    assert!(out.join("resolved_config.toml").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn missing_dimension_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[lattice]\neps = 1.0\n");
    let out = tmp.path().join("o");
    let o = run(&["covariance"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lattice.d"));
    assert!(!out.exists(), "no partial output on failure");
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[lattice]\nd = 2\n[model]\nlamda = 0.5\n");
    let o = run(&["covariance"], &cfg, &tmp.path().join("o"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lamda"));
}

#[test]
fn io_failures_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[lattice]\nd = 2\n");
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let o = run(&["covariance"], &cfg, &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["covariance"], &tmp.path().join("absent.toml"), &tmp.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn covariance_golden_run_is_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[lattice]\nd = 2\neps = 1.0\nL = 2.0\n[output]\ndir = \"x\"\n");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&["covariance"], &cfg, &a).status.success());
    assert!(run(&["covariance"], &cfg, &b).status.success());
    assert_eq!(
        std::fs::read(a.join("covariance.csv")).unwrap(),
        std::fs::read(b.join("covariance.csv")).unwrap()
    );
}

#[test]
fn sampling_is_deterministic_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &format!("[lattice]\nd = 2\neps = 0.5\nL = 1.0\n{SMALL_SAMPLER}"));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    let oa = Command::new(bin()).args(["sample", "--workers", "1", "--out"]).arg(&a).arg("--config").arg(&cfg).output().unwrap();
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    let ob = Command::new(bin())
        .args(["sample", "--out"])
        .arg(&b)
        .arg("--config")
        .arg(&cfg)
        .env("PHI4_LSI_WORKERS", "3")
        .output()
        .unwrap();
    assert!(ob.status.success());
    // Output directories differ, so compare every file except the config echo.
    let strip = |v: Vec<(String, Vec<u8>)>| {
        v.into_iter().filter(|(n, _)| n != "resolved_config.toml" && n != "manifest.json").collect::<Vec<_>>()
    };
    assert_eq!(strip(read_dir_sorted(&a)), strip(read_dir_sorted(&b)));
    for f in ["chains.csv", "correlation.csv", "chi.csv", "bfs_slack.csv", "sample_report.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let oc = Command::new(bin()).args(["sample", "--seed", "7", "--out"]).arg(&c).arg("--config").arg(&cfg).output().unwrap();
    assert!(oc.status.success());
    assert_ne!(std::fs::read(a.join("chains.csv")).unwrap(), std::fs::read(c.join("chains.csv")).unwrap());
    let resolved = std::fs::read_to_string(c.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("seed = 7"));
}

#[test]
fn bad_worker_env_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[lattice]\nd = 2\n");
    let o = Command::new(bin())
        .args(["covariance", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .env("PHI4_LSI_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gaussian_lsi_bound_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[lattice]\nd = 2\neps = 0.5\nL = 2.0\n[profile]\nsource = \"gaussian\"\n");
    let out = tmp.path().join("o");
    assert!(run(&["lsi-bound"], &cfg, &out).status.success());
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("lsi_report.json")).unwrap()).unwrap();
    let g = r["gamma_lower"].as_f64().unwrap();
    assert!((g - 1.0).abs() < 1e-8, "{g}");
    assert!(r["profile_sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn linearly_growing_profile_reports_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("t,chi,provenance,stderr\n");
    for i in 0..40 {
        let t = 10f64.powf(-2.0 + 0.1 * i as f64);
        csv.push_str(&format!("{t:?},{:?},mc_estimate,0.0\n", 2.0 * t));
    }
    let prof = write_config(tmp.path(), "p.csv", &csv);
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &format!("[lattice]\nd = 2\n[profile]\nsource = \"file\"\npath = {:?}\n", prof.to_string_lossy()),
    );
    let out = tmp.path().join("o");
    let o = run(&["lsi-bound"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("lsi_report.json")).unwrap()).unwrap();
    assert!(r["gamma_lower"].is_null());
    assert!(r["divergence"].is_string());
}

#[test]
fn counterterm_sweep_and_profile_emit_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[lattice]\nd = 2\neps = 0.5\nL = 2.0\n[profile]\nsource = \"skeleton\"\n[grid]\nper_decade = 20\n",
    );
    let out = tmp.path().join("o");
    assert!(run(&["counterterms"], &cfg, &out).status.success());
    let csv = std::fs::read_to_string(out.join("counterterms.csv")).unwrap();
    assert!(csv.starts_with("eps,lambda,a_eps,tadpole,sunset\n"));
    assert_eq!(csv.lines().count(), 1 + 5 * 2);
    assert!(out.join("scaling.json").exists());
    let out2 = tmp.path().join("p");
    let o = run(&["chi-profile"], &cfg, &out2);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let prof = std::fs::read_to_string(out2.join("chi_profile.csv")).unwrap();
    assert!(prof.starts_with("t,chi,provenance,stderr\n"));
    assert!(prof.lines().skip(1).all(|l| l.contains("skeleton_bound")));
    let b: serde_json::Value = serde_json::from_slice(&std::fs::read(out2.join("bounds.json")).unwrap()).unwrap();
    assert!(b["window"]["c0"].as_f64().unwrap() > 0.0);
}

#[test]
fn verify_default_config_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[lattice]\nd = 2\n");
    let out = tmp.path().join("o");
    let o = run(&["verify"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("oracle_report.json")).unwrap()).unwrap();
    assert_eq!(r["passed"], serde_json::Value::Bool(true));
}

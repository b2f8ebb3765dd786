use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_relaythp");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn hop(n_t: usize, n_r: usize, rho_t: f64, rho_r: f64) -> String {
    format!(
        "[[hops]]\ntx_antennas = {n_t}\nrx_antennas = {n_r}\nrho_t = {rho_t}\nrho_r = {rho_r}\nsigma_e_sq = 0.001\nsnr_db = 20\n\n"
    )
}

fn small_sweep(schemes: &str) -> String {
    format!(
        "seed = 5\n\n[system]\nstreams = 2\n\n{}{}[sweep]\nhop = 2\nsnr_db = [10, 20]\nschemes = [{schemes}]\ntrials = 12\nsymbols = 50\nsigma_e_sq = [0.001, 0.004]\n",
        hop(2, 2, 0.5, 0.0),
        hop(2, 2, 0.5, 0.0)
    )
}

fn manifest_outputs(dir: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o.as_str().unwrap().to_string())
        .collect()
}

fn assert_no_orphans(dir: &Path) {
    let listed = manifest_outputs(dir);
    for entry in std::fs::read_dir(dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(
            name == "manifest.json" || listed.contains(&name),
            "{name} missing from manifest"
        );
    }
    for name in &listed {
        assert!(dir.join(name).exists(), "{name} listed but absent");
    }
}

#[test]
fn design_writes_outputs_and_passes_invariants() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("design");
    let cfg = configs().join("fig2.toml");
    let r = run(&["design", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    for f in [
        "matrices.json",
        "summary.json",
        "invariants.json",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let inv: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("invariants.json")).unwrap())
            .unwrap();
    let checks = inv.as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["pass"] == true), "{inv}");
    assert_no_orphans(&out);
}

#[test]
fn design_rejects_more_streams_than_antennas() {
    let tmp = TempDir::new().unwrap();
    let text = format!(
        "[system]\nstreams = 4\n\n{}{}",
        hop(4, 3, 0.0, 0.4),
        hop(3, 4, 0.0, 0.4)
    );
    let cfg = write(tmp.path(), "c.toml", &text);
    let r = run(&[
        "design",
        "--config",
        path(&cfg),
        "--out",
        path(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("dimension"), "{}", stderr(&r));
}

#[test]
fn design_rejects_two_sided_correlation() {
    let tmp = TempDir::new().unwrap();
    let text = format!(
        "[system]\nstreams = 2\n\n{}{}",
        hop(2, 2, 0.3, 0.4),
        hop(2, 2, 0.0, 0.4)
    );
    let cfg = write(tmp.path(), "c.toml", &text);
    let r = run(&[
        "design",
        "--config",
        path(&cfg),
        "--out",
        path(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("proportional to I"), "{}", stderr(&r));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let r = run(&[
        "design",
        "--config",
        path(&tmp.path().join("none.toml")),
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(code(&r), 1);
}

#[test]
fn sweep_rejects_empty_scheme_list() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", &small_sweep(""));
    let r = run(&[
        "sweep",
        "--config",
        path(&cfg),
        "--out",
        path(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&r), 1, "{}", stderr(&r));
}

#[test]
fn sweep_covers_every_scheme_error_level_and_snr() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        &small_sweep("\"robust_thp\", \"nonrobust_thp\""),
    );
    let out = tmp.path().join("o");
    let r = run(&[
        "sweep",
        "--config",
        path(&cfg),
        "--out",
        path(&out),
        "--quiet",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(stdout(&r).is_empty());
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scheme,hop_snr_db,sigma_e_sq,rho_t,rho_r,trials,symbols_per_trial,bit_errors,bits,ber,ber_stderr,ser"
    );
    let keys: Vec<(String, String, String)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f[3], "0.5");
            (f[0].to_string(), f[2].to_string(), f[1].to_string())
        })
        .collect();
    let mut expected = Vec::new();
    for scheme in ["nonrobust_thp", "robust_thp"] {
        for s2 in ["0.001", "0.004"] {
            for snr in ["10.0", "20.0"] {
                expected.push((scheme.to_string(), s2.to_string(), snr.to_string()));
            }
        }
    }
    assert_eq!(keys, expected);
    assert_no_orphans(&out);
}

#[test]
fn sweep_is_reproducible_and_seed_flag_overrides() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        &small_sweep("\"robust_thp\", \"robust_linear\""),
    );
    let csv_for = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec![
            "sweep",
            "--config",
            path(&cfg),
            "--out",
            path(&out),
            "--quiet",
        ];
        args.extend_from_slice(extra);
        let r = run(&args);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        std::fs::read(out.join("results.csv")).unwrap()
    };
    let a = csv_for("a", &[]);
    let b = csv_for("b", &["--threads", "1"]);
    let c = csv_for("c", &["--seed", "6"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("c/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["master_seed"], 6);
}

#[test]
fn validate_quick_passes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("v");
    let r = run(&["validate", "--quick", "--out", path(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(stdout(&r).contains("PASS"));
    assert!(!stdout(&r).contains("FAIL"));
    assert_no_orphans(&out);
}

#[test]
fn validate_detects_injected_power_fault() {
    let r = run(&["validate", "--quick", "--inject-fault", "1.01"]);
    assert_eq!(code(&r), 3);
    let table = stdout(&r);
    assert!(
        table
            .lines()
            .any(|l| l.starts_with("FAIL") && l.contains("power_f_hop1")),
        "{table}"
    );
}

#[test]
fn plot_draws_one_curve_per_scheme() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        &small_sweep("\"robust_thp\", \"robust_linear\"")
            .replace("sigma_e_sq = [0.001, 0.004]\n", ""),
    );
    let out = tmp.path().join("o");
    assert_eq!(
        code(&run(&[
            "sweep",
            "--config",
            path(&cfg),
            "--out",
            path(&out),
            "--quiet"
        ])),
        0
    );
    let svg = tmp.path().join("ber.svg");
    let r = run(&["plot", path(&out.join("results.csv")), "--out", path(&svg)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("class=\"curve\"").count(), 2);
    assert!(text.contains("robust_thp") && text.contains("robust_linear"));
}

#[test]
fn plot_rejects_empty_and_malformed_csv() {
    let tmp = TempDir::new().unwrap();
    let header = "scheme,hop_snr_db,sigma_e_sq,rho_t,rho_r,trials,symbols_per_trial,bit_errors,bits,ber,ber_stderr,ser\n";
    let empty = write(tmp.path(), "empty.csv", header);
    let bad = write(
        tmp.path(),
        "bad.csv",
        &format!("{header}robust_thp,ten,0.001,0,0,1,1,0,1,0,0,0\n"),
    );
    let wrong = write(tmp.path(), "wrong.csv", "a,b\n1,2\n");
    for csv in [empty, bad, wrong] {
        let r = run(&["plot", path(&csv), "--out", path(&tmp.path().join("x.svg"))]);
        assert_eq!(code(&r), 1, "{}", csv.display());
    }
}

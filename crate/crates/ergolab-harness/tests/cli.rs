use std::path::Path;
use std::process::Command;

use ergolab_harness::config::ExperimentConfig;
use ergolab_harness::output::Manifest;

fn ergolab(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ergolab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("ERGOLAB_CONFIG")
        .env_remove("ERGOLAB_SEED")
        .env_remove("ERGOLAB_THREADS")
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = ExperimentConfig::default();
    let text = cfg.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    assert_eq!(ExperimentConfig::from_toml("").unwrap(), cfg);
    let custom = ExperimentConfig::from_toml("seed = 7\n[map]\nfamily = \"lsv_intermittent\"\nalpha = 0.5\n").unwrap();
    assert_eq!(custom.seed, 7);
    assert_eq!(ExperimentConfig::from_toml(&custom.to_toml().unwrap()).unwrap(), custom);
    assert_ne!(custom.hash(), cfg.hash());
}

#[test]
fn config_errors_name_the_field() {
    let e = ExperimentConfig::from_toml("[density]\nbinz = 3\n").unwrap_err().to_string();
    assert!(e.contains("binz"), "{e}");
    let e = ExperimentConfig::from_toml("[density]\nbins = 0\n").unwrap_err().to_string();
    assert!(e.contains("density.bins"), "{e}");
    let e = ExperimentConfig::from_toml("[paramex.config]\nepsilon = 0.5\n").unwrap_err().to_string();
    assert!(e.contains("paramex.config"), "{e}");
}

#[test]
fn lyapunov_of_the_doubling_map_is_log_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = ergolab(&["lyapunov"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("lyapunov.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "circle_covering");
    let v: f64 = row[3].parse().unwrap();
    assert!((v - 2f64.ln()).abs() < 1e-12, "{v}");
}

#[test]
fn two_branch_tower_tail() {
    let dir = tempfile::tempdir().unwrap();
    let o = ergolab(&["tower"], dir.path());
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("tail.csv")).unwrap();
    let masses: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(masses[1..], [0.4, 0.4, 0.0]);
}

#[test]
fn tower_reads_a_serialized_map() {
    let dir = tempfile::tempdir().unwrap();
    let t = ergolab::tower::InducedMarkovMap::synthetic((0.0, 1.0), &[(2, 0.5), (5, 0.5)]).unwrap();
    let input = dir.path().join("tower_in.json");
    std::fs::write(&input, serde_json::to_string(&t).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = ergolab(&["tower", "--input", input.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("tail.csv")).unwrap();
    let masses: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(masses, [1.0, 1.0, 0.5, 0.5]);
}

#[test]
fn manifest_lists_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = ergolab(&["combinatorics", "--seed", "9"], dir.path());
    assert!(o.status.success());
    let m = manifest(dir.path());
    assert_eq!(m.command, "combinatorics");
    assert_eq!(m.seed, 9);
    let mut on_disk: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut listed: Vec<String> = m.files.iter().map(|f| f.name.clone()).collect();
    listed.sort();
    assert_eq!(on_disk, listed);
    let csv = std::fs::read_to_string(dir.path().join("combinatorics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 20 * 21 / 2);
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[2], f[3]);
        assert_eq!(f[3], f[4]);
        if f[7] == "true" {
            assert_eq!(f[8], "true", "{line}");
        }
    }
}

#[test]
fn exit_codes_follow_the_error_category() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[lyapunov]\niterations = 0\n").unwrap();
    let o = ergolab(&["lyapunov", "--config", bad.to_str().unwrap()], &dir.path().join("a"));
    assert_eq!(o.status.code(), Some(2));
    let o = ergolab(&["lyapunov", "--config", "/nonexistent/x.toml"], &dir.path().join("b"));
    assert_eq!(o.status.code(), Some(2));
    // The quadratic map has no full-branch Markov structure.
    let crit = dir.path().join("crit.toml");
    std::fs::write(&crit, "[map]\nfamily = \"quadratic\"\na = 2.0\n").unwrap();
    let o = ergolab(&["cylinders", "--config", crit.to_str().unwrap()], &dir.path().join("c"));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let o = ergolab(&["verify-all", "--only", "8"], &dir.path().join("d"));
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn environment_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ergolab"))
        .args(["combinatorics", "--out"])
        .arg(dir.path())
        .env("ERGOLAB_SEED", "42")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(manifest(dir.path()).seed, 42);
}

#[test]
fn paramex_writes_levels_and_events() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.toml");
    std::fs::write(&cfg, "[paramex]\ndepth = 7\n").unwrap();
    let o = ergolab(&["paramex", "--events", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let levels = std::fs::read_to_string(dir.path().join("out/levels.csv")).unwrap();
    assert_eq!(levels.lines().count(), 1 + 8);
    let elements: Vec<ergolab::paramex::ParamElement> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/paramex_elements.json")).unwrap()).unwrap();
    assert!(elements.len() > 1);
}

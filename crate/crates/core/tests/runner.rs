use std::fs;
use std::path::{Path, PathBuf};

use geomcmc::runner::{load_config, parse_config, run, summarize_dir, validate, RunOptions, RunnerError};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn linear(chains: &str) -> String {
    format!(
        r#"{{ "output_dir": "unused",
  "prior": {{ "kind": "cosine_1d", "alpha": 1.0, "sigma2": 1.0, "s": 1.0, "cap": 10 }},
  "model": {{ "kind": "linear_gaussian", "observations": 8, "noise_variance": 0.05, "data_seed": 11 }},
  "chains": [{chains}] }}"#
    )
}

const PCN: &str = r#"{ "algorithm": "pcn", "step": 0.005, "iterations": 2000, "burn_in": 200, "seed": 1 }"#;

fn config_key(text: &str) -> String {
    let config = parse_config(text).unwrap();
    match validate(&config) {
        Err(RunnerError::Config { key, .. }) => key,
        other => panic!("expected a config error, got {other:?}"),
    }
}

fn options(dir: &Path) -> RunOptions {
    RunOptions {
        output_dir: Some(dir.to_path_buf()),
        jobs: Some(2),
    }
}

#[test]
fn shipped_configs_validate() {
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let config = load_config(&path).unwrap();
        let report = validate(&config).unwrap();
        assert!(!report.labels.is_empty(), "{}", path.display());
        seen += 1;
    }
    assert!(seen >= 2);
}

#[test]
fn groundwater_config_has_seven_algorithms() {
    let config = load_config(&configs_dir().join("groundwater.json")).unwrap();
    let report = validate(&config).unwrap();
    assert_eq!(report.labels.len(), 7);
    for label in ["pCN", "inf-MALA", "inf-HMC", "inf-mMALA", "inf-mHMC", "Split inf-mMALA", "Split inf-mHMC"] {
        assert!(report.labels.iter().any(|l| l == label), "missing {label}");
    }
}

#[test]
fn invalid_values_are_rejected_by_key() {
    let square = |s: f64| {
        format!(
            r#"{{ "output_dir": "x",
  "prior": {{ "kind": "cosine_2d", "alpha": 0.0, "sigma2": 1.0, "s": {s}, "cap": 10 }},
  "model": {{ "kind": "groundwater", "mesh": 10, "data_mesh": 20, "sigma_y2": 1e-4, "data_seed": 1 }},
  "chains": [{PCN}] }}"#
        )
    };
    assert_eq!(config_key(&square(0.9)), "prior.s");
    assert!(validate(&parse_config(&square(1.1)).unwrap()).is_ok());

    let burn = r#"{ "algorithm": "pcn", "step": 0.1, "iterations": 100, "burn_in": 100, "seed": 1 }"#;
    assert_eq!(config_key(&linear(burn)), "chains[0].burn_in");
    let two = format!("{PCN}, {PCN}");
    assert_eq!(config_key(&linear(&two)), "chains[1].label");
    let hmc = r#"{ "algorithm": "hmc", "step": 0.1, "iterations": 100, "burn_in": 10, "seed": 1 }"#;
    assert_eq!(config_key(&linear(hmc)), "baseline");
}

#[test]
fn parse_errors_carry_the_location() {
    let typo = linear(r#"{ "algorithm": "pcn", "step": 0.1, "iterations": 10, "burn_in": 1, "sede": 1 }"#);
    let msg = parse_config(&typo).unwrap_err();
    assert!(msg.contains("chains[0]"), "{msg}");
    let bad = linear(PCN).replace(r#""noise_variance": 0.05"#, r#""noise_variance": "big""#);
    let msg = parse_config(&bad).unwrap_err();
    assert!(msg.starts_with("model.noise_variance"), "{msg}");
    assert!(parse_config("{ not json").is_err());
}

#[test]
fn single_chain_run_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = parse_config(&linear(PCN)).unwrap();
    let outcome = run(&config, &options(tmp.path())).unwrap();
    assert_eq!(outcome.summary.len(), 1);
    assert_eq!(outcome.summary[0].speedup, 1.0);
    assert_eq!(outcome.summary[0].pde_solves, 2001);

    let dir = tmp.path();
    for f in ["manifest.json", "summary.csv", "summary.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "method,ap,sec_per_iter,ess_min,ess_med,ess_max,min_ess_per_sec,speedup,pde_solves"
    );
    let traces: Vec<_> = fs::read_dir(dir.join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 1);
    let trace = fs::read_to_string(traces[0].as_ref().unwrap().path()).unwrap();
    assert!(trace.starts_with("iter,misfit,accepted"));
    assert_eq!(trace.lines().count(), 2001);
}

#[test]
fn manifest_reproduces_the_run() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let chains = format!(
        r#"{PCN}, {{ "algorithm": "mmala", "step": 0.5, "block": {{ "leading": 4 }}, "iterations": 500,
           "burn_in": 100, "seed": 3, "adapt": {{}}, "init": "prior", "dump_samples": true }}"#
    );
    let config = parse_config(&linear(&chains)).unwrap();
    run(&config, &options(first.path())).unwrap();
    let manifest = load_config(&first.path().join("manifest.json")).unwrap();
    run(&manifest, &options(second.path())).unwrap();
    for sub in ["traces", "samples"] {
        for entry in fs::read_dir(first.path().join(sub)).unwrap() {
            let name = entry.unwrap().file_name();
            let a = fs::read(first.path().join(sub).join(&name)).unwrap();
            let b = fs::read(second.path().join(sub).join(&name)).unwrap();
            assert!(a == b, "{sub}/{name:?} differs");
        }
    }
}

#[test]
fn summarize_dir_rebuilds_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    let chains = format!(
        r#"{PCN}, {{ "algorithm": "mala", "step": 0.005, "iterations": 2000, "burn_in": 200, "seed": 2 }}"#
    );
    let config = parse_config(&linear(&chains)).unwrap();
    let outcome = run(&config, &options(tmp.path())).unwrap();
    let rows = summarize_dir(tmp.path(), None).unwrap();
    assert_eq!(rows, outcome.summary);
    let rebased = summarize_dir(tmp.path(), Some("inf-MALA")).unwrap();
    assert_eq!(rebased[1].speedup, 1.0);
    assert!(summarize_dir(tmp.path(), Some("nope")).is_err());
}

use std::path::{Path, PathBuf};

use iontrap_core::scenario::{config_hash, run_scenario, validate_scenario, RunOptions, RunReport, StepStatus};

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run_into(path: &Path, dir: &Path) -> RunReport {
    run_scenario(path, &RunOptions { seed: None, out_dir: Some(dir.to_path_buf()) }).expect("valid scenario")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

const BUNDLED: [&str; 5] =
    ["three_site_rabi.json", "crosstalk.json", "loss_budget.json", "loading_sequence.json", "heating_detection.json"];

#[test]
fn bundled_scenarios_validate_clean() {
    for name in BUNDLED {
        let d = validate_scenario(&bundled(name)).unwrap();
        assert!(d.is_empty(), "{name}: {d:?}");
    }
}

#[test]
fn undefined_site_gives_one_diagnostic_at_reference() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "s.json",
        r#"{
  "name": "x",
  "sites": [ { "id": "a", "position_um": [0, 0, 50], "axial_mhz": 1.0 } ],
  "drives": [ { "id": "d", "site": "nowhere", "omega0_khz": 3.0 } ]
}"#,
    );
    let d = validate_scenario(&p).unwrap();
    assert_eq!(d.len(), 1, "{d:?}");
    assert_eq!(d[0].pointer, "/drives/0/site");
    assert_eq!(d[0].line, Some(4));
    assert!(d[0].message.contains("nowhere"));
}

#[test]
fn negative_shot_count_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "s.json",
        r#"{
  "name": "x",
  "seed": 1,
  "sites": [ { "id": "a", "position_um": [0, 0, 50], "axial_mhz": 1.0 } ],
  "drives": [ { "id": "d", "site": "a", "omega0_khz": 3.0 } ],
  "plan": { "simulate": { "t_max_us": 100, "points": 20, "shots": -5 } }
}"#,
    );
    let d = validate_scenario(&p).unwrap();
    assert_eq!(d.len(), 1, "{d:?}");
    assert_eq!(d[0].pointer, "/plan/simulate/shots");
    assert!(d[0].message.contains("shots"), "{}", d[0].message);
    assert_eq!(d[0].line, Some(6));
}

#[test]
fn stochastic_step_without_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "s.json",
        r#"{ "name": "x",
  "sites": [ { "id": "a", "position_um": [0, 0, 50], "axial_mhz": 1.0 } ],
  "plan": { "detection": { "signal_kcps": 18, "background_kcps": 8, "t_ms": 1, "shots": 100 } } }"#,
    );
    let d = validate_scenario(&p).unwrap();
    assert_eq!(d.len(), 1, "{d:?}");
    assert_eq!(d[0].pointer, "/seed");
}

#[test]
fn unknown_field_and_bad_electrode_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "s.json", r#"{ "name": "x", "sites": [], "colour": 1 }"#);
    let d = validate_scenario(&p).unwrap();
    assert_eq!(d.len(), 1);
    assert!(d[0].message.contains("colour"));

    let p = write(
        dir.path(),
        "t.json",
        r#"{ "name": "x", "trap": { "kind": "demo" },
  "sites": [ { "id": "a", "position_um": [0, 0, 50], "axial_mhz": 1.0 } ],
  "plan": { "solve": { "exclude_electrodes": ["DC_C05", "NOPE"] } } }"#,
    );
    let d = validate_scenario(&p).unwrap();
    assert_eq!(d.len(), 1, "{d:?}");
    assert_eq!(d[0].pointer, "/plan/solve/exclude_electrodes/1");
}

#[test]
fn unreadable_file_is_io_error() {
    assert!(validate_scenario(Path::new("/nonexistent/scenario.json")).is_err());
}

#[test]
fn solve_only_plan_reports_only_the_solution() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "s.json",
        r#"{ "name": "solve only", "trap": { "kind": "demo" },
  "sites": [ { "id": "a", "position_um": [0, 0, 49.984342], "axial_mhz": 1.02 } ],
  "plan": { "solve": {} } }"#,
    );
    let out = dir.path().join("out");
    let r = run_into(&p, &out);
    assert!(r.succeeded(), "{:?}", r.steps);
    assert!(r.solve.is_some());
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["provenance", "scenario", "solve", "steps"]);
    let files: Vec<String> = read_tree(&out).into_iter().map(|f| f.0).collect();
    assert_eq!(files, ["report.json", "voltages.json"]);
}

#[test]
fn report_hash_matches_rehash_of_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = bundled("loss_budget.json");
    let r = run_into(&path, dir.path());
    let bytes = std::fs::read_to_string(&path).unwrap();
    assert_eq!(r.provenance.config_sha256, config_hash(&bytes));
    assert_eq!(r.provenance.config_sha256.len(), 64);
    assert_eq!(r.provenance.toolkit_version, iontrap_core::VERSION);
}

#[test]
fn loss_budget_scenario_reproduces_bench_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_into(&bundled("loss_budget.json"), dir.path());
    assert!(r.succeeded());
    let b = &r.beams[0];
    assert!((b.budget.total_db - 49.0).abs() < 1e-12);
    let components: f64 = b.budget.table.iter().take(5).map(|e| e.1).sum();
    assert!((components - 19.45).abs() < 1e-12);
    assert!((b.power_w / 54e-9 - 1.0).abs() < 0.01, "{}", b.power_w);
}

#[test]
fn three_site_rabi_recovers_configured_imbalances() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_into(&bundled("three_site_rabi.json"), dir.path());
    assert!(r.succeeded(), "{:?}", r.steps);
    assert_eq!(r.traces.len(), 4);
    let sol = r.solve.as_ref().unwrap();
    assert!(sol.max_abs_voltage <= 1.0 + 1e-12);
    for w in &sol.wells {
        assert!((w.achieved_axial_mhz / w.target_axial_mhz - 1.0).abs() < 1e-4, "{w:?}");
    }
    // split-fed drives differ in configured Ω exactly
    let omega = |id: &str| r.drives.iter().find(|d| d.id == id).unwrap().omega0_rad_s;
    assert!((omega("i") / omega("ii") - 1.064).abs() < 1e-12);
    assert!((omega("i") / omega("i_second_transition") - 1.039).abs() < 1e-12);
    for c in &r.comparisons {
        assert!(c.consistent.unwrap(), "{c:?}");
        assert!(c.sigma < 0.01, "{c:?}");
    }
    let header = std::fs::read_to_string(dir.path().join("trace_i.csv")).unwrap();
    assert!(header.starts_with("t_us,population,stderr,shots\n"));
}

#[test]
fn crosstalk_ratio_recovered_within_two_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_into(&bundled("crosstalk.json"), dir.path());
    assert!(r.succeeded(), "{:?}", r.steps);
    let c = &r.comparisons[0];
    assert!((c.value - 0.0025).abs() <= 2.0 * c.sigma, "{c:?}");
    assert!(c.sigma < 0.0005, "{c:?}");
}

#[test]
fn heating_and_detection_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_into(&bundled("heating_detection.json"), dir.path());
    assert!(r.succeeded(), "{:?}", r.steps);
    let h = r.heating.as_ref().unwrap();
    assert!((h.fit.rate_per_ms / 1.25 - 1.0).abs() < 0.10, "{:?}", h.fit);
    let d = r.detection.as_ref().unwrap();
    assert_eq!(d.threshold, 16);
    let csv = std::fs::read_to_string(dir.path().join("heating_fits.csv")).unwrap();
    assert!(csv.starts_with("wait_ms,nbar,nbar_sigma\n"));
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn loading_sequence_writes_waveforms() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_into(&bundled("loading_sequence.json"), dir.path());
    assert!(r.succeeded(), "{:?}", r.steps);
    assert_eq!(r.shuttle.len(), 3);
    let csv = std::fs::read_to_string(dir.path().join("shuttle_0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 32);
    assert!(csv.starts_with("step,DC_N00,"));
    assert_eq!(r.solve.as_ref().unwrap().wells.len(), 4);
}

#[test]
fn seed_override_changes_draws_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let path = bundled("heating_detection.json");
    let a = run_scenario(&path, &RunOptions { seed: Some(7), out_dir: Some(dir.path().join("a")) }).unwrap();
    let b = run_scenario(&path, &RunOptions { seed: None, out_dir: Some(dir.path().join("b")) }).unwrap();
    assert_eq!(a.provenance.seed, Some(7));
    assert_eq!(b.provenance.seed, Some(125));
    assert_ne!(a.detection.unwrap().monte_carlo.fidelity, b.detection.unwrap().monte_carlo.fidelity);
}

#[test]
fn failed_step_skips_only_its_dependents() {
    let dir = tempfile::tempdir().unwrap();
    // Site "hot" is beyond the Lamb-Dicke regime: its simulation fails,
    // its fit is skipped, and the other drive and detection still run.
    let p = write(
        dir.path(),
        "s.json",
        r#"{ "name": "partial failure", "seed": 3,
  "sites": [
    { "id": "a", "position_um": [0, 0, 50], "axial_mhz": 1.02, "nbar": 5 },
    { "id": "hot", "position_um": [100, 0, 50], "axial_mhz": 1.02, "nbar": 900 }
  ],
  "drives": [
    { "id": "a", "site": "a", "omega0_khz": 3.846 },
    { "id": "hot", "site": "hot", "omega0_khz": 3.846 }
  ],
  "plan": {
    "simulate": { "t_max_us": 600, "points": 60, "shots": 100 },
    "fit": {},
    "compare": [ { "kind": "imbalance", "drives": ["a", "hot"] } ],
    "detection": { "signal_kcps": 18, "background_kcps": 8, "t_ms": 1, "shots": 100 }
  } }"#,
    );
    let r = run_into(&p, &dir.path().join("out"));
    let status = |n: &str| r.step(n).unwrap_or_else(|| panic!("missing step {n}")).status;
    assert_eq!(status("simulate:a"), StepStatus::Ok);
    assert_eq!(status("fit:a"), StepStatus::Ok);
    assert_eq!(status("simulate:hot"), StepStatus::Failed);
    assert_eq!(status("fit:hot"), StepStatus::Skipped);
    assert_eq!(status("compare:0"), StepStatus::Skipped);
    assert_eq!(status("detection"), StepStatus::Ok);
    assert!(!r.succeeded());
    assert!(dir.path().join("out/trace_a.csv").exists());
    assert!(!dir.path().join("out/trace_hot.csv").exists());
}

#[test]
fn every_bundled_scenario_is_bitwise_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in BUNDLED {
        let a = dir.path().join(format!("{name}.a"));
        let b = dir.path().join(format!("{name}.b"));
        run_into(&bundled(name), &a);
        run_into(&bundled(name), &b);
        let (ta, tb) = (read_tree(&a), read_tree(&b));
        assert!(!ta.is_empty());
        assert_eq!(ta, tb, "{name}");
    }
}

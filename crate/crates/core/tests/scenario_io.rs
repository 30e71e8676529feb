mod common;

use std::process::Command;

use nmg_sim::plots::emit_plots;
use nmg_sim::scenario::ScenarioFile;
use nmg_sim::trace::write_traces;
use nmg_sim::{run_scenario, Scenario, ScenarioError, TWO_PI};
use proptest::prelude::*;

use common::*;

#[test]
fn default_file_carries_reference_parameters() {
    let sc = default_scenario();
    assert_eq!(sc.topology.ibr_ids().len(), 7);
    assert_eq!(sc.topology.comm.period, 1.0);
    for (p, ibr) in sc.params.iter().zip(sc.file.ibr.values()) {
        assert_eq!(ibr.omega_star_hz, 60.0);
        assert_eq!(ibr.m_hz_per_w, 1e-6);
        assert_eq!(ibr.xi, 0.1);
        assert!(rel(ibr.v_star_v, 480.0 * 2f64.sqrt() / 3f64.sqrt()) < 1e-15);
        assert!(rel(ibr.n_v_per_var, 48.0 * 2f64.sqrt() / 3f64.sqrt() / 1e6) < 1e-15);
        assert_eq!(p.omega_star, TWO_PI * 60.0);
        assert_eq!(p.m, TWO_PI * 1e-6);
        // setpoints equal the served load of the microgrid
        let bus = &sc.file.bus[&ibr.bus];
        assert_eq!(Some(ibr.p_star_w), bus.load_p_w);
        assert_eq!(Some(ibr.q_star_var), bus.load_q_var);
    }
    for l in &sc.file.commlink {
        assert!([l.a, l.b, l.d].iter().all(|g| *g == 0.0 || *g == 1.0));
    }
    assert_eq!(sc.config.sync.freq_tol_hz, 0.01);
    assert_eq!(sc.config.sync.volt_tol_frac, 0.01);
    assert_eq!(sc.config.sync.phase_tol_deg, 0.1);
}

#[test]
fn empty_file_reports_missing_sim() {
    let err = Scenario::parse("").unwrap_err();
    assert!(err.to_string().starts_with("missing section: sim"), "{err}");
}

#[test]
fn negative_droop_names_key() {
    let text = std::fs::read_to_string(scenario_path("two_mg.toml")).unwrap();
    let bad = text.replacen("m_hz_per_w = 1e-6", "m_hz_per_w = -1e-6", 1);
    match Scenario::parse(&bad) {
        Err(ScenarioError::Semantic(errs)) => {
            assert_eq!(errs.len(), 1, "{errs:?}");
            assert!(errs[0].contains("ibr.ibr1.m_hz_per_w"), "{errs:?}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn semantic_errors_are_aggregated() {
    let text = std::fs::read_to_string(scenario_path("two_mg.toml")).unwrap();
    let bad = text.replace("kappa = 0.1", "kappa = 0.0").replace("r_ohm = 0.1", "r_ohm = -0.1");
    match Scenario::parse(&bad) {
        Err(ScenarioError::Semantic(errs)) => assert_eq!(errs.len(), 3, "{errs:?}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unknown_key_rejected_with_line() {
    let text = std::fs::read_to_string(scenario_path("two_mg.toml")).unwrap();
    let bad = text.replacen("k = 0.3", "k = 0.3\nk_typo = 1.0", 1);
    match Scenario::parse(&bad) {
        Err(ScenarioError::Syntax { line, message }) => {
            assert!(message.contains("k_typo"), "{message}");
            let expected = bad.lines().position(|l| l.starts_with("k_typo")).unwrap() + 1;
            assert_eq!(line, expected);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn shipped_files_round_trip() {
    for name in ["default_7mg.toml", "two_mg.toml"] {
        let a = Scenario::load(scenario_path(name)).unwrap();
        let b = Scenario::parse(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perturbed_scenarios_round_trip(
        f in 49.0f64..61.0, m in 1e-8f64..1e-4, k in 0.01f64..5.0, r in 0.0f64..1.0, x in 0.01f64..1.0,
        p in 0.0f64..1e6, d0 in -30.0f64..30.0, period in 0.01f64..5.0,
    ) {
        let mut file: ScenarioFile = default_scenario().file;
        let ibr = file.ibr.get_mut("ibr2").unwrap();
        ibr.omega_star_hz = f;
        ibr.m_hz_per_w = m;
        ibr.k = k;
        ibr.p_star_w = p;
        ibr.delta0_deg = d0;
        let line = file.line.values_mut().next().unwrap();
        line.r_ohm = r;
        line.x_ohm = x;
        file.comm.as_mut().unwrap().period_s = period;
        let a = Scenario::from_file(file).unwrap();
        let b = Scenario::parse(&a.to_toml().unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn trace_rows_header_and_plots() {
    let mut sc = default_scenario();
    sc.config.record_every = 5;
    let run = run_scenario(&sc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("trace.csv");
    let bytes = write_traces(&run.trace, &run.events, &run.ibr_ids, &run.breaker_ids, Vec::new()).unwrap();
    std::fs::write(&csv_path, &bytes).unwrap();
    let text = String::from_utf8(bytes).unwrap();
    let rows = text.lines().count() - 1;
    let expected = sc.config.duration / (sc.config.dt_control * 5.0);
    let events = run.events.closures().map(|(t, _)| t.to_bits()).collect::<std::collections::BTreeSet<_>>().len();
    assert!((rows as f64 - expected).abs() <= 1.0 + events as f64, "{rows} rows, expected {expected} + {events}");
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 9 * 7 + 7);
    assert_eq!(header[1], "ibr1_P");
    assert_eq!(header[63], "ibr7_stage2_ok");
    assert_eq!(header[64], "b12_latched");

    let files = emit_plots(&csv_path, &dir.path().join("plots")).unwrap();
    assert_eq!(files.len(), 5);
    for f in &files {
        let svg = std::fs::read_to_string(f).unwrap();
        assert!(svg.contains("<svg"));
        assert!(svg.contains("<polyline"));
    }
}

#[test]
fn header_only_csv_plots_empty_axes() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("trace.csv");
    let sc = default_scenario();
    let ids = sc.topology.ibr_ids().to_vec();
    let brs: Vec<_> = sc.topology.breakers.iter().map(|b| b.id.clone()).collect();
    let bytes = write_traces(&[], &Default::default(), &ids, &brs, Vec::new()).unwrap();
    std::fs::write(&csv_path, bytes).unwrap();
    assert_eq!(emit_plots(&csv_path, dir.path()).unwrap().len(), 5);
}

#[test]
fn missing_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("trace.csv");
    std::fs::write(&csv_path, "t,ibr1_P,ibr1_Q,ibr1_f,ibr1_delta\n0,1,2,60,0\n").unwrap();
    let err = emit_plots(&csv_path, dir.path()).unwrap_err();
    assert_eq!(err.to_string(), "missing column `ibr1_V`");
}

fn nmgsim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nmgsim")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes_and_outputs() {
    let default = scenario_path("default_7mg.toml");
    let default = default.to_str().unwrap();
    let out = nmgsim(&["validate", "--scenario", default]);
    assert_eq!(out.status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, "").unwrap();
    let out = nmgsim(&["validate", "--scenario", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing section: sim"));

    let run_dir = dir.path().join("run");
    let out = nmgsim(&[
        "simulate", "--scenario", default, "--out", run_dir.to_str().unwrap(), "--duration", "8", "--record-every", "3",
        "--plots",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trace.csv", "events.csv", "active_power.svg", "frequency.svg", "reactive_power.svg", "voltage.svg", "phase.svg"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let events = std::fs::read_to_string(run_dir.join("events.csv")).unwrap();
    assert_eq!(events.lines().filter(|l| l.contains("breaker_closed")).count(), 7);

    let out = nmgsim(&["steady-state", "--scenario", default, "--closed"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 8);

    // a source-less loaded island fails in the solver
    let text = std::fs::read_to_string(scenario_path("two_mg.toml")).unwrap();
    let orphan = text + "\n[bus.mg3]\nload_p_w = 1000.0\nload_q_var = 0.0\n";
    let orphan_path = dir.path().join("orphan.toml");
    std::fs::write(&orphan_path, orphan).unwrap();
    let out = nmgsim(&["validate", "--scenario", orphan_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let out = nmgsim(&["simulate", "--scenario", default, "--out", run_dir.to_str().unwrap(), "--dt=-1"]);
    assert_eq!(out.status.code(), Some(1));

    // a step so large the loop diverges is a solver failure
    let out =
        nmgsim(&["simulate", "--scenario", default, "--out", run_dir.to_str().unwrap(), "--dt", "5", "--duration", "2000"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

mod common;

use std::process::Command;

use common::{builtin, fixture, frozen_oracle, max_abs_diff};
use sdp_feedback::capability::SetPoint;
use sdp_feedback::controller::StepsizeSchedule;
use sdp_feedback::harness::{
    csv_header, dual_gradient_iterates, kkt_report, load_scenario, oracle_schedule, oracle_solve,
    parse_scenario, read_csv, rows, run_closed_loop, write_csv, write_json, OracleOptions,
    Sampling, ScenarioConfig, TrajectoryFile,
};
use sdp_feedback::Error;

#[test]
fn builtin_scenario_echoes_the_experiment() {
    let cfg = load_scenario("paper-5node").unwrap();
    assert_eq!(cfg.feeder.node_count, 6);
    assert_eq!(cfg.feeder.segments.len(), 5);
    let kw: Vec<f64> = cfg.feeder.loads.iter().map(|l| l.p / 1000.0).collect();
    assert_eq!(kw, [1.1, 1.1, 1.1, 1.09, 1.1]);
    let kvar: Vec<f64> = cfg.feeder.loads.iter().map(|l| l.q / 1000.0).collect();
    assert_eq!(kvar, [0.826, 0.828, 0.829, 0.821, 0.83]);
    let s: Vec<f64> = cfg
        .capabilities
        .iter()
        .map(|c| c.s_rating / 1000.0)
        .collect();
    assert_eq!(s, [4.66, 4.83, 7.62, 7.62, 7.62]);
    let pav: Vec<f64> = cfg.capabilities.iter().map(|c| c.p_av / 1000.0).collect();
    assert_eq!(pav, [1.91, 1.95, 3.24, 3.24, 3.24]);
    assert_eq!((cfg.feeder.vmin, cfg.feeder.vmax), (0.95, 1.05));
    assert_eq!(cfg.schedule, StepsizeSchedule::InverseSqrt { c: 0.1 });
    assert_eq!(cfg.tau, vec![1.1; 5]);
    assert!((cfg.sampling_interval() - 9.9).abs() < 1e-12);
    assert_eq!(cfg.horizon_slots(), 60);
    assert_eq!((cfg.sdp_cost.a, cfg.sdp_cost.b), (2.0, 10.0));
    let a = &cfg.agents[0];
    assert_eq!(a.a, [[1.0, 0.0], [0.0, 0.01]]);
    assert_eq!(a.b, [10.0, 0.1]);
    let z = cfg.feeder.segments[0].series_impedance;
    assert_eq!((z.re, z.im), (0.0135, 0.0045));
    assert!((cfg.feeder.bases.z_base_ohm() - 5.76).abs() < 1e-12);
}

#[test]
fn scenario_json_round_trips() {
    let cfg = ScenarioConfig::five_node();
    let text = serde_json::to_string_pretty(&cfg).unwrap();
    assert_eq!(parse_scenario(&text, "x").unwrap(), cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, &text).unwrap();
    assert_eq!(load_scenario(path.to_str().unwrap()).unwrap(), cfg);
}

#[test]
fn malformed_scenarios_are_rejected() {
    assert!(matches!(
        parse_scenario("", "empty"),
        Err(Error::Config { .. })
    ));
    assert!(matches!(
        parse_scenario("  \n", "blank"),
        Err(Error::Config { .. })
    ));

    let mut cfg = ScenarioConfig::five_node();
    cfg.feeder.vmin = 1.1;
    let text = serde_json::to_string(&cfg).unwrap();
    let err = parse_scenario(&text, "swapped").unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    let mut value = serde_json::to_value(ScenarioConfig::five_node()).unwrap();
    value["surprise"] = serde_json::json!(1);
    let err = parse_scenario(&value.to_string(), "extra").unwrap_err();
    assert!(err.to_string().contains("surprise"), "{err}");
    assert_eq!(err.exit_code(), 2);

    assert!(matches!(
        load_scenario("/nonexistent/scenario.json"),
        Err(Error::Config { .. })
    ));
}

#[test]
fn sampling_accepts_seconds_and_tau_multiples() {
    assert_eq!(
        "9x-tau".parse::<Sampling>().unwrap(),
        Sampling::TauMultiple(9.0)
    );
    assert_eq!("0.5".parse::<Sampling>().unwrap(), Sampling::Seconds(0.5));
    assert!("-1".parse::<Sampling>().is_err());
    assert!("fast".parse::<Sampling>().is_err());
}

#[test]
fn zero_horizon_echoes_the_initial_state() {
    let mut cfg = ScenarioConfig::five_node();
    cfg.horizon = Some(0);
    cfg.initial.lambda = Some(vec![10.0, 0.1, 10.0, 0.1, 10.0, 0.1, 10.0, 0.1, 10.0, 0.1]);
    cfg.initial.outputs = Some(vec![SetPoint::new(500.0, -100.0); 5]);
    let traj = run_closed_loop(&cfg).unwrap();
    assert_eq!(traj.records.len(), 1);
    let r = &traj.records[0];
    assert_eq!(r.k, 0);
    assert_eq!(r.lambda, cfg.initial_lambda());
    assert_eq!(r.y_sampled, vec![SetPoint::new(0.05, -0.01); 5]);
    assert_eq!(r.v, cfg.initial_voltage());
}

#[test]
fn export_has_fixed_columns_and_round_trips() {
    let mut cfg = ScenarioConfig::five_node();
    cfg.horizon = Some(5);
    let traj = run_closed_loop(&cfg).unwrap();
    let n = 5;
    assert_eq!(csv_header(n).len(), 4 + 6 * n + 8);

    let mut buf = Vec::new();
    write_csv(&traj, &mut buf).unwrap();
    let table = read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(table.header, csv_header(n));
    assert!(table.rows.iter().all(|r| r.len() == 4 + 6 * n + 8));
    assert_eq!(table.rows.len(), 6);
    let meta = table.metadata.as_ref().unwrap();
    assert_eq!(meta["bases"]["s_base_va"], 10000.0);
    let echoed: ScenarioConfig = serde_json::from_value(meta["config"].clone()).unwrap();
    assert_eq!(echoed, cfg);

    let fresh = rows(&traj).unwrap();
    let lam = table.column("lambda_p_3").unwrap();
    for (row, cell) in fresh.iter().zip(&lam) {
        let x = row.inverters[2].lambda_p;
        assert!((cell.unwrap() - x).abs() <= 1e-9 * x.abs().max(1.0));
    }
    assert_eq!(table.column("alpha").unwrap()[0], None);
    assert_eq!(table.column("epsilon_bound").unwrap()[0], None);
    assert!((table.column("alpha").unwrap()[4].unwrap() - 0.05).abs() < 1e-15);

    let mut json = Vec::new();
    write_json(&traj, &mut json).unwrap();
    let file: TrajectoryFile = serde_json::from_slice(&json).unwrap();
    assert_eq!(file.slots, fresh);
    assert_eq!(file.metadata.config, cfg);
    for (j, name) in csv_header(n).iter().enumerate() {
        let col = table.column(name).unwrap();
        let key = name
            .rsplit_once('_')
            .filter(|(_, i)| i.parse::<usize>().is_ok());
        for (row, cell) in file.slots.iter().zip(&col) {
            let v = serde_json::to_value(row).unwrap();
            let expected = match key {
                Some((field, i)) => v["inverters"][i.parse::<usize>().unwrap() - 1][field].as_f64(),
                None => v[name].as_f64(),
            };
            match (expected, cell) {
                (Some(a), Some(b)) => assert!(
                    (a - b).abs() <= 1e-9 * a.abs().max(1.0),
                    "column {j} {name}"
                ),
                (None, None) => {}
                other => panic!("column {name}: {other:?}"),
            }
        }
    }
}

#[test]
fn three_slot_trajectory_matches_golden_file() {
    let mut cfg = ScenarioConfig::five_node();
    cfg.horizon = Some(3);
    let traj = run_closed_loop(&cfg).unwrap();
    let mut buf = Vec::new();
    write_csv(&traj, &mut buf).unwrap();
    let path = fixture("paper-5node-3slots.csv");
    if std::env::var_os("REGENERATE_GOLDEN").is_some() {
        std::fs::write(&path, &buf).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), golden);
}

#[test]
fn runs_are_byte_for_byte_deterministic() {
    let mut cfg = ScenarioConfig::five_node();
    cfg.horizon = Some(10);
    let out = || {
        let mut buf = Vec::new();
        write_csv(&run_closed_loop(&cfg).unwrap(), &mut buf).unwrap();
        buf
    };
    assert_eq!(out(), out());
}

#[test]
fn kkt_residuals_vanish_only_at_the_optimum() {
    let (cfg, p) = builtin();
    let sol = frozen_oracle();
    let v = sol.v_matrix().unwrap();
    let at = kkt_report(&v, &sol.u, &sol.lambda, &p, &cfg.subproblem).unwrap();
    assert!(at.worst() < 1e-5, "{at:?}");

    let shifted: Vec<f64> = sol.lambda.iter().map(|l| l + 0.1).collect();
    let off = kkt_report(&v, &sol.u, &shifted, &p, &cfg.subproblem).unwrap();
    assert!(off.max_fixed_point_gap() > 1e-3, "{off:?}");

    let mut u = sol.u.clone();
    u[0] = SetPoint::new(-0.1, 0.0);
    let bad = kkt_report(&v, &u, &sol.lambda, &p, &cfg.subproblem).unwrap();
    assert!((bad.capability_membership[0] - 0.1).abs() < 1e-12);
    assert!(bad.balance > 0.09);
}

#[test]
fn frozen_oracle_is_optimal() {
    let sol = frozen_oracle();
    assert!(sol.balance_residual < 1e-5);
    assert!(sol.duality_gap() < 1e-5);
    assert!(sol.rank_ratio < 1e-5);
    assert_eq!(sol.options.schedule, oracle_schedule());
}

#[test]
fn oracle_reports_non_convergence() {
    let cfg = ScenarioConfig::five_node();
    let options = OracleOptions {
        max_iter: 5,
        ..OracleOptions::default()
    };
    match oracle_solve(&cfg, &options) {
        Err(Error::Convergence {
            iterations,
            history,
            ..
        }) => {
            assert_eq!(iterations, 5);
            assert_eq!(history.len(), 6);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn slow_sampling_reproduces_the_exact_dual_iteration() {
    let mut cfg = ScenarioConfig::five_node();
    cfg.schedule = oracle_schedule();
    cfg.sampling = Sampling::TauMultiple(40.0);
    cfg.horizon = Some(50);
    let p = cfg.problem().unwrap();
    let u0 = p.u_update(&cfg.initial_lambda()).unwrap();
    let watts = cfg.feeder.bases.s_base_va;
    cfg.initial.outputs = Some(
        u0.iter()
            .map(|u| SetPoint::new(u.p * watts, u.q * watts))
            .collect(),
    );
    let traj = run_closed_loop(&cfg).unwrap();
    let exact = dual_gradient_iterates(
        &p,
        &cfg.schedule,
        cfg.initial_lambda(),
        cfg.initial_voltage(),
        cfg.subproblem,
        50,
    )
    .unwrap();
    assert_eq!(traj.records.len(), exact.len());
    for (r, e) in traj.records.iter().zip(&exact) {
        let scale = e.lambda.iter().map(|x| x.abs()).fold(1.0, f64::max);
        assert!(
            max_abs_diff(&r.lambda, &e.lambda) < 1e-6 * scale,
            "k = {}",
            r.k
        );
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sdp-feedback"))
}

#[test]
fn cli_prints_the_builtin_scenario() {
    let out = cli()
        .args(["scenario", "print", "paper-5node"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let cfg: ScenarioConfig = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg, ScenarioConfig::five_node());
    let out = cli().args(["scenario", "print", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_exit_codes() {
    let code = |args: &[&str]| cli().args(args).output().unwrap().status.code();
    assert_eq!(code(&["run", "--sampling", "fast"]), Some(2));
    assert_eq!(code(&["run", "--scenario", "/nonexistent.json"]), Some(2));
    assert_eq!(code(&["run", "--schedule", "harmonic:-1"]), Some(2));
    assert_eq!(code(&["run", "--bogus"]), Some(2));
    assert_eq!(code(&["oracle", "--max-iter", "3"]), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::five_node();
    cfg.subproblem.max_iter = 2;
    let scenario = dir.path().join("starved.json");
    std::fs::write(&scenario, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(
        code(&[
            "run",
            "--slots",
            "2",
            "--scenario",
            scenario.to_str().unwrap()
        ]),
        Some(3)
    );

    let csv = dir.path().join("t.csv");
    let csv_s = csv.to_str().unwrap();
    assert_eq!(code(&["run", "--slots", "3", "--out", csv_s]), Some(0));
    assert_eq!(code(&["verify", "--trajectory", csv_s]), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    let last = text.lines().last().unwrap();
    let tampered: Vec<String> = last
        .split(',')
        .enumerate()
        .map(|(j, c)| {
            if j == 8 {
                format!("{}", c.parse::<f64>().unwrap() + 1.0)
            } else {
                c.to_string()
            }
        })
        .collect();
    std::fs::write(&csv, text.replace(last, &tampered.join(","))).unwrap();
    assert_eq!(code(&["verify", "--trajectory", csv_s]), Some(4));

    let json = dir.path().join("t.json");
    assert_eq!(
        code(&["run", "--slots", "2", "--out", json.to_str().unwrap()]),
        Some(0)
    );
    let file: TrajectoryFile =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(file.slots.len(), 3);
}

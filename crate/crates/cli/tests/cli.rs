use std::path::Path;
use std::process::Command;

use mter_cli::result::ResultFile;
use mter_cli::{run, Mode, RunConfig};

fn mter(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_mter"))
        .args(args)
        .env("MTER_THREADS", "2")
        .status()
        .expect("binary runs")
        .code()
        .unwrap_or(-1)
}

fn small(extra: &[&str]) -> RunConfig {
    let mut o: Vec<String> = vec![
        "network.builtin=\"random_small\"".into(),
        "network.pool_size=50".into(),
        "network.seed=7".into(),
        "solver.tol=1e-7".into(),
        "solver.starts=2".into(),
    ];
    o.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::load(None, &o).unwrap()
}

#[test]
fn cycle_mode_reports_flow_and_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let code = mter(&[
        "cycle",
        "--set",
        "network.builtin=directed_cycle",
        "--set",
        "network.pool_size=60",
        "--set",
        "network.cycle_free_flow=[0.1, 0.2, 0.3]",
        "--set",
        "network.capacity=100",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let r = ResultFile::read(&out.join("result.json")).unwrap();
    let u: Vec<f64> = serde_json::from_value(r.extra["masses"].clone()).unwrap();
    let rho = r.extra["rho"].as_f64().unwrap();
    assert!((u.iter().sum::<f64>() - 60.0).abs() < 1e-10);
    for (x, t0) in u.iter().zip([0.1, 0.2, 0.3]) {
        assert!((x - rho * t0 * (1.0 + x / 100.0)).abs() < 1e-9);
    }
    assert!((r.extra["kappa_hat"].as_f64().unwrap() - 0.375).abs() < 1e-12);
}

#[test]
fn result_round_trips_and_reruns_from_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&[]);
    let out = dir.path().join("a");
    assert!(run(Mode::Solve, &cfg, &out).unwrap().converged);
    let text = std::fs::read_to_string(out.join("result.json")).unwrap();
    // floats carry 17 significant digits
    assert!(text.contains("\"total_mass\":5.0000000000000000e1"));
    let r = ResultFile::read(&out.join("result.json")).unwrap();
    let stored = r.metrics.unwrap();
    let again = r.recompute_metrics().unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * a.abs().max(1.0);
    assert!(close(stored.profit_rate, again.profit_rate));
    assert!(close(stored.fulfillment, again.fulfillment));
    assert!(close(stored.avg_speed, again.avg_speed));
    assert!(close(stored.vacant_hired_ratio, again.vacant_hired_ratio));

    let out2 = dir.path().join("b");
    run(Mode::Solve, &r.config, &out2).unwrap();
    let r2 = ResultFile::read(&out2.join("result.json")).unwrap();
    assert_eq!(r.masses.unwrap().x, r2.masses.unwrap().x);
    assert_eq!(r.seed, r2.seed);
}

#[test]
fn missing_input_fails_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let link = dir.path().join("net.tntp");
    std::fs::write(&link, "<NUMBER OF NODES> 2\n").unwrap();
    let out = dir.path().join("out");
    let code = mter(&[
        "solve",
        "--set",
        &format!("network.link_file=\"{}\"", link.display()),
        "--set",
        "network.trips_file=\"missing_trips.tntp\"",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(!out.exists());
    assert_eq!(mter(&["solve", "--out", out.to_str().unwrap()]), 1);
    assert_eq!(
        mter(&[
            "solve",
            "--set",
            "solver.tol=-1",
            "--set",
            "network.builtin=shuttle",
            "--out",
            out.to_str().unwrap()
        ]),
        1
    );
    assert!(!out.exists());
}

#[test]
fn nonconvergence_exits_two_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nc");
    let code = mter(&[
        "solve",
        "--set",
        "network.builtin=random_small",
        "--set",
        "network.pool_size=40",
        "--set",
        "solver.max_iter=3",
        "--set",
        "solver.starts=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    let r = ResultFile::read(&out.join("result.json")).unwrap();
    assert!(!r.converged);
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4);
}

#[test]
fn compare_identical_and_mismatched() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    run(Mode::Solve, &small(&[]), &a).unwrap();
    let other = dir.path().join("o");
    run(Mode::Solve, &small(&["network.seed=8"]), &other).unwrap();
    let ra = a.join("result.json");
    let cfg = RunConfig::load(
        None,
        &[
            format!("compare.a=\"{}\"", ra.display()),
            format!("compare.b=\"{}\"", ra.display()),
        ],
    )
    .unwrap();
    let out = dir.path().join("cmp");
    run(Mode::Compare, &cfg, &out).unwrap();
    let mut rd = csv::Reader::from_path(out.join("compare_links.csv")).unwrap();
    for rec in rd.records() {
        let rec = rec.unwrap();
        assert_eq!(rec[5].parse::<f64>().unwrap(), 0.0);
        assert_eq!(rec[8].parse::<f64>().unwrap(), 0.0);
    }
    let cfg = RunConfig::load(
        None,
        &[
            format!("compare.a=\"{}\"", ra.display()),
            format!("compare.b=\"{}\"", other.join("result.json").display()),
        ],
    )
    .unwrap();
    let err = run(Mode::Compare, &cfg, &dir.path().join("bad")).unwrap_err();
    assert!(
        err.to_string().contains("links") || err.to_string().contains("differ"),
        "{err}"
    );
}

#[test]
fn sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&[
        "sweep.param=\"pool_size\"",
        "sweep.values=[20.0, 30.0]",
        "solver.starts=1",
    ]);
    run(Mode::Sweep, &cfg, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("param_value,profit,fulfillment,vh_ratio,avg_speed,participation")
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn ablation_modes_write_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&["compare.region_nodes=[1, 2]", "solver.starts=1"]);
    let out = dir.path().join("m");
    assert!(run(Mode::Myopic, &cfg, &out).unwrap().converged);
    for f in [
        "result.json",
        "result_forward.json",
        "compare_links.csv",
        "compare_metrics.csv",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let r = ResultFile::read(&out.join("result.json")).unwrap();
    assert!(r.extra["region_mass_delta"].is_number());

    let cfg = small(&["network.cordon={ nodes = [1, 2], fee = 2.0 }", "solver.starts=1"]);
    let out = dir.path().join("cu");
    run(Mode::CongestionUnaware, &cfg, &out).unwrap();
    let r = ResultFile::read(&out.join("result.json")).unwrap();
    assert!(r.extra["aware_toll_revenue"].as_f64().unwrap() > 0.0);
    assert!(r.links.iter().any(|l| l.toll == 2.0));
}

#[test]
fn participation_and_microsim_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&["participation.potential_total=40.0", "solver.starts=1"]);
    let out = dir.path().join("p");
    assert!(run(Mode::Participation, &cfg, &out).unwrap().converged);
    let r = ResultFile::read(&out.join("result.json")).unwrap();
    let rate = r.extra["participation_rate"].as_f64().unwrap();
    assert!(rate > 0.0 && rate < 1.0);
    assert!((r.total_mass - 40.0 * rate).abs() < 1e-9);

    let cfg = small(&[
        "solver.starts=1",
        "microsim.horizon=500.0",
        "microsim.vehicles=16",
        "microsim.trajectory_vehicles=1",
    ]);
    let out = dir.path().join("ms");
    run(Mode::MicrosimValidate, &cfg, &out).unwrap();
    assert!(out.join("microsim.csv").is_file());
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("time,vehicle,link,status,destination"));
}

#[test]
fn config_file_with_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "[network]\nbuiltin = \"shuttle\"\npool_size = 10.0\nlambda = 30.0\ntolls = \"tolls.csv\"\n\n[solver]\ntol = 1e-8\nstarts = 1\n[solver.step]\nrule = \"msa\"\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("tolls.csv"), "link_id,toll_dollars\n1,1.5\n").unwrap();
    let cfg = RunConfig::load(Some(&cfg_path), &["model.discount_rate=0.2".into()]).unwrap();
    assert_eq!(
        cfg.network.tolls.as_deref(),
        Some(dir.path().join("tolls.csv").as_path())
    );
    assert_eq!(cfg.model.discount_rate, 0.2);
    let out = dir.path().join("o");
    run(Mode::Solve, &cfg, &out).unwrap();
    let r = ResultFile::read(&out.join("result.json")).unwrap();
    assert_eq!(r.links[0].toll, 1.5);
    assert!(RunConfig::load(Some(Path::new("/no/such.toml")), &[]).is_err());
    assert!(RunConfig::load(None, &["network.bogus=1".into()]).is_err());
}

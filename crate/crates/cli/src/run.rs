//! Mode dispatch.

use std::fs;
use std::path::Path;

use clap::ValueEnum;
use serde_json::json;

use mter::equilibrium::{multi_start, EquilibriumResult};
use mter::extensions::{
    congestion_unaware_load, cycle_start, run_sweep, solve_cycle, solve_participation, CycleProblem,
    ParticipationParams,
};
use mter::loading::load;
use mter::microsim::{simulate, write_trajectory};
use mter::network::Scenario;
use mter::smdp::{Boundary, SmdpParams};
use mter::MterError;

use crate::compare::{compare, write_comparison};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{num, write_json, write_table, write_trace};
use crate::result::ResultFile;
use crate::scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Solve,
    Participation,
    Myopic,
    CongestionUnaware,
    Cycle,
    MicrosimValidate,
    Sweep,
    Compare,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Participation => "participation",
            Mode::Myopic => "myopic",
            Mode::CongestionUnaware => "congestion-unaware",
            Mode::Cycle => "cycle",
            Mode::MicrosimValidate => "microsim-validate",
            Mode::Sweep => "sweep",
            Mode::Compare => "compare",
        }
    }
}

/// Whether the run converged; artifacts are written either way.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub converged: bool,
}

fn solve_best(s: &Scenario, params: &SmdpParams, cfg: &RunConfig) -> Result<EquilibriumResult, CliError> {
    let ms = multi_start(&s.network, &s.demand, params, &cfg.solver)?;
    for (k, run) in ms.runs.iter().enumerate() {
        if let Ok(r) = run {
            log::info!(
                "start {k}: converged {} after {} iterations, profit {:.2}",
                r.converged,
                r.iterations,
                r.metrics.profit_rate
            );
        }
    }
    Ok(ms.into_best())
}

fn write_equilibrium(
    out: &Path,
    name: &str,
    mode: Mode,
    r: &EquilibriumResult,
    s: &Scenario,
    cfg: &RunConfig,
    extra: serde_json::Value,
) -> Result<ResultFile, CliError> {
    let mut file = ResultFile::from_equilibrium(mode.name(), r, &s.network, cfg);
    file.extra = extra;
    write_json(&out.join(name), &file)?;
    Ok(file)
}

/// Runs `mode` and writes its artifacts into `out`. Configuration and input
/// errors are raised before `out` is created.
pub fn run(mode: Mode, cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    if mode == Mode::Compare {
        return run_compare(cfg, out);
    }
    cfg.validate()?;
    let s = scenario::build(cfg)?;
    if mode == Mode::Sweep && cfg.sweep.is_none() {
        return Err(CliError::Config("sweep mode needs a [sweep] section".into()));
    }
    let participation = participation_params(cfg, &s)?;
    fs::create_dir_all(out)?;
    let params = &cfg.model;
    match mode {
        Mode::Solve => {
            let r = solve_best(&s, params, cfg)?;
            write_trace(&out.join("trace.csv"), &r.trace)?;
            write_equilibrium(out, "result.json", mode, &r, &s, cfg, json!({}))?;
            Ok(Outcome {
                converged: r.converged,
            })
        }
        Mode::Participation => {
            let p = participation.expect("built above");
            let pr = solve_participation(&s.network, &s.demand, params, &p, &cfg.solver)?;
            write_trace(&out.join("trace.csv"), &pr.result.trace)?;
            let extra = json!({
                "participation_rate": pr.rate,
                "participation_probabilities": pr.probabilities,
                "potential": p.potential,
            });
            write_equilibrium(out, "result.json", mode, &pr.result, &s, cfg, extra)?;
            Ok(Outcome {
                converged: pr.result.converged,
            })
        }
        Mode::Myopic => {
            let forward = solve_best(
                &s,
                &SmdpParams {
                    boundary: Boundary::ForwardLooking,
                    ..params.clone()
                },
                cfg,
            )?;
            let myopic = solve_best(
                &s,
                &SmdpParams {
                    boundary: Boundary::Myopic,
                    ..params.clone()
                },
                cfg,
            )?;
            write_trace(&out.join("trace.csv"), &myopic.trace)?;
            write_trace(&out.join("trace_forward.csv"), &forward.trace)?;
            let a = write_equilibrium(
                out,
                "result_forward.json",
                Mode::Solve,
                &forward,
                &s,
                cfg,
                json!({}),
            )?;
            let mut b = ResultFile::from_equilibrium(mode.name(), &myopic, &s.network, cfg);
            let c = compare(&a, &b, &cfg.compare.region_nodes)?;
            write_comparison(out, &c)?;
            b.extra = json!({
                "forward_region_mass": c.region_mass_a,
                "myopic_region_mass": c.region_mass_b,
                "region_mass_delta": c.region_mass_a - c.region_mass_b,
                "forward_converged": forward.converged,
            });
            write_json(&out.join("result.json"), &b)?;
            Ok(Outcome {
                converged: forward.converged && myopic.converged,
            })
        }
        Mode::CongestionUnaware => {
            let aware = solve_best(&s, params, cfg)?;
            let cu = congestion_unaware_load(&s.network, &s.demand, params, &cfg.solver)?;
            write_trace(&out.join("trace.csv"), &cu.loaded.trace)?;
            write_trace(&out.join("trace_planned.csv"), &cu.planned.trace)?;
            write_trace(&out.join("trace_aware.csv"), &aware.trace)?;
            let a = write_equilibrium(out, "result_aware.json", Mode::Solve, &aware, &s, cfg, json!({}))?;
            let mut b = ResultFile::from_equilibrium(mode.name(), &cu.loaded, &s.network, cfg);
            let c = compare(&a, &b, &cfg.compare.region_nodes)?;
            write_comparison(out, &c)?;
            let (ta, tb) = (
                aware.metrics.toll_revenue_rate,
                cu.loaded.metrics.toll_revenue_rate,
            );
            b.extra = json!({
                "aware_toll_revenue": ta,
                "unaware_toll_revenue": tb,
                "toll_revenue_increase_pct": if tb > 0.0 { 100.0 * (ta - tb) / tb } else { f64::NAN },
                "planned_converged": cu.planned.converged,
                "aware_converged": aware.converged,
            });
            write_json(&out.join("result.json"), &b)?;
            Ok(Outcome {
                converged: aware.converged && cu.loaded.converged,
            })
        }
        Mode::Cycle => run_cycle(cfg, &s, out),
        Mode::MicrosimValidate => run_microsim(cfg, &s, out),
        Mode::Sweep => {
            let sw = cfg.sweep.as_ref().expect("checked above");
            let part = if sw.participation {
                participation.as_ref()
            } else {
                None
            };
            let rows = run_sweep(&s, params, part, &cfg.solver, sw.param, &sw.values)?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        num(r.param_value),
                        num(r.profit),
                        num(r.fulfillment),
                        num(r.vh_ratio),
                        num(r.avg_speed),
                        num(r.participation),
                    ]
                })
                .collect();
            write_table(
                &out.join("sweep.csv"),
                &[
                    "param_value",
                    "profit",
                    "fulfillment",
                    "vh_ratio",
                    "avg_speed",
                    "participation",
                ],
                &table,
            )?;
            let converged = rows.iter().all(|r| r.converged);
            let file = ResultFile {
                mode: mode.name().into(),
                seed: cfg.solver.seed,
                converged,
                iterations: 0,
                gap: f64::NAN,
                total_mass: s.network.pool_size(),
                certificates: None,
                metrics: None,
                links: Vec::new(),
                masses: None,
                env: None,
                policies: None,
                sigma: None,
                extra: json!({ "rows": rows }),
                config: cfg.clone(),
            };
            write_json(&out.join("result.json"), &file)?;
            Ok(Outcome { converged })
        }
        Mode::Compare => unreachable!("handled above"),
    }
}

fn participation_params(cfg: &RunConfig, s: &Scenario) -> Result<Option<ParticipationParams>, CliError> {
    let pc = &cfg.participation;
    let n = s.network.num_nodes();
    let p = match &pc.per_node {
        Some(v) => ParticipationParams {
            potential: v.clone(),
            zeta: pc.zeta,
            outside: pc.outside,
        },
        None => ParticipationParams {
            outside: pc.outside,
            ..ParticipationParams::uniform(n, pc.potential_total, pc.zeta)
        },
    };
    p.validate(&s.network)?;
    Ok(Some(p))
}

fn run_cycle(cfg: &RunConfig, s: &Scenario, out: &Path) -> Result<Outcome, CliError> {
    let problem = CycleProblem::from_network(&s.network)?;
    let n = problem.times.len();
    let main = solve_cycle(&problem, None, cfg.cycle.tol, cfg.cycle.max_iter);
    let sol = match main {
        Ok(sol) => sol,
        Err(MterError::Convergence {
            iterations, residual, ..
        }) => {
            let file = cycle_file(
                cfg,
                s,
                json!({ "iterations": iterations, "spread": residual }),
                false,
            );
            write_json(&out.join("result.json"), &file)?;
            return Ok(Outcome { converged: false });
        }
        Err(e) => return Err(e.into()),
    };
    let mut starts = Vec::new();
    for k in 0..cfg.solver.starts as u64 {
        let seed = cfg.solver.seed.wrapping_add(k);
        let st = cycle_start(n, problem.mass, seed);
        let r = solve_cycle(&problem, Some(&st), cfg.cycle.tol, cfg.cycle.max_iter)?;
        let dev = r
            .masses
            .iter()
            .zip(&sol.masses)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        starts.push(json!({ "seed": seed, "iterations": r.iterations, "max_deviation": dev }));
    }
    let rows: Vec<Vec<String>> = sol
        .spreads
        .iter()
        .enumerate()
        .map(|(k, d)| vec![(k + 1).to_string(), num(*d)])
        .collect();
    write_table(&out.join("trace.csv"), &["iter", "spread"], &rows)?;
    let extra = json!({
        "masses": sol.masses,
        "rho": sol.rho,
        "kappa_hat": sol.kappa_hat,
        "empirical_factor": sol.empirical_factor,
        "iterations": sol.iterations,
        "starts": starts,
    });
    let mut file = cycle_file(cfg, s, extra, true);
    file.iterations = sol.iterations;
    file.gap = *sol.spreads.last().unwrap_or(&0.0);
    write_json(&out.join("result.json"), &file)?;
    Ok(Outcome { converged: true })
}

fn cycle_file(cfg: &RunConfig, s: &Scenario, extra: serde_json::Value, converged: bool) -> ResultFile {
    ResultFile {
        mode: Mode::Cycle.name().into(),
        seed: cfg.solver.seed,
        converged,
        iterations: 0,
        gap: f64::NAN,
        total_mass: s.network.pool_size(),
        certificates: None,
        metrics: None,
        links: Vec::new(),
        masses: None,
        env: None,
        policies: None,
        sigma: None,
        extra,
        config: cfg.clone(),
    }
}

fn run_microsim(cfg: &RunConfig, s: &Scenario, out: &Path) -> Result<Outcome, CliError> {
    let r = solve_best(s, &cfg.model, cfg)?;
    let net = &s.network;
    let exact = load(
        &r.policies,
        &r.env,
        net,
        &s.demand,
        r.total_mass,
        cfg.solver.loading,
    )?;
    let sim = simulate(net, &s.demand, &r.env, &r.policies, r.total_mass, &cfg.microsim)?;
    if !sim.trajectory.is_empty() {
        write_trajectory(&sim.trajectory, fs::File::create(out.join("trajectory.csv"))?)?;
    }
    let idx = net.hired_index();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut within = 0usize;
    let states = exact.len();
    for (k, ((e, m), se)) in exact
        .iter()
        .zip(sim.masses.iter())
        .zip(sim.std_errors.iter())
        .enumerate()
    {
        let (link, status, dest) = if k < net.num_links() {
            (k, "empty", String::new())
        } else {
            let (a, d) = idx.entry(k - net.num_links());
            (a, "hired", net.label(d).to_string())
        };
        let z = if *se > 0.0 {
            (m - e) / se
        } else if (m - e).abs() < 1e-9 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z.abs());
        if z.abs() <= 3.0 {
            within += 1;
        }
        rows.push(vec![
            net.link(link).id.to_string(),
            status.into(),
            dest,
            num(*e),
            num(*m),
            num(*se),
            num(z),
        ]);
    }
    write_table(
        &out.join("microsim.csv"),
        &[
            "link_id",
            "status",
            "destination",
            "exact",
            "simulated",
            "std_error",
            "z",
        ],
        &rows,
    )?;
    write_trace(&out.join("trace.csv"), &r.trace)?;
    let extra = json!({
        "max_abs_z": worst,
        "share_within_3se": within as f64 / states as f64,
        "traversals": sim.traversals,
    });
    write_equilibrium(out, "result.json", Mode::MicrosimValidate, &r, s, cfg, extra)?;
    Ok(Outcome {
        converged: r.converged,
    })
}

fn run_compare(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let (Some(pa), Some(pb)) = (&cfg.compare.a, &cfg.compare.b) else {
        return Err(CliError::Config("compare needs compare.a and compare.b".into()));
    };
    let a = ResultFile::read(pa)?;
    let b = ResultFile::read(pb)?;
    let c = compare(&a, &b, &cfg.compare.region_nodes)?;
    fs::create_dir_all(out)?;
    write_comparison(out, &c)?;
    write_json(
        &out.join("compare.json"),
        &json!({
            "a": pa,
            "b": pb,
            "region_mass_a": c.region_mass_a,
            "region_mass_b": c.region_mass_b,
            "toll_revenue_ratio": c.toll_revenue_ratio,
        }),
    )?;
    Ok(Outcome {
        converged: a.converged && b.converged,
    })
}

//! WebAssembly bindings for the static demo page. Every export takes plain
//! numbers or strings and returns a JSON document.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use mter::equilibrium::{solve_equilibrium, SolverConfig};
use mter::extensions::{cycle_start, solve_cycle, CycleProblem, CycleSolution};
use mter::fixtures;
use mter::metrics::{link_fulfillment, MetricsBundle};
use mter::network::{Link, Scenario, TravelTimeFn};
use mter::smdp::SmdpParams;

#[derive(Serialize)]
pub struct CurvePoint {
    pub f: f64,
    pub m: f64,
    pub fulfillment: f64,
}

#[derive(Serialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    pub asymptote: f64,
}

/// Matching probability and fulfillment against empty flow, log-spaced from
/// `lambda / 100` to `100 * lambda`.
pub fn matching_curve(lambda: f64, gamma: f64, points: usize) -> Result<Curve, String> {
    if lambda.is_nan() || lambda <= 0.0 || gamma.is_nan() || gamma <= 0.0 || points < 2 {
        return Err("need lambda > 0, gamma > 0 and at least two points".into());
    }
    let mut link = Link::new(1, 0, 1, TravelTimeFn::linear(0.1, 100.0), 1.0);
    link.arrival_rate = lambda;
    link.friction = gamma;
    let points = (0..points)
        .map(|k| {
            let f = lambda * 10f64.powf(-2.0 + 4.0 * k as f64 / (points - 1) as f64);
            CurvePoint {
                f,
                m: link.matching_at(f),
                fulfillment: link_fulfillment(&link, f),
            }
        })
        .collect();
    Ok(Curve {
        points,
        asymptote: gamma.min(1.0),
    })
}

#[derive(Serialize)]
pub struct CycleDemo {
    pub start: Vec<f64>,
    #[serde(flatten)]
    pub solution: CycleSolution,
}

pub fn cycle(free_flow: &[f64], capacity: f64, mass: f64, seed: u64) -> Result<CycleDemo, String> {
    let times = free_flow
        .iter()
        .map(|&t0| TravelTimeFn::linear(t0, capacity))
        .collect();
    let problem = CycleProblem::new(times, mass).map_err(|e| e.to_string())?;
    let start = cycle_start(free_flow.len(), mass, seed);
    let solution = solve_cycle(&problem, Some(&start), 1e-12, 100_000).map_err(|e| e.to_string())?;
    Ok(CycleDemo { start, solution })
}

#[derive(Serialize)]
pub struct LinkView {
    pub tail: u32,
    pub head: u32,
    pub empty: f64,
    pub hired: f64,
    pub time: f64,
    pub matching: f64,
}

#[derive(Serialize)]
pub struct EquilibriumView {
    pub converged: bool,
    pub iterations: usize,
    pub gap: f64,
    pub gaps: Vec<f64>,
    pub links: Vec<LinkView>,
    pub metrics: MetricsBundle,
}

fn scenario(name: &str, pool: f64) -> Result<Scenario, String> {
    let s = match name {
        "braess" => fixtures::braess(false, 1000.0, pool),
        "braess_bridge" => fixtures::braess(true, 1000.0, pool),
        "shuttle" => fixtures::shuttle(100.0, 0.8, pool),
        "random_small" => fixtures::random_small(7, 5, pool),
        other => return Err(format!("unknown network '{other}'")),
    };
    s.map_err(|e| e.to_string())
}

/// Single-start equilibrium on one of the small built-in networks.
pub fn equilibrium(name: &str, pool: f64) -> Result<EquilibriumView, String> {
    let s = scenario(name, pool)?;
    let cfg = SolverConfig {
        starts: 1,
        ..SolverConfig::default()
    };
    let r =
        solve_equilibrium(&s.network, &s.demand, &SmdpParams::default(), &cfg).map_err(|e| e.to_string())?;
    let mass = r.masses.link_mass(&s.network);
    let links = s
        .network
        .links()
        .iter()
        .enumerate()
        .map(|(a, l)| LinkView {
            tail: s.network.label(l.tail),
            head: s.network.label(l.head),
            empty: r.masses.x[a],
            hired: mass[a] - r.masses.x[a],
            time: r.env.t[a],
            matching: r.env.m[a],
        })
        .collect();
    Ok(EquilibriumView {
        converged: r.converged,
        iterations: r.iterations,
        gap: r.gap,
        gaps: r.trace.iter().map(|t| t.gap).collect(),
        links,
        metrics: r.metrics,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = matchingCurve)]
pub fn matching_curve_js(lambda: f64, gamma: f64, points: usize) -> Result<String, JsValue> {
    to_js(matching_curve(lambda, gamma, points))
}

#[wasm_bindgen(js_name = solveCycle)]
pub fn cycle_js(free_flow: Vec<f64>, capacity: f64, mass: f64, seed: u64) -> Result<String, JsValue> {
    to_js(cycle(&free_flow, capacity, mass, seed))
}

#[wasm_bindgen(js_name = solveEquilibrium)]
pub fn equilibrium_js(name: &str, pool: f64) -> Result<String, JsValue> {
    to_js(equilibrium(name, pool))
}

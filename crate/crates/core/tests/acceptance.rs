use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use sdcbf_core::controller::{extreme_input, impact, tilde_gamma, value_function, ImpactSense, LieTerms};
use sdcbf_core::dynamics::{AgentModel, InputSet, ReachBall, Sense};
use sdcbf_core::margins::{
    combine_nu, compute_nu_independent, compute_upsilon, offline_nu, EdgeSide, OfflineNuSpec, SafetyKind, UpsilonInput,
};
use sdcbf_core::sim::{check_invariants, run_setup, Setup};
use sdcbf_core::solvers::{solve_qp, MultistartOptions, QpProblem, QpStatus};
use sdcbf_core::stl::{parse_task, BarrierFunction, BarrierParams, Verdict};
use sdcbf_core::task_graph::{run_token_passing_with, DeliveryOrder, TaskGraph, Token};
use sdcbf_core::{ControllerTier, NuCache, ScenarioConfig, TaskOwner};

const TOKEN_TREES: usize = 500;
const TOKEN_MAX_AGENTS: usize = 50;
const TOKEN_SECONDS: f64 = 5.0;
const SEVEN_AGENT_ROUNDS: usize = 3;

const MARGIN_SLACK: f64 = 2e-3;
const MARGIN_SECONDS: f64 = 120.0;

const INVARIANCE_SCENARIOS: usize = 20;
const INVARIANCE_ATTEMPTS: usize = 60;
const BARRIER_TOL: f64 = 1e-6;
const INVARIANCE_SECONDS: f64 = 120.0;

const SCENARIO_SECONDS: f64 = 300.0;

const GAMMA_INSTANCES: usize = 1000;
const VALUE_TOL: f64 = 1e-9;

const HOMOGENEITY_SCALES: [f64; 3] = [0.1, 0.5, 2.0];
const HOMOGENEITY_GRADIENTS: usize = 1000;
const HOMOGENEITY_TOL: f64 = 1e-12;

const QP_INSTANCES: usize = 1000;
const QP_REL_TOL: f64 = 1e-6;
const QP_FEAS_TOL: f64 = 1e-8;
const INFEASIBILITY_INSTANCES: usize = 200;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Runs whose barriers and monitor verdicts are cross-checked by criterion 7.
#[derive(Default)]
struct Context {
    runs: Vec<MonitoredRun>,
}

struct MonitoredRun {
    name: String,
    barriers_nonnegative: bool,
    verdicts: BTreeMap<String, Verdict>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/seven_agents.json")
}

const SEVEN_AGENT_EDGES: [(usize, usize); 6] = [(1, 2), (1, 3), (2, 4), (2, 5), (3, 6), (3, 7)];

// Criterion 1

fn random_tree(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<(usize, usize)>) {
    let n = rng.gen_range(2..=TOKEN_MAX_AGENTS);
    let mut ids: Vec<usize> = (1..=n).collect();
    ids.shuffle(rng);
    let edges = (1..n).map(|k| (ids[rng.gen_range(0..k)], ids[k])).collect();
    (ids, edges)
}

fn token_rules_hold(graph: &TaskGraph, tokens: &BTreeMap<usize, BTreeMap<usize, Token>>) -> bool {
    let per_agent = graph.vertices.iter().all(|i| {
        let set = &tokens[i];
        set.len() == graph.degree(*i)
            && set.values().all(|t| *t != Token::Undefined)
            && set.values().filter(|t| **t == Token::Leader).count() <= 1
    });
    let per_edge = graph.edges.iter().all(|(i, j)| {
        matches!((tokens[i][j], tokens[j][i]), (Token::Leader, Token::Follower) | (Token::Follower, Token::Leader))
    });
    per_agent && per_edge
}

fn tokens(_: &mut Context) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let orders = [DeliveryOrder::BySender, DeliveryOrder::ReverseSender, DeliveryOrder::Rotated(1), DeliveryOrder::Rotated(3)];
    let mut failures = Vec::new();
    let mut worst_excess = i64::MIN;
    for k in 0..TOKEN_TREES {
        let (ids, edges) = random_tree(&mut rng);
        let graph = TaskGraph::from_edges(&ids, &edges).expect("random tree");
        let order = orders[k % orders.len()];
        match run_token_passing_with(&graph, order) {
            Ok(a) => {
                let sets = a.tokens.iter().map(|(i, s)| (*i, s.tokens.clone())).collect();
                let bound = graph.diameter.div_ceil(2) + 1;
                worst_excess = worst_excess.max(a.rounds_used as i64 - bound as i64);
                if !token_rules_hold(&graph, &sets) || a.check(&graph).is_err() || a.rounds_used > bound {
                    failures.push(format!("tree {k} (n = {}, rounds {}, bound {bound})", ids.len(), a.rounds_used));
                }
            }
            Err(e) => failures.push(format!("tree {k}: {e}")),
        }
    }
    let graph = TaskGraph::from_edges(&[1, 2, 3, 4, 5, 6, 7], &SEVEN_AGENT_EDGES).expect("seven-agent tree");
    let seven = run_token_passing_with(&graph, DeliveryOrder::BySender).expect("seven-agent tokens");
    let sets = seven.tokens.iter().map(|(i, s)| (*i, s.tokens.clone())).collect();
    let seven_ok = token_rules_hold(&graph, &sets) && graph.diameter == 4 && seven.rounds_used <= SEVEN_AGENT_ROUNDS;
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && seven_ok && secs < TOKEN_SECONDS;
    Outcome::new(
        pass,
        format!(
            "{} trees, {} failures{}, rounds minus bound <= {worst_excess}, seven-agent tree {} rounds (diameter {})",
            TOKEN_TREES,
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default(),
            seven.rounds_used,
            graph.diameter
        ),
    )
}

// Criterion 2

fn min_over_set(set: &InputSet, c: &[f64]) -> f64 {
    match set.vertices() {
        Some(vs) => vs.iter().map(|v| dot(c, v)).fold(f64::INFINITY, f64::min),
        None => -set.max_norm() * norm(c),
    }
}

/// Position rows of the input matrix: identity for a single integrator,
/// the look-ahead map for a differential drive with heading `theta`.
fn position_input(look_ahead: Option<f64>, theta: f64, d: usize) -> Vec<Vec<f64>> {
    match look_ahead {
        None => (0..d).map(|r| (0..d).map(|c| if r == c { 1.0 } else { 0.0 }).collect()).collect(),
        Some(l) => {
            let (s, c) = theta.sin_cos();
            vec![vec![c, l * s], vec![-s, l * c]]
        }
    }
}

fn row_times(grad: &[f64], g: &[Vec<f64>]) -> Vec<f64> {
    (0..g[0].len()).map(|c| grad.iter().zip(g).map(|(a, row)| a * row[c]).sum()).collect()
}

fn disk_grid(center: &[f64], radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let d = center.len();
    let axis: Vec<f64> = (0..per_axis).map(|k| -radius + 2.0 * radius * k as f64 / (per_axis - 1) as f64).collect();
    let mut pts = vec![Vec::new()];
    for _ in 0..d {
        pts = pts.into_iter().flat_map(|p: Vec<f64>| axis.iter().map(move |a| [p.clone(), vec![*a]].concat())).collect();
    }
    pts.into_iter()
        .filter(|o| norm(o) <= radius * (1.0 + 1e-12))
        .map(|o| o.iter().zip(center).map(|(a, c)| a + c).collect())
        .collect()
}

fn interval_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

struct Agent {
    model: AgentModel,
    look_ahead: Option<f64>,
    set: InputSet,
    speed: f64,
}

fn random_agent(rng: &mut ChaCha8Rng, id: usize, drive: bool) -> Agent {
    if drive {
        let (v, w, l) = (rng.gen_range(0.3..1.0), rng.gen_range(0.1..0.6), rng.gen_range(0.05..0.3));
        let set = InputSet::symmetric_box(&[v, w]).unwrap();
        let model = AgentModel::differential_drive(id, l, set.clone()).unwrap();
        Agent { model, look_ahead: Some(l), set, speed: (v * v + w * w * (1.0 + l * l)).sqrt() }
    } else {
        let r = rng.gen_range(0.5..1.5);
        let set = InputSet::ball(2, r).unwrap();
        let model = AgentModel::single_integrator(id, 2, set.clone()).unwrap();
        Agent { model, look_ahead: None, set, speed: r }
    }
}

fn random_state(rng: &mut ChaCha8Rng, agent: &Agent) -> Vec<f64> {
    let mut x = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
    if agent.look_ahead.is_some() {
        x.push(rng.gen_range(-3.0..3.0));
    }
    x
}

fn random_ball_task(rng: &mut ChaCha8Rng, arg: &str) -> (String, f64) {
    let a = rng.gen_range(1..6) as f64;
    let b = a + rng.gen_range(1..4) as f64;
    let op = if rng.gen_bool(0.5) { "F" } else { "G" };
    let (cx, cy, r) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.5..2.0));
    (format!("{op}[{a},{b}] ball({arg}; c=({cx:.3},{cy:.3}), r={r:.3})"), b)
}

fn barrier_params(rng: &mut ChaCha8Rng, dt: f64) -> BarrierParams {
    BarrierParams { lambda: rng.gen_range(0.3..2.0), dt, ..BarrierParams::default() }
}

/// Grid minimum of the one-step barrier variation of a single agent.
fn independent_oracle(b: &BarrierFunction, agent: &Agent, x: &[f64], t_k: f64, dt: f64) -> f64 {
    let rho = dt * agent.speed;
    let z0 = &x[..2];
    let (b0, grad0, db0) = b.eval(z0, t_k);
    let lg0 = row_times(&grad0, &position_input(agent.look_ahead, x.get(2).copied().unwrap_or(0.0), 2));
    let per_axis = if x.len() == 2 { 31 } else { 15 };
    let mut best = f64::INFINITY;
    for xb in disk_grid(x, rho, per_axis) {
        for tau in interval_grid(t_k, t_k + dt * (1.0 - 1e-9), 6) {
            let (b1, grad1, db1) = b.eval(&xb[..2], tau);
            let lg1 = row_times(&grad1, &position_input(agent.look_ahead, xb.get(2).copied().unwrap_or(0.0), 2));
            let c: Vec<f64> = lg0.iter().zip(&lg1).map(|(a, c)| a - c).collect();
            best = best.min(min_over_set(&agent.set, &c) + db0 - db1 + b.lambda * (b0 - b1));
        }
    }
    best
}

/// Grid minimum of the joint one-step variation of an edge barrier over the
/// relative reach ball and both headings.
fn edge_oracle(b: &BarrierFunction, ai: &Agent, xi: &[f64], aj: &Agent, xj: &[f64], t_k: f64, dt: f64) -> f64 {
    let (rho_i, rho_j) = (dt * ai.speed, dt * aj.speed);
    let z0: Vec<f64> = (0..2).map(|k| xi[k] - xj[k]).collect();
    let (b0, grad0, db0) = b.eval(&z0, t_k);
    let heading = |x: &[f64], rho: f64| match x.get(2) {
        Some(&th) => interval_grid(th - rho, th + rho, 7),
        None => vec![0.0],
    };
    let lg = |a: &Agent, th: f64, grad: &[f64]| row_times(grad, &position_input(a.look_ahead, th, 2));
    let th_i0 = xi.get(2).copied().unwrap_or(0.0);
    let th_j0 = xj.get(2).copied().unwrap_or(0.0);
    let mut best = f64::INFINITY;
    for zb in disk_grid(&z0, rho_i + rho_j, 15) {
        for tau in interval_grid(t_k, t_k + dt * (1.0 - 1e-9), 5) {
            let (b1, grad1, db1) = b.eval(&zb, tau);
            let common = b.lambda * (b0 - b1) + db0 - db1;
            let term_i = heading(xi, rho_i)
                .into_iter()
                .map(|th| {
                    let c: Vec<f64> = lg(ai, th_i0, &grad0).iter().zip(lg(ai, th, &grad1)).map(|(a, c)| a - c).collect();
                    min_over_set(&ai.set, &c)
                })
                .fold(f64::INFINITY, f64::min);
            let term_j = heading(xj, rho_j)
                .into_iter()
                .map(|th| {
                    let c: Vec<f64> = lg(aj, th_j0, &grad0).iter().zip(lg(aj, th, &grad1)).map(|(a, c)| c - a).collect();
                    min_over_set(&aj.set, &c)
                })
                .fold(f64::INFINITY, f64::min);
            best = best.min(term_i + term_j + common);
        }
    }
    best
}

fn safety_value(kind: SafetyKind, radius: f64, p: &[f64]) -> (f64, Vec<f64>) {
    let sq = dot(p, p);
    match kind {
        SafetyKind::Collision => (sq - radius * radius, p.iter().map(|a| 2.0 * a).collect()),
        SafetyKind::Communication => (radius * radius - sq, p.iter().map(|a| -2.0 * a).collect()),
    }
}

/// Grid minimum of the offline safety program: relative position in the
/// domain disk, a reach offset, and a heading with its drift for the second agent.
#[allow(clippy::too_many_arguments)]
fn offline_oracle(kind: SafetyKind, radius: f64, domain: f64, lambda: f64, ai: &Agent, aj: &Agent, dt: f64) -> f64 {
    let (rho_i, rho_j) = (dt * ai.speed, dt * aj.speed);
    let headings: Vec<(f64, f64)> = match aj.look_ahead {
        Some(_) => interval_grid(-std::f64::consts::PI, std::f64::consts::PI, 13)
            .into_iter()
            .flat_map(|th| interval_grid(-rho_j, rho_j, 5).into_iter().map(move |s| (th, th + s)))
            .collect(),
        None => vec![(0.0, 0.0)],
    };
    let offsets = disk_grid(&[0.0, 0.0], rho_i + rho_j, 9);
    let mut best = f64::INFINITY;
    for p in disk_grid(&[0.0, 0.0], domain, if aj.look_ahead.is_some() { 17 } else { 31 }) {
        let (h0, g0) = safety_value(kind, radius, &p);
        for o in &offsets {
            let pb = [p[0] + o[0], p[1] + o[1]];
            let (h1, g1) = safety_value(kind, radius, &pb);
            let ci: Vec<f64> = g0.iter().zip(&g1).map(|(a, b)| a - b).collect();
            let term_i = min_over_set(&ai.set, &ci);
            for &(th0, th1) in &headings {
                let cj: Vec<f64> = row_times(&g0, &position_input(aj.look_ahead, th0, 2))
                    .iter()
                    .zip(row_times(&g1, &position_input(aj.look_ahead, th1, 2)))
                    .map(|(a, b)| b - a)
                    .collect();
                best = best.min(term_i + min_over_set(&aj.set, &cj) + lambda * (h0 - h1));
            }
        }
    }
    best
}

fn margins(_: &mut Context) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = MultistartOptions::default();
    let dt = 0.1;
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    let mut check = |what: &str, k: usize, nu: f64, oracle: f64| {
        worst = worst.max(nu - oracle);
        if !(nu <= oracle + MARGIN_SLACK) {
            failures.push(format!("{what} {k}: nu {nu:.5} vs grid {oracle:.5}"));
        }
    };
    for k in 0..20 {
        let agent = random_agent(&mut rng, 1, k % 2 == 1);
        let x = random_state(&mut rng, &agent);
        let (src, end) = random_ball_task(&mut rng, "x1");
        let task = parse_task(&src, 2).unwrap();
        let b = BarrierFunction::build(&task, &x[..2], 0.0, &barrier_params(&mut rng, dt)).unwrap();
        let t_k = (rng.gen_range(0.0..end) / dt).floor() * dt;
        let nu = compute_nu_independent(&b, &agent.model, &x, t_k, dt, &opts).unwrap();
        check("independent", k, nu, independent_oracle(&b, &agent, &x, t_k, dt));
    }
    for k in 0..15 {
        let ai = random_agent(&mut rng, 1, k % 3 == 1);
        let aj = random_agent(&mut rng, 2, k % 3 == 2);
        let xi = random_state(&mut rng, &ai);
        let xj = random_state(&mut rng, &aj);
        let z0 = vec![xi[0] - xj[0], xi[1] - xj[1]];
        let (src, end) = random_ball_task(&mut rng, "e12");
        let task = parse_task(&src, 2).unwrap();
        let b = BarrierFunction::build(&task, &z0, 0.0, &barrier_params(&mut rng, dt)).unwrap();
        let t_k = (rng.gen_range(0.0..end) / dt).floor() * dt;
        let (rho_i, rho_j) = (dt * ai.speed, dt * aj.speed);
        let relative = ReachBall::relative(z0.clone(), rho_i, rho_j);
        let share = |side, agent: &Agent, x: &[f64], rho| {
            let input = UpsilonInput { barrier: &b, side, model: &agent.model, state: x, self_radius: rho, relative: &relative, t_k, dt };
            compute_upsilon(&input, &opts).unwrap()
        };
        let nu = combine_nu(share(EdgeSide::First, &ai, &xi, rho_i), share(EdgeSide::Second, &aj, &xj, rho_j));
        check("edge", k, nu, edge_oracle(&b, &ai, &xi, &aj, &xj, t_k, dt));
    }
    for k in 0..15 {
        let ai = random_agent(&mut rng, 1, false);
        let aj = random_agent(&mut rng, 2, k % 3 == 2);
        let (xi, xj) = (random_state(&mut rng, &ai), random_state(&mut rng, &aj));
        let kind = if k % 2 == 0 { SafetyKind::Collision } else { SafetyKind::Communication };
        let radius = rng.gen_range(0.3..1.5);
        let domain = match kind {
            SafetyKind::Collision => rng.gen_range(1.0..3.0),
            SafetyKind::Communication => radius,
        };
        let lambda = rng.gen_range(0.5..3.0);
        let spec = OfflineNuSpec {
            kind,
            model_i: &ai.model,
            model_j: &aj.model,
            state_i: &xi,
            state_j: &xj,
            radius,
            domain_radius: domain,
            dt,
            lambda,
        };
        let nu = offline_nu(&spec).unwrap();
        check("offline", k, nu, offline_oracle(kind, radius, domain, lambda, &ai, &aj, dt));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        failures.is_empty() && secs < MARGIN_SECONDS,
        format!(
            "50 instances, {} above grid + {MARGIN_SLACK:e}{}, max nu - grid = {worst:.2e}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

// Criteria 3 and 7

fn random_scenario(rng: &mut ChaCha8Rng, k: usize) -> ScenarioConfig {
    let n = rng.gen_range(2..=3);
    let mut pos: Vec<[f64; 2]> = vec![[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]];
    let edges: Vec<(usize, usize)> = if n == 2 || rng.gen_bool(0.5) { vec![(1, 2), (2, 3)] } else { vec![(1, 2), (1, 3)] };
    let edges: Vec<(usize, usize)> = edges.into_iter().filter(|e| e.1 <= n).collect();
    for &(parent, _) in &edges {
        loop {
            let (r, a): (f64, f64) = (rng.gen_range(2.5..4.0), rng.gen_range(0.0..std::f64::consts::TAU));
            let p = pos[parent - 1];
            let q = [p[0] + r * a.cos(), p[1] + r * a.sin()];
            if pos.iter().all(|o| ((o[0] - q[0]).powi(2) + (o[1] - q[1]).powi(2)).sqrt() > 2.5) {
                pos.push(q);
                break;
            }
        }
    }
    let agents: Vec<_> = pos
        .iter()
        .enumerate()
        .map(|(i, p)| json!({ "id": i + 1, "model": { "kind": "single_integrator" }, "input": { "ball": 1.0 }, "initial": p, "collision_radius": 0.2 }))
        .collect();
    let tasks: Vec<String> = edges
        .iter()
        .map(|&(i, j)| {
            let rel = [pos[i - 1][0] - pos[j - 1][0], pos[i - 1][1] - pos[j - 1][1]];
            let c = loop {
                let (r, a): (f64, f64) = (rng.gen_range(0.5..1.5), rng.gen_range(0.0..std::f64::consts::TAU));
                let c = [rel[0] + r * a.cos(), rel[1] + r * a.sin()];
                if norm(&c) >= 2.0 {
                    break c;
                }
            };
            let start = rng.gen_range(8..11) as f64;
            let end = start + rng.gen_range(2..4) as f64;
            let op = if rng.gen_bool(0.5) { "F" } else { "G" };
            format!("{op}[{start},{end}] ball(e{i}{j}; c=({:.3},{:.3}), r=0.5)", c[0], c[1])
        })
        .collect();
    let cfg = json!({
        "name": format!("random{k}"),
        "dt": 0.1,
        "horizon": 14.0,
        "comm_radius": 8.0,
        "sensing_radius": 1.0,
        "margin": { "seeds": 9, "iterations": 60 },
        "barrier": { "margin_fraction": 1.0 },
        "agents": agents,
        "tasks": tasks,
    });
    ScenarioConfig::from_json(&cfg.to_string()).expect("random scenario")
}

fn invariance(ctx: &mut Context) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cache = NuCache::in_memory();
    let (mut tier_a_runs, mut attempts, mut worst) = (0, 0, f64::INFINITY);
    let mut failures = Vec::new();
    while tier_a_runs < INVARIANCE_SCENARIOS && attempts < INVARIANCE_ATTEMPTS {
        let cfg = random_scenario(&mut rng, attempts);
        attempts += 1;
        let setup = match Setup::with_cache(&cfg, &mut cache) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("{}: setup {e}", cfg.name));
                continue;
            }
        };
        let run = match run_setup(setup.clone()) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("{}: run {e}", cfg.name));
                continue;
            }
        };
        let report = check_invariants(&run.trace, &setup).expect("report");
        ctx.runs.push(MonitoredRun {
            name: cfg.name.clone(),
            barriers_nonnegative: report.task_barriers_nonnegative(&setup) && run.trace.halted.is_none(),
            verdicts: report.verdicts.iter().map(|(l, v)| (l.clone(), v.overall)).collect(),
        });
        let tier_a = run.trace.steps.iter().all(|s| s.agents.values().all(|a| a.tier == ControllerTier::A));
        if !tier_a || run.trace.halted.is_some() {
            continue;
        }
        tier_a_runs += 1;
        for b in setup.edge_barriers.values() {
            let m = report.min_of(&b.label).unwrap_or(f64::NEG_INFINITY);
            worst = worst.min(m);
            if m < -BARRIER_TOL {
                failures.push(format!("{}: {} dips to {m:.3e}", cfg.name, b.label));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        failures.is_empty() && tier_a_runs == INVARIANCE_SCENARIOS && secs < INVARIANCE_SECONDS,
        format!(
            "{tier_a_runs} tier-A runs of {attempts} drawn, {} failures{}, min edge barrier {worst:.3e}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn seven_agents(ctx: &mut Context) -> Outcome {
    let start = Instant::now();
    let cfg = ScenarioConfig::load(scenario_path()).expect("scenario file");
    let setup = Setup::new(&cfg).expect("setup");
    let run = run_setup(setup.clone()).expect("run");
    let report = check_invariants(&run.trace, &setup).expect("report");
    let secs = start.elapsed().as_secs_f64();
    ctx.runs.push(MonitoredRun {
        name: cfg.name.clone(),
        barriers_nonnegative: report.task_barriers_nonnegative(&setup) && run.trace.halted.is_none(),
        verdicts: report.verdicts.iter().map(|(l, v)| (l.clone(), v.overall)).collect(),
    });

    let min_of = |l: &str| report.min_of(l).unwrap_or(f64::NEG_INFINITY);
    let collaborative = setup.edge_barriers.values().map(|b| min_of(&b.label)).fold(f64::INFINITY, f64::min);
    let comm = SEVEN_AGENT_EDGES.iter().map(|(i, j)| min_of(&format!("comm({i},{j})"))).fold(f64::INFINITY, f64::min);
    let collision = report
        .minima
        .iter()
        .filter(|(l, _)| l.starts_with("coll("))
        .map(|(_, m)| m.value)
        .fold(f64::INFINITY, f64::min);
    let gammas: Vec<f64> = run.trace.steps.iter().flat_map(|s| s.agents.values().map(|a| a.gamma)).collect();
    let gamma_range = gammas.iter().all(|g| *g > 0.0 && *g <= 1.0);
    let gamma_dip = gammas.iter().any(|g| *g < 1.0);
    let own = setup.tasks.iter().find(|t| t.owner == TaskOwner::Independent(1)).map(|t| t.label.clone()).unwrap_or_default();
    let own_verdict = report.verdicts.get(&own).map(|v| v.overall);
    let own_ok = matches!(own_verdict, Some(Verdict::Satisfied | Verdict::SatisfiedLate { .. }));
    let full = run.trace.halted.is_none() && (run.trace.final_time - cfg.horizon).abs() < 1e-9;
    let mean_ms = 1e3 * run.reduction_seconds.iter().sum::<f64>() / run.reduction_seconds.len().max(1) as f64;
    let gamma_min: Vec<String> = report.gamma_min.iter().map(|(i, g)| format!("{i}:{g:.3}")).collect();

    let pass = full
        && collaborative >= -BARRIER_TOL
        && comm >= -BARRIER_TOL
        && collision >= -BARRIER_TOL
        && gamma_range
        && gamma_dip
        && own_ok
        && secs < SCENARIO_SECONDS;
    Outcome::new(
        pass,
        format!(
            "t = {:.1} s, min collaborative {collaborative:.3e}, min comm {comm:.3e}, min collision {collision:.3e}, \
             gamma min [{}], agent 1 task {own_verdict:?}, mean reduction {mean_ms:.3} ms",
            run.trace.final_time,
            gamma_min.join(" ")
        ),
    )
}

fn monitor_agreement(ctx: &mut Context) -> Outcome {
    let checked: Vec<&MonitoredRun> = ctx.runs.iter().filter(|r| r.barriers_nonnegative).collect();
    let disagreements: Vec<String> = checked
        .iter()
        .flat_map(|r| {
            r.verdicts.iter().filter(|(_, v)| !v.is_satisfied()).map(move |(l, v)| format!("{}: {l} {v:?}", r.name))
        })
        .collect();
    Outcome::new(
        !checked.is_empty() && disagreements.is_empty(),
        format!(
            "{} of {} runs with nonnegative task barriers, {} disagreements{}",
            checked.len(),
            ctx.runs.len(),
            disagreements.len(),
            disagreements.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

// Criteria 5 and 6

fn random_input_set(rng: &mut ChaCha8Rng) -> InputSet {
    let dim = rng.gen_range(1..=3);
    match rng.gen_range(0..3) {
        0 => InputSet::ball(dim, rng.gen_range(0.1..2.0)).unwrap(),
        1 => InputSet::symmetric_box(&(0..dim).map(|_| rng.gen_range(0.1..2.0)).collect::<Vec<_>>()).unwrap(),
        _ => {
            let lo: Vec<f64> = (0..dim).map(|_| -rng.gen_range(0.1..2.0)).collect();
            let hi: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.1..2.0)).collect();
            InputSet::boxed(lo, hi).unwrap()
        }
    }
}

fn random_lie(rng: &mut ChaCha8Rng, dim: usize) -> LieTerms {
    LieTerms { lf: normal(rng), lg: normal_vec(rng, dim) }
}

fn gamma_tilde(_: &mut Context) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut case_one, mut case_one_bad, mut failures) = (f64::INFINITY, 0, 0, 0);
    for k in 0..GAMMA_INSTANCES {
        let (set_i, set_j) = (random_input_set(&mut rng), random_input_set(&mut rng));
        let lie_i = random_lie(&mut rng, set_i.dim());
        let lie_j = random_lie(&mut rng, set_j.dim());
        let gamma_i = rng.gen_range(0.05..=1.0);
        let leader_best = impact(&lie_i, &set_i, gamma_i, ImpactSense::Best);
        let follower_dir = impact(&lie_j, &set_j, 1.0, ImpactSense::Worst) - lie_j.lf;
        let base = -(leader_best + lie_j.lf);
        // Every third instance has room for the follower's full input set.
        let zeta = if k % 3 == 0 {
            base - follower_dir + rng.gen_range(0.0..1.0)
        } else {
            base + rng.gen_range(1e-6..1.0) * (-follower_dir).max(1e-3)
        };
        let g = tilde_gamma(leader_best, zeta, lie_j.lf, follower_dir);
        if !g.assumption_ok || !(g.value > 0.0 && g.value <= 1.0) {
            failures += 1;
            continue;
        }
        let follower_worst = impact(&lie_j, &set_j, g.value, ImpactSense::Worst);
        let v = value_function(leader_best, follower_worst, zeta);
        worst = worst.min(v);
        if v < -VALUE_TOL {
            failures += 1;
        }
        if leader_best + zeta + lie_j.lf + follower_dir >= 0.0 {
            case_one += 1;
            if g.value != 1.0 {
                case_one_bad += 1;
            }
        }
    }
    Outcome::new(
        failures == 0 && case_one_bad == 0 && case_one > 0,
        format!("{GAMMA_INSTANCES} instances, min value {worst:.3e}, {failures} failures, {case_one} full-set instances ({case_one_bad} not exactly 1)"),
    )
}

fn homogeneity(_: &mut Context) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..HOMOGENEITY_GRADIENTS {
        let set = random_input_set(&mut rng);
        let lie = random_lie(&mut rng, set.dim());
        let sense = if rng.gen_bool(0.5) { Sense::Min } else { Sense::Max };
        let impact_sense = if sense == Sense::Min { ImpactSense::Worst } else { ImpactSense::Best };
        let base = extreme_input(&set, &lie.lg, sense);
        let base_inc = impact(&lie, &set, 1.0, impact_sense) - lie.lf;
        for alpha in HOMOGENEITY_SCALES {
            let scaled = extreme_input(&set.scaled(alpha), &lie.lg, sense);
            for (s, b) in scaled.iter().zip(&base) {
                worst = worst.max((s - alpha * b).abs() / (1.0 + (alpha * b).abs()));
            }
            let inc = impact(&lie, &set, alpha, impact_sense) - lie.lf;
            worst = worst.max((inc - alpha * base_inc).abs() / (1.0 + (alpha * base_inc).abs()));
            let direct = dot(&lie.lg, &scaled);
            worst = worst.max((direct - alpha * base_inc).abs() / (1.0 + (alpha * base_inc).abs()));
        }
    }
    Outcome::new(
        worst <= HOMOGENEITY_TOL,
        format!("{HOMOGENEITY_GRADIENTS} gradients x {:?}, max relative deviation {worst:.2e}", HOMOGENEITY_SCALES),
    )
}

// Criterion 8

/// Lower bound on the optimal value from projected-gradient ascent on the
/// Lagrangian dual. Stops once the bound reaches `target`.
fn dual_bound(p: &QpProblem, target: f64) -> f64 {
    let (d, m) = (p.dim(), p.rhs.len());
    let ball = p.ball.clone();
    let mask = DVector::from_fn(d, |i, _| if ball.as_ref().is_some_and(|b| b.indices.contains(&i)) { 1.0 } else { 0.0 });
    let nvar = m + usize::from(ball.is_some());
    let eval = |z: &DVector<f64>| -> (f64, DVector<f64>) {
        let y = z.rows(0, m);
        let mu = if ball.is_some() { z[m] } else { 0.0 };
        let h = &p.hessian + DMatrix::from_diagonal(&(&mask * mu));
        let rhs = -(&p.linear - p.rows.transpose() * y);
        let x = h.clone().cholesky().expect("positive definite").solve(&rhs);
        let xm = x.component_mul(&mask);
        let r2 = ball.as_ref().map_or(0.0, |b| b.radius * b.radius);
        let value = 0.5 * x.dot(&(&p.hessian * &x)) + p.linear.dot(&x) - y.dot(&(&p.rows * &x - &p.rhs))
            + 0.5 * mu * (xm.dot(&xm) - r2);
        let mut grad = DVector::zeros(nvar);
        grad.rows_mut(0, m).copy_from(&(&p.rhs - &p.rows * &x));
        if ball.is_some() {
            grad[m] = 0.5 * (xm.dot(&xm) - r2);
        }
        (value, grad)
    };
    let project = |z: DVector<f64>| z.map(|v| v.max(0.0));
    let ascent = |from: &DVector<f64>, step: &mut f64| -> Option<(DVector<f64>, f64)> {
        let (f0, g0) = eval(from);
        for _ in 0..60 {
            let cand = project(from + &g0 * *step);
            let (fc, _) = eval(&cand);
            let diff = &cand - from;
            if fc >= f0 + g0.dot(&diff) - diff.dot(&diff) / (2.0 * *step) {
                return Some((cand, fc));
            }
            *step *= 0.5;
        }
        None
    };
    let mut z = DVector::zeros(nvar);
    let mut best = eval(&z).0;
    if nvar == 0 {
        return best;
    }
    let (mut prev, mut momentum, mut step) = (z.clone(), 1.0f64, 1.0);
    for _ in 0..20_000 {
        if best >= target {
            break;
        }
        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let w = project(&z + (&z - &prev) * ((momentum - 1.0) / next));
        let Some((mut cand, mut fc)) = ascent(&w, &mut step) else { break };
        momentum = next;
        if fc < best {
            // Restart from the last iterate without momentum.
            momentum = 1.0;
            let Some((c, f)) = ascent(&z, &mut step) else { break };
            (cand, fc) = (c, f);
        }
        prev = std::mem::replace(&mut z, cand);
        best = best.max(fc);
        step *= 1.5;
    }
    best
}

fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let d = rng.gen_range(1..=5);
    let m = rng.gen_range(0..=8);
    let mh = DMatrix::from_fn(d, d, |_, _| normal(rng));
    let hessian = &mh * mh.transpose() + DMatrix::identity(d, d) * rng.gen_range(0.2..1.0);
    let linear = DVector::from_fn(d, |_, _| 2.0 * normal(rng));
    let rows = DMatrix::from_fn(m, d, |_, _| normal(rng));
    let x0 = DVector::from_fn(d, |_, _| normal(rng));
    let rhs = &rows * &x0 - DVector::from_fn(m, |_, _| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..2.0) });
    let p = QpProblem::new(hessian, linear, rows, rhs);
    if rng.gen_bool(0.3) {
        let idx: Vec<usize> = (0..d).filter(|_| rng.gen_bool(0.7)).collect();
        let r = idx.iter().map(|&i| x0[i] * x0[i]).sum::<f64>().sqrt() + rng.gen_range(0.05..1.0);
        if !idx.is_empty() {
            return p.with_ball(idx, r);
        }
    }
    p
}

/// Rows whose nonnegative combination vanishes, with right-hand side pushed
/// by `gap` along the combination: infeasible for `gap > 0`.
fn farkas_instance(rng: &mut ChaCha8Rng, infeasible: bool) -> QpProblem {
    let d = rng.gen_range(1..=4);
    let m = rng.gen_range(2..=6);
    let gap = 10f64.powf(rng.gen_range(-3.0..0.0));
    let y: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..2.0)).collect();
    let mut rows = DMatrix::from_fn(m, d, |_, _| normal(rng));
    let mut sum = DVector::zeros(d);
    for k in 0..m - 1 {
        sum += rows.row(k).transpose() * y[k];
    }
    rows.set_row(m - 1, &(-sum / y[m - 1]).transpose());
    let x0 = DVector::from_fn(d, |_, _| normal(rng));
    let mut rhs = &rows * &x0;
    let hessian = DMatrix::identity(d, d);
    let linear = DVector::from_fn(d, |_, _| normal(rng));
    if infeasible {
        // A' y = 0 and b' y = gap > 0 certifies emptiness.
        let k = rng.gen_range(0..m);
        rhs[k] += gap / y[k];
    } else {
        rhs -= DVector::from_fn(m, |_, _| rng.gen_range(0.0..gap));
    }
    QpProblem::new(hessian, linear, rows, rhs)
}

/// One row against a ball: `a' x >= r |a| + gap` misses the ball for `gap > 0`.
fn ball_instance(rng: &mut ChaCha8Rng, infeasible: bool) -> QpProblem {
    let d = rng.gen_range(1..=4);
    let r = rng.gen_range(0.1..2.0);
    let gap = 10f64.powf(rng.gen_range(-3.0..-0.5));
    let a = DVector::from_fn(d, |_, _| normal(rng));
    let bound = r * a.norm() + if infeasible { gap } else { -gap };
    let rows = DMatrix::from_row_slice(1, d, a.as_slice());
    QpProblem::new(DMatrix::identity(d, d), DVector::from_fn(d, |_, _| normal(rng)), rows, DVector::from_element(1, bound))
        .with_ball((0..d).collect(), r)
}

fn qp(_: &mut Context) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst, mut failures) = (0.0f64, Vec::new());
    for k in 0..QP_INSTANCES {
        let p = random_qp(&mut rng);
        let r = match solve_qp(&p) {
            Ok(r) if r.status == QpStatus::Optimal => r,
            Ok(r) => {
                failures.push(format!("qp {k}: {:?}", r.status));
                continue;
            }
            Err(e) => {
                failures.push(format!("qp {k}: {e}"));
                continue;
            }
        };
        let x = &r.solution;
        let obj = 0.5 * x.dot(&(&p.hessian * x)) + p.linear.dot(x);
        let viol = p.max_violation(x);
        let scale = 1.0 + obj.abs();
        let bound = dual_bound(&p, obj - 0.1 * QP_REL_TOL * scale);
        let rel = (obj - bound).abs() / scale;
        worst = worst.max(rel);
        if rel > QP_REL_TOL || viol > QP_FEAS_TOL {
            failures.push(format!("qp {k}: objective {obj:.9} dual {bound:.9} violation {viol:.1e}"));
        }
    }
    let (mut wrong, mut checked) = (Vec::new(), 0);
    for k in 0..INFEASIBILITY_INSTANCES {
        let infeasible = k % 2 == 0;
        let p = if k % 4 < 2 { farkas_instance(&mut rng, infeasible) } else { ball_instance(&mut rng, infeasible) };
        checked += 1;
        match solve_qp(&p) {
            Ok(r) if (r.status == QpStatus::Infeasible) == infeasible => {}
            Ok(r) => wrong.push(format!("instance {k}: {:?}, expected infeasible = {infeasible}", r.status)),
            Err(e) => wrong.push(format!("instance {k}: {e}")),
        }
    }
    Outcome::new(
        failures.is_empty() && wrong.is_empty(),
        format!(
            "{QP_INSTANCES} QPs, max relative gap to dual bound {worst:.2e}, {} mismatches{}; {checked} feasibility instances, {} misclassified{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default(),
            wrong.len(),
            wrong.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

type Criterion = fn(&mut Context) -> Outcome;

fn main() -> ExitCode {
    let criteria: [(usize, &str, Criterion); 8] = [
        (1, "token passing", tokens),
        (2, "margin under-approximation", margins),
        (3, "forward invariance", invariance),
        (4, "seven-agent scenario", seven_agents),
        (5, "follower factor", gamma_tilde),
        (6, "homogeneity", homogeneity),
        (8, "qp solver", qp),
        (7, "barrier and monitor agreement", monitor_agreement),
    ];
    let mut ctx = Context::default();
    let mut results = BTreeMap::new();
    for (n, name, run) in criteria {
        let start = Instant::now();
        let o = run(&mut ctx);
        let line = format!(
            "{} criterion {n} ({name}): {} [{:.2} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        results.insert(n, (o.pass, line));
    }
    for (_, line) in results.values() {
        println!("{line}");
    }
    let failed = results.values().filter(|(p, _)| !p).count();
    println!("acceptance: {} of {} criteria pass", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

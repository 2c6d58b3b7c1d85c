use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::controller::{
    run_control_reduction, AgentQp, ControllerError, ControllerTier, EdgeData, LieTerms, QpRow, ReductionProblem, SideTerms,
};
use crate::dynamics::{AgentModel, InputSet, ReachBall};
use crate::margins::{compute_nu_independent, compute_upsilon, EdgeSide, NuCache, OfflineNuSpec, SafetyKind, UpsilonInput};
use crate::solvers::MultistartOptions;
use crate::stl::{BarrierFunction, FormulaVerdict, StlTask, TaskOwner};
use crate::task_graph::{run_token_passing, TaskGraph, TokenAssignment};

use super::config::ScenarioConfig;
use super::invariants::task_verdicts;
use super::SimError;

const AUDIT_SPACING: f64 = 1.0;

pub fn comm_label(i: usize, j: usize) -> String {
    format!("comm({i},{j})")
}

pub fn collision_label(i: usize, j: usize) -> String {
    format!("coll({i},{j})")
}

pub fn obstacle_label(i: usize, o: usize) -> String {
    format!("obs({i},{o})")
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Everything derived from a scenario before the first step.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: ScenarioConfig,
    pub models: BTreeMap<usize, AgentModel>,
    pub collision_radii: BTreeMap<usize, f64>,
    pub tasks: Vec<StlTask>,
    pub graph: TaskGraph,
    pub tokens: TokenAssignment,
    pub edge_barriers: BTreeMap<(usize, usize), BarrierFunction>,
    pub independent: BTreeMap<usize, BarrierFunction>,
    pub nu_comm: BTreeMap<(usize, usize), f64>,
    pub nu_collision: BTreeMap<(usize, usize), f64>,
    pub nu_obstacle: BTreeMap<(usize, usize), f64>,
    pub position_dim: usize,
}

impl Setup {
    pub fn new(config: &ScenarioConfig) -> Result<Self, SimError> {
        let mut cache = match &config.nu_cache {
            Some(p) => NuCache::open(p)?,
            None => NuCache::in_memory(),
        };
        let setup = Self::with_cache(config, &mut cache)?;
        cache.save()?;
        Ok(setup)
    }

    pub fn with_cache(config: &ScenarioConfig, cache: &mut NuCache) -> Result<Self, SimError> {
        Self::build(config, Some(cache))
    }

    /// Barriers and graph only: no parameter audit and no offline constants.
    /// Enough to re-evaluate a recorded trace.
    pub fn for_monitoring(config: &ScenarioConfig) -> Result<Self, SimError> {
        Self::build(config, None)
    }

    fn build(config: &ScenarioConfig, mut cache: Option<&mut NuCache>) -> Result<Self, SimError> {
        let offline = cache.is_some();
        config.validate()?;
        let mut models = BTreeMap::new();
        let mut collision_radii = BTreeMap::new();
        for a in &config.agents {
            models.insert(a.id, a.build_model()?);
            collision_radii.insert(a.id, a.collision_radius);
        }
        let position_dim = models.values().next().map(AgentModel::position_dim).unwrap_or(0);
        if models.values().any(|m| m.position_dim() != position_dim) {
            return Err(SimError::Config("agents must share one position dimension".into()));
        }
        for o in &config.obstacles {
            if o.center.len() != position_dim {
                return Err(SimError::Config("obstacle center dimension differs from positions".into()));
            }
        }
        let x0: BTreeMap<usize, Vec<f64>> = config.agents.iter().map(|a| (a.id, a.initial.clone())).collect();
        let pos = |i: usize| models[&i].position(&x0[&i]);

        let tasks = config.merged_tasks(position_dim)?;
        let ids: Vec<usize> = models.keys().copied().collect();
        let graph = TaskGraph::build(&ids, &tasks).map_err(|e| SimError::Config(e.to_string()))?;
        let tokens = run_token_passing(&graph).map_err(|e| SimError::Config(e.to_string()))?;

        for &(i, j) in &graph.edges {
            let d = norm(&sub(&pos(i), &pos(j)));
            if d > config.comm_radius {
                return Err(SimError::Config(format!("agents {i} and {j} share a task but start {d:.3} apart (> {})", config.comm_radius)));
            }
        }
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                let d = norm(&sub(&pos(i), &pos(j)));
                if d < collision_radii[&i] + collision_radii[&j] {
                    return Err(SimError::Config(format!("agents {i} and {j} start in collision")));
                }
            }
            for (o, obs) in config.obstacles.iter().enumerate() {
                if norm(&sub(&pos(i), &obs.center)) < obs.radius + collision_radii[&i] {
                    return Err(SimError::Config(format!("agent {i} starts inside obstacle {o}")));
                }
            }
        }

        let params = config.barrier_params();
        let opts = margin_options(config);
        let dt = config.dt;
        let mut edge_barriers = BTreeMap::new();
        let mut independent = BTreeMap::new();
        for task in &tasks {
            match task.owner {
                TaskOwner::Independent(i) => {
                    let mut b = BarrierFunction::build(task, &pos(i), 0.0, &params)?;
                    if offline && config.audit_lambda {
                        let model = &models[&i];
                        let base = x0[&i].clone();
                        let times = audit_times(&b, config.horizon);
                        let mut probe = b.clone();
                        b.audit_lambda(&times, &pos(i), |z, t, lambda| {
                            let mut x = base.clone();
                            for (k, &c) in model.selector.indices().iter().enumerate() {
                                x[c] = z[k];
                            }
                            probe.lambda = lambda;
                            nu_or_worst(compute_nu_independent(&probe, model, &x, t, dt, &opts))
                        })?;
                    }
                    independent.insert(i, b);
                }
                TaskOwner::Collaborative(i, j) => {
                    let e0 = sub(&pos(i), &pos(j));
                    let mut b = BarrierFunction::build(task, &e0, 0.0, &params)?;
                    if offline && config.audit_lambda {
                        let (mi, mj) = (&models[&i], &models[&j]);
                        let (xi, xj) = (x0[&i].clone(), x0[&j].clone());
                        let (ri, rj) = (mi.reachable_overapprox(&xi, dt).radius, mj.reachable_overapprox(&xj, dt).radius);
                        let times = audit_times(&b, config.horizon);
                        let mut reference = b.clone();
                        b.audit_lambda(&times, &e0, |z, t, lambda| {
                            reference.lambda = lambda;
                            let rel = ReachBall::relative(z.to_vec(), ri, rj);
                            let ui = compute_upsilon(
                                &UpsilonInput { barrier: &reference, side: EdgeSide::First, model: mi, state: &xi, self_radius: ri, relative: &rel, t_k: t, dt },
                                &opts,
                            );
                            let uj = compute_upsilon(
                                &UpsilonInput { barrier: &reference, side: EdgeSide::Second, model: mj, state: &xj, self_radius: rj, relative: &rel, t_k: t, dt },
                                &opts,
                            );
                            nu_or_worst(ui) + nu_or_worst(uj)
                        })?;
                    }
                    edge_barriers.insert((i, j), b);
                }
            }
        }

        let lambda = config.safety_lambda;
        let mut nu_comm = BTreeMap::new();
        let mut nu_collision = BTreeMap::new();
        let mut nu_obstacle = BTreeMap::new();
        let Some(cache) = cache.as_deref_mut() else {
            return Ok(Self {
                config: config.clone(),
                models,
                collision_radii,
                tasks,
                graph,
                tokens,
                edge_barriers,
                independent,
                nu_comm,
                nu_collision,
                nu_obstacle,
                position_dim,
            });
        };
        for &(i, j) in &graph.edges {
            let spec = OfflineNuSpec {
                kind: SafetyKind::Communication,
                model_i: &models[&i],
                model_j: &models[&j],
                state_i: &x0[&i],
                state_j: &x0[&j],
                radius: config.comm_radius,
                domain_radius: config.comm_radius,
                dt,
                lambda,
            };
            nu_comm.insert((i, j), cache.get_or_compute(&spec)?);
        }
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                let spec = OfflineNuSpec {
                    kind: SafetyKind::Collision,
                    model_i: &models[&i],
                    model_j: &models[&j],
                    state_i: &x0[&i],
                    state_j: &x0[&j],
                    radius: collision_radii[&i] + collision_radii[&j],
                    domain_radius: config.sensing(),
                    dt,
                    lambda,
                };
                nu_collision.insert((i, j), cache.get_or_compute(&spec)?);
            }
        }
        if !config.obstacles.is_empty() {
            let fixed = AgentModel::single_integrator(0, position_dim, InputSet::ball(position_dim, 0.0).expect("zero ball is valid"))
                .expect("static point model is valid");
            let origin = vec![0.0; position_dim];
            for &i in &ids {
                for (o, obs) in config.obstacles.iter().enumerate() {
                    let spec = OfflineNuSpec {
                        kind: SafetyKind::Collision,
                        model_i: &models[&i],
                        model_j: &fixed,
                        state_i: &x0[&i],
                        state_j: &origin,
                        radius: obs.radius + collision_radii[&i],
                        domain_radius: config.sensing(),
                        dt,
                        lambda,
                    };
                    nu_obstacle.insert((i, o), cache.get_or_compute(&spec)?);
                }
            }
        }
        Ok(Self {
            config: config.clone(),
            models,
            collision_radii,
            tasks,
            graph,
            tokens,
            edge_barriers,
            independent,
            nu_comm,
            nu_collision,
            nu_obstacle,
            position_dim,
        })
    }

    pub fn positions(&self, states: &BTreeMap<usize, Vec<f64>>) -> BTreeMap<usize, Vec<f64>> {
        states.iter().map(|(i, x)| (*i, self.models[i].position(x))).collect()
    }

    /// Values of every monitored barrier at one instant. `left` selects left
    /// limits of the task barriers at their drop times.
    pub fn barrier_values(&self, states: &BTreeMap<usize, Vec<f64>>, t: f64, left: bool) -> BTreeMap<String, f64> {
        let p = self.positions(states);
        let mut out = BTreeMap::new();
        let eval = |b: &BarrierFunction, z: &[f64]| if left { b.value_left(z, t) } else { b.value(z, t) };
        for (&(i, j), b) in &self.edge_barriers {
            out.insert(b.label.clone(), eval(b, &sub(&p[&i], &p[&j])));
        }
        for (i, b) in &self.independent {
            out.insert(b.label.clone(), eval(b, &p[i]));
        }
        let rc = self.config.comm_radius;
        for &(i, j) in &self.graph.edges {
            out.insert(comm_label(i, j), SafetyKind::Communication.value(rc, &sub(&p[&i], &p[&j])));
        }
        let ids: Vec<usize> = self.models.keys().copied().collect();
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                let r = self.collision_radii[&i] + self.collision_radii[&j];
                out.insert(collision_label(i, j), SafetyKind::Collision.value(r, &sub(&p[&i], &p[&j])));
            }
            for (o, obs) in self.config.obstacles.iter().enumerate() {
                let r = obs.radius + self.collision_radii[&i];
                out.insert(obstacle_label(i, o), SafetyKind::Collision.value(r, &sub(&p[&i], &obs.center)));
            }
        }
        out
    }
}

fn nu_or_worst(r: Result<f64, crate::margins::MarginError>) -> f64 {
    r.unwrap_or(f64::NEG_INFINITY)
}

fn audit_times(b: &BarrierFunction, horizon: f64) -> Vec<f64> {
    let end = b.horizon.max(0.0).min(horizon.max(0.0));
    let mut times: Vec<f64> = (0..=((end / AUDIT_SPACING).floor() as usize)).map(|k| k as f64 * AUDIT_SPACING).collect();
    times.extend(b.kinks().iter().chain(b.discontinuities()).copied().filter(|t| *t <= horizon));
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    times
}

pub fn margin_options(config: &ScenarioConfig) -> MultistartOptions {
    MultistartOptions { seeds: config.margin.seeds, iterations: config.margin.iterations, ..Default::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    pub gamma: f64,
    pub tier: ControllerTier,
    pub slacks: BTreeMap<String, f64>,
    /// States at `t + s dt / substeps`, `s = 1..=substeps`.
    pub substates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub agents: BTreeMap<usize, AgentStep>,
    pub barriers: BTreeMap<String, f64>,
    pub nu: BTreeMap<String, f64>,
    pub zeta: BTreeMap<String, f64>,
    /// Game value per edge after the factors were fixed.
    pub values: BTreeMap<String, f64>,
    pub rounds: usize,
    pub hops: usize,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub config: ScenarioConfig,
    pub tokens: TokenAssignment,
    pub token_rounds: usize,
    pub graph_diameter: usize,
    pub steps: Vec<StepRecord>,
    pub final_time: f64,
    pub final_states: BTreeMap<usize, Vec<f64>>,
    pub halted: Option<String>,
    /// Discrete monitor verdict per task over the recorded samples.
    #[serde(default)]
    pub verdicts: BTreeMap<String, FormulaVerdict>,
}

impl SimulationTrace {
    pub fn to_json(&self) -> Result<String, SimError> {
        serde_json::to_string(self).map_err(|e| SimError::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Config(format!("trace: {e}")))
    }

    /// Every tier used by `agent`.
    pub fn tiers(&self, agent: usize) -> impl Iterator<Item = ControllerTier> + '_ {
        self.steps.iter().filter_map(move |s| s.agents.get(&agent).map(|a| a.tier))
    }
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub trace: SimulationTrace,
    /// Wall-clock seconds spent in the factor propagation, per step.
    pub reduction_seconds: Vec<f64>,
}

pub struct Engine {
    pub setup: Setup,
    states: BTreeMap<usize, Vec<f64>>,
    opts: MultistartOptions,
}

impl Engine {
    pub fn new(setup: Setup) -> Self {
        let states = setup.config.agents.iter().map(|a| (a.id, a.initial.clone())).collect();
        let opts = margin_options(&setup.config);
        Self { setup, states, opts }
    }

    pub fn states(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.states
    }

    /// One sampling period starting at step `k`.
    pub fn step(&mut self, k: usize) -> Result<(StepRecord, f64), SimError> {
        let s = &self.setup;
        let cfg = &s.config;
        let dt = cfg.dt;
        let t = k as f64 * dt;
        let p = s.positions(&self.states);
        let rho: BTreeMap<usize, f64> = s.models.iter().map(|(i, m)| (*i, m.reachable_overapprox(&self.states[i], dt).radius)).collect();
        let mut nu = BTreeMap::new();
        let mut zeta = BTreeMap::new();

        let clock = Instant::now();
        let mut edges: BTreeMap<(usize, usize), EdgeData> = BTreeMap::new();
        for (&(i, j), b) in &s.edge_barriers {
            let z = sub(&p[&i], &p[&j]);
            let (value, grad, dtb) = b.eval(&z, t);
            let rel = ReachBall::relative(z.clone(), rho[&i], rho[&j]);
            let side = |agent: usize, which: EdgeSide| -> Result<SideTerms, SimError> {
                let model = &s.models[&agent];
                let lie = LieTerms::from_gradient(model, &self.states[&agent], &grad, which.sign());
                let upsilon = compute_upsilon(
                    &UpsilonInput {
                        barrier: b,
                        side: which,
                        model,
                        state: &self.states[&agent],
                        self_radius: rho[&agent],
                        relative: &rel,
                        t_k: t,
                        dt,
                    },
                    &self.opts,
                )?;
                Ok(SideTerms { lie, upsilon })
            };
            let first = side(i, EdgeSide::First)?;
            let second = side(j, EdgeSide::Second)?;
            edges.insert((i, j), EdgeData { base: b.lambda * value + dtb, first, second });
        }
        let mut independent_rows = BTreeMap::new();
        for (&i, b) in &s.independent {
            let model = &s.models[&i];
            let (value, grad, dtb) = b.eval(&p[&i], t);
            let n = compute_nu_independent(b, model, &self.states[&i], t, dt, &self.opts)?;
            let z = b.lambda * value + dtb + n;
            nu.insert(b.label.clone(), n);
            zeta.insert(b.label.clone(), z);
            let lie = LieTerms::from_gradient(model, &self.states[&i], &grad, 1.0);
            independent_rows.insert(i, QpRow::independent(b.label.clone(), lie, z));
        }
        let input_sets: BTreeMap<usize, InputSet> = s.models.iter().map(|(i, m)| (*i, m.input_set.clone())).collect();
        let reduction = run_control_reduction(&ReductionProblem { graph: &s.graph, tokens: &s.tokens, input_sets: &input_sets, edges: &edges })?;
        let reduction_time = clock.elapsed().as_secs_f64();

        let mut values = BTreeMap::new();
        for (e, r) in &reduction.reports {
            let label = &s.edge_barriers[e].label;
            nu.insert(label.clone(), r.nu);
            zeta.insert(label.clone(), r.zeta);
            values.insert(label.clone(), r.value);
        }

        let ids: Vec<usize> = s.models.keys().copied().collect();
        let lambda = cfg.safety_lambda;
        let mut agents = BTreeMap::new();
        for &i in &ids {
            let model = &s.models[&i];
            let x = &self.states[&i];
            let mut rows = Vec::new();
            for (&(a, b), data) in &edges {
                if a != i && b != i {
                    continue;
                }
                let r = &reduction.reports[&(a, b)];
                let own = if i == a { &data.first } else { &data.second };
                let label = s.edge_barriers[&(a, b)].label.clone();
                rows.push(if r.leader == i {
                    QpRow::leader(label, own.lie.clone(), r.zeta, r.worst)
                } else {
                    QpRow::follower(label, own.lie.clone(), r.zeta)
                });
            }
            if let Some(row) = independent_rows.remove(&i) {
                rows.push(row);
            }
            for &(a, b) in &s.graph.edges {
                if a != i && b != i {
                    continue;
                }
                let z = sub(&p[&a], &p[&b]);
                if norm(&z) > cfg.comm_radius {
                    continue;
                }
                let sign = if i == a { 1.0 } else { -1.0 };
                let lie = LieTerms::from_gradient(model, x, &SafetyKind::Communication.gradient(&z), sign);
                let bz = SafetyKind::Communication.value(cfg.comm_radius, &z);
                rows.push(QpRow::communication(comm_label(a, b), lie, lambda * bz + s.nu_comm[&(a, b)]));
            }
            for &j in &ids {
                if j == i {
                    continue;
                }
                let z = sub(&p[&i], &p[&j]);
                if norm(&z) > cfg.sensing() {
                    continue;
                }
                let key = (i.min(j), i.max(j));
                let radius = s.collision_radii[&i] + s.collision_radii[&j];
                let lie = LieTerms::from_gradient(model, x, &SafetyKind::Collision.gradient(&z), 1.0);
                let bz = SafetyKind::Collision.value(radius, &z);
                rows.push(QpRow::collision(collision_label(key.0, key.1), lie, lambda * bz + s.nu_collision[&key]));
            }
            for (o, obs) in cfg.obstacles.iter().enumerate() {
                let z = sub(&p[&i], &obs.center);
                if norm(&z) > cfg.sensing() {
                    continue;
                }
                let lie = LieTerms::from_gradient(model, x, &SafetyKind::Collision.gradient(&z), 1.0);
                let bz = SafetyKind::Collision.value(obs.radius + s.collision_radii[&i], &z);
                rows.push(QpRow::obstacle(obstacle_label(i, o), lie, lambda * bz + s.nu_obstacle[&(i, o)]));
            }
            let gamma = reduction.gamma[&i];
            let qp = AgentQp { agent: i, input_set: model.input_set.scaled(gamma), rows };
            let sol = qp.solve(t).map_err(|e| match e {
                ControllerError::SafetyInfeasible { agent, t } => SimError::Halted { agent, t },
                other => SimError::Controller(other),
            })?;
            agents.insert(
                i,
                AgentStep { state: x.clone(), input: sol.input, gamma, tier: sol.tier, slacks: sol.slacks, substates: Vec::new() },
            );
        }

        let barriers = s.barrier_values(&self.states, t, false);
        for (&i, step) in agents.iter_mut() {
            let zoh = s.models[&i].integrate_zoh(&DVector::from_column_slice(&self.states[&i]), &DVector::from_column_slice(&step.input), dt, cfg.substeps)?;
            step.substates = zoh.substates.iter().map(|v| v.as_slice().to_vec()).collect();
        }
        for (i, step) in &agents {
            self.states.insert(*i, step.substates.last().cloned().unwrap_or_else(|| step.state.clone()));
        }
        let record = StepRecord {
            k,
            t,
            agents,
            barriers,
            nu,
            zeta,
            values,
            rounds: reduction.rounds,
            hops: reduction.hops,
            diagnostics: reduction.diagnostics,
        };
        Ok((record, reduction_time))
    }
}

/// Runs the closed loop for the configured horizon. A safety-infeasible
/// step ends the run early with `halted` set; other errors abort.
pub fn run_setup(setup: Setup) -> Result<SimulationRun, SimError> {
    let steps = setup.config.steps();
    let dt = setup.config.dt;
    let tokens = setup.tokens.clone();
    let token_rounds = tokens.rounds_used;
    let graph_diameter = setup.graph.diameter;
    let config = setup.config.clone();
    let mut engine = Engine::new(setup);
    let mut records = Vec::with_capacity(steps);
    let mut timing = Vec::with_capacity(steps);
    let mut halted = None;
    for k in 0..steps {
        match engine.step(k) {
            Ok((r, secs)) => {
                records.push(r);
                timing.push(secs);
            }
            Err(SimError::Halted { agent, t }) => {
                halted = Some(format!("agent {agent}: no tier feasible at t = {t:.3}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let final_time = records.len() as f64 * dt;
    let mut trace = SimulationTrace {
        config,
        tokens,
        token_rounds,
        graph_diameter,
        steps: records,
        final_time,
        final_states: engine.states().clone(),
        halted,
        verdicts: BTreeMap::new(),
    };
    trace.verdicts = task_verdicts(&engine.setup, &trace)?;
    Ok(SimulationRun { trace, reduction_seconds: timing })
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<SimulationRun, SimError> {
    run_setup(Setup::new(config)?)
}

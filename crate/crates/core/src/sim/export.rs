use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::engine::{Setup, SimulationTrace};
use super::invariants::InvariantReport;
use super::SimError;

fn io(e: impl std::fmt::Display) -> SimError {
    SimError::Io(e.to_string())
}

fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(format!("{v}"))
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// One row per step per agent: state, input, factor, tier and total slack.
pub fn write_trace_csv(trace: &SimulationTrace, path: &Path) -> Result<(), SimError> {
    let nx = trace.steps.iter().flat_map(|s| s.agents.values().map(|a| a.state.len())).max().unwrap_or(0);
    let nu = trace.steps.iter().flat_map(|s| s.agents.values().map(|a| a.input.len())).max().unwrap_or(0);
    let mut header: Vec<String> = ["k", "t", "agent"].map(String::from).to_vec();
    header.extend((0..nx).map(|c| format!("x{c}")));
    header.extend((0..nu).map(|c| format!("u{c}")));
    header.extend(["gamma", "tier", "slack"].map(String::from));
    let rows = trace.steps.iter().flat_map(|s| {
        s.agents.iter().map(move |(i, a)| {
            let mut r = vec![s.k.to_string(), s.t.to_string(), i.to_string()];
            r.extend((0..nx).map(|c| cell(a.state.get(c).copied())));
            r.extend((0..nu).map(|c| cell(a.input.get(c).copied())));
            r.extend([a.gamma.to_string(), format!("{:?}", a.tier), a.slacks.values().sum::<f64>().to_string()]);
            r
        })
    });
    table(path, &header, rows)
}

pub fn summary_json(trace: &SimulationTrace, report: &InvariantReport) -> Value {
    let verdicts: BTreeMap<&String, Value> = report
        .verdicts
        .iter()
        .map(|(k, v)| (k, serde_json::to_value(v.overall).unwrap_or(Value::Null)))
        .collect();
    let minima: BTreeMap<&String, Value> =
        report.minima.iter().map(|(k, m)| (k, json!({ "value": num(m.value), "t": m.t, "step": m.step }))).collect();
    let violations: Vec<Value> = report
        .violations
        .iter()
        .map(|v| json!({ "kind": v.kind, "label": v.label, "step": v.step, "t": v.t, "value": num(v.value) }))
        .collect();
    let gamma_min: BTreeMap<String, Value> = report.gamma_min.iter().map(|(i, g)| (i.to_string(), num(*g))).collect();
    json!({
        "name": trace.config.name,
        "ok": report.ok(),
        "steps": report.steps,
        "final_time": report.final_time,
        "halted": report.halted,
        "verdicts": verdicts,
        "minima": minima,
        "violations": violations,
        "notes": report.notes,
        "gamma_min": gamma_min,
        "token_rounds": report.token_rounds,
        "round_bound": report.round_bound,
        "max_reduction_rounds": report.max_reduction_rounds,
        "tier_a_edges": report.tier_a_edges,
        "tier_counts": report.tier_counts,
    })
}

/// Writes `trace.json`, `trace.csv` and `summary.json` into `dir`.
pub fn write_outputs(trace: &SimulationTrace, report: &InvariantReport, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join("trace.json"), trace.to_json()?).map_err(io)?;
    write_trace_csv(trace, &dir.join("trace.csv"))?;
    let summary = serde_json::to_string_pretty(&summary_json(trace, report)).map_err(io)?;
    fs::write(dir.join("summary.json"), summary).map_err(io)
}

fn long_rows<'a>(rows: impl Iterator<Item = (f64, String, f64)> + 'a) -> impl Iterator<Item = Vec<String>> + 'a {
    rows.map(|(t, label, v)| vec![t.to_string(), label, v.to_string()])
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

/// Per-figure tables: trajectories, barrier values, margins and factors.
/// Returns the written file names.
pub fn plot_data(trace: &SimulationTrace, setup: &Setup, dir: &Path) -> Result<Vec<String>, SimError> {
    fs::create_dir_all(dir).map_err(io)?;
    let n = trace.config.substeps.max(1);
    let dt = trace.config.dt;
    let point = |t: f64, i: usize, x: &Vec<f64>| {
        let p = setup.models[&i].position(x);
        let heading = if x.len() > p.len() { x.last().copied() } else { None };
        vec![t.to_string(), i.to_string(), cell(p.first().copied()), cell(p.get(1).copied()), cell(heading)]
    };
    let mut traj = Vec::new();
    for s in &trace.steps {
        for (i, a) in &s.agents {
            for (q, x) in std::iter::once(&a.state).chain(a.substates.iter().take(n - 1)).enumerate() {
                traj.push(point((s.k * n + q) as f64 * dt / n as f64, *i, x));
            }
        }
    }
    for (i, x) in &trace.final_states {
        traj.push(point(trace.final_time, *i, x));
    }
    table(&dir.join("trajectories.csv"), &header(&["t", "agent", "px", "py", "heading"]), traj)?;

    let task: BTreeSet<String> = setup.edge_barriers.values().chain(setup.independent.values()).map(|b| b.label.clone()).collect();
    let values = |want_task: bool| {
        let task = &task;
        trace.steps.iter().flat_map(move |s| {
            s.barriers.iter().filter(move |(l, _)| task.contains(*l) == want_task).map(move |(l, v)| (s.t, l.clone(), *v))
        })
    };
    table(&dir.join("barriers.csv"), &header(&["t", "label", "value"]), long_rows(values(true)))?;
    table(&dir.join("safety.csv"), &header(&["t", "label", "value"]), long_rows(values(false)))?;
    let nu = trace.steps.iter().flat_map(|s| s.nu.iter().map(move |(l, v)| (s.t, l.clone(), *v)));
    table(&dir.join("nu.csv"), &header(&["t", "label", "nu"]), long_rows(nu))?;
    let gamma = trace.steps.iter().flat_map(|s| s.agents.iter().map(move |(i, a)| (s.t, i.to_string(), a.gamma)));
    table(&dir.join("gamma.csv"), &header(&["t", "agent", "gamma"]), long_rows(gamma))?;
    Ok(["trajectories.csv", "barriers.csv", "safety.csv", "nu.csv", "gamma.csv"].map(String::from).to_vec())
}

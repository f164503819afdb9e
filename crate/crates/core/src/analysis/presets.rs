//! Parameter sweeps and the built-in presets shipped in `presets/`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::events::delta;
use super::sizing::{committee_size_solver, committee_size_upper_bound, layout_upper_bound, SizingParams};
use super::tails::{hoeffding_bound, hyper_tail, hyper_tail_bound};
use super::{parse_prob, Adversary, AnalysisError, FailureEvent, Fraction, PartitionModel, Prob};

const BUILTIN: &[(&str, &str)] = &[
    ("fig4", include_str!("../../presets/fig4.json")),
    ("fig5_tl", include_str!("../../presets/fig5_tl.json")),
    ("fig5_tr", include_str!("../../presets/fig5_tr.json")),
    ("fig5_bl", include_str!("../../presets/fig5_bl.json")),
    ("fig5_br", include_str!("../../presets/fig5_br.json")),
    ("fig6", include_str!("../../presets/fig6.json")),
];

pub fn preset_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_preset(name: &str) -> Result<Preset, AnalysisError> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| AnalysisError::InvalidInput(format!("unknown preset {name:?}; known: {}", preset_names().join(", "))))?;
    serde_json::from_str(text).map_err(|e| AnalysisError::InvalidInput(format!("preset {name}: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRange {
    pub start: usize,
    pub end: usize,
    #[serde(default = "one")]
    pub step: usize,
}

fn one() -> usize {
    1
}

impl StepRange {
    pub fn values(&self) -> Vec<usize> {
        (self.start..=self.end).step_by(self.step.max(1)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    /// Exact adversary count `M`.
    Hypergeometric(usize),
    /// Per-node corruption probability `P`.
    Binomial(f64),
}

impl ModelSpec {
    fn adversary(self) -> Adversary {
        match self {
            ModelSpec::Hypergeometric(m) => Adversary::ExactCount(m),
            ModelSpec::Binomial(p) => Adversary::Fraction(p),
        }
    }
}

/// Upper limit a preset asserts on the best available value of an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ceiling {
    pub model: String,
    pub event: FailureEvent,
    pub max: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub description: String,
    #[serde(flatten)]
    pub kind: PresetKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PresetKind {
    /// One committee tail against its two bounds, across committee sizes.
    TailBounds { n_nodes: usize, adversaries: usize, threshold: Fraction, committee_sizes: StepRange, require_below_hoeffding: bool },
    /// Event probabilities across committee counts.
    Events { n_nodes: usize, committees: StepRange, models: Vec<ModelSpec>, events: Vec<FailureEvent>, ceilings: Vec<Ceiling> },
    /// Solver output across network sizes and targets.
    Sizing { p: f64, threshold: Fraction, deltas: Vec<f64>, n_nodes: Vec<usize> },
}

/// One row of an event sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub r: usize,
    pub event: FailureEvent,
    pub exact: Option<Prob>,
    pub bound: Prob,
}

/// Evaluates every event on every `(model, K)` pair. Events that are
/// undefined for a given `K` (even `K` for sibling pairs, `k > K`) are
/// skipped. Rows are ordered by model, then `K`, then event.
pub fn sweep_events(n_nodes: usize, ks: &[usize], models: &[ModelSpec], events: &[FailureEvent]) -> Result<Vec<SweepRow>, AnalysisError> {
    let points: Vec<(ModelSpec, usize)> = models.iter().flat_map(|&m| ks.iter().map(move |&k| (m, k))).collect();
    let rows: Result<Vec<Vec<SweepRow>>, AnalysisError> = points
        .par_iter()
        .map(|&(spec, k)| {
            let model = PartitionModel::split(n_nodes, k, spec.adversary())?;
            let mut out = Vec::new();
            for &event in events {
                let applicable = match event {
                    FailureEvent::E2(_) => k % 2 == 1,
                    FailureEvent::Ek(j, _) => j <= k,
                    _ => true,
                };
                if !applicable {
                    continue;
                }
                let v = delta(&model, event)?;
                out.push(SweepRow {
                    model: model.model_name().to_string(),
                    k,
                    n: n_nodes / k,
                    r: n_nodes % k,
                    event,
                    exact: v.exact,
                    bound: v.bound,
                });
            }
            Ok(out)
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Tabular result of a preset with the checks it failed.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetReport {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Human-readable check outcomes, one per check.
    pub checks: Vec<String>,
    pub failures: Vec<String>,
}

impl PresetReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        write_table(w, &self.header, &self.rows)
    }
}

pub(crate) fn write_table<W: Write>(w: W, header: &[String], rows: &[Vec<String>]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for row in rows {
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Relative slack allowed when comparing a bound to an exact value.
const DOMINANCE_SLACK: f64 = 1e-9;

fn opt(p: Option<Prob>) -> String {
    p.map(|p| p.to_string()).unwrap_or_default()
}

/// Rows plus the dominance check for an event sweep.
pub fn sweep_report(name: &str, rows: &[SweepRow]) -> PresetReport {
    let header = ["model", "K", "n", "r", "event", "exact", "bound"].map(String::from).to_vec();
    let mut failures = Vec::new();
    let table = rows
        .iter()
        .map(|r| {
            if let Some(e) = r.exact {
                if !e.le_rel(r.bound, DOMINANCE_SLACK) {
                    failures.push(format!("{} K={} {}: bound {} below exact {}", r.model, r.k, r.event, r.bound, e));
                }
            }
            vec![r.model.clone(), r.k.to_string(), r.n.to_string(), r.r.to_string(), r.event.to_string(), opt(r.exact), r.bound.to_string()]
        })
        .collect();
    let checks = vec![format!("bound >= exact on {} rows: {}", rows.len(), if failures.is_empty() { "ok" } else { "FAILED" })];
    PresetReport { name: name.to_string(), header, rows: table, checks, failures }
}

pub fn run_preset(preset: &Preset) -> Result<PresetReport, AnalysisError> {
    match &preset.kind {
        PresetKind::TailBounds { n_nodes, adversaries, threshold, committee_sizes, require_below_hoeffding } => {
            tail_bounds(&preset.name, *n_nodes, *adversaries, *threshold, committee_sizes, *require_below_hoeffding)
        }
        PresetKind::Events { n_nodes, committees, models, events, ceilings } => {
            let rows = sweep_events(*n_nodes, &committees.values(), models, events)?;
            let mut report = sweep_report(&preset.name, &rows);
            for c in ceilings {
                let max = parse_prob(&c.max).ok_or_else(|| AnalysisError::InvalidInput(format!("bad ceiling {:?}", c.max)))?;
                let worst = rows
                    .iter()
                    .filter(|r| r.model == c.model && r.event == c.event)
                    .map(|r| (r.exact.unwrap_or(r.bound), r.k))
                    .max_by(|a, b| a.0.partial_cmp(&b.0).expect("probabilities are ordered"));
                match worst {
                    Some((v, k)) if v <= max => {
                        report.checks.push(format!("{} {} max {} at K={} <= {}: ok", c.model, c.event, v, k, c.max))
                    }
                    Some((v, k)) => {
                        let msg = format!("{} {} max {} at K={} exceeds {}", c.model, c.event, v, k, c.max);
                        report.checks.push(format!("{msg}: FAILED"));
                        report.failures.push(msg);
                    }
                    None => report.failures.push(format!("no rows for {} {}", c.model, c.event)),
                }
            }
            Ok(report)
        }
        PresetKind::Sizing { p, threshold, deltas, n_nodes } => sizing_table(&preset.name, *p, *threshold, deltas, n_nodes),
    }
}

fn tail_bounds(
    name: &str,
    n_total: usize,
    m: usize,
    a: Fraction,
    sizes: &StepRange,
    below_hoeffding: bool,
) -> Result<PresetReport, AnalysisError> {
    let header = ["n_mu", "exact", "bound", "hoeffding"].map(String::from).to_vec();
    let p = m as f64 / n_total as f64;
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for n_mu in sizes.values() {
        let exact = hyper_tail(n_total, m, n_mu, a.floor_mul(n_mu) + 1);
        let bound = hyper_tail_bound(n_total, m, n_mu, a)?;
        let hoeffding = hoeffding_bound(n_mu, p, a);
        if !exact.le_rel(bound, DOMINANCE_SLACK) {
            failures.push(format!("n_mu={n_mu}: bound {bound} below exact {exact}"));
        }
        if below_hoeffding && !bound.le_rel(hoeffding, DOMINANCE_SLACK) {
            failures.push(format!("n_mu={n_mu}: bound {bound} above Hoeffding {hoeffding}"));
        }
        rows.push(vec![n_mu.to_string(), exact.to_string(), bound.to_string(), hoeffding.to_string()]);
    }
    let checks = vec![format!(
        "exact <= bound{} on {} sizes: {}",
        if below_hoeffding { " <= Hoeffding" } else { "" },
        rows.len(),
        if failures.is_empty() { "ok" } else { "FAILED" }
    )];
    Ok(PresetReport { name: name.to_string(), header, rows, checks, failures })
}

fn sizing_table(name: &str, p: f64, a: Fraction, deltas: &[f64], n_nodes: &[usize]) -> Result<PresetReport, AnalysisError> {
    let header = ["delta", "N", "K", "n", "r", "failure", "n_upper_bound", "n_upper_bound_at_target"].map(String::from).to_vec();
    let points: Vec<(f64, usize)> = deltas.iter().flat_map(|&d| n_nodes.iter().map(move |&n| (d, n))).collect();
    let results: Result<Vec<_>, AnalysisError> = points
        .par_iter()
        .map(|&(d, n)| {
            let res = committee_size_solver(SizingParams { n_nodes: n, p, a, delta: d })?;
            let ub = layout_upper_bound(n, res.n, res.failure, p, a)?;
            let ub_target = committee_size_upper_bound(n, res.n, d, p, a)?;
            Ok((d, n, res, ub, ub_target))
        })
        .collect();
    let mut failures = Vec::new();
    let rows = results?
        .into_iter()
        .map(|(d, n, res, ub, ub_target)| {
            if res.n as f64 > ub {
                failures.push(format!("delta={d:e} N={n}: n={} exceeds bound {ub:.3}", res.n));
            }
            vec![
                format!("{d:e}"),
                n.to_string(),
                res.k.to_string(),
                res.n.to_string(),
                res.r.to_string(),
                format!("{:e}", res.failure),
                format!("{ub:.6}"),
                format!("{ub_target:.6}"),
            ]
        })
        .collect::<Vec<_>>();
    let checks = vec![format!("n <= n_upper_bound on {} points: {}", rows.len(), if failures.is_empty() { "ok" } else { "FAILED" })];
    Ok(PresetReport { name: name.to_string(), header, rows, checks, failures })
}

//! Seed matrices over scenario sizes and Byzantine behaviors.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    check_trace, max_tolerated, run, AdversarySpec, ByzantineBehavior, CheckReport, CommitteeSize, PreGstModel,
    Property, Scenario, SimError, Trace,
};
use crate::messages::View;

const BUILTIN: &[(&str, &str)] = &[
    ("happy-path", include_str!("../../presets/sim/happy_path.json")),
    ("adversarial", include_str!("../../presets/sim/adversarial.json")),
    ("authenticators", include_str!("../../presets/sim/authenticators.json")),
];

pub fn campaign_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_campaign(name: &str) -> Result<Campaign, SimError> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| SimError::InvalidScenario(format!("unknown campaign {name:?}; known: {:?}", campaign_names())))?;
    Campaign::from_json(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizePoint {
    pub n_nodes: usize,
    pub committee_size: CommitteeSize,
    /// Overrides the campaign's view count for this size.
    #[serde(default)]
    pub views_to_run: Option<View>,
}

/// How many Byzantine nodes each run gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryRule {
    None,
    /// `floor(N/3) - 1`, saturating at zero.
    BelowThirdMinusOne,
    /// The largest count with `3M < N`.
    MaxTolerated,
    Exact(usize),
}

impl AdversaryRule {
    pub fn count(self, n_nodes: usize) -> usize {
        match self {
            AdversaryRule::None => 0,
            AdversaryRule::BelowThirdMinusOne => (n_nodes / 3).saturating_sub(1),
            AdversaryRule::MaxTolerated => max_tolerated(n_nodes),
            AdversaryRule::Exact(m) => m,
        }
    }
}

fn default_views() -> View {
    50
}
fn default_delta() -> u64 {
    10
}
fn default_factor() -> u64 {
    4
}
fn default_budget() -> u64 {
    50_000_000
}

/// Runs every size × behavior × seed combination. An empty behavior list
/// means all-honest runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub sizes: Vec<SizePoint>,
    #[serde(default)]
    pub behaviors: Vec<ByzantineBehavior>,
    pub adversaries: AdversaryRule,
    pub seeds: u64,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_views")]
    pub views_to_run: View,
    #[serde(default = "default_delta")]
    pub delta: u64,
    #[serde(default)]
    pub gst: u64,
    #[serde(default)]
    pub pre_gst_model: Option<PreGstModel>,
    #[serde(default = "default_factor")]
    pub pre_gst_factor: u64,
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default = "default_budget")]
    pub event_budget: u64,
    #[serde(default)]
    pub properties: Option<Vec<Property>>,
    /// Fit verified authenticators per view against `ln N` across sizes.
    #[serde(default)]
    pub check_authenticators: bool,
}

impl Campaign {
    pub fn from_json(text: &str) -> Result<Campaign, SimError> {
        let c: Campaign = serde_json::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        if c.sizes.is_empty() || c.seeds == 0 {
            return Err(SimError::InvalidScenario("campaign needs at least one size and one seed".into()));
        }
        for s in c.scenarios() {
            s.scenario.validate()?;
        }
        Ok(c)
    }

    /// The runs in deterministic order.
    pub fn scenarios(&self) -> Vec<CampaignRun> {
        let behaviors: Vec<Option<ByzantineBehavior>> =
            if self.behaviors.is_empty() { vec![None] } else { self.behaviors.iter().copied().map(Some).collect() };
        let mut out = Vec::new();
        for size in &self.sizes {
            for behavior in &behaviors {
                for i in 0..self.seeds {
                    let seed = self.seed_base + i;
                    let m = if behavior.is_some() { self.adversaries.count(size.n_nodes) } else { 0 };
                    let scenario = Scenario {
                        committee_size: size.committee_size,
                        adversaries: AdversarySpec::Exact(m),
                        behaviors: vec![behavior.unwrap_or(ByzantineBehavior::Silent)],
                        delta: self.delta,
                        gst: self.gst,
                        pre_gst_model: self.pre_gst_model.unwrap_or(PreGstModel::BoundedRandom),
                        pre_gst_factor: self.pre_gst_factor,
                        drop_probability: self.drop_probability,
                        views_to_run: size.views_to_run.unwrap_or(self.views_to_run),
                        event_budget: self.event_budget,
                        ..Scenario::new(size.n_nodes, 1, seed)
                    };
                    out.push(CampaignRun { behavior: *behavior, seed, scenario });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignRun {
    pub behavior: Option<ByzantineBehavior>,
    pub seed: u64,
    pub scenario: Scenario,
}

/// One line of the campaign summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub n_nodes: usize,
    pub committee_size: usize,
    pub committees: usize,
    pub behavior: String,
    pub byzantine: usize,
    pub seed: u64,
    pub views: View,
    pub max_view: View,
    pub min_commits: usize,
    pub timeout_qcs: u64,
    pub events: u64,
    pub truncated: bool,
    pub sound: bool,
    pub qcs_checked: usize,
    pub min_qc_support: Option<usize>,
    pub safety_violations: usize,
    pub other_violations: usize,
    /// Mean over honest nodes of verified authenticators per view.
    pub mean_verified_per_view: f64,
    pub max_verified_per_view: f64,
    pub log_digest: String,
}

impl RunRow {
    pub fn from_trace(behavior: Option<ByzantineBehavior>, trace: &Trace, report: &CheckReport) -> RunRow {
        let s = &trace.summary;
        let views = trace.header.scenario.views_to_run;
        let honest: Vec<_> = s.stats.per_node.iter().filter(|(n, _)| trace.is_honest(**n)).collect();
        let per_view: Vec<f64> = honest.iter().map(|(_, st)| st.verified as f64 / views as f64).collect();
        let mean = per_view.iter().sum::<f64>() / per_view.len().max(1) as f64;
        let max = per_view.iter().copied().fold(0.0, f64::max);
        let safety = report.violations.iter().filter(|v| v.property.is_safety()).count();
        RunRow {
            n_nodes: trace.header.scenario.n_nodes,
            committee_size: trace.header.committee_size,
            committees: trace.header.committees,
            behavior: behavior.map_or("honest".to_string(), |b| b.name().to_string()),
            byzantine: trace.header.byzantine.len(),
            seed: trace.header.scenario.master_seed,
            views,
            max_view: s.stats.max_view,
            min_commits: honest.iter().map(|(n, _)| s.commits.get(*n).map_or(0, |c| c.len())).min().unwrap_or(0),
            timeout_qcs: s.stats.timeout_qcs,
            events: s.stats.events,
            truncated: s.stats.truncated,
            sound: s.robustness.iter().all(|r| r.sound()),
            qcs_checked: report.checked.get(&Property::QcSupport).copied().unwrap_or(0),
            min_qc_support: report.min_qc_support,
            safety_violations: safety,
            other_violations: report.violations.len() - safety,
            mean_verified_per_view: mean,
            max_verified_per_view: max,
            log_digest: s.log_digest.clone(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CampaignReport {
    pub rows: Vec<RunRow>,
    pub checks: CheckReport,
}

impl CampaignReport {
    pub fn safety_violations(&self) -> usize {
        self.rows.iter().map(|r| r.safety_violations).sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut wr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wr.serialize(row).map_err(|e| SimError::Io(std::io::Error::other(e)))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Runs the campaign, one isolated simulation per combination, in parallel.
/// Rows come back in scenario order.
pub fn run_campaign(campaign: &Campaign) -> Result<CampaignReport, SimError> {
    run_campaign_with(campaign, |_| {})
}

/// As [`run_campaign`], calling `visit` on every finished trace (in
/// completion order, possibly from several threads).
pub fn run_campaign_with<F>(campaign: &Campaign, visit: F) -> Result<CampaignReport, SimError>
where
    F: Fn(&Trace) + Sync,
{
    let properties = campaign.properties.clone().unwrap_or_else(|| Property::ALL.to_vec());
    let results: Vec<Result<(RunRow, CheckReport), SimError>> = campaign
        .scenarios()
        .into_par_iter()
        .map(|r| {
            let trace = run(&r.scenario)?;
            let report = check_trace(&trace, &properties);
            visit(&trace);
            Ok((RunRow::from_trace(r.behavior, &trace, &report), report))
        })
        .collect();
    let mut out = CampaignReport::default();
    for r in results {
        let (row, report) = r?;
        out.rows.push(row);
        out.checks.merge(report);
    }
    Ok(out)
}

/// Least-squares fit of `y = c * ln N` through the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub c: f64,
    /// Uncentered coefficient of determination, `1 - SSR / sum(y^2)`, the
    /// usual measure for a model without intercept.
    pub r_squared: f64,
    pub points: Vec<(usize, f64)>,
}

pub fn fit_log(points: &[(usize, f64)]) -> LogFit {
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let sxy: f64 = xs.iter().zip(points).map(|(x, (_, y))| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let c = sxy / sxx;
    let ssr: f64 = xs.iter().zip(points).map(|(x, (_, y))| (y - c * x).powi(2)).sum();
    let syy: f64 = points.iter().map(|(_, y)| y * y).sum();
    LogFit { c, r_squared: 1.0 - ssr / syy, points: points.to_vec() }
}

/// Authenticator scaling summary over the sizes of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthenticatorReport {
    pub fit: LogFit,
    /// `(N, n, largest per-node per-view count)`.
    pub per_size_max: Vec<(usize, usize, f64)>,
    /// Every node stays within `4 n` verifications per view.
    pub within_band: bool,
}

pub fn authenticator_report(rows: &[RunRow]) -> AuthenticatorReport {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.n_nodes).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut points = Vec::new();
    let mut per_size_max = Vec::new();
    for n in sizes {
        let rs: Vec<&RunRow> = rows.iter().filter(|r| r.n_nodes == n).collect();
        let mean = rs.iter().map(|r| r.mean_verified_per_view).sum::<f64>() / rs.len() as f64;
        let max = rs.iter().map(|r| r.max_verified_per_view).fold(0.0, f64::max);
        points.push((n, mean));
        per_size_max.push((n, rs[0].committee_size, max));
    }
    let within_band = per_size_max.iter().all(|(_, c, m)| *m <= 4.0 * *c as f64);
    AuthenticatorReport { fit: fit_log(&points), per_size_max, within_band }
}

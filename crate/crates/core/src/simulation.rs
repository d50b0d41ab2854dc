//! Monte Carlo engine: scenario grid x method grid x replicates, metrics,
//! propensity diagnostics and output files.
//!
//! Every replicate data set comes from `ScenarioConfig::replicate_stream`;
//! every method sees the same data set for a given replicate, and methods
//! sharing a library share the propensity fit. Results are a pure function
//! of the master seed, whatever the worker count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgm::{simulate_dataset, Extrapolation, Prevalence, ScenarioConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_substream, RngState};
use crate::superlearner::LibraryPreset;
use crate::tmle::{
    estimate_g, g_stream, run_with_g, EstimatorConfig, Method, ObservedData, PropensityEstimate, TmleResult, Z_95,
};

const ROLE_ESTIMATOR: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    Tmle,
    CvtmleQ,
    TmleRf,
    CvtmleQRf,
}

impl MethodId {
    pub const ALL: [MethodId; 4] = [MethodId::Tmle, MethodId::CvtmleQ, MethodId::TmleRf, MethodId::CvtmleQRf];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Tmle => "tmle",
            MethodId::CvtmleQ => "cvtmle_q",
            MethodId::TmleRf => "tmle_rf",
            MethodId::CvtmleQRf => "cvtmle_q_rf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        MethodId::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn method(self) -> Method {
        match self {
            MethodId::Tmle | MethodId::TmleRf => Method::Tmle,
            MethodId::CvtmleQ | MethodId::CvtmleQRf => Method::CvtmleQ,
        }
    }

    pub fn preset(self) -> LibraryPreset {
        match self {
            MethodId::Tmle | MethodId::CvtmleQ => LibraryPreset::Default,
            MethodId::TmleRf | MethodId::CvtmleQRf => LibraryPreset::Rf,
        }
    }

    pub fn from_parts(method: Method, preset: LibraryPreset) -> Self {
        match (method, preset) {
            (Method::Tmle, LibraryPreset::Default) => MethodId::Tmle,
            (Method::CvtmleQ, LibraryPreset::Default) => MethodId::CvtmleQ,
            (Method::Tmle, LibraryPreset::Rf) => MethodId::TmleRf,
            (Method::CvtmleQ, LibraryPreset::Rf) => MethodId::CvtmleQRf,
        }
    }
}

/// The eight scenarios: sample size x prevalence x extrapolation.
pub fn scenario_grid() -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for n in [200, 1000] {
        for p in [Prevalence::Fifty, Prevalence::Eighty] {
            for e in [Extrapolation::None, Extrapolation::High] {
                out.push(ScenarioConfig::new(n, p, e));
            }
        }
    }
    out
}

/// Estimator stream for one replicate of one scenario, shared by all
/// methods.
pub fn estimator_stream(cfg: &ScenarioConfig, master_seed: u64, rep: u64) -> RngState {
    let role = ROLE_ESTIMATOR
        | ((cfg.n_obs as u64) << 8)
        | (u64::from(cfg.prevalence.percent()) << 40)
        | ((cfg.extrapolation == Extrapolation::High) as u64) << 48;
    derive_substream(master_seed, rep, role)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub scenarios: Vec<ScenarioConfig>,
    pub methods: Vec<MethodId>,
    pub n_reps: usize,
    pub master_seed: u64,
    pub k_sl: usize,
    pub k_outer: usize,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub scenario: String,
    pub method: MethodId,
    pub rep: usize,
    pub theta_i: f64,
    pub ate_hat: f64,
    pub var_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub failed: bool,
    pub reason: String,
}

impl RepResult {
    fn failure(scenario: &ScenarioConfig, method: MethodId, rep: usize, theta_i: f64, reason: String) -> Self {
        RepResult {
            scenario: scenario.id(),
            method,
            rep,
            theta_i,
            ate_hat: f64::NAN,
            var_hat: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            failed: true,
            reason,
        }
    }
}

/// Runs every requested method on replicate `rep` of `scenario`.
pub fn run_replicate(
    scenario: &ScenarioConfig,
    methods: &[MethodId],
    rep: usize,
    master_seed: u64,
    k_sl: usize,
    k_outer: usize,
) -> Vec<RepResult> {
    let ds = match simulate_dataset(scenario, &mut scenario.replicate_stream(master_seed, rep as u64)) {
        Ok(ds) => ds,
        Err(e) => {
            return methods
                .iter()
                .map(|&m| RepResult::failure(scenario, m, rep, f64::NAN, e.to_string()))
                .collect()
        }
    };
    let theta_i = ds.true_ate;
    let data = match ObservedData::from_dataset(&ds) {
        Ok(d) => d,
        Err(e) => {
            return methods
                .iter()
                .map(|&m| RepResult::failure(scenario, m, rep, theta_i, e.to_string()))
                .collect()
        }
    };
    let est_rng = estimator_stream(scenario, master_seed, rep as u64);
    estimate_methods(&data, methods, k_sl, k_outer, &est_rng)
        .into_iter()
        .map(|(m, outcome)| match outcome {
            Ok(r) => RepResult {
                scenario: scenario.id(),
                method: m,
                rep,
                theta_i,
                ate_hat: r.ate,
                var_hat: r.se * r.se,
                ci_low: r.ci.0,
                ci_high: r.ci.1,
                failed: false,
                reason: String::new(),
            },
            Err(e) => RepResult::failure(scenario, m, rep, theta_i, e.to_string()),
        })
        .collect()
}

/// Runs each method on `data` from the estimator stream `rng`. The
/// propensity model is fit once per library and shared.
pub fn estimate_methods(
    data: &ObservedData,
    methods: &[MethodId],
    k_sl: usize,
    k_outer: usize,
    rng: &RngState,
) -> Vec<(MethodId, Result<TmleResult>)> {
    let mut g_cache: BTreeMap<&'static str, std::result::Result<PropensityEstimate, String>> = BTreeMap::new();
    methods
        .iter()
        .map(|&m| {
            let cfg = EstimatorConfig {
                method: m.method(),
                library: m.preset().library(),
                k_sl,
                k_outer,
            };
            let g = g_cache
                .entry(m.preset().as_str())
                .or_insert_with(|| estimate_g(data, &cfg.library, k_sl, &mut g_stream(rng)).map_err(|e| e.to_string()))
                .clone();
            let outcome = match g {
                Ok(g) => run_with_g(data, &cfg, &g, rng),
                Err(msg) => Err(Error::Numerical(format!("propensity fit failed: {msg}"))),
            };
            (m, outcome)
        })
        .collect()
}

/// Single (scenario, method, replicate) result.
pub fn run_repetition(
    scenario: &ScenarioConfig,
    method: MethodId,
    rep: usize,
    master_seed: u64,
    k_sl: usize,
    k_outer: usize,
) -> RepResult {
    run_replicate(scenario, &[method], rep, master_seed, k_sl, k_outer).remove(0)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// All replicates of one scenario, ordered by (method order, rep).
pub fn run_scenario(
    scenario: &ScenarioConfig,
    methods: &[MethodId],
    n_reps: usize,
    master_seed: u64,
    k_sl: usize,
    k_outer: usize,
    workers: usize,
) -> Result<Vec<RepResult>> {
    if n_reps < 1 {
        return Err(Error::domain("n_reps must be at least 1"));
    }
    let per_rep: Vec<Vec<RepResult>> = pool(workers)?.install(|| {
        (0..n_reps)
            .into_par_iter()
            .map(|rep| run_replicate(scenario, methods, rep, master_seed, k_sl, k_outer))
            .collect()
    });
    let mut out = Vec::with_capacity(n_reps * methods.len());
    for (k, _) in methods.iter().enumerate() {
        for rows in &per_rep {
            out.push(rows[k].clone());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub coverage: f64,
    pub coverage_mc_band: (f64, f64),
    pub rel_bias: f64,
    pub rel_error: f64,
    pub empse: f64,
    pub modse: f64,
    pub mean_ate: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    pub n_reps: usize,
    pub n_effective: usize,
    pub n_failed: usize,
    /// `None` when fewer than two replicates succeeded.
    pub metrics: Option<MetricsSummary>,
}

/// `p +- 1.96 sqrt(p (1 - p) / n)` at `p = 0.95`.
pub fn coverage_mc_band(n: usize) -> (f64, f64) {
    let p = 0.95;
    let half = Z_95 * (p * (1.0 - p) / n as f64).sqrt();
    (p - half, p + half)
}

/// Metrics for one (scenario, method) group of replicates.
pub fn summarize(rows: &[&RepResult]) -> MetricsEntry {
    let ok: Vec<&RepResult> = rows.iter().copied().filter(|r| !r.failed).collect();
    let n = ok.len();
    let entry = |metrics| MetricsEntry {
        n_reps: rows.len(),
        n_effective: n,
        n_failed: rows.len() - n,
        metrics,
    };
    if n < 2 {
        return entry(None);
    }
    // Sums are taken in replicate order so row permutations do not change
    // the result.
    let mut sorted = ok;
    sorted.sort_by_key(|r| r.rep);
    let nf = n as f64;
    let theta = sorted.iter().map(|r| r.theta_i).sum::<f64>() / nf;
    let mean_ate = sorted.iter().map(|r| r.ate_hat).sum::<f64>() / nf;
    let covered = sorted
        .iter()
        .filter(|r| r.ci_low <= theta && theta <= r.ci_high)
        .count();
    let modse = (sorted.iter().map(|r| r.var_hat).sum::<f64>() / nf).sqrt();
    let empse = (sorted.iter().map(|r| (r.ate_hat - mean_ate).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let bias = sorted.iter().map(|r| r.ate_hat - r.theta_i).sum::<f64>() / nf;
    entry(Some(MetricsSummary {
        coverage: covered as f64 / nf,
        coverage_mc_band: coverage_mc_band(n),
        rel_bias: 100.0 * bias / theta,
        rel_error: 100.0 * (modse / empse - 1.0),
        empse,
        modse,
        mean_ate,
        theta,
    }))
}

/// Metrics keyed by scenario id, then method id.
pub fn compute_metrics(results: &[RepResult]) -> BTreeMap<String, BTreeMap<String, MetricsEntry>> {
    let mut groups: BTreeMap<(String, MethodId), Vec<&RepResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.scenario.clone(), r.method)).or_default().push(r);
    }
    let mut out: BTreeMap<String, BTreeMap<String, MetricsEntry>> = BTreeMap::new();
    for ((s, m), rows) in groups {
        out.entry(s)
            .or_default()
            .insert(m.as_str().to_string(), summarize(&rows));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsDiagnosticsRow {
    pub n_obs: usize,
    pub prevalence: u32,
    pub exposure: u8,
    pub ps_min: f64,
    pub ps_mean: f64,
    pub ps_max: f64,
    pub count_above_mean: f64,
    pub count_above_min: usize,
    pub count_above_max: usize,
}

/// Generating propensity scores by (sample size, prevalence, exposure
/// group), pooled over replicates, with per-replicate counts above the
/// upper truncation bound. Uses the simulation's replicate streams.
pub fn ps_diagnostics(
    n_obs: usize,
    prevalence: Prevalence,
    n_reps: usize,
    master_seed: u64,
) -> Result<Vec<PsDiagnosticsRow>> {
    if n_reps < 1 {
        return Err(Error::domain("n_reps must be at least 1"));
    }
    let cfg = ScenarioConfig::new(n_obs, prevalence, Extrapolation::None);
    let cut = crate::tmle::G_BOUNDS.1;
    let mut rows = Vec::new();
    for group in [0u8, 1u8] {
        let (mut lo, mut hi, mut sum, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        let mut above = Vec::with_capacity(n_reps);
        for rep in 0..n_reps {
            let ds = simulate_dataset(&cfg, &mut cfg.replicate_stream(master_seed, rep as u64))?;
            let mut k = 0;
            for (&a, &ps) in ds.a.iter().zip(&ds.true_ps) {
                if a != f64::from(group) {
                    continue;
                }
                lo = lo.min(ps);
                hi = hi.max(ps);
                sum += ps;
                count += 1;
                if ps > cut {
                    k += 1;
                }
            }
            above.push(k);
        }
        rows.push(PsDiagnosticsRow {
            n_obs,
            prevalence: prevalence.percent(),
            exposure: group,
            ps_min: lo,
            ps_mean: sum / count.max(1) as f64,
            ps_max: hi,
            count_above_mean: above.iter().sum::<usize>() as f64 / n_reps as f64,
            count_above_min: *above.iter().min().expect("n_reps >= 1"),
            count_above_max: *above.iter().max().expect("n_reps >= 1"),
        });
    }
    Ok(rows)
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v}")
    }
}

pub fn write_reps_csv(path: &Path, results: &[RepResult], master_seed: u64) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# master_seed={master_seed}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario", "method", "rep", "theta_i", "ate_hat", "var_hat", "ci_low", "ci_high", "failed", "reason",
    ])?;
    for r in results {
        w.write_record([
            r.scenario.clone(),
            r.method.as_str().to_string(),
            r.rep.to_string(),
            num(r.theta_i),
            num(r.ate_hat),
            num(r.var_hat),
            num(r.ci_low),
            num(r.ci_high),
            r.failed.to_string(),
            r.reason.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct SummaryMeta {
    pub master_seed: u64,
    pub n_reps: usize,
    pub k_sl: usize,
    pub k_outer: usize,
    pub methods: Vec<&'static str>,
    pub scenarios: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SummaryFile<'a> {
    pub meta: SummaryMeta,
    pub results: &'a BTreeMap<String, BTreeMap<String, MetricsEntry>>,
}

impl SummaryMeta {
    pub fn from_config(cfg: &SimulationConfig) -> Self {
        SummaryMeta {
            master_seed: cfg.master_seed,
            n_reps: cfg.n_reps,
            k_sl: cfg.k_sl,
            k_outer: cfg.k_outer,
            methods: cfg.methods.iter().map(|m| m.as_str()).collect(),
            scenarios: cfg.scenarios.iter().map(ScenarioConfig::id).collect(),
        }
    }
}

pub fn write_summary_json(
    path: &Path,
    meta: SummaryMeta,
    metrics: &BTreeMap<String, BTreeMap<String, MetricsEntry>>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &SummaryFile { meta, results: metrics })?;
    writeln!(out)?;
    Ok(())
}

/// Tidy `n_obs,prevalence,extrapolation,method,metric,value` rows for the
/// coverage, relative bias and relative error panels.
pub fn write_figure_csv(
    path: &Path,
    scenarios: &[ScenarioConfig],
    metrics: &BTreeMap<String, BTreeMap<String, MetricsEntry>>,
    master_seed: u64,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# master_seed={master_seed}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_obs", "prevalence", "extrapolation", "method", "metric", "value"])?;
    for s in scenarios {
        let Some(by_method) = metrics.get(&s.id()) else {
            continue;
        };
        for m in MethodId::ALL {
            let Some(Some(summary)) = by_method.get(m.as_str()).map(|e| e.metrics.as_ref()) else {
                continue;
            };
            let values = [
                ("coverage", summary.coverage),
                ("coverage_mc_low", summary.coverage_mc_band.0),
                ("coverage_mc_high", summary.coverage_mc_band.1),
                ("rel_bias", summary.rel_bias),
                ("rel_error", summary.rel_error),
            ];
            for (metric, v) in values {
                w.write_record([
                    s.n_obs.to_string(),
                    s.prevalence.percent().to_string(),
                    s.extrapolation.as_str().to_string(),
                    m.as_str().to_string(),
                    metric.to_string(),
                    num(v),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs the whole sweep, calling `progress` after each scenario.
pub fn run_simulation(
    cfg: &SimulationConfig,
    mut progress: impl FnMut(&ScenarioConfig, &[RepResult]),
) -> Result<Vec<RepResult>> {
    let mut all = Vec::new();
    for s in &cfg.scenarios {
        let rows = run_scenario(
            s,
            &cfg.methods,
            cfg.n_reps,
            cfg.master_seed,
            cfg.k_sl,
            cfg.k_outer,
            cfg.workers,
        )?;
        progress(s, &rows);
        all.extend(rows);
    }
    Ok(all)
}

/// Writes `reps.csv`, `summary.json` and `figure.csv` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &SimulationConfig, results: &[RepResult]) -> Result<()> {
    let metrics = compute_metrics(results);
    write_reps_csv(&dir.join("reps.csv"), results, cfg.master_seed)?;
    write_summary_json(&dir.join("summary.json"), SummaryMeta::from_config(cfg), &metrics)?;
    write_figure_csv(&dir.join("figure.csv"), &cfg.scenarios, &metrics, cfg.master_seed)?;
    Ok(())
}

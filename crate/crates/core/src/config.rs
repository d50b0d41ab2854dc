//! Run configuration: defaults, flat JSON config files and command-line
//! overrides, merged in that order of increasing precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dgm::{Extrapolation, Prevalence, ScenarioConfig};
use crate::error::{Error, Result};
use crate::simulation::{scenario_grid, MethodId, SimulationConfig};
use crate::superlearner::LibraryPreset;

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_N_REPS: usize = 1000;
pub const DEFAULT_K_SL: usize = 10;
pub const DEFAULT_K_OUTER: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Estimate,
    Simulate,
    Diagnostics,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "estimate" => Ok(Mode::Estimate),
            "simulate" => Ok(Mode::Simulate),
            "diagnostics" => Ok(Mode::Diagnostics),
            _ => Err(Error::Config(format!(
                "unknown mode '{s}' (expected estimate, simulate or diagnostics)"
            ))),
        }
    }
}

/// Every setting as an optional value. Used both for the JSON config file
/// and for command-line overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub mode: Option<String>,
    pub scenario: Option<String>,
    pub methods: Option<String>,
    pub n_reps: Option<usize>,
    pub seed: Option<u64>,
    pub k_sl: Option<usize>,
    pub k_outer: Option<usize>,
    pub library: Option<String>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub full: Option<bool>,
}

impl PartialConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: PartialConfig) -> PartialConfig {
        PartialConfig {
            mode: over.mode.or(self.mode),
            scenario: over.scenario.or(self.scenario),
            methods: over.methods.or(self.methods),
            n_reps: over.n_reps.or(self.n_reps),
            seed: over.seed.or(self.seed),
            k_sl: over.k_sl.or(self.k_sl),
            k_outer: over.k_outer.or(self.k_outer),
            library: over.library.or(self.library),
            workers: over.workers.or(self.workers),
            out: over.out.or(self.out),
            input: over.input.or(self.input),
            full: over.full.or(self.full),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub scenarios: Vec<ScenarioConfig>,
    pub methods: Vec<MethodId>,
    pub n_reps: usize,
    pub master_seed: u64,
    pub k_sl: usize,
    pub k_outer: usize,
    pub library: LibraryPreset,
    pub workers: usize,
    pub out: PathBuf,
    pub input: Option<PathBuf>,
}

impl RunConfig {
    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            scenarios: self.scenarios.clone(),
            methods: self.methods.clone(),
            n_reps: self.n_reps,
            master_seed: self.master_seed,
            k_sl: self.k_sl,
            k_outer: self.k_outer,
            workers: self.workers,
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Parses `all`, a `;`-separated list of `n=200,prev=80,extrap=high`
/// selectors, or scenario ids like `n200_p80_xhigh`.
pub fn parse_scenarios(s: &str) -> Result<Vec<ScenarioConfig>> {
    let s = s.trim();
    if s == "all" {
        return Ok(scenario_grid());
    }
    s.split(';').map(parse_one_scenario).collect()
}

fn parse_one_scenario(s: &str) -> Result<ScenarioConfig> {
    let s = s.trim();
    if let Some(found) = scenario_grid().into_iter().find(|c| c.id() == s) {
        return Ok(found);
    }
    let bad = |msg: String| Error::Config(format!("scenario '{s}': {msg}"));
    let (mut n, mut prev, mut extrap) = (None, None, None);
    for part in s.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got '{part}'")))?;
        let v = v.trim();
        match k.trim() {
            "n" => {
                let parsed: usize = v.parse().map_err(|_| bad(format!("bad sample size '{v}'")))?;
                if parsed < 2 {
                    return Err(bad("sample size must be at least 2".into()));
                }
                n = Some(parsed);
            }
            "prev" => {
                let p = v
                    .trim_end_matches('%')
                    .parse::<u32>()
                    .ok()
                    .and_then(Prevalence::from_percent)
                    .ok_or_else(|| bad(format!("prevalence must be 50 or 80, got '{v}'")))?;
                prev = Some(p);
            }
            "extrap" => {
                extrap = Some(match v {
                    "none" => Extrapolation::None,
                    "high" => Extrapolation::High,
                    _ => return Err(bad(format!("extrapolation must be none or high, got '{v}'"))),
                });
            }
            other => return Err(bad(format!("unknown key '{other}'"))),
        }
    }
    match (n, prev, extrap) {
        (Some(n), Some(p), Some(e)) => Ok(ScenarioConfig::new(n, p, e)),
        _ => Err(bad("needs n, prev and extrap".into())),
    }
}

pub fn parse_methods(s: &str) -> Result<Vec<MethodId>> {
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let m = MethodId::parse(tok).ok_or_else(|| {
            Error::Config(format!(
                "unknown method '{tok}' (expected tmle, cvtmle_q, tmle_rf or cvtmle_q_rf)"
            ))
        })?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no methods given".into()));
    }
    Ok(out)
}

fn positive(name: &str, v: usize) -> Result<usize> {
    if v == 0 {
        return Err(Error::Config(format!("{name} must be positive")));
    }
    Ok(v)
}

/// Fills defaults and validates. `full` forces the complete grid: all
/// scenarios, all four methods and 1000 replicates.
pub fn resolve(p: PartialConfig) -> Result<RunConfig> {
    let mode = Mode::parse(p.mode.as_deref().unwrap_or("simulate"))?;
    let full = p.full.unwrap_or(false);
    let scenarios = if full {
        scenario_grid()
    } else {
        parse_scenarios(p.scenario.as_deref().unwrap_or("all"))?
    };
    let library = match p.library.as_deref() {
        None => LibraryPreset::Default,
        Some(s) => LibraryPreset::parse(s)
            .ok_or_else(|| Error::Config(format!("unknown library '{s}' (expected default or rf)")))?,
    };
    let mut methods = match (&p.methods, full, mode) {
        (_, true, _) => MethodId::ALL.to_vec(),
        (Some(m), _, _) => parse_methods(m)?,
        (None, _, Mode::Estimate) => vec![MethodId::Tmle, MethodId::CvtmleQ],
        (None, _, _) => MethodId::ALL.to_vec(),
    };
    if mode == Mode::Estimate && library == LibraryPreset::Rf {
        for m in &mut methods {
            *m = MethodId::from_parts(m.method(), LibraryPreset::Rf);
        }
        methods.dedup();
    }
    let k_sl = p.k_sl.unwrap_or(DEFAULT_K_SL);
    let k_outer = p.k_outer.unwrap_or(DEFAULT_K_OUTER);
    if k_sl < 2 || k_outer < 2 {
        return Err(Error::Config("fold counts must be at least 2".into()));
    }
    let cfg = RunConfig {
        mode,
        scenarios,
        methods,
        n_reps: positive(
            "n_reps",
            if full {
                DEFAULT_N_REPS
            } else {
                p.n_reps.unwrap_or(DEFAULT_N_REPS)
            },
        )?,
        master_seed: p.seed.unwrap_or(DEFAULT_SEED),
        k_sl,
        k_outer,
        library,
        workers: positive("workers", p.workers.unwrap_or_else(default_workers))?,
        out: p.out.unwrap_or_else(|| PathBuf::from("out")),
        input: p.input,
    };
    if cfg.mode == Mode::Estimate && cfg.input.is_none() {
        return Err(Error::Config("estimate mode needs --input".into()));
    }
    Ok(cfg)
}

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use cvtmle::config::{resolve, Mode, PartialConfig, RunConfig};
use cvtmle::dgm::{simulate_dataset, write_dataset_csv};
use cvtmle::rng::derive_substream;
use cvtmle::simulation::{estimate_methods, ps_diagnostics, run_simulation, write_outputs, MethodId};
use cvtmle::tmle::{Diagnostics, Fluctuation, ObservedData};
use cvtmle::Error;

/// TMLE and CVTMLE[Q] estimation of the average treatment effect, and the
/// Monte Carlo study comparing them.
#[derive(Parser, Debug)]
#[command(name = "cvtmle", version)]
struct Cli {
    /// estimate, simulate or diagnostics
    #[arg(long)]
    mode: Option<String>,
    /// `all`, `n=200,prev=80,extrap=high`, or ids like `n200_p80_xhigh`;
    /// separate several with `;`
    #[arg(long)]
    scenario: Option<String>,
    /// Comma-separated: tmle, cvtmle_q, tmle_rf, cvtmle_q_rf
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    n_reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_sl: Option<usize>,
    #[arg(long)]
    k_outer: Option<usize>,
    /// default or rf
    #[arg(long)]
    library: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (simulate and diagnostics modes)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat JSON file with any of the settings above; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV for estimate mode: columns `a`, `y` and covariates
    #[arg(long)]
    input: Option<PathBuf>,
    /// Complete grid: all scenarios, all methods, 1000 replicates
    #[arg(long)]
    full: bool,
    /// Also write the data set of this replicate for each scenario
    #[arg(long)]
    dump_rep: Option<usize>,
}

const ROLE_ESTIMATE: u64 = 3;

#[derive(Serialize)]
struct EstimateRecord<'a> {
    method: MethodId,
    master_seed: u64,
    n: usize,
    ate: f64,
    se: f64,
    ci: (f64, f64),
    epsilon: &'a Fluctuation,
    diagnostics: &'a Diagnostics,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data { .. } | Error::SingleClass { .. } | Error::Csv(_) | Error::Dimension { .. } => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dump_rep = cli.dump_rep;
    let result = load_config(cli).and_then(|cfg| match cfg.mode {
        Mode::Estimate => estimate(&cfg),
        Mode::Simulate => simulate(&cfg, dump_rep),
        Mode::Diagnostics => diagnostics(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: Cli) -> cvtmle::Result<RunConfig> {
    let file = match &cli.config {
        Some(p) => PartialConfig::from_json_file(p)?,
        None => PartialConfig::default(),
    };
    let flags = PartialConfig {
        mode: cli.mode,
        scenario: cli.scenario,
        methods: cli.methods,
        n_reps: cli.n_reps,
        seed: cli.seed,
        k_sl: cli.k_sl,
        k_outer: cli.k_outer,
        library: cli.library,
        workers: cli.workers,
        out: cli.out,
        input: cli.input,
        full: cli.full.then_some(true),
    };
    resolve(file.overlay(flags))
}

fn estimate(cfg: &RunConfig) -> cvtmle::Result<()> {
    let path = cfg.input.as_ref().expect("validated by resolve");
    let data = ObservedData::from_csv(path).map_err(|e| match e {
        Error::Io(io) => Error::Data {
            row: 0,
            message: format!("{}: {io}", path.display()),
        },
        other => other,
    })?;
    data.check_classes()?;
    if data.n() < cfg.k_sl.max(cfg.k_outer) {
        return Err(Error::Data {
            row: data.n(),
            message: format!("{} rows is fewer than the number of folds", data.n()),
        });
    }
    let rng = derive_substream(cfg.master_seed, 0, ROLE_ESTIMATE);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (m, r) in estimate_methods(&data, &cfg.methods, cfg.k_sl, cfg.k_outer, &rng) {
        let r = r?;
        let rec = EstimateRecord {
            method: m,
            master_seed: cfg.master_seed,
            n: data.n(),
            ate: r.ate,
            se: r.se,
            ci: r.ci,
            epsilon: &r.epsilon,
            diagnostics: &r.diagnostics,
        };
        serde_json::to_writer(&mut out, &rec)?;
        writeln!(out)?;
    }
    Ok(())
}

fn prepare_out_dir(dir: &Path, files: &[&str]) -> cvtmle::Result<()> {
    fs::create_dir_all(dir)?;
    for f in files {
        fs::File::create(dir.join(f))?;
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, dump_rep: Option<usize>) -> cvtmle::Result<()> {
    prepare_out_dir(&cfg.out, &["reps.csv", "summary.json", "figure.csv"])?;
    if let Some(rep) = dump_rep {
        for s in &cfg.scenarios {
            let ds = simulate_dataset(s, &mut s.replicate_stream(cfg.master_seed, rep as u64))?;
            write_dataset_csv(&ds, &cfg.out.join(format!("data_{}_rep{rep}.csv", s.id())))?;
        }
    }
    let sim = cfg.simulation();
    let total = sim.scenarios.len();
    let mut done = 0;
    let results = run_simulation(&sim, |s, rows| {
        done += 1;
        let failed = rows.iter().filter(|r| r.failed).count();
        eprintln!("[{done}/{total}] {} : {} rows, {failed} failed", s.id(), rows.len());
    })?;
    write_outputs(&cfg.out, &sim, &results)?;
    eprintln!("wrote {}", cfg.out.display());
    Ok(())
}

fn diagnostics(cfg: &RunConfig) -> cvtmle::Result<()> {
    prepare_out_dir(&cfg.out, &["ps_diagnostics.csv"])?;
    let mut cells: Vec<_> = cfg.scenarios.iter().map(|s| (s.n_obs, s.prevalence)).collect();
    cells.sort();
    cells.dedup();
    let file = fs::File::create(cfg.out.join("ps_diagnostics.csv"))?;
    let mut file = std::io::BufWriter::new(file);
    writeln!(file, "# master_seed={}", cfg.master_seed)?;
    let mut w = csv::Writer::from_writer(file);
    for (n, p) in cells {
        for row in ps_diagnostics(n, p, cfg.n_reps, cfg.master_seed)? {
            w.serialize(&row)?;
            println!(
                "n={:<5} prev={}% A={}  ps min {:.3} mean {:.3} max {:.3}  count>0.975 mean {:.1} range [{}, {}]",
                row.n_obs,
                row.prevalence,
                row.exposure,
                row.ps_min,
                row.ps_mean,
                row.ps_max,
                row.count_above_mean,
                row.count_above_min,
                row.count_above_max
            );
        }
    }
    w.flush()?;
    Ok(())
}

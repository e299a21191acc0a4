//! Command-line front end: graph generation, spectral reports, simulation
//! scenarios, the connectivity table and the self-check suite.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Deserialize;

use crate::dynamics::{self, TimeGrid};
use crate::generators;
use crate::graph::{Edge, OrientedNetwork};
use crate::schedule::CouplingSchedule;
use crate::spectral;
use crate::table;
use crate::verify;

#[derive(Debug, Parser)]
#[command(
    name = "consensus-lab",
    version,
    about = "Consensus protocol analysis and simulation"
)]
pub struct Cli {
    /// Seed for random generators and ensembles.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for ensembles and seed sweeps.
    #[arg(long, global = true, env = "CONSENSUS_LAB_THREADS")]
    pub threads: Option<usize>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a benchmark graph as JSON.
    Generate {
        #[arg(long, value_enum)]
        family: Family,
        /// Number of vertices.
        #[arg(long)]
        n: Option<usize>,
        /// Vertices per side of a bipartite graph.
        #[arg(long)]
        m: Option<usize>,
        /// Degree parameter.
        #[arg(long)]
        d: Option<usize>,
    },
    /// Spectral report of a graph file as JSON.
    Analyze { graph: PathBuf },
    /// Run a simulation scenario and write CSV.
    Simulate {
        scenario: PathBuf,
        /// One column per path instead of ensemble moments.
        #[arg(long)]
        per_path: bool,
    },
    /// Connectivity of the cycle-power and bipartite families as CSV.
    ReproduceTable {
        #[arg(long, default_value_t = 30)]
        seeds: usize,
    },
    /// Run the self-check suite and print a pass/fail table.
    Verify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Path,
    Complete,
    Star,
    CyclePower,
    BipartitePerm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Constant,
    Switching,
}

fn one() -> f64 {
    1.0
}

fn one_path() -> usize {
    1
}

/// Simulation scenario. Relative graph paths resolve against the scenario
/// file's directory. A switching schedule cycles through `graph_file`, then
/// `switch_graphs`, or, when none are given, the network with every edge
/// reversed.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub graph_file: PathBuf,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "one")]
    pub gain: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: Option<f64>,
    #[serde(default = "one_path")]
    pub n_paths: usize,
    pub seed: Option<u64>,
    #[serde(default)]
    pub schedule: ScheduleKind,
    pub switch_period: Option<f64>,
    #[serde(default)]
    pub switch_graphs: Vec<PathBuf>,
    /// Initial state; the first unit vector when omitted.
    pub x0: Option<Vec<f64>>,
    /// Approximate number of output rows.
    pub records: Option<usize>,
}

pub struct SimulationOutput {
    pub csv: String,
    pub summary: String,
}

pub fn generate(
    family: Family,
    n: Option<usize>,
    m: Option<usize>,
    d: Option<usize>,
    seed: u64,
) -> anyhow::Result<OrientedNetwork> {
    let need =
        |v: Option<usize>, flag: &str| v.with_context(|| format!("--{flag} is required for this family"));
    Ok(match family {
        Family::Path => generators::path(need(n, "n")?)?,
        Family::Complete => generators::complete(need(n, "n")?)?,
        Family::Star => generators::star(need(n, "n")?)?,
        Family::CyclePower => generators::cycle_power(need(n, "n")?, need(d, "d")?)?,
        Family::BipartitePerm => {
            generators::random_bipartite_permutation(need(m, "m")?, need(d, "d")?, seed)?
        }
    })
}

fn reversed(net: &OrientedNetwork) -> anyhow::Result<OrientedNetwork> {
    let edges = net
        .edges()
        .iter()
        .map(|e| Edge {
            tail: e.head,
            head: e.tail,
            conductance: e.conductance,
        })
        .collect();
    Ok(OrientedNetwork::new(net.n(), edges, net.is_directed())?)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn build_schedule(scenario: &Scenario, base: &Path) -> anyhow::Result<CouplingSchedule> {
    let path = resolve(base, &scenario.graph_file);
    let net = OrientedNetwork::load(&path).with_context(|| format!("loading graph {}", path.display()))?;
    let schedule = match scenario.schedule {
        ScheduleKind::Constant => CouplingSchedule::constant(net.coupling_matrix())?,
        ScheduleKind::Switching => {
            let period = scenario
                .switch_period
                .context("switching schedules need switch_period")?;
            let mut matrices = vec![net.coupling_matrix()];
            if scenario.switch_graphs.is_empty() {
                matrices.push(reversed(&net)?.coupling_matrix());
            }
            for g in &scenario.switch_graphs {
                let p = resolve(base, g);
                let other =
                    OrientedNetwork::load(&p).with_context(|| format!("loading graph {}", p.display()))?;
                matrices.push(other.coupling_matrix());
            }
            CouplingSchedule::switching(matrices, period)?
        }
    };
    Ok(schedule.with_gain(scenario.gain)?.with_sigma(scenario.sigma)?)
}

pub fn simulate(
    scenario: &Scenario,
    base: &Path,
    seed_override: Option<u64>,
    per_path: bool,
) -> anyhow::Result<SimulationOutput> {
    let schedule = build_schedule(scenario, base)?;
    let n = schedule.n();
    let x0 = match &scenario.x0 {
        Some(v) if v.len() != n => bail!("x0 has {} entries but the graph has {n} vertices", v.len()),
        Some(v) => DVector::from_column_slice(v),
        None => DVector::from_fn(n, |i, _| if i == 0 { 1.0 } else { 0.0 }),
    };
    let horizon = scenario.horizon;
    let dt = match scenario.dt {
        Some(dt) => dt,
        None => schedule.default_dt(horizon)?,
    };
    let grid = TimeGrid::new(horizon, dt)?.with_records(scenario.records.unwrap_or(200));
    let seed = seed_override.or(scenario.seed).unwrap_or(0);
    let mut summary = String::new();
    let mut csv = String::new();

    if schedule.is_constant() {
        let d = schedule.effective_coupling_at(0.0)?;
        let c = spectral::classify_convergent(&d)?;
        writeln!(summary, "alpha = {:.6}, convergent = {}", c.alpha, c.convergent)?;
    } else {
        let margin = dynamics::schedule_margin(&schedule, horizon)? * schedule.gain();
        let avg = spectral::asymptotic_dissipativity_estimate(&schedule, horizon, dt.max(horizon / 1e4))?;
        writeln!(
            summary,
            "min margin = {margin:.6}, time-averaged lambda_max = {avg:.6}"
        )?;
    }

    if scenario.sigma == 0.0 {
        let tr = dynamics::integrate_deterministic(&schedule, &x0, grid)?;
        csv.push_str("time,off_consensus\n");
        for (t, v) in tr.times.iter().zip(&tr.off_consensus) {
            writeln!(csv, "{t},{v:e}")?;
        }
        if let Some(rate) = dynamics::fit_decay_rate(&tr.times, &tr.off_consensus, 0.5 * horizon, horizon) {
            writeln!(summary, "fitted decay rate = {rate:.6}")?;
        }
        return Ok(SimulationOutput { csv, summary });
    }

    if per_path {
        let ens = dynamics::integrate_sde(&schedule, &x0, grid, scenario.n_paths, seed)?;
        let map = crate::pseudosim::ReductionMap::difference(n)?;
        let columns: Vec<Vec<f64>> = (0..ens.n_paths()).map(|p| ens.off_consensus(p, &map)).collect();
        csv.push_str("time");
        for p in 0..columns.len() {
            write!(csv, ",path_{p}")?;
        }
        csv.push('\n');
        for (r, t) in ens.times.iter().enumerate() {
            write!(csv, "{t}")?;
            for col in &columns {
                write!(csv, ",{:e}", col[r])?;
            }
            csv.push('\n');
        }
        return Ok(SimulationOutput { csv, summary });
    }

    let stats = dynamics::ensemble_statistics(&schedule, &x0, grid, scenario.n_paths, seed)?;
    let map = crate::pseudosim::ReductionMap::difference(n)?;
    let oracle = dynamics::integrate_moment_odes(&schedule, &(map.s() * &x0), grid)?;
    let limit = if schedule.is_constant() {
        dynamics::stationary_prediction(&schedule.effective_coupling_at(0.0)?, schedule.sigma())
            .ok()
            .map(|p| p.limit_second_moment)
    } else {
        None
    };
    csv.push_str("time,second_moment,standard_error,prediction,stationary_limit\n");
    for r in 0..stats.times.len() {
        write!(
            csv,
            "{},{:e},{:e},{:e},",
            stats.times[r],
            stats.second_moment[r],
            stats.second_moment_se[r],
            oracle.off_consensus_second_moment[r]
        )?;
        if let Some(l) = limit {
            write!(csv, "{l:e}")?;
        }
        csv.push('\n');
    }
    write!(
        summary,
        "late-window second moment = {:.6e}",
        stats.late_window_mean()
    )?;
    if let Some(l) = limit {
        write!(summary, ", stationary prediction = {l:.6e}")?;
    }
    summary.push('\n');
    Ok(SimulationOutput { csv, summary })
}

fn emit(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Reports go to stdout when the main output goes to a file, else to stderr.
fn report(out: &Option<PathBuf>, text: &str) {
    if out.is_some() {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
}

/// Runs a parsed command line. Returns whether every requested check passed.
pub fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(k) = cli.threads {
        if k == 0 {
            bail!("--threads must be at least 1");
        }
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let seed = cli.seed;
    match cli.command {
        Command::Generate { family, n, m, d } => {
            let net = generate(family, n, m, d, seed.unwrap_or(0))?;
            emit(&cli.out, &(net.to_json()? + "\n"))?;
            let c = (net.m() + 1).saturating_sub(net.n());
            report(&cli.out, &format!("n = {}, m = {}, c = {c}\n", net.n(), net.m()));
        }
        Command::Analyze { graph: path } => {
            let net =
                OrientedNetwork::load(&path).with_context(|| format!("loading graph {}", path.display()))?;
            let report = spectral::analyze(&net)?;
            emit(&cli.out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
        Command::Simulate { scenario, per_path } => {
            let text =
                fs::read_to_string(&scenario).with_context(|| format!("reading {}", scenario.display()))?;
            let parsed: Scenario = serde_json::from_str(&text).context("parsing scenario")?;
            let base = scenario.parent().map(Path::to_path_buf).unwrap_or_default();
            let result = simulate(&parsed, &base, seed, per_path)?;
            emit(&cli.out, &result.csv)?;
            report(&cli.out, &result.summary);
        }
        Command::ReproduceTable { seeds } => {
            if seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            let t = table::reproduce(seeds, seed.unwrap_or(0))?;
            emit(&cli.out, &t.to_csv())?;
        }
        Command::Verify => {
            let outcomes = verify::run_all(seed.unwrap_or(0));
            let text = verify::render(&outcomes);
            emit(&cli.out, &text)?;
            return Ok(outcomes.iter().all(|o| o.passed));
        }
    }
    Ok(true)
}

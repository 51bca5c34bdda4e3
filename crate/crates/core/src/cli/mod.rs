//! Command-line front end: configuration loading, single runs with CSV and
//! diagnostics output, and the discrete-vs-continuous convergence
//! experiment.
//!
//! Exit codes: 0 ok, 2 configuration, 3 solver, 4 diagnostics failure,
//! 5 I/O.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::diagnostics::{self, compare_samples, Comparison, DiagnosticsReport};
use crate::history::{
    read_csv, uniform_grid, write_csv, Compartment, CsvError, Sample, Trajectory,
};
use crate::model::{lag_scheme_preset, LagScheme, ModelError, ScenarioConfig};
use crate::solver::{solve_discrete, solve_method_of_steps, DiscreteOptions, SolverError};

use self::config::{LoadedConfig, ScenarioFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_DIAGNOSTICS: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(#[from] SolverError),
    #[error("I/O error on {path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "distdelay",
    version,
    about = "Endemic model with distributed delays"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one model and write trajectory, diagnostics and plot script.
    Run(RunArgs),
    /// Run the continuous model and the d1, d3, d60 discrete models and
    /// tabulate their sup-norm gaps.
    Converge(ScenarioArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Named scenario preset (base for --config as well).
    #[arg(long)]
    pub preset: Option<String>,
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub atol: Option<f64>,
    /// Output sampling spacing in days.
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// `continuous`, a lag preset (`d1`, `d3`, `d60`) or a scheme named in
    /// the config file.
    #[arg(long, default_value = "continuous")]
    pub model: String,
    /// Reference trajectory CSV to compare against.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "on")]
    pub diagnostics: Switch,
}

/// Which system to integrate.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelChoice {
    Continuous,
    Discrete {
        name: String,
        tau: LagScheme,
        rho: LagScheme,
    },
}

impl ModelChoice {
    pub fn name(&self) -> &str {
        match self {
            ModelChoice::Continuous => "continuous",
            ModelChoice::Discrete { name, .. } => name,
        }
    }

    pub fn resolve(name: &str, loaded: &LoadedConfig) -> Result<Self, CliError> {
        if name == "continuous" {
            return Ok(ModelChoice::Continuous);
        }
        if let Some((tau, rho)) = loaded.schemes.get(name) {
            return Ok(ModelChoice::Discrete {
                name: name.to_string(),
                tau: tau.clone(),
                rho: rho.clone(),
            });
        }
        let (tau, rho) = lag_scheme_preset(name).map_err(|_| {
            CliError::Config(format!(
                "unknown model '{name}' (expected continuous, d1, d3, d60 or a config scheme)"
            ))
        })?;
        Ok(ModelChoice::Discrete {
            name: name.to_string(),
            tau,
            rho,
        })
    }
}

/// A fully resolved single run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub scenario: ScenarioConfig,
    pub discrete: DiscreteOptions,
    pub model: ModelChoice,
    pub out_dir: PathBuf,
    pub diagnostics: bool,
    pub compare: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub trajectory_csv: PathBuf,
    pub rows: usize,
    pub report: Option<DiagnosticsReport>,
    pub comparison: Option<Comparison>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match &self.report {
            Some(r) if !r.pass() => EXIT_DIAGNOSTICS,
            _ => EXIT_OK,
        }
    }
}

/// Loads the scenario from preset/config and applies command-line overrides.
pub fn load_scenario(args: &ScenarioArgs) -> Result<LoadedConfig, CliError> {
    let preset = args.preset.as_deref().unwrap_or("ebola");
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let mut file = ScenarioFile::parse(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if args.preset.is_some() {
                file.preset = args.preset.clone();
            }
            file
        }
        None => ScenarioFile::default(),
    };
    let mut loaded = file.resolve(preset)?;
    let cfg = &mut loaded.scenario;
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(r) = args.rtol {
        cfg.rtol = r;
    }
    if let Some(a) = args.atol {
        cfg.atol = a;
    }
    if let Some(s) = args.spacing {
        cfg.sample_spacing = s;
    }
    cfg.validate()?;
    Ok(loaded)
}

pub fn run_spec_from_args(args: &RunArgs) -> Result<RunSpec, CliError> {
    let loaded = load_scenario(&args.scenario)?;
    let model = ModelChoice::resolve(&args.model, &loaded)?;
    Ok(RunSpec {
        scenario: loaded.scenario,
        discrete: loaded.discrete,
        model,
        out_dir: args.scenario.out.clone(),
        diagnostics: args.diagnostics == Switch::On,
        compare: args.compare.clone(),
    })
}

pub fn simulate(
    cfg: &ScenarioConfig,
    model: &ModelChoice,
    discrete: DiscreteOptions,
) -> Result<Trajectory, SolverError> {
    match model {
        ModelChoice::Continuous => solve_method_of_steps(cfg),
        ModelChoice::Discrete { tau, rho, .. } => solve_discrete(cfg, tau, rho, discrete),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_samples(path: &Path, samples: &[Sample]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_csv(std::io::BufWriter::new(file), samples).map_err(|e| io_err(path, e))
}

fn read_samples(path: &Path) -> Result<Vec<Sample>, CliError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_csv(std::io::BufReader::new(file)).map_err(|e| match e {
        CsvError::Io(e) => io_err(path, e),
        other => CliError::Config(format!("{}: {other}", path.display())),
    })
}

fn comparison_kv(cmp: &Comparison) -> String {
    let mut out = String::new();
    for c in Compartment::ALL {
        let _ = writeln!(out, "supnorm_{}={:e}", c.name(), cmp.sup[c.index()]);
    }
    for c in Compartment::ALL {
        let _ = writeln!(out, "supnorm_rel_{}={:e}", c.name(), cmp.rel[c.index()]);
    }
    out
}

/// Executes one run and writes its artifacts into `spec.out_dir`:
/// `trajectory.csv`, `diagnostics.txt`/`diagnostics.kv` (when enabled),
/// `comparison.kv` (with a reference) and `plot.py`.
pub fn run(spec: &RunSpec) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(&spec.out_dir).map_err(|e| io_err(&spec.out_dir, e))?;
    let cfg = &spec.scenario;
    let traj = simulate(cfg, &spec.model, spec.discrete)?;

    let grid = uniform_grid(cfg.horizon, cfg.sample_spacing);
    let samples = traj.sample(&grid).map_err(SolverError::from)?;
    let csv_path = spec.out_dir.join("trajectory.csv");
    write_samples(&csv_path, &samples)?;

    let comparison = match &spec.compare {
        Some(path) => {
            let reference = read_samples(path)?;
            let cmp = compare_samples(&samples, &reference, traj.initial_total())
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            write_file(&spec.out_dir.join("comparison.kv"), &comparison_kv(&cmp))?;
            Some(cmp)
        }
        None => None,
    };

    let report = if spec.diagnostics {
        let continuous = spec.model == ModelChoice::Continuous;
        let mut report =
            diagnostics::run_diagnostics(&traj, diagnostics::GRID_SPACING, cfg.window, continuous)
                .map_err(SolverError::from)?;
        report.supnorm_vs_reference = comparison.clone();
        write_file(&spec.out_dir.join("diagnostics.txt"), &report.to_text())?;
        write_file(
            &spec.out_dir.join("diagnostics.kv"),
            &report.to_key_values(),
        )?;
        Some(report)
    } else {
        None
    };

    write_file(
        &spec.out_dir.join("plot.py"),
        &plot_script(&[(spec.model.name(), "trajectory.csv")]),
    )?;

    Ok(RunOutcome {
        trajectory_csv: csv_path,
        rows: samples.len(),
        report,
        comparison,
    })
}

/// Per-preset sup-norm gaps against the continuous reference.
#[derive(Debug, Clone, PartialEq)]
pub struct GapTable {
    /// `(model name, gaps)`; the reference itself comes first with zero gaps.
    pub rows: Vec<(String, Comparison)>,
}

impl GapTable {
    /// Per compartment: do the discrete rows' gaps strictly decrease in
    /// table order?
    pub fn monotone(&self) -> [bool; 6] {
        let mut ok = [true; 6];
        let discrete = &self.rows[1..];
        for w in discrete.windows(2) {
            for (k, flag) in ok.iter_mut().enumerate() {
                *flag &= w[1].1.sup[k] < w[0].1.sup[k];
            }
        }
        ok
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "model");
        for c in Compartment::ALL {
            let _ = write!(out, "{:>14}", c.name());
        }
        out.push('\n');
        for (name, cmp) in &self.rows {
            let _ = write!(out, "{name:<12}");
            for s in cmp.sup {
                let _ = write!(out, "{s:>14.6e}");
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<12}", "decreasing");
        for ok in self.monotone() {
            let _ = write!(out, "{:>14}", if ok { "yes" } else { "NO" });
        }
        out.push('\n');
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,S,E,I,RT,RP,D\n");
        for (name, cmp) in &self.rows {
            let vals: Vec<String> = cmp
                .sup
                .iter()
                .map(|&v| crate::history::format_sig12(v))
                .collect();
            let _ = writeln!(out, "{name},{}", vals.join(","));
        }
        out
    }
}

/// Output of [`convergence_experiment`].
#[derive(Debug)]
pub struct Experiment {
    pub table: GapTable,
    pub samples: Vec<(String, Vec<Sample>)>,
}

/// Solves the continuous model and each named discrete scheme (in
/// parallel), samples them on the scenario's output grid and tabulates the
/// sup-norm gap of each discrete solution to the continuous one.
pub fn convergence_experiment(
    cfg: &ScenarioConfig,
    schemes: &[(String, LagScheme, LagScheme)],
    discrete: DiscreteOptions,
) -> Result<Experiment, CliError> {
    let grid = uniform_grid(cfg.horizon, cfg.sample_spacing);
    let mut models = vec![ModelChoice::Continuous];
    models.extend(
        schemes
            .iter()
            .map(|(name, tau, rho)| ModelChoice::Discrete {
                name: name.clone(),
                tau: tau.clone(),
                rho: rho.clone(),
            }),
    );

    let results: Vec<Result<Vec<Sample>, SolverError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = models
            .iter()
            .map(|m| {
                let grid = &grid;
                scope.spawn(move || {
                    let traj = simulate(cfg, m, discrete)?;
                    Ok(traj.sample(grid)?)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    });

    let mut samples = Vec::with_capacity(models.len());
    for (m, r) in models.iter().zip(results) {
        samples.push((m.name().to_string(), r?));
    }
    let n0 = cfg.population;
    let reference = &samples[0].1;
    let mut rows = Vec::with_capacity(samples.len());
    for (name, s) in &samples {
        let cmp = compare_samples(s, reference, n0).map_err(|e| CliError::Config(e.to_string()))?;
        rows.push((name.clone(), cmp));
    }
    Ok(Experiment {
        table: GapTable { rows },
        samples,
    })
}

/// The three lag presets in increasing resolution.
pub fn standard_schemes() -> Vec<(String, LagScheme, LagScheme)> {
    ["d1", "d3", "d60"]
        .iter()
        .map(|n| {
            let (tau, rho) = lag_scheme_preset(n).expect("builtin preset");
            (n.to_string(), tau, rho)
        })
        .collect()
}

/// Writes per-model CSVs, `gaps.csv`, `gaps.txt` and `plot.py`; the exit
/// code is 4 when some compartment's gaps are not strictly decreasing.
pub fn run_convergence(args: &ScenarioArgs) -> Result<(Experiment, i32), CliError> {
    let loaded = load_scenario(args)?;
    let exp = convergence_experiment(&loaded.scenario, &standard_schemes(), loaded.discrete)?;
    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut files = Vec::new();
    for (name, samples) in &exp.samples {
        let file = format!("{name}.csv");
        write_samples(&out.join(&file), samples)?;
        files.push((name.clone(), file));
    }
    write_file(&out.join("gaps.csv"), &exp.table.to_csv())?;
    write_file(&out.join("gaps.txt"), &exp.table.to_text())?;
    let refs: Vec<(&str, &str)> = files
        .iter()
        .map(|(a, b)| (a.as_str(), b.as_str()))
        .collect();
    write_file(&out.join("plot.py"), &plot_script(&refs))?;
    let code = if exp.table.monotone().iter().all(|&b| b) {
        EXIT_OK
    } else {
        EXIT_DIAGNOSTICS
    };
    Ok((exp, code))
}

/// A matplotlib script that draws one panel per compartment for every
/// `(label, csv file)` pair.
pub fn plot_script(series: &[(&str, &str)]) -> String {
    let mut s = String::from(
        "# Generated by distdelay. Usage: python plot.py (run from this directory)\n\
         import csv\n\
         import matplotlib.pyplot as plt\n\n\
         SERIES = [\n",
    );
    for (label, file) in series {
        let _ = writeln!(s, "    ({label:?}, {file:?}),");
    }
    s.push_str(
        "]\n\
         COLUMNS = [\"S\", \"E\", \"I\", \"RT\", \"RP\", \"D\"]\n\n\
         def load(path):\n\
         \x20   with open(path) as f:\n\
         \x20       rows = list(csv.DictReader(f))\n\
         \x20   t = [float(r[\"t\"]) for r in rows]\n\
         \x20   return t, {c: [float(r[c]) for r in rows] for c in COLUMNS}\n\n\
         fig, axes = plt.subplots(2, 3, figsize=(14, 8), sharex=True)\n\
         for label, path in SERIES:\n\
         \x20   t, cols = load(path)\n\
         \x20   for ax, c in zip(axes.flat, COLUMNS):\n\
         \x20       ax.plot([x / 365.0 for x in t], cols[c], label=label)\n\
         for ax, c in zip(axes.flat, COLUMNS):\n\
         \x20   ax.set_title(c)\n\
         \x20   ax.set_xlabel(\"years\")\n\
         axes.flat[0].legend()\n\
         fig.tight_layout()\n\
         fig.savefig(\"compartments.png\", dpi=150)\n",
    );
    s
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => {
            let outcome = run_spec_from_args(&args).and_then(|spec| run(&spec));
            match outcome {
                Ok(o) => {
                    println!("wrote {} rows to {}", o.rows, o.trajectory_csv.display());
                    if let Some(r) = &o.report {
                        print!("{}", r.to_text());
                    } else if let Some(c) = &o.comparison {
                        print!("{}", comparison_kv(c));
                    }
                    o.exit_code()
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::Converge(args) => match run_convergence(&args) {
            Ok((exp, code)) => {
                print!("{}", exp.table.to_text());
                code
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_resolution() {
        let loaded = ScenarioFile::default().resolve("ebola").unwrap();
        assert_eq!(
            ModelChoice::resolve("continuous", &loaded).unwrap(),
            ModelChoice::Continuous
        );
        assert_eq!(ModelChoice::resolve("d3", &loaded).unwrap().name(), "d3");
        let err = ModelChoice::resolve("d4", &loaded).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn gap_table_monotonicity() {
        let row = |v: f64| Comparison {
            sup: [v; 6],
            rel: [v; 6],
        };
        let mut table = GapTable {
            rows: vec![
                ("continuous".into(), row(0.0)),
                ("d1".into(), row(3.0)),
                ("d3".into(), row(2.0)),
                ("d60".into(), row(1.0)),
            ],
        };
        assert_eq!(table.monotone(), [true; 6]);
        table.rows[3].1.sup[2] = 2.5;
        assert!(!table.monotone()[2]);
        assert!(table.to_text().contains("NO"));
        assert!(table
            .to_csv()
            .starts_with("model,S,E,I,RT,RP,D\ncontinuous,0,0,0,0,0,0\n"));
    }

    #[test]
    fn plot_script_mentions_every_series() {
        let s = plot_script(&[("continuous", "continuous.csv"), ("d1", "d1.csv")]);
        assert!(s.contains("(\"continuous\", \"continuous.csv\")"));
        assert!(s.contains("(\"d1\", \"d1.csv\")"));
    }
}

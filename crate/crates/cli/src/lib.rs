//! Batch driver: runs the experiment pipeline and writes plot-ready CSV/JSON.
//!
//! Configuration is a flat `key = value` file (`#` starts a comment) with
//! command-line overrides on top. Every command writes `manifest.json`
//! listing its outputs with SHA-256 hashes, the resolved configuration and
//! the seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use optwit::distill::normal_form;
use optwit::distill::DistillOptions;
use optwit::oracle::{efficiency_compare, wootters_concurrence};
use optwit::photonsim::{streams, Bench, CoincidenceScan, ExperimentConfig, SinusoidFit};
use optwit::pipeline::{self, ExperimentRun, PipelineOptions, StepWitness};
use optwit::slocc::CompositeArmOperator;
use optwit::witness::WitnessReport;
use optwit::StateSpec;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_BUDGET: u64 = 52 * 50_000;
pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_GRID: usize = 13;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] optwit::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(optwit::Error::StateParse(_)) | CliError::Core(optwit::Error::InvalidParameter(_)) => 2,
            CliError::Core(
                optwit::Error::Extinction(_) | optwit::Error::NearExtinction(_) | optwit::Error::NoTransmittedPairs,
            ) => 3,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Scan parameters; `l` and `l2` are 1-based axis indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanParams {
    pub l: usize,
    pub l2: usize,
    pub grid: usize,
    pub theta_max: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self { l: 1, l2: 2, grid: DEFAULT_GRID, theta_max: 2.0 * std::f64::consts::PI }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareParams {
    pub budget: u64,
    pub trials: usize,
}

impl Default for CompareParams {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET, trials: DEFAULT_TRIALS }
    }
}

/// Everything a command needs. The output directory is not part of the
/// manifest so reruns elsewhere hash identically.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub scan: ScanParams,
    pub compare: CompareParams,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            scan: ScanParams::default(),
            compare: CompareParams::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| CliError::Config(format!("{key} = {value:?}: {e}")))
}

impl RunConfig {
    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let e = &mut self.experiment;
        match key.trim() {
            "state" => e.true_state = value.trim().parse::<StateSpec>().map_err(|x| CliError::Config(x.to_string()))?,
            "seed" => e.seed = parse_value(key, value)?,
            "pairs_per_setting" => e.pairs_per_setting = parse_value(key, value)?,
            "noiseless" => e.noiseless = parse_value(key, value)?,
            "tol_dop" => e.tol_dop = Some(parse_value(key, value)?),
            "max_steps" => e.max_steps = Some(parse_value(key, value)?),
            "filter_phase_imperfection" => e.filter_phase_imperfection = parse_value(key, value)?,
            "poisson_totals" => e.poisson_totals = parse_value(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "l" => self.scan.l = parse_value(key, value)?,
            "l2" => self.scan.l2 = parse_value(key, value)?,
            "grid" => self.scan.grid = parse_value(key, value)?,
            "theta_max" => self.scan.theta_max = parse_value(key, value)?,
            "budget" => self.compare.budget = parse_value(key, value)?,
            "trials" => self.compare.trials = parse_value(key, value)?,
            other => return Err(CliError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a flat key-value file on top of the current values.
    pub fn apply_file_text(&mut self, text: &str) -> CliResult<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value, got {raw:?}", no + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.experiment.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let s = &self.scan;
        if !(1..=3).contains(&s.l) || !(1..=3).contains(&s.l2) || s.l == s.l2 {
            return Err(CliError::Config(format!("scan axes must be distinct in 1..=3, got ({}, {})", s.l, s.l2)));
        }
        if s.grid < 2 {
            return Err(CliError::Config("grid must be at least 2".into()));
        }
        if self.compare.trials == 0 {
            return Err(CliError::Config("trials must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Source state: singlet, werner:W, pure:ALPHA, decohered:A,G,E, decohered-demo, raw:<32 reals>.
    #[arg(long)]
    pub state: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pairs_per_setting: Option<u64>,
    /// Use exact expected counts instead of sampling.
    #[arg(long)]
    pub noiseless: bool,
    #[arg(long)]
    pub tol_dop: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Retardance (rad) picked up by the attenuated axis of each filter.
    #[arg(long)]
    pub filter_phase: Option<f64>,
    /// Draw pairs per setting from a Poisson distribution.
    #[arg(long)]
    pub poisson_totals: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long)]
    pub l2: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Upper end of both angle ranges (rad).
    #[arg(long)]
    pub theta_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Total pairs per trial.
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Distill, then evaluate the witness at every step: trace.csv, witness.json.
    Demo(CommonArgs),
    /// Distillation only: trace.csv.
    Distill(CommonArgs),
    /// Witness at the final step only: witness.json.
    Witness(CommonArgs),
    /// Coincidence scans before and after distillation.
    Scan(ScanArgs),
    /// Witness versus tomography at a matched pair budget.
    Compare(CompareArgs),
    /// Exact concurrence and normal form of the configured state.
    Oracle(CommonArgs),
}

#[derive(Debug, Clone, Parser)]
#[command(name = "optwit", version, about = "Optimal entanglement witness experiments on simulated photon pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

impl CommonArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            cfg.apply_file_text(&text)?;
        }
        if let Some(s) = &self.state {
            cfg.set("state", s)?;
        }
        let e = &mut cfg.experiment;
        if let Some(v) = self.seed {
            e.seed = v;
        }
        if let Some(v) = self.pairs_per_setting {
            e.pairs_per_setting = v;
        }
        if self.noiseless {
            e.noiseless = true;
        }
        if self.tol_dop.is_some() {
            e.tol_dop = self.tol_dop;
        }
        if self.max_steps.is_some() {
            e.max_steps = self.max_steps;
        }
        if let Some(v) = self.filter_phase {
            e.filter_phase_imperfection = v;
        }
        if self.poisson_totals {
            e.poisson_totals = true;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        Ok(cfg)
    }
}

impl Command {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let cfg = match self {
            Command::Demo(c) | Command::Distill(c) | Command::Witness(c) | Command::Oracle(c) => c.resolve()?,
            Command::Scan(s) => {
                let mut cfg = s.common.resolve()?;
                if let Some(v) = s.l {
                    cfg.scan.l = v;
                }
                if let Some(v) = s.l2 {
                    cfg.scan.l2 = v;
                }
                if let Some(v) = s.grid {
                    cfg.scan.grid = v;
                }
                if let Some(v) = s.theta_max {
                    cfg.scan.theta_max = v;
                }
                cfg
            }
            Command::Compare(c) => {
                let mut cfg = c.common.resolve()?;
                if let Some(v) = c.budget {
                    cfg.compare.budget = v;
                }
                if let Some(v) = c.trials {
                    cfg.compare.trials = v;
                }
                cfg
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Demo(_) => "demo",
            Command::Distill(_) => "distill",
            Command::Witness(_) => "witness",
            Command::Scan(_) => "scan",
            Command::Compare(_) => "compare",
            Command::Oracle(_) => "oracle",
        }
    }
}

/// One emitted file, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub outputs: Vec<OutputFile>,
}

/// Files written by a command, and whether the run reached its target.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub files: Vec<PathBuf>,
    /// False when distillation hit its step budget; outputs are still written.
    pub converged: bool,
}

impl CommandOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            0
        } else {
            3
        }
    }
}

struct OutputWriter {
    dir: PathBuf,
    entries: Vec<OutputFile>,
    files: Vec<PathBuf>,
}

impl OutputWriter {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        Ok(Self { dir: dir.to_path_buf(), entries: Vec::new(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
        self.entries.push(OutputFile { path: name.to_string(), sha256: sha256_hex(contents.as_bytes()) });
        self.files.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
        text.push('\n');
        self.write(name, &text)
    }

    fn finish(mut self, command: &str, cfg: &RunConfig, converged: bool) -> CliResult<CommandOutcome> {
        let manifest = RunManifest {
            version: VERSION.to_string(),
            command: command.to_string(),
            seed: cfg.experiment.seed,
            config: cfg.clone(),
            outputs: self.entries.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("plain data serializes");
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).map_err(|source| CliError::Io { path: path.clone(), source })?;
        self.files.push(path);
        Ok(CommandOutcome { files: self.files, converged })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Per-step witness output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutput {
    pub k: usize,
    #[serde(flatten)]
    pub report: WitnessReport,
    #[serde(rename = "minus_2trW")]
    pub minus_2tr_w: f64,
    #[serde(rename = "minus_2trW_dis")]
    pub minus_2tr_w_dis: f64,
    pub oracle_c_rho: f64,
    pub oracle_c_dis: f64,
}

impl From<&StepWitness> for StepOutput {
    fn from(s: &StepWitness) -> Self {
        Self {
            k: s.k,
            report: s.report.clone(),
            minus_2tr_w: -2.0 * s.report.tr_w,
            minus_2tr_w_dis: -2.0 * s.report.tr_w_dis,
            oracle_c_rho: s.oracle_c_rho,
            oracle_c_dis: s.oracle_c_dis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessOutput {
    pub state: String,
    pub converged: bool,
    pub settings_used: u64,
    pub oracle_c_rho: f64,
    pub steps: Vec<StepOutput>,
}

impl WitnessOutput {
    pub fn from_run(cfg: &RunConfig, run: &ExperimentRun) -> Self {
        Self {
            state: cfg.experiment.true_state.to_string(),
            converged: run.converged,
            settings_used: run.settings_used,
            oracle_c_rho: run.oracle_c_rho,
            steps: run.steps.iter().map(StepOutput::from).collect(),
        }
    }
}

pub fn cmd_demo(cfg: &RunConfig) -> CliResult<CommandOutcome> {
    let run = pipeline::run(&cfg.experiment)?;
    let mut out = OutputWriter::new(&cfg.out_dir)?;
    out.write("trace.csv", &run.distillation.trace.to_csv())?;
    out.write_json("witness.json", &WitnessOutput::from_run(cfg, &run))?;
    out.finish("demo", cfg, run.converged)
}

pub fn cmd_distill(cfg: &RunConfig) -> CliResult<CommandOutcome> {
    let bench = pipeline::bench(&cfg.experiment)?;
    let root = cfg.experiment.root_counting();
    let mut est = bench.marginals(cfg.experiment.pairs_per_setting, root.child(streams::DISTILL));
    let result = optwit::distill::distill_iterate_sampled(&mut est, &pipeline::distill_options(&cfg.experiment))?;
    let mut out = OutputWriter::new(&cfg.out_dir)?;
    out.write("trace.csv", &result.trace.to_csv())?;
    out.finish("distill", cfg, result.converged)
}

pub fn cmd_witness(cfg: &RunConfig) -> CliResult<CommandOutcome> {
    let run = pipeline::run_with_counting(
        &cfg.experiment,
        cfg.experiment.root_counting(),
        &PipelineOptions { witness_every_step: false },
    )?;
    let mut out = OutputWriter::new(&cfg.out_dir)?;
    out.write_json("witness.json", &WitnessOutput::from_run(cfg, &run))?;
    out.finish("witness", cfg, run.converged)
}

/// Scans of the unfiltered and the distilled state, each in the frame of its
/// own measured extrema.
pub struct ScanPair {
    pub before: CoincidenceScan,
    pub after: CoincidenceScan,
    pub converged: bool,
}

pub fn run_scans(cfg: &RunConfig) -> CliResult<ScanPair> {
    let run = pipeline::run(&cfg.experiment)?;
    let bench: Bench = pipeline::bench(&cfg.experiment)?;
    let root = cfg.experiment.root_counting().child(streams::SCAN);
    let s = &cfg.scan;
    let m = cfg.experiment.pairs_per_setting;
    let first = &run.steps[0];
    let last = run.final_witness();
    let identity: Vec<_> = (1..=2).map(CompositeArmOperator::identity).collect();
    let before =
        bench.coincidence_scan(&identity, &first.lambdas.triple, s.l, s.l2, s.grid, s.theta_max, m, root.child(0))?;
    let after = bench.coincidence_scan(
        &run.composite,
        &last.lambdas.triple,
        s.l,
        s.l2,
        s.grid,
        s.theta_max,
        m,
        root.child(1),
    )?;
    Ok(ScanPair { before, after, converged: run.converged })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanFits {
    pub before: SinusoidFit,
    pub after: SinusoidFit,
}

pub fn cmd_scan(cfg: &RunConfig) -> CliResult<CommandOutcome> {
    let scans = run_scans(cfg)?;
    let (l, l2) = (cfg.scan.l, cfg.scan.l2);
    let mut out = OutputWriter::new(&cfg.out_dir)?;
    out.write(&format!("scan_k0_l{l}{l2}.csv"), &scans.before.to_csv())?;
    out.write(&format!("scan_dis_l{l}{l2}.csv"), &scans.after.to_csv())?;
    out.write_json(
        &format!("scan_fit_l{l}{l2}.json"),
        &ScanFits { before: scans.before.fit_sinusoid(), after: scans.after.fit_sinusoid() },
    )?;
    out.finish("scan", cfg, scans.converged)
}

pub fn cmd_compare(cfg: &RunConfig) -> CliResult<CommandOutcome> {
    let (report, rows) = efficiency_compare(&cfg.experiment, cfg.compare.budget, cfg.compare.trials)?;
    let mut out = OutputWriter::new(&cfg.out_dir)?;
    out.write_json("efficiency.json", &report)?;
    let mut csv = String::from("trial,c_witness,c_qst\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.trial, r.c_witness, r.c_qst));
    }
    out.write("efficiency_trials.csv", &csv)?;
    out.finish("compare", cfg, true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleOutput {
    pub state: String,
    pub concurrence: f64,
    pub converged: bool,
    pub steps: usize,
    pub s0: f64,
    pub concurrence_dis: f64,
    /// `C(rho_dis) s0`, equal to `concurrence` up to rounding.
    pub scaled_back: f64,
    pub marginal_dops: Vec<f64>,
}

pub fn cmd_oracle(cfg: &RunConfig) -> CliResult<CommandOutcome> {
    let rho = cfg.experiment.true_state.build()?;
    let opts = DistillOptions {
        tol_dop: cfg.experiment.tol_dop.unwrap_or(DistillOptions::noiseless().tol_dop),
        max_steps: cfg.experiment.max_steps.unwrap_or(DistillOptions::noiseless().max_steps),
        filter_phase: 0.0,
    };
    let nf = normal_form(&rho, &opts)?;
    let dis = nf.rho_dis.as_ref().expect("set for known states");
    let c_dis = wootters_concurrence(dis)?;
    let report = OracleOutput {
        state: cfg.experiment.true_state.to_string(),
        concurrence: wootters_concurrence(&rho)?,
        converged: nf.converged,
        steps: nf.trace.steps.len() - 1,
        s0: nf.s0(),
        concurrence_dis: c_dis,
        scaled_back: c_dis * nf.s0(),
        marginal_dops: nf.final_step().dops.clone(),
    };
    let mut out = OutputWriter::new(&cfg.out_dir)?;
    out.write_json("oracle.json", &report)?;
    out.finish("oracle", cfg, nf.converged)
}

pub fn execute(cmd: &Command) -> CliResult<CommandOutcome> {
    let cfg = cmd.resolve()?;
    match cmd {
        Command::Demo(_) => cmd_demo(&cfg),
        Command::Distill(_) => cmd_distill(&cfg),
        Command::Witness(_) => cmd_witness(&cfg),
        Command::Scan(_) => cmd_scan(&cfg),
        Command::Compare(_) => cmd_compare(&cfg),
        Command::Oracle(_) => cmd_oracle(&cfg),
    }
}

/// Reads a CSV with a known header into rows of named numeric fields.
pub fn parse_numeric_csv(text: &str, header: &str) -> CliResult<Vec<BTreeMap<String, f64>>> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| CliError::Config("empty CSV".into()))?;
    if first != header {
        return Err(CliError::Config(format!("unexpected header {first:?}")));
    }
    let names: Vec<&str> = header.split(',').collect();
    lines
        .map(|line| {
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != names.len() {
                return Err(CliError::Config(format!("row has {} fields, expected {}", vals.len(), names.len())));
            }
            names.iter().zip(vals).map(|(n, v)| Ok((n.to_string(), parse_value::<f64>(n, v)?))).collect()
        })
        .collect()
}

//! `specdec` command-line frontend.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::drafting::{AcceptanceTable, DraftSpec};
use crate::error::{Error, Result};
use crate::perf_model::{CostMode, CostModel, HardwareSpec, ModelArch, Workload};
use crate::planner::{Planner, DEFAULT_GAMMA_MAX};
use crate::presets;
use crate::reports::{
    check_row, write_residuals, write_sweep, BreakdownReport, MeasuredRows, PlanReport, SimReport, SimTrial,
    BREAKDOWN_HEADER,
};
use crate::simulator::{simulate_sd, SimConfig};
use crate::speedup::MinAcceptance;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "specdec", version, about = "Speculative decoding cost model, planner and simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cost components of one target decode step.
    Breakdown(BreakdownArgs),
    /// Speculative decoding quantities over a batch x sequence grid (CSV).
    Sweep(SweepArgs),
    /// Best KV budget and draft length from measured acceptance rates (JSON).
    Optimize(OptimizeArgs),
    /// Sequence length beyond which speedup grows with batch size (JSON).
    Inflection(InflectionArgs),
    /// Monte Carlo run next to the closed-form prediction (JSON).
    Simulate(SimulateArgs),
    /// Arithmetic consistency of measured rows (CSV).
    ValidateTable(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    /// Hardware JSON file or preset name.
    #[arg(long)]
    pub hw: String,
    /// Target model JSON file or preset name.
    #[arg(long)]
    pub model: String,
    #[arg(long, value_enum, default_value_t = CostMode::Additive)]
    pub mode: CostMode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct BreakdownArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long)]
    pub batch: u64,
    #[arg(long)]
    pub seqlen: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
#[group(skip)]
pub struct AlphaArgs {
    #[arg(long, conflicts_with = "acceptance", required_unless_present = "acceptance")]
    pub alpha: Option<f64>,
    /// Acceptance CSV (`method,task,kv_budget,alpha`).
    #[arg(long, requires = "task")]
    pub acceptance: Option<PathBuf>,
    /// Method label to look up; defaults to the draft's tag.
    #[arg(long, requires = "acceptance")]
    pub method: Option<String>,
    #[arg(long, requires = "acceptance")]
    pub task: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Draft JSON file.
    #[arg(long)]
    pub draft: PathBuf,
    #[command(flatten)]
    pub alpha: AlphaArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub batches: Vec<u64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub seqlens: Vec<u64>,
    #[arg(long)]
    pub gamma: u32,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long)]
    pub acceptance: PathBuf,
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub task: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub budgets: Vec<u64>,
    #[arg(long)]
    pub batch: u64,
    #[arg(long)]
    pub seqlen: u64,
    #[arg(long, default_value_t = DEFAULT_GAMMA_MAX)]
    pub gamma_max: u32,
    /// Draft JSON used as the strategy template; static self-speculation
    /// when omitted.
    #[arg(long)]
    pub draft: Option<PathBuf>,
    /// Also report the smallest acceptance rate reaching this speedup with
    /// the chosen budget; exits 3 when no rate does.
    #[arg(long)]
    pub target_speedup: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InflectionArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long)]
    pub draft: PathBuf,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, value_delimiter = ',', required = true)]
    pub batches: Vec<u64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub seqlens: Vec<u64>,
    #[arg(long)]
    pub gamma: u32,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long)]
    pub draft: PathBuf,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub batch: u64,
    /// Initial context length.
    #[arg(long)]
    pub seqlen: u64,
    #[arg(long)]
    pub gen_len: u64,
    #[arg(long)]
    pub gamma: u32,
    #[arg(long)]
    pub seed: u64,
    /// Independent runs with seeds `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    pub trials: u32,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub rows: PathBuf,
}

/// How a successful invocation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Infeasible,
    /// Output was written but some input rows were rejected.
    PartialInput,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| Error::Config {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_hardware(spec: &str) -> Result<HardwareSpec> {
    let path = Path::new(spec);
    if path.exists() {
        return read_json(path);
    }
    presets::hardware_presets()
        .into_iter()
        .find(|h| h.name == spec)
        .ok_or_else(|| Error::InvalidHardware(format!("`{spec}` is neither a file nor a preset name")))
}

pub fn load_model(spec: &str) -> Result<ModelArch> {
    let path = Path::new(spec);
    if path.exists() {
        return read_json(path);
    }
    presets::model_presets()
        .into_iter()
        .find(|m| m.name == spec)
        .ok_or_else(|| Error::InvalidModel(format!("`{spec}` is neither a file nor a preset name")))
}

pub fn load_draft(path: &Path) -> Result<DraftSpec> {
    let draft: DraftSpec = read_json(path)?;
    draft.validate()?;
    Ok(draft)
}

fn planner(system: &SystemArgs) -> Result<Planner> {
    Ok(Planner::new(
        load_hardware(&system.hw)?,
        load_model(&system.model)?,
        CostModel::from(system.mode),
    ))
}

fn write_json(out: &mut impl Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn resolve_alpha(args: &AlphaArgs, draft: &DraftSpec) -> Result<f64> {
    match (args.alpha, &args.acceptance, &args.task) {
        (Some(alpha), _, _) => {
            if (0.0..=1.0).contains(&alpha) {
                Ok(alpha)
            } else {
                Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")))
            }
        }
        (None, Some(path), Some(task)) => {
            let table = AcceptanceTable::load(path)?;
            let method = args.method.as_deref().unwrap_or(draft.method_tag());
            table.lookup_alpha(method, task, draft.kv_budget().unwrap_or(u64::MAX))
        }
        _ => Err(Error::InvalidArgument("pass --alpha or --acceptance with --task".into())),
    }
}

fn breakdown(args: &BreakdownArgs, out: &mut impl Write) -> Result<Outcome> {
    let p = planner(&args.system)?;
    let cost = p.cost.step_time(&p.hw, &p.target, args.batch, args.seqlen, 1)?;
    let report = BreakdownReport::new(&p.hw.name, &p.target.name, args.batch, args.seqlen, &cost);
    match args.format {
        Format::Json => write_json(out, &report)?,
        Format::Csv => writeln!(out, "{BREAKDOWN_HEADER}\n{}", report.csv_line())?,
    }
    Ok(Outcome::Done)
}

fn sweep(args: &SweepArgs, out: &mut impl Write) -> Result<Outcome> {
    let p = planner(&args.system)?;
    let draft = load_draft(&args.draft)?;
    let alpha = resolve_alpha(&args.alpha, &draft)?;
    let rows = p.sweep(&draft, alpha, &args.batches, &args.seqlens, args.gamma)?;
    write_sweep(out, &rows)?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct OptimizeOutput {
    task: String,
    batch: u64,
    seqlen: u64,
    best: PlanReport,
    candidates: Vec<PlanReport>,
    skipped_budgets: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_acceptance: Option<MinAcceptance>,
}

fn optimize(args: &OptimizeArgs, out: &mut impl Write) -> Result<Outcome> {
    let p = planner(&args.system)?;
    let table = AcceptanceTable::load(&args.acceptance)?;
    let template = match &args.draft {
        Some(path) => load_draft(path)?,
        None => DraftSpec::self_spec_static(1, args.method.clone())?,
    }
    .with_method_tag(&args.method);
    let plan = p.optimize_budget(
        &template,
        &args.task,
        &args.budgets,
        &table,
        args.batch,
        args.seqlen,
        args.gamma_max,
    )?;
    for k in &plan.skipped {
        eprintln!("warning: budget {k} exceeds context {} and was skipped", args.seqlen);
    }
    let min_acceptance = args
        .target_speedup
        .map(|x| p.min_acceptance(&plan.best.draft, args.batch, args.seqlen, x, args.gamma_max))
        .transpose()?;
    write_json(
        out,
        &OptimizeOutput {
            task: args.task.clone(),
            batch: args.batch,
            seqlen: args.seqlen,
            best: (&plan.best).into(),
            candidates: plan.candidates.iter().map(PlanReport::from).collect(),
            skipped_budgets: plan.skipped.clone(),
            min_acceptance,
        },
    )?;
    Ok(match min_acceptance {
        Some(MinAcceptance::Infeasible) => Outcome::Infeasible,
        _ => Outcome::Done,
    })
}

fn inflection(args: &InflectionArgs, out: &mut impl Write) -> Result<Outcome> {
    let p = planner(&args.system)?;
    let draft = load_draft(&args.draft)?;
    let result = p.find_inflection(&draft, args.alpha, &args.batches, &args.seqlens, args.gamma)?;
    write_json(out, &result)?;
    Ok(Outcome::Done)
}

fn simulate(args: &SimulateArgs, out: &mut impl Write) -> Result<Outcome> {
    let p = planner(&args.system)?;
    let draft = load_draft(&args.draft)?;
    if args.trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let mut cfg = SimConfig {
        seed: args.seed,
        workload: Workload::new(args.batch, args.seqlen, args.gen_len)?,
        gamma: args.gamma,
        alpha: args.alpha,
        draft,
        cost: p.cost,
    };
    let mut trials = Vec::with_capacity(args.trials as usize);
    for t in 0..u64::from(args.trials) {
        cfg.seed = args.seed.wrapping_add(t);
        trials.push(SimTrial::new(cfg.seed, &simulate_sd(&p.hw, &p.target, &cfg)?));
    }
    let mid = args.seqlen + args.gen_len / 2;
    let analytic = p.analyze(&cfg.draft, args.batch, mid, args.gamma, args.alpha)?;
    write_json(out, &SimReport::new(trials, &analytic, mid))?;
    Ok(Outcome::Done)
}

fn validate_table(args: &ValidateArgs, out: &mut impl Write) -> Result<Outcome> {
    let parsed = MeasuredRows::load(&args.rows)?;
    let mut checks = Vec::with_capacity(parsed.rows.len());
    let mut rejected = parsed.errors.len();
    for e in &parsed.errors {
        eprintln!("{}: line {}: {}", args.rows.display(), e.line, e.message);
    }
    for (line, row) in &parsed.rows {
        match check_row(*line, row) {
            Ok(c) => checks.push(c),
            Err(e) => {
                rejected += 1;
                eprintln!("{}: line {line}: {e}", args.rows.display());
            }
        }
    }
    write_residuals(out, &checks)?;
    Ok(if rejected > 0 {
        Outcome::PartialInput
    } else {
        Outcome::Done
    })
}

pub fn execute(cli: &Cli, out: &mut impl Write) -> Result<Outcome> {
    match &cli.command {
        Command::Breakdown(a) => breakdown(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Optimize(a) => optimize(a, out),
        Command::Inflection(a) => inflection(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::ValidateTable(a) => validate_table(a, out),
    }
}

/// Parses the process arguments, runs the command against stdout and maps
/// the result to an exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = execute(&cli, &mut out).and_then(|o| {
        out.flush()?;
        Ok(o)
    });
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => {
            eprintln!("error: target speedup is not reachable at any acceptance rate");
            ExitCode::from(EXIT_INFEASIBLE)
        }
        Ok(Outcome::PartialInput) => ExitCode::from(EXIT_CONFIG),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

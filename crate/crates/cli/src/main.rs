use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nsed_cli::commands::{
    cmd_compose, cmd_feedback, cmd_fit, cmd_report, cmd_run, describe, describe_fit, lambda_sweep,
    write_sweep, RunConfig,
};
use nsed_cli::simulate::{cmd_simulate, SimulateConfig};
use nsed_cli::{read_json, read_pool, strategy_from, CliError, EXIT_CONFIG};
use nsed_core::broker::{BrokerConfig, PriorStore, TaskProfile};
use nsed_core::orchestrator::OrchestratorConfig;
use nsed_core::telemetry::{self, ExportFormat};
use nsed_core::thermo::FitMode;
use nsed_core::{ConsensusStrategy, SessionManifest, Sla};

#[derive(Parser)]
#[command(
    name = "nsed",
    version,
    about = "Synchronous multi-agent deliberation engine"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pick a team and round budget for a task under an SLA.
    Compose(ComposeArgs),
    /// Monte Carlo over simulated agents.
    Simulate(SimulateArgs),
    /// Fit the utility curve to an observed trajectory.
    Fit(FitArgs),
    /// Run one session with the agents a pool file describes.
    Run(RunArgs),
    /// Summarize an exported report directory.
    Report(ReportArgs),
    /// Update pool priors from a finished session.
    Feedback(FeedbackArgs),
}

#[derive(Args)]
struct SlaArgs {
    #[arg(long, default_value_t = f64::INFINITY)]
    max_latency: f64,
    #[arg(long, default_value_t = f64::INFINITY)]
    max_cost: f64,
    #[arg(long, default_value_t = 0.0)]
    min_quality: f64,
    /// Cost elasticity in the broker objective.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
}

impl SlaArgs {
    fn sla(&self) -> Sla {
        Sla {
            max_latency_s: self.max_latency,
            max_cost: self.max_cost,
            min_quality: self.min_quality,
            elasticity: self.lambda,
        }
    }
}

#[derive(Args)]
struct StrategyArgs {
    /// live, history_max, linear or exponential.
    #[arg(long, default_value = "history_max")]
    strategy: String,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 1.1)]
    gamma_w: f64,
}

impl StrategyArgs {
    fn strategy(&self) -> Result<ConsensusStrategy, CliError> {
        strategy_from(&self.strategy, self.alpha, self.gamma_w)
    }
}

#[derive(Args)]
struct BrokerArgs {
    #[command(flatten)]
    sla: SlaArgs,
    #[command(flatten)]
    strategy: StrategyArgs,
    /// Upper bound on rounds the broker may choose.
    #[arg(long, default_value_t = 8)]
    rounds: u32,
    #[arg(long, default_value_t = 0.02)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "session")]
    session_id: String,
    /// Network overhead per round, seconds.
    #[arg(long, default_value_t = 2.0)]
    overhead: f64,
    /// Smallest team the broker may pick.
    #[arg(long, default_value_t = 2)]
    min_team: usize,
}

impl BrokerArgs {
    fn config(&self) -> Result<BrokerConfig, CliError> {
        Ok(BrokerConfig {
            session_id: self.session_id.clone(),
            overhead_net_s: self.overhead,
            max_rounds: self.rounds,
            epsilon: self.epsilon,
            strategy: self.strategy.strategy()?,
            seed: self.seed,
            min_team: self.min_team,
            ..Default::default()
        })
    }
}

#[derive(Args)]
struct ComposeArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    broker: BrokerArgs,
    /// Prior store whose convergence history caps the round budget.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Comma-separated elasticities; writes a Pareto CSV.
    #[arg(long, value_delimiter = ',')]
    lambda_sweep: Vec<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    rounds: u32,
    /// Zero disables early convergence halting.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.8)]
    gamma_base: f64,
    #[command(flatten)]
    strategy: StrategyArgs,
    #[arg(long, default_value_t = 500)]
    replications: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with `round` and `accuracy` columns.
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    p_g: f64,
    #[arg(long, required_unless_present = "fit_pv")]
    p_v: Option<f64>,
    /// Fit the verification rate with efficiency pinned.
    #[arg(long)]
    fit_pv: bool,
    /// Efficiency held fixed under --fit-pv.
    #[arg(long, default_value_t = 4.31)]
    efficiency: f64,
    #[arg(long, default_value_t = 12)]
    t_max: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    task: PathBuf,
    /// Use this manifest instead of composing one.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-agent phase timeout, seconds.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    /// Text file of constraints, re-read between rounds.
    #[arg(long)]
    inputs: Option<PathBuf>,
    #[command(flatten)]
    broker: BrokerArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Planned round budget to compare against.
    #[arg(long)]
    rounds: Option<u32>,
}

#[derive(Args)]
struct FeedbackArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding an exported report.json.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// JSON-lines session log to append to.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Compose(a) => {
            let pool = read_pool(&a.pool)?;
            let task: TaskProfile = read_json(&a.task)?;
            let cfg = a.broker.config()?;
            let store: Option<PriorStore> = a.store.as_deref().map(read_json).transpose()?;
            let sla = a.broker.sla.sla();
            let (manifest, sol) = cmd_compose(&pool, &task, &sla, &cfg, store.as_ref(), &a.out)?;
            print!("{}", describe(&sol, &manifest));
            if !a.lambda_sweep.is_empty() {
                let rows = lambda_sweep(&pool, &task, &sla, &cfg, &a.lambda_sweep)?;
                let path = write_sweep(&rows, &a.out)?;
                println!("{} Pareto rows -> {}", rows.len(), path.display());
            }
        }
        Cmd::Simulate(a) => {
            let pool = read_pool(&a.pool)?;
            let cfg = SimulateConfig {
                rounds: a.rounds,
                epsilon: a.epsilon,
                gamma_base: a.gamma_base,
                strategy: a.strategy.strategy()?,
                seed: a.seed,
                replications: a.replications,
                timeout_s: a.timeout,
            };
            let (res, _) = cmd_simulate(&pool, &cfg, &a.out)?;
            println!("round  accuracy  stderr");
            for r in &res.trajectory {
                println!("{:>5}  {:.4}    {:.4}", r.round, r.accuracy, r.stderr);
            }
            println!("final answer accuracy {:.4}", res.final_accuracy);
            print!("{}", telemetry::summarize(&res.report, Some(cfg.rounds)));
        }
        Cmd::Fit(a) => {
            let mode = match (a.fit_pv, a.p_v) {
                (true, _) => FitMode::FitVerifier {
                    efficiency: a.efficiency,
                },
                (false, Some(p_v)) => FitMode::KnownVerifier { p_v },
                (false, None) => {
                    return Err(CliError::Config("--p-v or --fit-pv is required".into()))
                }
            };
            let (report, _) = cmd_fit(&a.trajectory, a.p_g, mode, a.out.as_deref())?;
            print!("{}", describe_fit(&report, a.t_max));
        }
        Cmd::Run(a) => {
            let cfg = RunConfig {
                pool: read_pool(&a.pool)?,
                task: read_json(&a.task)?,
                manifest: a
                    .manifest
                    .as_deref()
                    .map(read_json::<SessionManifest>)
                    .transpose()?,
                sla: a.broker.sla.sla(),
                broker: a.broker.config()?,
                orchestrator: OrchestratorConfig {
                    timeout_s: a.timeout,
                    overhead_net_s: a.broker.overhead,
                    max_latency_s: a
                        .broker
                        .sla
                        .max_latency
                        .is_finite()
                        .then_some(a.broker.sla.max_latency),
                    ..Default::default()
                },
                inputs: a.inputs,
                out: a.out,
            };
            let (record, report) = cmd_run(&cfg)?;
            println!("answer: {}", record.final_answer.proposal.answer);
            print!(
                "{}",
                telemetry::summarize(&report, Some(record.manifest.t_opt))
            );
        }
        Cmd::Report(a) => print!("{}", cmd_report(&a.dir, a.rounds)?),
        Cmd::Feedback(a) => {
            let manifest: SessionManifest = read_json(&a.manifest)?;
            let report = telemetry::import(&a.report, ExportFormat::Json)?;
            let ev = cmd_feedback(&a.pool, &manifest, &report, &a.store, a.log.as_deref())?;
            for u in &ev.updates {
                println!(
                    "{}: {:.4} -> {:.4} (share {:.4})",
                    u.agent, u.before, u.after, u.share
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).context("nsed failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<CliError>()
                .map_or(EXIT_CONFIG, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

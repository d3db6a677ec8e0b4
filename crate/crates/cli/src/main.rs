use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drlfwd::campaign::{cmd_analyze, cmd_eval, cmd_export_trace, cmd_finetune, cmd_train};
use drlfwd::cltrain::{resolve_scenario, ClPlan, TrainParams};
use drlfwd::mobility::load_trace;
use drlfwd::Error;

#[derive(Parser)]
#[command(name = "drlfwd", version, about = "Mobile-network forwarding simulator and deep-Q trainer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Continual learning over a plan file (or the built-in three-scenario plan).
    Train {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Overrides the plan seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides every scenario's duration (cool-down becomes 2/5 of it).
        #[arg(long)]
        duration: Option<u64>,
    },
    /// Fine-tune a trained model on one scenario.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        range: Option<f64>,
        /// Position trace replacing the scenario's mobility model.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        budget: u64,
        #[arg(long, default_value_t = 50)]
        round: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run an evaluation campaign.
    Eval {
        campaign: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Forwarding-behavior report from decision logs.
    Analyze {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write a synthetic scenario's trajectories as a trace CSV.
    ExportTrace {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        range: Option<f64>,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> drlfwd::Result<()> {
    match cli.cmd {
        Cmd::Train { plan, out, seed, duration } => {
            let mut plan = match &plan {
                Some(p) => ClPlan::load(p)?,
                None => ClPlan::default_plan(),
            };
            if let Some(s) = seed {
                plan.params.seed = s;
            }
            if let Some(d) = duration {
                plan = plan.with_duration(d, d * 2 / 5);
            }
            let net = cmd_train(&plan, &out)?;
            println!("wrote {} ({} parameters)", out.join("model.txt").display(), net.param_count());
        }
        Cmd::Finetune { model, config, preset, range, trace, budget, round, seed, out } => {
            let (sc, own_trace) = resolve_scenario(config.as_deref(), preset.as_deref(), range, None)?;
            let trace = trace.or(own_trace).map(|p| load_trace(&p)).transpose()?;
            let params = TrainParams { seed, round, ..TrainParams::default() };
            let (_, log) = cmd_finetune(&model, &sc, trace, budget, round, &params, &out)?;
            println!("wrote {} after {} rounds", out.display(), log.len());
        }
        Cmd::Eval { campaign, out } => {
            for r in cmd_eval(&campaign, out.as_deref())? {
                println!(
                    "{:<20} {:<11} n={} delivery={:.3}±{:.3} delay={:.1}±{:.1}s forwards={:.2}",
                    r.scenario,
                    r.policy,
                    r.runs,
                    r.delivery_rate,
                    r.delivery_rate_ci,
                    r.mean_delay_s,
                    r.mean_delay_s_ci,
                    r.mean_forwards
                );
            }
        }
        Cmd::Analyze { logs, out } => {
            for r in cmd_analyze(&logs, &out)? {
                let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{:<11} {:?} fast={} (uniform {}, n={}) dest-group={} (uniform {}, n={})",
                    r.policy,
                    r.variant,
                    f(r.p_fast),
                    f(r.uniform_fast),
                    r.fast_decisions,
                    f(r.p_dest_group),
                    f(r.uniform_dest_group),
                    r.group_decisions
                );
            }
        }
        Cmd::ExportTrace { config, preset, range, steps, seed, out } => {
            let (sc, _) = resolve_scenario(config.as_deref(), preset.as_deref(), range, None)?;
            let n = cmd_export_trace(&sc.with_seed(seed), steps, &out)?;
            println!("wrote {n} samples to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_config_error() {
        ExitCode::from(1)
    } else {
        ExitCode::from(2)
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bopi2_core::dbn::{read_demos_jsonl, save_model, write_demos_jsonl};
use bopi2_core::harness::{
    check_output_dir, demos_for, emit_outputs, improve, prepare, read_metrics_csv, run_experiment, train_skill, Algo,
    ExperimentConfig, ExperimentReport, MetricsRow, RunSummary,
};
use bopi2_core::sim::World;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "bopi2",
    version,
    about = "Keyframe skill learning and GP-guided policy improvement experiments"
)]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for single-run commands and base seed for `compare`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for repetitions (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate demonstrations and write them as JSON lines.
    DemoGen,
    /// Fit the skill model to demonstrations.
    Train {
        /// Demonstrations to train on; generated from the seed when omitted.
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Train, perturb and locate the failed sub-goals.
    Assess,
    /// Run one search engine on the assessed skill.
    Improve {
        #[arg(long, value_enum)]
        algo: AlgoArg,
    },
    /// Run every repetition with both engines and write metrics.
    Compare,
    /// Print the metrics table of a finished `compare` run in `--out`.
    Report,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgoArg {
    #[value(name = "bo-pi2")]
    BoPi2,
    #[value(name = "pi2-es-cov")]
    Pi2EsCov,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::BoPi2 => Algo::BoPi2,
            AlgoArg::Pi2EsCov => Algo::Pi2EsCov,
        }
    }
}

/// Failure class, mapped to the process exit code.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        match e.downcast_ref::<bopi2_core::Error>() {
            Some(bopi2_core::Error::Config(_)) => Failure::Config(e),
            _ => Failure::Runtime(e),
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

struct Ctx {
    cfg: ExperimentConfig,
    world: World,
    seed: u64,
    out: PathBuf,
}

fn load(cli: &Cli) -> Result<Ctx, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)
            .with_context(|| format!("loading {}", p.display()))
            .map_err(config_err)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate().map_err(config_err)?;
    let world = World::new(cfg.resolve_scenario().map_err(config_err)?).map_err(config_err)?;
    check_output_dir(&cli.out)?;
    Ok(Ctx {
        seed: cfg.base_seed,
        cfg,
        world,
        out: cli.out.clone(),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn print_rows(rows: &[MetricsRow]) {
    println!(
        "{:<12} {:<10} {:<11} {:>8} {:>8} {:>7} {:>9} {:>9}",
        "skill", "scenario", "algo", "success%", "return", "term", "disp_cm", "disp_deg"
    );
    for r in rows {
        println!(
            "{:<12} {:<10} {:<11} {:>8.1} {:>8.1} {:>7.2} {:>9.2} {:>9.2}",
            r.skill,
            r.scenario,
            r.algo,
            r.success_rate,
            r.avg_return,
            r.avg_termination_episode,
            r.euclid_disp_cm,
            r.angular_disp_deg
        );
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Cmd::Report = cli.cmd {
        let report = cli.out.join("report.json");
        let rows = if report.exists() {
            ExperimentReport::load(&report)?.result.rows
        } else {
            read_metrics_csv(&cli.out.join("metrics.csv"))?
        };
        print_rows(&rows);
        return Ok(());
    }

    let ctx = load(cli)?;
    match &cli.cmd {
        Cmd::DemoGen => {
            let demos = demos_for(&ctx.cfg, &ctx.world, ctx.seed)?;
            let path = ctx.out.join("demos.jsonl");
            write_demos_jsonl(&demos, &path)?;
            println!("wrote {} demonstrations to {}", demos.len(), path.display());
        }
        Cmd::Train { demos } => {
            let demos = match demos {
                Some(p) => read_demos_jsonl(p)?,
                None => demos_for(&ctx.cfg, &ctx.world, ctx.seed)?,
            };
            let skill = train_skill(&ctx.cfg, &ctx.world, &demos, ctx.seed)?;
            save_model(&skill.model, ctx.out.join("model.json"))?;
            write_json(
                &ctx.out.join("training.json"),
                &json!({ "expected": skill.expected, "em_history": skill.em_history }),
            )?;
            println!(
                "trained on {} demonstrations, {} EM iterations, expected actions {:?} goals {:?}",
                demos.len(),
                skill.em_history.len(),
                skill.expected.action_seq,
                skill.expected.goal_seq
            );
        }
        Cmd::Assess => {
            let prep = prepare(&ctx.cfg, &ctx.world, ctx.seed)?;
            save_model(&prep.perturbed, ctx.out.join("perturbed_model.json"))?;
            write_json(
                &ctx.out.join("assessment.json"),
                &json!({
                    "seed": prep.seed,
                    "perturbed_states": prep.perturbed_states,
                    "expected": prep.skill.expected,
                    "observed": prep.assessment.observed,
                    "skill_success": prep.assessment.skill_success,
                    "failed_actions": prep.failed_actions,
                    "pairs": prep.pairs,
                }),
            )?;
            println!(
                "skill success {}, failed action states {:?}, {} pairs",
                prep.assessment.skill_success,
                prep.failed_actions,
                prep.pairs.len()
            );
        }
        Cmd::Improve { algo } => {
            let algo = Algo::from(*algo);
            let prep = prepare(&ctx.cfg, &ctx.world, ctx.seed)?;
            let report = improve(&ctx.cfg, &ctx.world, &prep, algo)?;
            save_model(
                &report.updated_model,
                ctx.out.join(format!("improved_model_{}.json", algo.name())),
            )?;
            let summary = RunSummary::new(algo, &prep.perturbed, report);
            write_json(
                &ctx.out.join(format!("improve_{}.json", algo.name())),
                &serde_json::to_value(&summary)?,
            )?;
            println!(
                "{}: success {}, termination episode {}, final return {:.1}",
                algo.name(),
                summary.success,
                summary.termination_episode,
                summary.final_return
            );
        }
        Cmd::Compare => {
            let result = run_experiment(&ctx.cfg)?;
            let files = emit_outputs(&ctx.cfg, &result, &ctx.out)?;
            print_rows(&result.rows);
            for f in files {
                log::info!("wrote {}", f.display());
            }
        }
        Cmd::Report => unreachable!(),
    }
    Ok(())
}

/// `{:#}` without causes whose text the previous message already carries.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {}", describe(&e));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

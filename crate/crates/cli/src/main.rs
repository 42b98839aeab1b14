//! `marl <stage> --config run.json [--override key.path=value]...`

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use marl_cli::{lock, logging, CliResult, Context, RunConfig, Stage};

#[derive(Debug, Parser)]
#[command(name = "marl", version, about = "Footprint archetype learning and area-weighted energy estimation")]
struct Args {
    /// Pipeline stage to run.
    #[arg(value_enum)]
    stage: Stage,

    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Dotted-path override, e.g. `training.pretrain_epochs=3`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(args: &Args) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    let _lock = lock::OutputLock::acquire(&cfg.paths.out)?;
    logging::event(args.stage.name(), "start", serde_json::json!({ "out": cfg.paths.out }));
    Context::new(cfg, args.stage).run()?;
    logging::event(args.stage.name(), "done", serde_json::json!({}));
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

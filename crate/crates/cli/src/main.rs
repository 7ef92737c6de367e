//! `airrag`: answer questions with tree search over reasoning actions,
//! evaluate on datasets, export training data and generate simulated worlds.

mod commands;
mod config;

use std::process::ExitCode;

use airrag::simenv::WorldOptions;
use anyhow::Result;
use clap::{Parser, Subcommand};

use config::ConfigArgs;

#[derive(Debug, Parser)]
#[command(name = "airrag", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Answer one question and print the answer, candidates and tree.
    Run {
        question: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a JSONL dataset; writes eval_report.json and eval_report.csv.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Search with gold-answer rewards and export labelled trajectories.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write a simulated world (world.json, corpus.tsv, dataset.jsonl).
    GenWorld {
        /// Write the built-in bridge world instead of a generated one.
        #[arg(long)]
        fixture: bool,
        #[arg(long, default_value_t = 30)]
        entities: usize,
        #[arg(long, default_value_t = 2)]
        max_hops: usize,
        #[arg(long, default_value_t = 3)]
        phrasings: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { question, config } => commands::cmd_run(&question, &config.resolve()?),
        Command::Eval { config } => commands::cmd_eval(&config.resolve()?),
        Command::Synth { config } => commands::cmd_synth(&config.resolve()?),
        Command::GenWorld {
            fixture,
            entities,
            max_hops,
            phrasings,
            config,
        } => {
            let options = (!fixture).then(|| WorldOptions {
                phrasings,
                ..WorldOptions::new(entities, max_hops)
            });
            commands::cmd_gen_world(&config.resolve()?, options)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

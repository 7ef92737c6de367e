//! The subcommands.

use std::{
    fs,
    path::{Path, PathBuf},
    process::ExitCode,
    sync::Arc,
};

use airrag::{
    clients::{Clients, HttpChatModel, HttpEmbedder, HttpRetriever, InMemoryRetriever, Retriever},
    eval::{evaluate, load_dataset, subset, QASample},
    exec::{map_ordered, ExecPolicy},
    simenv::{self, World, WorldOptions},
    tree::{render_tree, search, search_with_reward, RewardSource, StopReason},
    verify::{export_synthesis_data, Verifier},
};
use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::{Backend, RunConfig};

/// Exit status for a search that ran out of budget before any answer.
pub const EXIT_BUDGET: u8 = 2;

pub fn build_clients(cfg: &RunConfig) -> Result<Clients> {
    match cfg.backend {
        Backend::Scripted => {
            let world = match &cfg.world {
                Some(path) => World::load(path).with_context(|| format!("loading world {}", path.display()))?,
                None => simenv::bartram_world(),
            };
            let mut clients = simenv::scripted_clients(&world, cfg.seed);
            if let Some(corpus) = &cfg.corpus {
                clients.retriever = Arc::new(load_corpus(corpus)?);
            }
            Ok(clients)
        }
        Backend::Http => {
            let retriever: Arc<dyn Retriever> = match &cfg.corpus {
                Some(corpus) => Arc::new(load_corpus(corpus)?),
                None => Arc::new(HttpRetriever::new(&cfg.http)?),
            };
            Ok(Clients::new(
                Arc::new(HttpChatModel::new(&cfg.http)?),
                retriever,
                Arc::new(HttpEmbedder::new(&cfg.http)?),
            ))
        }
    }
}

fn load_corpus(path: &Path) -> Result<InMemoryRetriever> {
    InMemoryRetriever::load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn policy(cfg: &RunConfig) -> ExecPolicy {
    ExecPolicy::from_jobs(cfg.jobs)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn fmt_score(score: Option<f64>) -> String {
    score.map_or_else(|| "-".to_owned(), |s| format!("{s:.3}"))
}

#[derive(Serialize)]
struct RunDump<'a> {
    config: serde_json::Value,
    answer: &'a str,
    trajectory_id: Option<usize>,
    trace: airrag::tree::SearchTrace,
}

pub fn cmd_run(question: &str, cfg: &RunConfig) -> Result<ExitCode> {
    let pipeline = cfg.pipeline()?;
    let clients = build_clients(cfg)?;
    let verifier = Verifier::new(cfg.method, cfg.seed);
    let outcome = search(question, &pipeline.search, &clients, &verifier)?;
    if outcome.trajectories.is_empty() {
        if outcome.stop == StopReason::BudgetExhausted {
            eprintln!(
                "token budget exhausted ({} of {}) before any answer",
                outcome.budget.used, outcome.budget.l_max
            );
            return Ok(ExitCode::from(EXIT_BUDGET));
        }
        bail!("search produced no trajectories");
    }
    let selection = verifier.choose(&outcome, question, &clients, &pipeline.search.actions, &cfg.candidates)?;

    println!("Answer: {}", selection.answer);
    if let Some(chosen) = selection.trajectory_id.and_then(|id| outcome.trajectories.iter().find(|t| t.id == id)) {
        println!("\nTrajectory (rollout {}):", chosen.id);
        for (i, step) in chosen.steps.iter().enumerate() {
            println!("  {}. {} [{}] -> {}", i + 1, step.action, step.query, step.output.replace('\n', " | "));
        }
    }
    println!("\nCandidates:");
    println!("  {:>3}  {:>6}  {:>6}  {:>6}  answer", "id", "jcd", "emb", "rm");
    for t in &outcome.trajectories {
        println!(
            "  {:>3}  {:>6}  {:>6}  {:>6}  {}",
            t.id,
            fmt_score(t.jcd),
            fmt_score(t.emb),
            fmt_score(t.rm),
            t.answer
        );
    }
    println!(
        "\nRollouts: {} ({:?}), tokens: {} of {}",
        outcome.rollouts_completed, outcome.stop, outcome.budget.used, outcome.budget.l_max
    );
    println!("\nTree:\n{}", render_tree(&outcome.tree));

    if let Some(path) = &cfg.tree_out {
        let dump = RunDump {
            config: cfg.echo(),
            answer: &selection.answer,
            trajectory_id: selection.trajectory_id,
            trace: outcome.trace(),
        };
        fs::write(path, serde_json::to_string_pretty(&dump)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn dataset(cfg: &RunConfig) -> Result<Vec<QASample>> {
    let path = cfg.dataset.as_ref().context("a dataset is required (--dataset or `dataset` in the config)")?;
    let samples = load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?;
    Ok(match cfg.limit {
        Some(n) => subset(&samples, n, cfg.seed),
        None => samples,
    })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<ExitCode> {
    let samples = dataset(cfg)?;
    let pipeline = cfg.pipeline()?;
    let clients = build_clients(cfg)?;
    let mut report = evaluate(&samples, &pipeline, &clients, policy(cfg));
    report.config = cfg.echo();
    let dir = out_dir(cfg)?;
    report.write_json(&dir.join("eval_report.json"))?;
    report.write_csv(&dir.join("eval_report.csv"))?;
    let s = &report.summary;
    println!(
        "EM {:.4}  F1 {:.4}  Acc {:.4}  (n={}, failures={}, mean tokens {:.1})",
        s.em, s.f1, s.acc, s.n, s.failures, s.mean_tokens
    );
    for r in report.per_sample.iter().filter(|r| r.error.is_some()) {
        println!("  {}: {}", r.id, r.error.as_deref().unwrap_or_default());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<ExitCode> {
    let samples = dataset(cfg)?;
    if let Some(s) = samples.iter().find(|s| s.gold_answers.is_empty()) {
        bail!("sample {} has no gold answers; synthesis needs them", s.id);
    }
    let pipeline = cfg.pipeline()?;
    let clients = build_clients(cfg)?;
    let results = map_ordered(&samples, policy(cfg), |_, sample| -> Result<(Vec<u8>, usize), String> {
        let seed = pipeline.question_seed(&sample.id);
        let mut search_cfg = pipeline.search.clone();
        search_cfg.rng_seed = seed;
        let verifier = Verifier::new(pipeline.method, seed);
        let reward = RewardSource::Gold(sample.gold_answers.clone());
        let outcome = search_with_reward(&sample.question, &search_cfg, &clients, &verifier, &reward)
            .map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        let n = export_synthesis_data(&outcome, &sample.id, &sample.gold_answers, &mut buf).map_err(|e| e.to_string())?;
        Ok((buf, n))
    });
    let dir = out_dir(cfg)?;
    let mut all = Vec::new();
    let (mut records, mut failures) = (0, 0);
    for (sample, result) in samples.iter().zip(results) {
        match result {
            Ok((buf, n)) => {
                all.extend(buf);
                records += n;
            }
            Err(e) => {
                failures += 1;
                println!("  {}: {e}", sample.id);
            }
        }
    }
    fs::write(dir.join("synthesis.jsonl"), all)?;
    fs::write(dir.join("synthesis_config.json"), serde_json::to_string_pretty(&cfg.echo())? + "\n")?;
    println!("{records} records from {} questions ({failures} failed)", samples.len());
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_gen_world(cfg: &RunConfig, options: Option<WorldOptions>) -> Result<ExitCode> {
    let world = match options {
        Some(options) => simenv::generate_world_with(cfg.seed, &options)?,
        None => simenv::bartram_world(),
    };
    let dir = out_dir(cfg)?;
    world.save(&dir.join("world.json"))?;
    fs::write(dir.join("corpus.tsv"), world.corpus_tsv())?;
    fs::write(dir.join("dataset.jsonl"), world.dataset_jsonl())?;
    println!(
        "{} entities, {} relations, {} docs, {} questions -> {}",
        world.entities.len(),
        world.relations.len(),
        world.docs.len(),
        world.questions.len(),
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

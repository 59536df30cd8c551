//! `simulate`: Monte Carlo synthetic-team runs with an optional exact
//! enumeration oracle. Issues no network requests.

use std::path::Path;
use std::sync::Arc;

use mlpo_core::backends::{Backend, Client, RuleLeaderBackend, SamplingParams, SyntheticBackend};
use mlpo_core::evalkit::{per_round_curve, RunResult};
use mlpo_core::model::{InfoMode, Task, TaskKind};
use mlpo_core::orchestrator::{run_many, EpisodeRunner};
use mlpo_core::sim::enumerate_chain;

use crate::commands::{fmt_f64, runner_counts, write_csv};
use crate::config::{prompt_library, RunConfig};
use crate::lock::RunLock;
use crate::manifest::RunManifest;

const ENUMERATION_BOUND: usize = 100_000;

pub fn run(
    config: &RunConfig,
    config_hash: &str,
    out: &Path,
    oracle: bool,
    workers: Option<usize>,
) -> anyhow::Result<()> {
    let sim = config.simulate_required()?;
    let _lock = RunLock::acquire(out)?;
    let prompts = prompt_library(config)?;
    let params = sim.agent_params();
    let gold = params.answer_space[0].clone();

    let leader = Arc::new(Client::new(Arc::new(RuleLeaderBackend::new(
        "rule-leader",
        sim.leader_rule,
        gold.clone(),
    )) as Arc<dyn Backend>));
    let agents = (0..sim.k)
        .map(|i| {
            let backend = SyntheticBackend::new(
                format!("synthetic-{i}"),
                params.clone(),
                config.run.seed.wrapping_mul(1009).wrapping_add(i as u64),
            )?;
            Ok(Arc::new(Client::new(Arc::new(backend) as Arc<dyn Backend>)))
        })
        .collect::<mlpo_core::Result<Vec<_>>>()?;
    let runner = EpisodeRunner::new(
        sim.t,
        InfoMode::Full,
        leader,
        agents,
        SamplingParams::default(),
        SamplingParams::default(),
        prompts,
    )?;

    let tasks: Vec<Task> = (0..sim.episodes)
        .map(|e| {
            Task::new(
                format!("sim-{e:06}"),
                format!("synthetic episode {e}"),
                gold.clone(),
                TaskKind::ExactString,
            )
        })
        .collect::<mlpo_core::Result<_>>()?;
    let workers = workers.unwrap_or(config.run.workers);
    let transcripts = run_many(&runner, &tasks, None, workers)?;

    // Monte Carlo curves: leader accuracy and mean agent accuracy per round.
    let run_result = RunResult::from_transcripts(transcripts, config_hash, config.run.seed)?;
    let curve = per_round_curve(&run_result)?;
    let mut mean_agent = vec![0.0; sim.t];
    for transcript in &run_result.transcripts {
        for (round, data) in transcript.rounds.iter().enumerate() {
            let correct = data.agents.iter().filter(|a| a.correct == Some(true)).count();
            mean_agent[round] += correct as f64 / sim.k as f64;
        }
    }
    for v in &mut mean_agent {
        *v /= sim.episodes as f64;
    }
    let rows: Vec<Vec<String>> = curve
        .iter()
        .enumerate()
        .map(|(round, acc)| {
            vec![
                round.to_string(),
                fmt_f64(acc.p),
                fmt_f64(acc.se),
                fmt_f64(acc.lo),
                fmt_f64(acc.hi),
                fmt_f64(mean_agent[round]),
            ]
        })
        .collect();
    write_csv(
        &out.join("curves.csv"),
        &["round", "leader_accuracy", "se", "lo", "hi", "mean_agent_accuracy"],
        &rows,
    )?;

    if oracle {
        let exact = enumerate_chain(&params, sim.k, sim.leader_rule, sim.t, ENUMERATION_BOUND)?;
        let rows: Vec<Vec<String>> = (0..sim.t)
            .map(|round| {
                vec![
                    round.to_string(),
                    fmt_f64(exact.leader_correct[round]),
                    fmt_f64(exact.mean_agent_correct[round]),
                ]
            })
            .collect();
        write_csv(
            &out.join("oracle.csv"),
            &["round", "leader_accuracy_exact", "mean_agent_accuracy_exact"],
            &rows,
        )?;
    }

    let mut manifest = RunManifest::new("simulate", config_hash, config.run.seed)
        .with_params(serde_json::json!({
            "k": sim.k,
            "t": sim.t,
            "episodes": sim.episodes,
            "p_correct_round0": sim.p_correct_round0,
            "adopt_leader_prob": sim.adopt_leader_prob,
            "p_correct_given_retry": sim.p_correct_given_retry,
            "answer_space": sim.answer_space,
            "leader_rule": sim.leader_rule,
            "oracle": oracle,
        }))
        .count("episodes", sim.episodes as u64);
    for (key, value) in runner_counts(&runner) {
        manifest = manifest.count(&key, value);
    }
    manifest.write(out)?;
    println!(
        "simulate: {} episodes over {} rounds{} -> {}",
        sim.episodes,
        sim.t,
        if oracle { " (with exact oracle)" } else { "" },
        out.display()
    );
    Ok(())
}

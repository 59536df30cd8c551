//! `train-toy`: gradient-ascent training of the toy aggregation policy,
//! emitting a CSV reward curve and a JSON policy dump.

use std::path::Path;

use mlpo_core::toy::{train_toy, trailing_mean_reward, ToyAggregationEnv, ToyPolicy, TrainToyParams};

use crate::commands::{fmt_f64, write_csv};
use crate::config::RunConfig;
use crate::lock::RunLock;
use crate::manifest::RunManifest;

pub fn run(config: &RunConfig, config_hash: &str, out: &Path) -> anyhow::Result<()> {
    let toy = &config.train_toy;
    let _lock = RunLock::acquire(out)?;

    let env = ToyAggregationEnv::new(
        toy.agent_accuracies.clone(),
        toy.own_accuracy,
        toy.conditioned,
    )?;
    let policy = ToyPolicy::new(env.n_contexts(), env.n_actions(), toy.multi_token)?;
    let params = TrainToyParams {
        steps: toy.steps,
        group_size: toy.group_size,
        epsilon: toy.epsilon,
        learning_rate: toy.learning_rate,
        momentum: toy.momentum,
        seed: config.run.seed,
        max_seq_len: toy.max_seq_len,
    };
    let (trained, curve) = train_toy(&env, policy, &params)?;

    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|p| {
            vec![
                p.step.to_string(),
                fmt_f64(p.mean_reward),
                fmt_f64(p.objective),
                fmt_f64(p.grad_norm),
            ]
        })
        .collect();
    write_csv(
        &out.join("curve.csv"),
        &["step", "mean_reward", "objective", "grad_norm"],
        &rows,
    )?;

    let probs: Vec<Vec<f64>> = (0..trained.n_contexts())
        .map(|ctx| trained.probs(ctx))
        .collect::<mlpo_core::Result<_>>()?;
    let policy_dump = serde_json::json!({
        "n_contexts": trained.n_contexts(),
        "n_actions": trained.n_actions(),
        "multi_token": toy.multi_token,
        "theta": trained.params(),
        "action_probs": probs,
    });
    std::fs::write(out.join("policy.json"), serde_json::to_vec_pretty(&policy_dump)?)?;

    let trailing = trailing_mean_reward(&curve, 100);
    RunManifest::new("train-toy", config_hash, config.run.seed)
        .with_params(serde_json::json!({
            "agent_accuracies": toy.agent_accuracies,
            "own_accuracy": toy.own_accuracy,
            "steps": toy.steps,
            "group_size": toy.group_size,
            "epsilon": toy.epsilon,
            "learning_rate": toy.learning_rate,
            "momentum": toy.momentum,
            "conditioned": toy.conditioned,
            "multi_token": toy.multi_token,
        }))
        .count("steps", curve.len() as u64)
        .count("trailing_mean_reward_millis", (trailing * 1000.0) as u64)
        .write(out)?;
    println!(
        "train-toy: {} steps, trailing mean reward {trailing:.3} -> {}",
        curve.len(),
        out.display()
    );
    Ok(())
}

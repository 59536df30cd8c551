//! `eval`: aggregate transcript files into accuracy reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use mlpo_core::evalkit::{
    condition_on_agent_correctness, per_round_curve, team_composition_report, Accuracy, RunResult,
};
use mlpo_core::model::{Task, Transcript};

use crate::commands::{fmt_f64, load_tasks, write_csv};
use crate::lock::RunLock;

fn accuracy_row(prefix: Vec<String>, acc: &Accuracy) -> Vec<String> {
    let mut row = prefix;
    row.extend([
        fmt_f64(acc.p),
        fmt_f64(acc.se),
        fmt_f64(acc.lo),
        fmt_f64(acc.hi),
        acc.n.to_string(),
    ]);
    row
}

/// Load transcripts from files or directories (directories contribute their
/// `transcripts.jsonl`).
fn load_transcripts(paths: &[PathBuf]) -> anyhow::Result<Vec<Transcript>> {
    let mut transcripts = Vec::new();
    for path in paths {
        let file = if path.is_dir() {
            path.join("transcripts.jsonl")
        } else {
            path.clone()
        };
        let batch: Vec<Transcript> = mlpo_core::jsonl::read_jsonl(&file)
            .with_context(|| format!("reading transcripts from {}", file.display()))?;
        transcripts.extend(batch);
    }
    if transcripts.is_empty() {
        bail!("no transcripts found");
    }
    Ok(transcripts)
}

pub fn run(transcript_paths: &[PathBuf], out: &Path, tasks_path: Option<&Path>) -> anyhow::Result<()> {
    let transcripts = load_transcripts(transcript_paths)?;
    let _lock = RunLock::acquire(out)?;
    let tasks: Option<Vec<Task>> = tasks_path.map(load_tasks).transpose()?;

    // Group episodes by team spec; each group shares T.
    let mut groups: BTreeMap<String, Vec<Transcript>> = BTreeMap::new();
    for transcript in transcripts {
        groups
            .entry(transcript.team_spec.join("+"))
            .or_default()
            .push(transcript);
    }

    let mut curve_rows = Vec::new();
    let mut bucket_rows = Vec::new();
    let mut composition_inputs = Vec::new();
    let mut summary_teams = Vec::new();
    for (team, team_transcripts) in &groups {
        let team_spec = team_transcripts[0].team_spec.clone();
        let run = RunResult::from_transcripts(team_transcripts.clone(), "eval", 0)
            .with_context(|| format!("team {team}"))?;
        let curve = per_round_curve(&run)?;
        for (round, acc) in curve.iter().enumerate() {
            curve_rows.push(accuracy_row(vec![team.clone(), round.to_string()], acc));
        }
        for (m, acc) in condition_on_agent_correctness(&run) {
            bucket_rows.push(accuracy_row(vec![team.clone(), m.to_string()], &acc));
        }
        let final_acc = curve.last().expect("at least one round");
        summary_teams.push(serde_json::json!({
            "team": team,
            "episodes": run.transcripts.len(),
            "rounds": run.rounds(),
            "final_accuracy": final_acc.p,
            "final_accuracy_band": [final_acc.lo, final_acc.hi],
        }));
        composition_inputs.push((team_spec, run));
    }

    write_csv(
        &out.join("curves.csv"),
        &["team", "round", "accuracy", "se", "lo", "hi", "n"],
        &curve_rows,
    )?;
    write_csv(
        &out.join("buckets.csv"),
        &["team", "correct_agents", "accuracy", "se", "lo", "hi", "n"],
        &bucket_rows,
    )?;

    let composition = team_composition_report(&composition_inputs)?;
    let composition_rows: Vec<Vec<String>> = composition
        .iter()
        .map(|row| {
            vec![
                row.team.join("+"),
                fmt_f64(row.leader_accuracy.p),
                fmt_f64(row.leader_accuracy.se),
                fmt_f64(row.mean_team_accuracy),
                row.leader_accuracy.n.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("compositions.csv"),
        &["team", "leader_accuracy", "leader_se", "mean_team_accuracy", "episodes"],
        &composition_rows,
    )?;

    // Per-category/per-difficulty breakdowns when task metadata is supplied.
    if let Some(tasks) = &tasks {
        for (file, attribute) in [
            ("categories.csv", "category"),
            ("difficulties.csv", "difficulty"),
        ] {
            let mut rows = Vec::new();
            for (team, team_transcripts) in &groups {
                let run = RunResult::from_transcripts(team_transcripts.clone(), "eval", 0)?;
                let grouped = mlpo_core::evalkit::grouped_accuracy(&run, tasks, |t| {
                    if attribute == "category" {
                        t.category.as_deref()
                    } else {
                        t.difficulty.as_deref()
                    }
                });
                for (label, acc) in grouped {
                    rows.push(accuracy_row(vec![team.clone(), label], &acc));
                }
            }
            write_csv(
                &out.join(file),
                &["team", attribute, "accuracy", "se", "lo", "hi", "n"],
                &rows,
            )?;
        }
    }

    let summary = serde_json::json!({ "teams": summary_teams });
    std::fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    println!("eval: {} team group(s) -> {}", groups.len(), out.display());
    Ok(())
}

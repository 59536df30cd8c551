//! Exact Markov-chain enumeration for synthetic teams.
//!
//! For a team of K synthetic agents coupled to a deterministic leader rule,
//! the joint answer-class state is finite and the per-round leader-correct
//! probability can be computed exactly by transition-matrix products. This
//! module is the oracle the Monte Carlo orchestrator runs are checked
//! against.

use serde::{Deserialize, Serialize};

use crate::backends::SyntheticAgentParams;
use crate::error::{Error, Result};

/// Deterministic leader behaviors available in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaderRule {
    /// Plurality over the agents' answers; ties go to the answer whose
    /// earliest vote has the lowest agent index.
    CopyMajority,
    /// Copy agent `k`'s answer verbatim (0-based).
    CopyAgent(usize),
    /// Always answer gold.
    AlwaysGold,
}

/// Plurality winner with a deterministic tie-break: among tied answers, the
/// one whose first vote appears earliest wins. The scripted rule leader and
/// the chain enumeration share this function so they can never drift.
pub fn majority_winner<T: PartialEq + Clone>(votes: &[T]) -> Option<T> {
    let mut tallies: Vec<(&T, usize, usize)> = Vec::new(); // (value, count, first index)
    for (i, vote) in votes.iter().enumerate() {
        match tallies.iter_mut().find(|(v, _, _)| *v == vote) {
            Some(entry) => entry.1 += 1,
            None => tallies.push((vote, 1, i)),
        }
    }
    tallies
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .map(|(v, _, _)| v.clone())
}

/// Exact per-round curve for a synthetic team + leader rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainCurve {
    /// P(leader answer is gold) at rounds 0..T-1.
    pub leader_correct: Vec<f64>,
    /// Expected fraction of agents answering gold at rounds 0..T-1.
    pub mean_agent_correct: Vec<f64>,
}

/// State space: each agent holds an answer class in `0..=W` where class 0 is
/// gold and classes `1..=W` are the distinct wrong answers. The leader class
/// is a deterministic function of the agent tuple, so the joint distribution
/// over agent tuples is the whole chain state.
pub fn enumerate_chain(
    params: &SyntheticAgentParams,
    k: usize,
    rule: LeaderRule,
    t: usize,
    max_states: usize,
) -> Result<ChainCurve> {
    params.validate()?;
    if k == 0 {
        return Err(Error::Config("team size must be at least 1".into()));
    }
    if t == 0 {
        return Err(Error::Config("round count must be at least 1".into()));
    }
    if let LeaderRule::CopyAgent(idx) = rule {
        if idx >= k {
            return Err(Error::Config(format!(
                "copy_agent index {idx} out of range for team of {k}"
            )));
        }
    }
    let classes = params.answer_space.len(); // W + 1
    let n_states = classes
        .checked_pow(k as u32)
        .filter(|&s| s <= max_states)
        .ok_or_else(|| {
            Error::Config(format!(
                "state space {classes}^{k} exceeds the enumeration bound {max_states}"
            ))
        })?;

    let state_classes = |mut state: usize| -> Vec<usize> {
        let mut tuple = Vec::with_capacity(k);
        for _ in 0..k {
            tuple.push(state % classes);
            state /= classes;
        }
        tuple
    };
    let leader_class: Vec<usize> = (0..n_states)
        .map(|s| {
            let tuple = state_classes(s);
            match rule {
                LeaderRule::AlwaysGold => 0,
                LeaderRule::CopyAgent(idx) => tuple[idx],
                LeaderRule::CopyMajority => majority_winner(&tuple).unwrap(),
            }
        })
        .collect();

    // Round-0 joint distribution: independent fresh draws.
    let wrong = (classes - 1) as f64;
    let fresh = |p_correct: f64| -> Vec<f64> {
        let mut dist = vec![(1.0 - p_correct) / wrong; classes];
        dist[0] = p_correct;
        dist
    };
    let round0 = fresh(params.p_correct_round0);
    let mut dist = vec![0.0; n_states];
    for (state, mass) in dist.iter_mut().enumerate() {
        *mass = state_classes(state).iter().map(|&c| round0[c]).product();
    }

    let mut leader_correct = Vec::with_capacity(t);
    let mut mean_agent_correct = Vec::with_capacity(t);
    let record = |dist: &[f64], leader_correct: &mut Vec<f64>, mean_agent: &mut Vec<f64>| {
        let mut p_leader = 0.0;
        let mut agent_frac = 0.0;
        for (state, &mass) in dist.iter().enumerate() {
            if leader_class[state] == 0 {
                p_leader += mass;
            }
            let golds = state_classes(state).iter().filter(|&&c| c == 0).count();
            agent_frac += mass * golds as f64 / k as f64;
        }
        leader_correct.push(p_leader);
        mean_agent.push(agent_frac);
    };
    record(&dist, &mut leader_correct, &mut mean_agent_correct);

    let retry = fresh(params.p_correct_given_retry);
    for _ in 1..t {
        let mut next = vec![0.0; n_states];
        for (state, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            // Per-agent transition given this state's leader class; the same
            // distribution applies to every agent independently.
            let lead = leader_class[state];
            let mut per_agent = vec![0.0; classes];
            for (c, slot) in per_agent.iter_mut().enumerate() {
                *slot = (1.0 - params.adopt_leader_prob) * retry[c]
                    + if c == lead { params.adopt_leader_prob } else { 0.0 };
            }
            for (new_state, slot) in next.iter_mut().enumerate() {
                let p: f64 = state_classes(new_state).iter().map(|&c| per_agent[c]).product();
                *slot += mass * p;
            }
        }
        dist = next;
        record(&dist, &mut leader_correct, &mut mean_agent_correct);
    }

    Ok(ChainCurve {
        leader_correct,
        mean_agent_correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p0: f64, adopt: f64, retry: f64, answers: &[&str]) -> SyntheticAgentParams {
        SyntheticAgentParams {
            p_correct_round0: p0,
            adopt_leader_prob: adopt,
            p_correct_given_retry: retry,
            answer_space: answers.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn majority_winner_plurality_and_ties() {
        assert_eq!(majority_winner(&["A", "A", "B"]), Some("A"));
        assert_eq!(majority_winner(&["B", "A", "A"]), Some("A"));
        // 1-1-1 tie: earliest first vote wins.
        assert_eq!(majority_winner(&["C", "B", "A"]), Some("C"));
        // 2-2 tie: A's first vote (index 0) precedes B's (index 1).
        assert_eq!(majority_winner(&["A", "B", "B", "A"]), Some("A"));
        assert_eq!(majority_winner::<&str>(&[]), None);
    }

    #[test]
    fn always_gold_with_full_adoption_absorbs() {
        let p = params(0.3, 1.0, 0.5, &["A", "B"]);
        let curve = enumerate_chain(&p, 3, LeaderRule::AlwaysGold, 5, 4096).unwrap();
        for t in 0..5 {
            assert!((curve.leader_correct[t] - 1.0).abs() < 1e-12);
        }
        for t in 1..5 {
            assert!((curve.mean_agent_correct[t] - 1.0).abs() < 1e-12);
        }
        assert!((curve.mean_agent_correct[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn no_adoption_with_matching_retry_is_constant() {
        let p = params(0.4, 0.0, 0.4, &["A", "B", "C"]);
        let curve = enumerate_chain(&p, 3, LeaderRule::CopyMajority, 5, 4096).unwrap();
        for t in 1..5 {
            assert!((curve.leader_correct[t] - curve.leader_correct[0]).abs() < 1e-12);
            assert!((curve.mean_agent_correct[t] - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn copy_agent_tracks_that_agents_accuracy() {
        let p = params(0.7, 0.0, 0.7, &["A", "B"]);
        let curve = enumerate_chain(&p, 3, LeaderRule::CopyAgent(1), 3, 4096).unwrap();
        for t in 0..3 {
            assert!((curve.leader_correct[t] - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_majority_round0_matches_binomial() {
        // K = 3, p = 0.5, binary answers: majority correct iff >= 2 gold,
        // which is C(3,2) 0.5^3 + C(3,3) 0.5^3 = 0.5.
        let p = params(0.5, 0.9, 0.5, &["A", "B"]);
        let curve = enumerate_chain(&p, 3, LeaderRule::CopyMajority, 1, 4096).unwrap();
        assert!((curve.leader_correct[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distribution_mass_is_conserved() {
        // The recorded leader probability plus its complement over wrong
        // classes must come from a unit-mass distribution; check with a
        // nontrivial wrong-answer count over several rounds.
        let p = params(0.35, 0.6, 0.45, &["A", "B", "C", "D"]);
        let curve = enumerate_chain(&p, 3, LeaderRule::CopyMajority, 6, 100_000).unwrap();
        for t in 0..6 {
            assert!(curve.leader_correct[t] >= -1e-12 && curve.leader_correct[t] <= 1.0 + 1e-12);
            assert!(
                curve.mean_agent_correct[t] >= -1e-12
                    && curve.mean_agent_correct[t] <= 1.0 + 1e-12
            );
        }
    }

    #[test]
    fn state_space_bound_is_enforced() {
        let p = params(0.5, 0.5, 0.5, &["A", "B", "C", "D"]);
        assert!(matches!(
            enumerate_chain(&p, 10, LeaderRule::CopyMajority, 2, 4096),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn adoption_of_gold_leader_is_monotone() {
        // With an always-gold leader, increasing adoption never lowers any
        // round's agent correctness (and leader correctness stays 1).
        let mut last: Option<Vec<f64>> = None;
        for adopt in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let p = params(0.4, adopt, 0.4, &["A", "B"]);
            let curve = enumerate_chain(&p, 3, LeaderRule::AlwaysGold, 5, 4096).unwrap();
            if let Some(prev) = &last {
                for t in 0..5 {
                    assert!(
                        curve.mean_agent_correct[t] >= prev[t] - 1e-12,
                        "adopt {adopt} round {t}"
                    );
                }
            }
            last = Some(curve.mean_agent_correct);
        }
    }
}

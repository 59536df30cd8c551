//! Desk-scale aggregation environment and categorical policy with exact
//! gradients, used to verify the surrogate objective end to end and to
//! demonstrate that the objective teaches aggregation.
//!
//! The environment mirrors the leader's decision in miniature: K agent
//! slots emit answers with fixed accuracies, the policy emits an action
//! ("copy agent k" or "emit own guess"), and the reward is the 0/+1
//! correctness rule from the extraction module with the format term off.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::extract::{self, RewardSpec};
use crate::model::TaskKind;
use crate::objective::{mlpo_gradient, mlpo_objective, ScoredGroup, TokenizedSample};

/// Softmax policy over action logits, optionally conditioned on the
/// observed agent-agreement pattern.
///
/// A token is an action id; in multi-token mode the vocabulary gains a
/// terminator symbol and sequences run until it is sampled (or a length
/// cap), which makes the objective's inner token sum nontrivial.
#[derive(Debug, Clone)]
pub struct ToyPolicy {
    n_contexts: usize,
    n_actions: usize,
    multi_token: bool,
    /// Logits, context-major: `theta[ctx * vocab + symbol]`.
    theta: Vec<f64>,
}

impl ToyPolicy {
    pub fn new(n_contexts: usize, n_actions: usize, multi_token: bool) -> Result<Self> {
        if n_contexts == 0 || n_actions == 0 {
            return Err(Error::Config(
                "toy policy needs at least one context and one action".into(),
            ));
        }
        let vocab = n_actions + usize::from(multi_token);
        Ok(ToyPolicy {
            n_contexts,
            n_actions,
            multi_token,
            theta: vec![0.0; n_contexts * vocab],
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.n_actions + usize::from(self.multi_token)
    }

    /// Terminator symbol id in multi-token mode.
    pub fn terminator(&self) -> Option<usize> {
        self.multi_token.then_some(self.n_actions)
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    /// Full parameter dimension.
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn logits(&self, context: usize) -> &[f64] {
        let vocab = self.vocab_size();
        &self.theta[context * vocab..(context + 1) * vocab]
    }

    /// Log-probabilities of every symbol in `context`.
    pub fn log_probs(&self, context: usize) -> Result<Vec<f64>> {
        if context >= self.n_contexts {
            return Err(Error::Config(format!(
                "context {context} out of range ({} contexts)",
                self.n_contexts
            )));
        }
        let logits = self.logits(context);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        Ok(logits.iter().map(|l| l - log_z).collect())
    }

    /// Symbol probabilities; sums to one within 1e-12.
    pub fn probs(&self, context: usize) -> Result<Vec<f64>> {
        Ok(self.log_probs(context)?.iter().map(|lp| lp.exp()).collect())
    }

    pub fn sample_symbol(&self, context: usize, rng: &mut impl Rng) -> Result<usize> {
        let probs = self.probs(context)?;
        let draw: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if draw < acc {
                return Ok(i);
            }
        }
        Ok(probs.len() - 1)
    }

    /// Sample one token sequence: a single action in single-token mode, or
    /// symbols until the terminator (or `max_len`) in multi-token mode.
    pub fn sample_sequence(
        &self,
        context: usize,
        rng: &mut impl Rng,
        max_len: usize,
    ) -> Result<Vec<usize>> {
        if !self.multi_token {
            return Ok(vec![self.sample_symbol(context, rng)?]);
        }
        let term = self.n_actions;
        let mut seq = Vec::new();
        for _ in 0..max_len.max(1) {
            let sym = self.sample_symbol(context, rng)?;
            seq.push(sym);
            if sym == term {
                break;
            }
        }
        Ok(seq)
    }

    /// Exact per-token log-probabilities of `sequence` and their gradients
    /// with respect to the full parameter vector.
    ///
    /// For a chosen symbol a in context c, `d logp(a) / d theta[c, j]` is the
    /// softmax identity `1[j == a] - p_j`; all other contexts' entries are 0.
    pub fn logprob_and_grad(
        &self,
        context: usize,
        sequence: &[usize],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let vocab = self.vocab_size();
        let log_probs = self.log_probs(context)?;
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        let mut lps = Vec::with_capacity(sequence.len());
        let mut grads = Vec::with_capacity(sequence.len());
        for &sym in sequence {
            if sym >= vocab {
                return Err(Error::Config(format!(
                    "unknown action id {sym} (vocabulary size {vocab})"
                )));
            }
            lps.push(log_probs[sym]);
            let mut grad = vec![0.0; self.dim()];
            let base = context * vocab;
            for j in 0..vocab {
                grad[base + j] = if j == sym { 1.0 - probs[j] } else { -probs[j] };
            }
            grads.push(grad);
        }
        Ok((lps, grads))
    }
}

/// Observation for one episode: the agents' emitted answers and the policy
/// context derived from their agreement pattern.
#[derive(Debug, Clone)]
pub struct ToyObservation {
    pub agent_answers: Vec<String>,
    pub context: usize,
}

/// K agent answer slots with fixed accuracies, plus an own-guess action.
#[derive(Debug, Clone)]
pub struct ToyAggregationEnv {
    pub agent_accuracies: Vec<f64>,
    pub own_accuracy: f64,
    /// Condition the policy on the agents' agreement pattern instead of a
    /// single shared context.
    pub conditioned: bool,
    gold: String,
    wrong: String,
}

impl ToyAggregationEnv {
    pub fn new(agent_accuracies: Vec<f64>, own_accuracy: f64, conditioned: bool) -> Result<Self> {
        if agent_accuracies.is_empty() {
            return Err(Error::Config("environment needs at least one agent".into()));
        }
        for &p in agent_accuracies.iter().chain([&own_accuracy]) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(ToyAggregationEnv {
            agent_accuracies,
            own_accuracy,
            conditioned,
            gold: "7".to_string(),
            wrong: "0".to_string(),
        })
    }

    pub fn team_size(&self) -> usize {
        self.agent_accuracies.len()
    }

    /// Actions: copy agent 0..K-1, then "emit own guess".
    pub fn n_actions(&self) -> usize {
        self.team_size() + 1
    }

    pub fn n_contexts(&self) -> usize {
        if self.conditioned {
            agreement_patterns(self.team_size())
        } else {
            1
        }
    }

    pub fn gold(&self) -> &str {
        &self.gold
    }

    pub fn observe(&self, rng: &mut impl Rng) -> ToyObservation {
        let agent_answers: Vec<String> = self
            .agent_accuracies
            .iter()
            .map(|&p| {
                if rng.random::<f64>() < p {
                    self.gold.clone()
                } else {
                    self.wrong.clone()
                }
            })
            .collect();
        let context = if self.conditioned {
            agreement_context(&agent_answers)
        } else {
            0
        };
        ToyObservation {
            agent_answers,
            context,
        }
    }

    /// Materialize the leader completion for an action sequence. The first
    /// non-terminator symbol is the action; a bare terminator yields text
    /// without a boxed answer.
    pub fn respond(
        &self,
        obs: &ToyObservation,
        sequence: &[usize],
        rng: &mut impl Rng,
    ) -> String {
        let action = sequence.iter().copied().find(|&s| s < self.n_actions());
        let answer = match action {
            Some(k) if k < self.team_size() => Some(obs.agent_answers[k].clone()),
            Some(_) => Some(if rng.random::<f64>() < self.own_accuracy {
                self.gold.clone()
            } else {
                self.wrong.clone()
            }),
            None => None,
        };
        match answer {
            Some(a) => format!("Therefore, the final answer is: $\\boxed{{{a}}}$."),
            None => "No answer produced.".to_string(),
        }
    }

    /// Reward a completion with the correctness rule, format term off.
    pub fn reward(&self, completion: &str) -> f64 {
        let parsed = extract::extract_tagged_blocks(completion);
        extract::reward(
            &parsed,
            &self.gold,
            TaskKind::MathExpression,
            &RewardSpec::default().without_format_term(),
        )
    }
}

/// Number of distinct agreement patterns (restricted growth strings) of K
/// answers: the K-th Bell number.
fn agreement_patterns(k: usize) -> usize {
    if k == 0 {
        return 1;
    }
    // First label is always 0; count completions of the remaining K-1.
    count_completions(0, k - 1)
}

/// Completions of a restricted growth string given the current max label and
/// remaining positions.
fn count_completions(max_label: usize, remaining: usize) -> usize {
    if remaining == 0 {
        return 1;
    }
    (0..=max_label + 1)
        .map(|l| count_completions(max_label.max(l), remaining - 1))
        .sum()
}

/// Canonical rank of the agreement pattern of `answers`.
fn agreement_context(answers: &[String]) -> usize {
    // Restricted growth string: label each answer by first occurrence.
    let mut labels = Vec::with_capacity(answers.len());
    let mut seen: Vec<&String> = Vec::new();
    for a in answers {
        match seen.iter().position(|s| *s == a) {
            Some(i) => labels.push(i),
            None => {
                labels.push(seen.len());
                seen.push(a);
            }
        }
    }
    // Rank among all RGS of this length, lexicographically.
    rank_rgs(&labels)
}

fn rank_rgs(labels: &[usize]) -> usize {
    let mut rank = 0;
    let mut max_label = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        for smaller in 0..l {
            rank += count_completions(max_label.max(smaller), labels.len() - i - 1);
        }
        max_label = max_label.max(l);
    }
    rank
}

/// Knobs for the toy training loop.
#[derive(Debug, Clone)]
pub struct TrainToyParams {
    pub steps: usize,
    pub group_size: usize,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Sequence cap in multi-token mode.
    pub max_seq_len: usize,
}

impl Default for TrainToyParams {
    fn default() -> Self {
        TrainToyParams {
            steps: 2000,
            group_size: 8,
            epsilon: 0.2,
            learning_rate: 0.5,
            momentum: 0.0,
            seed: 0,
            max_seq_len: 4,
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_reward: f64,
    pub objective: f64,
    pub grad_norm: f64,
}

/// Train the toy policy by gradient ascent on the clipped group objective.
///
/// Each step samples one observation, draws `group_size` rollouts under the
/// current policy (which doubles as the old policy: one inner epoch, refresh
/// every step), and ascends the analytic gradient.
pub fn train_toy(
    env: &ToyAggregationEnv,
    mut policy: ToyPolicy,
    params: &TrainToyParams,
) -> Result<(ToyPolicy, Vec<CurvePoint>)> {
    if params.steps == 0 {
        return Err(Error::Config("training needs at least one step".into()));
    }
    if params.group_size < 2 {
        return Err(Error::Config("group size must be at least 2".into()));
    }
    if policy.n_actions() != env.n_actions() {
        return Err(Error::Config(format!(
            "policy has {} actions but the environment needs {}",
            policy.n_actions(),
            env.n_actions()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut velocity = vec![0.0; policy.dim()];
    let mut curve = Vec::with_capacity(params.steps);

    for step in 0..params.steps {
        let obs = env.observe(&mut rng);
        let mut samples = Vec::with_capacity(params.group_size);
        let mut grads = Vec::with_capacity(params.group_size);
        let mut reward_sum = 0.0;
        for _ in 0..params.group_size {
            let seq = policy.sample_sequence(obs.context, &mut rng, params.max_seq_len)?;
            let completion = env.respond(&obs, &seq, &mut rng);
            let reward = env.reward(&completion);
            reward_sum += reward;
            let (lps, token_grads) = policy.logprob_and_grad(obs.context, &seq)?;
            samples.push(TokenizedSample {
                tokens: seq,
                logp_old: lps.clone(),
                logp_new: lps,
                reward,
            });
            grads.push(token_grads);
        }
        let group = ScoredGroup::new(samples, params.epsilon)?;
        let objective = mlpo_objective(&group)?;
        let grad = mlpo_gradient(&group, &grads, policy.dim())?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient at step {step} (objective {objective})"
            )));
        }
        for ((theta, v), g) in policy
            .params_mut()
            .iter_mut()
            .zip(velocity.iter_mut())
            .zip(grad.iter())
        {
            *v = params.momentum * *v + g;
            *theta += params.learning_rate * *v;
        }
        curve.push(CurvePoint {
            step,
            mean_reward: reward_sum / params.group_size as f64,
            objective,
            grad_norm,
        });
    }
    Ok((policy, curve))
}

/// Mean reward over the trailing `window` steps of a curve.
pub fn trailing_mean_reward(curve: &[CurvePoint], window: usize) -> f64 {
    let n = window.min(curve.len()).max(1);
    let tail = &curve[curve.len() - n..];
    tail.iter().map(|p| p.mean_reward).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_log_probs() {
        let policy = ToyPolicy::new(1, 4, false).unwrap();
        let lps = policy.log_probs(0).unwrap();
        for lp in lps {
            assert!((lp - (-(4.0f64).ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut policy = ToyPolicy::new(2, 3, true).unwrap();
        policy.params_mut()[1] = 2.5;
        policy.params_mut()[5] = -1.0;
        for ctx in 0..2 {
            let sum: f64 = policy.probs(ctx).unwrap().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_gradient_identity() {
        let mut policy = ToyPolicy::new(1, 4, false).unwrap();
        policy.params_mut().copy_from_slice(&[0.3, -0.2, 1.0, 0.0]);
        let probs = policy.probs(0).unwrap();
        let (_, grads) = policy.logprob_and_grad(0, &[2]).unwrap();
        assert!((grads[0][2] - (1.0 - probs[2])).abs() < 1e-12);
        assert!((grads[0][0] + probs[0]).abs() < 1e-12);
    }

    #[test]
    fn unknown_action_rejected() {
        let policy = ToyPolicy::new(1, 3, false).unwrap();
        assert!(policy.logprob_and_grad(0, &[7]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut policy = ToyPolicy::new(2, 3, true).unwrap();
        for (i, v) in policy.params_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let seq = vec![1, 0, 3];
        let (lps, grads) = policy.logprob_and_grad(1, &seq).unwrap();
        let h = 1e-6;
        for j in 0..policy.dim() {
            let mut plus = policy.clone();
            plus.params_mut()[j] += h;
            let mut minus = policy.clone();
            minus.params_mut()[j] -= h;
            let (lp_p, _) = plus.logprob_and_grad(1, &seq).unwrap();
            let (lp_m, _) = minus.logprob_and_grad(1, &seq).unwrap();
            for t in 0..seq.len() {
                let fd = (lp_p[t] - lp_m[t]) / (2.0 * h);
                assert!(
                    (fd - grads[t][j]).abs() < 1e-7,
                    "token {t} param {j}: fd {fd} vs analytic {}",
                    grads[t][j]
                );
            }
        }
        let _ = lps;
    }

    #[test]
    fn agreement_contexts_are_canonical() {
        let a = |s: &[&str]| -> Vec<String> { s.iter().map(|x| x.to_string()).collect() };
        // Same partition structure, different answer strings: same context.
        assert_eq!(
            agreement_context(&a(&["7", "7", "0"])),
            agreement_context(&a(&["0", "0", "7"]))
        );
        assert_ne!(
            agreement_context(&a(&["7", "7", "0"])),
            agreement_context(&a(&["7", "0", "7"]))
        );
        // K = 3 has Bell(3) = 5 patterns, all within range.
        assert_eq!(agreement_patterns(3), 5);
        for pattern in [
            a(&["x", "x", "x"]),
            a(&["x", "x", "y"]),
            a(&["x", "y", "x"]),
            a(&["x", "y", "y"]),
            a(&["x", "y", "z"]),
        ] {
            assert!(agreement_context(&pattern) < 5);
        }
    }

    #[test]
    fn env_rewards_are_binary() {
        let env = ToyAggregationEnv::new(vec![0.5, 0.5], 0.5, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let obs = env.observe(&mut rng);
            let seq = vec![rng.random_range(0..env.n_actions())];
            let completion = env.respond(&obs, &seq, &mut rng);
            let r = env.reward(&completion);
            assert!(r == 0.0 || r == 1.0);
        }
    }

    #[test]
    fn dominant_own_guess_converges() {
        let env = ToyAggregationEnv::new(vec![0.6, 0.6, 0.6], 1.0, false).unwrap();
        let policy = ToyPolicy::new(env.n_contexts(), env.n_actions(), false).unwrap();
        let params = TrainToyParams {
            steps: 800,
            seed: 7,
            ..TrainToyParams::default()
        };
        let (trained, curve) = train_toy(&env, policy, &params).unwrap();
        let probs = trained.probs(0).unwrap();
        let own = env.n_actions() - 1;
        assert!(probs[own] > 0.9, "own-guess probability {}", probs[own]);
        assert!((trailing_mean_reward(&curve, 100) - 1.0).abs() < 0.02);
    }

    #[test]
    fn training_is_reproducible() {
        let env = ToyAggregationEnv::new(vec![0.9, 0.5], 0.2, false).unwrap();
        let run = || {
            let policy = ToyPolicy::new(env.n_contexts(), env.n_actions(), false).unwrap();
            let params = TrainToyParams {
                steps: 50,
                seed: 11,
                ..TrainToyParams::default()
            };
            train_toy(&env, policy, &params).unwrap()
        };
        let (p1, c1) = run();
        let (p2, c2) = run();
        assert_eq!(p1.params(), p2.params());
        assert_eq!(c1.len(), c2.len());
        for (a, b) in c1.iter().zip(c2.iter()) {
            assert_eq!(a.mean_reward, b.mean_reward);
            assert_eq!(a.objective, b.objective);
        }
    }

    #[test]
    fn multi_token_training_runs() {
        let env = ToyAggregationEnv::new(vec![0.9, 0.3], 0.1, false).unwrap();
        let policy = ToyPolicy::new(env.n_contexts(), env.n_actions(), true).unwrap();
        let params = TrainToyParams {
            steps: 300,
            seed: 3,
            ..TrainToyParams::default()
        };
        let (trained, _) = train_toy(&env, policy, &params).unwrap();
        let probs = trained.probs(0).unwrap();
        assert!(probs[0] > 0.5, "copy-agent-1 probability {}", probs[0]);
    }
}

//! Group-relative clipped surrogate objective for leader training.
//!
//! For a group of G sampled outputs o_1..o_G with rewards R_i, the advantage
//! of every token of sample i is `A_i = R_i - mean(R)` and the objective is
//!
//! ```text
//! J = (1 / sum_i |o_i|) * sum_i sum_t min(r_it * A_i, clip(r_it, 1-eps, 1+eps) * A_i)
//! ```
//!
//! with `r_it = exp(logp_new_it - logp_old_it)`. The normalization divides by
//! the total token count of the group; there is no KL term, no per-sample
//! length division, and no advantage standard-deviation division. Classic
//! std-normalized advantages remain available behind [`AdvantageMode`] for
//! comparison experiments.

use crate::error::{Error, Result};

/// How group advantages are computed from rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdvantageMode {
    /// `A_i = R_i - mean(R)`.
    #[default]
    MeanOnly,
    /// `A_i = (R_i - mean(R)) / std(R)`, the classic group-normalized form.
    StdNormalized,
}

/// One sampled output with per-token log-probabilities under both policies.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedSample {
    pub tokens: Vec<usize>,
    pub logp_old: Vec<f64>,
    pub logp_new: Vec<f64>,
    pub reward: f64,
}

impl TokenizedSample {
    /// Sequence length |o_i|.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Integrity(format!("sample {index} has zero tokens")));
        }
        if self.logp_old.len() != self.tokens.len() || self.logp_new.len() != self.tokens.len() {
            return Err(Error::Integrity(format!(
                "sample {index}: token/log-probability length mismatch ({} tokens, {} old, {} new)",
                self.tokens.len(),
                self.logp_old.len(),
                self.logp_new.len()
            )));
        }
        for (name, logps) in [("old", &self.logp_old), ("new", &self.logp_new)] {
            for &lp in logps.iter() {
                if !lp.is_finite() {
                    return Err(Error::Numeric(format!(
                        "sample {index}: non-finite {name} log-probability"
                    )));
                }
                if lp > 1e-9 {
                    return Err(Error::Integrity(format!(
                        "sample {index}: {name} log-probability {lp} exceeds 0"
                    )));
                }
            }
        }
        if !self.reward.is_finite() {
            return Err(Error::Numeric(format!("sample {index}: non-finite reward")));
        }
        Ok(())
    }
}

/// G samples for one prompt, with the clip threshold and filled advantages.
#[derive(Debug, Clone)]
pub struct ScoredGroup {
    samples: Vec<TokenizedSample>,
    epsilon: f64,
    advantages: Vec<f64>,
}

impl ScoredGroup {
    /// Build a group and fill advantages from the samples' rewards.
    pub fn new(samples: Vec<TokenizedSample>, epsilon: f64) -> Result<Self> {
        Self::with_advantage_mode(samples, epsilon, AdvantageMode::MeanOnly)
    }

    pub fn with_advantage_mode(
        samples: Vec<TokenizedSample>,
        epsilon: f64,
        mode: AdvantageMode,
    ) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Integrity(
                "a scored group needs at least two samples".into(),
            ));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Config(format!(
                "clip threshold must lie in (0, 1), got {epsilon}"
            )));
        }
        for (i, sample) in samples.iter().enumerate() {
            sample.validate(i)?;
        }
        let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
        let advantages = match mode {
            AdvantageMode::MeanOnly => advantages(&rewards)?,
            AdvantageMode::StdNormalized => advantages_std_normalized(&rewards)?,
        };
        Ok(ScoredGroup {
            samples,
            epsilon,
            advantages,
        })
    }

    pub fn samples(&self) -> &[TokenizedSample] {
        &self.samples
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }

    /// Total token count across the group.
    pub fn total_tokens(&self) -> usize {
        self.samples.iter().map(TokenizedSample::len).sum()
    }
}

/// Group-relative advantages: `A_i = R_i - mean(R)`, broadcast to every
/// token of sample i.
pub fn advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Integrity("advantages over an empty group".into()));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// Classic variant dividing by the group standard deviation.
pub fn advantages_std_normalized(rewards: &[f64]) -> Result<Vec<f64>> {
    let centered = advantages(rewards)?;
    let var = centered.iter().map(|a| a * a).sum::<f64>() / centered.len() as f64;
    let std = var.sqrt();
    if std == 0.0 {
        // Constant rewards carry no signal in either mode.
        return Ok(centered);
    }
    Ok(centered.into_iter().map(|a| a / std).collect())
}

/// Per-token importance ratio `exp(logp_new - logp_old)`.
pub fn importance_ratio(logp_new: f64, logp_old: f64) -> Result<f64> {
    if !logp_new.is_finite() || !logp_old.is_finite() {
        return Err(Error::Numeric(
            "importance ratio requires finite log-probabilities".into(),
        ));
    }
    Ok((logp_new - logp_old).exp())
}

/// One clipped surrogate term: `min(r*A, clip(r, 1-eps, 1+eps)*A)`.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// The surrogate objective over one group, normalized by total token count.
pub fn mlpo_objective(group: &ScoredGroup) -> Result<f64> {
    let total_tokens = group.total_tokens();
    let mut sum = 0.0;
    for (sample, &adv) in group.samples.iter().zip(group.advantages.iter()) {
        for (&lp_new, &lp_old) in sample.logp_new.iter().zip(sample.logp_old.iter()) {
            let ratio = importance_ratio(lp_new, lp_old)?;
            sum += clipped_term(ratio, adv, group.epsilon);
        }
    }
    Ok(sum / total_tokens as f64)
}

/// Gradient of [`mlpo_objective`] with respect to policy parameters, given
/// `d logp_new / d theta` for every token.
///
/// `grad_logp_new[i][t]` must be the length-`dim` gradient of sample i's
/// token-t new log-probability. At a clip boundary the unclipped branch is
/// taken, matching the subgradient convention of the `min`.
pub fn mlpo_gradient(
    group: &ScoredGroup,
    grad_logp_new: &[Vec<Vec<f64>>],
    dim: usize,
) -> Result<Vec<f64>> {
    if grad_logp_new.len() != group.samples.len() {
        return Err(Error::Integrity(format!(
            "gradient rows ({}) do not match group size ({})",
            grad_logp_new.len(),
            group.samples.len()
        )));
    }
    let total_tokens = group.total_tokens() as f64;
    let mut grad = vec![0.0; dim];
    for ((sample, &adv), token_grads) in group
        .samples
        .iter()
        .zip(group.advantages.iter())
        .zip(grad_logp_new.iter())
    {
        if token_grads.len() != sample.len() {
            return Err(Error::Integrity(format!(
                "gradient has {} token entries for a {}-token sample",
                token_grads.len(),
                sample.len()
            )));
        }
        for ((&lp_new, &lp_old), g) in sample
            .logp_new
            .iter()
            .zip(sample.logp_old.iter())
            .zip(token_grads.iter())
        {
            if g.len() != dim {
                return Err(Error::Integrity(format!(
                    "token gradient dimension {} does not match {}",
                    g.len(),
                    dim
                )));
            }
            let ratio = importance_ratio(lp_new, lp_old)?;
            // d/dtheta min(r*A, clip(r)*A): the unclipped branch contributes
            // A * r * dlogp; the clipped branch is locally constant.
            let unclipped_active = if adv >= 0.0 {
                ratio <= 1.0 + group.epsilon
            } else {
                ratio >= 1.0 - group.epsilon
            };
            if unclipped_active {
                let scale = adv * ratio / total_tokens;
                for (slot, &gj) in grad.iter_mut().zip(g.iter()) {
                    *slot += scale * gj;
                }
            }
        }
    }
    for v in &grad {
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite objective gradient".into()));
        }
    }
    Ok(grad)
}

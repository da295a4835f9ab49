//! Group-normalized advantages, per-token advantage modulation, and the
//! clipped-surrogate update over a tabular categorical policy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{TokenRole, Trajectory};

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - log_z).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|l| l.exp()).collect()
}

/// Tabular categorical policy: one logit vector per visited state. States
/// never visited behave as all-zero logits (uniform).
///
/// Actions can optionally be *tied* into groups: each group owns one shared
/// bias added to its actions' logits in every state, so a single parameter
/// moves a whole family of actions at once. This is the tabular analogue of
/// shared output-layer weights in a neural policy, where feedback on one
/// search decision shifts the propensity to search everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPolicy<K: Ord + Clone> {
    pub n_actions: usize,
    entries: Vec<(K, Vec<f64>)>,
    /// `groups[a]` is the tied group of action `a`; empty means no tying.
    #[serde(default)]
    groups: Vec<usize>,
    #[serde(default)]
    group_bias: Vec<f64>,
    #[serde(skip)]
    index: BTreeMap<K, usize>,
}

impl<K: Ord + Clone> CategoricalPolicy<K> {
    pub fn new(n_actions: usize) -> Self {
        CategoricalPolicy {
            n_actions,
            entries: Vec::new(),
            groups: Vec::new(),
            group_bias: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Tie actions into shared-bias groups; biases start at zero.
    pub fn set_groups(&mut self, groups: Vec<usize>) {
        assert_eq!(groups.len(), self.n_actions, "one group per action");
        let n_groups = groups.iter().max().map_or(0, |&g| g + 1);
        self.groups = groups;
        self.group_bias = vec![0.0; n_groups];
    }

    pub fn group_of(&self, action: usize) -> Option<usize> {
        self.groups.get(action).copied()
    }

    pub fn group_count(&self) -> usize {
        self.group_bias.len()
    }

    pub fn group_bias(&self) -> &[f64] {
        &self.group_bias
    }

    pub fn group_bias_mut(&mut self) -> &mut [f64] {
        &mut self.group_bias
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, (k, _))| (k.clone(), i))
            .collect();
    }

    /// Restores the lookup index after deserialization.
    pub fn finalize(&mut self) {
        self.rebuild_index();
    }

    /// Effective logits: the state's table row plus any tied group biases.
    pub fn logits(&self, state: &K) -> Vec<f64> {
        let mut row = match self.index.get(state) {
            Some(&i) => self.entries[i].1.clone(),
            None => vec![0.0; self.n_actions],
        };
        if !self.groups.is_empty() {
            for (a, l) in row.iter_mut().enumerate() {
                *l += self.group_bias[self.groups[a]];
            }
        }
        row
    }

    pub fn log_probs(&self, state: &K) -> Vec<f64> {
        log_softmax(&self.logits(state))
    }

    pub fn logits_mut(&mut self, state: &K) -> &mut Vec<f64> {
        if !self.index.contains_key(state) {
            self.entries.push((state.clone(), vec![0.0; self.n_actions]));
            let i = self.entries.len() - 1;
            self.index.insert(state.clone(), i);
        }
        let i = self.index[state];
        &mut self.entries[i].1
    }

    pub fn states(&self) -> impl Iterator<Item = &K> {
        self.entries.iter().map(|(k, _)| k)
    }
}

/// Â_i = (R_i - mean) / std, with population std. Degenerate groups
/// (std below 1e-6) get exact zeros.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std < 1e-6 {
        return vec![0.0; n];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModulationScope {
    QueryOnly,
    ThinkPlusQuery,
    AllTokens,
}

/// Per-token advantages for one trajectory after IG modulation.
#[derive(Debug, Clone)]
pub struct AdvantageMap {
    pub base: f64,
    pub per_token: Vec<f64>,
    pub scope: ModulationScope,
}

impl AdvantageMap {
    pub fn constant(base: f64, len: usize, scope: ModulationScope) -> Self {
        AdvantageMap { base, per_token: vec![base; len], scope }
    }
}

/// Spread `alpha * IG_t` over the chosen token scope. With query-length
/// normalization on, each step's total contribution is exactly
/// `alpha * IG_t` regardless of how many tokens carry it; with it off,
/// every in-scope token receives the full `alpha * IG_t`.
pub fn modulate(
    base: f64,
    ig_values: &[f64],
    traj: &Trajectory,
    alpha: f64,
    scope: ModulationScope,
    length_norm: bool,
) -> Result<AdvantageMap> {
    if ig_values.len() != traj.step_count() {
        return Err(Error::MisalignedRecords(format!(
            "{} IG values for {} search steps",
            ig_values.len(),
            traj.step_count()
        )));
    }
    let mut map = AdvantageMap::constant(base, traj.token_count(), scope);
    match scope {
        ModulationScope::QueryOnly | ModulationScope::ThinkPlusQuery => {
            for (t, &ig) in ig_values.iter().enumerate() {
                let mut positions = traj.query_token_positions(t)?;
                if scope == ModulationScope::ThinkPlusQuery {
                    positions.extend(traj.think_token_positions(t)?);
                }
                if positions.is_empty() {
                    continue;
                }
                let bonus = if length_norm {
                    alpha * ig / positions.len() as f64
                } else {
                    alpha * ig
                };
                for p in positions {
                    map.per_token[p] += bonus;
                }
            }
        }
        ModulationScope::AllTokens => {
            let policy_positions = traj.policy_token_positions();
            if !policy_positions.is_empty() {
                let total: f64 = ig_values.iter().map(|ig| alpha * ig).sum();
                let bonus = if length_norm {
                    total / policy_positions.len() as f64
                } else {
                    total
                };
                for p in policy_positions {
                    map.per_token[p] += bonus;
                }
            }
        }
    }
    // Environment tokens never carry advantage.
    for p in 0..traj.token_count() {
        if traj.token_role(p) == Some(TokenRole::Documents) {
            map.per_token[p] = base;
        }
    }
    Ok(map)
}

/// One policy token backed by a parametric action choice.
#[derive(Debug, Clone)]
pub struct TokenTerm<K> {
    pub state: K,
    pub action: usize,
    /// Tokens the action's log-probability is split across.
    pub action_tokens: usize,
    pub old_logprob: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UpdateStats {
    pub grad_norm: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub loss: f64,
}

/// Clipped-surrogate loss with a KL penalty toward the reference policy,
/// averaged over all policy tokens. `scaffold` holds advantages of policy
/// tokens emitted deterministically (probability one); they contribute to
/// the mean but carry no gradient.
pub fn surrogate_loss<K: Ord + Clone>(
    policy: &CategoricalPolicy<K>,
    terms: &[TokenTerm<K>],
    scaffold: &[f64],
    eps: f64,
    beta: f64,
    reference: &CategoricalPolicy<K>,
) -> f64 {
    let m = (terms.len() + scaffold.len()) as f64;
    if m == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for term in terms {
        let lp_new = policy.log_probs(&term.state)[term.action] / term.action_tokens as f64;
        let lp_old = term.old_logprob / term.action_tokens as f64;
        let ratio = (lp_new - lp_old).exp();
        let unclipped = ratio * term.advantage;
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * term.advantage;
        let kl = kl_divergence(
            &policy.log_probs(&term.state),
            &reference.log_probs(&term.state),
        );
        total += -unclipped.min(clipped) + beta * kl;
    }
    for &adv in scaffold {
        total += -adv;
    }
    total / m
}

fn kl_divergence(lp_p: &[f64], lp_q: &[f64]) -> f64 {
    lp_p
        .iter()
        .zip(lp_q)
        .map(|(&a, &b)| a.exp() * (a - b))
        .sum()
}

/// Gradient of the surrogate loss: per-state logit gradients plus the
/// gradients of any tied group biases (each the sum of its actions'
/// logit gradients across all states, by the chain rule).
#[derive(Debug, Clone)]
pub struct PolicyGrad<K> {
    pub by_state: BTreeMap<K, Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Analytic gradient of [`surrogate_loss`] with respect to the logits,
/// plus summary statistics.
pub fn surrogate_grad<K: Ord + Clone>(
    policy: &CategoricalPolicy<K>,
    terms: &[TokenTerm<K>],
    scaffold: &[f64],
    eps: f64,
    beta: f64,
    reference: &CategoricalPolicy<K>,
) -> (PolicyGrad<K>, UpdateStats) {
    let m = (terms.len() + scaffold.len()) as f64;
    let mut grad: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    let mut bias_grad = vec![0.0; policy.group_count()];
    let mut kl_sum = 0.0;
    let mut clipped_tokens = 0usize;
    for term in terms {
        let lp = policy.log_probs(&term.state);
        let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let inv_n = 1.0 / term.action_tokens as f64;
        let lp_new = lp[term.action] * inv_n;
        let lp_old = term.old_logprob * inv_n;
        let ratio = (lp_new - lp_old).exp();
        let unclipped = ratio * term.advantage;
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * term.advantage;
        let active = unclipped <= clipped;
        if !active {
            clipped_tokens += 1;
        }

        let lp_ref = reference.log_probs(&term.state);
        let kl = kl_divergence(&lp, &lp_ref);
        kl_sum += kl;

        let g = grad
            .entry(term.state.clone())
            .or_insert_with(|| vec![0.0; policy.n_actions]);
        for b in 0..policy.n_actions {
            // Surrogate term: dL/d lp_new_tok = -A * ratio when the
            // unclipped branch is the minimum, zero otherwise.
            let mut d = 0.0;
            if active {
                let d_lp = inv_n * (f64::from(b == term.action) - probs[b]);
                d += -term.advantage * ratio * d_lp / m;
            }
            // KL term.
            d += beta * probs[b] * (lp[b] - lp_ref[b] - kl) / m;
            g[b] += d;
            if let Some(j) = policy.group_of(b) {
                bias_grad[j] += d;
            }
        }
    }
    let grad_norm = grad
        .values()
        .flat_map(|v| v.iter())
        .chain(bias_grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    let stats = UpdateStats {
        grad_norm,
        mean_kl: if terms.is_empty() { 0.0 } else { kl_sum / terms.len() as f64 },
        clip_fraction: if terms.is_empty() { 0.0 } else { clipped_tokens as f64 / terms.len() as f64 },
        loss: surrogate_loss(policy, terms, scaffold, eps, beta, reference),
    };
    (PolicyGrad { by_state: grad, bias: bias_grad }, stats)
}

/// One gradient-descent step on the surrogate loss. `bias_lr` is the step
/// size for tied group biases (ignored when the policy has none).
pub fn surrogate_update<K: Ord + Clone>(
    policy: &CategoricalPolicy<K>,
    terms: &[TokenTerm<K>],
    scaffold: &[f64],
    eps: f64,
    beta: f64,
    lr: f64,
    bias_lr: f64,
    reference: &CategoricalPolicy<K>,
) -> Result<(CategoricalPolicy<K>, UpdateStats)> {
    let (grad, stats) = surrogate_grad(policy, terms, scaffold, eps, beta, reference);
    if !stats.grad_norm.is_finite() || !stats.loss.is_finite() {
        return Err(Error::NonFiniteGradient(0));
    }
    let mut next = policy.clone();
    next.finalize();
    for (state, g) in grad.by_state {
        let logits = next.logits_mut(&state);
        for (l, gi) in logits.iter_mut().zip(g) {
            *l -= lr * gi;
        }
    }
    for (b, gi) in next.group_bias_mut().iter_mut().zip(grad.bias) {
        *b -= bias_lr * gi;
    }
    Ok((next, stats))
}

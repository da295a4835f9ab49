//! Gold-answer log-probability scoring.
//!
//! The default scorer is a smoothed copy model: each answer token's
//! probability mixes a count-based copy distribution over the context with
//! a uniform floor over the vocabulary,
//!
//!   p(w | C) = mu * (count(w, C) + 1) / (|C| + V) + (1 - mu) / V.
//!
//! Confidence in the gold answer therefore rises whenever answer tokens
//! appear in the context, which is the behavior the step-level IG signal
//! keys on. A table-driven scorer is provided for tests that need pinned
//! log-probabilities.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Token;

pub const MAX_CONTEXT_TOKENS: usize = 8192;
pub const MAX_GOLD_VARIANTS: usize = 3;

/// Where a scoring context came from, for bookkeeping in IG records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Real,
    Counterfactual(usize),
}

#[derive(Debug, Clone)]
pub struct ScoringContext {
    pub tokens: Vec<Token>,
    pub provenance: Provenance,
}

impl ScoringContext {
    pub fn new(tokens: Vec<Token>, provenance: Provenance) -> Self {
        ScoringContext { tokens, provenance }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerLogProb {
    /// Nats per answer token: the mean of `per_token`.
    pub value: f64,
    pub per_token: Vec<f64>,
}

pub trait AnswerScorer: Send + Sync {
    fn answer_logprob(&self, ctx: &ScoringContext, answer: &[Token]) -> Result<AnswerLogProb>;

    /// Mean of `answer_logprob` values over the gold aliases (at most
    /// [`MAX_GOLD_VARIANTS`]).
    fn alias_logprob(&self, ctx: &ScoringContext, aliases: &[Vec<Token>]) -> Result<f64> {
        if aliases.is_empty() {
            return Err(Error::EmptyAnswer);
        }
        if aliases.len() > MAX_GOLD_VARIANTS {
            return Err(Error::TooManyAliases { got: aliases.len(), max: MAX_GOLD_VARIANTS });
        }
        let mut sum = 0.0;
        for alias in aliases {
            sum += self.answer_logprob(ctx, alias)?.value;
        }
        Ok(sum / aliases.len() as f64)
    }

    /// Score all context variants in one batched invocation. Results are
    /// identical to per-context calls; only the call accounting differs.
    fn score_variants(&self, contexts: &[ScoringContext], aliases: &[Vec<Token>]) -> Result<Vec<f64>> {
        self.record_batched_call();
        contexts
            .iter()
            .enumerate()
            .map(|(index, ctx)| {
                self.alias_logprob(ctx, aliases)
                    .map_err(|source| Error::AtIndex { index, source: Box::new(source) })
            })
            .collect()
    }

    fn record_batched_call(&self);

    /// Number of batched scoring invocations so far.
    fn batched_calls(&self) -> u64;
}

#[derive(Debug)]
pub struct CopyScorer {
    pub mu: f64,
    pub vocab_size: usize,
    pub max_context: usize,
    calls: AtomicU64,
}

impl CopyScorer {
    pub fn new(mu: f64, vocab_size: usize) -> Self {
        CopyScorer { mu, vocab_size, max_context: MAX_CONTEXT_TOKENS, calls: AtomicU64::new(0) }
    }

    fn token_prob(&self, count: usize, ctx_len: usize) -> f64 {
        let v = self.vocab_size as f64;
        self.mu * (count as f64 + 1.0) / (ctx_len as f64 + v) + (1.0 - self.mu) / v
    }
}

impl AnswerScorer for CopyScorer {
    fn answer_logprob(&self, ctx: &ScoringContext, answer: &[Token]) -> Result<AnswerLogProb> {
        if answer.is_empty() {
            return Err(Error::EmptyAnswer);
        }
        if ctx.tokens.len() > self.max_context {
            return Err(Error::ContextTooLong { len: ctx.tokens.len(), max: self.max_context });
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &ctx.tokens {
            if answer.iter().any(|a| a == t) {
                *counts.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let per_token: Vec<f64> = answer
            .iter()
            .map(|a| {
                let c = counts.get(a.as_str()).copied().unwrap_or(0);
                self.token_prob(c, ctx.tokens.len()).ln()
            })
            .collect();
        let value = per_token.iter().sum::<f64>() / per_token.len() as f64;
        Ok(AnswerLogProb { value, per_token })
    }

    /// Same result as the default mean-of-`answer_logprob` implementation,
    /// but with a single counting pass over the context for all aliases.
    fn alias_logprob(&self, ctx: &ScoringContext, aliases: &[Vec<Token>]) -> Result<f64> {
        if aliases.is_empty() {
            return Err(Error::EmptyAnswer);
        }
        if aliases.len() > MAX_GOLD_VARIANTS {
            return Err(Error::TooManyAliases { got: aliases.len(), max: MAX_GOLD_VARIANTS });
        }
        if aliases.iter().any(|a| a.is_empty()) {
            return Err(Error::EmptyAnswer);
        }
        if ctx.tokens.len() > self.max_context {
            return Err(Error::ContextTooLong { len: ctx.tokens.len(), max: self.max_context });
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for alias in aliases {
            for a in alias {
                counts.entry(a.as_str()).or_insert(0);
            }
        }
        for t in &ctx.tokens {
            if let Some(c) = counts.get_mut(t.as_str()) {
                *c += 1;
            }
        }
        let mut sum = 0.0;
        for alias in aliases {
            let value = alias
                .iter()
                .map(|a| self.token_prob(counts[a.as_str()], ctx.tokens.len()).ln())
                .sum::<f64>()
                / alias.len() as f64;
            sum += value;
        }
        Ok(sum / aliases.len() as f64)
    }

    fn record_batched_call(&self) {
        self.calls.fetch_add(1, Ordering::Relaxed);
    }

    fn batched_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Test scorer returning pre-seeded values in order, regardless of context
/// content.
#[derive(Debug, Default)]
pub struct TableScorer {
    values: Mutex<VecDeque<f64>>,
    calls: AtomicU64,
}

impl TableScorer {
    pub fn with_values(values: impl IntoIterator<Item = f64>) -> Self {
        TableScorer { values: Mutex::new(values.into_iter().collect()), calls: AtomicU64::new(0) }
    }
}

impl AnswerScorer for TableScorer {
    fn answer_logprob(&self, _ctx: &ScoringContext, answer: &[Token]) -> Result<AnswerLogProb> {
        if answer.is_empty() {
            return Err(Error::EmptyAnswer);
        }
        let v = self
            .values
            .lock()
            .unwrap()
            .pop_front()
            .expect("table scorer ran out of values");
        Ok(AnswerLogProb { value: v, per_token: vec![v] })
    }

    fn alias_logprob(&self, ctx: &ScoringContext, aliases: &[Vec<Token>]) -> Result<f64> {
        // One table value per context, not per alias.
        if aliases.is_empty() {
            return Err(Error::EmptyAnswer);
        }
        Ok(self.answer_logprob(ctx, &aliases[0])?.value)
    }

    fn record_batched_call(&self) {
        self.calls.fetch_add(1, Ordering::Relaxed);
    }

    fn batched_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

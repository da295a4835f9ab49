//! Step-level information-gain scoring and its stabilization pipeline.
//!
//! For each search step, the gold answer's log-probability under the real
//! context is compared against the mean over counterfactual contexts in
//! which the step's retrieval is replaced. The raw difference then passes
//! through a fixed three-stage pipeline: dead zone, negative damping, soft
//! clip — in that order.

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{refine_extract, RolloutConfig, RolloutOutcome};
use crate::scorer::{AnswerScorer, Provenance, ScoringContext};
use crate::trajectory::Token;
use crate::world::{Question, RetrievalMode, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMode {
    /// Replace the step's documents and refinement with another question's.
    RandomDocsRefine,
    /// Replace the documents but keep the real refinement.
    RandomDocsOnly,
    /// Re-retrieve the same query with bottom-k ranking.
    BottomK,
    /// Drop the step's documents and refinement entirely (one baseline).
    Empty,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IgConfig {
    pub n_counterfactual: usize,
    pub baseline: BaselineMode,
    /// Dead-zone threshold (delta).
    pub delta: f64,
    /// Negative damping factor (lambda).
    pub lambda: f64,
    /// Soft-clip knee (eta); infinity disables clipping.
    pub eta: f64,
}

impl Default for IgConfig {
    fn default() -> Self {
        IgConfig {
            n_counterfactual: 3,
            baseline: BaselineMode::RandomDocsRefine,
            delta: 0.5,
            lambda: 0.1,
            eta: 3.0,
        }
    }
}

impl IgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_counterfactual == 0 {
            return Err(Error::InvalidHyperparam("n_counterfactual must be >= 1".into()));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::InvalidHyperparam(format!("delta must be >= 0, got {}", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidHyperparam(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidHyperparam(format!("eta must be > 0, got {}", self.eta)));
        }
        Ok(())
    }
}

/// `sign(v) * (eta + ln(1 + |v| - eta))` beyond the knee, identity inside.
pub fn soft_clip(v: f64, eta: f64) -> f64 {
    if v.abs() > eta {
        v.signum() * (eta + (1.0 + v.abs() - eta).ln())
    } else {
        v
    }
}

/// Raw value with the pipeline's intermediate stages.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StabilizedIg {
    pub raw: f64,
    pub after_deadzone: f64,
    pub after_damping: f64,
    pub value: f64,
}

/// Dead zone, then negative damping, then soft clip.
pub fn stabilize(raw: f64, cfg: &IgConfig) -> Result<StabilizedIg> {
    cfg.validate()?;
    let after_deadzone = if raw.abs() < cfg.delta { 0.0 } else { raw };
    let after_damping = if after_deadzone < 0.0 {
        cfg.lambda * after_deadzone
    } else {
        after_deadzone
    };
    let value = soft_clip(after_damping, cfg.eta);
    Ok(StabilizedIg { raw, after_deadzone, after_damping, value })
}

/// One donor retrieval outcome available for counterfactual substitution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolEntry {
    pub question: usize,
    pub step: usize,
    pub docs: Vec<Token>,
    pub refine: Vec<Token>,
}

/// Retrieval outcomes harvested from a batch of rollouts, used as donors
/// for the random-substitution baselines.
#[derive(Debug, Clone, Default)]
pub struct CounterfactualPool {
    entries: Vec<PoolEntry>,
}

impl CounterfactualPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rollouts(rollouts: &[RolloutOutcome]) -> Self {
        let mut pool = Self::new();
        for r in rollouts {
            pool.add_rollout(r);
        }
        pool
    }

    pub fn add_rollout(&mut self, r: &RolloutOutcome) {
        for t in 0..r.trajectory.step_count() {
            self.entries.push(PoolEntry {
                question: r.question,
                step: t,
                docs: r.trajectory.docs_tokens(t).expect("step exists").to_vec(),
                refine: r.trajectory.refine_tokens(t).expect("step exists").to_vec(),
            });
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices of entries donated by other questions.
    fn eligible(&self, question: usize) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].question != question)
            .collect()
    }
}

/// Full accounting for one step's IG computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IgRecord {
    pub step: usize,
    pub baseline: BaselineMode,
    pub real_logprob: f64,
    pub counterfactual_logprobs: Vec<f64>,
    pub raw: f64,
    pub after_deadzone: f64,
    pub after_damping: f64,
    /// Final stabilized IG used for advantage modulation.
    pub value: f64,
}

fn real_context(question: &Question, outcome: &RolloutOutcome, step: usize) -> Vec<Token> {
    let seg = outcome.trajectory.steps()[step].refine_seg;
    let mut ctx = question.tokens.clone();
    ctx.extend(outcome.trajectory.tokens_through_segment(seg));
    ctx
}

/// Everything up to and including the step's query, with no retrieval.
fn prefix_context(question: &Question, outcome: &RolloutOutcome, step: usize) -> Vec<Token> {
    let seg = outcome.trajectory.steps()[step].search_seg;
    let mut ctx = question.tokens.clone();
    ctx.extend(outcome.trajectory.tokens_through_segment(seg));
    ctx
}

fn substituted_context(
    question: &Question,
    outcome: &RolloutOutcome,
    step: usize,
    docs: &[Token],
    refine: &[Token],
) -> Vec<Token> {
    let mut ctx = prefix_context(question, outcome, step);
    ctx.extend(docs.iter().cloned());
    ctx.extend(refine.iter().cloned());
    ctx
}

/// IG records for every search step of one rollout. Counterfactual
/// sampling is deterministic in `seed`; all variants of a step are scored
/// in a single batched scorer call.
pub fn compute_rollout_ig(
    outcome: &RolloutOutcome,
    question: &Question,
    world: &World,
    pool: &CounterfactualPool,
    scorer: &dyn AnswerScorer,
    cfg: &IgConfig,
    rollout_cfg: &RolloutConfig,
    seed: u64,
) -> Result<Vec<IgRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(outcome.trajectory.step_count());
    for step in 0..outcome.trajectory.step_count() {
        let mut contexts = vec![ScoringContext::new(
            real_context(question, outcome, step),
            Provenance::Real,
        )];
        match cfg.baseline {
            BaselineMode::Empty => {
                contexts.push(ScoringContext::new(
                    prefix_context(question, outcome, step),
                    Provenance::Counterfactual(0),
                ));
            }
            BaselineMode::BottomK => {
                let query = outcome.trajectory.query_tokens(step)?;
                let res = world.retrieve(query, rollout_cfg.k, RetrievalMode::BottomK)?;
                let docs: Vec<Token> = res
                    .doc_ids
                    .iter()
                    .flat_map(|&d| world.corpus[d].tokens.iter().cloned())
                    .collect();
                let refine = match res.doc_ids.first() {
                    Some(&d) => refine_extract(world, d, rollout_cfg.refine_cap),
                    None => Vec::new(),
                };
                for j in 0..cfg.n_counterfactual {
                    contexts.push(ScoringContext::new(
                        substituted_context(question, outcome, step, &docs, &refine),
                        Provenance::Counterfactual(j),
                    ));
                }
            }
            BaselineMode::RandomDocsRefine | BaselineMode::RandomDocsOnly => {
                let eligible = pool.eligible(question.id);
                if eligible.is_empty() {
                    return Err(Error::PoolExhausted { question: question.id });
                }
                let picks: Vec<usize> = if eligible.len() >= cfg.n_counterfactual {
                    index_sample(&mut rng, eligible.len(), cfg.n_counterfactual)
                        .into_iter()
                        .map(|i| eligible[i])
                        .collect()
                } else {
                    log::warn!(
                        "question {}: {} eligible donors for {} counterfactuals; sampling with replacement",
                        question.id,
                        eligible.len(),
                        cfg.n_counterfactual
                    );
                    (0..cfg.n_counterfactual)
                        .map(|_| eligible[rng.gen_range(0..eligible.len())])
                        .collect()
                };
                for (j, &idx) in picks.iter().enumerate() {
                    let entry = &pool.entries[idx];
                    let refine: &[Token] = match cfg.baseline {
                        BaselineMode::RandomDocsOnly => outcome.trajectory.refine_tokens(step)?,
                        _ => &entry.refine,
                    };
                    contexts.push(ScoringContext::new(
                        substituted_context(question, outcome, step, &entry.docs, refine),
                        Provenance::Counterfactual(j),
                    ));
                }
            }
        }

        let scores = scorer.score_variants(&contexts, &question.gold_aliases)?;
        let real_logprob = scores[0];
        let counterfactual_logprobs = scores[1..].to_vec();
        let mean_cf = counterfactual_logprobs.iter().sum::<f64>()
            / counterfactual_logprobs.len() as f64;
        let raw = real_logprob - mean_cf;
        let s = stabilize(raw, cfg)?;
        records.push(IgRecord {
            step,
            baseline: cfg.baseline,
            real_logprob,
            counterfactual_logprobs,
            raw,
            after_deadzone: s.after_deadzone,
            after_damping: s.after_damping,
            value: s.value,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{run_rollout, uniform_policy, StateKey, ACT_ANSWER_EVIDENCE, ACT_SEARCH_CHAIN};
    use crate::scorer::{CopyScorer, TableScorer};
    use crate::world::{generate_world, WorldSpec};

    #[test]
    fn pipeline_stage_values() {
        let cfg = IgConfig::default();
        // Dead zone: small values of either sign vanish, larger pass.
        assert_eq!(stabilize(0.13, &cfg).unwrap().value, 0.0);
        assert_eq!(stabilize(-0.24, &cfg).unwrap().value, 0.0);
        assert_eq!(stabilize(1.72, &cfg).unwrap().value, 1.72);
        // Negative damping after the dead zone.
        let neg = stabilize(-2.0, &cfg).unwrap();
        assert!((neg.after_damping + 0.2).abs() < 1e-12);
        assert!((neg.value + 0.2).abs() < 1e-12);
        // Soft clip beyond the knee.
        let big = stabilize(5.0, &cfg).unwrap();
        assert!((big.value - (3.0 + 3.0_f64.ln())).abs() < 1e-12);
        assert!((soft_clip(-5.0, 3.0) + (3.0 + 3.0_f64.ln())).abs() < 1e-12);
        assert_eq!(soft_clip(2.9, 3.0), 2.9);
    }

    #[test]
    fn pipeline_order_is_deadzone_damping_clip() {
        // -4.0: survives the dead zone, damps to -0.4, which is inside the
        // clip knee. Clipping first would have given -(3 + ln 2) * 0.1.
        let out = stabilize(-4.0, &IgConfig::default()).unwrap();
        assert!((out.value + 0.4).abs() < 1e-12);
    }

    #[test]
    fn soft_clip_is_continuous_and_monotone() {
        let eta = 3.0;
        assert!((soft_clip(eta + 1e-12, eta) - eta).abs() < 1e-9);
        let xs: Vec<f64> = (0..200).map(|i| -10.0 + 0.1 * i as f64).collect();
        for w in xs.windows(2) {
            assert!(soft_clip(w[1], eta) >= soft_clip(w[0], eta));
        }
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        let bad = [
            IgConfig { delta: -0.1, ..IgConfig::default() },
            IgConfig { lambda: 1.5, ..IgConfig::default() },
            IgConfig { lambda: -0.1, ..IgConfig::default() },
            IgConfig { eta: 0.0, ..IgConfig::default() },
            IgConfig { n_counterfactual: 0, ..IgConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(stabilize(1.0, &cfg), Err(Error::InvalidHyperparam(_))));
        }
        // Infinity disables clipping but is a legal knee.
        let open = IgConfig { eta: f64::INFINITY, ..IgConfig::default() };
        assert_eq!(stabilize(50.0, &open).unwrap().value, 50.0);
    }

    fn chain_world() -> World {
        generate_world(
            21,
            // Short distractors: these tests reason about count effects, not
            // length dilution.
            WorldSpec { hop_counts: [8, 8, 4], entity_pool: 40, distractor_len: 60, ..WorldSpec::default() },
        )
        .unwrap()
    }

    fn chain_rollout(world: &World, qid: usize, seed: u64) -> RolloutOutcome {
        let q = &world.questions[qid];
        let mut p = uniform_policy();
        for s in 0..=5u8 {
            for resolved in [false, true] {
                let st = StateKey { hops: q.hops as u8, searches: s, resolved };
                let logits = p.logits_mut(&st);
                logits.iter_mut().for_each(|l| *l = -50.0);
                if resolved {
                    logits[ACT_ANSWER_EVIDENCE] = 0.0;
                } else {
                    logits[ACT_SEARCH_CHAIN] = 0.0;
                }
            }
        }
        run_rollout(&p, world, q, &RolloutConfig::default(), seed, true).unwrap()
    }

    #[test]
    fn pinned_two_step_example() {
        // Real/counterfactual log-probabilities forced through a table
        // scorer: step one 1.52 nats of gain, step two 0.74.
        let world = chain_world();
        let q2 = world.questions.iter().find(|q| q.hops == 2).unwrap();
        let outcome = chain_rollout(&world, q2.id, 3);
        assert_eq!(outcome.trajectory.step_count(), 2);

        let donor = chain_rollout(&world, if q2.id == 0 { 1 } else { 0 }, 4);
        let pool = CounterfactualPool::from_rollouts(&[donor]);

        let scorer = TableScorer::with_values([
            -2.07, -3.59, -3.59, -3.59, // step 0: real then three counterfactuals
            -0.41, -1.15, -1.15, -1.15, // step 1
        ]);
        let records = compute_rollout_ig(
            &outcome,
            q2,
            &world,
            &pool,
            &scorer,
            &IgConfig::default(),
            &RolloutConfig::default(),
            11,
        )
        .unwrap();
        assert_eq!(records.len(), 2);
        assert!((records[0].raw - 1.52).abs() < 1e-12);
        assert!((records[0].value - 1.52).abs() < 1e-12);
        assert!((records[1].raw - 0.74).abs() < 1e-12);
        assert!((records[1].value - 0.74).abs() < 1e-12);
        assert_eq!(records[0].counterfactual_logprobs.len(), 3);
    }

    #[test]
    fn informative_step_gains_over_random_substitution() {
        let world = chain_world();
        let q1 = world.questions.iter().find(|q| q.hops == 1).unwrap();
        let outcome = chain_rollout(&world, q1.id, 5);
        // Donor pool from several other questions' rollouts.
        let donors: Vec<RolloutOutcome> = world
            .questions
            .iter()
            .filter(|q| q.id != q1.id)
            .take(6)
            .map(|q| chain_rollout(&world, q.id, 7))
            .collect();
        let pool = CounterfactualPool::from_rollouts(&donors);
        let scorer = CopyScorer::new(0.9, 400);
        let records = compute_rollout_ig(
            &outcome,
            q1,
            &world,
            &pool,
            &scorer,
            &IgConfig::default(),
            &RolloutConfig::default(),
            11,
        )
        .unwrap();
        assert_eq!(records.len(), 1);
        assert!(
            records[0].raw > 0.0,
            "supporting retrieval should gain over donors: {:?}",
            records[0]
        );
    }

    #[test]
    fn pool_exhaustion_and_replacement_sampling() {
        let world = chain_world();
        let q = &world.questions[0];
        let outcome = chain_rollout(&world, q.id, 5);
        let scorer = CopyScorer::new(0.9, 400);

        // Only the same question's steps in the pool: hard error.
        let own_pool = CounterfactualPool::from_rollouts(&[outcome.clone()]);
        assert!(matches!(
            compute_rollout_ig(
                &outcome, q, &world, &own_pool, &scorer,
                &IgConfig::default(), &RolloutConfig::default(), 1
            ),
            Err(Error::PoolExhausted { question }) if question == q.id
        ));

        // One eligible donor, three counterfactuals: replacement sampling.
        let donor = chain_rollout(&world, world.questions.iter().find(|o| o.id != q.id && o.hops == 1).unwrap().id, 2);
        let tiny = CounterfactualPool::from_rollouts(&[donor]);
        let records = compute_rollout_ig(
            &outcome, q, &world, &tiny, &scorer,
            &IgConfig::default(), &RolloutConfig::default(), 1,
        )
        .unwrap();
        assert_eq!(records[0].counterfactual_logprobs.len(), 3);
        let first = records[0].counterfactual_logprobs[0];
        assert!(records[0].counterfactual_logprobs.iter().all(|&v| v == first));
    }

    #[test]
    fn empty_baseline_uses_single_prefix_context() {
        let world = chain_world();
        let q = &world.questions[0];
        let outcome = chain_rollout(&world, q.id, 5);
        let scorer = CopyScorer::new(0.9, 400);
        let cfg = IgConfig { baseline: BaselineMode::Empty, ..IgConfig::default() };
        // Works with an empty pool: no donors needed.
        let records = compute_rollout_ig(
            &outcome, q, &world, &CounterfactualPool::new(), &scorer, &cfg,
            &RolloutConfig::default(), 1,
        )
        .unwrap();
        assert_eq!(records[0].counterfactual_logprobs.len(), 1);
        // The prefix lacks the retrieved answer statement, so the real
        // context scores at least as well.
        assert!(records[0].real_logprob >= records[0].counterfactual_logprobs[0]);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let world = chain_world();
        let q = &world.questions[2];
        let outcome = chain_rollout(&world, q.id, 5);
        let donors: Vec<RolloutOutcome> = (0..5)
            .map(|i| chain_rollout(&world, world.questions[10 + i].id, 6))
            .collect();
        let pool = CounterfactualPool::from_rollouts(&donors);
        let scorer = CopyScorer::new(0.9, 400);
        let run = |seed| {
            compute_rollout_ig(
                &outcome, q, &world, &pool, &scorer,
                &IgConfig::default(), &RolloutConfig::default(), seed,
            )
            .unwrap()
        };
        let a = run(9);
        let b = run(9);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

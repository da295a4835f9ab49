//! The training loop: grouped rollouts, trajectory rewards, step-level IG,
//! advantage modulation, and one surrogate update per iteration.
//!
//! Everything is deterministic in the run seed. Per-question work inside
//! an iteration is data-parallel when the `parallel` feature is enabled
//! and `parallel = true` is requested; results are identical to the
//! sequential path because per-question seeds depend only on
//! (seed, iteration, question, slot).

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grpo::{group_advantages, modulate, surrogate_update, AdvantageMap, TokenTerm, UpdateStats};
use crate::ig::{compute_rollout_ig, CounterfactualPool};
use crate::metrics::{append_jsonl, EvalSummary, IgLogRecord, IgPositionStat, IterationMetrics};
use crate::policy::{
    init_policy, mix_seed, run_rollout, sample_group, PolicyParams, RolloutOutcome, StateKey,
};
use crate::rewards::{exact_match, f1_reward, trajectory_reward};
use crate::scorer::{AnswerScorer, CopyScorer};
use crate::world::World;

const SPLIT_SALT: u64 = 0x5917;
const BATCH_SALT: u64 = 0xba7c;
const GROUP_SALT: u64 = 0x6309;
const IG_SALT: u64 = 0x1600;
const EVAL_SALT: u64 = 0xe7a1;

/// Stratified train/eval split: within each hop depth, a seeded shuffle
/// sends `eval_fraction` of the questions to the held-out set.
pub fn split_questions(world: &World, eval_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, SPLIT_SALT]));
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for hops in 1..=3 {
        let mut ids: Vec<usize> = world
            .questions
            .iter()
            .filter(|q| q.hops == hops)
            .map(|q| q.id)
            .collect();
        ids.shuffle(&mut rng);
        let n_eval = ((ids.len() as f64) * eval_fraction).round() as usize;
        let n_eval = n_eval.min(ids.len().saturating_sub(1));
        eval.extend(ids.drain(..n_eval));
        train.extend(ids);
    }
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}

/// Greedy evaluation over a question set.
pub fn evaluate(
    policy: &PolicyParams,
    world: &World,
    ids: &[usize],
    cfg: &RunConfig,
) -> Result<EvalSummary> {
    let rc = cfg.rollout_config();
    let mut s = EvalSummary::default();
    let mut em_sum = [0.0; 3];
    let mut f1_sum = [0.0; 3];
    let mut searches_sum = [0.0; 3];
    let mut query_tokens = 0usize;
    let mut query_count = 0usize;
    for &qid in ids {
        let q = &world.questions[qid];
        let seed = mix_seed(&[cfg.train.seed, EVAL_SALT, qid as u64]);
        let out = run_rollout(policy, world, q, &rc, seed, true)?;
        let pred = out
            .trajectory
            .answer_tokens()
            .map(|t| t.join(" "))
            .unwrap_or_default();
        let h = q.hops - 1;
        em_sum[h] += f64::from(exact_match(&pred, &q.gold_aliases));
        f1_sum[h] += f1_reward(&pred, &q.gold_aliases);
        searches_sum[h] += out.trajectory.step_count() as f64;
        s.count_by_hops[h] += 1;
        for t in 0..out.trajectory.step_count() {
            query_tokens += out.trajectory.query_tokens(t)?.len();
            query_count += 1;
        }
    }
    let total: usize = s.count_by_hops.iter().sum();
    if total > 0 {
        s.em = em_sum.iter().sum::<f64>() / total as f64;
        s.f1 = f1_sum.iter().sum::<f64>() / total as f64;
        s.mean_searches = searches_sum.iter().sum::<f64>() / total as f64;
    }
    for h in 0..3 {
        if s.count_by_hops[h] > 0 {
            s.em_by_hops[h] = em_sum[h] / s.count_by_hops[h] as f64;
            s.f1_by_hops[h] = f1_sum[h] / s.count_by_hops[h] as f64;
            s.mean_searches_by_hops[h] = searches_sum[h] / s.count_by_hops[h] as f64;
        }
    }
    if query_count > 0 {
        s.mean_query_len = query_tokens as f64 / query_count as f64;
    }
    Ok(s)
}

struct QuestionRollouts {
    qid: usize,
    rollouts: Vec<RolloutOutcome>,
    rewards: Vec<f64>,
    f1s: Vec<f64>,
}

struct QuestionTerms {
    terms: Vec<TokenTerm<StateKey>>,
    scaffold: Vec<f64>,
    ig_logs: Vec<IgLogRecord>,
}

fn map_ordered<I: Sync, T: Send>(
    parallel: bool,
    items: &[I],
    f: impl Fn(&I) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return items.par_iter().map(f).collect();
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        if parallel {
            log::warn!("built without the parallel feature; running sequentially");
        }
    }
    items.iter().map(f).collect()
}

fn rollout_phase(
    policy: &PolicyParams,
    world: &World,
    batch: &[usize],
    cfg: &RunConfig,
    iter: usize,
    parallel: bool,
) -> Result<Vec<QuestionRollouts>> {
    let rc = cfg.rollout_config();
    map_ordered(parallel, batch, |&qid| {
        let q = &world.questions[qid];
        let base = mix_seed(&[cfg.train.seed, iter as u64, qid as u64, GROUP_SALT]);
        let rollouts = sample_group(policy, world, q, cfg.grpo.group_size, &rc, base)?;
        let mut rewards = Vec::with_capacity(rollouts.len());
        let mut f1s = Vec::with_capacity(rollouts.len());
        for r in &rollouts {
            let b = trajectory_reward(&r.trajectory, &q.gold_aliases, cfg.grpo.w_ret);
            rewards.push(b.total);
            f1s.push(b.f1);
        }
        Ok(QuestionRollouts { qid, rollouts, rewards, f1s })
    })
}

fn terms_for_rollout(
    rollout: &RolloutOutcome,
    map: &AdvantageMap,
) -> (Vec<TokenTerm<StateKey>>, Vec<f64>) {
    let mut terms = Vec::new();
    let mut scaffold = Vec::new();
    let mut owned = vec![false; rollout.trajectory.token_count()];
    for rec in &rollout.actions {
        if rec.forced {
            continue;
        }
        for pos in rec.owned.clone() {
            owned[pos] = true;
            terms.push(TokenTerm {
                state: rec.state,
                action: rec.action,
                action_tokens: rec.owned.len(),
                old_logprob: rec.logprob,
                advantage: map.per_token[pos],
            });
        }
    }
    for pos in rollout.trajectory.policy_token_positions() {
        if !owned[pos] {
            scaffold.push(map.per_token[pos]);
        }
    }
    (terms, scaffold)
}

#[allow(clippy::too_many_arguments)]
fn ig_phase(
    world: &World,
    scorer: &dyn AnswerScorer,
    pool: &CounterfactualPool,
    groups: &[QuestionRollouts],
    cfg: &RunConfig,
    iter: usize,
    parallel: bool,
) -> Result<Vec<QuestionTerms>> {
    let rc = cfg.rollout_config();
    let ig_cfg = cfg.ig_config();
    map_ordered(parallel, groups, |g| {
        let q = &world.questions[g.qid];
        let advantages = group_advantages(&g.rewards);
        let mut out = QuestionTerms { terms: Vec::new(), scaffold: Vec::new(), ig_logs: Vec::new() };
        for (slot, rollout) in g.rollouts.iter().enumerate() {
            let map = if cfg.ig.enabled {
                let seed = mix_seed(&[cfg.train.seed, iter as u64, g.qid as u64, slot as u64, IG_SALT]);
                let records =
                    compute_rollout_ig(rollout, q, world, pool, scorer, &ig_cfg, &rc, seed)?;
                let values: Vec<f64> = records.iter().map(|r| r.value).collect();
                let map = modulate(
                    advantages[slot],
                    &values,
                    &rollout.trajectory,
                    cfg.ig.alpha,
                    cfg.ig.scope,
                    cfg.ig.length_norm,
                )?;
                for record in records {
                    let rec = rollout.actions.iter().find(|a| a.step == Some(record.step));
                    out.ig_logs.push(IgLogRecord {
                        iter,
                        question: g.qid,
                        hops: q.hops,
                        slot,
                        action: rec.map_or(usize::MAX, |a| a.action),
                        resolved: rec.is_some_and(|a| a.state.resolved),
                        record,
                    });
                }
                map
            } else {
                AdvantageMap::constant(advantages[slot], rollout.trajectory.token_count(), cfg.ig.scope)
            };
            let (terms, scaffold) = terms_for_rollout(rollout, &map);
            out.terms.extend(terms);
            out.scaffold.extend(scaffold);
        }
        Ok(out)
    })
}

pub struct IterationOutput {
    pub policy: PolicyParams,
    pub metrics: IterationMetrics,
    pub ig_logs: Vec<IgLogRecord>,
}

/// One full training iteration against a batch drawn from `train_ids`.
pub fn run_iteration(
    policy: &PolicyParams,
    reference: &PolicyParams,
    world: &World,
    scorer: &dyn AnswerScorer,
    train_ids: &[usize],
    cfg: &RunConfig,
    iter: usize,
    parallel: bool,
) -> Result<IterationOutput> {
    let mut batch = train_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.train.seed, iter as u64, BATCH_SALT]));
    batch.shuffle(&mut rng);
    batch.truncate(cfg.train.batch_size.min(batch.len()));

    let groups = rollout_phase(policy, world, &batch, cfg, iter, parallel)?;
    let all_rollouts: Vec<RolloutOutcome> = groups
        .iter()
        .flat_map(|g| g.rollouts.iter().cloned())
        .collect();
    let pool = CounterfactualPool::from_rollouts(&all_rollouts);
    let question_terms = ig_phase(world, scorer, &pool, &groups, cfg, iter, parallel)?;

    let mut terms = Vec::new();
    let mut scaffold = Vec::new();
    let mut ig_logs = Vec::new();
    for qt in question_terms {
        terms.extend(qt.terms);
        scaffold.extend(qt.scaffold);
        ig_logs.extend(qt.ig_logs);
    }

    let (next, stats): (PolicyParams, UpdateStats) = surrogate_update(
        policy,
        &terms,
        &scaffold,
        cfg.grpo.epsilon,
        cfg.grpo.beta,
        cfg.grpo.lr,
        cfg.grpo.lr * cfg.grpo.bias_lr_scale,
        reference,
    )?;

    let metrics = iteration_metrics(iter, &groups, &ig_logs, stats, scorer.batched_calls());
    Ok(IterationOutput { policy: next, metrics, ig_logs })
}

fn iteration_metrics(
    iter: usize,
    groups: &[QuestionRollouts],
    ig_logs: &[IgLogRecord],
    stats: UpdateStats,
    scorer_calls: u64,
) -> IterationMetrics {
    let mut m = IterationMetrics {
        iter,
        loss: stats.loss,
        grad_norm: stats.grad_norm,
        mean_kl: stats.mean_kl,
        clip_fraction: stats.clip_fraction,
        scorer_calls,
        ..Default::default()
    };
    let mut n_rollouts = 0usize;
    let mut query_tokens = 0usize;
    let mut query_count = 0usize;
    for g in groups {
        m.train_reward_mean += g.rewards.iter().sum::<f64>();
        m.train_f1_mean += g.f1s.iter().sum::<f64>();
        for r in &g.rollouts {
            n_rollouts += 1;
            m.mean_searches += r.trajectory.step_count() as f64;
            for t in 0..r.trajectory.step_count() {
                query_tokens += r.trajectory.query_tokens(t).expect("step exists").len();
                query_count += 1;
            }
        }
    }
    if n_rollouts > 0 {
        m.train_reward_mean /= n_rollouts as f64;
        m.train_f1_mean /= n_rollouts as f64;
        m.mean_searches /= n_rollouts as f64;
    }
    if query_count > 0 {
        m.mean_query_len = query_tokens as f64 / query_count as f64;
    }
    if !ig_logs.is_empty() {
        let mut by_pos: std::collections::BTreeMap<(usize, usize), (f64, f64, usize)> =
            std::collections::BTreeMap::new();
        let mut active = 0usize;
        for l in ig_logs {
            m.ig_raw_mean += l.record.raw;
            m.ig_value_mean += l.record.value;
            if l.record.after_deadzone != 0.0 {
                active += 1;
            }
            let e = by_pos.entry((l.hops, l.record.step)).or_insert((0.0, 0.0, 0));
            e.0 += l.record.raw;
            e.1 += l.record.value;
            e.2 += 1;
        }
        m.ig_raw_mean /= ig_logs.len() as f64;
        m.ig_value_mean /= ig_logs.len() as f64;
        m.ig_active_fraction = active as f64 / ig_logs.len() as f64;
        m.ig_positions = by_pos
            .into_iter()
            .map(|((hops, step), (raw, value, count))| IgPositionStat {
                hops,
                step,
                mean_raw: raw / count as f64,
                mean_value: value / count as f64,
                count,
            })
            .collect();
    }
    m
}

pub struct TrainOutcome {
    pub policy: PolicyParams,
    pub reference: PolicyParams,
    pub metrics: Vec<IterationMetrics>,
    pub train_ids: Vec<usize>,
    pub eval_ids: Vec<usize>,
    pub final_eval: EvalSummary,
}

pub fn save_policy(path: &Path, policy: &PolicyParams) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(policy)?)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    let mut p: PolicyParams = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    p.finalize();
    Ok(p)
}

/// Train from scratch on `world`. When `out` is given, the resolved
/// configuration, per-iteration metrics, IG records, and periodic policy
/// checkpoints are written beneath it.
pub fn train(cfg: &RunConfig, world: &World, out: Option<&Path>, parallel: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let distinct = world.distinct_token_count();
    if cfg.scorer.vocab < distinct {
        return Err(Error::ConfigInvalid(format!(
            "scorer vocabulary {} is smaller than the world's {} distinct tokens",
            cfg.scorer.vocab, distinct
        )));
    }
    let scorer = CopyScorer::new(cfg.scorer.mu, cfg.scorer.vocab);
    let (train_ids, eval_ids) = split_questions(world, cfg.env.eval_fraction, cfg.train.seed);
    if train_ids.is_empty() {
        return Err(Error::ConfigInvalid("no training questions after split".into()));
    }

    let mut metrics_file = None;
    let mut ig_file = None;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir.join("checkpoints"))?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
        metrics_file = Some(std::io::BufWriter::new(std::fs::File::create(
            dir.join("metrics.jsonl"),
        )?));
        ig_file = Some(std::io::BufWriter::new(std::fs::File::create(
            dir.join("ig_records.jsonl"),
        )?));
    }

    let reference = init_policy(cfg.grpo.vague_init, cfg.env.t_max);
    let mut policy = reference.clone();
    policy.finalize();
    let mut metrics = Vec::with_capacity(cfg.train.iterations);

    for iter in 0..cfg.train.iterations {
        let mut output = run_iteration(
            &policy, &reference, world, &scorer, &train_ids, cfg, iter, parallel,
        )?;
        policy = output.policy;
        if iter % cfg.train.eval_every == 0 || iter + 1 == cfg.train.iterations {
            output.metrics.eval = Some(evaluate(&policy, world, &eval_ids, cfg)?);
        }
        if let Some(f) = metrics_file.as_mut() {
            append_jsonl(f, &output.metrics)?;
        }
        if let Some(f) = ig_file.as_mut() {
            for l in &output.ig_logs {
                append_jsonl(f, l)?;
            }
        }
        if let Some(dir) = out {
            if cfg.train.checkpoint_every > 0 && (iter + 1) % cfg.train.checkpoint_every == 0 {
                save_policy(
                    &dir.join("checkpoints").join(format!("policy_{:04}.json", iter + 1)),
                    &policy,
                )?;
            }
        }
        metrics.push(output.metrics);
    }

    let final_eval = evaluate(&policy, world, &eval_ids, cfg)?;
    if let Some(dir) = out {
        save_policy(&dir.join("policy.json"), &policy)?;
        std::fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&final_eval)?)?;
    }
    if let Some(f) = metrics_file.as_mut() {
        f.flush()?;
    }
    if let Some(f) = ig_file.as_mut() {
        f.flush()?;
    }
    Ok(TrainOutcome { policy, reference, metrics, train_ids, eval_ids, final_eval })
}

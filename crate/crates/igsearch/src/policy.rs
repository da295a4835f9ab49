//! Rollout generation under a tabular policy over scripted search/answer
//! actions.
//!
//! The policy chooses among seven actions at each decision point; the
//! environment scaffolding (think text, document blocks, refine
//! extraction) is deterministic. Only query and answer tokens are owned by
//! a sampled action; the action's log-probability is split uniformly over
//! its owned tokens, and scaffold policy tokens carry log-probability zero.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{softmax, CategoricalPolicy};
use crate::trajectory::{SegmentKind, Token, TokenRole, Trajectory, TranscriptBuilder};
use crate::world::{Question, RetrievalMode, World, FILLER};

pub const ACT_SEARCH_CHAIN: usize = 0;
pub const ACT_SEARCH_LONG: usize = 1;
pub const ACT_SEARCH_OFF: usize = 2;
pub const ACT_SEARCH_VAGUE_A: usize = 3;
pub const ACT_SEARCH_VAGUE_B: usize = 4;
pub const ACT_ANSWER_EVIDENCE: usize = 5;
pub const ACT_ANSWER_GUESS: usize = 6;
pub const N_ACTIONS: usize = 7;

pub fn is_search_action(action: usize) -> bool {
    action < ACT_ANSWER_EVIDENCE
}

/// Decision-point state: question depth, searches issued so far, and
/// whether the transcript already shows a fully resolved relation chain
/// (visible to a policy reading its own refine scaffold).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateKey {
    pub hops: u8,
    pub searches: u8,
    pub resolved: bool,
}

pub type PolicyParams = CategoricalPolicy<StateKey>;

/// Tied-bias group shared by every search action.
pub const GROUP_SEARCH: usize = 0;
/// Tied-bias group shared by the answer actions.
pub const GROUP_ANSWER: usize = 1;

pub fn uniform_policy() -> PolicyParams {
    CategoricalPolicy::new(N_ACTIONS)
}

/// Training start point: all search actions share one propensity bias and
/// the answer actions another, and the vague query templates start with a
/// logit head start of `vague_init` in every reachable state — an untuned
/// policy prefers generic phrasing over precise entity-relation queries.
pub fn init_policy(vague_init: f64, t_max: usize) -> PolicyParams {
    let mut p = CategoricalPolicy::new(N_ACTIONS);
    p.set_groups(
        (0..N_ACTIONS)
            .map(|a| if is_search_action(a) { GROUP_SEARCH } else { GROUP_ANSWER })
            .collect(),
    );
    if vague_init != 0.0 {
        for hops in 1..=3u8 {
            for searches in 0..=t_max as u8 {
                for resolved in [false, true] {
                    let logits = p.logits_mut(&StateKey { hops, searches, resolved });
                    logits[ACT_SEARCH_VAGUE_A] = vague_init;
                    logits[ACT_SEARCH_VAGUE_B] = vague_init;
                }
            }
        }
    }
    p
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Search budget per trajectory.
    pub t_max: usize,
    /// Documents retrieved per search.
    pub k: usize,
    /// Cap on entity mentions kept by the refine extraction.
    pub refine_cap: usize,
    /// Repetitions per query token in the long-query action.
    pub long_repeat: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { t_max: 5, k: 3, refine_cap: 12, long_repeat: 8 }
    }
}

/// One sampled (or forced) action and the token span it owns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionRecord {
    pub state: StateKey,
    pub action: usize,
    /// Log-probability of the whole action under the behavior policy.
    pub logprob: f64,
    /// Budget-exhaustion answers are forced and carry no gradient.
    pub forced: bool,
    /// Global token positions owned by this action.
    pub owned: Range<usize>,
    /// Search step index, for search actions.
    pub step: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RolloutOutcome {
    pub question: usize,
    pub trajectory: Trajectory,
    pub actions: Vec<ActionRecord>,
}

/// Per-token log-probability at a global position: the owning action's
/// log-probability split over its tokens, zero for scaffold policy tokens.
pub fn action_token_logprob(outcome: &RolloutOutcome, pos: usize) -> Result<f64> {
    match outcome.trajectory.token_role(pos) {
        None | Some(TokenRole::Documents) => Err(Error::NotPolicyToken(pos)),
        Some(_) => {
            for rec in &outcome.actions {
                if rec.owned.contains(&pos) {
                    return Ok(rec.logprob / rec.owned.len() as f64);
                }
            }
            Ok(0.0)
        }
    }
}

const THINK_TOKENS: &[&str] = &["planning", "next", "search"];
const VAGUE_A: &[&str] = &["best", "facts"];
const VAGUE_B: &[&str] = &["information", "about", "things"];

struct ChainState {
    current_entity: usize,
    chain_pos: usize,
}

fn build_query(
    world: &World,
    q: &Question,
    chain: &ChainState,
    action: usize,
    cfg: &RolloutConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Token> {
    // With every relation resolved there is no next target: the targeted
    // templates have nothing left to ask, so they degrade into generic
    // phrasing that only the distractor pool matches.
    let resolved = chain.chain_pos >= q.hops;
    let mut filler = |n: usize| -> Vec<Token> {
        (0..n).map(|_| FILLER[rng.gen_range(0..FILLER.len())].to_string()).collect()
    };
    match action {
        ACT_SEARCH_CHAIN if resolved => filler(2),
        ACT_SEARCH_LONG if resolved => filler(2 * cfg.long_repeat),
        ACT_SEARCH_OFF if resolved => filler(2),
        ACT_SEARCH_CHAIN => vec![
            world.entities[chain.current_entity].name.clone(),
            world.relations[q.relations[chain.chain_pos]].clone(),
        ],
        ACT_SEARCH_LONG => {
            let base = vec![
                world.entities[chain.current_entity].name.clone(),
                world.relations[q.relations[chain.chain_pos]].clone(),
            ];
            let mut out = Vec::with_capacity(base.len() * cfg.long_repeat);
            for t in base {
                for _ in 0..cfg.long_repeat {
                    out.push(t.clone());
                }
            }
            out
        }
        ACT_SEARCH_OFF => {
            let rel = if q.hops >= 2 {
                *q.relations.last().unwrap()
            } else {
                (q.relations[0] + 1) % world.relations.len()
            };
            vec![
                world.entities[q.subject_entity].name.clone(),
                world.relations[rel].clone(),
            ]
        }
        // Vague queries vary in their trailing topic word: generic phrasing
        // is not one fixed string, and textually distinct queries pull
        // different slices of the distractor pool.
        ACT_SEARCH_VAGUE_A | ACT_SEARCH_VAGUE_B => {
            let base = if action == ACT_SEARCH_VAGUE_A { VAGUE_A } else { VAGUE_B };
            let mut out: Vec<Token> = base.iter().map(|s| s.to_string()).collect();
            out.push(FILLER[rng.gen_range(0..FILLER.len())].to_string());
            out
        }
        other => unreachable!("not a search action: {other}"),
    }
}

/// Entity mentions from the top-ranked document, in document order.
pub fn refine_extract(world: &World, top_doc: usize, cap: usize) -> Vec<Token> {
    let names = world.entity_name_set();
    world.corpus[top_doc]
        .tokens
        .iter()
        .filter(|t| names.contains(t.as_str()))
        .take(cap)
        .cloned()
        .collect()
}

fn sample_action(probs: &[f64], rng: &mut ChaCha8Rng, greedy: bool) -> usize {
    if greedy {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        return best;
    }
    let roll: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if roll < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Roll out one trajectory for `question` under `policy`, deterministically
/// from `seed`.
pub fn run_rollout(
    policy: &PolicyParams,
    world: &World,
    question: &Question,
    cfg: &RolloutConfig,
    seed: u64,
    greedy: bool,
) -> Result<RolloutOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut builder = TranscriptBuilder::new();
    let mut offset = 0usize;
    let mut actions = Vec::new();
    let mut chain = ChainState {
        current_entity: question.subject_entity,
        chain_pos: 0,
    };
    let mut searches = 0usize;
    // Documents already shown in this trajectory: the environment pages
    // past them instead of repeating results, so re-running a query does
    // not re-inflate answer evidence in the context.
    let mut seen_docs: std::collections::HashSet<usize> = std::collections::HashSet::new();
    let name_index: std::collections::HashMap<&str, usize> = world
        .entities
        .iter()
        .enumerate()
        .map(|(i, e)| (e.name.as_str(), i))
        .collect();

    loop {
        let state = StateKey {
            hops: question.hops as u8,
            searches: searches as u8,
            resolved: chain.chain_pos >= question.hops,
        };
        let forced = searches >= cfg.t_max;
        let (action, logprob) = if forced {
            (ACT_ANSWER_EVIDENCE, 0.0)
        } else {
            let lp = policy.log_probs(&state);
            let probs = softmax(&policy.logits(&state));
            let a = sample_action(&probs, &mut rng, greedy);
            (a, lp[a])
        };

        if is_search_action(action) {
            let think: Vec<Token> = THINK_TOKENS.iter().map(|s| s.to_string()).collect();
            offset += think.len();
            builder.push(SegmentKind::Think, think);

            let query = build_query(world, question, &chain, action, cfg, &mut rng);
            let owned = offset..offset + query.len();
            offset = owned.end;
            builder.push(SegmentKind::Search, query.clone());

            let res = world.retrieve(&query, cfg.k + seen_docs.len(), RetrievalMode::TopK)?;
            let fresh: Vec<usize> = res
                .doc_ids
                .iter()
                .copied()
                .filter(|d| !seen_docs.contains(d))
                .take(cfg.k)
                .collect();
            seen_docs.extend(fresh.iter().copied());
            let docs: Vec<Token> = fresh
                .iter()
                .flat_map(|&d| world.corpus[d].tokens.iter().cloned())
                .collect();
            offset += docs.len();
            builder.push(SegmentKind::Documents, docs);

            let refine = match fresh.first() {
                Some(&top) => refine_extract(world, top, cfg.refine_cap),
                None => Vec::new(),
            };
            // The scripted extraction only follows a statement document
            // that answers the question's next unresolved (entity,
            // relation) target; entity name-drops in unrelated text do not
            // move the chain pointer, and a fully resolved chain stays put.
            let followed = chain.chain_pos < question.hops
                && fresh.first().and_then(|&top| world.corpus[top].source_fact).is_some_and(|f| {
                    let fact = &world.facts[f];
                    fact.subject == chain.current_entity
                        && fact.relation == question.relations[chain.chain_pos]
                });
            if followed {
                if let Some(last) = refine.last() {
                    let e = name_index[last.as_str()];
                    if e != chain.current_entity {
                        chain.current_entity = e;
                        chain.chain_pos += 1;
                    }
                }
            }
            offset += refine.len();
            builder.push(SegmentKind::Refine, refine);

            actions.push(ActionRecord {
                state,
                action,
                logprob,
                forced: false,
                owned,
                step: Some(searches),
            });
            searches += 1;
        } else {
            let answer = match action {
                ACT_ANSWER_EVIDENCE => vec![world.entities[chain.current_entity].name.clone()],
                _ => {
                    let e = rng.gen_range(0..world.entities.len());
                    vec![world.entities[e].name.clone()]
                }
            };
            let owned = offset..offset + answer.len();
            builder.push(SegmentKind::Answer, answer);
            actions.push(ActionRecord { state, action, logprob, forced, owned, step: None });
            break;
        }
    }

    let trajectory = builder.finish(Some(cfg.t_max))?;
    Ok(RolloutOutcome { question: question.id, trajectory, actions })
}

/// Stable mixing of seed components (splitmix64 over each part).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e3779b97f4a7c15;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Group of `g` independent rollouts for one question; slot `i` uses seed
/// `mix_seed([base_seed, i])`.
pub fn sample_group(
    policy: &PolicyParams,
    world: &World,
    question: &Question,
    g: usize,
    cfg: &RolloutConfig,
    base_seed: u64,
) -> Result<Vec<RolloutOutcome>> {
    if g == 1 {
        log::warn!("group size 1: advantages degenerate to zero");
    }
    (0..g)
        .map(|slot| run_rollout(policy, world, question, cfg, mix_seed(&[base_seed, slot as u64]), false))
        .collect()
}

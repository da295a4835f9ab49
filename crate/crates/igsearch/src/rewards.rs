//! Trajectory-level rule-based rewards: answer F1 plus a retrieval reward
//! over the refine blocks, and exact match for evaluation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::trajectory::{Token, Trajectory};

/// Lowercase, strip punctuation, drop articles, collapse whitespace.
pub fn normalize_answer(text: &str) -> Vec<Token> {
    let lowered: String = text
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect::<String>()
        .to_lowercase();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(|w| w.to_string())
        .collect()
}

fn normalize_tokens(tokens: &[Token]) -> Vec<Token> {
    normalize_answer(&tokens.join(" "))
}

fn bag(tokens: &[Token]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

fn token_f1(pred: &[Token], gold: &[Token]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let gold_bag = bag(gold);
    let pred_bag = bag(pred);
    let overlap: usize = pred_bag
        .iter()
        .map(|(t, &c)| c.min(*gold_bag.get(t).unwrap_or(&0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Token-level F1 against the best-matching alias, on normalized tokens.
pub fn f1_reward(pred: &str, aliases: &[Vec<Token>]) -> f64 {
    let pred = normalize_answer(pred);
    aliases
        .iter()
        .map(|a| token_f1(&pred, &normalize_tokens(a)))
        .fold(0.0, f64::max)
}

/// 1 iff the normalized prediction equals some normalized alias.
pub fn exact_match(pred: &str, aliases: &[Vec<Token>]) -> u8 {
    let pred = normalize_answer(pred);
    u8::from(aliases.iter().any(|a| normalize_tokens(a) == pred))
}

fn contains_subsequence(haystack: &[Token], needle: &[Token]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// 1 iff some normalized alias appears contiguously inside some single
/// normalized refine block.
pub fn retrieval_reward(t: &Trajectory, aliases: &[Vec<Token>]) -> u8 {
    let aliases: Vec<Vec<Token>> = aliases.iter().map(|a| normalize_tokens(a)).collect();
    for block in t.refine_blocks() {
        let block = normalize_tokens(block);
        if aliases.iter().any(|a| contains_subsequence(&block, a)) {
            return 1;
        }
    }
    0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub f1: f64,
    pub retrieval: u8,
    pub total: f64,
}

pub fn trajectory_reward(t: &Trajectory, aliases: &[Vec<Token>], w_ret: f64) -> RewardBreakdown {
    let pred = t
        .answer_tokens()
        .map(|toks| toks.join(" "))
        .unwrap_or_default();
    let f1 = f1_reward(&pred, aliases);
    let retrieval = retrieval_reward(t, aliases);
    RewardBreakdown {
        f1,
        retrieval,
        total: f1 + w_ret * f64::from(retrieval),
    }
}

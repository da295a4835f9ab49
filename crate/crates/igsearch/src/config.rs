//! Run configuration: defaults, a flat `key = value` file format, and
//! command-line overrides.
//!
//! Keys are dotted (`section.field`). Unknown keys are rejected so typos
//! fail loudly; later assignments win, and `--set` overrides are applied
//! after the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::ModulationScope;
use crate::ig::{BaselineMode, IgConfig};
use crate::policy::RolloutConfig;
use crate::world::WorldSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub eval_every: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrpoSection {
    pub group_size: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub lr: f64,
    /// Weight of the retrieval term in the trajectory reward.
    pub w_ret: f64,
    /// Learning-rate multiplier for the tied search/answer propensity
    /// biases; 0 freezes them.
    pub bias_lr_scale: f64,
    /// Initial logit head start for the vague query templates.
    pub vague_init: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IgSection {
    pub enabled: bool,
    pub alpha: f64,
    pub delta: f64,
    pub lambda: f64,
    pub eta: f64,
    pub n_counterfactual: usize,
    pub baseline: BaselineMode,
    pub scope: ModulationScope,
    pub length_norm: bool,
    pub dead_zone: bool,
    pub soft_clip: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSection {
    pub t_max: usize,
    pub k: usize,
    pub refine_cap: usize,
    pub long_repeat: usize,
    pub hop1: usize,
    pub hop2: usize,
    pub hop3: usize,
    pub entity_pool: usize,
    pub answer_pool: usize,
    pub answer_mention_rate: f64,
    pub feature_prob: f64,
    pub distractor_ratio: f64,
    pub leak_mentions: usize,
    pub distractor_len: usize,
    /// Fraction of questions held out for evaluation.
    pub eval_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScorerSection {
    pub kind: String,
    pub mu: f64,
    pub vocab: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainSection,
    pub grpo: GrpoSection,
    pub ig: IgSection,
    pub env: EnvSection,
    pub scorer: ScorerSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainSection {
                iterations: 300,
                batch_size: 16,
                seed: 0,
                checkpoint_every: 50,
                eval_every: 1,
            },
            grpo: GrpoSection {
                group_size: 5,
                epsilon: 0.2,
                beta: 0.001,
                lr: 10.0,
                w_ret: 0.2,
                bias_lr_scale: 0.02,
                vague_init: 0.0,
            },
            ig: IgSection {
                enabled: true,
                alpha: 0.3,
                delta: 0.5,
                lambda: 0.1,
                eta: 3.0,
                n_counterfactual: 3,
                baseline: BaselineMode::RandomDocsRefine,
                scope: ModulationScope::QueryOnly,
                length_norm: true,
                dead_zone: true,
                soft_clip: true,
            },
            env: EnvSection {
                t_max: 5,
                k: 3,
                refine_cap: 12,
                long_repeat: 8,
                hop1: 60,
                hop2: 66,
                hop3: 34,
                entity_pool: 60,
                answer_pool: 30,
                answer_mention_rate: 0.002,
                feature_prob: 0.25,
                distractor_ratio: 2.0,
                leak_mentions: 6,
                distractor_len: 450,
                eval_fraction: 0.25,
            },
            scorer: ScorerSection { kind: "copy".into(), mu: 0.9, vocab: 400 },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::ConfigInvalid(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::ConfigInvalid(format!("bad boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    /// Assign one dotted key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "train.iterations" => self.train.iterations = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(key, value)?,
            "train.eval_every" => self.train.eval_every = parse(key, value)?,
            "grpo.group_size" => self.grpo.group_size = parse(key, value)?,
            "grpo.epsilon" => self.grpo.epsilon = parse(key, value)?,
            "grpo.beta" => self.grpo.beta = parse(key, value)?,
            "grpo.lr" => self.grpo.lr = parse(key, value)?,
            "grpo.w_ret" => self.grpo.w_ret = parse(key, value)?,
            "grpo.bias_lr_scale" => self.grpo.bias_lr_scale = parse(key, value)?,
            "grpo.vague_init" => self.grpo.vague_init = parse(key, value)?,
            "ig.enabled" => self.ig.enabled = parse_bool(key, value)?,
            "ig.alpha" => self.ig.alpha = parse(key, value)?,
            "ig.delta" => self.ig.delta = parse(key, value)?,
            "ig.lambda" => self.ig.lambda = parse(key, value)?,
            "ig.eta" => self.ig.eta = parse(key, value)?,
            "ig.n_counterfactual" => self.ig.n_counterfactual = parse(key, value)?,
            "ig.baseline" => {
                self.ig.baseline = match value {
                    "random_docs_refine" => BaselineMode::RandomDocsRefine,
                    "random_docs_only" => BaselineMode::RandomDocsOnly,
                    "bottom_k" => BaselineMode::BottomK,
                    "empty" => BaselineMode::Empty,
                    _ => return Err(Error::ConfigInvalid(format!("unknown baseline {value:?}"))),
                }
            }
            "ig.scope" => {
                self.ig.scope = match value {
                    "query" => ModulationScope::QueryOnly,
                    "think_query" => ModulationScope::ThinkPlusQuery,
                    "all" => ModulationScope::AllTokens,
                    _ => return Err(Error::ConfigInvalid(format!("unknown scope {value:?}"))),
                }
            }
            "ig.length_norm" => self.ig.length_norm = parse_bool(key, value)?,
            "ig.dead_zone" => self.ig.dead_zone = parse_bool(key, value)?,
            "ig.soft_clip" => self.ig.soft_clip = parse_bool(key, value)?,
            "env.t_max" => self.env.t_max = parse(key, value)?,
            "env.k" => self.env.k = parse(key, value)?,
            "env.refine_cap" => self.env.refine_cap = parse(key, value)?,
            "env.long_repeat" => self.env.long_repeat = parse(key, value)?,
            "env.hop1" => self.env.hop1 = parse(key, value)?,
            "env.hop2" => self.env.hop2 = parse(key, value)?,
            "env.hop3" => self.env.hop3 = parse(key, value)?,
            "env.entity_pool" => self.env.entity_pool = parse(key, value)?,
            "env.answer_pool" => self.env.answer_pool = parse(key, value)?,
            "env.answer_mention_rate" => self.env.answer_mention_rate = parse(key, value)?,
            "env.feature_prob" => self.env.feature_prob = parse(key, value)?,
            "env.distractor_ratio" => self.env.distractor_ratio = parse(key, value)?,
            "env.leak_mentions" => self.env.leak_mentions = parse(key, value)?,
            "env.distractor_len" => self.env.distractor_len = parse(key, value)?,
            "env.eval_fraction" => self.env.eval_fraction = parse(key, value)?,
            "scorer.kind" => {
                if value != "copy" {
                    return Err(Error::ConfigInvalid(format!("unknown scorer kind {value:?}")));
                }
                self.scorer.kind = value.to_string();
            }
            "scorer.mu" => self.scorer.mu = parse(key, value)?,
            "scorer.vocab" => self.scorer.vocab = parse(key, value)?,
            _ => return Err(Error::ConfigInvalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment, blank lines are
    /// skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::ConfigInvalid(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    /// Apply one `key=value` override from the command line.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::ConfigInvalid(format!("override {spec:?}: expected key=value")))?;
        self.set(key.trim(), value)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.iterations == 0 || self.train.batch_size == 0 {
            return Err(Error::ConfigInvalid("iterations and batch_size must be >= 1".into()));
        }
        if self.grpo.group_size == 0 {
            return Err(Error::ConfigInvalid("group_size must be >= 1".into()));
        }
        if !(self.grpo.epsilon > 0.0 && self.grpo.epsilon < 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "epsilon must be in (0, 1), got {}",
                self.grpo.epsilon
            )));
        }
        if !(self.grpo.beta >= 0.0) || !(self.grpo.lr > 0.0) {
            return Err(Error::ConfigInvalid("beta must be >= 0 and lr > 0".into()));
        }
        if !(self.grpo.bias_lr_scale >= 0.0) || !self.grpo.vague_init.is_finite() {
            return Err(Error::ConfigInvalid(
                "bias_lr_scale must be >= 0 and vague_init finite".into(),
            ));
        }
        if !(self.ig.alpha >= 0.0) {
            return Err(Error::ConfigInvalid(format!("alpha must be >= 0, got {}", self.ig.alpha)));
        }
        if !(0.0..1.0).contains(&self.env.eval_fraction) {
            return Err(Error::ConfigInvalid(format!(
                "eval_fraction must be in [0, 1), got {}",
                self.env.eval_fraction
            )));
        }
        if self.env.t_max == 0 || self.env.k == 0 {
            return Err(Error::ConfigInvalid("t_max and k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.env.feature_prob) {
            return Err(Error::ConfigInvalid(format!(
                "feature_prob must be in [0, 1], got {}",
                self.env.feature_prob
            )));
        }
        if !(0.0..=1.0).contains(&self.scorer.mu) {
            return Err(Error::ConfigInvalid(format!("mu must be in [0, 1], got {}", self.scorer.mu)));
        }
        self.ig_config().validate().map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        Ok(())
    }

    /// IG engine parameters with the stage toggles folded in: a disabled
    /// dead zone is delta = 0, a disabled soft clip is an infinite knee.
    pub fn ig_config(&self) -> IgConfig {
        IgConfig {
            n_counterfactual: if self.ig.baseline == BaselineMode::Empty {
                1
            } else {
                self.ig.n_counterfactual
            },
            baseline: self.ig.baseline,
            delta: if self.ig.dead_zone { self.ig.delta } else { 0.0 },
            lambda: self.ig.lambda,
            eta: if self.ig.soft_clip { self.ig.eta } else { f64::INFINITY },
        }
    }

    pub fn rollout_config(&self) -> RolloutConfig {
        RolloutConfig {
            t_max: self.env.t_max,
            k: self.env.k,
            refine_cap: self.env.refine_cap,
            long_repeat: self.env.long_repeat,
        }
    }

    pub fn world_spec(&self) -> WorldSpec {
        WorldSpec {
            hop_counts: [self.env.hop1, self.env.hop2, self.env.hop3],
            distractor_ratio: self.env.distractor_ratio,
            entity_pool: self.env.entity_pool,
            answer_pool: self.env.answer_pool,
            answer_mention_rate: self.env.answer_mention_rate,
            feature_prob: self.env.feature_prob,
            leak_mentions: self.env.leak_mentions,
            distractor_len: self.env.distractor_len,
        }
    }
}

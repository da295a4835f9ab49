//! Synthetic multi-hop QA world: entity-relation chains, fact documents,
//! distractors, and deterministic lexical retrieval.
//!
//! Chains are built so that a question of hop depth `h` is answered by
//! following `h` facts. The document for a non-final chain fact carries a
//! weak mention of the answer's *variant* alias (an alternate surface form
//! that the refine extraction does not treat as an entity name), so early
//! retrievals raise scorer confidence without short-circuiting the chain.
//! The final fact's document states the answer outright.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Token;

const RELATIONS: &[&str] = &[
    "father", "capital", "director", "founder", "author", "leader", "origin", "mentor", "owner",
    "rival",
];

const SYLLABLES: &[&str] = &[
    "ba", "den", "fel", "gor", "hul", "jin", "kal", "lor", "mak", "nev", "or", "pel", "quo",
    "rin", "sol", "tam", "ul", "vor", "wex", "yol", "zan",
];

/// Mentions planted when a distractor features an answer surface form.
const FEATURE_MENTIONS: usize = 40;

pub(crate) const FILLER: &[&str] = &[
    "best", "facts", "information", "about", "things", "general", "various", "archive", "report",
    "summary", "context", "topic", "notes", "misc", "review", "story", "detail", "study",
    "record", "entry", "list", "item", "common", "overview", "history", "update", "brief",
    "extra", "sample", "index", "digest", "survey", "bulletin", "memo", "journal", "ledger",
    "annals", "gazette", "chronicle", "register",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldSpec {
    /// Questions to generate at hop depths 1, 2, 3.
    pub hop_counts: [usize; 3],
    /// Distractor documents per question.
    pub distractor_ratio: f64,
    pub entity_pool: usize,
    /// Gold answers are drawn from the first `answer_pool` entities, so
    /// distinct questions share answers and documents supporting one
    /// question routinely mention another's gold answer.
    pub answer_pool: usize,
    /// Per-token rate at which distractor text name-drops answer-pool
    /// entities (either surface form).
    pub answer_mention_rate: f64,
    /// Probability that a distractor document prominently features one
    /// answer surface form (a burst of mentions). Retrieving junk then
    /// perturbs the scorer's answer confidence in both directions, which
    /// is the noise the stabilization pipeline exists to absorb.
    pub feature_prob: f64,
    /// How many times a non-final chain document mentions the answer's
    /// variant alias.
    pub leak_mentions: usize,
    pub distractor_len: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            hop_counts: [60, 66, 34],
            distractor_ratio: 2.0,
            entity_pool: 60,
            answer_pool: 30,
            answer_mention_rate: 0.002,
            feature_prob: 0.25,
            leak_mentions: 6,
            distractor_len: 450,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    /// Alternate surface form; present on entities that are some question's
    /// gold answer.
    pub variant: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Fact {
    pub id: usize,
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Doc {
    pub id: usize,
    pub tokens: Vec<Token>,
    pub source_fact: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Question {
    pub id: usize,
    pub tokens: Vec<Token>,
    pub hops: usize,
    pub gold_aliases: Vec<Vec<Token>>,
    /// Fact ids along the supporting chain, in hop order.
    pub chain: Vec<usize>,
    pub subject_entity: usize,
    pub answer_entity: usize,
    /// Relation indices along the chain, in hop order.
    pub relations: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub spec: WorldSpec,
    pub entities: Vec<Entity>,
    pub relations: Vec<String>,
    pub facts: Vec<Fact>,
    pub corpus: Vec<Doc>,
    pub questions: Vec<Question>,
    #[serde(skip)]
    doc_sets: Vec<HashSet<Token>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetrievalMode {
    TopK,
    BottomK,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub doc_ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub k: usize,
}

fn unique_name(rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>) -> String {
    loop {
        let n = rng.gen_range(2..=3);
        let mut name = String::new();
        for _ in 0..n {
            name.push_str(SYLLABLES[rng.gen_range(0..SYLLABLES.len())]);
        }
        if taken.insert(name.clone()) {
            return name;
        }
    }
}

pub fn generate_world(seed: u64, spec: WorldSpec) -> Result<World> {
    let max_hops = spec
        .hop_counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, _)| i + 1)
        .max()
        .unwrap_or(0);
    if max_hops == 0 {
        return Err(Error::SpecInfeasible("no questions requested".into()));
    }
    if spec.entity_pool < max_hops + 1 {
        return Err(Error::SpecInfeasible(format!(
            "{}-hop chains need {} entities, pool has {}",
            max_hops,
            max_hops + 1,
            spec.entity_pool
        )));
    }
    if spec.answer_pool == 0 || spec.answer_pool > spec.entity_pool {
        return Err(Error::SpecInfeasible(format!(
            "answer_pool must be in 1..={}, got {}",
            spec.entity_pool, spec.answer_pool
        )));
    }
    if !(0.0..=1.0).contains(&spec.feature_prob) {
        return Err(Error::SpecInfeasible(format!(
            "feature_prob must be in [0, 1], got {}",
            spec.feature_prob
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let mut entities: Vec<Entity> = (0..spec.entity_pool)
        .map(|_| Entity {
            name: unique_name(&mut rng, &mut taken),
            variant: None,
        })
        .collect();
    let relations: Vec<String> = RELATIONS.iter().map(|s| s.to_string()).collect();

    // (subject, relation) pairs already bound, to keep chains unambiguous
    // and each fact owned by exactly one question.
    let mut bound: HashSet<(usize, usize)> = HashSet::new();
    let mut facts: Vec<Fact> = Vec::new();
    let mut questions: Vec<Question> = Vec::new();
    let mut answer_entities: BTreeSet<usize> = BTreeSet::new();

    for (depth_idx, &count) in spec.hop_counts.iter().enumerate() {
        let hops = depth_idx + 1;
        for _ in 0..count {
            let mut chain_entities = Vec::new();
            let mut chain_relations = Vec::new();
            let mut ok = false;
            for _attempt in 0..1000 {
                chain_entities.clear();
                chain_relations.clear();
                let answer = rng.gen_range(0..spec.answer_pool);
                let mut pool: Vec<usize> = (0..entities.len()).filter(|&e| e != answer).collect();
                pool.shuffle(&mut rng);
                chain_entities.extend_from_slice(&pool[..hops]);
                chain_entities.push(answer);
                let mut clash = false;
                for i in 0..hops {
                    let r = rng.gen_range(0..relations.len());
                    // Relations are distinct within a chain, so a later
                    // hop's statement never shares a token with an earlier
                    // hop's query.
                    if bound.contains(&(chain_entities[i], r)) || chain_relations.contains(&r) {
                        clash = true;
                        break;
                    }
                    chain_relations.push(r);
                }
                if !clash {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::SpecInfeasible(
                    "entity/relation pool exhausted while sampling chains".into(),
                ));
            }

            let mut chain = Vec::new();
            for i in 0..hops {
                let fact = Fact {
                    id: facts.len(),
                    subject: chain_entities[i],
                    relation: chain_relations[i],
                    object: chain_entities[i + 1],
                };
                bound.insert((fact.subject, fact.relation));
                chain.push(fact.id);
                facts.push(fact);
            }

            let answer = chain_entities[hops];
            answer_entities.insert(answer);
            if entities[answer].variant.is_none() {
                entities[answer].variant = Some(unique_name(&mut rng, &mut taken));
            }

            // "what is the r_h of the r_{h-1} of ... <subject>"
            let mut tokens: Vec<Token> = vec!["what".into(), "is".into()];
            for i in (0..hops).rev() {
                tokens.push("the".into());
                tokens.push(relations[chain_relations[i]].clone());
                tokens.push("of".into());
            }
            tokens.push(entities[chain_entities[0]].name.clone());

            let primary = entities[answer].name.clone();
            let variant = entities[answer].variant.clone().unwrap();
            let mut gold_aliases = vec![vec![primary.clone()], vec![variant]];
            if rng.gen_bool(0.3) {
                gold_aliases.push(vec!["sir".into(), primary]);
            }

            questions.push(Question {
                id: questions.len(),
                tokens,
                hops,
                gold_aliases,
                chain,
                subject_entity: chain_entities[0],
                answer_entity: answer,
                relations: chain_relations.clone(),
            });
        }
    }

    // Fact documents. Final chain facts state the answer with both surface
    // forms; earlier facts leak only the variant alias.
    let mut corpus: Vec<Doc> = Vec::new();
    let mut fact_owner: HashMap<usize, (usize, bool)> = HashMap::new(); // fact -> (question, is_final)
    for q in &questions {
        for (i, &f) in q.chain.iter().enumerate() {
            fact_owner.insert(f, (q.id, i + 1 == q.hops));
        }
    }
    for fact in &facts {
        let (qid, is_final) = fact_owner[&fact.id];
        let q = &questions[qid];
        let subject = entities[fact.subject].name.clone();
        let rel = relations[fact.relation].clone();
        let mut tokens: Vec<Token> = vec![
            "the".into(),
            rel,
            "of".into(),
            subject,
            "is".into(),
            entities[fact.object].name.clone(),
        ];
        if is_final {
            tokens.push("known".into());
            tokens.push("as".into());
            tokens.push(entities[fact.object].variant.clone().unwrap());
        } else {
            let variant = entities[q.answer_entity].variant.clone().unwrap();
            tokens.push("archives".into());
            tokens.push("cite".into());
            for m in 0..spec.leak_mentions {
                if m > 0 {
                    tokens.push("and".into());
                }
                tokens.push(variant.clone());
            }
        }
        corpus.push(Doc {
            id: corpus.len(),
            tokens,
            source_fact: Some(fact.id),
        });
    }

    // Distractors: filler plus a thin scatter of relation vocabulary and
    // answer name-drops, with no valid triple statement. Entity names stay
    // rare so a distractor almost never covers a full (subject, relation)
    // query and content searches rank the short statement documents first.
    let n_distractors = (spec.distractor_ratio * questions.len() as f64).ceil() as usize;
    for _ in 0..n_distractors {
        let mut tokens = Vec::with_capacity(spec.distractor_len);
        for _ in 0..spec.distractor_len {
            let roll: f64 = rng.gen();
            if roll < 0.02 {
                tokens.push(relations[rng.gen_range(0..relations.len())].clone());
            } else if roll < 0.02 + spec.answer_mention_rate {
                // Alternate surface forms only: they sway the answer scorer
                // but never collide with name-based search queries.
                let e = &entities[rng.gen_range(0..spec.answer_pool)];
                match &e.variant {
                    Some(v) => tokens.push(v.clone()),
                    None => tokens.push(FILLER[rng.gen_range(0..FILLER.len())].to_string()),
                }
            } else {
                tokens.push(FILLER[rng.gen_range(0..FILLER.len())].to_string());
            }
        }
        // Distractors prominently feature one answer's alternate surface
        // form: a burst of mentions large enough to swing a copy scorer's
        // estimate for that alias when the document lands in (or drops out
        // of) a retrieved context. Variants are not entity names, so the
        // burst perturbs answer confidence without touching the refine
        // extraction chain.
        if rng.gen_bool(spec.feature_prob) {
            let e = &entities[rng.gen_range(0..spec.answer_pool)];
            if let Some(v) = &e.variant {
                for _ in 0..FEATURE_MENTIONS {
                    let pos = rng.gen_range(0..tokens.len());
                    tokens[pos] = v.clone();
                }
            }
        }
        corpus.push(Doc {
            id: corpus.len(),
            tokens,
            source_fact: None,
        });
    }

    let mut world = World {
        seed,
        spec,
        entities,
        relations,
        facts,
        corpus,
        questions,
        doc_sets: Vec::new(),
    };
    world.rebuild_indexes();
    Ok(world)
}

impl World {
    fn rebuild_indexes(&mut self) {
        self.doc_sets = self
            .corpus
            .iter()
            .map(|d| d.tokens.iter().cloned().collect())
            .collect();
    }

    /// Fraction of the query's token positions whose token appears in the
    /// document.
    pub fn overlap_score(&self, query: &[Token], doc_id: usize) -> f64 {
        let set = &self.doc_sets[doc_id];
        let matched = query.iter().filter(|t| set.contains(*t)).count();
        matched as f64 / query.len() as f64
    }

    /// 0.5 when the document contains a contiguous `a of b` phrase whose
    /// endpoints are two distinct query tokens. Fact statements read
    /// `the R of S is O`, so a query naming a bound (subject, relation)
    /// pair promotes exactly its supporting document above bag-of-words
    /// ties.
    pub fn phrase_bonus(&self, query: &[Token], doc_id: usize) -> f64 {
        let doc = &self.corpus[doc_id].tokens;
        let hit = doc.windows(3).any(|w| {
            w[1] == "of"
                && w[0] != w[2]
                && query.iter().any(|t| *t == w[0])
                && query.iter().any(|t| *t == w[2])
        });
        if hit {
            0.5
        } else {
            0.0
        }
    }

    /// Retrieval score: token overlap plus the phrase bonus.
    pub fn retrieval_score(&self, query: &[Token], doc_id: usize) -> f64 {
        self.overlap_score(query, doc_id) + self.phrase_bonus(query, doc_id)
    }

    pub fn retrieve(&self, query: &[Token], k: usize, mode: RetrievalMode) -> Result<RetrievalResult> {
        if query.is_empty() {
            return Err(Error::EmptyQuery);
        }
        assert!(k >= 1, "retrieval depth must be >= 1");
        let mut scored: Vec<(usize, f64)> = (0..self.corpus.len())
            .map(|id| (id, self.retrieval_score(query, id)))
            .collect();
        // Score ties prefer concise documents (lexical retrievers penalize
        // length), then fall back to a deterministic hash of (query, doc)
        // so that textually different queries with the same score profile
        // still surface different documents.
        let tie = |id: usize| -> (usize, u64) {
            let mut h: u64 = 0xcbf29ce484222325;
            for t in query {
                for b in t.as_bytes() {
                    h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
                }
                h = (h ^ 0x1f).wrapping_mul(0x100000001b3);
            }
            (self.corpus[id].tokens.len(), (h ^ id as u64).wrapping_mul(0x100000001b3))
        };
        match mode {
            RetrievalMode::TopK => {
                scored.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1).unwrap().then(tie(a.0).cmp(&tie(b.0)))
                });
                scored.truncate(k);
            }
            RetrievalMode::BottomK => {
                scored.retain(|&(_, s)| s > 0.0);
                scored.sort_by(|a, b| {
                    a.1.partial_cmp(&b.1).unwrap().then(tie(a.0).cmp(&tie(b.0)))
                });
                scored.truncate(k);
                if scored.len() < k && !self.corpus.is_empty() {
                    // Deterministic random padding keyed off the query.
                    let mut h: u64 = 0xcbf29ce484222325;
                    for t in query {
                        for b in t.as_bytes() {
                            h = (h ^ u64::from(*b)).wrapping_mul(0x100000001b3);
                        }
                        h = (h ^ 0x1f).wrapping_mul(0x100000001b3);
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(h ^ k as u64);
                    while scored.len() < k.min(self.corpus.len()) {
                        let id = rng.gen_range(0..self.corpus.len());
                        if !scored.iter().any(|&(d, _)| d == id) {
                            scored.push((id, self.retrieval_score(query, id)));
                        }
                    }
                }
            }
        }
        Ok(RetrievalResult {
            doc_ids: scored.iter().map(|&(d, _)| d).collect(),
            scores: scored.iter().map(|&(_, s)| s).collect(),
            k,
        })
    }

    pub fn entity_name_set(&self) -> HashSet<&str> {
        self.entities.iter().map(|e| e.name.as_str()).collect()
    }

    /// Distinct tokens appearing anywhere in the world (corpus, questions,
    /// aliases). The scorer's vocabulary must be at least this large.
    pub fn distinct_token_count(&self) -> usize {
        let mut set: HashSet<&str> = HashSet::new();
        for d in &self.corpus {
            set.extend(d.tokens.iter().map(String::as_str));
        }
        for q in &self.questions {
            set.extend(q.tokens.iter().map(String::as_str));
            for a in &q.gold_aliases {
                set.extend(a.iter().map(String::as_str));
            }
        }
        set.len()
    }

    /// The scripted query chain that answers a question: one
    /// `[subject, relation]` query per hop.
    pub fn oracle_queries(&self, q: &Question) -> Vec<Vec<Token>> {
        q.chain
            .iter()
            .map(|&fid| {
                let f = &self.facts[fid];
                vec![self.entities[f.subject].name.clone(), self.relations[f.relation].clone()]
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            out,
            "{}",
            serde_json::to_string(&WorldRecord::Meta {
                seed: self.seed,
                spec: self.spec.clone(),
                relations: self.relations.clone(),
            })?
        )?;
        for e in &self.entities {
            writeln!(out, "{}", serde_json::to_string(&WorldRecord::Entity(e.clone()))?)?;
        }
        for f in &self.facts {
            writeln!(out, "{}", serde_json::to_string(&WorldRecord::Fact(*f))?)?;
        }
        for d in &self.corpus {
            writeln!(out, "{}", serde_json::to_string(&WorldRecord::Doc(d.clone()))?)?;
        }
        for q in &self.questions {
            writeln!(out, "{}", serde_json::to_string(&WorldRecord::Question(q.clone()))?)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<World> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut meta = None;
        let mut entities = Vec::new();
        let mut facts = Vec::new();
        let mut corpus = Vec::new();
        let mut questions = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<WorldRecord>(&line)? {
                WorldRecord::Meta { seed, spec, relations } => meta = Some((seed, spec, relations)),
                WorldRecord::Entity(e) => entities.push(e),
                WorldRecord::Fact(f) => facts.push(f),
                WorldRecord::Doc(d) => corpus.push(d),
                WorldRecord::Question(q) => questions.push(q),
            }
        }
        let (seed, spec, relations) = meta
            .ok_or_else(|| Error::ConfigInvalid("world file has no meta record".into()))?;
        let mut world = World {
            seed,
            spec,
            entities,
            relations,
            facts,
            corpus,
            questions,
            doc_sets: Vec::new(),
        };
        world.rebuild_indexes();
        Ok(world)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum WorldRecord {
    Meta {
        seed: u64,
        spec: WorldSpec,
        relations: Vec<String>,
    },
    Entity(Entity),
    Fact(Fact),
    Doc(Doc),
    Question(Question),
}

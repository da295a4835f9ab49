//! Structured rollout transcripts.
//!
//! A transcript is a flat sequence of tagged blocks drawn from five tag
//! pairs: `<think>`, `<search>`, `<documents>`, `<refine>`, `<answer>`.
//! Every `<search>` is immediately followed by one `<documents>` and one
//! `<refine>` block; `<answer>` appears at most once, as the final block.
//! The parser keeps the raw text of every block (and the text between
//! blocks) so that `serialize(parse(x)) == x` byte for byte.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub type Token = String;

/// Whitespace tokenization after Unicode NFC normalization.
pub fn tokenize(text: &str) -> Vec<Token> {
    let normalized: String = text.nfc().collect();
    normalized.split_whitespace().map(|t| t.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Think,
    Search,
    Documents,
    Refine,
    Answer,
}

impl SegmentKind {
    pub fn tag(self) -> &'static str {
        match self {
            SegmentKind::Think => "think",
            SegmentKind::Search => "search",
            SegmentKind::Documents => "documents",
            SegmentKind::Refine => "refine",
            SegmentKind::Answer => "answer",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "think" => Some(SegmentKind::Think),
            "search" => Some(SegmentKind::Search),
            "documents" => Some(SegmentKind::Documents),
            "refine" => Some(SegmentKind::Refine),
            "answer" => Some(SegmentKind::Answer),
            _ => None,
        }
    }
}

/// Role of a token within the transcript. `Documents` tokens are produced
/// by the environment; every other role is a policy token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenRole {
    Think,
    Query,
    Documents,
    Refine,
    Answer,
}

impl TokenRole {
    pub fn is_policy(self) -> bool {
        self != TokenRole::Documents
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Exact text between the open and close tag, unmodified.
    pub raw: String,
    pub tokens: Vec<Token>,
    /// Global index of this segment's first token.
    pub token_offset: usize,
}

impl Segment {
    pub fn role(&self) -> TokenRole {
        match self.kind {
            SegmentKind::Think => TokenRole::Think,
            SegmentKind::Search => TokenRole::Query,
            SegmentKind::Documents => TokenRole::Documents,
            SegmentKind::Refine => TokenRole::Refine,
            SegmentKind::Answer => TokenRole::Answer,
        }
    }
}

/// One search cycle: the query, the environment's documents, and the
/// policy's refinement, as segment indices into the trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStep {
    pub index: usize,
    pub search_seg: usize,
    pub docs_seg: usize,
    pub refine_seg: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    segments: Vec<Segment>,
    /// gaps[i] is the text preceding segments[i]; gaps[len] trails the
    /// last segment. Preserved verbatim for round-tripping.
    gaps: Vec<String>,
    steps: Vec<SearchStep>,
    answer_seg: Option<usize>,
    token_count: usize,
}

/// Parse a transcript. When `strict_max` is set, trajectories with more
/// than that many search steps are rejected.
pub fn parse_transcript(text: &str, strict_max: Option<usize>) -> Result<Trajectory> {
    let mut segments = Vec::new();
    let mut gaps = Vec::new();
    let mut rest = text;
    let mut gap = String::new();

    while let Some(lt) = rest.find('<') {
        gap.push_str(&rest[..lt]);
        rest = &rest[lt..];
        let gt = rest
            .find('>')
            .ok_or_else(|| Error::MalformedTag(format!("unterminated tag near {:?}", clip(rest))))?;
        let name = &rest[1..gt];
        if name.starts_with('/') {
            return Err(Error::MalformedTag(format!("unmatched close tag </{}>", &name[1..])));
        }
        let kind = SegmentKind::from_tag(name)
            .ok_or_else(|| Error::MalformedTag(format!("unknown tag <{name}>")))?;
        let body_start = gt + 1;
        let close = format!("</{name}>");
        let close_at = rest[body_start..]
            .find(&close)
            .ok_or_else(|| Error::MalformedTag(format!("unclosed tag <{name}>")))?;
        let raw = rest[body_start..body_start + close_at].to_string();
        if raw.contains('<') {
            return Err(Error::MalformedTag(format!("nested '<' inside <{name}>")));
        }
        gaps.push(std::mem::take(&mut gap));
        segments.push(Segment {
            kind,
            tokens: tokenize(&raw),
            raw,
            token_offset: 0,
        });
        rest = &rest[body_start + close_at + close.len()..];
    }
    gap.push_str(rest);
    gaps.push(gap);

    Trajectory::from_parts(segments, gaps, strict_max)
}

fn clip(s: &str) -> &str {
    &s[..s.len().min(24)]
}

impl Trajectory {
    fn from_parts(
        mut segments: Vec<Segment>,
        gaps: Vec<String>,
        strict_max: Option<usize>,
    ) -> Result<Self> {
        // Grammar check and step assembly.
        let mut steps = Vec::new();
        let mut answer_seg = None;
        let mut i = 0;
        while i < segments.len() {
            if answer_seg.is_some() {
                return Err(Error::OrderViolation(format!(
                    "<{}> after <answer>",
                    segments[i].kind.tag()
                )));
            }
            match segments[i].kind {
                SegmentKind::Think => i += 1,
                SegmentKind::Search => {
                    let docs_ok = segments.get(i + 1).map(|s| s.kind) == Some(SegmentKind::Documents);
                    let refine_ok = segments.get(i + 2).map(|s| s.kind) == Some(SegmentKind::Refine);
                    if !docs_ok || !refine_ok {
                        return Err(Error::OrderViolation(
                            "<search> must be followed by <documents> then <refine>".into(),
                        ));
                    }
                    steps.push(SearchStep {
                        index: steps.len(),
                        search_seg: i,
                        docs_seg: i + 1,
                        refine_seg: i + 2,
                    });
                    i += 3;
                }
                SegmentKind::Documents => {
                    return Err(Error::OrderViolation("<documents> without preceding <search>".into()))
                }
                SegmentKind::Refine => {
                    return Err(Error::OrderViolation("<refine> without preceding <documents>".into()))
                }
                SegmentKind::Answer => {
                    answer_seg = Some(i);
                    i += 1;
                }
            }
        }
        if let Some(max) = strict_max {
            if steps.len() > max {
                return Err(Error::TooManySearches { got: steps.len(), max });
            }
        }

        let mut offset = 0;
        for seg in &mut segments {
            seg.token_offset = offset;
            offset += seg.tokens.len();
        }
        Ok(Trajectory {
            segments,
            gaps,
            steps,
            answer_seg,
            token_count: offset,
        })
    }

    /// Byte-exact inverse of `parse_transcript` for parser-produced values.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (i, seg) in self.segments.iter().enumerate() {
            out.push_str(&self.gaps[i]);
            out.push('<');
            out.push_str(seg.kind.tag());
            out.push('>');
            out.push_str(&seg.raw);
            out.push_str("</");
            out.push_str(seg.kind.tag());
            out.push('>');
        }
        out.push_str(&self.gaps[self.segments.len()]);
        out
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn steps(&self) -> &[SearchStep] {
        &self.steps
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn answer_tokens(&self) -> Option<&[Token]> {
        self.answer_seg.map(|i| self.segments[i].tokens.as_slice())
    }

    /// Global token positions of the step's query, the set `Q_t`.
    pub fn query_token_positions(&self, step: usize) -> Result<Vec<usize>> {
        let step = self.steps.get(step).ok_or(Error::NoSuchStep(step))?;
        let seg = &self.segments[step.search_seg];
        Ok((seg.token_offset..seg.token_offset + seg.tokens.len()).collect())
    }

    /// Positions of the think block immediately preceding the step's query,
    /// if any. Used by the think+query modulation scope.
    pub fn think_token_positions(&self, step: usize) -> Result<Vec<usize>> {
        let step = self.steps.get(step).ok_or(Error::NoSuchStep(step))?;
        if step.search_seg == 0 {
            return Ok(Vec::new());
        }
        let prev = &self.segments[step.search_seg - 1];
        if prev.kind != SegmentKind::Think {
            return Ok(Vec::new());
        }
        Ok((prev.token_offset..prev.token_offset + prev.tokens.len()).collect())
    }

    pub fn query_tokens(&self, step: usize) -> Result<&[Token]> {
        let step = self.steps.get(step).ok_or(Error::NoSuchStep(step))?;
        Ok(&self.segments[step.search_seg].tokens)
    }

    pub fn docs_tokens(&self, step: usize) -> Result<&[Token]> {
        let step = self.steps.get(step).ok_or(Error::NoSuchStep(step))?;
        Ok(&self.segments[step.docs_seg].tokens)
    }

    pub fn refine_tokens(&self, step: usize) -> Result<&[Token]> {
        let step = self.steps.get(step).ok_or(Error::NoSuchStep(step))?;
        Ok(&self.segments[step.refine_seg].tokens)
    }

    pub fn refine_blocks(&self) -> impl Iterator<Item = &[Token]> {
        self.steps
            .iter()
            .map(|s| self.segments[s.refine_seg].tokens.as_slice())
    }

    /// Role of the token at a global position.
    pub fn token_role(&self, pos: usize) -> Option<TokenRole> {
        self.segment_at(pos).map(|s| s.role())
    }

    pub fn segment_at(&self, pos: usize) -> Option<&Segment> {
        if pos >= self.token_count {
            return None;
        }
        let idx = self
            .segments
            .partition_point(|s| s.token_offset <= pos)
            .saturating_sub(1);
        Some(&self.segments[idx])
    }

    pub fn policy_token_positions(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for seg in &self.segments {
            if seg.role().is_policy() {
                out.extend(seg.token_offset..seg.token_offset + seg.tokens.len());
            }
        }
        out
    }

    /// All tokens in segment order, flattened.
    pub fn all_tokens(&self) -> impl Iterator<Item = &Token> {
        self.segments.iter().flat_map(|s| s.tokens.iter())
    }

    /// Tokens from the start of the transcript through the end of the given
    /// segment index.
    pub fn tokens_through_segment(&self, seg: usize) -> Vec<Token> {
        self.segments[..=seg]
            .iter()
            .flat_map(|s| s.tokens.iter().cloned())
            .collect()
    }
}

/// Builds canonical trajectories: blocks padded with one space on each side
/// (none when empty), no text between blocks.
#[derive(Debug, Default)]
pub struct TranscriptBuilder {
    segments: Vec<Segment>,
}

impl TranscriptBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, kind: SegmentKind, tokens: Vec<Token>) -> &mut Self {
        let raw = if tokens.is_empty() {
            String::new()
        } else {
            format!(" {} ", tokens.join(" "))
        };
        self.segments.push(Segment {
            kind,
            raw,
            tokens,
            token_offset: 0,
        });
        self
    }

    pub fn finish(self, strict_max: Option<usize>) -> Result<Trajectory> {
        let gaps = vec![String::new(); self.segments.len() + 1];
        Trajectory::from_parts(self.segments, gaps, strict_max)
    }
}

/// Escape a transcript for storage as one line in a line-delimited archive.
pub fn escape_record(text: &str) -> String {
    text.replace('\\', "\\\\").replace('\n', "\\n")
}

pub fn unescape_record(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

//! Multi-keyword search over chunk text and the chunk retention rule.

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::{ByteSpan, Chunk};
use crate::lexicon::{Lexicon, MatchPolicy};

pub const DEFAULT_MIN_DISTINCT: usize = 2;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("lexicon for region {0} has no keywords")]
    EmptyLexicon(String),
    #[error("cannot compile keyword automaton: {0}")]
    Build(#[from] aho_corasick::BuildError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeywordHit {
    /// Offset of the match start in the original chunk text.
    pub byte_offset: usize,
    /// The normalized keyword that matched.
    pub keyword: String,
}

/// A compiled keyword automaton for one lexicon. Immutable; share freely
/// across threads.
#[derive(Debug, Clone)]
pub struct KeywordMatcher {
    region_id: String,
    keywords: Vec<String>,
    policy: MatchPolicy,
    automaton: AhoCorasick,
}

impl KeywordMatcher {
    pub fn region_id(&self) -> &str {
        &self.region_id
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn policy(&self) -> MatchPolicy {
        self.policy
    }
}

pub fn build_matcher(lexicon: &Lexicon) -> Result<KeywordMatcher, MatchError> {
    if lexicon.is_empty() {
        return Err(MatchError::EmptyLexicon(lexicon.region_id.clone()));
    }
    let automaton = AhoCorasickBuilder::new()
        .match_kind(MatchKind::Standard)
        .build(lexicon.keywords())?;
    Ok(KeywordMatcher {
        region_id: lexicon.region_id.clone(),
        keywords: lexicon.keywords().to_vec(),
        policy: lexicon.policy,
        automaton,
    })
}

/// Text rewritten into keyword space (whitespace runs collapsed to one space,
/// optionally lowercased) with a map back to the original offsets.
struct Folded {
    text: String,
    /// For each folded byte, the offset of the original char it came from.
    origin: Vec<usize>,
    /// True where a folded byte starts the expansion of an original char.
    char_start: Vec<bool>,
}

fn fold(text: &str, case_insensitive: bool) -> Folded {
    let mut folded = Folded {
        text: String::with_capacity(text.len()),
        origin: Vec::with_capacity(text.len()),
        char_start: Vec::with_capacity(text.len()),
    };
    let mut in_space = false;
    let mut buf = [0u8; 4];
    let mut push = |f: &mut Folded, c: char, at: usize, first: bool| {
        let s = c.encode_utf8(&mut buf);
        f.text.push_str(s);
        for i in 0..s.len() {
            f.origin.push(at);
            f.char_start.push(first && i == 0);
        }
    };
    for (at, c) in text.char_indices() {
        if c.is_whitespace() {
            if !in_space {
                push(&mut folded, ' ', at, true);
                in_space = true;
            }
            continue;
        }
        in_space = false;
        if case_insensitive {
            for (k, lc) in c.to_lowercase().enumerate() {
                push(&mut folded, lc, at, k == 0);
            }
        } else {
            push(&mut folded, c, at, true);
        }
    }
    folded
}

/// Every occurrence of every keyword, overlapping matches included, sorted by
/// offset (then keyword).
pub fn find_hits(text: &str, matcher: &KeywordMatcher) -> Vec<KeywordHit> {
    let folded = fold(text, matcher.policy.case_insensitive);
    let mut hits = Vec::new();
    for m in matcher.automaton.find_overlapping_iter(&folded.text) {
        let (start, end) = (m.start(), m.end());
        if !folded.char_start[start] || (end < folded.text.len() && !folded.char_start[end]) {
            // match begins or ends inside a multi-char case expansion
            continue;
        }
        let orig_start = folded.origin[start];
        let orig_end = if end < folded.text.len() { folded.origin[end] } else { text.len() };
        if matcher.policy.word_boundary && !on_word_boundary(text, orig_start, orig_end) {
            continue;
        }
        hits.push(KeywordHit {
            byte_offset: orig_start,
            keyword: matcher.keywords[m.pattern().as_usize()].clone(),
        });
    }
    hits.sort();
    hits
}

/// True unless the span starts or ends in the middle of an alphanumeric run.
pub fn on_word_boundary(text: &str, start: usize, end: usize) -> bool {
    let inner = &text[start..end];
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    let first = inner.chars().next();
    let last = inner.chars().next_back();
    let joins = |a: Option<char>, b: Option<char>| matches!((a, b), (Some(a), Some(b)) if a.is_alphanumeric() && b.is_alphanumeric());
    !joins(before, first) && !joins(last, after)
}

/// A chunk retained for one region, with the keyword evidence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateChunk {
    pub chunk: Chunk,
    pub region_id: String,
    /// Sorted, unique.
    pub distinct_keywords: Vec<String>,
    pub hit_count: usize,
}

/// Wire form of [`CandidateChunk`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub doc_id: String,
    pub chunk_index: u32,
    pub region: String,
    pub text: String,
    pub token_count: usize,
    pub distinct_keywords: Vec<String>,
    pub hit_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byte_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byte_end: Option<usize>,
}

impl From<&CandidateChunk> for CandidateRecord {
    fn from(c: &CandidateChunk) -> Self {
        CandidateRecord {
            doc_id: c.chunk.doc_id.clone(),
            chunk_index: c.chunk.chunk_index,
            region: c.region_id.clone(),
            text: c.chunk.text.clone(),
            token_count: c.chunk.token_count,
            distinct_keywords: c.distinct_keywords.clone(),
            hit_count: c.hit_count,
            byte_start: Some(c.chunk.byte_span.start),
            byte_end: Some(c.chunk.byte_span.end),
        }
    }
}

impl From<CandidateRecord> for CandidateChunk {
    fn from(r: CandidateRecord) -> Self {
        let start = r.byte_start.unwrap_or(0);
        let end = r.byte_end.unwrap_or(start + r.text.len());
        CandidateChunk {
            chunk: Chunk {
                doc_id: r.doc_id,
                chunk_index: r.chunk_index,
                text: r.text,
                token_count: r.token_count,
                byte_span: ByteSpan { start, end },
            },
            region_id: r.region,
            distinct_keywords: r.distinct_keywords,
            hit_count: r.hit_count,
        }
    }
}

impl Serialize for CandidateChunk {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CandidateRecord::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CandidateChunk {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        CandidateRecord::deserialize(deserializer).map(Into::into)
    }
}

/// Keeps a chunk iff its hits cover at least `min_distinct` different
/// keywords. Repeated hits of one keyword count once.
pub fn filter_chunk(chunk: &Chunk, region_id: &str, hits: &[KeywordHit], min_distinct: usize) -> Option<CandidateChunk> {
    let mut distinct: Vec<String> = hits.iter().map(|h| h.keyword.clone()).collect();
    distinct.sort();
    distinct.dedup();
    (distinct.len() >= min_distinct).then(|| CandidateChunk {
        chunk: chunk.clone(),
        region_id: region_id.to_string(),
        distinct_keywords: distinct,
        hit_count: hits.len(),
    })
}

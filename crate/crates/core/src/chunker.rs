//! Token counting and document segmentation into bounded chunks.

use std::collections::HashSet;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_io::Document;

pub const DEFAULT_MAX_TOKENS: usize = 512;

const TERMINATORS: [char; 3] = ['.', '!', '?'];

#[derive(Debug, Error)]
pub enum ChunkError {
    #[error("max_tokens must be at least 1")]
    ZeroMaxTokens,
    #[error("cannot read vocabulary {}: {source}", path.display())]
    Vocab { path: PathBuf, source: std::io::Error },
    #[error("vocabulary {} is empty", path.display())]
    EmptyVocab { path: PathBuf },
}

/// Which tokenizer defines a "token" for chunk sizing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TokenCounterSpec {
    /// Maximal runs of non-whitespace, with a trailing run of sentence
    /// terminators split off as its own token. Other punctuation stays
    /// attached to its word: `"Merlion Park, Singapore."` is
    /// `Merlion | Park, | Singapore | .`.
    #[default]
    WhitespacePunct,
    /// Greedy longest-match segmentation of each whitespace word against a
    /// vocabulary file (one piece per line). Characters not covered by any
    /// piece count as one token each.
    ExternalVocab { vocab_path: PathBuf },
}

#[derive(Debug)]
struct Vocab {
    pieces: HashSet<String>,
    max_chars: usize,
}

/// A ready-to-use counter built from a [`TokenCounterSpec`]. Building fails
/// up front when an external vocabulary cannot be loaded.
#[derive(Debug, Clone, Default)]
pub struct TokenCounter {
    vocab: Option<Arc<Vocab>>,
}

impl TokenCounter {
    pub fn from_spec(spec: &TokenCounterSpec) -> Result<Self, ChunkError> {
        match spec {
            TokenCounterSpec::WhitespacePunct => Ok(TokenCounter::default()),
            TokenCounterSpec::ExternalVocab { vocab_path } => Self::from_vocab_file(vocab_path),
        }
    }

    fn from_vocab_file(path: &Path) -> Result<Self, ChunkError> {
        let body = std::fs::read_to_string(path).map_err(|source| ChunkError::Vocab {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_pieces(body.lines()).ok_or_else(|| ChunkError::EmptyVocab {
            path: path.to_path_buf(),
        })
    }

    /// Vocabulary counter from an in-memory piece list. Pieces containing
    /// whitespace are ignored since tokens never span whitespace.
    pub fn from_pieces<'a>(pieces: impl IntoIterator<Item = &'a str>) -> Option<Self> {
        let pieces: HashSet<String> = pieces
            .into_iter()
            .filter(|p| !p.is_empty() && !p.chars().any(char::is_whitespace))
            .map(str::to_owned)
            .collect();
        let max_chars = pieces.iter().map(|p| p.chars().count()).max()?;
        Some(TokenCounter {
            vocab: Some(Arc::new(Vocab { pieces, max_chars })),
        })
    }

    pub fn count(&self, text: &str) -> usize {
        let mut n = 0;
        self.for_each_token(text, |_| n += 1);
        n
    }

    /// Byte ranges of every token, in order.
    pub fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        self.for_each_token(text, |r| spans.push(r));
        spans
    }

    fn for_each_token(&self, text: &str, mut f: impl FnMut(Range<usize>)) {
        for word in words(text) {
            match &self.vocab {
                None => {
                    let w = &text[word.clone()];
                    let stem = w.trim_end_matches(TERMINATORS);
                    if stem.is_empty() || stem.len() == w.len() {
                        f(word);
                    } else {
                        let cut = word.start + stem.len();
                        f(word.start..cut);
                        f(cut..word.end);
                    }
                }
                Some(vocab) => vocab.segment(text, word, &mut f),
            }
        }
    }
}

impl Vocab {
    fn segment(&self, text: &str, word: Range<usize>, f: &mut impl FnMut(Range<usize>)) {
        let mut pos = word.start;
        while pos < word.end {
            let rest = &text[pos..word.end];
            let mut best = rest.chars().next().map(char::len_utf8).unwrap_or(rest.len());
            for (idx, ch) in rest.char_indices().take(self.max_chars) {
                let end = idx + ch.len_utf8();
                if self.pieces.contains(&rest[..end]) {
                    best = end;
                }
            }
            f(pos..pos + best);
            pos += best;
        }
    }
}

/// Maximal runs of non-whitespace characters.
fn words(text: &str) -> impl Iterator<Item = Range<usize>> + '_ {
    let mut iter = text.char_indices().peekable();
    std::iter::from_fn(move || {
        while let Some(&(_, c)) = iter.peek() {
            if !c.is_whitespace() {
                break;
            }
            iter.next();
        }
        let (start, _) = *iter.peek()?;
        let mut end = start;
        while let Some(&(i, c)) = iter.peek() {
            if c.is_whitespace() {
                break;
            }
            end = i + c.len_utf8();
            iter.next();
        }
        Some(start..end)
    })
}

pub fn count_tokens(text: &str, counter: &TokenCounter) -> usize {
    counter.count(text)
}

/// Byte range of a chunk within its parent document text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteSpan {
    #[serde(rename = "byte_start")]
    pub start: usize,
    #[serde(rename = "byte_end")]
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: u32,
    pub text: String,
    pub token_count: usize,
    #[serde(flatten)]
    pub byte_span: ByteSpan,
}

/// Splits a document into non-overlapping chunks of at most `max_tokens`
/// tokens.
///
/// Each chunk is filled greedily. When the rest of the document does not fit,
/// the cut backs up to the last sentence end inside the window, provided the
/// chunk keeps at least half the window; otherwise it is a hard cut at
/// `max_tokens`. A sentence ends after a token ending in `.`, `!` or `?` that
/// closes its word, or before a gap containing a newline.
pub fn chunk_document(doc: &Document, max_tokens: usize, counter: &TokenCounter) -> Result<Vec<Chunk>, ChunkError> {
    if max_tokens == 0 {
        return Err(ChunkError::ZeroMaxTokens);
    }
    let text = doc.text.as_str();
    let spans = counter.token_spans(text);
    let min_fill = max_tokens.div_ceil(2);
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < spans.len() {
        let remaining = spans.len() - i;
        let take = if remaining <= max_tokens {
            remaining
        } else {
            (min_fill..=max_tokens)
                .rev()
                .find(|&k| ends_sentence(text, &spans, i + k - 1))
                .unwrap_or(max_tokens)
        };
        let span = ByteSpan {
            start: spans[i].start,
            end: spans[i + take - 1].end,
        };
        chunks.push(Chunk {
            doc_id: doc.doc_id.clone(),
            chunk_index: chunks.len() as u32,
            text: text[span.start..span.end].to_string(),
            token_count: take,
            byte_span: span,
        });
        i += take;
    }
    Ok(chunks)
}

fn ends_sentence(text: &str, spans: &[Range<usize>], idx: usize) -> bool {
    let end = spans[idx].end;
    let next_start = spans.get(idx + 1).map_or(text.len(), |s| s.start);
    let gap = &text[end..next_start];
    if gap.contains('\n') {
        return true;
    }
    let closes_word = gap.is_empty() && next_start == text.len() || gap.starts_with(char::is_whitespace);
    closes_word && text[..end].ends_with(TERMINATORS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> Document {
        Document {
            doc_id: "d#0".into(),
            text: text.into(),
            meta: Default::default(),
        }
    }

    fn ws() -> TokenCounter {
        TokenCounter::default()
    }

    #[test]
    fn counts() {
        assert_eq!(count_tokens("", &ws()), 0);
        assert_eq!(count_tokens("   \n\t ", &ws()), 0);
        assert_eq!(count_tokens("Merlion Park, Singapore.", &ws()), 4);
        let para = (0..600).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        assert_eq!(count_tokens(&para, &ws()), 600);
    }

    // Hand-counted under the whitespace rule with detached sentence terminators.
    #[test]
    fn hand_counted_strings() {
        let cases: [(&str, usize); 20] = [
            ("hello", 1),
            ("hello world", 2),
            ("  leading and trailing  ", 3),
            ("Hi!", 2),
            ("Really?!", 2),
            ("...", 1),
            ("e.g. this", 3),
            ("3.5 percent", 2),
            ("Park,", 1),
            ("a\tb\nc", 3),
            ("Jurong West.\nBukit Merah.", 6),
            ("(CPF)", 1),
            ("Lee Kuan Yew's", 3),
            ("end.\"", 1),
            ("! ? .", 3),
            ("Orchard Road; Sentosa Island.", 5),
            ("non\u{a0}breaking", 2),
            ("日本語 テキスト", 2),
            ("Route 66.", 3),
            ("Mardi Gras? Yes. No!", 7),
        ];
        for (text, expected) in cases {
            assert_eq!(count_tokens(text, &ws()), expected, "{text:?}");
        }
    }

    #[test]
    fn short_document_is_one_chunk() {
        let text = (0..100).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let chunks = chunk_document(&doc(&text), 512, &ws()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_count, 100);
        assert_eq!(chunks[0].text, text);
    }

    #[test]
    fn hard_cut_without_sentence_marks() {
        let text = (0..1024).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let chunks = chunk_document(&doc(&text), 512, &ws()).unwrap();
        assert_eq!(chunks.len(), 2);
        assert!(chunks.iter().all(|c| c.token_count == 512));
        assert_eq!(chunks[1].chunk_index, 1);
    }

    #[test]
    fn sentence_boundaries_preferred() {
        let chunks = chunk_document(&doc("A. B. C."), 2, &ws()).unwrap();
        let texts: Vec<_> = chunks.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["A.", "B.", "C."]);
    }

    #[test]
    fn backup_needs_half_window() {
        // terminator after token 1 of a 6-token window is below half fill
        let chunks = chunk_document(&doc("a. b c d e f g h"), 6, &ws()).unwrap();
        assert_eq!(chunks[0].token_count, 6);
        // a b . fills exactly half
        let chunks = chunk_document(&doc("a b. c d e f g h"), 6, &ws()).unwrap();
        assert_eq!(chunks[0].text, "a b.");
        let chunks = chunk_document(&doc("a b c. d e f g h"), 6, &ws()).unwrap();
        assert_eq!(chunks[0].text, "a b c.");
    }

    #[test]
    fn newline_is_a_boundary() {
        let chunks = chunk_document(&doc("a b c\nd e f g"), 4, &ws()).unwrap();
        assert_eq!(chunks[0].text, "a b c");
        assert_eq!(chunks[1].text, "d e f g");
    }

    #[test]
    fn empty_document() {
        assert!(chunk_document(&doc(""), 512, &ws()).unwrap().is_empty());
        assert!(chunk_document(&doc(" \n "), 512, &ws()).unwrap().is_empty());
    }

    #[test]
    fn zero_max_tokens_rejected() {
        assert!(matches!(chunk_document(&doc("a"), 0, &ws()), Err(ChunkError::ZeroMaxTokens)));
    }

    #[test]
    fn spans_index_parent_text() {
        let d = doc("  Merlion Park.  Orchard Road is busy.\nSentosa!  ");
        for c in chunk_document(&d, 3, &ws()).unwrap() {
            assert_eq!(&d.text[c.byte_span.start..c.byte_span.end], c.text);
            assert_eq!(count_tokens(&c.text, &ws()), c.token_count);
        }
    }

    #[test]
    fn vocab_segmentation() {
        let counter = TokenCounter::from_pieces(["sing", "singa", "pore", "merli", "on"]).unwrap();
        // singa|pore  merli|on  p|a|r|k
        assert_eq!(counter.count("singapore merlion park"), 8);
        let d = doc("singapore merlion");
        let chunks = chunk_document(&d, 3, &counter).unwrap();
        assert_eq!(chunks.iter().map(|c| c.token_count).collect::<Vec<_>>(), [3, 1]);
        for c in &chunks {
            assert_eq!(counter.count(&c.text), c.token_count);
        }
    }

    #[test]
    fn vocab_file_errors() {
        let missing = TokenCounterSpec::ExternalVocab {
            vocab_path: "/no/such/vocab.txt".into(),
        };
        assert!(matches!(TokenCounter::from_spec(&missing), Err(ChunkError::Vocab { .. })));
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("v.txt");
        std::fs::write(&empty, "\n\n").unwrap();
        let spec = TokenCounterSpec::ExternalVocab { vocab_path: empty };
        assert!(matches!(TokenCounter::from_spec(&spec), Err(ChunkError::EmptyVocab { .. })));
    }
}

//! Generated instruction records and the acceptance check applied to them.

use serde::{Deserialize, Serialize};

use crate::pipeline::normalize_for_dedup;

pub const DEFAULT_MIN_ANSWER_CHARS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    ContextDependent,
    ContextFree,
}

impl AnswerMode {
    pub fn short(self) -> &'static str {
        match self {
            AnswerMode::ContextDependent => "cd",
            AnswerMode::ContextFree => "cf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub doc_id: String,
    pub chunk_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub question_model: String,
    pub answer_model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub record_id: String,
    pub region_id: String,
    pub question: String,
    pub answer: String,
    pub answer_mode: AnswerMode,
    pub source: SourceRef,
    pub generator: GeneratorInfo,
    /// RFC 3339, UTC.
    pub created_at: String,
}

/// `{region}/{doc_id}/{chunk_index}/{cd|cf}`: unique per chunk and mode.
pub fn record_id(region_id: &str, source: &SourceRef, mode: AnswerMode) -> String {
    format!("{region_id}/{}/{}/{}", source.doc_id, source.chunk_index, mode.short())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationPolicy {
    pub min_answer_chars: usize,
    /// Also reject questions that do not end in '?'.
    pub strict: bool,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        ValidationPolicy {
            min_answer_chars: DEFAULT_MIN_ANSWER_CHARS,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RejectReason {
    EmptyQuestion,
    EmptyAnswer,
    Echo,
    TooShort,
    NoQuestionMark,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::EmptyQuestion => "empty_question",
            RejectReason::EmptyAnswer => "empty",
            RejectReason::Echo => "echo",
            RejectReason::TooShort => "too_short",
            RejectReason::NoQuestionMark => "no_question_mark",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn validate_record(record: &InstructionRecord, policy: &ValidationPolicy) -> Result<(), RejectReason> {
    let question = record.question.trim();
    let answer = record.answer.trim();
    if question.is_empty() {
        return Err(RejectReason::EmptyQuestion);
    }
    if answer.is_empty() {
        return Err(RejectReason::EmptyAnswer);
    }
    if normalize_for_dedup(answer) == normalize_for_dedup(question) {
        return Err(RejectReason::Echo);
    }
    if answer.chars().count() < policy.min_answer_chars {
        return Err(RejectReason::TooShort);
    }
    if policy.strict && !question.ends_with('?') {
        return Err(RejectReason::NoQuestionMark);
    }
    Ok(())
}

//! Question and answer generation over candidate chunks.
//!
//! Each chunk gets exactly one question from the question endpoint. That
//! question is then answered with the chunk as context, without it, or both.
//! Context-free answers can go to a separate endpoint.

pub mod endpoint;
pub mod mock;
pub mod prompt;
pub mod record;

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_io::CorpusError;
use crate::matcher::CandidateChunk;
use endpoint::{EndpointError, ManagedEndpoint};
use prompt::{default_region_name, make_answer_prompt, make_question_prompt};
use record::{record_id, validate_record, AnswerMode, GeneratorInfo, InstructionRecord, SourceRef, ValidationPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMode {
    #[default]
    ContextDependent,
    ContextFree,
    Both,
}

impl GenMode {
    pub fn answer_modes(self) -> &'static [AnswerMode] {
        match self {
            GenMode::ContextDependent => &[AnswerMode::ContextDependent],
            GenMode::ContextFree => &[AnswerMode::ContextFree],
            GenMode::Both => &[AnswerMode::ContextDependent, AnswerMode::ContextFree],
        }
    }
}

impl FromStr for GenMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cd" | "context_dependent" => Ok(GenMode::ContextDependent),
            "cf" | "context_free" => Ok(GenMode::ContextFree),
            "both" => Ok(GenMode::Both),
            other => Err(format!("unknown mode {other:?} (expected cd, cf or both)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenStats {
    pub chunks_in: u64,
    pub questions_generated: u64,
    /// Chunks dropped because no question could be obtained.
    pub question_failures: u64,
    /// Answer requests that failed after retries.
    pub answer_failures: u64,
    pub records_emitted: u64,
    /// Records refused by `validate_record`, by reason.
    pub records_rejected: BTreeMap<String, u64>,
    pub retries: u64,
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("{role} endpoint failed its probe: {source}")]
    Probe {
        role: &'static str,
        #[source]
        source: EndpointError,
    },
    #[error("reading candidates: {0}")]
    Input(#[source] CorpusError),
    #[error("writing records: {0}")]
    Output(#[source] CorpusError),
}

#[derive(Debug, Clone, Default)]
pub struct GenOptions {
    pub mode: GenMode,
    pub validation: ValidationPolicy,
    /// Emit records in input order instead of completion order.
    pub stable_order: bool,
    /// Overrides for the region display names used in question prompts.
    pub region_names: BTreeMap<String, String>,
}

pub struct Generator {
    question: Arc<ManagedEndpoint>,
    answer: Arc<ManagedEndpoint>,
    context_free: Arc<ManagedEndpoint>,
    options: GenOptions,
}

#[derive(Default)]
struct ChunkOutcome {
    records: Vec<InstructionRecord>,
    question_generated: bool,
    question_failed: bool,
    answer_failures: u64,
    rejected: Vec<record::RejectReason>,
    retries: u64,
}

impl Generator {
    /// `context_free` defaults to the answer endpoint.
    pub fn new(
        question: Arc<ManagedEndpoint>,
        answer: Arc<ManagedEndpoint>,
        context_free: Option<Arc<ManagedEndpoint>>,
        options: GenOptions,
    ) -> Self {
        let context_free = context_free.unwrap_or_else(|| answer.clone());
        Generator {
            question,
            answer,
            context_free,
            options,
        }
    }

    pub fn options(&self) -> &GenOptions {
        &self.options
    }

    fn region_name(&self, region_id: &str) -> String {
        self.options
            .region_names
            .get(region_id)
            .cloned()
            .or_else(|| default_region_name(region_id).map(str::to_owned))
            .unwrap_or_else(|| region_id.to_string())
    }

    /// Probes each distinct endpoint once. Any failure here is fatal.
    pub async fn probe(&self) -> Result<(), GenError> {
        let mut seen: Vec<&Arc<ManagedEndpoint>> = Vec::new();
        let mut roles = vec![("question", &self.question)];
        let modes = self.options.mode.answer_modes();
        if modes.contains(&AnswerMode::ContextDependent) {
            roles.push(("answer", &self.answer));
        }
        if modes.contains(&AnswerMode::ContextFree) {
            roles.push(("context_free_answer", &self.context_free));
        }
        for (role, ep) in roles {
            if seen.iter().any(|s| Arc::ptr_eq(s, ep)) {
                continue;
            }
            seen.push(ep);
            ep.probe().await.map_err(|source| GenError::Probe { role, source })?;
        }
        Ok(())
    }

    fn window(&self) -> usize {
        let widest = self
            .question
            .max_concurrent()
            .max(self.answer.max_concurrent())
            .max(self.context_free.max_concurrent());
        2 * widest
    }

    /// Generates records for every candidate and hands each accepted record
    /// to `sink`. Per-chunk failures are counted in the returned stats; only
    /// probe failures, unreadable input and sink errors abort the batch.
    pub async fn generate_batch<I, F>(&self, candidates: I, mut sink: F) -> Result<GenStats, GenError>
    where
        I: IntoIterator<Item = Result<CandidateChunk, CorpusError>>,
        F: FnMut(InstructionRecord) -> Result<(), CorpusError>,
    {
        self.probe().await?;
        let mut stats = GenStats::default();
        let mut input_error = None;
        {
            let inputs = candidates.into_iter().map_while(|c| match c {
                Ok(c) => Some(c),
                Err(e) => {
                    input_error = Some(e);
                    None
                }
            });
            let work = stream::iter(inputs).map(|c| self.process(c));
            let mut outcomes = if self.options.stable_order {
                work.buffered(self.window()).boxed_local()
            } else {
                work.buffer_unordered(self.window()).boxed_local()
            };
            while let Some(outcome) = outcomes.next().await {
                stats.chunks_in += 1;
                stats.questions_generated += outcome.question_generated as u64;
                stats.question_failures += outcome.question_failed as u64;
                stats.answer_failures += outcome.answer_failures;
                stats.retries += outcome.retries;
                for reason in outcome.rejected {
                    *stats.records_rejected.entry(reason.as_str().to_string()).or_default() += 1;
                }
                for rec in outcome.records {
                    sink(rec).map_err(GenError::Output)?;
                    stats.records_emitted += 1;
                }
            }
        }
        match input_error {
            Some(e) => Err(GenError::Input(e)),
            None => Ok(stats),
        }
    }

    async fn process(&self, candidate: CandidateChunk) -> ChunkOutcome {
        let mut out = ChunkOutcome::default();
        let chunk = &candidate.chunk;
        let source = SourceRef {
            doc_id: chunk.doc_id.clone(),
            chunk_index: chunk.chunk_index,
        };
        let prompt = match make_question_prompt(&self.region_name(&candidate.region_id), &chunk.text) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{}#{}: {e}", source.doc_id, source.chunk_index);
                out.question_failed = true;
                return out;
            }
        };
        let question = match self.question.chat(&prompt.messages()).await {
            Ok(c) => {
                out.retries += c.retries as u64;
                c.content.trim().to_string()
            }
            Err(e) => {
                log::warn!("question for {}#{} failed: {e}", source.doc_id, source.chunk_index);
                out.retries += e.retries() as u64;
                out.question_failed = true;
                return out;
            }
        };
        if question.is_empty() {
            out.question_failed = true;
            return out;
        }
        out.question_generated = true;

        let requests = self.options.mode.answer_modes().iter().map(|&mode| {
            let (ep, context) = match mode {
                AnswerMode::ContextDependent => (&self.answer, Some(chunk.text.as_str())),
                AnswerMode::ContextFree => (&self.context_free, None),
            };
            let question = question.as_str();
            async move {
                let prompt = make_answer_prompt(question, context).expect("question is non-empty");
                (mode, ep, ep.chat(&prompt.messages()).await)
            }
        });
        for (mode, ep, result) in futures::future::join_all(requests).await {
            let completion = match result {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("{} answer for {}#{} failed: {e}", mode.short(), source.doc_id, source.chunk_index);
                    out.retries += e.retries() as u64;
                    out.answer_failures += 1;
                    continue;
                }
            };
            out.retries += completion.retries as u64;
            let rec = InstructionRecord {
                record_id: record_id(&candidate.region_id, &source, mode),
                region_id: candidate.region_id.clone(),
                question: question.clone(),
                answer: completion.content.trim().to_string(),
                answer_mode: mode,
                source: source.clone(),
                generator: GeneratorInfo {
                    question_model: self.question.model_name().to_string(),
                    answer_model: ep.model_name().to_string(),
                },
                created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
            };
            match validate_record(&rec, &self.options.validation) {
                Ok(()) => out.records.push(rec),
                Err(reason) => out.rejected.push(reason),
            }
        }
        out
    }
}

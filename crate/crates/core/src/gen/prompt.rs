//! Prompt templates for question and answer generation.

use std::collections::BTreeMap;

use thiserror::Error;

use super::endpoint::ChatMessage;

pub const QUESTION_PROMPT_PREFIX: &str = "You are a chatbot who always generates just one question about";
pub const QUESTION_SYSTEM_TEMPLATE: &str =
    "You are a chatbot who always generates just one question about {region} from the given context. Do not generate the answer.";
pub const ANSWER_SYSTEM_PROMPT: &str = "Please answer the following question.";
/// Goes between the context and the question in context-dependent answer requests.
pub const CONTEXT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("slot {{{0}}} has no value")]
    UnfilledSlot(String),
    #[error("chunk text is empty")]
    EmptyChunk,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("region name is empty")]
    EmptyRegion,
}

/// A system preamble plus a user body, both with `{slot}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub role_preamble: String,
    pub user_body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl RenderedPrompt {
    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![ChatMessage::system(&self.system), ChatMessage::user(&self.user)]
    }
}

impl PromptTemplate {
    pub fn new(role_preamble: impl Into<String>, user_body: impl Into<String>) -> Self {
        PromptTemplate {
            role_preamble: role_preamble.into(),
            user_body: user_body.into(),
        }
    }

    pub fn question() -> Self {
        Self::new(QUESTION_SYSTEM_TEMPLATE, "{context}")
    }

    pub fn answer_with_context() -> Self {
        Self::new(ANSWER_SYSTEM_PROMPT, format!("{{context}}{CONTEXT_SEPARATOR}{{question}}"))
    }

    pub fn answer_without_context() -> Self {
        Self::new(ANSWER_SYSTEM_PROMPT, "{question}")
    }

    pub fn render(&self, slots: &BTreeMap<&str, &str>) -> Result<RenderedPrompt, PromptError> {
        Ok(RenderedPrompt {
            system: fill_slots(&self.role_preamble, slots)?,
            user: fill_slots(&self.user_body, slots)?,
        })
    }
}

/// Replaces every `{name}` (name = ASCII lowercase/underscore) with its value.
/// Values are inserted verbatim and never rescanned, so chunk text containing
/// braces is safe. Braces that do not form a slot name pass through.
pub fn fill_slots(template: &str, slots: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .bytes()
            .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
            .count();
        if name_len > 0 && after.as_bytes().get(name_len) == Some(&b'}') {
            let name = &after[..name_len];
            let value = slots.get(name).ok_or_else(|| PromptError::UnfilledSlot(name.to_string()))?;
            out.push_str(value);
            rest = &after[name_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Display names substituted into the question template for the shipped regions.
pub fn default_region_name(region_id: &str) -> Option<&'static str> {
    match region_id {
        "sg" => Some("Singapore"),
        "ph" => Some("the Philippines"),
        "us" => Some("the United States"),
        _ => None,
    }
}

pub fn make_question_prompt(region_name: &str, chunk_text: &str) -> Result<RenderedPrompt, PromptError> {
    if chunk_text.trim().is_empty() {
        return Err(PromptError::EmptyChunk);
    }
    if region_name.trim().is_empty() {
        return Err(PromptError::EmptyRegion);
    }
    let slots = BTreeMap::from([("region", region_name), ("context", chunk_text)]);
    PromptTemplate::question().render(&slots)
}

pub fn make_answer_prompt(question: &str, context: Option<&str>) -> Result<RenderedPrompt, PromptError> {
    if question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    match context {
        Some(context) => {
            let slots = BTreeMap::from([("question", question), ("context", context)]);
            PromptTemplate::answer_with_context().render(&slots)
        }
        None => PromptTemplate::answer_without_context().render(&BTreeMap::from([("question", question)])),
    }
}

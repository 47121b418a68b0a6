//! Multiple-choice evaluation of a chat endpoint under several paraphrased
//! prompt templates.
//!
//! Every item is asked once per template. Accuracy is reported per template
//! and averaged; responses with no recognizable choice count as wrong.

pub mod choice;
pub mod item;
pub mod template;

use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_io::{read_records, CorpusError};
use crate::gen::endpoint::{ChatMessage, EndpointError, ManagedEndpoint};
use choice::parse_choice;
use item::EvalItem;
use template::{render_eval_prompt, TemplatePack};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Io(#[from] CorpusError),
    #[error("{}:{line}: {message}", path.display())]
    Dataset { path: PathBuf, line: u64, message: String },
    #[error("{}: {message}", path.display())]
    Templates { path: PathBuf, message: String },
    #[error("template index {index} out of range ({available} templates)")]
    TemplateIndex { index: usize, available: usize },
    #[error("dataset has no items")]
    EmptyDataset,
    #[error("endpoint failed its probe: {0}")]
    Probe(#[source] EndpointError),
}

impl EvalError {
    pub fn path(&self) -> Option<&Path> {
        match self {
            EvalError::Io(e) => Some(e.path()),
            EvalError::Dataset { path, .. } | EvalError::Templates { path, .. } => Some(path),
            _ => None,
        }
    }
}

/// One line of the persisted response log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseLogEntry {
    pub item_id: String,
    pub template_index: usize,
    pub raw_response: String,
    pub parsed_index: Option<usize>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_name: String,
    pub model_name: String,
    pub template_names: Vec<String>,
    pub per_template_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    /// Population standard deviation over the per-template accuracies.
    pub stddev: f64,
    pub items_total: usize,
    /// Responses, across all templates, from which no choice was extracted.
    pub items_unparsed: usize,
    pub responses_logged: usize,
    /// False when the run stopped early; accuracies then cover only the
    /// responses received.
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-template accuracies with their mean and population stddev.
pub fn summarize(correct_per_template: &[u64], items_total: usize) -> (Vec<f64>, f64, f64) {
    let acc: Vec<f64> = correct_per_template
        .iter()
        .map(|&c| if items_total == 0 { 0.0 } else { c as f64 / items_total as f64 })
        .collect();
    if acc.is_empty() {
        return (acc, 0.0, 0.0);
    }
    let n = acc.len() as f64;
    let mean = acc.iter().sum::<f64>() / n;
    let var = acc.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    (acc, mean, var.sqrt())
}

/// Correct answers per template, recounted from log entries.
pub fn recount<'a>(entries: impl IntoIterator<Item = &'a ResponseLogEntry>, n_templates: usize) -> Vec<u64> {
    let mut correct = vec![0; n_templates];
    for e in entries {
        if e.correct && e.template_index < n_templates {
            correct[e.template_index] += 1;
        }
    }
    correct
}

pub fn read_response_log(path: &Path) -> Result<Vec<ResponseLogEntry>, CorpusError> {
    read_records(path)?.map(|r| r.map(|(_, e)| e)).collect()
}

/// Runs every item under every template and reports accuracy. Each response
/// is passed to `log` as it arrives, in (template, item) order. An endpoint
/// failure stops the run and yields a report with `valid == false`.
pub async fn evaluate<F>(
    dataset_name: &str,
    items: &[EvalItem],
    endpoint: &ManagedEndpoint,
    pack: &TemplatePack,
    mut log: F,
) -> Result<EvalReport, EvalError>
where
    F: FnMut(&ResponseLogEntry) -> Result<(), CorpusError>,
{
    if items.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    endpoint.probe().await.map_err(EvalError::Probe)?;
    let jobs = (0..pack.len()).flat_map(|t| items.iter().map(move |item| (t, item)));
    let mut responses = stream::iter(jobs)
        .map(|(t, item)| async move {
            let prompt = render_eval_prompt(item, pack, t).expect("index comes from the pack");
            (t, item, endpoint.chat(&[ChatMessage::user(prompt)]).await)
        })
        .buffered(2 * endpoint.max_concurrent());

    let mut correct = vec![0u64; pack.len()];
    let (mut unparsed, mut logged, mut error) = (0, 0, None);
    while let Some((t, item, result)) = responses.next().await {
        let completion = match result {
            Ok(c) => c,
            Err(e) => {
                log::error!("item {} under template {t}: {e}", item.item_id);
                error = Some(format!("item {} under template {t}: {e}", item.item_id));
                break;
            }
        };
        let parsed = parse_choice(&completion.content, &item.options);
        let entry = ResponseLogEntry {
            item_id: item.item_id.clone(),
            template_index: t,
            raw_response: completion.content,
            parsed_index: parsed,
            correct: parsed == Some(item.gold_index),
        };
        log(&entry)?;
        logged += 1;
        unparsed += parsed.is_none() as usize;
        correct[t] += entry.correct as u64;
    }
    let (per_template_accuracy, mean_accuracy, stddev) = summarize(&correct, items.len());
    Ok(EvalReport {
        dataset_name: dataset_name.to_string(),
        model_name: endpoint.model_name().to_string(),
        template_names: pack.templates().iter().map(|t| t.name.clone()).collect(),
        per_template_accuracy,
        mean_accuracy,
        stddev,
        items_total: items.len(),
        items_unparsed: unparsed,
        responses_logged: logged,
        valid: error.is_none(),
        error,
    })
}

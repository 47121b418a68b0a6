//! Multiple-choice items and dataset loaders.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::EvalError;
use crate::corpus_io::open_lines;

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub question: String,
    pub options: Vec<String>,
    pub gold_index: usize,
}

impl EvalItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        let n = self.options.len();
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
            return Err(format!("{n} options; expected {MIN_OPTIONS} to {MAX_OPTIONS}"));
        }
        let mut seen = BTreeSet::new();
        for (i, opt) in self.options.iter().enumerate() {
            if opt.trim().is_empty() {
                return Err(format!("option {i} is empty"));
            }
            if !seen.insert(opt.trim()) {
                return Err(format!("option {i} repeats an earlier option"));
            }
        }
        if self.gold_index >= n {
            return Err(format!("gold index {} is out of range for {n} options", self.gold_index));
        }
        Ok(())
    }
}

/// Maps one JSON line of some dataset layout onto an [`EvalItem`].
pub trait ItemAdapter {
    fn name(&self) -> &'static str;

    /// `line` is one-based and can serve as a fallback id.
    fn parse(&self, value: &Value, line: u64) -> Result<EvalItem, String>;
}

fn text_field<'a>(value: &'a Value, key: &str) -> Result<&'a str, String> {
    value.get(key).and_then(Value::as_str).ok_or_else(|| format!("missing string field {key:?}"))
}

fn string_list(value: &Value, key: &str) -> Result<Vec<String>, String> {
    let items = value.get(key).and_then(Value::as_array).ok_or_else(|| format!("missing array field {key:?}"))?;
    items
        .iter()
        .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| format!("{key:?} must hold strings")))
        .collect()
}

fn item_id(value: &Value, line: u64) -> String {
    match value.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => format!("line-{line}"),
    }
}

/// `{"question", "options": [...], "answer_index", "id"?}`
pub struct IndexedJsonl;

impl ItemAdapter for IndexedJsonl {
    fn name(&self) -> &'static str {
        "indexed"
    }

    fn parse(&self, value: &Value, line: u64) -> Result<EvalItem, String> {
        let gold = value
            .get("answer_index")
            .and_then(Value::as_u64)
            .ok_or("missing non-negative integer field \"answer_index\"")?;
        Ok(EvalItem {
            item_id: item_id(value, line),
            question: text_field(value, "question")?.to_string(),
            options: string_list(value, "options")?,
            gold_index: gold as usize,
        })
    }
}

/// `{"question", "choices": [...], "answer": "C", "id"?}`, a common layout
/// for lettered benchmarks.
pub struct LetteredJsonl;

impl ItemAdapter for LetteredJsonl {
    fn name(&self) -> &'static str {
        "lettered"
    }

    fn parse(&self, value: &Value, line: u64) -> Result<EvalItem, String> {
        let answer = text_field(value, "answer")?.trim();
        let mut chars = answer.chars();
        let gold = match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_alphabetic() => (c.to_ascii_uppercase() as u8 - b'A') as usize,
            _ => return Err(format!("answer {answer:?} is not a single letter")),
        };
        Ok(EvalItem {
            item_id: item_id(value, line),
            question: text_field(value, "question")?.to_string(),
            options: string_list(value, "choices")?,
            gold_index: gold,
        })
    }
}

pub fn adapter_by_name(name: &str) -> Option<Box<dyn ItemAdapter>> {
    match name {
        "indexed" => Some(Box::new(IndexedJsonl)),
        "lettered" => Some(Box::new(LetteredJsonl)),
        _ => None,
    }
}

/// Parses and validates one line with the given adapter.
pub fn parse_item(line: &[u8], line_no: u64, adapter: &dyn ItemAdapter) -> Result<EvalItem, String> {
    let value: Value = serde_json::from_slice(line).map_err(|e| e.to_string())?;
    let item = adapter.parse(&value, line_no)?;
    item.validate()?;
    Ok(item)
}

pub fn load_dataset(path: &Path, adapter: &dyn ItemAdapter) -> Result<Vec<EvalItem>, EvalError> {
    let mut items = Vec::new();
    let mut ids = BTreeSet::new();
    for raw in open_lines(path)? {
        let raw = raw?;
        if raw.bytes.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let line = raw.ordinal + 1;
        let bad = |message: String| EvalError::Dataset {
            path: path.to_path_buf(),
            line,
            message,
        };
        let item = parse_item(&raw.bytes, line, adapter).map_err(bad)?;
        if !ids.insert(item.item_id.clone()) {
            return Err(bad(format!("duplicate item id {:?}", item.item_id)));
        }
        items.push(item);
    }
    Ok(items)
}

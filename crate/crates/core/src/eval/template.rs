//! Paraphrased prompt templates for multiple-choice evaluation.
//!
//! A template is plain text with three slots: `{question}`, `{options}`
//! (the lettered option lines) and optionally `{letters}` ("A, B, C or D").
//! Templates vary the wording around the options, never the options.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::item::EvalItem;
use super::EvalError;
use crate::gen::prompt::fill_slots;

pub const DEFAULT_TEMPLATE_COUNT: usize = 5;

const BUILTIN: [(&str, &str); DEFAULT_TEMPLATE_COUNT] = [
    ("01-direct", include_str!("../../data/templates/01-direct.txt")),
    ("02-terse", include_str!("../../data/templates/02-terse.txt")),
    ("03-choices", include_str!("../../data/templates/03-choices.txt")),
    ("04-culture", include_str!("../../data/templates/04-culture.txt")),
    ("05-plain", include_str!("../../data/templates/05-plain.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvalTemplate {
    pub name: String,
    pub body: String,
}

impl EvalTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self, String> {
        let t = EvalTemplate {
            name: name.into(),
            body: body.into(),
        };
        for slot in ["{question}", "{options}"] {
            let n = t.body.matches(slot).count();
            if n != 1 {
                return Err(format!("template {} uses {slot} {n} times; expected once", t.name));
            }
        }
        let probe = BTreeMap::from([("question", ""), ("options", ""), ("letters", "")]);
        fill_slots(&t.body, &probe).map_err(|e| format!("template {}: {e}", t.name))?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TemplatePack {
    templates: Vec<EvalTemplate>,
}

impl TemplatePack {
    pub fn new(templates: Vec<EvalTemplate>) -> Result<Self, String> {
        if templates.is_empty() {
            return Err("template pack is empty".into());
        }
        Ok(TemplatePack { templates })
    }

    /// The five phrasings shipped with the crate.
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, body)| EvalTemplate::new(*name, *body).expect("shipped templates are valid"))
            .collect();
        TemplatePack { templates }
    }

    /// Every `*.txt` file in `dir`, ordered by file name.
    pub fn load_dir(dir: &Path) -> Result<Self, EvalError> {
        let io_err = |e: std::io::Error| EvalError::Templates {
            path: dir.to_path_buf(),
            message: e.to_string(),
        };
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(io_err)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(io_err)?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        files.sort();
        let mut templates = Vec::with_capacity(files.len());
        for path in files {
            let body = std::fs::read_to_string(&path).map_err(|e| EvalError::Templates {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            templates.push(EvalTemplate::new(name, body).map_err(|message| EvalError::Templates {
                path: path.clone(),
                message,
            })?);
        }
        Self::new(templates).map_err(|message| EvalError::Templates {
            path: dir.to_path_buf(),
            message,
        })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn templates(&self) -> &[EvalTemplate] {
        &self.templates
    }
}

pub fn option_letter(index: usize) -> char {
    (b'A' + index as u8) as char
}

/// "A. first\nB. second\n..."
pub fn options_block(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {}", option_letter(i), o.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// "A or B", "A, B or C", ...
pub fn letters_phrase(n: usize) -> String {
    let letters: Vec<String> = (0..n).map(|i| option_letter(i).to_string()).collect();
    match letters.split_last() {
        Some((last, [])) => last.clone(),
        Some((last, rest)) => format!("{} or {last}", rest.join(", ")),
        None => String::new(),
    }
}

pub fn render_eval_prompt(item: &EvalItem, pack: &TemplatePack, template_index: usize) -> Result<String, EvalError> {
    let template = pack.templates.get(template_index).ok_or(EvalError::TemplateIndex {
        index: template_index,
        available: pack.len(),
    })?;
    let options = options_block(&item.options);
    let letters = letters_phrase(item.options.len());
    let slots = BTreeMap::from([
        ("question", item.question.trim()),
        ("options", options.as_str()),
        ("letters", letters.as_str()),
    ]);
    Ok(fill_slots(template.body.trim_end(), &slots).expect("templates are validated on load"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(n: usize) -> EvalItem {
        EvalItem {
            item_id: "x".into(),
            question: "Which dish is made with rice cooked in coconut milk?".into(),
            options: ["Nasi lemak", "Laksa", "Satay", "Rojak", "Kaya toast", "Chilli crab"][..n]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            gold_index: 0,
        }
    }

    #[test]
    fn builtin_pack_has_five() {
        let pack = TemplatePack::builtin();
        assert_eq!(pack.len(), DEFAULT_TEMPLATE_COUNT);
        let bodies: std::collections::BTreeSet<_> = pack.templates().iter().map(|t| &t.body).collect();
        assert_eq!(bodies.len(), 5);
    }

    #[test]
    fn lettered_lines() {
        let p = render_eval_prompt(&item(4), &TemplatePack::builtin(), 0).unwrap();
        for line in ["A. Nasi lemak", "B. Laksa", "C. Satay", "D. Rojak"] {
            assert!(p.lines().any(|l| l == line), "{line} missing from\n{p}");
        }
        assert!(!p.contains("E. "));
        assert!(p.contains("(A, B, C or D)"));
        let two = render_eval_prompt(&item(2), &TemplatePack::builtin(), 1).unwrap();
        assert!(two.contains("A. Nasi lemak\nB. Laksa"));
        assert!(!two.contains("C. "));
        assert!(two.contains("A or B"));
    }

    #[test]
    fn option_block_is_shared_across_templates() {
        let pack = TemplatePack::builtin();
        let block = options_block(&item(6).options);
        let renders: Vec<_> = (0..5).map(|i| render_eval_prompt(&item(6), &pack, i).unwrap()).collect();
        for r in &renders {
            assert_eq!(r.matches(&block).count(), 1);
        }
        assert_ne!(renders[0], renders[3]);
        assert_ne!(renders[0].replace(&block, ""), renders[3].replace(&block, ""));
    }

    #[test]
    fn out_of_range_template() {
        assert!(matches!(
            render_eval_prompt(&item(2), &TemplatePack::builtin(), 5),
            Err(EvalError::TemplateIndex { index: 5, available: 5 })
        ));
    }

    #[test]
    fn template_validation() {
        assert!(EvalTemplate::new("t", "{question} {options}").is_ok());
        assert!(EvalTemplate::new("t", "{question}").is_err());
        assert!(EvalTemplate::new("t", "{question} {options} {options}").is_err());
        assert!(EvalTemplate::new("t", "{question} {options} {answer}").is_err());
        assert!(TemplatePack::new(vec![]).is_err());
    }

    #[test]
    fn letters() {
        assert_eq!(letters_phrase(2), "A or B");
        assert_eq!(letters_phrase(4), "A, B, C or D");
    }
}

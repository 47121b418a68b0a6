//! Per-region keyword lists.
//!
//! Two on-disk layouts are accepted: a plain UTF-8 list with one keyword per
//! line (`#` starts a comment line), and a JSON region file:
//!
//! ```json
//! {"region_id": "sg", "keywords": ["Merlion", "Orchard Road"],
//!  "case_insensitive": true, "word_boundary": true}
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MIN_KEYWORDS: usize = 150;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid lexicon JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("lexicon for region {region} is empty")]
    Empty { region: String },
    #[error("lexicon for region {region} has {found} keywords, {required} required ({} short)", required - found)]
    TooSmall {
        region: String,
        found: usize,
        required: usize,
    },
    #[error("keyword #{index} is blank")]
    BlankKeyword { index: usize },
    #[error("lexicon file declares region {found}, expected {expected}")]
    RegionMismatch { expected: String, found: String },
    #[error("region id must not be empty")]
    EmptyRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPolicy {
    pub case_insensitive: bool,
    /// A match may not begin or end inside a run of alphanumerics.
    pub word_boundary: bool,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            case_insensitive: true,
            word_boundary: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LexiconOptions {
    pub min_size: usize,
    /// Load lists below `min_size` with a warning instead of failing.
    pub allow_short: bool,
}

impl Default for LexiconOptions {
    fn default() -> Self {
        LexiconOptions {
            min_size: DEFAULT_MIN_KEYWORDS,
            allow_short: false,
        }
    }
}

/// A validated, normalized keyword set for one region. Keywords are kept
/// sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pub region_id: String,
    /// Human-readable region name used in prompts, when the file provides one.
    pub region_name: Option<String>,
    keywords: Vec<String>,
    pub policy: MatchPolicy,
    pub min_size: usize,
}

impl Lexicon {
    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    /// The normalized JSON form; loading it back yields an identical lexicon.
    pub fn to_json(&self) -> String {
        let file = JsonLexicon {
            region_id: Some(self.region_id.clone()),
            region_name: self.region_name.clone(),
            keywords: self.keywords.clone(),
            case_insensitive: self.policy.case_insensitive,
            word_boundary: self.policy.word_boundary,
        };
        serde_json::to_string_pretty(&file).expect("lexicon serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedLexicon {
    pub lexicon: Lexicon,
    /// Entries dropped because they normalized to an existing keyword.
    pub duplicates_removed: usize,
    /// Set when the list was accepted below `min_size` via `allow_short`.
    pub short_by: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexiconFormat {
    Plain,
    Json,
}

impl LexiconFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => LexiconFormat::Json,
            _ => LexiconFormat::Plain,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonLexicon {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region_name: Option<String>,
    keywords: Vec<String>,
    #[serde(default = "yes")]
    case_insensitive: bool,
    #[serde(default = "yes")]
    word_boundary: bool,
}

fn yes() -> bool {
    true
}

/// Canonical keyword form: internal whitespace runs collapsed to one space,
/// ends trimmed, and characters lowercased one by one when matching is
/// case-insensitive. Idempotent.
pub fn normalize_keyword(raw: &str, policy: MatchPolicy) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        if policy.case_insensitive {
            out.extend(word.chars().flat_map(char::to_lowercase));
        } else {
            out.push_str(word);
        }
    }
    out
}

pub fn load_lexicon(path: &Path, region_id: &str, options: LexiconOptions) -> Result<LoadedLexicon, LexiconError> {
    let body = std::fs::read_to_string(path).map_err(|source| LexiconError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_lexicon(&body, LexiconFormat::from_path(path), region_id, options)
}

pub fn parse_lexicon(
    body: &str,
    format: LexiconFormat,
    region_id: &str,
    options: LexiconOptions,
) -> Result<LoadedLexicon, LexiconError> {
    if region_id.trim().is_empty() {
        return Err(LexiconError::EmptyRegion);
    }
    let (entries, policy, region_name) = match format {
        LexiconFormat::Plain => {
            let entries: Vec<String> = body
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_owned)
                .collect();
            (entries, MatchPolicy::default(), None)
        }
        LexiconFormat::Json => {
            let file: JsonLexicon = serde_json::from_str(body)?;
            if let Some(found) = file.region_id.filter(|r| r != region_id) {
                return Err(LexiconError::RegionMismatch {
                    expected: region_id.to_string(),
                    found,
                });
            }
            if let Some(index) = file.keywords.iter().position(|k| k.trim().is_empty()) {
                return Err(LexiconError::BlankKeyword { index });
            }
            let policy = MatchPolicy {
                case_insensitive: file.case_insensitive,
                word_boundary: file.word_boundary,
            };
            (file.keywords, policy, file.region_name)
        }
    };

    let total = entries.len();
    let keywords: BTreeSet<String> = entries.iter().map(|k| normalize_keyword(k, policy)).collect();
    let duplicates_removed = total - keywords.len();
    if duplicates_removed > 0 {
        log::warn!("lexicon {region_id}: removed {duplicates_removed} duplicate keyword(s)");
    }
    if keywords.is_empty() {
        return Err(LexiconError::Empty {
            region: region_id.to_string(),
        });
    }
    let mut short_by = None;
    if keywords.len() < options.min_size {
        if !options.allow_short {
            return Err(LexiconError::TooSmall {
                region: region_id.to_string(),
                found: keywords.len(),
                required: options.min_size,
            });
        }
        let deficit = options.min_size - keywords.len();
        log::warn!(
            "lexicon {region_id}: {} keywords, {deficit} below the minimum of {}",
            keywords.len(),
            options.min_size
        );
        short_by = Some(deficit);
    }

    Ok(LoadedLexicon {
        lexicon: Lexicon {
            region_id: region_id.to_string(),
            region_name,
            keywords: keywords.into_iter().collect(),
            policy,
            min_size: options.min_size,
        },
        duplicates_removed,
        short_by,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plain(body: &str, options: LexiconOptions) -> Result<LoadedLexicon, LexiconError> {
        parse_lexicon(body, LexiconFormat::Plain, "sg", options)
    }

    fn lenient() -> LexiconOptions {
        LexiconOptions {
            min_size: 1,
            allow_short: false,
        }
    }

    #[test]
    fn case_fold_collapses_duplicates() {
        let loaded = plain("Merlion\nmerlion\nOrchard Road\n", lenient()).unwrap();
        assert_eq!(loaded.lexicon.keywords(), ["merlion", "orchard road"]);
        assert_eq!(loaded.duplicates_removed, 1);
    }

    #[test]
    fn comments_and_whitespace() {
        let loaded = plain("# Singapore\n\n  National   Day\tParade \n", lenient()).unwrap();
        assert_eq!(loaded.lexicon.keywords(), ["national day parade"]);
    }

    fn numbered(n: usize) -> String {
        (0..n).map(|i| format!("keyword {i}\n")).collect()
    }

    #[test]
    fn minimum_size_boundary() {
        let ok = plain(&numbered(150), LexiconOptions::default()).unwrap();
        assert_eq!(ok.lexicon.len(), 150);
        assert_eq!(ok.short_by, None);

        let err = plain(&numbered(149), LexiconOptions::default()).unwrap_err();
        match err {
            LexiconError::TooSmall { found, required, .. } => assert_eq!((found, required), (149, 150)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("1 short"));

        let short = plain(
            &numbered(149),
            LexiconOptions {
                allow_short: true,
                ..LexiconOptions::default()
            },
        )
        .unwrap();
        assert_eq!(short.short_by, Some(1));
    }

    #[test]
    fn empty_is_fatal() {
        assert!(matches!(plain("", lenient()), Err(LexiconError::Empty { .. })));
        assert!(matches!(plain("# only a comment\n", lenient()), Err(LexiconError::Empty { .. })));
    }

    #[test]
    fn json_format() {
        let body = r#"{"region_id":"sg","region_name":"Singapore","keywords":["Merlion","HDB flats"],"case_insensitive":false,"word_boundary":true}"#;
        let loaded = parse_lexicon(body, LexiconFormat::Json, "sg", lenient()).unwrap();
        assert_eq!(loaded.lexicon.keywords(), ["HDB flats", "Merlion"]);
        assert!(!loaded.lexicon.policy.case_insensitive);
        assert_eq!(loaded.lexicon.region_name.as_deref(), Some("Singapore"));

        let wrong = parse_lexicon(body, LexiconFormat::Json, "ph", lenient());
        assert!(matches!(wrong, Err(LexiconError::RegionMismatch { .. })));
        let blank = parse_lexicon(r#"{"keywords":["a"," "]}"#, LexiconFormat::Json, "sg", lenient());
        assert!(matches!(blank, Err(LexiconError::BlankKeyword { index: 1 })));
        let unknown = parse_lexicon(r#"{"keywords":["a"],"kw":1}"#, LexiconFormat::Json, "sg", lenient());
        assert!(matches!(unknown, Err(LexiconError::Json(_))));
    }

    #[test]
    fn reload_of_normalized_form_is_identical() {
        let loaded = plain("Merlion\n  Orchard   ROAD\nJeepney\n", lenient()).unwrap().lexicon;
        let again = parse_lexicon(&loaded.to_json(), LexiconFormat::Json, "sg", lenient())
            .unwrap()
            .lexicon;
        assert_eq!(loaded, again);
    }

    #[test]
    fn shipped_starter_lists_load_with_override() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/lexicons");
        let opts = LexiconOptions {
            allow_short: true,
            ..LexiconOptions::default()
        };
        for region in ["sg", "ph", "us"] {
            let loaded = load_lexicon(&dir.join(format!("{region}.txt")), region, opts).unwrap();
            assert!(loaded.short_by.is_some(), "starter lists are intentionally below 150");
            assert!(load_lexicon(&dir.join(format!("{region}.txt")), region, LexiconOptions::default()).is_err());
        }
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(raw in "\\PC{0,40}", ci in any::<bool>()) {
            let policy = MatchPolicy { case_insensitive: ci, word_boundary: true };
            let once = normalize_keyword(&raw, policy);
            prop_assert_eq!(normalize_keyword(&once, policy), once);
        }
    }
}

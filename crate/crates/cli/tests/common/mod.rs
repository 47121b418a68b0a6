//! Fixture files and process helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

/// Keywords of the fixture lexicon; every one is a plain phrase.
pub const SG_KEYWORDS: [&str; 12] = [
    "HDB flats",
    "Bukit Merah",
    "Jurong West",
    "Orchard Road",
    "Marina Bay Sands",
    "Merlion",
    "Sentosa Island",
    "CPF",
    "Temasek",
    "Lee Kuan Yew",
    "Changi Airport",
    "Hawker centre",
];

pub fn craft() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_craft"));
    cmd.env_remove("RUST_LOG").env_remove("OPENAI_API_KEY");
    cmd
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("craft binary runs")
}

/// The single JSON line a failing command writes last on stderr.
pub fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON error in {stderr}"));
    serde_json::from_str(line).expect("error line is JSON")
}

pub fn write_lines(path: &Path, lines: impl IntoIterator<Item = Value>) {
    let body: String = lines.into_iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(path, body).unwrap();
}

/// Paths of a complete fixture workspace for the four pipeline commands.
pub struct Workspace {
    pub root: PathBuf,
    pub corpus: PathBuf,
    pub lexicon: PathBuf,
    pub config: PathBuf,
    pub mix_spec: PathBuf,
    pub general_pool: PathBuf,
    pub mcq: PathBuf,
    pub eval_endpoint: PathBuf,
    /// Ids of the corpus documents that mention two or more keywords.
    pub keyword_docs: Vec<String>,
}

impl Workspace {
    pub fn out(&self, rel: &str) -> PathBuf {
        self.root.join("out").join(rel)
    }
}

/// Writes a corpus where every even document names two distinct keywords and
/// every odd one names a single keyword, plus configs pointing at mock
/// endpoints.
pub fn workspace(root: &Path, n_docs: usize) -> Workspace {
    let corpus = root.join("corpus.jsonl");
    let mut keyword_docs = Vec::new();
    let docs = (0..n_docs).map(|i| {
        let id = format!("doc-{i:03}");
        let a = SG_KEYWORDS[i % SG_KEYWORDS.len()];
        let b = SG_KEYWORDS[(i + 5) % SG_KEYWORDS.len()];
        let text = if i % 2 == 0 {
            keyword_docs.push(id.clone());
            format!("Entry {i}. A walk from {a} towards {b} takes about {} minutes on a dry afternoon.", 10 + i)
        } else {
            format!("Entry {i}. Notes on gardening that mention {a} only once, then move on to soil.")
        };
        json!({"id": id, "text": text, "meta": {"source": "fixture"}})
    });
    write_lines(&corpus, docs.collect::<Vec<_>>());

    let lexicon = root.join("sg.txt");
    std::fs::write(&lexicon, format!("# fixture lexicon\n{}\n", SG_KEYWORDS.join("\n"))).unwrap();

    let config = root.join("craft.toml");
    std::fs::write(
        &config,
        r#"output_root = "out"
log_level = "warn"

[extract]
sources = [{ path = "corpus.jsonl" }]
lexicons = [{ path = "sg.txt", region = "sg" }]
allow_short_lexicons = true
workers = 2

[generate]
candidates = ["out/extract/sg.candidates.jsonl"]
output = "instructions.jsonl"
mode = "both"

[generate.region_names]
sg = "Singapore"

[endpoints.question]
base_url = "mock://fixture"
model = "mock-zephyr"
max_concurrent_requests = 4

[endpoints.context_free_answer]
base_url = "mock://fixture"
model = "mock-turbo"
"#,
    )
    .unwrap();

    let general_pool = root.join("general.jsonl");
    write_lines(
        &general_pool,
        (0..60).map(|i| {
            json!({"conversations": [
                {"from": "human", "value": format!("General request number {i}?")},
                {"from": "gpt", "value": format!("A general purpose reply, variant {i}.")}
            ]})
        }),
    );
    let mix_spec = root.join("mix.toml");
    std::fs::write(
        &mix_spec,
        r#"general_source = "general.jsonl"
cultural_source = "out/instructions.jsonl"
general_count = 50
cultural_count = 20
seed = 7
output = "out/mix.jsonl"
"#,
    )
    .unwrap();

    let mcq = root.join("mcq.jsonl");
    write_lines(
        &mcq,
        (0..20).map(|i| {
            json!({
                "id": format!("mcq-{i}"),
                "question": format!("Which of these is fixture fact {i}?"),
                "options": ["Merlion", "Durian", "Changi", "Sentosa"],
                "answer_index": i % 4
            })
        }),
    );
    let eval_endpoint = root.join("eval-endpoint.toml");
    std::fs::write(&eval_endpoint, "base_url = \"mock://eval\"\nmodel = \"mock-eval\"\n").unwrap();

    Workspace {
        root: root.to_path_buf(),
        corpus,
        lexicon,
        config,
        mix_spec,
        general_pool,
        mcq,
        eval_endpoint,
        keyword_docs,
    }
}

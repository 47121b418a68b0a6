use std::sync::{Arc, Mutex};

use craft_core::corpus_io::JsonlWriter;
use craft_core::eval::item::{load_dataset, EvalItem, IndexedJsonl, LetteredJsonl};
use craft_core::eval::template::{option_letter, TemplatePack};
use craft_core::eval::{evaluate, read_response_log, recount, summarize, EvalError, EvalReport, ResponseLogEntry};
use craft_core::gen::endpoint::{ChatMessage, EndpointConfig, ManagedEndpoint};
use craft_core::gen::mock::{MockEndpoint, MockReply};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Items whose stem starts with "[item N]" so a mock can look up the gold answer.
fn items(n: usize, n_options: usize, seed: u64) -> Vec<EvalItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| EvalItem {
            item_id: format!("item-{i}"),
            question: format!("[item {i}] which of these is associated with entry {i}?"),
            options: (0..n_options).map(|k| format!("choice {i}-{k}")).collect(),
            gold_index: rng.random_range(0..n_options),
        })
        .collect()
}

fn item_index(prompt: &str) -> usize {
    let start = prompt.find("[item ").unwrap() + 6;
    let end = start + prompt[start..].find(']').unwrap();
    prompt[start..end].parse().unwrap()
}

fn prompt_of(messages: &[ChatMessage]) -> &str {
    &messages.last().unwrap().content
}

fn managed(mock: MockEndpoint) -> ManagedEndpoint {
    let config = EndpointConfig {
        base_url: "mock://".into(),
        max_concurrent_requests: 8,
        requests_per_minute: 1_000_000,
        ..EndpointConfig::default()
    };
    ManagedEndpoint::new(Arc::new(mock), &config).unwrap()
}

async fn run(items: &[EvalItem], mock: MockEndpoint) -> (EvalReport, Vec<ResponseLogEntry>) {
    let endpoint = managed(mock);
    let mut log = Vec::new();
    let report = evaluate("fixture", items, &endpoint, &TemplatePack::builtin(), |e| {
        log.push(e.clone());
        Ok(())
    })
    .await
    .unwrap();
    (report, log)
}

#[tokio::test]
async fn gold_oracle_scores_perfectly() {
    let data = items(200, 4, 1);
    let gold: Vec<char> = data.iter().map(|i| option_letter(i.gold_index)).collect();
    let mock = MockEndpoint::new("oracle", move |m| {
        MockReply::Content(format!("The answer is {}.", gold[item_index(prompt_of(m))]))
    });
    let (report, log) = run(&data, mock).await;
    assert_eq!(report.per_template_accuracy, vec![1.0; 5]);
    assert_eq!(report.mean_accuracy, 1.0);
    assert_eq!(report.stddev, 0.0);
    assert_eq!(report.items_unparsed, 0);
    assert!(report.valid);
    assert_eq!(log.len(), 200 * 5);
}

#[tokio::test]
async fn random_letters_score_near_chance() {
    let data = items(1000, 4, 2);
    let rng = Mutex::new(ChaCha8Rng::seed_from_u64(99));
    let mock = MockEndpoint::new("coin", move |_| {
        let k = rng.lock().unwrap().random_range(0..4);
        MockReply::Content(option_letter(k).to_string())
    });
    let (report, log) = run(&data, mock).await;
    assert!((report.mean_accuracy - 0.25).abs() <= 0.04, "mean {}", report.mean_accuracy);
    assert_eq!(log.len(), 5000);
}

#[tokio::test]
async fn template_sensitive_mock_is_accounted_exactly() {
    let data = items(50, 4, 3);
    let gold: Vec<usize> = data.iter().map(|i| i.gold_index).collect();
    let third_template = TemplatePack::builtin().templates()[2].body.lines().next().unwrap().to_string();
    let mock = MockEndpoint::new("picky", move |m| {
        let prompt = prompt_of(m);
        let g = gold[item_index(prompt)];
        let pick = if prompt.starts_with(&third_template) { g } else { (g + 1) % 4 };
        MockReply::Content(format!("{})", option_letter(pick)))
    });
    let (report, log) = run(&data, mock).await;
    assert_eq!(report.per_template_accuracy, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    assert!((report.mean_accuracy - 0.2).abs() < 1e-12);
    let (acc, mean, _) = summarize(&recount(&log, 5), data.len());
    assert_eq!(acc, report.per_template_accuracy);
    assert_eq!(mean, report.mean_accuracy);
}

#[tokio::test]
async fn unparsed_responses_count_as_wrong() {
    let data = items(10, 3, 4);
    let mock = MockEndpoint::new("shrug", |m| {
        if item_index(prompt_of(m)) < 4 {
            MockReply::Content("No idea, sorry.".into())
        } else {
            MockReply::Content("choice x".into())
        }
    });
    let (report, log) = run(&data, mock).await;
    assert_eq!(report.items_unparsed, 50);
    assert_eq!(report.mean_accuracy, 0.0);
    assert!(log.iter().all(|e| e.parsed_index.is_none() && !e.correct));
}

#[tokio::test]
async fn persisted_log_recounts_to_the_report() {
    let data = items(120, 5, 5);
    let rng = Mutex::new(ChaCha8Rng::seed_from_u64(7));
    let mock = MockEndpoint::new("noisy", move |_| {
        let mut rng = rng.lock().unwrap();
        let reply = match rng.random_range(0..3) {
            0 => "hmm".to_string(),
            1 => format!("Answer: {}", option_letter(rng.random_range(0..5))),
            _ => format!("({})", option_letter(rng.random_range(0..5)).to_ascii_lowercase()),
        };
        MockReply::Content(reply)
    });
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("responses.jsonl");
    let mut writer = JsonlWriter::create(&log_path).unwrap();
    let report = evaluate("noisy", &data, &managed(mock), &TemplatePack::builtin(), |e| writer.write(e))
        .await
        .unwrap();
    writer.finish().unwrap();
    let persisted = read_response_log(&log_path).unwrap();
    assert_eq!(persisted.len(), 120 * 5);
    let (acc, mean, sd) = summarize(&recount(&persisted, 5), data.len());
    assert_eq!(acc, report.per_template_accuracy);
    assert_eq!((mean, sd), (report.mean_accuracy, report.stddev));
    assert_eq!(persisted.iter().filter(|e| e.parsed_index.is_none()).count(), report.items_unparsed);
}

#[tokio::test]
async fn endpoint_failure_yields_invalid_partial_report() {
    let data = items(20, 4, 6);
    let mock = MockEndpoint::new("flaky", |_| MockReply::Status(400))
        .with_script(std::iter::repeat_n(MockReply::Content("A".into()), 30));
    let (report, log) = run(&data, mock).await;
    assert!(!report.valid);
    assert!(report.error.is_some());
    assert_eq!(log.len(), 30);
    assert_eq!(report.responses_logged, 30);
}

#[tokio::test]
async fn empty_dataset_is_rejected() {
    let endpoint = managed(MockEndpoint::fixed("m", "q", "a"));
    let err = evaluate("empty", &[], &endpoint, &TemplatePack::builtin(), |_| Ok(())).await.unwrap_err();
    assert!(matches!(err, EvalError::EmptyDataset));
}

#[test]
fn datasets_load_with_either_adapter() {
    let dir = tempfile::tempdir().unwrap();
    let indexed = dir.path().join("sg.jsonl");
    std::fs::write(
        &indexed,
        [
            json!({"id": "sg-1", "question": "Where is the Merlion?", "options": ["Marina Bay", "Sentosa"], "answer_index": 0}),
            json!({"question": "What is CPF?", "options": ["A pension scheme", "A bank", "A hawker centre"], "answer_index": 0}),
        ]
        .iter()
        .map(|v| format!("{v}\n"))
        .collect::<String>(),
    )
    .unwrap();
    let loaded = load_dataset(&indexed, &IndexedJsonl).unwrap();
    assert_eq!(loaded.len(), 2);
    assert_eq!(loaded[1].item_id, "line-2");

    let lettered = dir.path().join("letters.jsonl");
    std::fs::write(&lettered, json!({"question": "Q", "choices": ["x", "y"], "answer": "B"}).to_string()).unwrap();
    assert_eq!(load_dataset(&lettered, &LetteredJsonl).unwrap()[0].gold_index, 1);

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, format!("{}\n{}\n", json!({"question": "Q", "options": ["x", "y"], "answer_index": 1}), json!({"question": "Q", "options": ["x", "x"], "answer_index": 0}))).unwrap();
    match load_dataset(&bad, &IndexedJsonl) {
        Err(EvalError::Dataset { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a dataset error, got {other:?}"),
    }
}

#[test]
fn template_dir_overrides_builtin_pack() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("b.txt"), "Second: {question}\n{options}").unwrap();
    std::fs::write(dir.path().join("a.txt"), "First: {question}\n{options}\nLetters {letters}").unwrap();
    std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
    let pack = TemplatePack::load_dir(dir.path()).unwrap();
    let names: Vec<_> = pack.templates().iter().map(|t| t.name.as_str()).collect();
    assert_eq!(names, vec!["a", "b"]);
    std::fs::write(dir.path().join("c.txt"), "no slots").unwrap();
    assert!(matches!(TemplatePack::load_dir(dir.path()), Err(EvalError::Templates { .. })));
}

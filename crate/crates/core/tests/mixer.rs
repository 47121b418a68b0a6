use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use craft_core::corpus_io::{read_records, write_records};
use craft_core::gen::record::{record_id, AnswerMode, GeneratorInfo, InstructionRecord, SourceRef};
use craft_core::mixer::{
    convert_format, file_digest, import_record, manifest_path, mix_datasets, ratio_sweep, sample_indices,
    ExportFormat, MixError, MixManifest, MixSpec, Origin, PoolRecord,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn instruction(i: usize, mode: AnswerMode) -> InstructionRecord {
    let source = SourceRef {
        doc_id: format!("corpus/part-{}.jsonl#{i}", i % 4),
        chunk_index: (i % 5) as u32,
    };
    InstructionRecord {
        record_id: record_id("sg", &source, mode),
        region_id: "sg".into(),
        question: format!("What happens at the Merlion on day {i}?"),
        answer: format!("On day {i} the Merlion spouts water into Marina Bay as usual."),
        answer_mode: mode,
        source,
        generator: GeneratorInfo {
            question_model: "zephyr-7b-beta".into(),
            answer_model: "zephyr-7b-beta".into(),
        },
        created_at: "2024-05-01T12:00:00Z".into(),
    }
}

fn general(i: usize) -> Value {
    json!({
        "id": format!("g-{i:03}"),
        "conversations": [
            {"from": "human", "value": format!("General question {i}?")},
            {"from": "gpt", "value": format!("General answer {i}.")}
        ],
        "source": "general-fixture"
    })
}

struct Pools {
    _dir: tempfile::TempDir,
    root: PathBuf,
    general: PathBuf,
    cultural: PathBuf,
}

fn pools(general_n: usize, cultural_n: usize) -> Pools {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let general_path = root.join("general.jsonl");
    let cultural_path = root.join("cultural.jsonl.zst");
    write_records(&general_path, (0..general_n).map(general)).unwrap();
    write_records(&cultural_path, (0..cultural_n).map(|i| instruction(i, AnswerMode::ContextDependent))).unwrap();
    Pools {
        _dir: dir,
        root,
        general: general_path,
        cultural: cultural_path,
    }
}

fn spec(p: &Pools, general_count: usize, cultural_count: usize, seed: u64, out: &str) -> MixSpec {
    MixSpec {
        general_source: p.general.clone(),
        cultural_source: p.cultural.clone(),
        general_count,
        cultural_count,
        seed,
        output: p.root.join(out),
        ..MixSpec::default()
    }
}

fn read_output(path: &Path) -> Vec<Value> {
    read_records::<Value>(path).unwrap().map(|r| r.unwrap().1).collect()
}

fn identity(v: &Value) -> String {
    v.get("id")
        .or_else(|| v["meta"].get("record_id"))
        .and_then(Value::as_str)
        .unwrap()
        .to_string()
}

fn ids_by_origin(rows: &[Value]) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in rows {
        out.entry(r["meta"]["origin"].as_str().unwrap().to_string()).or_default().insert(identity(r));
    }
    out
}

#[test]
fn reruns_are_byte_identical() {
    let p = pools(100, 100);
    let a = mix_datasets(&spec(&p, 50, 20, 7, "a.jsonl")).unwrap();
    let b = mix_datasets(&spec(&p, 50, 20, 7, "b.jsonl")).unwrap();
    assert_eq!(std::fs::read(&a.output_path).unwrap(), std::fs::read(&b.output_path).unwrap());
    assert_eq!(a.content_digest, b.content_digest);
    assert_eq!(a.content_digest, file_digest(&a.output_path).unwrap());
    let c = mix_datasets(&spec(&p, 50, 20, 8, "c.jsonl")).unwrap();
    assert_ne!(a.content_digest, c.content_digest);
}

#[test]
fn composition_matches_counts() {
    let p = pools(100, 100);
    let m = mix_datasets(&spec(&p, 50, 20, 7, "mix.jsonl")).unwrap();
    assert_eq!((m.actual_general, m.actual_cultural), (50, 20));
    let rows = read_output(&m.output_path);
    assert_eq!(rows.len(), 70);
    let by_origin = ids_by_origin(&rows);
    assert_eq!(by_origin["general"].len(), 50);
    assert_eq!(by_origin["cultural"].len(), 20);
    // every row is a two-turn chat record
    for r in &rows {
        assert_eq!(r["conversations"].as_array().unwrap().len(), 2);
    }
    let on_disk: MixManifest = serde_json::from_slice(&std::fs::read(manifest_path(&m.output_path)).unwrap()).unwrap();
    assert_eq!(on_disk, m);
}

#[test]
fn shuffle_interleaves_and_can_be_disabled() {
    let p = pools(100, 100);
    let shuffled = read_output(&mix_datasets(&spec(&p, 50, 20, 7, "s.jsonl")).unwrap().output_path);
    let first_origins: BTreeSet<_> = shuffled[..20].iter().map(|r| r["meta"]["origin"].to_string()).collect();
    assert_eq!(first_origins.len(), 2);
    let mut plain = spec(&p, 50, 20, 7, "p.jsonl");
    plain.shuffle_output = false;
    let rows = read_output(&mix_datasets(&plain).unwrap().output_path);
    assert!(rows[..50].iter().all(|r| r["meta"]["origin"] == "general"));
    assert!(rows[50..].iter().all(|r| r["meta"]["origin"] == "cultural"));
}

#[test]
fn zero_counts_give_empty_output() {
    let p = pools(10, 10);
    let m = mix_datasets(&spec(&p, 0, 0, 1, "empty.jsonl")).unwrap();
    assert_eq!((m.actual_general, m.actual_cultural), (0, 0));
    assert_eq!(std::fs::read(&m.output_path).unwrap().len(), 0);
}

#[test]
fn short_pools_fail_unless_allowed() {
    let p = pools(30, 10);
    match mix_datasets(&spec(&p, 20, 15, 1, "short.jsonl")) {
        Err(e @ MixError::Short { .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("cultural") && msg.contains("5 short"), "{msg}");
        }
        other => panic!("expected a shortfall, got {other:?}"),
    }
    let mut allowed = spec(&p, 20, 15, 1, "short.jsonl");
    allowed.allow_short = true;
    let m = mix_datasets(&allowed).unwrap();
    assert_eq!((m.actual_general, m.actual_cultural), (20, 10));
}

#[test]
fn schema_errors_name_the_line() {
    let p = pools(5, 5);
    let bad = p.root.join("bad.jsonl");
    let mut body = String::new();
    for i in 0..3 {
        body.push_str(&serde_json::to_string(&general(i)).unwrap());
        body.push('\n');
    }
    body.push_str("{\"question\": \"only half a record\"}\n");
    std::fs::write(&bad, body).unwrap();
    let mut s = spec(&p, 1, 1, 1, "x.jsonl");
    s.general_source = bad.clone();
    match mix_datasets(&s) {
        Err(MixError::Schema { path, line, .. }) => {
            assert_eq!(path, bad);
            assert_eq!(line, 4);
        }
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn sweep_is_nested_over_a_shared_general_sample() {
    let p = pools(100, 100);
    let manifests = ratio_sweep(&spec(&p, 50, 0, 11, "sweep.jsonl"), 25, 100).unwrap();
    let counts: Vec<_> = manifests.iter().map(|m| m.actual_cultural).collect();
    assert_eq!(counts, vec![0, 25, 50, 75, 100]);
    let sets: Vec<_> = manifests.iter().map(|m| ids_by_origin(&read_output(&m.output_path))).collect();
    let general = &sets[0]["general"];
    assert_eq!(general.len(), 50);
    for (i, s) in sets.iter().enumerate() {
        assert_eq!(&s["general"], general, "general sample differs at point {i}");
        assert_eq!(manifests[i].spec.cultural_count, counts[i]);
        assert!(manifests[i].output_path.exists());
    }
    let empty = BTreeSet::new();
    for pair in sets.windows(2) {
        let smaller = pair[0].get("cultural").unwrap_or(&empty);
        let larger = &pair[1]["cultural"];
        assert!(smaller.is_subset(larger));
        assert_eq!(larger.len() - smaller.len(), 25);
    }
    // the sweep point equals a standalone mix with the same count and seed
    let standalone = mix_datasets(&spec(&p, 50, 50, 11, "alone.jsonl")).unwrap();
    assert_eq!(standalone.content_digest, manifests[2].content_digest);
}

#[test]
fn sweep_rejects_zero_step_and_oversized_max() {
    let p = pools(10, 10);
    assert!(matches!(ratio_sweep(&spec(&p, 5, 0, 1, "s.jsonl"), 0, 5), Err(MixError::Spec(_))));
    assert!(matches!(ratio_sweep(&spec(&p, 5, 0, 1, "s.jsonl"), 2, 11), Err(MixError::Short { .. })));
}

#[test]
fn inclusion_is_uniform() {
    let mut hits = [0u32; 100];
    for seed in 0..1000 {
        for i in sample_indices(100, 10, seed, 1) {
            hits[i] += 1;
        }
    }
    for (item, &h) in hits.iter().enumerate() {
        let freq = h as f64 / 1000.0;
        assert!((0.07..=0.13).contains(&freq), "item {item} included {freq:.3} of the time");
    }
}

#[test]
fn exports_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let alphabet: Vec<char> = "abcXYZ ?!.\n\t\"\\{}é漢😀".chars().collect();
    let text = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.random_range(0..40);
        (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
    };
    let records: Vec<InstructionRecord> = (0..1000)
        .map(|i| {
            let mut r = instruction(i, if i % 2 == 0 { AnswerMode::ContextDependent } else { AnswerMode::ContextFree });
            r.question = text(&mut rng);
            r.answer = text(&mut rng);
            r
        })
        .collect();
    let pool: Vec<PoolRecord> = records.iter().cloned().map(PoolRecord::Instruction).collect();
    for format in [ExportFormat::ChatJsonl, ExportFormat::PromptCompletion] {
        let exported = convert_format(&pool, format).unwrap();
        assert_eq!(exported.len(), 1000);
        for (orig, value) in records.iter().zip(&exported) {
            // through text and back, as a trainer would see it
            let reparsed: Value = serde_json::from_str(&serde_json::to_string(value).unwrap()).unwrap();
            let back = import_record(&reparsed).unwrap();
            assert_eq!(back.question, orig.question);
            assert_eq!(back.answer, orig.answer);
            assert_eq!(back.instruction().as_ref(), Some(orig));
        }
    }
}

#[test]
fn general_conversations_pass_through_unchanged() {
    let record = json!({
        "conversations": [
            {"from": "system", "value": "You are helpful."},
            {"from": "human", "value": "Name a prime."},
            {"from": "gpt", "value": "Seven."}
        ],
        "source": "hermes-like",
        "id": "x1"
    });
    let pool = vec![PoolRecord::from_value(record.clone()).unwrap()];
    assert_eq!(convert_format(&pool, ExportFormat::ChatJsonl).unwrap(), vec![record.clone()]);
    let back = import_record(&record).unwrap();
    assert_eq!((back.question.as_str(), back.answer.as_str()), ("Name a prime.", "Seven."));
    assert!(back.instruction().is_none());
}

#[test]
fn prompt_completion_mixes() {
    let p = pools(20, 20);
    let mut s = spec(&p, 5, 5, 3, "pc.jsonl");
    s.format = ExportFormat::PromptCompletion;
    let m = mix_datasets(&s).unwrap();
    let rows = read_output(&m.output_path);
    assert_eq!(rows.len(), 10);
    for r in &rows {
        assert!(r["prompt"].is_string() && r["completion"].is_string());
        let origin: Origin = serde_json::from_value(r["meta"]["origin"].clone()).unwrap();
        if origin == Origin::General {
            assert_eq!(r["meta"]["source"], "general-fixture");
        }
    }
}

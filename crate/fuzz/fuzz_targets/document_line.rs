#![no_main]

use craft_core::corpus_io::parse_document;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|line: &[u8]| {
    if let Ok(Some(doc)) = parse_document(line, "fuzz.jsonl", 7, "text") {
        assert!(!doc.doc_id.is_empty());
        let value: serde_json::Value = serde_json::from_slice(line).unwrap();
        assert_eq!(value["text"].as_str(), Some(doc.text.as_str()));
    }
});

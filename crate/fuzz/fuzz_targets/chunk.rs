#![no_main]

use craft_core::chunker::{chunk_document, count_tokens, TokenCounter};
use craft_core::corpus_io::Document;
use libfuzzer_sys::fuzz_target;

// First byte picks the window, the rest is the document.
fuzz_target!(|data: &[u8]| {
    let Some((&window, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let max = 1 + window as usize % 64;
    let doc = Document {
        doc_id: "fuzz#0".into(),
        text: text.into(),
        meta: Default::default(),
    };
    let counter = TokenCounter::default();
    let chunks = chunk_document(&doc, max, &counter).unwrap();
    let mut cursor = 0;
    let mut total = 0;
    for (i, c) in chunks.iter().enumerate() {
        assert_eq!(c.chunk_index as usize, i);
        assert!(c.token_count >= 1 && c.token_count <= max);
        assert_eq!(count_tokens(&c.text, &counter), c.token_count);
        assert_eq!(&text[c.byte_span.start..c.byte_span.end], c.text);
        assert!(text[cursor..c.byte_span.start].trim().is_empty());
        cursor = c.byte_span.end;
        total += c.token_count;
    }
    assert!(text[cursor..].trim().is_empty());
    assert_eq!(total, count_tokens(text, &counter));
});

#![no_main]

use craft_core::lexicon::{parse_lexicon, LexiconFormat, LexiconOptions};
use craft_core::matcher::{build_matcher, find_hits};
use libfuzzer_sys::fuzz_target;

const KEYWORDS: &str = "Merlion\nMerlion Park\nPark\nBukit Merah\nLee Kuan Yew\nKuan\nCPF\ncafé\nİstanbul\nß";

fuzz_target!(|text: &str| {
    let options = LexiconOptions { allow_short: true, ..Default::default() };
    let lex = parse_lexicon(KEYWORDS, LexiconFormat::Plain, "sg", options).unwrap().lexicon;
    let matcher = build_matcher(&lex).unwrap();
    let hits = find_hits(text, &matcher);
    assert!(hits.windows(2).all(|w| w[0] <= w[1]));
    for h in &hits {
        assert!(text.is_char_boundary(h.byte_offset));
        assert!(lex.keywords().contains(&h.keyword));
        let first = text[h.byte_offset..].chars().next().unwrap();
        assert_eq!(first.to_lowercase().next(), h.keyword.chars().next());
        if let Some(before) = text[..h.byte_offset].chars().next_back() {
            assert!(!(before.is_alphanumeric() && first.is_alphanumeric()));
        }
    }
});

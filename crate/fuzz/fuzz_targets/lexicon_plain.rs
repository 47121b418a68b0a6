#![no_main]

use craft_core::lexicon::{normalize_keyword, parse_lexicon, LexiconFormat, LexiconOptions};
use craft_core::matcher::build_matcher;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|body: &str| {
    let options = LexiconOptions { allow_short: true, ..Default::default() };
    if let Ok(loaded) = parse_lexicon(body, LexiconFormat::Plain, "sg", options) {
        let lex = &loaded.lexicon;
        assert!(!lex.is_empty());
        assert!(lex.keywords().windows(2).all(|w| w[0] < w[1]));
        for k in lex.keywords() {
            assert!(!k.is_empty());
            assert_eq!(&normalize_keyword(k, lex.policy), k);
        }
        build_matcher(lex).unwrap();
    }
});

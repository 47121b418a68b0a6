#![no_main]

use craft_core::lexicon::{normalize_keyword, parse_lexicon, LexiconFormat, LexiconOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|body: &str| {
    let options = LexiconOptions { allow_short: true, ..Default::default() };
    if let Ok(loaded) = parse_lexicon(body, LexiconFormat::Json, "sg", options) {
        let lex = &loaded.lexicon;
        assert_eq!(lex.region_id, "sg");
        for k in lex.keywords() {
            assert_eq!(&normalize_keyword(k, lex.policy), k);
        }
        // the canonical JSON form loads back to the same list
        let again = parse_lexicon(&lex.to_json(), LexiconFormat::Json, "sg", options).unwrap();
        assert_eq!(again.lexicon.keywords(), lex.keywords());
    }
});

#![no_main]

use std::path::Path;

use craft_core::config::{parse_config, Strictness};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let base = Path::new("/nonexistent/fuzz");
    let strict = parse_config(text, Path::new("fuzz.toml"), base, &[], Strictness::Strict);
    let lax = parse_config(text, Path::new("fuzz.toml"), base, &[], Strictness::Lax);
    if let Ok(loaded) = &strict {
        // anything strict accepts, lax accepts identically and without warnings
        let lax = lax.as_ref().unwrap();
        assert_eq!(lax.config, loaded.config);
        assert!(lax.warnings.is_empty());
        loaded.config.validate().unwrap();
        let _ = loaded.config.digest();
    }
});

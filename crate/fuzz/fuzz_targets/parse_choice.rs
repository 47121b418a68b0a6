#![no_main]

use craft_core::eval::choice::parse_choice;
use libfuzzer_sys::fuzz_target;

// First byte picks the option count, the rest is the response.
fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    let Ok(response) = std::str::from_utf8(rest) else { return };
    let options: Vec<String> = ["Merlion", "Durian", "Chilli crab", "Kaya toast", "Satay", "Laksa"]
        .iter()
        .take(2 + n as usize % 5)
        .map(|s| s.to_string())
        .collect();
    if let Some(i) = parse_choice(response, &options) {
        assert!(i < options.len());
    }
});

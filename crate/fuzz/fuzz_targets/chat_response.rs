#![no_main]

use craft_core::gen::endpoint::parse_chat_response;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|body: &[u8]| {
    if let Ok(content) = parse_chat_response(body) {
        let value: serde_json::Value = serde_json::from_slice(body).unwrap();
        assert_eq!(value["choices"][0]["message"]["content"].as_str(), Some(content.as_str()));
    }
});

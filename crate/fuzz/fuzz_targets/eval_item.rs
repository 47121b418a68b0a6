#![no_main]

use craft_core::eval::item::{parse_item, IndexedJsonl, ItemAdapter, LetteredJsonl};
use craft_core::eval::template::{render_eval_prompt, TemplatePack};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|line: &[u8]| {
    let adapters: [&dyn ItemAdapter; 2] = [&IndexedJsonl, &LetteredJsonl];
    let pack = TemplatePack::builtin();
    for adapter in adapters {
        if let Ok(item) = parse_item(line, 3, adapter) {
            assert!(item.gold_index < item.options.len());
            item.validate().unwrap();
            for t in 0..pack.len() {
                let prompt = render_eval_prompt(&item, &pack, t).unwrap();
                assert!(prompt.contains(&item.question));
            }
        }
    }
});

#![no_main]

use craft_core::mixer::{import_record, ExportFormat, Origin, PoolRecord};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|line: &[u8]| {
    let Ok(value) = serde_json::from_slice::<serde_json::Value>(line) else { return };
    let Ok(record) = PoolRecord::from_value(value.clone()) else { return };
    for format in [ExportFormat::ChatJsonl, ExportFormat::PromptCompletion] {
        let Ok(out) = record.export(format, Some(Origin::Cultural)) else { continue };
        assert_eq!(out["meta"]["origin"], "cultural");
        match &record {
            PoolRecord::Instruction(rec) => {
                let back = import_record(&out).unwrap().instruction().unwrap();
                assert_eq!(&back, rec);
            }
            PoolRecord::Chat(_) if format == ExportFormat::ChatJsonl => {
                assert_eq!(out["conversations"], value["conversations"]);
            }
            PoolRecord::Chat(_) => {
                import_record(&out).unwrap();
            }
        }
    }
});

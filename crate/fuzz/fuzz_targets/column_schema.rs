#![no_main]

use libfuzzer_sys::fuzz_target;
use stratakit::ColumnSchema;

fuzz_target!(|data: &[u8]| {
    let Ok(schema) = serde_json::from_slice::<ColumnSchema>(data) else { return };
    let text = serde_json::to_string(&schema).unwrap();
    let back: ColumnSchema = serde_json::from_str(&text).unwrap();
    assert_eq!(back, schema);
});

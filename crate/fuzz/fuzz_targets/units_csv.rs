#![no_main]

use libfuzzer_sys::fuzz_target;
use stratakit::units::RawTable;
use stratakit::{ColumnSchema, UnitTable};

fuzz_target!(|data: &[u8]| {
    let Ok(raw) = RawTable::from_reader(data) else { return };
    for name in &raw.headers {
        let _ = raw.numeric(name);
        let _ = raw.numeric_or_missing(name);
        let _ = raw.binary(name);
        let _ = raw.propensities(name);
        let _ = raw.integers(name);
    }
    let schema = ColumnSchema {
        psi1: raw.headers.iter().take(2).cloned().collect(),
        cost: raw.headers.get(2).cloned(),
        y: raw.headers.get(3).cloned(),
        ..Default::default()
    };
    if let Ok(t) = UnitTable::from_raw(&raw, &schema) {
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let back = stratakit::units::read_units(out.as_slice(), &t.written_schema()).unwrap();
        assert_eq!(back.n(), t.n());
    }
});

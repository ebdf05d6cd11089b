#![no_main]

use libfuzzer_sys::fuzz_target;
use stratakit::DesignResult;

fuzz_target!(|data: &[u8]| {
    let Ok(d) = DesignResult::read_csv(data) else { return };
    let _ = d.validate();
    let mut out = Vec::new();
    d.write_csv(&mut out).unwrap();
    let back = DesignResult::read_csv(out.as_slice()).unwrap();
    assert_eq!(back, d);
});

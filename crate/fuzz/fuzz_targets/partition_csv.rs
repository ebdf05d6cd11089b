#![no_main]

use libfuzzer_sys::fuzz_target;
use stratakit::GroupPartition;

fuzz_target!(|data: &[u8]| {
    let Ok(p) = GroupPartition::read_csv(data) else { return };
    let all: Vec<usize> = p.groups.iter().flatten().copied().collect();
    let _ = p.validate(&all);
    let mut out = Vec::new();
    p.write_csv(&mut out).unwrap();
    let back = GroupPartition::read_csv(out.as_slice()).unwrap();
    assert_eq!(back.unit_count(), p.unit_count());
    assert_eq!(back.len(), p.len());
});

#![no_main]

use libfuzzer_sys::fuzz_target;
use stratakit::Propensity;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(p) = s.parse::<Propensity>() {
        assert!(p.num() >= 1 && p.num() <= p.den());
        let again: Propensity = p.to_string().parse().unwrap();
        assert_eq!(again, p);
    }
    if let Ok(x) = s.trim().parse::<f64>() {
        if let Ok(p) = Propensity::nearest(x, 64) {
            assert!(p.den() <= 64);
        }
    }
});

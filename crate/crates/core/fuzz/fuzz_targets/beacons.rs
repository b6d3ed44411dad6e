#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(b) = ssdrl::environment::parse_beacons(data) {
        assert!(!b.is_empty());
        assert!(b.iter().all(|(x, y)| x.is_finite() && y.is_finite()));
    }
});

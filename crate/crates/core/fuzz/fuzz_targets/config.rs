#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ssdrl::harness::ExperimentConfig::parse(text) {
            let again = ssdrl::harness::ExperimentConfig::parse(&cfg.to_text()).expect("re-parse of rendered config");
            assert_eq!(again.to_text(), cfg.to_text());
        }
    }
});

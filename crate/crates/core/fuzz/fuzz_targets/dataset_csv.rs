#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(samples) = ssdrl::environment::parse_dataset(data) {
        let mut buf = Vec::new();
        if ssdrl::environment::write_dataset(&mut buf, &samples).is_ok() {
            let again = ssdrl::environment::parse_dataset(&buf).expect("re-parse of written dataset");
            assert_eq!(again.len(), samples.len());
        }
    }
});

#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(h) = ssdrl::vae::VaeHeader::parse(text) {
            let again = ssdrl::vae::VaeHeader::parse(&h.encode()).expect("re-parse of encoded header");
            assert_eq!(again.encode(), h.encode());
        }
    }
});

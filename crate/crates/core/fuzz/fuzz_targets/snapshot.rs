#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(net) = ssdrl::nn::snapshot::decode(data) {
        let bytes = ssdrl::nn::snapshot::encode(&net);
        let again = ssdrl::nn::snapshot::decode(&bytes).expect("decode of encoded net");
        assert_eq!(ssdrl::nn::snapshot::encode(&again), bytes);
    }
});

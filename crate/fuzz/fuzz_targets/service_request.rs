#![no_main]

use libfuzzer_sys::fuzz_target;
use spectro_service::{InpaintRequest, SampleRequest};

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = serde_json::from_slice::<SampleRequest>(data) {
        let again: SampleRequest = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(again, r);
    }
    if let Ok(r) = serde_json::from_slice::<InpaintRequest>(data) {
        let again: InpaintRequest = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(again, r);
    }
});

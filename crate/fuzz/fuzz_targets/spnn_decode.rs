#![no_main]

use libfuzzer_sys::fuzz_target;
use spectro_core::nn::checkpoint::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = decode(data) {
        // Anything accepted re-encodes to the same bytes.
        assert_eq!(encode(&records).unwrap(), data);
    }
});

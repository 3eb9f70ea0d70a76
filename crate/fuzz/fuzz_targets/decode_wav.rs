#![no_main]

use libfuzzer_sys::fuzz_target;
use spectro_core::dsp::wav::{decode_wav, encode_wav};

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = decode_wav(data) {
        assert!(w.sample_rate > 0);
        assert!(w.samples.iter().all(|s| (-1.0..1.0).contains(s)));
        let again = decode_wav(&encode_wav(&w).unwrap()).unwrap();
        assert_eq!(again, w);
    }
});

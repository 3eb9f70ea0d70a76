#![no_main]

use libfuzzer_sys::fuzz_target;
use spectro_core::dataset::CodemapStore;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = CodemapStore::from_bytes(data.to_vec()) {
        let k = store.header().codebook_size;
        for r in store.iter() {
            assert!(r.codes.top.codes().iter().chain(r.codes.bottom.codes()).all(|&c| c < k));
        }
        assert!(store.get(store.len()).is_err());
    }
});

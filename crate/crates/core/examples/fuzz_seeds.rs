//! Regenerates the checked-in fuzz corpus seeds.
//!
//! Usage: `cargo run -p spectro-core --example fuzz_seeds -- fuzz/corpus`

use std::path::{Path, PathBuf};

use spectro_core::config::RunConfig;
use spectro_core::dataset::{CodemapRecord, CodemapStore, StoreHeader};
use spectro_core::dsp::wav::{encode_wav, Waveform};
use spectro_core::lm::HierarchyConfig;
use spectro_core::nn::checkpoint::{encode, Record};
use spectro_core::nn::Tensor;
use spectro_core::vqvae::{CodeGrid, CodemapPair};

fn put(dir: &Path, target: &str, name: &str, bytes: &[u8]) {
    let d = dir.join(target);
    std::fs::create_dir_all(&d).unwrap();
    std::fs::write(d.join(name), bytes).unwrap();
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fuzz/corpus".into()));

    let tone: Vec<f64> = (0..64).map(|i| 0.5 * (i as f64 * 0.3).sin()).collect();
    put(&dir, "decode_wav", "tone_64", &encode_wav(&Waveform { samples: tone, sample_rate: 16000 }).unwrap());
    put(&dir, "decode_wav", "empty", &encode_wav(&Waveform { samples: vec![], sample_rate: 8000 }).unwrap());

    let records = vec![
        Record::new("w", &Tensor::<f32>::from_vec(&[2, 3], vec![1.0, -2.0, 0.5, 0.0, 3.25, -0.125]).unwrap()),
        Record::new("b", &Tensor::<f32>::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap()),
        Record::new("s", &Tensor::<f32>::from_vec(&[], vec![7.0]).unwrap()),
    ];
    put(&dir, "spnn_decode", "three_params", &encode(&records).unwrap());
    put(&dir, "spnn_decode", "header_only", &encode(&[]).unwrap());

    let hier = HierarchyConfig::new((2, 2), (2, 2)).unwrap();
    let header = StoreHeader::new(&hier, 8).unwrap();
    let rec = |id: u32, off: usize| CodemapRecord {
        id,
        pitch: 60,
        instrument: 1,
        codes: CodemapPair {
            top: CodeGrid::new(2, 2, (0..4).map(|i| (i + off) % 8).collect()).unwrap(),
            bottom: CodeGrid::new(4, 4, (0..16).map(|i| (i * 3 + off) % 8).collect()).unwrap(),
        },
    };
    let bytes = CodemapStore::encode(&header, &[rec(0, 0), rec(1, 5)]).unwrap();
    put(&dir, "spin_store", "two_records", &bytes);
    put(&dir, "spin_store", "no_records", &CodemapStore::encode(&header, &[]).unwrap());

    put(&dir, "run_config", "toy.json", RunConfig::toy().to_json().as_bytes());
    put(&dir, "run_config", "paper.json", RunConfig::paper().to_json().as_bytes());

    put(&dir, "service_request", "sample.json", br#"{"pitch":60,"instrument":"brassy","seed":3}"#);
    put(&dir, "service_request", "sample_index.json", br#"{"pitch":48,"instrument":0,"top_p":0.9,"temperature":1.0}"#);
    put(
        &dir,
        "service_request",
        "inpaint.json",
        br#"{"level":"top","freq_start":0,"freq_end":4,"time_start":0,"time_end":2,"pitch":60,"instrument":1}"#,
    );
}

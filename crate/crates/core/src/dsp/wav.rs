//! PCM16 mono WAV reading and writing.

use std::io::Cursor;
use std::path::Path;

use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling; a no-op at the same rate.
    pub fn resampled(&self, rate: u32) -> Waveform {
        Waveform {
            samples: resample_linear(&self.samples, self.sample_rate, rate),
            sample_rate: rate,
        }
    }
}

pub fn resample_linear(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let out_len = ((samples.len() as u64 * to as u64) / from as u64).max(1) as usize;
    let step = from as f64 / to as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = samples[j.min(samples.len() - 1)];
            let b = samples[(j + 1).min(samples.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

fn bad_wav(e: hound::Error) -> Error {
    Error::InvalidInput(format!("unreadable WAV: {e}"))
}

/// Upper bound on decoded length, guards against hostile headers.
const MAX_SAMPLES: usize = 1 << 26;

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(bad_wav)?;
    let spec = reader.spec();
    ensure!(spec.channels == 1, InvalidInput, "expected mono WAV, got {} channels", spec.channels);
    ensure!(
        spec.sample_format == hound::SampleFormat::Int && spec.bits_per_sample == 16,
        InvalidInput,
        "expected 16-bit PCM WAV, got {:?} {} bits",
        spec.sample_format,
        spec.bits_per_sample
    );
    ensure!(spec.sample_rate > 0, InvalidInput, "WAV sample rate is zero");
    let mut samples = Vec::new();
    for s in reader.into_samples::<i16>() {
        let s = s.map_err(bad_wav)?;
        ensure!(samples.len() < MAX_SAMPLES, InvalidInput, "WAV longer than {MAX_SAMPLES} samples");
        samples.push(s as f64 / 32768.0);
    }
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
    })
}

pub fn encode_wav(wave: &Waveform) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut buf, spec).map_err(bad_wav)?;
        for &s in &wave.samples {
            let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v).map_err(bad_wav)?;
        }
        writer.finalize().map_err(bad_wav)?;
    }
    Ok(buf.into_inner())
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let bytes = encode_wav(wave)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

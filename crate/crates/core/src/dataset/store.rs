//! Fixed-stride binary store of extracted codemaps.
//!
//! Layout, little-endian: magic `SPIN`, u32 version, u32 count, u16
//! F_top, T_top, F_bot, T_bot, K; then `count` records of u32 id, u8
//! pitch, u8 instrument, top codes and bottom codes as u16, row-major
//! with frequency-ascending rows.

use std::path::Path;

use super::NoteRecord;
use crate::dsp::MelIFCodec;
use crate::error::{ensure, Error, Result};
use crate::lm::HierarchyConfig;
use crate::vqvae::{CodeGrid, CodemapPair, VqVae};

pub const STORE_MAGIC: &[u8; 4] = b"SPIN";
pub const STORE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 5 * 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StoreHeader {
    pub top_shape: (usize, usize),
    pub bottom_shape: (usize, usize),
    pub codebook_size: usize,
}

impl StoreHeader {
    pub fn new(hier: &HierarchyConfig, codebook_size: usize) -> Result<Self> {
        let h = Self {
            top_shape: hier.top_shape,
            bottom_shape: hier.bottom_shape(),
            codebook_size,
        };
        h.validate()?;
        Ok(h)
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.top_shape.0,
            self.top_shape.1,
            self.bottom_shape.0,
            self.bottom_shape.1,
        ];
        ensure!(
            dims.iter().all(|&d| d > 0 && d <= u16::MAX as usize),
            InvalidStore,
            "codemap shapes {:?} / {:?} do not fit the store",
            self.top_shape,
            self.bottom_shape
        );
        ensure!(
            (2..=u16::MAX as usize).contains(&self.codebook_size),
            InvalidStore,
            "codebook size {} does not fit the store",
            self.codebook_size
        );
        let (ft, tt) = self.top_shape;
        let (fb, tb) = self.bottom_shape;
        ensure!(
            fb % ft == 0 && tb % tt == 0,
            InvalidStore,
            "bottom shape {:?} is not a multiple of top shape {:?}",
            self.bottom_shape,
            self.top_shape
        );
        Ok(())
    }

    pub fn hierarchy(&self) -> HierarchyConfig {
        HierarchyConfig {
            top_shape: self.top_shape,
            patch: (
                self.bottom_shape.0 / self.top_shape.0,
                self.bottom_shape.1 / self.top_shape.1,
            ),
        }
    }

    pub fn record_stride(&self) -> usize {
        let cells = self.top_shape.0 * self.top_shape.1 + self.bottom_shape.0 * self.bottom_shape.1;
        4 + 1 + 1 + 2 * cells
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodemapRecord {
    pub id: u32,
    pub pitch: u8,
    pub instrument: u8,
    pub codes: CodemapPair,
}

/// In-memory store with O(1) record access.
#[derive(Clone, Debug)]
pub struct CodemapStore {
    header: StoreHeader,
    count: usize,
    bytes: Vec<u8>,
}

fn u16_at(b: &[u8], at: usize) -> usize {
    u16::from_le_bytes([b[at], b[at + 1]]) as usize
}

impl CodemapStore {
    pub fn encode(header: &StoreHeader, records: &[CodemapRecord]) -> Result<Vec<u8>> {
        header.validate()?;
        ensure!(records.len() <= u32::MAX as usize, InvalidStore, "too many records");
        let mut out = Vec::with_capacity(HEADER_LEN + records.len() * header.record_stride());
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for d in [
            header.top_shape.0,
            header.top_shape.1,
            header.bottom_shape.0,
            header.bottom_shape.1,
            header.codebook_size,
        ] {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        for r in records {
            ensure!(
                r.codes.top.shape() == header.top_shape && r.codes.bottom.shape() == header.bottom_shape,
                InvalidStore,
                "record {} has shapes {:?} / {:?}",
                r.id,
                r.codes.top.shape(),
                r.codes.bottom.shape()
            );
            out.extend_from_slice(&r.id.to_le_bytes());
            out.push(r.pitch);
            out.push(r.instrument);
            for &c in r.codes.top.codes().iter().chain(r.codes.bottom.codes()) {
                ensure!(
                    c < header.codebook_size,
                    InvalidStore,
                    "record {} holds code {c} ≥ K = {}",
                    r.id,
                    header.codebook_size
                );
                out.extend_from_slice(&(c as u16).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn write(path: &Path, header: &StoreHeader, records: &[CodemapRecord]) -> Result<()> {
        let bytes = Self::encode(header, records)?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Validates the header and the exact total length.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        ensure!(
            bytes.len() >= HEADER_LEN,
            InvalidStore,
            "{} bytes is shorter than the store header",
            bytes.len()
        );
        ensure!(&bytes[0..4] == STORE_MAGIC, InvalidStore, "bad magic {:?}", &bytes[0..4]);
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        ensure!(
            version == STORE_VERSION,
            InvalidStore,
            "unsupported store version {version}"
        );
        let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header = StoreHeader {
            top_shape: (u16_at(&bytes, 12), u16_at(&bytes, 14)),
            bottom_shape: (u16_at(&bytes, 16), u16_at(&bytes, 18)),
            codebook_size: u16_at(&bytes, 20),
        };
        header.validate()?;
        let expected = count
            .checked_mul(header.record_stride())
            .and_then(|n| n.checked_add(HEADER_LEN));
        ensure!(
            expected == Some(bytes.len()),
            InvalidStore,
            "store holds {} bytes, header implies {:?}",
            bytes.len(),
            expected
        );
        let store = Self { header, count, bytes };
        for i in 0..count {
            store.get(i)?;
        }
        Ok(store)
    }

    pub fn open(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(bytes)
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn byte_len(&self) -> usize {
        self.bytes.len()
    }

    pub fn get(&self, index: usize) -> Result<CodemapRecord> {
        ensure!(
            index < self.count,
            InvalidInput,
            "record {index} out of range for {} records",
            self.count
        );
        let h = &self.header;
        let base = HEADER_LEN + index * h.record_stride();
        let b = &self.bytes[base..base + h.record_stride()];
        let id = u32::from_le_bytes(b[0..4].try_into().expect("4 bytes"));
        let mut at = 6;
        let mut grid = |shape: (usize, usize)| -> Result<CodeGrid> {
            let n = shape.0 * shape.1;
            let codes: Vec<usize> = (0..n).map(|j| u16_at(b, at + 2 * j)).collect();
            at += 2 * n;
            if let Some(bad) = codes.iter().find(|&&c| c >= h.codebook_size) {
                return Err(Error::InvalidStore(format!(
                    "record {index} holds code {bad} ≥ K = {}",
                    h.codebook_size
                )));
            }
            CodeGrid::new(shape.0, shape.1, codes)
        };
        let top = grid(h.top_shape)?;
        let bottom = grid(h.bottom_shape)?;
        Ok(CodemapRecord {
            id,
            pitch: b[4],
            instrument: b[5],
            codes: CodemapPair { top, bottom },
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = CodemapRecord> + '_ {
        (0..self.count).map(|i| self.get(i).expect("records validated on open"))
    }
}

/// Encodes every note with the frozen `model` and writes the store.
pub fn extract_codemaps(
    model: &VqVae,
    codec: &MelIFCodec,
    notes: &[NoteRecord],
    out: &Path,
    batch: usize,
) -> Result<CodemapStore> {
    let header = StoreHeader::new(&model.hierarchy(), model.cfg.codebook_size)?;
    let mut records = Vec::with_capacity(notes.len());
    for chunk in notes.chunks(batch.max(1)) {
        let grams = chunk
            .iter()
            .map(|n| codec.encode(&n.waveform))
            .collect::<Result<Vec<_>>>()?;
        for (note, codes) in chunk.iter().zip(model.encode_batch(&grams)?) {
            records.push(CodemapRecord {
                id: note.id,
                pitch: note.pitch,
                instrument: note.instrument,
                codes,
            });
        }
    }
    CodemapStore::write(out, &header, &records)?;
    CodemapStore::open(out)
}

//! Patch cache file: the patches of one recording under one front-end,
//! side by side as a single `rows x (n * width)` image.
//!
//! ```text
//! "RSPC" | version u16 | kind u8 | rows u16 | cols u32 | f32 x rows*cols
//! ```
//!
//! All integers and floats are little-endian; values are row-major. Bit 7
//! of the kind byte is set when clips were peak-normalized.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{FrontEndKind, SpectrogramError, SpectrogramPatch};
use crate::dsp::ClipSource;

pub const PATCH_MAGIC: &[u8; 4] = b"RSPC";
pub const PATCH_VERSION: u16 = 1;
const PEAK_FLAG: u8 = 0x80;
const HEADER_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheHeader {
    pub kind: FrontEndKind,
    pub peak_normalized: bool,
    pub rows: u16,
    pub cols: u32,
}

impl CacheHeader {
    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..4].copy_from_slice(PATCH_MAGIC);
        h[4..6].copy_from_slice(&PATCH_VERSION.to_le_bytes());
        h[6] = self.kind.code() | if self.peak_normalized { PEAK_FLAG } else { 0 };
        h[7..9].copy_from_slice(&self.rows.to_le_bytes());
        h[9..13].copy_from_slice(&self.cols.to_le_bytes());
        h
    }

    fn decode(h: &[u8; HEADER_LEN]) -> Result<Self, SpectrogramError> {
        if &h[..4] != PATCH_MAGIC {
            return Err(SpectrogramError::Cache("bad magic".into()));
        }
        let version = u16::from_le_bytes([h[4], h[5]]);
        if version != PATCH_VERSION {
            return Err(SpectrogramError::Cache(format!("unsupported version {version}")));
        }
        let kind = FrontEndKind::from_code(h[6] & !PEAK_FLAG).ok_or_else(|| SpectrogramError::Cache(format!("unknown kind {}", h[6])))?;
        Ok(Self {
            kind,
            peak_normalized: h[6] & PEAK_FLAG != 0,
            rows: u16::from_le_bytes([h[7], h[8]]),
            cols: u32::from_le_bytes([h[9], h[10], h[11], h[12]]),
        })
    }
}

/// Writes equally shaped patches atomically (temporary file, then rename).
pub fn write_patch_file(path: &Path, patches: &[SpectrogramPatch], peak_normalized: bool) -> Result<(), SpectrogramError> {
    let first = patches.first().ok_or_else(|| SpectrogramError::Cache("no patches to write".into()))?;
    let (rows, width, kind) = (first.rows, first.cols, first.kind);
    if patches.iter().any(|p| p.rows != rows || p.cols != width || p.kind != kind) {
        return Err(SpectrogramError::Shape("patches differ in shape or kind".into()));
    }
    let header = CacheHeader {
        kind,
        peak_normalized,
        rows: u16::try_from(rows).map_err(|_| SpectrogramError::Shape("too many rows".into()))?,
        cols: u32::try_from(width * patches.len()).map_err(|_| SpectrogramError::Shape("too many columns".into()))?,
    };
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(&header.encode())?;
        for r in 0..rows {
            for p in patches {
                for v in &p.values[r * width..(r + 1) * width] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a cache file back into patches of `width` columns.
pub fn read_patch_file(path: &Path, width: usize, source: ClipSource) -> Result<(CacheHeader, Vec<SpectrogramPatch>), SpectrogramError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(SpectrogramError::Cache("truncated header".into()));
    }
    let header = CacheHeader::decode(bytes[..HEADER_LEN].try_into().expect("length checked"))?;
    let (rows, cols) = (usize::from(header.rows), header.cols as usize);
    if bytes.len() != HEADER_LEN + 4 * rows * cols {
        return Err(SpectrogramError::Cache(format!("expected {} data bytes, found {}", 4 * rows * cols, bytes.len() - HEADER_LEN)));
    }
    if width == 0 || cols % width != 0 {
        return Err(SpectrogramError::Cache(format!("{cols} columns is not a multiple of {width}")));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let patches = (0..cols / width)
        .map(|p| {
            let mut values = Vec::with_capacity(rows * width);
            for r in 0..rows {
                values.extend_from_slice(&data[r * cols + p * width..r * cols + (p + 1) * width]);
            }
            SpectrogramPatch { values, rows, cols: width, kind: header.kind, source: source.clone() }
        })
        .collect();
    Ok((header, patches))
}

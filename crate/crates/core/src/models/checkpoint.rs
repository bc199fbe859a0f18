//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "RSPN" | version u16 | model kind u8 | classes u8
//! repeated until EOF:
//!   name_len u16 | name bytes | rank u8 | dims u32 x rank | f32 x prod(dims)
//! ```
//!
//! Parameters come first, then buffers (batchnorm running statistics), each
//! group sorted by name.

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, ModelConfig, ModelError, ModelKind};
use crate::nn::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RSPN";
pub const CHECKPOINT_VERSION: u16 = 1;

fn entry<W: Write>(w: &mut W, name: &str, t: &Tensor<f32>) -> io::Result<()> {
    let name_len = u16::try_from(name.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "name too long"))?;
    w.write_all(&name_len.to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[t.rank() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[model.kind().code(), model.config().n_classes as u8])?;
    for p in model.store().sorted() {
        entry(&mut w, &p.name, &p.value)?;
    }
    let mut bufs: Vec<_> = model.store().buffers().iter().collect();
    bufs.sort_by(|a, b| a.name.cmp(&b.name));
    for b in bufs {
        entry(&mut w, &b.name, &b.value)?;
    }
    w.flush()
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    let tmp = path.with_extension("tmp");
    {
        let f = fs::File::create(&tmp)?;
        write_checkpoint(model, BufWriter::new(f))?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|_| ModelError::Checkpoint(format!("truncated while reading {what}")))
}

/// Reads a checkpoint into a freshly built model of the recorded kind.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model, ModelError> {
    let mut head = [0u8; 8];
    read_exact_or(&mut r, &mut head, "header")?;
    if &head[..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = ModelKind::from_code(head[6]).ok_or_else(|| ModelError::Checkpoint(format!("unknown model kind {}", head[6])))?;
    let mut model = Model::new(ModelConfig::new(kind, head[7] as usize), 0)?;
    let mut seen = HashSet::new();
    loop {
        let mut len = [0u8; 2];
        match r.read(&mut len[..1])? {
            0 => break,
            _ => read_exact_or(&mut r, &mut len[1..], "name length")?,
        }
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact_or(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| ModelError::Checkpoint("name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact_or(&mut r, &mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut d = [0u8; 4];
            read_exact_or(&mut r, &mut d, "dims")?;
            shape.push(u32::from_le_bytes(d) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        read_exact_or(&mut r, &mut raw, &name)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let store = model.store_mut();
        let slot = if let Some(id) = store.find_param(&name) {
            &mut store.param_mut(id).value
        } else if let Some(id) = store.find_buffer(&name) {
            &mut store.buffer_mut(id).value
        } else {
            return Err(ModelError::Checkpoint(format!("unexpected tensor `{name}`")));
        };
        if slot.shape() != shape.as_slice() {
            return Err(ModelError::Checkpoint(format!("`{name}`: shape {:?}, model expects {:?}", shape, slot.shape())));
        }
        slot.data_mut().copy_from_slice(&data);
        if !seen.insert(name.clone()) {
            return Err(ModelError::Checkpoint(format!("duplicate tensor `{name}`")));
        }
    }
    let expected = model.store().params().len() + model.store().buffers().len();
    if seen.len() != expected {
        return Err(ModelError::Checkpoint(format!("{} of {} tensors present", seen.len(), expected)));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    read_checkpoint(BufReader::new(fs::File::open(path)?))
}

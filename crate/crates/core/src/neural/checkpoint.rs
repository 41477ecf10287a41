//! Weights file: `DDCL`, u32 version, u32 tensor count, then per tensor a
//! u16-length UTF-8 name, u8 rank, u32 dims and little-endian f32 values,
//! closed by a CRC32 of everything before it. All integers little-endian.

use std::collections::HashSet;
use std::path::Path;

use super::tensor::Tensor;
use super::NeuralError;

pub const MAGIC: &[u8; 4] = b"DDCL";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_weights(tensors: &[(String, Tensor<f32>)]) -> Result<Vec<u8>, NeuralError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(NeuralError::NameCollision(name.clone()));
        }
        let len = u16::try_from(name.len())
            .map_err(|_| NeuralError::Shape(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| NeuralError::Shape(format!("{name} has rank {}", t.rank())))?;
        if t.shape.iter().product::<usize>() != t.len() {
            return Err(NeuralError::Shape(format!(
                "{name}: {:?} vs {} values",
                t.shape,
                t.len()
            )));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in &t.shape {
            let d = u32::try_from(d).map_err(|_| NeuralError::Shape(format!("{name}: dim {d}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NeuralError> {
        let end = self.pos.checked_add(n).ok_or(NeuralError::Truncated)?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or(NeuralError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Decodes tensors in file order.
pub fn decode_weights(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>, NeuralError> {
    if bytes.len() < 4 {
        return Err(NeuralError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(NeuralError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(NeuralError::Truncated);
    }
    let mut c = Cursor { bytes, pos: 4 };
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(NeuralError::Version(version));
    }
    let body = &bytes[..bytes.len() - 4];
    let count = c.u32()?;
    let mut c = Cursor {
        bytes: body,
        pos: c.pos,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| NeuralError::Shape("tensor name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(NeuralError::NameCollision(name));
        }
        let rank = c.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or(NeuralError::Truncated)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        out.push((name, Tensor { shape, data }));
    }
    if c.pos != body.len() {
        return Err(NeuralError::Shape(format!(
            "{} unexpected bytes after the last tensor",
            body.len() - c.pos
        )));
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(NeuralError::Crc { stored, computed });
    }
    Ok(out)
}

pub fn save_weights(
    path: impl AsRef<Path>,
    tensors: &[(String, Tensor<f32>)],
) -> Result<(), NeuralError> {
    std::fs::write(path, encode_weights(tensors)?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f32>)>, NeuralError> {
    decode_weights(&std::fs::read(path)?)
}

//! On-disk log-mel cache keyed by a SHA-256 of the audio bytes and the
//! feature settings.
//!
//! Entry layout (little-endian): magic `DDCF`, version u32, 32-byte key,
//! frames u32, bands u32, channels u32, f32 values, CRC32 of everything
//! before it.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::audiofeat::{MelFilterbank, MelSpectrogram, CHANNELS, HOP_S};

pub const MAGIC: &[u8; 4] = b"DDCF";
pub const FORMAT_VERSION: u32 = 1;
/// Bumped whenever featurization output changes.
pub const FEATURE_VERSION: u32 = 1;

const HEADER: usize = 4 + 4 + 32 + 12;

#[derive(Debug, Clone)]
pub struct FeatureCache {
    pub dir: PathBuf,
}

pub fn cache_key(audio: &[u8], bands: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(audio);
    h.update(format!("|bands={bands}|features={FEATURE_VERSION}").as_bytes());
    h.finalize().into()
}

fn hex(key: &[u8; 32]) -> String {
    key.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_entry(key: &[u8; 32], spec: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + spec.data.len() * 4 + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(key);
    for v in [spec.frames, spec.bands, CHANNELS] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &spec.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Decodes an entry, checking it belongs to `key`.
pub fn decode_entry(key: &[u8; 32], bytes: &[u8]) -> Result<MelSpectrogram, String> {
    if bytes.len() < HEADER + 4 {
        return Err("truncated entry".into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err("checksum mismatch".into());
    }
    if &body[..4] != MAGIC {
        return Err("bad magic".into());
    }
    let u32_at = |i: usize| u32::from_le_bytes(body[i..i + 4].try_into().expect("4 bytes"));
    if u32_at(4) != FORMAT_VERSION {
        return Err(format!("format version {}", u32_at(4)));
    }
    if &body[8..40] != key {
        return Err("entry was written for different audio or settings".into());
    }
    let (frames, bands, channels) = (
        u32_at(40) as usize,
        u32_at(44) as usize,
        u32_at(48) as usize,
    );
    if channels != CHANNELS || body.len() != HEADER + frames * bands * channels * 4 {
        return Err("dimensions disagree with payload".into());
    }
    let data = body[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(MelSpectrogram {
        frames,
        bands,
        data,
        hop_s: HOP_S,
        band_centers: MelFilterbank::new(bands).centers_hz,
    })
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FeatureCache { dir: dir.into() }
    }

    pub fn entry_path(&self, key: &[u8; 32]) -> PathBuf {
        self.dir.join(format!("{}.feat", hex(key)))
    }

    /// `Ok(None)` when absent; an error when present but unusable.
    pub fn load(&self, key: &[u8; 32]) -> Result<Option<MelSpectrogram>, PipelineError> {
        let path = self.entry_path(key);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(PipelineError::io(&path, e)),
        };
        decode_entry(key, &bytes)
            .map(Some)
            .map_err(|why| PipelineError::Cache(format!("{}: {why}", path.display())))
    }

    pub fn store(&self, key: &[u8; 32], spec: &MelSpectrogram) -> Result<(), PipelineError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| PipelineError::io(&self.dir, e))?;
        let path = self.entry_path(key);
        // write-then-rename so readers never see half an entry
        let tmp = path.with_extension("feat.tmp");
        std::fs::write(&tmp, encode_entry(key, spec)).map_err(|e| PipelineError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| PipelineError::io(&path, e))
    }

    /// Cached features for the WAV at `audio_path`, computing them on a
    /// miss. The flag reports a hit.
    pub fn features(
        &self,
        audio_path: &Path,
        bands: usize,
    ) -> Result<(MelSpectrogram, bool), PipelineError> {
        let bytes = std::fs::read(audio_path).map_err(|e| PipelineError::io(audio_path, e))?;
        let key = cache_key(&bytes, bands);
        if let Some(spec) = self.load(&key)? {
            return Ok((spec, true));
        }
        let clip = crate::audiofeat::decode_wav(&bytes)
            .map_err(|e| PipelineError::audio(audio_path, e))?;
        let spec = crate::audiofeat::featurize(&clip, bands)
            .map_err(|e| PipelineError::audio(audio_path, e))?;
        self.store(&key, &spec)?;
        Ok((spec, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> MelSpectrogram {
        MelSpectrogram {
            frames: 3,
            bands: 2,
            data: (0..18).map(|i| i as f32 * 0.5 - 3.0).collect(),
            hop_s: HOP_S,
            band_centers: MelFilterbank::new(2).centers_hz,
        }
    }

    #[test]
    fn entry_round_trip_and_corruption() {
        let key = cache_key(b"audio", 2);
        let bytes = encode_entry(&key, &spec());
        assert_eq!(decode_entry(&key, &bytes).unwrap(), spec());
        let other = cache_key(b"audio", 3);
        assert_ne!(key, other);
        assert!(decode_entry(&other, &bytes)
            .unwrap_err()
            .contains("different audio"));
        let mut flipped = bytes.clone();
        flipped[HEADER + 1] ^= 1;
        assert_eq!(
            decode_entry(&key, &flipped).unwrap_err(),
            "checksum mismatch"
        );
        assert!(decode_entry(&key, &bytes[..10]).is_err());
    }

    #[test]
    fn store_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path().join("c"));
        let key = cache_key(b"x", 2);
        assert!(cache.load(&key).unwrap().is_none());
        cache.store(&key, &spec()).unwrap();
        assert_eq!(cache.load(&key).unwrap().unwrap(), spec());
        std::fs::write(cache.entry_path(&key), b"garbage").unwrap();
        assert!(matches!(cache.load(&key), Err(PipelineError::Cache(_))));
    }
}

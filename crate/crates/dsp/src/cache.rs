//! Spectrogram cache file:
//!
//! ```text
//! magic "CNTRSPEC", version u32, kind u8 (0 linear, 1 mel),
//! frame_size u32, hop_size u32, sample_rate u32, n_frames u64, n_bins u64,
//! n_frames * n_bins f64 values, all little-endian
//! ```

use std::path::Path;

use crate::error::{DspError, Result};
use crate::stft::{SpecKind, Spectrogram};

pub const MAGIC: &[u8; 8] = b"CNTRSPEC";
pub const VERSION: u32 = 1;

pub fn encode(spec: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(41 + spec.data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match spec.kind {
        SpecKind::Linear => 0,
        SpecKind::Mel => 1,
    });
    out.extend_from_slice(&(spec.frame_size as u32).to_le_bytes());
    out.extend_from_slice(&(spec.hop_size as u32).to_le_bytes());
    out.extend_from_slice(&spec.sample_rate.to_le_bytes());
    out.extend_from_slice(&(spec.n_frames as u64).to_le_bytes());
    out.extend_from_slice(&(spec.n_bins as u64).to_le_bytes());
    for v in &spec.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(buf: &[u8]) -> Result<Spectrogram> {
    let bad = |m: &str| DspError::Format(format!("spectrogram cache: {m}"));
    if buf.len() < 41 || &buf[..8] != MAGIC {
        return Err(bad("bad magic or truncated header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let kind = match buf[12] {
        0 => SpecKind::Linear,
        1 => SpecKind::Mel,
        _ => return Err(bad("unknown kind")),
    };
    let frame_size = u32_at(13) as usize;
    let hop_size = u32_at(17) as usize;
    let sample_rate = u32_at(21);
    let n_frames = u64_at(25) as usize;
    let n_bins = u64_at(33) as usize;
    let body = &buf[41..];
    if body.len() != n_frames * n_bins * 8 {
        return Err(bad("payload length disagrees with header"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Spectrogram {
        data,
        n_frames,
        n_bins,
        kind,
        frame_size,
        hop_size,
        sample_rate,
    })
}

pub fn save(path: &Path, spec: &Spectrogram) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(spec))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Spectrogram> {
    decode(&std::fs::read(path)?)
}

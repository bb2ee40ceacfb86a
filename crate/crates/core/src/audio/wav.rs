//! Minimal RIFF/WAVE reader and writer for 16-bit PCM.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded audio clip. Samples are channel 0, scaled into `[-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    Error::WavMalformed {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn u16_at(buf: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([buf[off], buf[off + 1]])
}

fn u32_at(buf: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]])
}

/// Reads a 16-bit PCM WAV file. Multi-channel files contribute channel 0
/// only; samples are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 12 || &buf[0..4] != b"RIFF" || &buf[8..12] != b"WAVE" {
        return Err(malformed(path, "missing RIFF/WAVE header"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut off = 12usize;
    while off + 8 <= buf.len() {
        let id = &buf[off..off + 4];
        let size = u32_at(&buf, off + 4) as usize;
        let body_start = off + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= buf.len())
            .ok_or_else(|| malformed(path, format!("chunk {:?} overruns file", String::from_utf8_lossy(id))))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(malformed(path, "fmt chunk shorter than 16 bytes"));
                }
                fmt = Some((
                    u16_at(&buf, body_start),
                    u16_at(&buf, body_start + 2),
                    u32_at(&buf, body_start + 4),
                    u16_at(&buf, body_start + 14),
                ));
            }
            b"data" => data = Some(&buf[body_start..body_end]),
            _ => {}
        }
        // Chunk bodies are padded to even length.
        off = body_end + (size & 1);
    }

    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| malformed(path, "no fmt chunk"))?;
    let data = data.ok_or_else(|| malformed(path, "no data chunk"))?;
    if format != 1 || bits != 16 {
        return Err(Error::WavUnsupported {
            path: path.to_path_buf(),
            detail: format!("format tag {format}, {bits} bits per sample (need PCM 16-bit)"),
        });
    }
    if channels == 0 {
        return Err(malformed(path, "zero channels"));
    }
    if sample_rate == 0 {
        return Err(malformed(path, "zero sample rate"));
    }

    let frame_bytes = 2 * channels as usize;
    let n_frames = data.len() / frame_bytes;
    if n_frames == 0 {
        return Err(malformed(path, "empty data chunk"));
    }
    let mut samples = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let i = f * frame_bytes;
        let s = i16::from_le_bytes([data[i], data[i + 1]]);
        samples.push(f64::from(s) / 32768.0);
    }
    Ok(Waveform {
        samples,
        sample_rate,
    })
}

/// Writes mono 16-bit PCM. Samples are clamped to `[-1, 1)` and rounded.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let data_len = samples.len() * 2;
    let mut buf = Vec::with_capacity(44 + data_len);
    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    buf.extend_from_slice(b"WAVE");
    buf.extend_from_slice(b"fmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    buf.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes());
    buf.extend_from_slice(&16u16.to_le_bytes());
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        buf.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

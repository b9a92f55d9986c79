//! Spectrogram file formats.
//!
//! `SPC1` binary layout: magic `b"SPC1"`, `u32` rows, `u32` cols (both
//! little-endian), then `rows * cols` little-endian `f32` values in
//! row-major order. CSV: one line per mel band, comma-separated, no header.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{Matrix, Scalar};

pub const SPEC_MAGIC: &[u8; 4] = b"SPC1";
const HEADER_LEN: usize = 12;

/// Spectrogram file encodings understood by [`read_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecFormat {
    Binary,
    Csv,
    Wav,
}

impl SpecFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "spc" | "spec" => Some(SpecFormat::Binary),
            "csv" => Some(SpecFormat::Csv),
            "wav" => Some(SpecFormat::Wav),
            _ => None,
        }
    }
}

fn check_finite<T: Scalar>(m: &Matrix<T>) -> Result<()> {
    if let Some((idx, v)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite value {v} at row {}, col {}",
            idx.0, idx.1
        )));
    }
    Ok(())
}

/// Decodes an `SPC1` byte buffer.
pub fn decode_binary<T: Scalar>(bytes: &[u8]) -> Result<Matrix<T>> {
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len() as u64, "file shorter than magic"));
    }
    if &bytes[..4] != SPEC_MAGIC {
        return Err(Error::format(0, "bad magic, expected SPC1"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format(4, format!("empty dimensions {rows}x{cols}")));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(4, "dimensions overflow"))?;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: header declares {rows}x{cols}, need {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            expected as u64,
            format!("{} trailing bytes after payload", bytes.len() - expected),
        ));
    }
    let values: Vec<T> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let m = Matrix::from_shape_vec((rows, cols), values).expect("length checked");
    check_finite(&m)?;
    Ok(m)
}

pub fn encode_binary<T: Scalar>(m: &Matrix<T>) -> Vec<u8> {
    let (rows, cols) = m.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(SPEC_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    out
}

pub fn decode_csv<T: Scalar>(text: &str) -> Result<Matrix<T>> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len() as u64;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut n = 0;
        for field in trimmed.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(start, format!("row {rows}: cannot parse '{}'", field.trim())))?;
            values.push(T::lit(v));
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => return Err(Error::format(start, format!("row {rows} has {n} values, expected {c}"))),
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::format(0, "empty CSV"))?;
    let m = Matrix::from_shape_vec((rows, cols), values).expect("consistent rows");
    check_finite(&m)?;
    Ok(m)
}

pub fn encode_csv<T: Scalar>(m: &Matrix<T>) -> String {
    let mut s = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Mono PCM samples scaled to `[-1, 1]` plus the sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
        }
    }
    .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let mono = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Reads a `SPC1` or CSV spectrogram matrix; the format follows the extension
/// (anything other than `.csv` is read as binary).
pub fn read_matrix<T: Scalar>(path: &Path) -> Result<Matrix<T>> {
    match SpecFormat::from_path(path) {
        Some(SpecFormat::Csv) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            decode_csv(&text)
        }
        Some(SpecFormat::Wav) => Err(Error::Input(format!(
            "{} is audio; compute a mel spectrogram first",
            path.display()
        ))),
        _ => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes)
        }
    }
}

pub fn write_matrix<T: Scalar>(path: &Path, m: &Matrix<T>) -> Result<()> {
    let bytes = match SpecFormat::from_path(path) {
        Some(SpecFormat::Csv) => encode_csv(m).into_bytes(),
        _ => encode_binary(m),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

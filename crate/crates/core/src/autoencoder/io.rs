//! `AEP1` parameter files.
//!
//! Layout (little-endian): magic `b"AEP1"`, `u32` header length, a JSON
//! header echoing the config, latent range and optimizer step, `u32` tensor
//! count, then per tensor `u32` rank, `rank` x `u32` dims and the `f32`
//! values. Tensors are every layer's weights and biases, then the first
//! and second Adam moments in the same order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AEConfig, AEParams};
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"AEP1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: AEConfig,
    latent_range: Option<(f64, f64)>,
    adam_t: u64,
}

fn shapes(p: &AEParams) -> Vec<Vec<usize>> {
    let mut s = Vec::new();
    for l in &p.layers {
        s.push(vec![l.out_channels, l.in_channels, l.kernel, l.kernel]);
        s.push(vec![l.out_channels]);
    }
    s
}

pub fn encode_params(p: &AEParams) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        config: p.config.clone(),
        latent_range: p.latent_range,
        adam_t: p.adam_t,
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let shapes = shapes(p);
    out.extend_from_slice(&((3 * shapes.len()) as u32).to_le_bytes());
    for store in [&p.theta, &p.adam_m, &p.adam_v] {
        let mut at = 0;
        for shape in &shapes {
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            let n: usize = shape.iter().product();
            for v in &store[at..at + n] {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            at += n;
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<AEParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != PARAMS_MAGIC {
        return Err(Error::format(0, "bad magic, expected AEP1"));
    }
    let hlen = r.u32("header length")?;
    let header: Header = serde_json::from_slice(r.take(hlen, "header")?)?;
    let mut p = AEParams::zeros(&header.config)?;
    p.latent_range = header.latent_range;
    p.adam_t = header.adam_t;
    let shapes = shapes(&p);
    let count = r.u32("tensor count")?;
    if count != 3 * shapes.len() {
        return Err(Error::format(
            (r.pos - 4) as u64,
            format!("{count} tensors, config implies {}", 3 * shapes.len()),
        ));
    }
    let total = p.theta.len();
    let mut flat = Vec::with_capacity(3 * total);
    for i in 0..count {
        let want = &shapes[i % shapes.len()];
        let start = r.pos;
        let rank = r.u32("tensor rank")?;
        let dims = (0..rank).map(|_| r.u32("tensor dims")).collect::<Result<Vec<_>>>()?;
        if &dims != want {
            return Err(Error::format(
                start as u64,
                format!("tensor {i} has shape {dims:?}, expected {want:?}"),
            ));
        }
        let n: usize = dims.iter().product();
        let data = r.take(4 * n, "tensor data")?;
        flat.extend(
            data.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after tensors"));
    }
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite parameter".into()));
    }
    p.adam_v = flat.split_off(2 * total);
    p.adam_m = flat.split_off(total);
    p.theta = flat;
    Ok(p)
}

pub fn save_params(p: &AEParams, path: &Path) -> Result<()> {
    fs::write(path, encode_params(p)?).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<AEParams> {
    decode_params(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

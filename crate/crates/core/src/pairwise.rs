//! Pairwise distance matrices over a song collection.
//!
//! DMAT layout (all little-endian): magic `b"DMT1"`, `u32 n`, then `n` ids
//! each as `u16` byte length + UTF-8, then `n * n` `f64` values row-major,
//! then an 8-byte footer: `u8` metric tag, `u8` alignment tag, `u16`
//! reserved (0), `u32` config hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Genre, Spectrogram};
use crate::error::{Error, Result};
use crate::metrics::{distance, MetricKind, MetricsConfig};
use crate::scalar::{Matrix, Scalar};
use crate::seed;

pub const DMAT_MAGIC: &[u8; 4] = b"DMT1";
pub const QUANTILE_COUNT: usize = 128;
const PAIRS_PER_CHUNK: usize = 64;

/// How two spectrograms with different frame counts are reconciled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentPolicy {
    /// Keep the earliest `min(len_a, len_b)` frames of both.
    #[default]
    TruncateLeft,
    /// Keep the central `min(len_a, len_b)` frames of both.
    CenterCrop,
}

impl AlignmentPolicy {
    pub fn tag(self) -> u8 {
        match self {
            AlignmentPolicy::TruncateLeft => 0,
            AlignmentPolicy::CenterCrop => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(AlignmentPolicy::TruncateLeft),
            1 => Some(AlignmentPolicy::CenterCrop),
            _ => None,
        }
    }

    fn window(self, len: usize, keep: usize) -> std::ops::Range<usize> {
        let start = match self {
            AlignmentPolicy::TruncateLeft => 0,
            AlignmentPolicy::CenterCrop => (len - keep) / 2,
        };
        start..start + keep
    }

    /// Views of `a` and `b` cut to a common frame count.
    pub fn align<'a, T>(
        self,
        a: &'a Matrix<T>,
        b: &'a Matrix<T>,
    ) -> (ndarray::ArrayView2<'a, T>, ndarray::ArrayView2<'a, T>) {
        let keep = a.ncols().min(b.ncols());
        let wa = self.window(a.ncols(), keep);
        let wb = self.window(b.ncols(), keep);
        (a.slice(ndarray::s![.., wa]), b.slice(ndarray::s![.., wb]))
    }
}

impl FromStr for AlignmentPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncate-left" | "truncate" => Ok(AlignmentPolicy::TruncateLeft),
            "center-crop" | "center" => Ok(AlignmentPolicy::CenterCrop),
            other => Err(Error::Config(format!("unknown alignment policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub ids: Vec<String>,
    pub values: Matrix<f64>,
    pub metric: MetricKind,
    pub policy: AlignmentPolicy,
    pub config_hash: u32,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self) -> BTreeMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    /// Checks the zero diagonal, symmetry, finiteness and non-negativity.
    pub fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        if self.values.dim() != (n, n) {
            return Err(Error::Input(format!("matrix is {:?} for {n} ids", self.values.dim())));
        }
        for i in 0..n {
            if self.values[[i, i]] != 0.0 {
                return Err(Error::Data(format!("non-zero diagonal at {}", self.ids[i])));
            }
            for j in 0..n {
                let v = self.values[[i, j]];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Data(format!(
                        "invalid distance {v} between {} and {}",
                        self.ids[i], self.ids[j]
                    )));
                }
                if (v - self.values[[j, i]]).abs() > 1e-9 {
                    return Err(Error::Data(format!(
                        "asymmetric entry between {} and {}",
                        self.ids[i], self.ids[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Hash of everything that determines a matrix's values except the songs.
pub fn pairwise_config_hash(kind: MetricKind, policy: AlignmentPolicy, cfg: &MetricsConfig) -> u64 {
    seed::config_hash(&(kind, policy, cfg))
}

/// Evaluates every unordered pair once, in parallel.
///
/// Pairs are split into fixed chunks and every value lands in its own slot,
/// so the result does not depend on the worker count.
pub fn compute_pairwise<T: Scalar>(
    specs: &[Spectrogram<T>],
    kind: MetricKind,
    policy: AlignmentPolicy,
    cfg: &MetricsConfig,
) -> Result<DistanceMatrix> {
    let n = specs.len();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 spectrograms, got {n}")));
    }
    let bands = specs[0].bands();
    if let Some(s) = specs.iter().find(|s| s.bands() != bands) {
        return Err(Error::Input(format!(
            "spectrogram '{}' has {} mel bands, expected {bands}",
            s.id,
            s.bands()
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let chunks: Vec<Vec<f64>> = pairs
        .par_chunks(PAIRS_PER_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&(i, j)| {
                    let (a, b) = policy.align(&specs[i].data, &specs[j].data);
                    distance(kind, &a.to_owned(), &b.to_owned(), cfg)
                        .map(|v| v.to_f64_lossy())
                        .map_err(|e| Error::Pair {
                            a: specs[i].id.clone(),
                            b: specs[j].id.clone(),
                            source: Box::new(e),
                        })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut values = Matrix::zeros((n, n));
    for (&(i, j), v) in pairs.iter().zip(chunks.into_iter().flatten()) {
        values[[i, j]] = v;
        values[[j, i]] = v;
    }
    Ok(DistanceMatrix {
        ids: specs.iter().map(|s| s.id.clone()).collect(),
        values,
        metric: kind,
        policy,
        config_hash: pairwise_config_hash(kind, policy, cfg) as u32,
    })
}

pub fn encode_matrix(m: &DistanceMatrix) -> Result<Vec<u8>> {
    m.validate()?;
    let n = m.ids.len();
    let mut out = Vec::with_capacity(16 + n * 8 * n + n * 16);
    out.extend_from_slice(DMAT_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for id in &m.ids {
        let len = u16::try_from(id.len()).map_err(|_| Error::Input(format!("id '{id}' longer than 65535 bytes")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    for v in m.values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(m.metric.tag());
    out.push(m.policy.tag());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&m.config_hash.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn decode_matrix(bytes: &[u8]) -> Result<DistanceMatrix> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != DMAT_MAGIC {
        return Err(Error::format(0, "bad magic, expected DMT1"));
    }
    let n = u32::from_le_bytes(c.take(4, "count")?.try_into().unwrap()) as usize;
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u16::from_le_bytes(c.take(2, "id length")?.try_into().unwrap()) as usize;
        let at = c.pos;
        let raw = c.take(len, "id")?;
        let id = std::str::from_utf8(raw).map_err(|_| Error::format(at as u64, "id is not UTF-8"))?;
        ids.push(id.to_string());
    }
    let raw = c.take(n * n * 8, "values")?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let footer_at = c.pos;
    let footer = c.take(8, "footer")?;
    let metric = MetricKind::from_tag(footer[0])
        .ok_or_else(|| Error::format(footer_at as u64, format!("unknown metric tag {}", footer[0])))?;
    let policy = AlignmentPolicy::from_tag(footer[1])
        .ok_or_else(|| Error::format(footer_at as u64 + 1, "unknown alignment tag"))?;
    let config_hash = u32::from_le_bytes(footer[4..8].try_into().unwrap());
    if c.pos != bytes.len() {
        return Err(Error::format(c.pos as u64, "trailing bytes after footer"));
    }
    let m = DistanceMatrix {
        ids,
        values: Matrix::from_shape_vec((n, n), values).expect("n*n values"),
        metric,
        policy,
        config_hash,
    };
    m.validate()?;
    Ok(m)
}

pub fn save_matrix(m: &DistanceMatrix, path: &Path) -> Result<()> {
    let bytes = encode_matrix(m)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: &Path) -> Result<DistanceMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub stddev: f64,
    pub quantiles: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl GroupStats {
    pub fn from_values(mut v: Vec<f64>) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(Self {
            count: v.len(),
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
            mean,
            stddev: var.sqrt(),
            quantiles: (0..QUANTILE_COUNT)
                .map(|i| quantile(&v, i as f64 / (QUANTILE_COUNT - 1) as f64))
                .collect(),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Pairwise-distance distributions for `"all"` and each genre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub metric: MetricKind,
    /// `"all"` first, then genres in lexicographic order. Genres with fewer
    /// than two songs have no pairs and are omitted.
    pub groups: Vec<(String, GroupStats)>,
}

pub const ALL_GROUP: &str = "all";

impl DistributionSummary {
    pub fn group(&self, name: &str) -> Option<&GroupStats> {
        self.groups.iter().find(|(g, _)| g == name).map(|(_, s)| s)
    }

    /// Rows of `group,stat_name,value` with a header line.
    pub fn to_violin_csv(&self) -> String {
        let mut s = String::from("group,stat_name,value\n");
        for (g, st) in &self.groups {
            for (name, v) in [
                ("count", st.count as f64),
                ("min", st.min),
                ("q1", st.q1),
                ("median", st.median),
                ("q3", st.q3),
                ("max", st.max),
                ("mean", st.mean),
                ("stddev", st.stddev),
            ] {
                let _ = writeln!(s, "{g},{name},{v:?}");
            }
            for (i, v) in st.quantiles.iter().enumerate() {
                let _ = writeln!(s, "{g},q{i:03},{v:?}");
            }
        }
        s
    }
}

pub fn distribution_summary(m: &DistanceMatrix, genre_of: &BTreeMap<String, Genre>) -> Result<DistributionSummary> {
    let genres: Vec<Genre> = m
        .ids
        .iter()
        .map(|id| {
            genre_of
                .get(id)
                .copied()
                .ok_or_else(|| Error::Input(format!("no genre for id '{id}'")))
        })
        .collect::<Result<_>>()?;
    let mut all = Vec::new();
    let mut per: BTreeMap<Genre, Vec<f64>> = BTreeMap::new();
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            let v = m.values[[i, j]];
            all.push(v);
            if genres[i] == genres[j] {
                per.entry(genres[i]).or_default().push(v);
            }
        }
    }
    let mut groups = Vec::new();
    if let Some(s) = GroupStats::from_values(all) {
        groups.push((ALL_GROUP.to_string(), s));
    }
    for (g, v) in per {
        if let Some(s) = GroupStats::from_values(v) {
            groups.push((g.name().to_string(), s));
        }
    }
    Ok(DistributionSummary {
        metric: m.metric,
        groups,
    })
}

/// Within-genre IQR relative to the IQR over all pairs.
pub fn spread_ratio(summary: &DistributionSummary, genre: Genre) -> Result<f64> {
    let all = summary
        .group(ALL_GROUP)
        .ok_or_else(|| Error::Input("summary has no 'all' group".into()))?;
    let g = summary
        .group(genre.name())
        .ok_or_else(|| Error::Input(format!("summary has no group for {genre}")))?;
    let denom = all.iqr();
    if denom == 0.0 {
        return Err(Error::Degenerate("interquartile range over all pairs is zero".into()));
    }
    Ok(g.iqr() / denom)
}

/// Mean of [`spread_ratio`] over the genres present in the summary.
pub fn mean_spread_ratio(summary: &DistributionSummary) -> Result<f64> {
    let genres: Vec<Genre> = summary
        .groups
        .iter()
        .filter_map(|(g, _)| g.parse::<Genre>().ok())
        .collect();
    if genres.is_empty() {
        return Err(Error::Input("summary has no genre groups".into()));
    }
    let total: f64 = genres.iter().map(|&g| spread_ratio(summary, g)).sum::<Result<f64>>()?;
    Ok(total / genres.len() as f64)
}

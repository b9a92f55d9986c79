//! GTZAN ingestion: manifest, exclusion filtering, splits, and spectrogram
//! preprocessing.

pub mod io;
pub mod mel;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Matrix, Scalar};
use crate::seed;

pub use io::{read_matrix, write_matrix, SpecFormat};
pub use mel::{compute_mel, MelParams};

/// Frames whose peak magnitude is at or below this are padding.
pub const EPS_PAD: f64 = 1e-10;

/// Exclusion list shipped with the crate: duplicated or distorted GTZAN clips.
pub const GTZAN_EXCLUSIONS: &str = include_str!("../../data/gtzan_exclusions.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genre {
    Blues,
    Classical,
    Country,
    Disco,
    #[serde(rename = "hiphop")]
    HipHop,
    Jazz,
    Metal,
    Pop,
    Reggae,
    Rock,
}

impl Genre {
    /// Lexicographic order of the directory names.
    pub const ALL: [Genre; 10] = [
        Genre::Blues,
        Genre::Classical,
        Genre::Country,
        Genre::Disco,
        Genre::HipHop,
        Genre::Jazz,
        Genre::Metal,
        Genre::Pop,
        Genre::Reggae,
        Genre::Rock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Genre::Blues => "blues",
            Genre::Classical => "classical",
            Genre::Country => "country",
            Genre::Disco => "disco",
            Genre::HipHop => "hiphop",
            Genre::Jazz => "jazz",
            Genre::Metal => "metal",
            Genre::Pop => "pop",
            Genre::Reggae => "reggae",
            Genre::Rock => "rock",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Genre {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Genre::ALL
            .into_iter()
            .find(|g| g.name() == norm)
            .ok_or_else(|| Error::Ingestion(format!("unknown genre '{s}'")))
    }
}

/// Per-genre (train, valid, test) counts of the filtered corpus.
pub const FILTERED_SPLIT_COUNTS: [(Genre, [usize; 3]); 10] = [
    (Genre::Blues, [46, 23, 31]),
    (Genre::Classical, [48, 20, 31]),
    (Genre::Country, [45, 23, 30]),
    (Genre::Disco, [42, 22, 29]),
    (Genre::HipHop, [47, 18, 27]),
    (Genre::Jazz, [43, 17, 27]),
    (Genre::Metal, [44, 20, 27]),
    (Genre::Pop, [41, 13, 30]),
    (Genre::Reggae, [43, 17, 26]),
    (Genre::Rock, [44, 24, 32]),
];

pub type SplitCounts = BTreeMap<Genre, [usize; 3]>;

pub fn filtered_split_counts() -> SplitCounts {
    FILTERED_SPLIT_COUNTS.into_iter().collect()
}

/// A labelled spectrogram: rows are mel bands, columns time frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T = f64> {
    pub id: String,
    pub genre: Option<Genre>,
    pub data: Matrix<T>,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn new(id: impl Into<String>, genre: Option<Genre>, data: Matrix<T>) -> Result<Self> {
        let id = id.into();
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Input(format!("spectrogram '{id}' is empty")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("spectrogram '{id}' has non-finite values")));
        }
        Ok(Self { id, genre, data })
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }
}

/// Loads a spectrogram from a `SPC1` or CSV file; the id is the file stem.
pub fn load_spectrogram<T: Scalar>(path: &Path) -> Result<Spectrogram<T>> {
    let data = read_matrix(path)?;
    Spectrogram::new(file_id(path), None, data)
}

pub fn save_spectrogram<T: Scalar>(spec: &Spectrogram<T>, path: &Path) -> Result<()> {
    write_matrix(path, &spec.data)
}

/// Removes leading and trailing frames whose peak magnitude is `<= EPS_PAD`.
pub fn trim_padding<T: Scalar>(spec: &Spectrogram<T>) -> Result<Spectrogram<T>> {
    let eps = T::lit(EPS_PAD);
    let live = |j: usize| spec.data.column(j).iter().any(|v| v.abs() > eps);
    let first = (0..spec.frames()).find(|&j| live(j));
    let Some(first) = first else {
        return Err(Error::Degenerate(format!(
            "spectrogram '{}' is entirely silent",
            spec.id
        )));
    };
    let last = (0..spec.frames()).rev().find(|&j| live(j)).expect("first exists");
    let data = spec.data.slice(ndarray::s![.., first..=last]).to_owned();
    Ok(Spectrogram {
        id: spec.id.clone(),
        genre: spec.genre,
        data,
    })
}

/// Affine map `lo -> 0`, `hi -> 1`, clamped to `[0, 1]`.
pub fn normalize<T: Scalar>(spec: &Spectrogram<T>, lo: f64, hi: f64) -> Result<Spectrogram<T>> {
    if !(hi > lo) {
        return Err(Error::Config(format!(
            "normalization range must satisfy hi > lo (got lo={lo}, hi={hi})"
        )));
    }
    let (lo_t, span) = (T::lit(lo), T::lit(hi - lo));
    let data = spec.data.mapv(|v| ((v - lo_t) / span).max(T::zero()).min(T::one()));
    Ok(Spectrogram {
        id: spec.id.clone(),
        genre: spec.genre,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub genre: Genre,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub excluded: Vec<String>,
    pub value_range: Option<ValueRange>,
}

fn file_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Parses an exclusion list: one id per line, `#` starts a comment.
pub fn parse_exclusions(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.strip_suffix(".wav").unwrap_or(l).to_string())
        .collect()
}

impl DatasetManifest {
    pub fn genre_of(&self) -> BTreeMap<String, Genre> {
        self.entries.iter().map(|e| (e.id.clone(), e.genre)).collect()
    }

    pub fn genre_totals(&self) -> BTreeMap<Genre, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.genre).or_insert(0) += 1;
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Keeps only the entries for which `keep` is true.
    pub fn filtered(&self, keep: impl Fn(&ManifestEntry) -> bool) -> Self {
        Self {
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
            excluded: self.excluded.clone(),
            value_range: self.value_range,
        }
    }
}

/// Scans `root/<genre>/*` for spectrogram or audio files, dropping excluded
/// ids. Entries are sorted by id.
pub fn build_manifest(root: &Path, exclusion_list: Option<&Path>) -> Result<DatasetManifest> {
    let exclusions = match exclusion_list {
        Some(p) => parse_exclusions(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => BTreeSet::new(),
    };
    build_manifest_with(root, &exclusions)
}

pub fn build_manifest_with(root: &Path, exclusions: &BTreeSet<String>) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Config(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .filter(|p| !file_id(p).starts_with('.'))
        .collect();
    dirs.sort();
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for dir in dirs {
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let genre: Genre = name
            .parse()
            .map_err(|_| Error::Ingestion(format!("unknown genre directory '{}'", dir.display())))?;
        for file in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = file.map_err(|e| Error::io(&dir, e))?.path();
            if !path.is_file() || SpecFormat::from_path(&path).is_none() {
                continue;
            }
            let id = file_id(&path);
            if !seen.insert(id.clone()) {
                return Err(Error::Ingestion(format!("duplicate id '{id}'")));
            }
            if !exclusions.contains(&id) {
                entries.push(ManifestEntry { id, genre, path });
            }
        }
    }
    for missing in exclusions.iter().filter(|id| !seen.contains(*id)) {
        log::warn!("exclusion id '{missing}' not present in corpus");
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(DatasetManifest {
        entries,
        excluded: exclusions.iter().cloned().collect(),
        value_range: None,
    })
}

/// Loads the raw (un-normalized) spectrogram for a manifest entry, computing
/// a log-mel spectrogram for audio files.
pub fn load_entry(entry: &ManifestEntry, mel: &MelParams) -> Result<Spectrogram<f64>> {
    let data = match SpecFormat::from_path(&entry.path) {
        Some(SpecFormat::Wav) => {
            let (samples, rate) = io::read_wav(&entry.path)?;
            if rate != mel.sample_rate {
                return Err(Error::Input(format!(
                    "{}: sample rate {rate} Hz, expected {} Hz",
                    entry.path.display(),
                    mel.sample_rate
                )));
            }
            compute_mel(&samples, mel)?
        }
        _ => read_matrix(&entry.path)?,
    };
    Spectrogram::new(entry.id.clone(), Some(entry.genre), data)
}

/// Global min/max over every spectrogram in the manifest.
pub fn scan_value_range(manifest: &DatasetManifest, mel: &MelParams) -> Result<ValueRange> {
    let ranges: Vec<(f64, f64)> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let s = load_entry(e, mel)?;
            let lo = s.data.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = s.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok((lo, hi))
        })
        .collect::<Result<_>>()?;
    if ranges.is_empty() {
        return Err(Error::Config("manifest has no entries".into()));
    }
    let lo = ranges.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let hi = ranges.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(ValueRange { lo, hi })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn ids(&self, split: Split) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Split sizes for a corpus that does not match the canonical totals:
/// roughly the canonical 443/197/290 proportions, with every split
/// non-empty once a genre has three or more songs.
pub fn proportional_counts(totals: &BTreeMap<Genre, usize>) -> SplitCounts {
    totals
        .iter()
        .map(|(&g, &n)| {
            let c = match n {
                0 => [0, 0, 0],
                1 => [1, 0, 0],
                2 => [1, 0, 1],
                _ => {
                    let valid = ((n as f64 * 197.0 / 930.0).round() as usize).max(1);
                    let test = ((n as f64 * 290.0 / 930.0).round() as usize).max(1);
                    [n - valid - test, valid, test]
                }
            };
            (g, c)
        })
        .collect()
}

/// Canonical counts when the manifest reproduces the filtered totals,
/// proportional counts otherwise.
pub fn default_counts(manifest: &DatasetManifest) -> SplitCounts {
    let totals = manifest.genre_totals();
    let canonical = filtered_split_counts();
    let matches =
        canonical.len() == totals.len() && canonical.iter().all(|(g, c)| totals.get(g) == Some(&c.iter().sum()));
    if matches {
        canonical
    } else {
        proportional_counts(&totals)
    }
}

/// Shuffles each genre's ids with the seeded generator and deals them out
/// train, then valid, then test.
pub fn assign_splits(manifest: &DatasetManifest, counts: &SplitCounts, seed_value: u64) -> Result<SplitAssignment> {
    let mut by_genre: BTreeMap<Genre, Vec<&str>> = BTreeMap::new();
    for e in &manifest.entries {
        by_genre.entry(e.genre).or_default().push(&e.id);
    }
    for (g, ids) in &by_genre {
        let requested: usize = counts.get(g).map(|c| c.iter().sum()).unwrap_or(0);
        if requested != ids.len() {
            return Err(Error::Config(format!(
                "split counts for {g} sum to {requested}, manifest has {}",
                ids.len()
            )));
        }
    }
    if let Some(g) = counts
        .iter()
        .find(|(g, c)| !by_genre.contains_key(*g) && c.iter().sum::<usize>() > 0)
        .map(|(g, _)| g)
    {
        return Err(Error::Config(format!("split counts given for absent genre {g}")));
    }
    let mut rng = seed::rng(seed_value);
    let mut assignment = BTreeMap::new();
    for (g, mut ids) in by_genre {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let c = counts[&g];
        let mut it = ids.into_iter();
        for (split, n) in Split::ALL.into_iter().zip(c) {
            for id in it.by_ref().take(n) {
                assignment.insert(id.to_string(), split);
            }
        }
    }
    Ok(SplitAssignment {
        seed: seed_value,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn manifest(n_per: &[(Genre, usize)]) -> DatasetManifest {
        let mut entries = Vec::new();
        for &(g, n) in n_per {
            for i in 0..n {
                entries.push(ManifestEntry {
                    id: format!("{g}.{i:05}"),
                    genre: g,
                    path: PathBuf::new(),
                });
            }
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        DatasetManifest {
            entries,
            excluded: vec![],
            value_range: None,
        }
    }

    #[test]
    fn genre_parsing() {
        assert_eq!("hiphop".parse::<Genre>().unwrap(), Genre::HipHop);
        assert_eq!("Hip Hop".parse::<Genre>().unwrap(), Genre::HipHop);
        assert!("polka".parse::<Genre>().is_err());
        let names: Vec<_> = Genre::ALL.iter().map(|g| g.name()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn filtered_totals() {
        let total: usize = FILTERED_SPLIT_COUNTS.iter().map(|(_, c)| c.iter().sum::<usize>()).sum();
        assert_eq!(total, 930);
        assert_eq!(filtered_split_counts()[&Genre::Blues], [46, 23, 31]);
    }

    #[test]
    fn trim_examples() {
        let s = Spectrogram::new("x", None, array![[0.0, 1.0, 2.0, 0.0], [0.0, 3.0, 4.0, 0.0]]).unwrap();
        let t = trim_padding(&s).unwrap();
        assert_eq!(t.data, array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(trim_padding(&t).unwrap(), t);
        let z = Spectrogram::new("z", None, Matrix::<f64>::zeros((3, 5))).unwrap();
        assert!(matches!(trim_padding(&z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn interior_silence_is_kept() {
        let s = Spectrogram::new("x", None, array![[1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(trim_padding(&s).unwrap().data, s.data);
    }

    #[test]
    fn normalize_examples() {
        let s = Spectrogram::new("x", None, array![[-80.0, -40.0, 0.0, -100.0, 5.0]]).unwrap();
        let n = normalize(&s, -80.0, 0.0).unwrap();
        assert_eq!(n.data, array![[0.0, 0.5, 1.0, 0.0, 1.0]]);
        assert_eq!(normalize(&n, 0.0, 1.0).unwrap(), n);
        assert!(matches!(normalize(&s, 1.0, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn splits_follow_counts() {
        let m = manifest(&[(Genre::Blues, 100), (Genre::Jazz, 87)]);
        let mut counts = SplitCounts::new();
        counts.insert(Genre::Blues, [46, 23, 31]);
        counts.insert(Genre::Jazz, [43, 17, 27]);
        let a = assign_splits(&m, &counts, 1).unwrap();
        assert_eq!(a.assignment.len(), 187);
        let blues_train = a
            .assignment
            .iter()
            .filter(|(id, s)| id.starts_with("blues") && **s == Split::Train)
            .count();
        assert_eq!(blues_train, 46);
        assert_eq!(a.ids(Split::Test).len(), 31 + 27);
        let b = assign_splits(&m, &counts, 1).unwrap();
        assert_eq!(a, b);
        let c = assign_splits(&m, &counts, 2).unwrap();
        assert_ne!(a.assignment, c.assignment);
    }

    #[test]
    fn degenerate_split_and_bad_counts() {
        let m = manifest(&[(Genre::Rock, 5)]);
        let mut counts = SplitCounts::new();
        counts.insert(Genre::Rock, [5, 0, 0]);
        let a = assign_splits(&m, &counts, 3).unwrap();
        assert!(a.assignment.values().all(|s| *s == Split::Train));
        counts.insert(Genre::Rock, [4, 0, 0]);
        assert!(matches!(assign_splits(&m, &counts, 3), Err(Error::Config(_))));
    }

    #[test]
    fn proportional_counts_cover_every_song() {
        let m = manifest(&[(Genre::Blues, 3), (Genre::Pop, 10), (Genre::Rock, 1)]);
        let counts = default_counts(&m);
        for (g, n) in m.genre_totals() {
            assert_eq!(counts[&g].iter().sum::<usize>(), n);
        }
        assert_eq!(counts[&Genre::Blues], [1, 1, 1]);
    }

    #[test]
    fn exclusion_parsing() {
        let set = parse_exclusions("# header\nblues.00001\n\njazz.00002.wav  # dup\n");
        assert_eq!(set.len(), 2);
        assert!(set.contains("jazz.00002"));
    }

    #[test]
    fn shipped_exclusions_match_filtered_totals() {
        let set = parse_exclusions(GTZAN_EXCLUSIONS);
        assert_eq!(set.len(), 70);
        for (g, c) in FILTERED_SPLIT_COUNTS {
            let removed = set.iter().filter(|id| id.starts_with(&format!("{g}."))).count();
            assert_eq!(100 - removed, c.iter().sum::<usize>(), "{g}");
        }
    }
}

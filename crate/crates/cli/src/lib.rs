//! Experiment orchestration behind the `percepta` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use percepta::autoencoder::{ae_train, extract_features, save_params, AEConfig};
use percepta::classifier::{logreg_predict, logreg_select_l2, EvalReport, LogRegConfig, Standardizer};
use percepta::dataset::{
    assign_splits, build_manifest_with, default_counts, load_entry, normalize, parse_exclusions, trim_padding,
    DatasetManifest, Genre, MelParams, Spectrogram, Split, SplitAssignment, ValueRange, GTZAN_EXCLUSIONS,
};
use percepta::knn::{knn_evaluate, select_k};
use percepta::pairwise::{compute_pairwise, distribution_summary, mean_spread_ratio, save_matrix, AlignmentPolicy};
use percepta::seed::{config_hash, derive_seed, hash_hex, rng};
use percepta::{MetricKind, MetricsConfig};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Published weighted F1 for KNN on pairwise distances.
pub const REFERENCE_KNN_F1: [(MetricKind, f64); 3] = [
    (MetricKind::Mse, 0.220),
    (MetricKind::OneMinusMsSsim, 0.266),
    (MetricKind::Nlpd, 0.035),
];

/// Published weighted F1 for logistic regression on latent features.
pub const REFERENCE_LR_F1: [(MetricKind, f64); 3] = [
    (MetricKind::Mse, 0.355),
    (MetricKind::OneMinusMsSsim, 0.426),
    (MetricKind::Nlpd, 0.439),
];

/// Neighbour counts reported alongside the reference KNN results.
pub const REFERENCE_K: [(MetricKind, usize); 3] = [
    (MetricKind::Mse, 7),
    (MetricKind::OneMinusMsSsim, 3),
    (MetricKind::Nlpd, 4),
];

pub fn reference_value<T: Copy>(table: &[(MetricKind, T)], kind: MetricKind) -> T {
    table.iter().find(|(k, _)| *k == kind).expect("all kinds listed").1
}

/// Everything that determines a run. The output directory is not part of
/// the hash or the echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Corpus laid out as `<root>/<genre>/<id>.{wav,spc,csv}`.
    pub dataset_root: Option<PathBuf>,
    /// A prepared manifest; takes precedence over `dataset_root`.
    pub manifest: Option<PathBuf>,
    /// Exclusion list; the shipped GTZAN list is used when absent.
    pub exclusions: Option<PathBuf>,
    pub apply_exclusions: bool,
    /// Precomputed split assignment; derived from `seed` when absent.
    pub splits: Option<PathBuf>,
    pub seed: u64,
    /// Keep at most this many songs per genre (seeded choice).
    pub subsample_per_genre: Option<usize>,
    pub metrics: Vec<MetricKind>,
    pub metrics_config: MetricsConfig,
    pub mel: MelParams,
    pub alignment: AlignmentPolicy,
    pub k_min: usize,
    pub k_max: usize,
    pub autoencoder: AEConfig,
    pub logreg: LogRegConfig,
    pub l2_candidates: Vec<f64>,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_root: None,
            manifest: None,
            exclusions: None,
            apply_exclusions: true,
            splits: None,
            seed: 0,
            subsample_per_genre: None,
            metrics: MetricKind::ALL.to_vec(),
            metrics_config: MetricsConfig::default(),
            mel: MelParams::default(),
            alignment: AlignmentPolicy::default(),
            k_min: 1,
            k_max: 30,
            autoencoder: AEConfig::default(),
            logreg: LogRegConfig::default(),
            l2_candidates: vec![1e-4, 1e-3, 1e-2],
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(percepta::Error::from)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn hash(&self) -> u64 {
        config_hash(self)
    }

    pub fn hash_hex(&self) -> String {
        hash_hex(self.hash())
    }

    /// Metrics in canonical table order, deduplicated.
    pub fn metric_order(&self) -> Vec<MetricKind> {
        MetricKind::ALL
            .into_iter()
            .filter(|k| self.metrics.contains(k))
            .collect()
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.manifest.is_none() && self.dataset_root.is_none() {
            config_error("no input: set `manifest` or `dataset_root`")?;
        }
        if self.metrics.is_empty() {
            config_error("no metrics selected")?;
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            config_error(format!("invalid k range {}..={}", self.k_min, self.k_max))?;
        }
        if self.l2_candidates.is_empty() || self.l2_candidates.iter().any(|l| !(*l >= 0.0)) {
            config_error("l2_candidates must be non-empty and non-negative")?;
        }
        self.metrics_config.validate()?;
        Ok(())
    }

    pub fn autoencoder_for(&self, loss: MetricKind) -> AEConfig {
        AEConfig {
            loss,
            seed: derive_seed(self.seed, &format!("autoencoder/{}", loss.slug())),
            ..self.autoencoder.clone()
        }
    }
}

fn config_error(msg: impl Into<String>) -> anyhow::Result<()> {
    Err(percepta::Error::Config(msg.into()).into())
}

/// Exclusive use of an output directory for the lifetime of the guard.
pub struct DirLock {
    path: PathBuf,
}

pub const LOCK_NAME: &str = ".percepta.lock";

impl DirLock {
    pub fn acquire(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(percepta::Error::Config(format!(
                "output directory {} is in use by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))
            .into()),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Manifest, normalized spectrograms (in manifest order) and splits.
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub specs: Vec<Spectrogram<f64>>,
    pub splits: SplitAssignment,
}

impl Corpus {
    pub fn genre_of(&self) -> BTreeMap<String, Genre> {
        self.manifest.genre_of()
    }

    pub fn rows(&self, split: Split) -> Vec<usize> {
        self.manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| self.splits.assignment.get(&e.id) == Some(&split))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Builds (or loads) the manifest with exclusions and optional
/// subsampling, but reads no spectrogram data.
pub fn resolve_manifest(cfg: &ExperimentConfig) -> anyhow::Result<DatasetManifest> {
    let mut manifest = if let Some(path) = &cfg.manifest {
        DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))?
    } else {
        let root = cfg.dataset_root.as_ref().expect("validated");
        let exclusions = if !cfg.apply_exclusions {
            Default::default()
        } else if let Some(p) = &cfg.exclusions {
            parse_exclusions(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
        } else {
            parse_exclusions(GTZAN_EXCLUSIONS)
        };
        build_manifest_with(root, &exclusions)?
    };
    if let Some(n) = cfg.subsample_per_genre {
        let mut r = rng(derive_seed(cfg.seed, "subsample"));
        let mut keep = std::collections::BTreeSet::new();
        for g in Genre::ALL {
            let mut ids: Vec<&str> = manifest
                .entries
                .iter()
                .filter(|e| e.genre == g)
                .map(|e| e.id.as_str())
                .collect();
            ids.shuffle(&mut r);
            keep.extend(ids.into_iter().take(n).map(str::to_string));
        }
        manifest = manifest.filtered(|e| keep.contains(&e.id));
    }
    if manifest.entries.is_empty() {
        config_error("manifest has no entries")?;
    }
    Ok(manifest)
}

/// Loads every song, trims silent padding frames, then maps the corpus-wide
/// value range onto `[0, 1]`. Spectrograms follow manifest order.
pub fn load_normalized(cfg: &ExperimentConfig) -> anyhow::Result<(DatasetManifest, Vec<Spectrogram<f64>>)> {
    cfg.validate()?;
    let mut manifest = resolve_manifest(cfg)?;
    log::info!("loading {} songs", manifest.entries.len());
    let trimmed: Vec<Spectrogram<f64>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let s = load_entry(e, &cfg.mel)?;
            trim_padding(&s)
        })
        .collect::<percepta::Result<_>>()?;
    let range = match manifest.value_range {
        Some(r) => r,
        None => {
            let lo = trimmed
                .iter()
                .flat_map(|s| s.data.iter())
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let hi = trimmed
                .iter()
                .flat_map(|s| s.data.iter())
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            ValueRange { lo, hi }
        }
    };
    manifest.value_range = Some(range);
    let specs = trimmed
        .iter()
        .map(|s| normalize(s, range.lo, range.hi))
        .collect::<percepta::Result<_>>()?;
    Ok((manifest, specs))
}

/// [`load_normalized`] plus the split assignment.
pub fn prepare_corpus(cfg: &ExperimentConfig) -> anyhow::Result<Corpus> {
    let (manifest, specs) = load_normalized(cfg)?;
    let splits = match &cfg.splits {
        Some(p) => SplitAssignment::load(p).with_context(|| format!("loading splits {}", p.display()))?,
        None => assign_splits(&manifest, &default_counts(&manifest), derive_seed(cfg.seed, "splits"))?,
    };
    let missing: Vec<&str> = manifest
        .entries
        .iter()
        .filter(|e| !splits.assignment.contains_key(&e.id))
        .map(|e| e.id.as_str())
        .take(5)
        .collect();
    if !missing.is_empty() {
        config_error(format!("songs without a split assignment: {}", missing.join(", ")))?;
    }
    Ok(Corpus {
        manifest,
        specs,
        splits,
    })
}

/// First line of every CSV artifact.
pub fn hash_line(hash: &str) -> String {
    format!("# config_hash={hash}\n")
}

/// Reads the hash from an artifact: the CSV comment line or the JSON
/// `config_hash` field.
pub fn artifact_hash(path: &Path) -> anyhow::Result<Option<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(rest) = text.strip_prefix("# config_hash=") {
        return Ok(rest.lines().next().map(str::to_string));
    }
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(percepta::Error::from)?;
        return Ok(v.get("config_hash").and_then(|h| h.as_str()).map(str::to_string));
    }
    Ok(None)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, hash: &str, value: &T) -> anyhow::Result<()> {
    let mut v = serde_json::to_value(value).map_err(percepta::Error::from)?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("config_hash".into(), hash.into());
    }
    let mut text = serde_json::to_string_pretty(&v).map_err(percepta::Error::from)?;
    text.push('\n');
    write(path, text)
}

fn write_csv(path: &Path, hash: &str, body: &str) -> anyhow::Result<()> {
    write(path, hash_line(hash) + body)
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    config: &'a ExperimentConfig,
}

/// Config echo, manifest and splits shared by both experiments.
fn write_common(dir: &Path, cfg: &ExperimentConfig, corpus: &Corpus) -> anyhow::Result<()> {
    let hash = cfg.hash_hex();
    write_json(&dir.join("config.json"), &hash, &ConfigEcho { config: cfg })?;
    write_json(&dir.join("manifest.json"), &hash, &corpus.manifest)?;
    write_json(&dir.join("splits.json"), &hash, &corpus.splits)?;
    let mut t1 = String::from("genre,train,valid,test,total\n");
    for g in Genre::ALL {
        let mut c = [0usize; 3];
        for e in corpus.manifest.entries.iter().filter(|e| e.genre == g) {
            if let Some(s) = corpus.splits.assignment.get(&e.id) {
                c[*s as usize] += 1;
            }
        }
        let _ = writeln!(t1, "{g},{},{},{},{}", c[0], c[1], c[2], c.iter().sum::<usize>());
    }
    write_csv(&dir.join("split_counts.csv"), &hash, &t1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnOutcome {
    pub metric: MetricKind,
    pub k: usize,
    pub validation_f1: f64,
    pub curve: Vec<(usize, f64)>,
    pub mean_spread_ratio: f64,
    /// Share of test predictions in the blues and classical columns.
    pub blues_classical_share: f64,
    pub report: EvalReport,
    pub reference_k: usize,
    pub reference_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Summary {
    pub outcomes: Vec<KnnOutcome>,
}

impl Exp1Summary {
    pub fn get(&self, kind: MetricKind) -> Option<&KnnOutcome> {
        self.outcomes.iter().find(|o| o.metric == kind)
    }
}

/// Pairwise matrices, distance distributions, k selection and test
/// evaluation for every configured metric.
pub fn run_experiment_1(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<Exp1Summary> {
    let _lock = DirLock::acquire(dir)?;
    let corpus = prepare_corpus(cfg)?;
    let hash = cfg.hash_hex();
    write_common(dir, cfg, &corpus)?;
    let genre_of = corpus.genre_of();
    let train_size = corpus.rows(Split::Train).len();
    let k_max = cfg.k_max.min(train_size);
    if k_max < cfg.k_max {
        log::warn!("k range capped at {k_max} by the training split size");
    }
    if k_max < cfg.k_min {
        config_error(format!("training split has {train_size} songs, k_min is {}", cfg.k_min))?;
    }
    let mut outcomes = Vec::new();
    for kind in cfg.metric_order() {
        log::info!("{kind}: computing pairwise distances");
        let dm = compute_pairwise(&corpus.specs, kind, cfg.alignment, &cfg.metrics_config)?;
        let slug = kind.slug();
        save_matrix(&dm, &dir.join(format!("pairwise_{slug}.dmat")))?;
        let summary = distribution_summary(&dm, &genre_of)?;
        write_csv(&dir.join(format!("violin_{slug}.csv")), &hash, &summary.to_violin_csv())?;
        let spread = mean_spread_ratio(&summary).unwrap_or(f64::NAN);
        let sel = select_k(&dm, &corpus.splits, &genre_of, cfg.k_min..=k_max)?;
        write_csv(&dir.join(format!("kcurve_{slug}.csv")), &hash, &sel.curve_csv())?;
        let report = knn_evaluate(&dm, &corpus.splits, &genre_of, sel.k)?;
        write_csv(
            &dir.join(format!("knn_confusion_{slug}.csv")),
            &hash,
            &report.confusion_csv(),
        )?;
        let outcome = KnnOutcome {
            metric: kind,
            k: sel.k,
            validation_f1: sel.best_f1,
            curve: sel.curve,
            mean_spread_ratio: spread,
            blues_classical_share: report.predicted_share(&[Genre::Blues, Genre::Classical]),
            report,
            reference_k: reference_value(&REFERENCE_K, kind),
            reference_f1: reference_value(&REFERENCE_KNN_F1, kind),
        };
        log::info!(
            "{kind}: k={} validation F1 {:.3}, test F1 {:.3} (reference {:.3}, k={})",
            outcome.k,
            outcome.validation_f1,
            outcome.report.weighted_f1,
            outcome.reference_f1,
            outcome.reference_k
        );
        write_json(&dir.join(format!("knn_report_{slug}.json")), &hash, &outcome)?;
        outcomes.push(outcome);
    }
    let mut table = String::from("metric,k,validation_f1,test_weighted_f1,reference_f1,reference_k\n");
    for o in &outcomes {
        let _ = writeln!(
            table,
            "{},{},{:.6},{:.6},{:.3},{}",
            o.metric, o.k, o.validation_f1, o.report.weighted_f1, o.reference_f1, o.reference_k
        );
    }
    write_csv(&dir.join("table_knn.csv"), &hash, &table)?;
    let summary = Exp1Summary { outcomes };
    write_json(&dir.join("exp1_summary.json"), &hash, &summary)?;
    Ok(summary)
}

pub fn features_csv(ids: &[String], genres: &[Genre], features: &[Vec<f64>]) -> String {
    let dims = features.first().map_or(0, Vec::len);
    let mut s = String::from("id,genre");
    for d in 0..dims {
        let _ = write!(s, ",f{d}");
    }
    s.push('\n');
    for ((id, g), f) in ids.iter().zip(genres).zip(features) {
        let _ = write!(s, "{id},{g}");
        for v in f {
            let _ = write!(s, ",{v:?}");
        }
        s.push('\n');
    }
    s
}

/// Parses a features CSV: optional `#` lines, a header, then
/// `id,genre,values...` rows.
pub fn parse_features_csv(text: &str) -> anyhow::Result<(Vec<String>, Vec<Genre>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().context("features file is empty")?;
    let dims = header.split(',').count().saturating_sub(2);
    let (mut ids, mut genres, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let mut it = line.split(',');
        let id = it.next().unwrap_or_default().to_string();
        let genre: Genre = it
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| percepta::Error::Input(format!("row {}: bad genre", n + 1)))?;
        let row: Vec<f64> = it
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| percepta::Error::Input(format!("row {}: {e}", n + 1)))?;
        if row.len() != dims {
            bail!(percepta::Error::Input(format!(
                "row {} has {} values, header has {dims}",
                n + 1,
                row.len()
            )));
        }
        ids.push(id);
        genres.push(genre);
        rows.push(row);
    }
    Ok((ids, genres, rows))
}

fn to_matrix(rows: &[Vec<f64>], pick: &[usize]) -> percepta::Matrix64 {
    let dims = rows.first().map_or(0, Vec::len);
    percepta::Matrix64::from_shape_fn((pick.len(), dims), |(i, j)| rows[pick[i]][j])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrOutcome {
    pub loss: MetricKind,
    pub l2: f64,
    pub l2_curve: Vec<(f64, f64)>,
    pub iterations: usize,
    pub report: EvalReport,
    pub reference_f1: f64,
}

/// Standardizes with train statistics, picks `l2` on validation and
/// evaluates on test.
pub fn logreg_experiment(
    cfg: &ExperimentConfig,
    features: &[Vec<f64>],
    genres: &[Genre],
    split_of: &[Option<Split>],
    loss: MetricKind,
) -> anyhow::Result<LrOutcome> {
    let rows = |s: Split| -> Vec<usize> { (0..features.len()).filter(|&i| split_of[i] == Some(s)).collect() };
    let (train, valid, test) = (rows(Split::Train), rows(Split::Valid), rows(Split::Test));
    if train.is_empty() || valid.is_empty() || test.is_empty() {
        config_error("logistic regression needs non-empty train, valid and test splits")?;
    }
    let all = to_matrix(features, &(0..features.len()).collect::<Vec<_>>());
    let scaler = Standardizer::fit_rows(&all, &train);
    let x = |idx: &[usize]| scaler.transform(&to_matrix(features, idx));
    let y = |idx: &[usize]| idx.iter().map(|&i| genres[i]).collect::<Vec<_>>();
    let (model, l2, l2_curve) = logreg_select_l2(
        &x(&train),
        &y(&train),
        &x(&valid),
        &y(&valid),
        &cfg.logreg,
        &cfg.l2_candidates,
    )?;
    let pred = logreg_predict(&model, &x(&test))?;
    Ok(LrOutcome {
        loss,
        l2,
        l2_curve,
        iterations: model.iterations,
        report: EvalReport::from_predictions(&y(&test), &pred)?,
        reference_f1: reference_value(&REFERENCE_LR_F1, loss),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2Summary {
    pub outcomes: Vec<LrOutcome>,
}

impl Exp2Summary {
    pub fn get(&self, kind: MetricKind) -> Option<&LrOutcome> {
        self.outcomes.iter().find(|o| o.loss == kind)
    }
}

/// Trains one autoencoder per loss on noise, extracts quantized pooled
/// features for every song and evaluates logistic regression on them.
pub fn run_experiment_2(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<Exp2Summary> {
    let _lock = DirLock::acquire(dir)?;
    let corpus = prepare_corpus(cfg)?;
    let hash = cfg.hash_hex();
    write_common(dir, cfg, &corpus)?;
    let ids: Vec<String> = corpus.manifest.entries.iter().map(|e| e.id.clone()).collect();
    let genres: Vec<Genre> = corpus.manifest.entries.iter().map(|e| e.genre).collect();
    let split_of: Vec<Option<Split>> = ids.iter().map(|id| corpus.splits.assignment.get(id).copied()).collect();
    let mut outcomes = Vec::new();
    for loss in cfg.metric_order() {
        let slug = loss.slug();
        let ae_cfg = cfg.autoencoder_for(loss);
        log::info!("{loss}: training autoencoder for {} steps", ae_cfg.steps);
        let (params, curve) = ae_train(&ae_cfg)?;
        save_params(&params, &dir.join(format!("ae_{slug}.aep")))?;
        let mut c = String::from("step,loss\n");
        for (i, l) in curve.iter().enumerate() {
            let _ = writeln!(c, "{i},{l:?}");
        }
        write_csv(&dir.join(format!("ae_curve_{slug}.csv")), &hash, &c)?;
        let features: Vec<Vec<f64>> = corpus
            .specs
            .par_iter()
            .map(|s| extract_features(&params, s))
            .collect::<percepta::Result<_>>()?;
        write_csv(
            &dir.join(format!("features_{slug}.csv")),
            &hash,
            &features_csv(&ids, &genres, &features),
        )?;
        let outcome = logreg_experiment(cfg, &features, &genres, &split_of, loss)?;
        log::info!(
            "{loss}: l2={} test F1 {:.3} (reference {:.3})",
            outcome.l2,
            outcome.report.weighted_f1,
            outcome.reference_f1
        );
        write_csv(
            &dir.join(format!("lr_confusion_{slug}.csv")),
            &hash,
            &outcome.report.confusion_csv(),
        )?;
        write_json(&dir.join(format!("lr_report_{slug}.json")), &hash, &outcome)?;
        outcomes.push(outcome);
    }
    let mut table = String::from("loss,l2,test_weighted_f1,reference_f1\n");
    for o in &outcomes {
        let _ = writeln!(
            table,
            "{},{},{:.6},{:.3}",
            o.loss, o.l2, o.report.weighted_f1, o.reference_f1
        );
    }
    write_csv(&dir.join("table_lr.csv"), &hash, &table)?;
    let summary = Exp2Summary { outcomes };
    write_json(&dir.join("exp2_summary.json"), &hash, &summary)?;
    Ok(summary)
}

/// Checks that every artifact in `dir` carries the hash in `config.json`,
/// then writes the combined results table.
pub fn build_report(dir: &Path) -> anyhow::Result<String> {
    let expected = artifact_hash(&dir.join("config.json"))?
        .ok_or_else(|| percepta::Error::Input(format!("{}/config.json has no config hash", dir.display())))?;
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "json"))
        .filter(|p| p.file_name().is_some_and(|n| n != "results.csv"))
        .collect();
    names.sort();
    for p in &names {
        if let Some(h) = artifact_hash(p)? {
            if h != expected {
                bail!(percepta::Error::Input(format!(
                    "{} was produced by config {h}, not {expected}; refusing to mix runs",
                    p.display()
                )));
            }
        }
    }
    let read = |name: &str| -> anyhow::Result<Option<serde_json::Value>> {
        let p = dir.join(name);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p)?;
        Ok(Some(serde_json::from_str(&text).map_err(percepta::Error::from)?))
    };
    let exp1 = read("exp1_summary.json")?;
    let exp2 = read("exp2_summary.json")?;
    if exp1.is_none() && exp2.is_none() {
        bail!(percepta::Error::Config(format!(
            "{} holds neither experiment's results",
            dir.display()
        )));
    }
    let mut table = String::from("experiment,metric,weighted_f1,reference_f1\n");
    if let Some(v) = exp1 {
        let s: Exp1Summary = serde_json::from_value(v).map_err(percepta::Error::from)?;
        for o in &s.outcomes {
            let _ = writeln!(
                table,
                "knn,{},{:.3},{:.3}",
                o.metric, o.report.weighted_f1, o.reference_f1
            );
        }
    }
    if let Some(v) = exp2 {
        let s: Exp2Summary = serde_json::from_value(v).map_err(percepta::Error::from)?;
        for o in &s.outcomes {
            let _ = writeln!(
                table,
                "logreg,{},{:.3},{:.3}",
                o.loss, o.report.weighted_f1, o.reference_f1
            );
        }
    }
    write_csv(&dir.join("results.csv"), &expected, &table)?;
    Ok(table)
}

/// Genre from a `genre.00042`-style id.
pub fn genre_from_id(id: &str) -> Option<Genre> {
    id.split('.').next()?.parse().ok()
}

/// Exit status for an error: 2 for numerical failures, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<percepta::Error>())
        .any(percepta::Error::is_numerical);
    if numerical {
        2
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), ExperimentConfig { seed: 1, ..a.clone() }.hash());
    }

    #[test]
    fn config_round_trips_through_json() {
        let a = ExperimentConfig::default();
        let text = serde_json::to_string(&a).unwrap();
        let b: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(a, b);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 4, "metrics": ["nlpd"]}"#).unwrap();
        assert_eq!(partial.metric_order(), vec![MetricKind::Nlpd]);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(lock);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn features_csv_round_trip() {
        let ids = vec!["blues.00001".to_string(), "rock.00002".to_string()];
        let genres = vec![Genre::Blues, Genre::Rock];
        let f = vec![vec![0.1, 0.25], vec![1.0 / 3.0, 0.0]];
        let text = hash_line("abc") + &features_csv(&ids, &genres, &f);
        assert_eq!(parse_features_csv(&text).unwrap(), (ids, genres, f));
    }

    #[test]
    fn exit_codes() {
        let e: anyhow::Error = percepta::Error::Divergence {
            step: 3,
            loss: f64::NAN,
        }
        .into();
        assert_eq!(exit_code(&e.context("training")), 2);
        let e: anyhow::Error = percepta::Error::Config("x".into()).into();
        assert_eq!(exit_code(&e), 1);
        assert_eq!(genre_from_id("hiphop.00012"), Some(Genre::HipHop));
    }
}

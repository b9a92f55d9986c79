use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use percepta::autoencoder::{ae_train, extract_features, load_params, save_params};
use percepta::classifier::EvalReport;
use percepta::dataset::{read_matrix, Genre, Split, SplitAssignment};
use percepta::knn::{knn_evaluate, select_k};
use percepta::pairwise::{compute_pairwise, distribution_summary, load_matrix, save_matrix};
use percepta::seed::derive_seed;
use percepta::{distance, Matrix64, MetricKind};
use percepta_cli::*;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "percepta",
    version,
    about = "Perceptual spectrogram metrics for genre classification"
)]
struct Cli {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file, or directory for `exp1`, `exp2` and `report`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a corpus, apply exclusions and write a manifest plus splits.
    Prepare {
        #[arg(long)]
        root: Option<PathBuf>,
        /// Exclusion list; the shipped list is used otherwise.
        #[arg(long)]
        exclude: Option<PathBuf>,
        /// Keep every song.
        #[arg(long)]
        no_exclusions: bool,
    },
    /// Distance between two spectrogram files (.spc or .csv).
    Distance {
        #[arg(long)]
        metric: MetricKind,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// All-pairs distance matrix over a manifest.
    Pairwise {
        #[arg(long)]
        metric: MetricKind,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        violin: Option<PathBuf>,
    },
    /// Select k on validation and evaluate on test.
    Knn {
        #[arg(long)]
        dmat: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        /// Inclusive range such as `1..30`.
        #[arg(long, default_value = "1..30")]
        krange: String,
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Train an autoencoder on uniform noise.
    TrainAe {
        #[arg(long)]
        loss: MetricKind,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Pooled quantized latent features for every song in a manifest.
    Extract {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Logistic regression on extracted features.
    Logreg {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Pairwise distances, distributions and KNN for every metric.
    Exp1,
    /// Noise-trained autoencoders and logistic regression for every loss.
    Exp2,
    /// Verify a run directory and write the combined results table.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match cli.command {
        Command::Prepare {
            root,
            exclude,
            no_exclusions,
        } => {
            cfg.manifest = None;
            cfg.dataset_root = root.or(cfg.dataset_root);
            cfg.exclusions = exclude.or(cfg.exclusions);
            cfg.apply_exclusions &= !no_exclusions;
            cfg.splits = None;
            let corpus = prepare_corpus(&cfg)?;
            let path = out("manifest.json");
            corpus.manifest.save(&path)?;
            let splits = path.with_file_name("splits.json");
            corpus.splits.save(&splits)?;
            let totals = corpus.manifest.genre_totals();
            let mut line = format!("{} songs", corpus.manifest.entries.len());
            for (g, n) in &totals {
                let _ = write!(line, ", {g} {n}");
            }
            println!("{line}");
            log::info!("wrote {} and {}", path.display(), splits.display());
        }
        Command::Distance { metric, a, b } => {
            let a: Matrix64 = read_matrix(&a)?;
            let b: Matrix64 = read_matrix(&b)?;
            let (a, b) = cfg.alignment.align(&a, &b);
            let d = distance(metric, &a.to_owned(), &b.to_owned(), &cfg.metrics_config)?;
            println!("{d:.9}");
        }
        Command::Pairwise {
            metric,
            manifest,
            violin,
        } => {
            cfg.manifest = manifest.or(cfg.manifest);
            let (manifest, specs) = load_normalized(&cfg)?;
            let dm = compute_pairwise(&specs, metric, cfg.alignment, &cfg.metrics_config)?;
            save_matrix(&dm, &out(&format!("pairwise_{}.dmat", metric.slug())))?;
            if let Some(v) = violin {
                let summary = distribution_summary(&dm, &manifest.genre_of())?;
                fs::write(&v, hash_line(&cfg.hash_hex()) + &summary.to_violin_csv())
                    .with_context(|| format!("writing {}", v.display()))?;
            }
        }
        Command::Knn {
            dmat,
            splits,
            krange,
            curve,
            confusion,
        } => {
            let dm = load_matrix(&dmat)?;
            let splits = SplitAssignment::load(&splits)?;
            let labels = dm
                .ids
                .iter()
                .map(|id| {
                    genre_from_id(id)
                        .map(|g| (id.clone(), g))
                        .ok_or_else(|| percepta::Error::Input(format!("no genre prefix in id {id}")))
                })
                .collect::<Result<_, _>>()?;
            let range = parse_krange(&krange)?;
            let sel = select_k(&dm, &splits, &labels, range)?;
            let report = knn_evaluate(&dm, &splits, &labels, sel.k)?;
            let hash = format!("{:08x}", dm.config_hash);
            if let Some(c) = curve {
                fs::write(&c, hash_line(&hash) + &sel.curve_csv())?;
            }
            write_report(&out("knn_report.json"), &hash, &report, confusion.as_deref(), |v| {
                v.insert("metric".into(), serde_json::to_value(dm.metric).unwrap());
                v.insert("k".into(), sel.k.into());
                v.insert("validation_f1".into(), sel.best_f1.into());
            })?;
            println!("k={} weighted_f1={:.6}", sel.k, report.weighted_f1);
        }
        Command::TrainAe { loss, steps, curve } => {
            let mut ae = cfg.autoencoder_for(loss);
            if let Some(s) = cli.seed {
                ae.seed = derive_seed(s, &format!("autoencoder/{}", loss.slug()));
            }
            if let Some(s) = steps {
                ae.steps = s;
            }
            let (params, losses) = ae_train(&ae)?;
            save_params(&params, &out(&format!("ae_{}.aep", loss.slug())))?;
            if let Some(c) = curve {
                let mut s = String::from("step,loss\n");
                for (i, l) in losses.iter().enumerate() {
                    let _ = writeln!(s, "{i},{l:?}");
                }
                fs::write(
                    &c,
                    hash_line(&percepta::seed::hash_hex(percepta::seed::config_hash(&ae))) + &s,
                )?;
            }
            println!(
                "loss {:.6} -> {:.6}",
                losses.first().copied().unwrap_or(f64::NAN),
                losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Extract { params, manifest } => {
            let p = load_params(&params)?;
            cfg.manifest = manifest.or(cfg.manifest);
            let (manifest, specs) = load_normalized(&cfg)?;
            let features: Vec<Vec<f64>> = specs
                .par_iter()
                .map(|s| extract_features(&p, s))
                .collect::<percepta::Result<_>>()?;
            let ids: Vec<String> = manifest.entries.iter().map(|e| e.id.clone()).collect();
            let genres: Vec<Genre> = manifest.entries.iter().map(|e| e.genre).collect();
            let hash = percepta::seed::hash_hex(percepta::seed::config_hash(&p.config));
            let path = out("features.csv");
            fs::write(&path, hash_line(&hash) + &features_csv(&ids, &genres, &features))
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Command::Logreg {
            features,
            splits,
            confusion,
        } => {
            let text = fs::read_to_string(&features).with_context(|| format!("reading {}", features.display()))?;
            let hash = artifact_hash(&features)?.unwrap_or_default();
            let (ids, genres, rows) = parse_features_csv(&text)?;
            let splits = SplitAssignment::load(&splits)?;
            let split_of: Vec<Option<Split>> = ids.iter().map(|id| splits.assignment.get(id).copied()).collect();
            let loss = features_loss(&features).unwrap_or(MetricKind::Mse);
            let outcome = logreg_experiment(&cfg, &rows, &genres, &split_of, loss)?;
            write_report(
                &out("lr_report.json"),
                &hash,
                &outcome.report,
                confusion.as_deref(),
                |v| {
                    v.insert("l2".into(), outcome.l2.into());
                    v.insert("iterations".into(), outcome.iterations.into());
                },
            )?;
            println!("l2={} weighted_f1={:.6}", outcome.l2, outcome.report.weighted_f1);
        }
        Command::Exp1 => {
            let dir = out("out");
            let s = run_experiment_1(&cfg, &dir)?;
            for o in &s.outcomes {
                println!(
                    "{}: k={} test weighted F1 {:.3} (reference {:.3})",
                    o.metric, o.k, o.report.weighted_f1, o.reference_f1
                );
            }
        }
        Command::Exp2 => {
            let dir = out("out");
            let s = run_experiment_2(&cfg, &dir)?;
            for o in &s.outcomes {
                println!(
                    "{}: l2={} test weighted F1 {:.3} (reference {:.3})",
                    o.loss, o.l2, o.report.weighted_f1, o.reference_f1
                );
            }
        }
        Command::Report => {
            let dir = out("out");
            print!("{}", build_report(&dir)?);
        }
    }
    Ok(())
}

/// `a..b` or `a..=b`, both inclusive.
fn parse_krange(s: &str) -> anyhow::Result<std::ops::RangeInclusive<usize>> {
    let bad = || percepta::Error::Config(format!("bad k range '{s}', expected e.g. 1..30"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let b = b.strip_prefix('=').unwrap_or(b);
    Ok(a.trim().parse().map_err(|_| bad())?..=b.trim().parse().map_err(|_| bad())?)
}

fn features_loss(path: &Path) -> Option<MetricKind> {
    let stem = path.file_stem()?.to_str()?;
    stem.rsplit('_').next()?.parse().ok()
}

fn write_report(
    path: &Path,
    hash: &str,
    report: &EvalReport,
    confusion: Option<&Path>,
    extra: impl FnOnce(&mut serde_json::Map<String, serde_json::Value>),
) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Wrapper<'a> {
        config_hash: &'a str,
        report: &'a EvalReport,
    }
    let mut v = serde_json::to_value(Wrapper {
        config_hash: hash,
        report,
    })
    .map_err(percepta::Error::from)?;
    if let serde_json::Value::Object(map) = &mut v {
        extra(map);
    }
    fs::write(
        path,
        serde_json::to_string_pretty(&v).map_err(percepta::Error::from)? + "\n",
    )
    .with_context(|| format!("writing {}", path.display()))?;
    if let Some(c) = confusion {
        fs::write(c, hash_line(hash) + &report.confusion_csv()).with_context(|| format!("writing {}", c.display()))?;
    }
    Ok(())
}

#![allow(dead_code)]

use std::fs;
use std::path::Path;

use percepta::dataset::io::encode_binary;
use percepta::dataset::Genre;
use percepta::{Matrix64, MetricKind};
use percepta_cli::ExperimentConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `per_genre` songs per genre as `.spc` files of `bands x frames`, with a
/// genre-specific band profile plus noise and two silent padding frames.
pub fn synthetic_corpus(root: &Path, per_genre: usize, bands: usize, frames: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for g in Genre::ALL {
        let dir = root.join(g.name());
        fs::create_dir_all(&dir).unwrap();
        let centre = (g.index() as f64 + 0.5) / 10.0 * bands as f64;
        for i in 0..per_genre {
            let m = Matrix64::from_shape_fn((bands, frames + 2), |(r, c)| {
                if c < 2 {
                    return 0.0;
                }
                let bump = (-((r as f64 - centre) / 2.5).powi(2)).exp();
                let pulse = if (c + g.index()) % (2 + g.index() % 3) == 0 {
                    0.3
                } else {
                    0.0
                };
                0.1 + 0.5 * bump + pulse + 0.2 * rng.gen::<f64>()
            });
            fs::write(dir.join(format!("{}.{i:05}.spc", g.name())), encode_binary(&m)).unwrap();
        }
    }
}

/// Same file layout with constant content, for manifest-level checks.
pub fn flat_corpus(root: &Path, per_genre: usize) {
    for g in Genre::ALL {
        let dir = root.join(g.name());
        fs::create_dir_all(&dir).unwrap();
        for i in 0..per_genre {
            let m = Matrix64::from_elem((4, 4), 1.0);
            fs::write(dir.join(format!("{}.{i:05}.spc", g.name())), encode_binary(&m)).unwrap();
        }
    }
}

/// A config sized for seconds-long end-to-end runs on `synthetic_corpus`.
pub fn small_config(root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset_root: Some(root.to_path_buf()),
        apply_exclusions: false,
        seed: 5,
        k_max: 4,
        metrics: MetricKind::ALL.to_vec(),
        ..Default::default()
    };
    cfg.metrics_config.ssim.window_size = 5;
    cfg.metrics_config.ssim.window_sigma = 1.0;
    let ae = &mut cfg.autoencoder;
    ae.patch_size = 8;
    ae.channel_widths = vec![3, 4];
    ae.latent_channels = 2;
    ae.steps = 20;
    ae.batch = 2;
    ae.metrics.ssim.window_size = 3;
    ae.metrics.ssim.window_sigma = 0.75;
    cfg.logreg.max_iter = 300;
    cfg
}

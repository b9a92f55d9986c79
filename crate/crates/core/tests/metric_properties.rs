use percepta::metrics::{
    collapse, distance, laplacian_pyramid, nlpd, MetricKind, MetricsConfig, NlpdParams, GEN_KERNEL,
};
use percepta::scalar::Matrix;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
    Matrix::from_shape_simple_fn((r, c), || rng.gen::<f64>())
}

#[test]
fn identity_and_symmetry_on_random_matrices() {
    let cfg = MetricsConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_self = [0.0f64; 3];
    let mut worst_gap = [0.0f64; 3];
    for _ in 0..100 {
        let x = random(&mut rng, 32, 32);
        let y = random(&mut rng, 32, 32);
        for (i, kind) in MetricKind::ALL.into_iter().enumerate() {
            let d0 = distance(kind, &x, &x, &cfg).unwrap();
            let gap = (distance(kind, &x, &y, &cfg).unwrap() - distance(kind, &y, &x, &cfg).unwrap()).abs();
            worst_self[i] = worst_self[i].max(d0.abs());
            worst_gap[i] = worst_gap[i].max(gap);
        }
    }
    for (i, kind) in MetricKind::ALL.into_iter().enumerate() {
        println!(
            "{kind}: max d(x,x) {:.2e}, max symmetry gap {:.2e}",
            worst_self[i], worst_gap[i]
        );
        assert!(worst_self[i] <= 1e-6);
        assert!(worst_gap[i] <= 1e-9);
    }
}

#[test]
fn pyramid_is_invertible_at_every_depth() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for depth in 1..=5 {
        let mut worst = 0.0f64;
        for t in 0..20 {
            // Mix even and odd shapes; depth 5 needs both sides >= 64.
            let (r, c) = (64 + t % 3, 64 + (t * 5) % 7);
            let x = random(&mut rng, r, c);
            let p = laplacian_pyramid(&x, depth, &GEN_KERNEL).unwrap();
            let back = collapse(&p, &GEN_KERNEL).unwrap();
            let err = (&back - &x).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            worst = worst.max(err);
        }
        println!("depth {depth}: max reconstruction error {worst:.2e}");
        assert!(worst <= 1e-6);
    }
}

/// Loop-level reference: dense 2-D kernels, explicit mirror indexing, no
/// shared code with the library's separable filters.
mod oracle {
    use super::Matrix;

    fn mirror(i: isize, n: usize) -> usize {
        let n = n as isize;
        let mut i = i;
        loop {
            if i < 0 {
                i = -i;
            } else if i >= n {
                i = 2 * (n - 1) - i;
            } else {
                return i as usize;
            }
        }
    }

    fn filter(x: &Matrix<f64>, k: &[Vec<f64>]) -> Matrix<f64> {
        let (r, c) = x.dim();
        let h = (k.len() / 2) as isize;
        let mut out = Matrix::zeros((r, c));
        for i in 0..r {
            for j in 0..c {
                let mut s = 0.0;
                for (a, row) in k.iter().enumerate() {
                    for (b, w) in row.iter().enumerate() {
                        let y = mirror(i as isize + a as isize - h, r);
                        let z = mirror(j as isize + b as isize - h, c);
                        s += w * x[[y, z]];
                    }
                }
                out[[i, j]] = s;
            }
        }
        out
    }

    fn outer(g: &[f64], scale: f64) -> Vec<Vec<f64>> {
        g.iter().map(|a| g.iter().map(|b| scale * a * b).collect()).collect()
    }

    fn reduce(x: &Matrix<f64>, g: &[f64]) -> Matrix<f64> {
        let b = filter(x, &outer(g, 1.0));
        let (r, c) = x.dim();
        Matrix::from_shape_fn((r.div_ceil(2), c.div_ceil(2)), |(i, j)| b[[2 * i, 2 * j]])
    }

    fn expand(x: &Matrix<f64>, shape: (usize, usize), g: &[f64]) -> Matrix<f64> {
        let mut up = Matrix::zeros(shape);
        for ((i, j), v) in x.indexed_iter() {
            up[[2 * i, 2 * j]] = *v;
        }
        filter(&up, &outer(g, 4.0))
    }

    fn normalized_stages(x: &Matrix<f64>, depth: usize, p: &super::NlpdParams) -> Vec<Matrix<f64>> {
        let mut stages = Vec::new();
        let mut cur = x.clone();
        for _ in 0..depth {
            let next = reduce(&cur, &p.gen_kernel);
            stages.push(&cur - &expand(&next, cur.dim(), &p.gen_kernel));
            cur = next;
        }
        stages.push(cur);
        stages
            .into_iter()
            .map(|y| {
                let energy = filter(&y.mapv(f64::abs), &p.norm_kernel);
                Matrix::from_shape_fn(y.dim(), |ix| y[ix] / (p.sigma_dn + energy[ix]))
            })
            .collect()
    }

    pub fn nlpd(a: &Matrix<f64>, b: &Matrix<f64>, depth: usize, p: &super::NlpdParams) -> f64 {
        let za = normalized_stages(a, depth, p);
        let zb = normalized_stages(b, depth, p);
        let mut total = 0.0;
        for (x, y) in za.iter().zip(&zb) {
            let mut ss = 0.0;
            for (u, v) in x.iter().zip(y.iter()) {
                ss += (u - v) * (u - v);
            }
            total += (ss / x.len() as f64).sqrt();
        }
        total / za.len() as f64
    }
}

#[test]
fn nlpd_matches_loop_level_oracle() {
    let params = NlpdParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let a = random(&mut rng, 16, 16);
        let b = random(&mut rng, 16, 16);
        // 16x16 supports three levels.
        let want = oracle::nlpd(&a, &b, 3, &params);
        let got = nlpd(&a, &b, &params).unwrap();
        worst = worst.max((got - want).abs());
    }
    println!("max |nlpd - oracle| = {worst:.2e}");
    assert!(worst <= 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn distances_are_non_negative_and_symmetric(seed in any::<u64>(), r in 16usize..24, c in 16usize..24) {
        let cfg = MetricsConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, r, c);
        let y = random(&mut rng, r, c);
        for kind in MetricKind::ALL {
            let d = distance(kind, &x, &y, &cfg).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert!((d - distance(kind, &y, &x, &cfg).unwrap()).abs() <= 1e-9);
        }
    }

    #[test]
    fn collapse_inverts_pyramid_for_any_shape(seed in any::<u64>(), r in 4usize..40, c in 4usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, r, c);
        let d = percepta::metrics::max_depth(r, c);
        let p = laplacian_pyramid(&x, d, &GEN_KERNEL).unwrap();
        let back = collapse(&p, &GEN_KERNEL).unwrap();
        prop_assert!((&back - &x).iter().all(|v| v.abs() <= 1e-9));
    }
}

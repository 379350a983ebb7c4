use attnspk_core::linalg::Matrix;
use attnspk_core::ubm::{gmm_loglik, gmm_posteriors, train_gmm, DiagGmm, GmmTrainConfig, VAR_FLOOR_RATIO};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn two_mode_frames(n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let data = (0..n).map(|_| if rng.random_bool(0.5) { 5.0 } else { -5.0 } + noise.sample(&mut rng)).collect();
    Matrix::from_vec(n, 1, data).unwrap()
}

fn blob_frames(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..5).map(|_| (0..d).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
    let noise = Normal::new(0.0, 0.8).unwrap();
    let mut m = Matrix::zeros(n, d);
    for r in 0..n {
        let c = &centers[rng.random_range(0..5)];
        for (x, mu) in m.row_mut(r).iter_mut().zip(c) {
            *x = mu + noise.sample(&mut rng);
        }
    }
    m
}

#[test]
fn recovers_two_separated_modes() {
    let frames = two_mode_frames(10_000, 1);
    let cfg = GmmTrainConfig { components: 2, iters: 20, seed: 3, kmeans_iters: 5 };
    let gmm = train_gmm(&frames, &cfg).unwrap().gmm;
    let mut means = [gmm.means[(0, 0)], gmm.means[(1, 0)]];
    means.sort_by(f64::total_cmp);
    assert!((means[0] + 5.0).abs() < 0.1 && (means[1] - 5.0).abs() < 0.1, "{means:?}");
}

#[test]
fn em_loglik_is_monotone_and_floored() {
    for seed in 0..3 {
        let frames = blob_frames(3000, 4, seed);
        let cfg = GmmTrainConfig { components: 8, iters: 20, seed, kmeans_iters: 5 };
        let t = train_gmm(&frames, &cfg).unwrap();
        assert_eq!(t.loglik.len(), 21);
        for w in t.loglik.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        let n = frames.rows() as f64;
        for j in 0..4 {
            let m: f64 = frames.row_iter().map(|r| r[j]).sum::<f64>() / n;
            let v: f64 = frames.row_iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            for c in 0..8 {
                assert!(t.gmm.vars[(c, j)] >= VAR_FLOOR_RATIO * v);
            }
        }
        assert!((t.gmm.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn same_seed_same_model() {
    let frames = blob_frames(1000, 3, 9);
    let cfg = GmmTrainConfig { components: 4, iters: 5, seed: 7, kmeans_iters: 5 };
    assert_eq!(train_gmm(&frames, &cfg).unwrap().gmm, train_gmm(&frames, &cfg).unwrap().gmm);
}

#[test]
fn duplicated_corpus_doubles_loglik() {
    let frames = blob_frames(500, 3, 2);
    let gmm = train_gmm(&frames, &GmmTrainConfig { components: 3, iters: 3, seed: 0, kmeans_iters: 5 }).unwrap().gmm;
    let mut twice = frames.as_slice().to_vec();
    twice.extend_from_slice(frames.as_slice());
    let doubled = Matrix::from_vec(1000, 3, twice).unwrap();
    let a = gmm_loglik(&frames, &gmm).unwrap();
    let b = gmm_loglik(&doubled, &gmm).unwrap();
    assert!((b - 2.0 * a).abs() <= 1e-12 * a.abs());
}

#[test]
fn frame_at_a_far_component_mean() {
    let gmm = DiagGmm::new(
        vec![0.5, 0.5],
        Matrix::from_rows(&[[0.0, 0.0], [10.0, 10.0]]).unwrap(),
        Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap(),
    )
    .unwrap();
    let p = gmm_posteriors(&[0.0, 0.0], &gmm).unwrap();
    // p_1 / p_2 = exp(100) analytically
    assert!(p[0] > 0.999);
    assert!((p[1] - 1.0 / (1.0 + 100f64.exp())).abs() < 1e-50);
}

fn random_gmm(rng: &mut ChaCha8Rng, c: usize, d: usize) -> DiagGmm {
    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.1..1.0)).collect();
    let z: f64 = raw.iter().sum();
    let means = Matrix::from_vec(c, d, (0..c * d).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let vars = Matrix::from_vec(c, d, (0..c * d).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap();
    DiagGmm::new(raw.iter().map(|w| w / z).collect(), means, vars).unwrap()
}

proptest! {
    #[test]
    fn posteriors_sum_to_one(seed in 0u64..10_000, x in prop::collection::vec(-20.0f64..20.0, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gmm = random_gmm(&mut rng, 5, 3);
        let p = gmm_posteriors(&x, &gmm).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn posteriors_ignore_common_weight_scaling(seed in 0u64..10_000, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gmm = random_gmm(&mut rng, 4, 2);
        let scaled: Vec<f64> = gmm.weights.iter().map(|w| w * scale).collect();
        let z: f64 = scaled.iter().sum();
        let other = DiagGmm::new(scaled.iter().map(|w| w / z).collect(), gmm.means.clone(), gmm.vars.clone()).unwrap();
        let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let a = gmm_posteriors(&x, &gmm).unwrap();
        let b = gmm_posteriors(&x, &other).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }
}

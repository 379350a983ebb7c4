use attnspk_core::backend::{
    apply_preprocess, fit_preprocessor, plda_score, train_plda, PldaModel, PldaTrainConfig,
};
use attnspk_core::linalg::Matrix;
use attnspk_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn frob_rel(a: &Matrix, b: &Matrix) -> f64 {
    let mut d = a.clone();
    d.add_scaled(-1.0, b);
    d.frobenius_norm() / b.frobenius_norm()
}

/// Vectors from `mean + Φ y_s + L ε` with `W = L Lᵀ`, plus the drawn speaker factors.
fn plda_draw(
    phi: &Matrix,
    chol_w: &Matrix,
    mean: &[f64],
    speakers: usize,
    per: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (e, s) = (phi.rows(), phi.cols());
    let mut vecs = Vec::new();
    let mut labels = Vec::new();
    let mut factors = Vec::new();
    for spk in 0..speakers {
        let y: Vec<f64> = (0..s).map(|_| normal(&mut rng)).collect();
        let center = phi.matvec(&y);
        for _ in 0..per {
            let z: Vec<f64> = (0..e).map(|_| normal(&mut rng)).collect();
            let eps = chol_w.matvec(&z);
            vecs.push((0..e).map(|i| mean[i] + center[i] + eps[i]).collect());
            labels.push(spk);
        }
        factors.push(y);
    }
    (vecs, labels, factors)
}

fn plda_data(
    phi: &Matrix,
    chol_w: &Matrix,
    mean: &[f64],
    speakers: usize,
    per: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let (v, l, _) = plda_draw(phi, chol_w, mean, speakers, per, seed);
    (v, l)
}

fn generator() -> (Matrix, Matrix, Vec<f64>) {
    let phi = Matrix::from_rows(&[[2.0, 0.0], [1.0, 1.5], [0.0, -1.0], [0.5, 0.5]]).unwrap();
    let chol_w = Matrix::from_rows(&[
        [1.0, 0.0, 0.0, 0.0],
        [0.3, 0.8, 0.0, 0.0],
        [0.0, 0.2, 0.7, 0.0],
        [0.1, 0.0, 0.3, 0.9],
    ])
    .unwrap();
    (phi, chol_w, vec![1.0, -2.0, 0.5, 3.0])
}

#[test]
fn plda_recovers_generator_covariances() {
    let (phi, chol_w, mean) = generator();
    let within_true = chol_w.matmul_t(&chol_w);
    let cfg = PldaTrainConfig { speaker_dim: 2, iters: 20, seed: 0 };

    // With 200 speakers the drawn factors' covariance differs from I by ~10%,
    // so the between-class target is the realized one, Φ Ŷ Φᵀ.
    let (vecs, labels, factors) = plda_draw(&phi, &chol_w, &mean, 200, 10, 17);
    let t = train_plda(&vecs, &labels, &cfg).unwrap();
    let ybar: Vec<f64> = (0..2).map(|j| factors.iter().map(|y| y[j]).sum::<f64>() / 200.0).collect();
    let mut yy = Matrix::zeros(2, 2);
    for y in &factors {
        let c: Vec<f64> = y.iter().zip(&ybar).map(|(a, b)| a - b).collect();
        yy.add_outer(1.0 / 200.0, &c, &c);
    }
    let realized = phi.matmul(&yy).matmul_t(&phi);
    let eb = frob_rel(&t.model.between_var(), &realized);
    let ew = frob_rel(t.model.within_var(), &within_true);
    assert!(eb < 0.10, "between {eb}");
    assert!(ew < 0.10, "within {ew}");

    let (vecs, labels) = plda_data(&phi, &chol_w, &mean, 2000, 10, 18);
    let t = train_plda(&vecs, &labels, &cfg).unwrap();
    let eb = frob_rel(&t.model.between_var(), &phi.matmul_t(&phi));
    let ew = frob_rel(t.model.within_var(), &within_true);
    assert!(eb < 0.10, "between {eb}");
    assert!(ew < 0.05, "within {ew}");
}

#[test]
fn plda_em_loglik_is_monotone_and_deterministic() {
    let (phi, chol_w, mean) = generator();
    let (vecs, labels) = plda_data(&phi, &chol_w, &mean, 40, 5, 3);
    let cfg = PldaTrainConfig { speaker_dim: 3, iters: 10, seed: 4 };
    let t = train_plda(&vecs, &labels, &cfg).unwrap();
    assert_eq!(t.loglik.len(), 11);
    for w in t.loglik.windows(2) {
        assert!(w[1] >= w[0] - 1e-6, "{} -> {}", w[0], w[1]);
    }
    assert_eq!(t.model, train_plda(&vecs, &labels, &cfg).unwrap().model);
}

#[test]
fn same_speaker_pairs_outscore_different_speaker_pairs() {
    let (phi, chol_w, mean) = generator();
    let (train, labels) = plda_data(&phi, &chol_w, &mean, 100, 6, 5);
    let model = train_plda(&train, &labels, &PldaTrainConfig { speaker_dim: 2, iters: 10, seed: 0 }).unwrap().model;
    let (test, tl) = plda_data(&phi, &chol_w, &mean, 40, 2, 6);
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    for i in 0..test.len() {
        for j in i + 1..test.len() {
            let s = plda_score(&test[i], &test[j], &model).unwrap();
            if tl[i] == tl[j] { same.push(s) } else { diff.push(s) }
        }
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(avg(&same) > avg(&diff));
}

#[test]
fn shifting_all_vectors_leaves_scores_unchanged() {
    let (phi, chol_w, mean) = generator();
    let (train, labels) = plda_data(&phi, &chol_w, &mean, 30, 4, 8);
    let shift = [10.0, -7.0, 3.5, 0.25];
    let moved = |v: &Vec<f64>| -> Vec<f64> { v.iter().zip(&shift).map(|(a, b)| a + b).collect() };
    let shifted: Vec<Vec<f64>> = train.iter().map(moved).collect();
    let cfg = PldaTrainConfig { speaker_dim: 2, iters: 5, seed: 1 };
    let a = train_plda(&train, &labels, &cfg).unwrap().model;
    let b = train_plda(&shifted, &labels, &cfg).unwrap().model;
    for i in 0..10 {
        let (x, y) = (&train[i], &train[i + 7]);
        let sa = plda_score(x, y, &a).unwrap();
        let sb = plda_score(&moved(x), &moved(y), &b).unwrap();
        assert!((sa - sb).abs() < 1e-8, "{sa} vs {sb}");
    }
}

#[test]
fn mirrored_pair_scores_below_identical_pair() {
    let model = PldaModel::new(vec![0.5], Matrix::from_rows(&[[1.3]]).unwrap(), Matrix::from_rows(&[[0.4]]).unwrap()).unwrap();
    for d in [0.1, 1.0, 3.0] {
        let v = 0.5 + d;
        let mirrored = 2.0 * 0.5 - v;
        assert!(plda_score(&[v], &[v], &model).unwrap() > plda_score(&[v], &[mirrored], &model).unwrap());
    }
}

#[test]
fn preprocessor_whitens_its_training_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mix = Matrix::from_rows(&[[2.0, 0.0, 0.0], [1.0, 0.5, 0.0], [-1.0, 0.3, 0.1]]).unwrap();
    let vecs: Vec<Vec<f64>> = (0..500)
        .map(|_| {
            let z: Vec<f64> = (0..3).map(|_| normal(&mut rng)).collect();
            mix.matvec(&z).iter().map(|x| x + 4.0).collect()
        })
        .collect();
    let pp = fit_preprocessor(&vecs).unwrap();
    let white: Vec<Vec<f64>> = vecs.iter().map(|v| pp.whiten(v).unwrap()).collect();
    let n = white.len() as f64;
    for j in 0..3 {
        let m: f64 = white.iter().map(|w| w[j]).sum::<f64>() / n;
        assert!(m.abs() < 1e-6);
        for k in 0..3 {
            let c: f64 = white.iter().map(|w| w[j] * w[k]).sum::<f64>() / n;
            assert!((c - if j == k { 1.0 } else { 0.0 }).abs() < 1e-6);
        }
    }
}

#[test]
fn isotropic_input_gives_near_identity_whitener() {
    // The sample covariance of N unit-normal vectors deviates from I by O(1/√N),
    // so the tolerance scales with the sample count.
    for (n, tol) in [(1_000, 0.1), (200_000, 1e-2)] {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let vecs: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| normal(&mut rng)).collect()).collect();
        let pp = fit_preprocessor(&vecs).unwrap();
        assert!(pp.whitener.max_abs_diff(&Matrix::identity(3)) < tol);
    }
}

#[test]
fn preprocess_errors() {
    let vecs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
    let pp = fit_preprocessor(&vecs).unwrap();
    assert_eq!(apply_preprocess(&pp.mean.clone(), &pp).unwrap_err(), Error::ZeroVector);
    assert!(matches!(apply_preprocess(&[1.0], &pp), Err(Error::LengthMismatch { .. })));
}

proptest! {
    #[test]
    fn preprocess_output_is_unit_and_scale_free(
        seed in 0u64..10_000,
        v in prop::collection::vec(-5.0f64..5.0, 3),
        scale in 0.01f64..100.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vecs: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let pp = fit_preprocessor(&vecs).unwrap();
        prop_assume!(v.iter().zip(&pp.mean).map(|(a, b)| (a - b).abs()).sum::<f64>() > 1e-6);
        let y = apply_preprocess(&v, &pp).unwrap();
        prop_assert!((y.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-10);
        let far: Vec<f64> = v.iter().zip(&pp.mean).map(|(a, m)| m + scale * (a - m)).collect();
        let z = apply_preprocess(&far, &pp).unwrap();
        for (a, b) in y.iter().zip(&z) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn plda_scores_are_symmetric(
        seed in 0u64..10_000,
        a in prop::collection::vec(-3.0f64..3.0, 4),
        b in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = Matrix::from_vec(4, 2, (0..8).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let l = Matrix::from_vec(4, 4, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut w = l.matmul_t(&l);
        for i in 0..4 {
            w[(i, i)] += 0.5;
        }
        let model = PldaModel::new(vec![0.1, 0.2, -0.3, 0.0], phi, w).unwrap();
        let ab = plda_score(&a, &b, &model).unwrap();
        let ba = plda_score(&b, &a, &model).unwrap();
        prop_assert!((ab - ba).abs() < 1e-10);
    }

    #[test]
    fn zero_speaker_dim_scores_are_zero(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (phi, chol_w, mean) = generator();
        let (vecs, labels) = plda_data(&phi, &chol_w, &mean, 5, 3, seed);
        let model = train_plda(&vecs, &labels, &PldaTrainConfig { speaker_dim: 0, iters: 3, seed }).unwrap().model;
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        prop_assert!(plda_score(&x, &y, &model).unwrap().abs() < 1e-9);
    }
}

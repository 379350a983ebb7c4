//! Diagonal-covariance GMM universal background model.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math::{ln, log_sum_exp, exp};

/// Relative variance floor: no component variance drops below this fraction of the global variance.
pub const VAR_FLOOR_RATIO: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagGmm {
    pub weights: Vec<f64>,
    pub means: Matrix,
    pub vars: Matrix,
}

impl DiagGmm {
    pub fn new(weights: Vec<f64>, means: Matrix, vars: Matrix) -> Result<Self> {
        let c = weights.len();
        if c == 0 || means.rows() != c || vars.rows() != c || means.cols() != vars.cols() || means.cols() == 0 {
            return Err(Error::ShapeMismatch("GMM weights, means and variances disagree".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig("GMM weights must form a simplex".into()));
        }
        if vars.as_slice().iter().any(|v| !(*v > 0.0)) || !means.is_finite() {
            return Err(Error::InvalidConfig("GMM variances must be positive and means finite".into()));
        }
        Ok(Self { weights, means, vars })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// Precomputes per-component constants for repeated evaluation.
    pub fn scorer(&self) -> GmmScorer<'_> {
        let inv_vars = self.vars.as_slice().iter().map(|v| 1.0 / v).collect();
        let log_consts = (0..self.num_components())
            .map(|c| {
                let w = self.weights[c];
                let log_det: f64 = self.vars.row(c).iter().map(|&v| ln(2.0 * PI * v)).sum();
                if w > 0.0 {
                    ln(w) - 0.5 * log_det
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        GmmScorer { gmm: self, inv_vars, log_consts }
    }
}

/// Evaluates a GMM frame by frame.
pub struct GmmScorer<'a> {
    gmm: &'a DiagGmm,
    inv_vars: Vec<f64>,
    log_consts: Vec<f64>,
}

impl GmmScorer<'_> {
    /// `log(w_c N(x; μ_c, Σ_c))` for every component.
    pub fn component_log_likelihoods(&self, x: &[f64], out: &mut [f64]) {
        let d = self.gmm.dim();
        for (c, o) in out.iter_mut().enumerate() {
            if self.log_consts[c] == f64::NEG_INFINITY {
                *o = f64::NEG_INFINITY;
                continue;
            }
            let mean = self.gmm.means.row(c);
            let iv = &self.inv_vars[c * d..(c + 1) * d];
            let mut q = 0.0;
            for ((&xi, &m), &v) in x.iter().zip(mean).zip(iv) {
                let z = xi - m;
                q += z * z * v;
            }
            *o = self.log_consts[c] - 0.5 * q;
        }
    }

    /// Writes `p(c | x)` into `post` and returns `log p(x)`.
    pub fn posteriors_into(&self, x: &[f64], post: &mut [f64]) -> f64 {
        self.component_log_likelihoods(x, post);
        let total = log_sum_exp(post);
        post.iter_mut().for_each(|p| *p = exp(*p - total));
        total
    }
}

/// Component responsibilities `p(c | x_t)` for one frame.
pub fn gmm_posteriors(x: &[f64], gmm: &DiagGmm) -> Result<Vec<f64>> {
    if x.len() != gmm.dim() {
        return Err(Error::LengthMismatch { expected: gmm.dim(), got: x.len() });
    }
    let mut post = vec![0.0; gmm.num_components()];
    gmm.scorer().posteriors_into(x, &mut post);
    Ok(post)
}

/// Total log density `Σ_t log p(x_t)` of a set of frames (one per row).
pub fn gmm_loglik(frames: &Matrix, gmm: &DiagGmm) -> Result<f64> {
    if frames.cols() != gmm.dim() {
        return Err(Error::LengthMismatch { expected: gmm.dim(), got: frames.cols() });
    }
    let scorer = gmm.scorer();
    let mut buf = vec![0.0; gmm.num_components()];
    Ok(frames
        .row_iter()
        .map(|x| {
            scorer.component_log_likelihoods(x, &mut buf);
            log_sum_exp(&buf)
        })
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmTrainConfig {
    pub components: usize,
    pub iters: usize,
    pub seed: u64,
    pub kmeans_iters: usize,
}

impl Default for GmmTrainConfig {
    fn default() -> Self {
        Self { components: 16, iters: 20, seed: 0, kmeans_iters: 5 }
    }
}

/// Trained model plus the log-likelihood before each EM iteration and after the last.
#[derive(Clone, Debug)]
pub struct GmmTraining {
    pub gmm: DiagGmm,
    pub loglik: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by a few Lloyd iterations; returns the centroids.
fn kmeans(frames: &Matrix, k: usize, iters: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = frames.rows();
    let d = frames.cols();
    let mut centers = Matrix::zeros(k, d);
    centers.row_mut(0).copy_from_slice(frames.row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = frames.row_iter().map(|x| sq_dist(x, centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(frames.row(pick));
        for (dd, x) in dist.iter_mut().zip(frames.row_iter()) {
            *dd = dd.min(sq_dist(x, centers.row(c)));
        }
    }
    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        for (a, x) in assign.iter_mut().zip(frames.row_iter()) {
            *a = (0..k).min_by(|&i, &j| sq_dist(x, centers.row(i)).total_cmp(&sq_dist(x, centers.row(j)))).unwrap();
        }
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (&a, x) in assign.iter().zip(frames.row_iter()) {
            counts[a] += 1;
            crate::linalg::axpy(1.0, x, sums.row_mut(a));
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (m, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *m = s * inv;
                }
            }
        }
    }
    centers
}

/// EM training of a diagonal GMM on the rows of `frames`.
pub fn train_gmm(frames: &Matrix, cfg: &GmmTrainConfig) -> Result<GmmTraining> {
    let (n, d) = (frames.rows(), frames.cols());
    let c = cfg.components;
    if n == 0 || d == 0 {
        return Err(Error::EmptyInput);
    }
    if c < 1 {
        return Err(Error::InvalidConfig("a GMM needs at least one component".into()));
    }
    if n < 10 * c {
        return Err(Error::DegenerateCorpus(alloc::format!("{n} frames is fewer than 10 per component")));
    }
    if !frames.is_finite() {
        return Err(Error::NonFinite("training frames"));
    }
    let mut mean = vec![0.0; d];
    for x in frames.row_iter() {
        crate::linalg::axpy(1.0 / n as f64, x, &mut mean);
    }
    let mut global_var = vec![0.0; d];
    for x in frames.row_iter() {
        for ((v, &xi), &m) in global_var.iter_mut().zip(x).zip(&mean) {
            *v += (xi - m) * (xi - m) / n as f64;
        }
    }
    let floor: Vec<f64> = global_var.iter().map(|v| (VAR_FLOOR_RATIO * v).max(1e-12)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = kmeans(frames, c, cfg.kmeans_iters, &mut rng);
    let mut weights = vec![0.0; c];
    let mut vars = Matrix::zeros(c, d);
    let mut counts = vec![0.0; c];
    for x in frames.row_iter() {
        let a = (0..c).min_by(|&i, &j| sq_dist(x, centers.row(i)).total_cmp(&sq_dist(x, centers.row(j)))).unwrap();
        counts[a] += 1.0;
        for ((v, &xi), &m) in vars.row_mut(a).iter_mut().zip(x).zip(centers.row(a)) {
            *v += (xi - m) * (xi - m);
        }
    }
    for k in 0..c {
        weights[k] = (counts[k] + 1.0) / (n + c) as f64;
        for (j, v) in vars.row_mut(k).iter_mut().enumerate() {
            *v = if counts[k] > 1.0 { *v / counts[k] } else { global_var[j] };
            *v = v.max(floor[j]);
        }
    }
    let mut gmm = DiagGmm { weights, means: centers, vars };

    let mut history = Vec::with_capacity(cfg.iters + 1);
    let mut post = vec![0.0; c];
    for _ in 0..cfg.iters {
        let scorer = gmm.scorer();
        let mut occ = vec![0.0; c];
        let mut first = Matrix::zeros(c, d);
        let mut second = Matrix::zeros(c, d);
        let mut total = 0.0;
        for x in frames.row_iter() {
            total += scorer.posteriors_into(x, &mut post);
            for (k, &p) in post.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                occ[k] += p;
                let (f, s) = (first.row_mut(k), &mut second);
                for (fj, &xj) in f.iter_mut().zip(x) {
                    *fj += p * xj;
                }
                for (sj, &xj) in s.row_mut(k).iter_mut().zip(x) {
                    *sj += p * xj * xj;
                }
            }
        }
        history.push(total);
        let mut next = gmm.clone();
        for k in 0..c {
            next.weights[k] = occ[k] / n as f64;
            if occ[k] < 1e-10 {
                continue;
            }
            for j in 0..d {
                let m = first[(k, j)] / occ[k];
                next.means[(k, j)] = m;
                next.vars[(k, j)] = (second[(k, j)] / occ[k] - m * m).max(floor[j]);
            }
        }
        gmm = next;
    }
    history.push(gmm_loglik(frames, &gmm)?);
    Ok(GmmTraining { gmm, loglik: history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_frames(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, d);
        for (i, x) in m.as_mut_slice().iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = 2.0 * z + (i % d) as f64;
        }
        m
    }

    #[test]
    fn single_component_is_sample_moments() {
        let frames = normal_frames(500, 3, 1);
        let t = train_gmm(&frames, &GmmTrainConfig { components: 1, iters: 3, seed: 0, kmeans_iters: 5 }).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = frames.row_iter().map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / 500.0;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 500.0;
            assert!((t.gmm.means[(0, j)] - m).abs() < 1e-10);
            assert!((t.gmm.vars[(0, j)] - v).abs() < 1e-10);
        }
        assert_eq!(t.gmm.weights, vec![1.0]);
    }

    #[test]
    fn single_component_posterior_is_one() {
        let gmm = DiagGmm::new(vec![1.0], Matrix::zeros(1, 2), Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(gmm_posteriors(&[3.0, -1.0], &gmm).unwrap(), vec![1.0]);
    }

    #[test]
    fn single_frame_loglik_matches_gaussian_density() {
        let gmm = DiagGmm::new(
            vec![1.0],
            Matrix::from_rows(&[[1.0, -1.0]]).unwrap(),
            Matrix::from_rows(&[[0.5, 2.0]]).unwrap(),
        )
        .unwrap();
        let x = [0.2, 0.7];
        let want = -0.5 * (ln(2.0 * PI * 0.5) + 0.64 / 0.5) - 0.5 * (ln(2.0 * PI * 2.0) + 2.89 / 2.0);
        let got = gmm_loglik(&Matrix::from_rows(&[x]).unwrap(), &gmm).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn far_components_assign_confidently() {
        let gmm = DiagGmm::new(
            vec![0.5, 0.5],
            Matrix::from_rows(&[[0.0], [20.0]]).unwrap(),
            Matrix::from_rows(&[[1.0], [1.0]]).unwrap(),
        )
        .unwrap();
        let p = gmm_posteriors(&[0.0], &gmm).unwrap();
        // exact ratio: exp(-200)
        assert!(p[0] > 0.999);
        assert!((p[1] - exp(-200.0) / (1.0 + exp(-200.0))).abs() < 1e-100);
    }

    #[test]
    fn errors() {
        assert_eq!(train_gmm(&Matrix::zeros(0, 2), &GmmTrainConfig::default()).unwrap_err(), Error::EmptyInput);
        let frames = normal_frames(50, 2, 3);
        let cfg = GmmTrainConfig { components: 0, ..Default::default() };
        assert!(matches!(train_gmm(&frames, &cfg), Err(Error::InvalidConfig(_))));
        let cfg = GmmTrainConfig { components: 6, ..Default::default() };
        assert!(matches!(train_gmm(&frames, &cfg), Err(Error::DegenerateCorpus(_))));
    }
}

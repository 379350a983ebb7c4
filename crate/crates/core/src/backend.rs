//! Vector preprocessing and PLDA scoring.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, symmetric_eigen, Cholesky, Matrix};
use crate::math::{ln, sqrt};

/// Eigenvalues of the training covariance are floored at this fraction of the mean eigenvalue.
pub const EIGEN_FLOOR_RATIO: f64 = 1e-8;

fn check_dims(vectors: &[Vec<f64>]) -> Result<usize> {
    let e = vectors.first().ok_or(Error::EmptyInput)?.len();
    if e == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != e) {
        return Err(Error::LengthMismatch { expected: e, got: v.len() });
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("input vectors"));
    }
    Ok(e)
}

fn mean_of(vectors: &[Vec<f64>], e: usize) -> Vec<f64> {
    let mut m = vec![0.0; e];
    for v in vectors {
        crate::linalg::axpy(1.0, v, &mut m);
    }
    let inv = 1.0 / vectors.len() as f64;
    m.iter_mut().for_each(|x| *x *= inv);
    m
}

/// Mean subtraction followed by a symmetric whitening transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub mean: Vec<f64>,
    pub whitener: Matrix,
}

impl Preprocessor {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `W (v − mean)` without length normalization.
    pub fn whiten(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::LengthMismatch { expected: self.dim(), got: v.len() });
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(self.whitener.matvec(&centered))
    }
}

/// Fits the mean and ZCA whitener `V Λ^{-1/2} Vᵀ` of the (1/N) sample covariance.
pub fn fit_preprocessor(vectors: &[Vec<f64>]) -> Result<Preprocessor> {
    let e = check_dims(vectors)?;
    if vectors.len() < e + 1 {
        return Err(Error::TooFewVectors { needed: e + 1, got: vectors.len() });
    }
    let mean = mean_of(vectors, e);
    let mut cov = Matrix::zeros(e, e);
    let mut c = vec![0.0; e];
    for v in vectors {
        for ((ci, vi), mi) in c.iter_mut().zip(v).zip(&mean) {
            *ci = vi - mi;
        }
        cov.add_outer(1.0 / vectors.len() as f64, &c, &c);
    }
    cov.symmetrize();
    let floor = (EIGEN_FLOOR_RATIO * cov.trace() / e as f64).max(f64::MIN_POSITIVE);
    let (vals, vecs) = symmetric_eigen(&cov);
    let mut scaled = vecs.clone();
    for j in 0..e {
        let s = 1.0 / sqrt(vals[j].max(floor));
        for i in 0..e {
            scaled[(i, j)] *= s;
        }
    }
    let mut whitener = scaled.matmul_t(&vecs);
    whitener.symmetrize();
    Ok(Preprocessor { mean, whitener })
}

/// Whitens and projects onto the unit sphere.
pub fn apply_preprocess(v: &[f64], pp: &Preprocessor) -> Result<Vec<f64>> {
    let mut y = pp.whiten(v)?;
    let n = norm(&y);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    y.iter_mut().for_each(|x| *x /= n);
    Ok(y)
}

/// `x = mean + Φ y + ε`, `y ~ N(0, I)`, `ε ~ N(0, W)` with full `W`.
#[derive(Clone, Debug)]
pub struct PldaModel {
    mean: Vec<f64>,
    phi: Matrix,
    within: Matrix,
    quad: Matrix,
    cross: Matrix,
    offset: f64,
}

impl PartialEq for PldaModel {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.phi == other.phi && self.within == other.within
    }
}

impl PldaModel {
    pub fn new(mean: Vec<f64>, speaker_subspace: Matrix, within: Matrix) -> Result<Self> {
        let e = mean.len();
        if e == 0 || speaker_subspace.rows() != e || within.rows() != e || within.cols() != e {
            return Err(Error::ShapeMismatch("PLDA mean, subspace and within-class covariance disagree".into()));
        }
        if speaker_subspace.cols() > e {
            return Err(Error::RankTooLarge { rank: speaker_subspace.cols(), dim: e });
        }
        let mut within = within;
        within.symmetrize();
        Cholesky::new(&within)?;
        let mut between = speaker_subspace.matmul_t(&speaker_subspace);
        between.symmetrize();
        let mut total = between.clone();
        total.add_assign(&within);
        let total_chol = Cholesky::new(&total)?;
        let total_inv = total_chol.inverse();
        let ti_b = total_inv.matmul(&between);
        let mut schur = total.clone();
        schur.add_scaled(-1.0, &between.matmul(&ti_b));
        schur.symmetrize();
        let schur_chol = Cholesky::new(&schur)?;
        let mut a = schur_chol.inverse();
        a.symmetrize();
        let mut cross = ti_b.matmul(&a);
        cross.symmetrize();
        let mut quad = total_inv;
        quad.add_scaled(-1.0, &a);
        quad.symmetrize();
        // log|Σ_same| = log|Tot| + log|Tot − B Tot⁻¹ B|, log|Σ_diff| = 2 log|Tot|
        let offset = -0.5 * (schur_chol.log_det() - total_chol.log_det());
        Ok(Self { mean, phi: speaker_subspace, within, quad, cross, offset })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn speaker_dim(&self) -> usize {
        self.phi.cols()
    }

    pub fn global_mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn speaker_subspace(&self) -> &Matrix {
        &self.phi
    }

    pub fn within_var(&self) -> &Matrix {
        &self.within
    }

    /// `Φ Φᵀ`.
    pub fn between_var(&self) -> Matrix {
        self.phi.matmul_t(&self.phi)
    }
}

/// Same-speaker versus different-speaker log-likelihood ratio.
pub fn plda_score(enroll: &[f64], test: &[f64], plda: &PldaModel) -> Result<f64> {
    let e = plda.dim();
    for v in [enroll, test] {
        if v.len() != e {
            return Err(Error::LengthMismatch { expected: e, got: v.len() });
        }
    }
    let a: Vec<f64> = enroll.iter().zip(&plda.mean).map(|(x, m)| x - m).collect();
    let b: Vec<f64> = test.iter().zip(&plda.mean).map(|(x, m)| x - m).collect();
    let qa = plda.quad.matvec(&a);
    let qb = plda.quad.matvec(&b);
    let cb = plda.cross.matvec(&b);
    let ca = plda.cross.matvec(&a);
    let cross = 0.5 * (dot(&a, &cb) + dot(&b, &ca));
    Ok(0.5 * dot(&a, &qa) + 0.5 * dot(&b, &qb) + cross + plda.offset)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PldaTrainConfig {
    pub speaker_dim: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for PldaTrainConfig {
    fn default() -> Self {
        Self { speaker_dim: 16, iters: 10, seed: 0 }
    }
}

/// Trained model plus the training log-likelihood before each EM iteration and after the last.
#[derive(Clone, Debug)]
pub struct PldaTraining {
    pub model: PldaModel,
    pub loglik: Vec<f64>,
}

struct SpeakerData {
    count: usize,
    sum: Vec<f64>,
}

struct PldaPosteriors {
    loglik: f64,
    means: Vec<Vec<f64>>,
    second: Matrix,
    cross: Matrix,
}

/// E-step: per-speaker posterior means, `Σ n_i E[y yᵀ]`, `Σ s_i E[y]ᵀ` and the marginal log-likelihood.
fn plda_estep(speakers: &[SpeakerData], scatter_quad: &Matrix, phi: &Matrix, within: &Matrix) -> Result<PldaPosteriors> {
    let (e, s) = (phi.rows(), phi.cols());
    let w_chol = Cholesky::new(within)?;
    let w_inv = w_chol.inverse();
    let wi_phi = w_inv.matmul(phi);
    let mut g_mat = phi.t_matmul(&wi_phi);
    g_mat.symmetrize();
    let n_total: usize = speakers.iter().map(|sp| sp.count).sum();
    let mut loglik = -0.5
        * (n_total as f64 * (e as f64 * ln(2.0 * PI) + w_chol.log_det())
            + scatter_quad.as_slice().iter().zip(w_inv.as_slice()).map(|(a, b)| a * b).sum::<f64>());
    let mut means = Vec::with_capacity(speakers.len());
    let mut second = Matrix::zeros(s, s);
    let mut cross = Matrix::zeros(e, s);
    for sp in speakers {
        let mut q = Matrix::identity(s);
        q.add_scaled(sp.count as f64, &g_mat);
        let q_chol = Cholesky::new(&q)?;
        let g = wi_phi.t_matvec(&sp.sum);
        let y = q_chol.solve(&g);
        loglik += 0.5 * (dot(&g, &y) - q_chol.log_det());
        let mut yy = q_chol.inverse();
        yy.add_outer(1.0, &y, &y);
        second.add_scaled(sp.count as f64, &yy);
        cross.add_outer(1.0, &sp.sum, &y);
        means.push(y);
    }
    Ok(PldaPosteriors { loglik, means, second, cross })
}

/// EM training of the subspace `Φ` and within-class covariance `W`; the mean is the sample mean.
pub fn train_plda(vectors: &[Vec<f64>], labels: &[usize], cfg: &PldaTrainConfig) -> Result<PldaTraining> {
    let e = check_dims(vectors)?;
    if labels.len() != vectors.len() {
        return Err(Error::LengthMismatch { expected: vectors.len(), got: labels.len() });
    }
    let s = cfg.speaker_dim;
    if s > e {
        return Err(Error::RankTooLarge { rank: s, dim: e });
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::SingleClass);
    }
    if groups.values().filter(|g| g.len() >= 2).count() < 2 {
        return Err(Error::DegenerateCorpus("PLDA needs two speakers with at least two vectors".into()));
    }
    let n = vectors.len();
    let mean = mean_of(vectors, e);
    let centered: Vec<Vec<f64>> = vectors.iter().map(|v| v.iter().zip(&mean).map(|(a, b)| a - b).collect()).collect();
    let mut scatter = Matrix::zeros(e, e);
    for c in &centered {
        scatter.add_outer(1.0, c, c);
    }
    scatter.symmetrize();
    let speakers: Vec<SpeakerData> = groups
        .values()
        .map(|idx| {
            let mut sum = vec![0.0; e];
            for &i in idx {
                crate::linalg::axpy(1.0, &centered[i], &mut sum);
            }
            SpeakerData { count: idx.len(), sum }
        })
        .collect();

    // Initialization from the class scatter matrices.
    let mut between = Matrix::zeros(e, e);
    for sp in &speakers {
        let c = sp.count as f64;
        between.add_outer(1.0 / (c * c * speakers.len() as f64), &sp.sum, &sp.sum);
    }
    let mut within = scatter.clone();
    for sp in &speakers {
        within.add_outer(-1.0 / sp.count as f64, &sp.sum, &sp.sum);
    }
    within.scale(1.0 / n as f64);
    within.symmetrize();
    let ridge = 1e-6 * (scatter.trace() / (n * e) as f64).max(f64::MIN_POSITIVE);
    for i in 0..e {
        within[(i, i)] += ridge;
    }
    between.symmetrize();
    let (vals, vecs) = symmetric_eigen(&between);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut phi = Matrix::zeros(e, s);
    for j in 0..s {
        let src = e - 1 - j;
        let scale = sqrt(vals[src].max(ridge));
        for i in 0..e {
            let z: f64 = StandardNormal.sample(&mut rng);
            phi[(i, j)] = vecs[(i, src)] * scale + 1e-3 * scale * z;
        }
    }

    let mut history = Vec::with_capacity(cfg.iters + 1);
    for _ in 0..cfg.iters {
        let post = plda_estep(&speakers, &scatter, &phi, &within)?;
        history.push(post.loglik);
        if s > 0 {
            let chol = Cholesky::new_regularized(&post.second)?;
            for i in 0..e {
                let row = chol.solve(post.cross.row(i));
                phi.row_mut(i).copy_from_slice(&row);
            }
        }
        // W = (1/N) [Σ x xᵀ − Φ Σ_i E[y_i] s_iᵀ]
        let mut w = scatter.clone();
        let mut proj = Matrix::zeros(e, e);
        for (sp, y) in speakers.iter().zip(&post.means) {
            let py = phi.matvec(y);
            proj.add_outer(1.0, &py, &sp.sum);
        }
        proj.symmetrize();
        w.add_scaled(-1.0, &proj);
        w.scale(1.0 / n as f64);
        w.symmetrize();
        within = w;
        if !phi.is_finite() || !within.is_finite() {
            return Err(Error::NonFinite("PLDA parameters"));
        }
    }
    history.push(plda_estep(&speakers, &scatter, &phi, &within)?.loglik);
    let model = PldaModel::new(mean, phi, within)?;
    Ok(PldaTraining { model, loglik: history })
}

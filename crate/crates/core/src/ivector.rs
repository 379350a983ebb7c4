//! Baum–Welch statistics, total variability model and i-vector extraction.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embednet::{FrameWeights, WEIGHT_SUM_TOL};
use crate::error::{Error, Result};
use crate::features::AcousticFrameSequence;
use crate::linalg::{Cholesky, Matrix};
use crate::math::sqrt;
use crate::ubm::DiagGmm;

/// Zeroth-order `n` (per component) and centered first-order `f` (component × dim) statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct SufficientStats {
    pub n: Vec<f64>,
    pub f: Matrix,
}

impl SufficientStats {
    pub fn zeros(components: usize, dim: usize) -> Self {
        Self { n: vec![0.0; components], f: Matrix::zeros(components, dim) }
    }

    pub fn num_components(&self) -> usize {
        self.n.len()
    }

    pub fn dim(&self) -> usize {
        self.f.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.n.iter().all(|x| x.is_finite()) && self.f.is_finite()
    }
}

/// Accumulates statistics against the UBM. With weights, frame `t` contributes
/// with scale `L·α_t`; `None` means every frame counts once.
pub fn accumulate_stats(
    utt: &AcousticFrameSequence,
    gmm: &DiagGmm,
    weights: Option<&FrameWeights>,
) -> Result<SufficientStats> {
    let len = utt.len();
    if utt.dim() != gmm.dim() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "frames are {}-dimensional, UBM is {}-dimensional",
            utt.dim(),
            gmm.dim()
        )));
    }
    if let Some(w) = weights {
        if w.len() != len {
            return Err(Error::LengthMismatch { expected: len, got: w.len() });
        }
        let sum: f64 = w.values().iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightsNotNormalized(sum));
        }
    }
    let (c, d) = (gmm.num_components(), gmm.dim());
    let scorer = gmm.scorer();
    let mut stats = SufficientStats::zeros(c, d);
    let mut post = vec![0.0; c];
    for (t, x) in utt.frames().row_iter().enumerate() {
        let scale = weights.map_or(1.0, |w| len as f64 * w.values()[t]);
        if scale == 0.0 {
            continue;
        }
        scorer.posteriors_into(x, &mut post);
        for (k, &p) in post.iter().enumerate() {
            let g = scale * p;
            if g == 0.0 {
                continue;
            }
            stats.n[k] += g;
            for ((fj, &xj), &mj) in stats.f.row_mut(k).iter_mut().zip(x).zip(gmm.means.row(k)) {
                *fj += g * (xj - mj);
            }
        }
    }
    Ok(stats)
}

/// Supervector model `m + T w`: `t` is `(C·D) × R`, `sigma` the diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct TotalVariabilityModel {
    pub t: Matrix,
    pub m: Vec<f64>,
    pub sigma: Vec<f64>,
    components: usize,
    dim: usize,
}

impl TotalVariabilityModel {
    pub fn new(components: usize, dim: usize, t: Matrix, m: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let sv = components * dim;
        if sv == 0 || t.rows() != sv || m.len() != sv || sigma.len() != sv {
            return Err(Error::ShapeMismatch(alloc::format!(
                "TVM with {components} components of dim {dim} needs {sv} rows"
            )));
        }
        if t.cols() == 0 || t.cols() >= sv {
            return Err(Error::RankTooLarge { rank: t.cols(), dim: sv });
        }
        if sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig("TVM covariance must be positive".into()));
        }
        if !t.is_finite() || m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("TVM parameters"));
        }
        Ok(Self { t, m, sigma, components, dim })
    }

    pub fn num_components(&self) -> usize {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.t.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IVector {
    pub phi: Vec<f64>,
}

/// Posterior of the latent factor for one utterance.
struct Posterior {
    mean: Vec<f64>,
    precision: Cholesky,
    linear: Vec<f64>,
}

/// Per-component Gram matrices `T_cᵀ Σ_c⁻¹ T_c` and the scaled loading `Σ⁻¹ T`, precomputed once per model.
pub struct IvectorExtractor<'a> {
    tvm: &'a TotalVariabilityModel,
    grams: Vec<Matrix>,
    scaled_t: Matrix,
}

impl<'a> IvectorExtractor<'a> {
    pub fn new(tvm: &'a TotalVariabilityModel) -> Self {
        let (c, d, r) = (tvm.components, tvm.dim, tvm.rank());
        let mut scaled_t = tvm.t.clone();
        for (i, &s) in tvm.sigma.iter().enumerate() {
            scaled_t.row_mut(i).iter_mut().for_each(|x| *x /= s);
        }
        let grams = (0..c)
            .map(|k| {
                let mut g = Matrix::zeros(r, r);
                for i in k * d..(k + 1) * d {
                    g.add_outer(1.0, scaled_t.row(i), tvm.t.row(i));
                }
                g.symmetrize();
                g
            })
            .collect();
        Self { tvm, grams, scaled_t }
    }

    fn check(&self, stats: &SufficientStats) -> Result<()> {
        if stats.num_components() != self.tvm.components || stats.dim() != self.tvm.dim {
            return Err(Error::ShapeMismatch(alloc::format!(
                "stats are {}x{}, TVM expects {}x{}",
                stats.num_components(),
                stats.dim(),
                self.tvm.components,
                self.tvm.dim
            )));
        }
        if !stats.is_finite() {
            return Err(Error::NonFinite("sufficient statistics"));
        }
        Ok(())
    }

    fn posterior(&self, stats: &SufficientStats, regularize: bool) -> Result<Posterior> {
        self.check(stats)?;
        let r = self.tvm.rank();
        let mut p = Matrix::identity(r);
        for (g, &n) in self.grams.iter().zip(&stats.n) {
            if n != 0.0 {
                p.add_scaled(n, g);
            }
        }
        let linear = self.scaled_t.t_matvec(stats.f.as_slice());
        let precision = if regularize { Cholesky::new_regularized(&p)? } else { Cholesky::new(&p)? };
        let mean = precision.solve(&linear);
        Ok(Posterior { mean, precision, linear })
    }

    /// Posterior mean `(I + Tᵀ Σ⁻¹ N T)⁻¹ Tᵀ Σ⁻¹ F`.
    pub fn extract(&self, stats: &SufficientStats) -> Result<IVector> {
        Ok(IVector { phi: self.posterior(stats, false)?.mean })
    }
}

pub fn extract_ivector(stats: &SufficientStats, tvm: &TotalVariabilityModel) -> Result<IVector> {
    IvectorExtractor::new(tvm).extract(stats)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TvmTrainConfig {
    pub rank: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for TvmTrainConfig {
    fn default() -> Self {
        Self { rank: 8, iters: 10, seed: 0 }
    }
}

/// Trained model plus the EM objective before each iteration and after the last.
#[derive(Clone, Debug)]
pub struct TvmTraining {
    pub tvm: TotalVariabilityModel,
    pub objective: Vec<f64>,
}

/// `Σ_u ½ bᵀ P⁻¹ b − ½ log|P|`, the `T`-dependent part of the marginal log-likelihood.
pub fn tvm_objective(stats: &[SufficientStats], tvm: &TotalVariabilityModel) -> Result<f64> {
    let ex = IvectorExtractor::new(tvm);
    let mut total = 0.0;
    for s in stats {
        let post = ex.posterior(s, true)?;
        total += 0.5 * crate::linalg::dot(&post.linear, &post.mean) - 0.5 * post.precision.log_det();
    }
    Ok(total)
}

/// EM for `T` with `m` and `Σ` fixed to the UBM means and variances.
pub fn train_tvm(stats: &[SufficientStats], ubm: &DiagGmm, cfg: &TvmTrainConfig) -> Result<TvmTraining> {
    let (c, d, r) = (ubm.num_components(), ubm.dim(), cfg.rank);
    let sv = c * d;
    if r == 0 || r >= sv {
        return Err(Error::RankTooLarge { rank: r, dim: sv });
    }
    if stats.len() < r {
        return Err(Error::TooFewVectors { needed: r, got: stats.len() });
    }
    let m = ubm.means.as_slice().to_vec();
    let sigma = ubm.vars.as_slice().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut t = Matrix::zeros(sv, r);
    for i in 0..sv {
        let s = sqrt(sigma[i]);
        for x in t.row_mut(i) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = z * s;
        }
    }
    let mut tvm = TotalVariabilityModel::new(c, d, t, m, sigma)?;

    let mut objective = Vec::with_capacity(cfg.iters + 1);
    for _ in 0..cfg.iters {
        let ex = IvectorExtractor::new(&tvm);
        let mut acc_a: Vec<Matrix> = (0..c).map(|_| Matrix::zeros(r, r)).collect();
        let mut acc_c = Matrix::zeros(sv, r);
        let mut obj = 0.0;
        for s in stats {
            let post = ex.posterior(s, true)?;
            obj += 0.5 * crate::linalg::dot(&post.linear, &post.mean) - 0.5 * post.precision.log_det();
            let mut second = post.precision.inverse();
            second.add_outer(1.0, &post.mean, &post.mean);
            for (a, &n) in acc_a.iter_mut().zip(&s.n) {
                if n != 0.0 {
                    a.add_scaled(n, &second);
                }
            }
            for (i, &fi) in s.f.as_slice().iter().enumerate() {
                if fi != 0.0 {
                    crate::linalg::axpy(fi, &post.mean, acc_c.row_mut(i));
                }
            }
        }
        objective.push(obj);
        for (k, a) in acc_a.iter_mut().enumerate() {
            if !(a.trace() > 0.0) {
                continue;
            }
            a.symmetrize();
            let chol = Cholesky::new_regularized(a)?;
            for i in k * d..(k + 1) * d {
                let row = chol.solve(acc_c.row(i));
                tvm.t.row_mut(i).copy_from_slice(&row);
            }
        }
        if !tvm.t.is_finite() {
            return Err(Error::NonFinite("total variability matrix"));
        }
    }
    objective.push(tvm_objective(stats, &tvm)?);
    Ok(TvmTraining { tvm, objective })
}

//! Synthetic graph data: latent samples, nonlinear mixing into node features,
//! and pairwise discrete link weights.
//!
//! Link weights are never materialized for all pairs. Each unordered pair
//! `(i, j)` owns a deterministic RNG stream keyed by the dataset's link seed,
//! so `w(i, j)` is a single consistent symmetric draw regardless of query
//! order, at O(n·d) memory.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{init_mlp_params, mlp_apply, Activation, MlpSpec, ParamStore};
use crate::rng::pair_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentKind {
    IndependentLaplace,
    CorrelatedGauss,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentConfig {
    pub kind: LatentKind,
    pub d_s: usize,
    pub n: usize,
}

impl LatentConfig {
    pub fn new(kind: LatentKind, d_s: usize, n: usize) -> Result<Self> {
        if d_s == 0 {
            return Err(Error::InvalidConfig("latent dimension must be >= 1".into()));
        }
        Ok(Self { kind, d_s, n })
    }
}

/// Tridiagonal covariance with unit diagonal and 0.3 on the first
/// off-diagonals.
pub fn correlated_gauss_covariance(d: usize) -> Matrix {
    let mut c = Matrix::identity(d);
    for i in 0..d.saturating_sub(1) {
        c[(i, i + 1)] = 0.3;
        c[(i + 1, i)] = 0.3;
    }
    c
}

/// Lower Cholesky factor of the correlated-Gauss covariance.
pub fn correlated_gauss_cholesky(d: usize) -> Matrix {
    let c = correlated_gauss_covariance(d);
    let dm = DMatrix::from_row_slice(d, d, c.data());
    let chol = dm
        .cholesky()
        .expect("tridiagonal 0.3 covariance is positive definite");
    let l = chol.l();
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            out[(i, j)] = l[(i, j)];
        }
    }
    out
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple.
    loop {
        let u1: f64 = rng.gen::<f64>();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.gen::<f64>();
        return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

fn unit_variance_laplace(rng: &mut impl Rng) -> f64 {
    // Inverse CDF with scale 1/sqrt(2): density ∝ exp(-sqrt(2)|s|), variance 1.
    let b = std::f64::consts::FRAC_1_SQRT_2;
    let u: f64 = rng.gen::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// n i.i.d. latent rows from the configured distribution.
pub fn sample_latents(cfg: &LatentConfig, rng: &mut impl Rng) -> Matrix {
    match cfg.kind {
        LatentKind::IndependentLaplace => {
            let mut s = Matrix::zeros(cfg.n, cfg.d_s);
            for v in s.data_mut() {
                *v = unit_variance_laplace(rng);
            }
            s
        }
        LatentKind::CorrelatedGauss => {
            let l = correlated_gauss_cholesky(cfg.d_s);
            let mut z = Matrix::zeros(cfg.n, cfg.d_s);
            for v in z.data_mut() {
                *v = standard_normal(rng);
            }
            // s = z Lᵀ gives rows with covariance L Lᵀ = C.
            z.matmul(&l.transpose())
        }
    }
}

/// Coefficient table of the conditional link distribution
/// p(w = k | s, s') ∝ exp(Σ_i α^k_i s_i s'_i), k ∈ {1, …, K}.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    k_max: usize,
    alpha: Matrix,
}

impl LinkModel {
    pub fn from_alpha(alpha: Matrix) -> Result<Self> {
        if alpha.rows() == 0 || alpha.cols() == 0 {
            return Err(Error::InvalidConfig("empty alpha table".into()));
        }
        if !alpha.is_finite() {
            return Err(Error::NonFinite {
                name: "alpha".into(),
            });
        }
        Ok(Self {
            k_max: alpha.rows(),
            alpha,
        })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn d_s(&self) -> usize {
        self.alpha.cols()
    }

    /// α row of state `k` (1-based).
    pub fn alpha_row(&self, k: usize) -> Result<&[f64]> {
        if k == 0 || k > self.k_max {
            return Err(Error::StateOutOfSupport {
                state: k,
                max: self.k_max,
            });
        }
        Ok(self.alpha.row(k - 1))
    }

    pub fn alpha(&self) -> &Matrix {
        &self.alpha
    }
}

/// α^k_i = 1 + 0.1ε when i = k, else 0.1ε, with ε i.i.d. Uniform[0, 1].
pub fn build_link_model(d_s: usize, k_max: usize, rng: &mut impl Rng) -> Result<LinkModel> {
    if d_s == 0 || k_max == 0 {
        return Err(Error::InvalidConfig("d_s and K must be >= 1".into()));
    }
    let mut alpha = Matrix::zeros(k_max, d_s);
    for k in 0..k_max {
        for i in 0..d_s {
            let eps: f64 = rng.gen::<f64>();
            alpha[(k, i)] = if i == k { 1.0 + 0.1 * eps } else { 0.1 * eps };
        }
    }
    LinkModel::from_alpha(alpha)
}

/// Normalized probability vector over states 1..=K; max-subtraction keeps the
/// softmax finite for any finite inputs.
pub fn link_prob(model: &LinkModel, s: &[f64], s_other: &[f64]) -> Result<Vec<f64>> {
    if s.len() != model.d_s() || s_other.len() != model.d_s() {
        return Err(Error::ShapeMismatch {
            context: "link_prob".into(),
            expected: format!("latent vectors of dim {}", model.d_s()),
            got: format!("{} and {}", s.len(), s_other.len()),
        });
    }
    let mut logits = Vec::with_capacity(model.k_max());
    for k in 0..model.k_max() {
        let row = model.alpha.row(k);
        let mut acc = 0.0;
        for i in 0..model.d_s() {
            acc += row[i] * s[i] * s_other[i];
        }
        if !acc.is_finite() {
            return Err(Error::NonFinite {
                name: format!("link logit k={}", k + 1),
            });
        }
        logits.push(acc);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= z;
    }
    Ok(probs)
}

/// Mixing function f: a feed-forward net mapping latents to node features,
/// with one hidden layer of width d_x and leaky ReLU slope 0.2.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingNetwork {
    pub spec: MlpSpec,
    pub params: ParamStore,
    pub d_s: usize,
    pub d_x: usize,
}

pub const MIXING_PREFIX: &str = "f";
const MIN_SINGULAR_VALUE: f64 = 1e-3;
const MAX_INIT_REDRAWS: usize = 1000;

fn min_singular_value(m: &Matrix) -> f64 {
    let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let sv = dm.singular_values();
    sv.iter().cloned().fold(f64::INFINITY, f64::min)
}

impl MixingNetwork {
    pub fn spec_for(d_s: usize, d_x: usize) -> Result<MlpSpec> {
        MlpSpec::new(vec![d_s, d_x, d_x], Activation::LeakyRelu(0.2))
    }

    /// Seeded init, redrawn until every weight matrix is well conditioned
    /// (min singular value above 1e-3): f must stay an embedding.
    pub fn init(d_s: usize, d_x: usize, rng: &mut impl Rng) -> Result<Self> {
        let spec = Self::spec_for(d_s, d_x)?;
        for _ in 0..MAX_INIT_REDRAWS {
            let params = init_mlp_params(&spec, MIXING_PREFIX, rng);
            let ok = (0..spec.num_weight_layers()).all(|l| {
                let w = params.get(&MlpSpec::weight_name(MIXING_PREFIX, l)).unwrap();
                min_singular_value(w) > MIN_SINGULAR_VALUE
            });
            if ok {
                return Ok(Self {
                    spec,
                    params,
                    d_s,
                    d_x,
                });
            }
        }
        Err(Error::InvalidConfig(format!(
            "could not draw a well-conditioned {d_s}->{d_x} mixing network in {MAX_INIT_REDRAWS} tries"
        )))
    }

    pub fn apply(&self, latents: &Matrix) -> Result<Matrix> {
        mlp_apply(&self.spec, &self.params, MIXING_PREFIX, latents)
    }
}

/// Node features plus lazily materialized symmetric link weights. The true
/// latents are retained for evaluation only.
#[derive(Debug, Clone)]
pub struct GraphDataset {
    pub x: Matrix,
    pub s_true: Matrix,
    pub link_seed: u64,
    pub link_model: LinkModel,
}

impl GraphDataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d_x(&self) -> usize {
        self.x.cols()
    }

    pub fn d_s(&self) -> usize {
        self.s_true.cols()
    }

    pub fn k_max(&self) -> usize {
        self.link_model.k_max()
    }

    /// The link weight w(i, j) ∈ {1, …, K}; symmetric and stable across calls.
    pub fn link_weight(&self, i: usize, j: usize) -> Result<usize> {
        let n = self.n();
        if i == j {
            return Err(Error::SelfLink { node: i });
        }
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::NodeOutOfRange { index: idx, n });
            }
        }
        let probs = link_prob(&self.link_model, self.s_true.row(i), self.s_true.row(j))?;
        let mut rng = pair_rng(self.link_seed, i, j);
        let u: f64 = rng.gen::<f64>();
        let mut cum = 0.0;
        for (k, p) in probs.iter().enumerate() {
            cum += p;
            if u < cum {
                return Ok(k + 1);
            }
        }
        Ok(probs.len()) // u landed in the last bin's rounding slack
    }

    /// Feature-only view for methods that must not see link weights.
    pub fn features(&self) -> &Matrix {
        &self.x
    }
}

/// x_i = f(s_i) rowwise from freshly sampled latents.
pub fn generate_dataset(
    latent_cfg: &LatentConfig,
    mixing: &MixingNetwork,
    link_model: LinkModel,
    latent_rng: &mut impl Rng,
    link_seed: u64,
) -> Result<GraphDataset> {
    if mixing.d_s != latent_cfg.d_s {
        return Err(Error::ShapeMismatch {
            context: "generate_dataset".into(),
            expected: format!("mixing d_s {}", mixing.d_s),
            got: format!("latent d_s {}", latent_cfg.d_s),
        });
    }
    if link_model.d_s() != latent_cfg.d_s {
        return Err(Error::ShapeMismatch {
            context: "generate_dataset".into(),
            expected: format!("link model d_s {}", link_model.d_s()),
            got: format!("latent d_s {}", latent_cfg.d_s),
        });
    }
    let s_true = sample_latents(latent_cfg, latent_rng);
    let x = mixing.apply(&s_true)?;
    Ok(GraphDataset {
        x,
        s_true,
        link_seed,
        link_model,
    })
}

//! The GCA estimator: bilinear ratio model over encoder outputs trained with
//! the empirical Donsker-Varadhan objective.
//!
//! The ratio model is r(w, x, x') = Σ_i β^w_i h_i(x) h_i(x') + b^w, where h
//! is a learned feed-forward encoder. Minimizing the DV objective drives r
//! toward the log-ratio log p(w|x,x') − log p(w), which recovers the latent
//! components up to permutation and scale.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::adam::AdamState;
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{
    grad_of_scalar, init_mlp_params, mlp_apply, mlp_forward_on_tape, Activation, MlpSpec,
    ParamStore, TapeParams,
};
use crate::rng::stream_rng;
use crate::synthdata::GraphDataset;

pub const ENCODER_PREFIX: &str = "h";
pub const RATIO_BETA: &str = "ratio.beta";
pub const RATIO_BIAS: &str = "ratio.bias";

const HIDDEN_WIDTH: usize = 50;
const NUM_HIDDEN: usize = 3;

/// Feed-forward encoder h modeling the inverse of the mixing function:
/// hidden layers of width 50 with ReLU, linear output of width d_s.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNetwork {
    pub spec: MlpSpec,
    pub params: ParamStore,
}

impl EncoderNetwork {
    pub fn spec_for(d_x: usize, d_s: usize) -> Result<MlpSpec> {
        let mut widths = vec![d_x];
        widths.extend(std::iter::repeat_n(HIDDEN_WIDTH, NUM_HIDDEN));
        widths.push(d_s);
        MlpSpec::new(widths, Activation::Relu)
    }

    pub fn init(d_x: usize, d_s: usize, rng: &mut impl Rng) -> Result<Self> {
        let spec = Self::spec_for(d_x, d_s)?;
        let params = init_mlp_params(&spec, ENCODER_PREFIX, rng);
        Ok(Self { spec, params })
    }

    pub fn d_s(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn d_x(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        mlp_apply(&self.spec, &self.params, ENCODER_PREFIX, x)
    }
}

/// β table and per-state bias of the ratio model.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioParams {
    /// K × d_s
    pub beta: Matrix,
    /// K × 1
    pub bias: Matrix,
}

impl RatioParams {
    /// β^w_i = 1 + 0.1ε when i = w else 0.1ε (the α recipe); b^w = 0.
    pub fn init(k_max: usize, d_s: usize, rng: &mut impl Rng) -> Self {
        let mut beta = Matrix::zeros(k_max, d_s);
        for w in 0..k_max {
            for i in 0..d_s {
                let eps: f64 = rng.gen::<f64>();
                beta[(w, i)] = if i == w { 1.0 + 0.1 * eps } else { 0.1 * eps };
            }
        }
        Self {
            beta,
            bias: Matrix::zeros(k_max, 1),
        }
    }

    pub fn k_max(&self) -> usize {
        self.beta.rows()
    }

    pub fn d_s(&self) -> usize {
        self.beta.cols()
    }
}

/// r(w, x, x') for a single pair of feature rows; w is 1-based.
pub fn ratio_value(
    enc: &EncoderNetwork,
    rp: &RatioParams,
    w: usize,
    x: &[f64],
    x_other: &[f64],
) -> Result<f64> {
    if w == 0 || w > rp.k_max() {
        return Err(Error::StateOutOfSupport {
            state: w,
            max: rp.k_max(),
        });
    }
    let hx = enc.encode(&Matrix::from_vec(1, x.len(), x.to_vec())?)?;
    let hy = enc.encode(&Matrix::from_vec(1, x_other.len(), x_other.to_vec())?)?;
    let mut acc = rp.bias[(w - 1, 0)];
    for i in 0..rp.d_s() {
        // Multiply the symmetric product first so that swapping x and x'
        // is bitwise neutral.
        acc += rp.beta[(w - 1, i)] * (hx[(0, i)] * hy[(0, i)]);
    }
    Ok(acc)
}

/// A minibatch of node pairs with their link weights and gathered feature
/// rows; `x1`/`x2` hold the first/second endpoint features rowwise.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize)>,
    pub weights: Vec<usize>,
    pub x1: Matrix,
    pub x2: Matrix,
}

impl PairBatch {
    pub fn from_dataset(ds: &GraphDataset, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut weights = Vec::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            weights.push(ds.link_weight(i, j)?);
        }
        let (first, second): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
        Ok(Self {
            x1: ds.x.select_rows(&first),
            x2: ds.x.select_rows(&second),
            pairs,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// m pairs drawn uniformly without replacement from {(i, j) | i < j}.
pub fn sample_pair_batch(
    ds: &GraphDataset,
    m: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize, usize)>> {
    let n = ds.n();
    let total = n * n.saturating_sub(1) / 2;
    if m > total {
        return Err(Error::BatchTooLarge {
            requested: m,
            available: total,
        });
    }
    let pairs: Vec<(usize, usize)> = if 2 * m >= total {
        // Dense request: enumerate and shuffle.
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        all.shuffle(rng);
        all.truncate(m);
        all
    } else {
        let mut seen = std::collections::HashSet::with_capacity(m);
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a == b {
                continue;
            }
            let p = (a.min(b), a.max(b));
            if seen.insert(p) {
                out.push(p);
            }
        }
        out
    };
    pairs
        .into_iter()
        .map(|(i, j)| Ok((i, j, ds.link_weight(i, j)?)))
        .collect()
}

fn state_indices(weights: &[usize], k_max: usize) -> Result<Vec<usize>> {
    weights
        .iter()
        .map(|&w| {
            if w == 0 || w > k_max {
                Err(Error::StateOutOfSupport {
                    state: w,
                    max: k_max,
                })
            } else {
                Ok(w - 1)
            }
        })
        .collect()
}

/// Differentiable Ĵ_DV on the tape:
/// −mean_batch r(w_ij, x_i, x_j) + log-mean-exp_batch r(w*_ij, x_i, x_j).
pub fn dv_objective_node(
    tape: &mut Tape,
    tp: &TapeParams,
    enc_spec: &MlpSpec,
    k_max: usize,
    batch: &PairBatch,
    permuted_weights: &[usize],
) -> Result<NodeId> {
    if permuted_weights.len() != batch.len() {
        return Err(Error::ShapeMismatch {
            context: "dv_objective permuted weights".into(),
            expected: format!("{}", batch.len()),
            got: format!("{}", permuted_weights.len()),
        });
    }
    let x1 = tape.constant(batch.x1.clone(), "batch.x1")?;
    let x2 = tape.constant(batch.x2.clone(), "batch.x2")?;
    let h1 = mlp_forward_on_tape(tape, enc_spec, tp, ENCODER_PREFIX, x1)?;
    let h2 = mlp_forward_on_tape(tape, enc_spec, tp, ENCODER_PREFIX, x2)?;
    let prod = tape.hadamard(h1, h2)?;

    let beta = tp.node(RATIO_BETA)?;
    let bias = tp.node(RATIO_BIAS)?;
    let ratio_column = |tape: &mut Tape, weights: &[usize]| -> Result<NodeId> {
        let idx = state_indices(weights, k_max)?;
        let beta_sel = tape.gather_rows(beta, &idx)?;
        let weighted = tape.hadamard(beta_sel, prod)?;
        let summed = tape.row_sum(weighted)?;
        let bias_sel = tape.gather_rows(bias, &idx)?;
        tape.add(summed, bias_sel)
    };

    let r_data = ratio_column(tape, &batch.weights)?;
    let r_perm = ratio_column(tape, permuted_weights)?;
    let mean_data = tape.mean(r_data)?;
    let neg_mean = tape.scale(mean_data, -1.0)?;
    let lme = tape.log_mean_exp(r_perm)?;
    tape.add(neg_mean, lme)
}

fn combined_params(enc: &EncoderNetwork, rp: &RatioParams) -> ParamStore {
    let mut params = enc.params.clone();
    params.insert(RATIO_BETA, rp.beta.clone());
    params.insert(RATIO_BIAS, rp.bias.clone());
    params
}

fn split_params(
    enc_spec: &MlpSpec,
    params: &ParamStore,
) -> Result<(EncoderNetwork, RatioParams)> {
    let mut enc_params = ParamStore::new();
    for l in 0..enc_spec.num_weight_layers() {
        for name in [
            MlpSpec::weight_name(ENCODER_PREFIX, l),
            MlpSpec::bias_name(ENCODER_PREFIX, l),
        ] {
            let m = params
                .get(&name)
                .ok_or_else(|| Error::InvalidConfig(format!("missing parameter '{name}'")))?;
            enc_params.insert(&name, m.clone());
        }
    }
    let beta = params
        .get(RATIO_BETA)
        .ok_or_else(|| Error::InvalidConfig("missing ratio.beta".into()))?;
    let bias = params
        .get(RATIO_BIAS)
        .ok_or_else(|| Error::InvalidConfig("missing ratio.bias".into()))?;
    Ok((
        EncoderNetwork {
            spec: enc_spec.clone(),
            params: enc_params,
        },
        RatioParams {
            beta: beta.clone(),
            bias: bias.clone(),
        },
    ))
}

/// Scalar value of the empirical DV objective at the given parameters.
pub fn dv_empirical_objective(
    enc: &EncoderNetwork,
    rp: &RatioParams,
    batch: &PairBatch,
    permuted_weights: &[usize],
) -> Result<f64> {
    let params = combined_params(enc, rp);
    let spec = enc.spec.clone();
    let k_max = rp.k_max();
    let (value, _) = grad_of_scalar(&params, |tape, tp| {
        dv_objective_node(tape, tp, &spec, k_max, batch, permuted_weights)
    })?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub minibatch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            minibatch_size: 100,
            iterations: 100_000,
            lr: 1e-4,
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size == 0 || self.lr <= 0.0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig(
                "minibatch_size, lr and eval_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LossTrace {
    pub iterations: Vec<usize>,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcaModel {
    pub encoder: EncoderNetwork,
    pub ratio: RatioParams,
}

/// Minimize Ĵ_DV with Adam over fresh minibatches; each batch's weight
/// column is independently re-permuted per iteration.
pub fn train_gca(ds: &GraphDataset, cfg: &TrainConfig) -> Result<(GcaModel, LossTrace)> {
    cfg.validate()?;
    let mut init_rng = stream_rng(cfg.seed, "model-init");
    let encoder = EncoderNetwork::init(ds.d_x(), ds.d_s(), &mut init_rng)?;
    let ratio = RatioParams::init(ds.k_max(), ds.d_s(), &mut init_rng);

    let mut params = combined_params(&encoder, &ratio);
    let enc_spec = encoder.spec.clone();
    let k_max = ratio.k_max();
    let mut flat = params.pack();
    let mut adam = AdamState::new(flat.len(), cfg.lr);
    let mut batch_rng = stream_rng(cfg.seed, "batches");
    let mut perm_rng = stream_rng(cfg.seed, "permutations");
    let mut trace = LossTrace::default();

    for it in 0..cfg.iterations {
        let mut step = || -> Result<f64> {
            let pairs = sample_pair_batch(ds, cfg.minibatch_size, &mut batch_rng)?;
            let batch = PairBatch::from_dataset(
                ds,
                pairs.iter().map(|&(i, j, _)| (i, j)).collect(),
            )?;
            let mut permuted = batch.weights.clone();
            permuted.shuffle(&mut perm_rng);
            let (value, grad) = grad_of_scalar(&params, |tape, tp| {
                dv_objective_node(tape, tp, &enc_spec, k_max, &batch, &permuted)
            })?;
            adam.step(&mut flat, &grad)?;
            params.unpack(&flat)?;
            Ok(value)
        };
        match step() {
            Ok(value) => {
                if it % cfg.eval_every == 0 {
                    trace.iterations.push(it);
                    trace.losses.push(value);
                }
            }
            Err(e) => {
                return Err(Error::Training {
                    iteration: it,
                    source: Box::new(e),
                })
            }
        }
    }

    let (encoder, ratio) = split_params(&enc_spec, &params)?;
    Ok((GcaModel { encoder, ratio }, trace))
}

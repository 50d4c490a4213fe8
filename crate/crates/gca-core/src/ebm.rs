//! Energy-based baseline: r(x, x') = h(x)ᵀh(x') + a(h(x)) trained with the
//! DV objective over within-batch permuted partners. Link weights are never
//! read; the trainer only sees the feature matrix.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::adam::AdamState;
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::gca::{EncoderNetwork, LossTrace, TrainConfig, ENCODER_PREFIX};
use crate::matrix::Matrix;
use crate::nn::{
    grad_of_scalar, init_mlp_params, mlp_apply, mlp_forward_on_tape, Activation, MlpSpec,
    ParamStore, TapeParams,
};
use crate::rng::stream_rng;

pub const HEAD_PREFIX: &str = "a";

/// Encoder shared with GCA plus the affine head a: d_s → 1 (no activation).
#[derive(Debug, Clone, PartialEq)]
pub struct EbmParams {
    pub encoder: EncoderNetwork,
    pub head_spec: MlpSpec,
    pub head_params: ParamStore,
}

impl EbmParams {
    pub fn init(d_x: usize, d_s: usize, rng: &mut impl Rng) -> Result<Self> {
        let encoder = EncoderNetwork::init(d_x, d_s, rng)?;
        let head_spec = MlpSpec::new(vec![d_s, 1], Activation::None)?;
        let head_params = init_mlp_params(&head_spec, HEAD_PREFIX, rng);
        Ok(Self {
            encoder,
            head_spec,
            head_params,
        })
    }

    fn head_apply(&self, h: &Matrix) -> Result<Matrix> {
        mlp_apply(&self.head_spec, &self.head_params, HEAD_PREFIX, h)
    }
}

/// r(x, x') = h(x)ᵀh(x') + a(h(x)); asymmetric through the head term.
pub fn ebm_ratio(p: &EbmParams, x: &[f64], x_other: &[f64]) -> Result<f64> {
    let hx = p.encoder.encode(&Matrix::from_vec(1, x.len(), x.to_vec())?)?;
    let hy = p
        .encoder
        .encode(&Matrix::from_vec(1, x_other.len(), x_other.to_vec())?)?;
    let dot: f64 = hx.row(0).iter().zip(hy.row(0)).map(|(a, b)| a * b).sum();
    let head = p.head_apply(&hx)?;
    Ok(dot + head[(0, 0)])
}

fn combined_params(p: &EbmParams) -> ParamStore {
    let mut params = p.encoder.params.clone();
    params.extend(p.head_params.clone());
    params
}

fn split_params(
    enc_spec: &MlpSpec,
    head_spec: &MlpSpec,
    params: &ParamStore,
) -> Result<EbmParams> {
    let pick = |prefix: &str, spec: &MlpSpec| -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for l in 0..spec.num_weight_layers() {
            for name in [MlpSpec::weight_name(prefix, l), MlpSpec::bias_name(prefix, l)] {
                let m = params
                    .get(&name)
                    .ok_or_else(|| Error::InvalidConfig(format!("missing parameter '{name}'")))?;
                out.insert(&name, m.clone());
            }
        }
        Ok(out)
    };
    Ok(EbmParams {
        encoder: EncoderNetwork {
            spec: enc_spec.clone(),
            params: pick(ENCODER_PREFIX, enc_spec)?,
        },
        head_spec: head_spec.clone(),
        head_params: pick(HEAD_PREFIX, head_spec)?,
    })
}

/// Differentiable Ĵ_DV for the EBM:
/// −mean r(x_i, x_j) + log-mean-exp r(x_i, x*_j), with x*_j a within-batch
/// permutation of the second endpoints.
pub fn ebm_objective_node(
    tape: &mut Tape,
    tp: &TapeParams,
    enc_spec: &MlpSpec,
    x1: &Matrix,
    x2: &Matrix,
    partner_perm: &[usize],
) -> Result<NodeId> {
    if partner_perm.len() != x1.rows() {
        return Err(Error::ShapeMismatch {
            context: "ebm_objective partner permutation".into(),
            expected: format!("{}", x1.rows()),
            got: format!("{}", partner_perm.len()),
        });
    }
    let x1 = tape.constant(x1.clone(), "batch.x1")?;
    let x2 = tape.constant(x2.clone(), "batch.x2")?;
    let h1 = mlp_forward_on_tape(tape, enc_spec, tp, ENCODER_PREFIX, x1)?;
    let h2 = mlp_forward_on_tape(tape, enc_spec, tp, ENCODER_PREFIX, x2)?;

    let aw = tp.node(&MlpSpec::weight_name(HEAD_PREFIX, 0))?;
    let ab = tp.node(&MlpSpec::bias_name(HEAD_PREFIX, 0))?;
    let head_lin = tape.matmul(h1, aw)?;
    let head = tape.add_row_broadcast(head_lin, ab)?;

    let ratio_column = |tape: &mut Tape, partner: NodeId| -> Result<NodeId> {
        let prod = tape.hadamard(h1, partner)?;
        let dot = tape.row_sum(prod)?;
        tape.add(dot, head)
    };

    let r_data = ratio_column(tape, h2)?;
    let h2_perm = tape.gather_rows(h2, partner_perm)?;
    let r_perm = ratio_column(tape, h2_perm)?;

    let mean_data = tape.mean(r_data)?;
    let neg_mean = tape.scale(mean_data, -1.0)?;
    let lme = tape.log_mean_exp(r_perm)?;
    tape.add(neg_mean, lme)
}

fn sample_index_pairs(n: usize, m: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
    let total = n * n.saturating_sub(1) / 2;
    if m > total {
        return Err(Error::BatchTooLarge {
            requested: m,
            available: total,
        });
    }
    let mut seen = std::collections::HashSet::with_capacity(m);
    let mut out = Vec::with_capacity(m);
    if 2 * m >= total {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        all.shuffle(rng);
        all.truncate(m);
        return Ok(all);
    }
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
    Ok(out)
}

/// Train the EBM on node features alone.
pub fn train_ebm(features: &Matrix, d_s: usize, cfg: &TrainConfig) -> Result<(EbmParams, LossTrace)> {
    cfg.validate()?;
    let n = features.rows();
    let mut init_rng = stream_rng(cfg.seed, "model-init");
    let init = EbmParams::init(features.cols(), d_s, &mut init_rng)?;
    let enc_spec = init.encoder.spec.clone();
    let head_spec = init.head_spec.clone();

    let mut params = combined_params(&init);
    let mut flat = params.pack();
    let mut adam = AdamState::new(flat.len(), cfg.lr);
    let mut batch_rng = stream_rng(cfg.seed, "batches");
    let mut perm_rng = stream_rng(cfg.seed, "permutations");
    let mut trace = LossTrace::default();

    for it in 0..cfg.iterations {
        let mut step = || -> Result<f64> {
            let pairs = sample_index_pairs(n, cfg.minibatch_size, &mut batch_rng)?;
            let (first, second): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let x1 = features.select_rows(&first);
            let x2 = features.select_rows(&second);
            let mut perm: Vec<usize> = (0..x1.rows()).collect();
            perm.shuffle(&mut perm_rng);
            let (value, grad) = grad_of_scalar(&params, |tape, tp| {
                ebm_objective_node(tape, tp, &enc_spec, &x1, &x2, &perm)
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

    let model = split_params(&enc_spec, &head_spec, &params)?;
    Ok((model, trace))
}

//! Feed-forward networks and the named parameter store.

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    None,
}

/// Layer widths and hidden activation of a feed-forward net. The final layer
/// is always linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidConfig(
                "MlpSpec needs at least input and output widths".into(),
            ));
        }
        if layer_widths.contains(&0) {
            return Err(Error::InvalidConfig("zero-width layer".into()));
        }
        if let Activation::LeakyRelu(slope) = activation {
            if !(0.0 < slope && slope < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "leaky ReLU slope {slope} outside (0, 1)"
                )));
            }
        }
        Ok(Self {
            layer_widths,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        *self.layer_widths.first().unwrap()
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_weight_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.w{layer}")
    }

    pub fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.b{layer}")
    }
}

/// Ordered collection of named tensors with a flat-vector view for the
/// optimizer. Pack/unpack round-trips bitwise.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Matrix)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Matrix) {
        debug_assert!(
            self.index_of(name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push((name.to_string(), value));
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn flat_len(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for (_, m) in &self.entries {
            out.extend_from_slice(m.data());
        }
        out
    }

    pub fn unpack(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::ShapeMismatch {
                context: "ParamStore::unpack".into(),
                expected: format!("{} values", self.flat_len()),
                got: format!("{}", flat.len()),
            });
        }
        let mut offset = 0;
        for (_, m) in &mut self.entries {
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Merge all entries of `other`, prefix-disjointness is the caller's duty.
    pub fn extend(&mut self, other: ParamStore) {
        self.entries.extend(other.entries);
    }
}

/// Uniform init on [-a, a] with a = sqrt(6 / (fan_in + fan_out)); zero biases.
pub fn init_mlp_params(spec: &MlpSpec, prefix: &str, rng: &mut impl Rng) -> ParamStore {
    let mut params = ParamStore::new();
    for l in 0..spec.num_weight_layers() {
        let (fan_in, fan_out) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Matrix::from_vec(
            fan_in,
            fan_out,
            (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-a..=a))
                .collect(),
        )
        .unwrap();
        params.insert(&MlpSpec::weight_name(prefix, l), w);
        params.insert(&MlpSpec::bias_name(prefix, l), Matrix::zeros(1, fan_out));
    }
    params
}

fn layer_tensors<'a>(
    spec: &MlpSpec,
    params: &'a ParamStore,
    prefix: &str,
    layer: usize,
) -> Result<(&'a Matrix, &'a Matrix)> {
    let wn = MlpSpec::weight_name(prefix, layer);
    let bn = MlpSpec::bias_name(prefix, layer);
    let missing = |name: String| Error::InvalidConfig(format!("missing parameter '{name}'"));
    let w = params.get(&wn).ok_or_else(|| missing(wn.clone()))?;
    let b = params.get(&bn).ok_or_else(|| missing(bn.clone()))?;
    let (fan_in, fan_out) = (spec.layer_widths[layer], spec.layer_widths[layer + 1]);
    if w.rows() != fan_in || w.cols() != fan_out || b.rows() != 1 || b.cols() != fan_out {
        return Err(Error::ShapeMismatch {
            context: format!("layer {layer} ('{wn}')"),
            expected: format!("w {fan_in}x{fan_out}, b 1x{fan_out}"),
            got: format!("w {}x{}, b {}x{}", w.rows(), w.cols(), b.rows(), b.cols()),
        });
    }
    Ok((w, b))
}

/// Plain forward pass: row i of the output is the net applied to row i of
/// `input`. No batch-dependent reductions anywhere.
pub fn mlp_apply(
    spec: &MlpSpec,
    params: &ParamStore,
    prefix: &str,
    input: &Matrix,
) -> Result<Matrix> {
    if input.cols() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "mlp_apply input".into(),
            expected: format!("{} cols", spec.input_dim()),
            got: format!("{}", input.cols()),
        });
    }
    let mut h = input.clone();
    for l in 0..spec.num_weight_layers() {
        let (w, b) = layer_tensors(spec, params, prefix, l)?;
        let mut z = h.matmul(w);
        for i in 0..z.rows() {
            for (o, bv) in z.row_mut(i).iter_mut().zip(b.row(0)) {
                *o += bv;
            }
        }
        let last = l + 1 == spec.num_weight_layers();
        h = if last {
            z
        } else {
            match spec.activation {
                Activation::Relu => z.map(|x| x.max(0.0)),
                Activation::LeakyRelu(s) => z.map(|x| if x >= 0.0 { x } else { s * x }),
                Activation::None => z,
            }
        };
        if !h.is_finite() {
            return Err(Error::NonFinite {
                name: MlpSpec::weight_name(prefix, l),
            });
        }
    }
    Ok(h)
}

/// Leaf nodes for every parameter in `params`, in store order.
pub struct TapeParams {
    names: Vec<String>,
    nodes: Vec<NodeId>,
}

impl TapeParams {
    pub fn bind(tape: &mut Tape, params: &ParamStore) -> Result<Self> {
        let mut names = Vec::new();
        let mut nodes = Vec::new();
        for (name, value) in params.iter() {
            nodes.push(tape.leaf(value.clone(), name, true)?);
            names.push(name.to_string());
        }
        Ok(Self { names, nodes })
    }

    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.nodes[i])
            .ok_or_else(|| Error::InvalidConfig(format!("missing parameter '{name}'")))
    }
}

/// Forward pass recorded on the tape, producing differentiable activations.
pub fn mlp_forward_on_tape(
    tape: &mut Tape,
    spec: &MlpSpec,
    tp: &TapeParams,
    prefix: &str,
    input: NodeId,
) -> Result<NodeId> {
    let mut h = input;
    for l in 0..spec.num_weight_layers() {
        let w = tp.node(&MlpSpec::weight_name(prefix, l))?;
        let b = tp.node(&MlpSpec::bias_name(prefix, l))?;
        let z = tape.matmul(h, w)?;
        let z = tape.add_row_broadcast(z, b)?;
        let last = l + 1 == spec.num_weight_layers();
        h = if last {
            z
        } else {
            match spec.activation {
                Activation::Relu => tape.relu(z)?,
                Activation::LeakyRelu(s) => tape.leaky_relu(z, s)?,
                Activation::None => z,
            }
        };
    }
    Ok(h)
}

/// Value and flat gradient of a scalar objective built on a fresh tape from
/// the given parameters. Gradients of parameters the objective never touches
/// are zero.
pub fn grad_of_scalar<F>(params: &ParamStore, build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &TapeParams) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let tp = TapeParams::bind(&mut tape, params)?;
    let root = build(&mut tape, &tp)?;
    let value = tape.scalar(root);
    let grads = tape.backward(root)?;
    let mut flat = Vec::with_capacity(params.flat_len());
    for (idx, (_, m)) in params.iter().enumerate() {
        match grads[tp.nodes[idx]].as_ref() {
            Some(g) => flat.extend_from_slice(g.data()),
            None => flat.extend(std::iter::repeat_n(0.0, m.len())),
        }
    }
    Ok((value, flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn identity_params(spec: &MlpSpec, prefix: &str) -> ParamStore {
        let mut p = ParamStore::new();
        for l in 0..spec.num_weight_layers() {
            let n = spec.layer_widths[l];
            assert_eq!(n, spec.layer_widths[l + 1]);
            p.insert(&MlpSpec::weight_name(prefix, l), Matrix::identity(n));
            p.insert(&MlpSpec::bias_name(prefix, l), Matrix::zeros(1, n));
        }
        p
    }

    #[test]
    fn identity_net_passes_nonnegative_input_through() {
        let spec = MlpSpec::new(vec![3, 3, 3], Activation::LeakyRelu(0.2)).unwrap();
        let p = identity_params(&spec, "f");
        let input = Matrix::from_vec(2, 3, vec![0.0, 1.0, 2.5, 0.3, 4.0, 0.0]).unwrap();
        let out = mlp_apply(&spec, &p, "f", &input).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn leaky_relu_slope_on_negative_scalar() {
        let spec = MlpSpec::new(vec![1, 1, 1], Activation::LeakyRelu(0.2)).unwrap();
        let p = identity_params(&spec, "f");
        let input = Matrix::from_vec(1, 1, vec![-1.0]).unwrap();
        let out = mlp_apply(&spec, &p, "f", &input).unwrap();
        assert!((out.data()[0] - (-0.2)).abs() < 1e-15);
    }

    #[test]
    fn batch_matches_per_row_evaluation() {
        let spec = MlpSpec::new(vec![4, 5, 2], Activation::Relu).unwrap();
        let mut rng = stream_rng(9, "test-init");
        let p = init_mlp_params(&spec, "f", &mut rng);
        let batch = Matrix::from_vec(
            3,
            4,
            (0..12).map(|i| (i as f64) * 0.37 - 1.9).collect(),
        )
        .unwrap();
        let full = mlp_apply(&spec, &p, "f", &batch).unwrap();
        for i in 0..3 {
            let single = Matrix::from_vec(1, 4, batch.row(i).to_vec()).unwrap();
            let out = mlp_apply(&spec, &p, "f", &single).unwrap();
            assert_eq!(out.row(0), full.row(i), "row {i} differs");
        }
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let spec = MlpSpec::new(vec![3, 2], Activation::Relu).unwrap();
        let mut p = ParamStore::new();
        p.insert("f.w0", Matrix::zeros(3, 4)); // wrong fan_out
        p.insert("f.b0", Matrix::zeros(1, 2));
        let input = Matrix::zeros(1, 3);
        let err = mlp_apply(&spec, &p, "f", &input).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let spec = MlpSpec::new(vec![3, 6, 2], Activation::LeakyRelu(0.2)).unwrap();
        let mut rng = stream_rng(11, "test-init");
        let p = init_mlp_params(&spec, "h", &mut rng);
        let input = Matrix::from_vec(4, 3, (0..12).map(|i| (i as f64) - 6.0).collect()).unwrap();
        let plain = mlp_apply(&spec, &p, "h", &input).unwrap();

        let mut tape = Tape::new();
        let tp = TapeParams::bind(&mut tape, &p).unwrap();
        let x = tape.constant(input, "x").unwrap();
        let out = mlp_forward_on_tape(&mut tape, &spec, &tp, "h", x).unwrap();
        assert_eq!(tape.value(out), &plain);
    }

    #[test]
    fn grad_of_constant_objective_is_zero() {
        let mut p = ParamStore::new();
        p.insert("theta", Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let (v, g) = grad_of_scalar(&p, |tape, _| {
            tape.constant(Matrix::from_vec(1, 1, vec![4.0]).unwrap(), "c")
        })
        .unwrap();
        assert_eq!(v, 4.0);
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn grad_of_linear_objective_is_exact() {
        let mut p = ParamStore::new();
        p.insert("theta", Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let c = vec![0.5, -1.5, 2.0];
        let cm = Matrix::from_vec(1, 3, c.clone()).unwrap();
        let (v, g) = grad_of_scalar(&p, |tape, tp| {
            let theta = tp.node("theta")?;
            let cn = tape.constant(cm.clone(), "c")?;
            let prod = tape.hadamard(theta, cn)?;
            tape.sum(prod)
        })
        .unwrap();
        assert!((v - (0.5 - 3.0 + 6.0)).abs() < 1e-15);
        assert_eq!(g, c);
    }

    proptest! {
        #[test]
        fn pack_unpack_is_bijective(values in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let n = values.len();
            let mut p = ParamStore::new();
            p.insert("a", Matrix::from_vec(1, n, values.clone()).unwrap());
            p.insert("b", Matrix::from_vec(n, 1, values.iter().map(|v| v * 0.5).collect()).unwrap());
            let packed = p.pack();
            let mut q = p.clone();
            q.unpack(&packed).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}

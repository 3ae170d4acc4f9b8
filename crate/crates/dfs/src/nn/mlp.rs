//! Dense feed-forward networks with manual backpropagation.
//!
//! A network is a chain of affine layers; every hidden layer applies ReLU and
//! the output layer is identity. Parameters live in one flat `f32` buffer
//! (weights row-major `(out, in)`, then biases, per layer) which is also the
//! checkpoint blob layout. Arithmetic is `f64` throughout.

use super::rng::RngStream;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSpec {
    in_dim: usize,
    out_dim: usize,
    weight_offset: usize,
    bias_offset: usize,
}

/// A multilayer perceptron with ReLU hidden activations and identity output.
#[derive(Debug, Clone)]
pub struct MlpNet {
    layer_sizes: Vec<usize>,
    layout: Vec<LayerSpec>,
    params: Vec<f32>,
}

/// Cached activations from one forward pass, consumed by [`MlpNet::backward`].
///
/// A trace is only meaningful against the network (and the parameter values)
/// that produced it; replaying it against a different topology is rejected.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    layer_sizes: Vec<usize>,
    input: Vec<f64>,
    /// Post-activation output of each layer, in order.
    activations: Vec<Vec<f64>>,
}

impl MlpTrace {
    /// Output of the forward pass that produced this trace.
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has at least one layer")
    }
}

/// Gradients for every parameter of one network, in flat parameter order.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    flat: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros(param_count: usize) -> Self {
        Self {
            flat: vec![0.0; param_count],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Adds `other * scale` into `self`.
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        debug_assert_eq!(self.flat.len(), other.flat.len());
        for (a, b) in self.flat.iter_mut().zip(&other.flat) {
            *a += b * scale;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.flat {
            *g *= factor;
        }
    }
}

fn layout_for(layer_sizes: &[usize]) -> (Vec<LayerSpec>, usize) {
    let mut layout = Vec::with_capacity(layer_sizes.len() - 1);
    let mut offset = 0;
    for w in layer_sizes.windows(2) {
        let (in_dim, out_dim) = (w[0], w[1]);
        layout.push(LayerSpec {
            in_dim,
            out_dim,
            weight_offset: offset,
            bias_offset: offset + in_dim * out_dim,
        });
        offset += in_dim * out_dim + out_dim;
    }
    (layout, offset)
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<(), NnError> {
    if layer_sizes.len() < 2 {
        return Err(NnError::BadTopology(format!(
            "need at least 2 layer sizes, got {}",
            layer_sizes.len()
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(NnError::BadTopology("layer sizes must be positive".into()));
    }
    Ok(())
}

impl MlpNet {
    /// Builds a network with seeded uniform init.
    ///
    /// Weights are drawn from `U[-1/sqrt(fan_in), +1/sqrt(fan_in)]`; biases
    /// start at zero. Layer order, then row-major weight order, fixes the
    /// draw sequence.
    pub fn new(layer_sizes: &[usize], rng: &mut RngStream) -> Result<Self, NnError> {
        validate_sizes(layer_sizes)?;
        let (layout, count) = layout_for(layer_sizes);
        let mut params = vec![0.0f32; count];
        for spec in &layout {
            let limit = 1.0 / (spec.in_dim as f64).sqrt();
            for i in 0..spec.in_dim * spec.out_dim {
                params[spec.weight_offset + i] = rng.uniform(-limit, limit) as f32;
            }
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layout,
            params,
        })
    }

    /// Builds a network from explicit per-layer `(weights, biases)` pairs.
    ///
    /// Weights are row-major `(out_dim, in_dim)`.
    pub fn from_parts(
        layer_sizes: &[usize],
        layers: &[(Vec<f32>, Vec<f32>)],
    ) -> Result<Self, NnError> {
        validate_sizes(layer_sizes)?;
        if layers.len() != layer_sizes.len() - 1 {
            return Err(NnError::BadTopology(format!(
                "expected {} layers, got {}",
                layer_sizes.len() - 1,
                layers.len()
            )));
        }
        let (layout, count) = layout_for(layer_sizes);
        let mut params = vec![0.0f32; count];
        for (spec, (weights, biases)) in layout.iter().zip(layers) {
            if weights.len() != spec.in_dim * spec.out_dim {
                return Err(NnError::DimMismatch {
                    context: "layer weights",
                    expected: spec.in_dim * spec.out_dim,
                    got: weights.len(),
                });
            }
            if biases.len() != spec.out_dim {
                return Err(NnError::DimMismatch {
                    context: "layer biases",
                    expected: spec.out_dim,
                    got: biases.len(),
                });
            }
            params[spec.weight_offset..spec.weight_offset + weights.len()]
                .copy_from_slice(weights);
            params[spec.bias_offset..spec.bias_offset + biases.len()].copy_from_slice(biases);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layout,
            params,
        })
    }

    /// Builds a network from a flat parameter blob (checkpoint layout).
    pub fn from_flat(layer_sizes: &[usize], flat: &[f32]) -> Result<Self, NnError> {
        validate_sizes(layer_sizes)?;
        let (layout, count) = layout_for(layer_sizes);
        if flat.len() != count {
            return Err(NnError::DimMismatch {
                context: "flat parameter blob",
                expected: count,
                got: flat.len(),
            });
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layout,
            params: flat.to_vec(),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated topology")
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Flat view of all parameters (weights then biases, per layer).
    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn set_params(&mut self, flat: &[f32]) -> Result<(), NnError> {
        if flat.len() != self.params.len() {
            return Err(NnError::DimMismatch {
                context: "set_params",
                expected: self.params.len(),
                got: flat.len(),
            });
        }
        self.params.copy_from_slice(flat);
        Ok(())
    }

    /// Weight slice of layer `l`, row-major `(out_dim, in_dim)`.
    pub fn layer_weights(&self, l: usize) -> &[f32] {
        let spec = self.layout[l];
        &self.params[spec.weight_offset..spec.weight_offset + spec.in_dim * spec.out_dim]
    }

    pub fn layer_biases(&self, l: usize) -> &[f32] {
        let spec = self.layout[l];
        &self.params[spec.bias_offset..spec.bias_offset + spec.out_dim]
    }

    /// Weight-gradient slice of layer `l` within `grads`.
    pub fn layer_weight_grads<'g>(&self, grads: &'g MlpGrads, l: usize) -> &'g [f64] {
        let spec = self.layout[l];
        &grads.flat[spec.weight_offset..spec.weight_offset + spec.in_dim * spec.out_dim]
    }

    pub fn layer_bias_grads<'g>(&self, grads: &'g MlpGrads, l: usize) -> &'g [f64] {
        let spec = self.layout[l];
        &grads.flat[spec.bias_offset..spec.bias_offset + spec.out_dim]
    }

    /// Forward pass. Returns the output and the activation trace needed by
    /// [`MlpNet::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpTrace), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimMismatch {
                context: "mlp forward input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite {
                context: "mlp forward input",
            });
        }
        let last = self.layout.len() - 1;
        let mut activations = Vec::with_capacity(self.layout.len());
        let mut current = input;
        for (l, spec) in self.layout.iter().enumerate() {
            let mut out = vec![0.0f64; spec.out_dim];
            for o in 0..spec.out_dim {
                let row = spec.weight_offset + o * spec.in_dim;
                let mut acc = self.params[spec.bias_offset + o] as f64;
                for (i, &x) in current.iter().enumerate() {
                    acc += self.params[row + i] as f64 * x;
                }
                out[o] = if l < last { acc.max(0.0) } else { acc };
            }
            activations.push(out);
            current = activations.last().expect("just pushed");
        }
        let output = activations.last().expect("at least one layer").clone();
        Ok((
            output,
            MlpTrace {
                layer_sizes: self.layer_sizes.clone(),
                input: input.to_vec(),
                activations,
            },
        ))
    }

    /// Backpropagates `upstream` (dLoss/dOutput) through a cached forward
    /// pass. Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(
        &self,
        trace: &MlpTrace,
        upstream: &[f64],
    ) -> Result<(MlpGrads, Vec<f64>), NnError> {
        let mut grads = MlpGrads::zeros(self.params.len());
        let d_input = self.backward_into(trace, upstream, &mut grads, 1.0)?;
        Ok((grads, d_input))
    }

    /// Like [`MlpNet::backward`] but accumulates `scale *` parameter
    /// gradients into `grads` (mini-batch accumulation). The returned input
    /// gradient is also scaled.
    pub fn backward_into(
        &self,
        trace: &MlpTrace,
        upstream: &[f64],
        grads: &mut MlpGrads,
        scale: f64,
    ) -> Result<Vec<f64>, NnError> {
        if trace.layer_sizes != self.layer_sizes {
            return Err(NnError::TraceMismatch);
        }
        if upstream.len() != self.output_dim() {
            return Err(NnError::DimMismatch {
                context: "mlp backward upstream",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if grads.flat.len() != self.params.len() {
            return Err(NnError::DimMismatch {
                context: "mlp backward grads buffer",
                expected: self.params.len(),
                got: grads.flat.len(),
            });
        }
        let last = self.layout.len() - 1;
        let mut delta = upstream.to_vec();
        for (l, spec) in self.layout.iter().enumerate().rev() {
            let act = &trace.activations[l];
            // ReLU derivative for hidden layers; identity for the output
            // layer. act > 0 iff the pre-activation was positive (ReLU'(0)=0).
            let mut dz = delta;
            if l < last {
                for (d, &a) in dz.iter_mut().zip(act.iter()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let prev: &[f64] = if l == 0 {
                &trace.input
            } else {
                &trace.activations[l - 1]
            };
            let mut d_prev = vec![0.0f64; spec.in_dim];
            for o in 0..spec.out_dim {
                let g = dz[o];
                grads.flat[spec.bias_offset + o] += scale * g;
                let row = spec.weight_offset + o * spec.in_dim;
                for i in 0..spec.in_dim {
                    grads.flat[row + i] += scale * g * prev[i];
                    d_prev[i] += self.params[row + i] as f64 * g;
                }
            }
            delta = d_prev;
        }
        for d in &mut delta {
            *d *= scale;
        }
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, DEFAULT_FD_STEP};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn zero_weights_output_is_bias() {
        let bias = vec![0.25f32, -1.5, 3.0];
        let net = MlpNet::from_parts(&[4, 3], &[(vec![0.0; 12], bias.clone())]).unwrap();
        for x in [vec![0.0; 4], vec![1.0, -2.0, 3.5, 0.5]] {
            let (y, _) = net.forward(&x).unwrap();
            for (yi, bi) in y.iter().zip(&bias) {
                assert_close(*yi, *bi as f64, 0.0);
            }
        }
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mut w = vec![0.0f32; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let net = MlpNet::from_parts(&[3, 3], &[(w, vec![0.0; 3])]).unwrap();
        let x = vec![0.5, 2.0, 0.0];
        let (y, _) = net.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_evaluated_two_three_one_chain() {
        // Hidden layer (ReLU), then identity output.
        let w1 = vec![0.5f32, -1.0, 1.0, 0.25, -0.5, 0.75];
        let b1 = vec![0.1f32, -0.2, 0.0];
        let w2 = vec![2.0f32, -0.5, 0.25];
        let b2 = vec![0.5f32];
        let net = MlpNet::from_parts(&[2, 3, 1], &[(w1, b1), (w2, b2)]).unwrap();
        let (y, _) = net.forward(&[1.0, 2.0]).unwrap();
        // pre = [-1.4, 1.3, 1.0] -> relu [0, 1.3, 1.0] -> -0.65 + 0.25 + 0.5
        assert_close(y[0], 0.1, 1e-6);
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let mut rng = RngStream::new(0);
        let net = MlpNet::new(&[3, 2], &mut rng).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(NnError::DimMismatch { .. })
        ));
    }

    #[test]
    fn forward_rejects_non_finite_input() {
        let mut rng = RngStream::new(0);
        let net = MlpNet::new(&[2, 2], &mut rng).unwrap();
        assert!(matches!(
            net.forward(&[f64::NAN, 0.0]),
            Err(NnError::NonFinite { .. })
        ));
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let mut rng = RngStream::new(3);
        let net = MlpNet::new(&[4, 8, 4], &mut rng).unwrap();
        let (_, trace) = net.forward(&[0.3, -0.4, 1.0, 0.2]).unwrap();
        let (grads, d_in) = net.backward(&trace, &[0.0; 4]).unwrap();
        assert!(grads.as_slice().iter().all(|&g| g == 0.0));
        assert!(d_in.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_net_weight_grad_is_outer_product() {
        let mut rng = RngStream::new(5);
        let net = MlpNet::new(&[3, 2], &mut rng).unwrap();
        let x = [0.5, -1.5, 2.0];
        let upstream = [2.0, -0.25];
        let (_, trace) = net.forward(&x).unwrap();
        let (grads, _) = net.backward(&trace, &upstream).unwrap();
        let wg = net.layer_weight_grads(&grads, 0);
        for o in 0..2 {
            for i in 0..3 {
                assert_close(wg[o * 3 + i], upstream[o] * x[i], 0.0);
            }
        }
        let bg = net.layer_bias_grads(&grads, 0);
        assert_eq!(bg, &upstream);
    }

    #[test]
    fn backward_rejects_foreign_trace() {
        let mut rng = RngStream::new(1);
        let a = MlpNet::new(&[2, 3], &mut rng).unwrap();
        let b = MlpNet::new(&[2, 4], &mut rng).unwrap();
        let (_, trace) = a.forward(&[0.1, 0.2]).unwrap();
        assert!(matches!(
            b.backward(&trace, &[0.0; 4]),
            Err(NnError::TraceMismatch)
        ));
    }

    #[test]
    fn random_net_gradients_match_finite_differences() {
        let mut rng = RngStream::new(11);
        let net = MlpNet::new(&[4, 8, 4], &mut rng).unwrap();
        let x = rng.standard_normal_vec(4);
        let coeff = rng.standard_normal_vec(4);
        // Scalar loss: dot(coeff, net(x)).
        let (_, trace) = net.forward(&x).unwrap();
        let (grads, _) = net.backward(&trace, &coeff).unwrap();
        let report = grad_check(
            net.params(),
            grads.as_slice(),
            |p| {
                let candidate = MlpNet::from_flat(net.layer_sizes(), p).unwrap();
                let (y, _) = candidate.forward(&x).unwrap();
                y.iter().zip(&coeff).map(|(a, b)| a * b).sum()
            },
            1e-4,
            DEFAULT_FD_STEP,
        );
        assert!(
            report.passed,
            "max rel error {} at {:?}",
            report.max_rel_error, report.worst_index
        );
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let mut ra = RngStream::new(99);
        let mut rb = RngStream::new(99);
        let a = MlpNet::new(&[6, 10, 3], &mut ra).unwrap();
        let b = MlpNet::new(&[6, 10, 3], &mut rb).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn topology_validation() {
        let mut rng = RngStream::new(0);
        assert!(matches!(
            MlpNet::new(&[3], &mut rng),
            Err(NnError::BadTopology(_))
        ));
        assert!(matches!(
            MlpNet::new(&[3, 0, 2], &mut rng),
            Err(NnError::BadTopology(_))
        ));
    }
}

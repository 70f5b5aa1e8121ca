use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gemm, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// How parameters enter a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamMode {
    /// Gradients are tracked.
    Variable,
    /// Plain constants (no gradient bookkeeping at all).
    Constant,
    /// Tracked leaves routed through a stop-gradient, so the leaves exist
    /// but always receive zero gradient.
    Detached,
}

/// Fully connected network: affine + ReLU on every hidden layer, affine
/// output layer.
///
/// Tensors are stored interleaved as `[W0, b0, W1, b1, ...]`, with `Wi` of
/// shape `[fan_in, fan_out]` so a batch `[n, fan_in]` multiplies on the left.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    sizes: Vec<usize>,
    tensors: Vec<Tensor>,
}

/// Output of [`MlpParams::build`].
#[derive(Clone, Debug)]
pub struct MlpNodes {
    pub output: NodeId,
    /// One leaf per parameter tensor, in storage order.
    pub params: Vec<NodeId>,
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Structural(format!(
                "an MLP needs at least an input and an output size, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Structural(format!("layer sizes must be positive: {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(2 * (sizes.len() - 1));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            tensors.push(Tensor::matrix(fan_in, fan_out, data)?);
            tensors.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            tensors,
        })
    }

    /// Rebuilds a network from stored tensors, validating that layers compose.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.is_empty() || !tensors.len().is_multiple_of(2) {
            return Err(Error::Structural(format!(
                "expected weight/bias pairs, got {} tensors",
                tensors.len()
            )));
        }
        let mut sizes = Vec::new();
        for (i, pair) in tensors.chunks(2).enumerate() {
            let (w, b) = (&pair[0], &pair[1]);
            if w.shape().len() != 2 || b.shape() != [w.cols()] {
                return Err(Error::Structural(format!(
                    "layer {i}: weight {:?} and bias {:?} do not match",
                    w.shape(),
                    b.shape()
                )));
            }
            if let Some(&prev) = sizes.last() {
                if prev != w.rows() {
                    return Err(Error::Structural(format!(
                        "layer {i} expects {} inputs but the previous layer emits {prev}",
                        w.rows()
                    )));
                }
            } else {
                sizes.push(w.rows());
            }
            sizes.push(w.cols());
        }
        Ok(Self { sizes, tensors })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.tensors[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.tensors[2 * layer + 1]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Structural(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Direct evaluation on a `[n, fan_in]` batch or a single `[fan_in]` row.
    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.input_dim() {
            return Err(Error::Structural(format!(
                "input has {} features, network expects {}",
                input.cols(),
                self.input_dim()
            )));
        }
        let rows = input.rows();
        let mut h = input.data().to_vec();
        let mut width = self.input_dim();
        for layer in 0..self.num_layers() {
            let (w, b) = (self.weight(layer), self.bias(layer));
            let mut z = gemm(&h, (rows, width), false, w.data(), (w.rows(), w.cols()), false);
            width = w.cols();
            let last = layer + 1 == self.num_layers();
            for row in z.chunks_mut(width) {
                for (v, bias) in row.iter_mut().zip(b.data()) {
                    *v += bias;
                    if !last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = z;
        }
        let shape = if input.shape().len() == 1 {
            vec![width]
        } else {
            vec![rows, width]
        };
        Tensor::new(shape, h)
    }

    /// Records the network on `g` applied to the `[n, fan_in]` node `input`.
    pub fn build(&self, g: &mut Graph, input: NodeId, mode: ParamMode) -> MlpNodes {
        let mut params = Vec::with_capacity(self.tensors.len());
        let mut used = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let (leaf, use_node) = match mode {
                ParamMode::Variable => {
                    let v = g.variable(t.clone());
                    (v, v)
                }
                ParamMode::Constant => {
                    let c = g.constant(t.clone());
                    (c, c)
                }
                ParamMode::Detached => {
                    let v = g.variable(t.clone());
                    (v, g.detach(v))
                }
            };
            params.push(leaf);
            used.push(use_node);
        }
        let mut h = input;
        for layer in 0..self.num_layers() {
            let z = g.matmul(h, used[2 * layer]);
            let z = g.add_row(z, used[2 * layer + 1]);
            h = if layer + 1 == self.num_layers() { z } else { g.relu(z) };
        }
        MlpNodes { output: h, params }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Bindings;

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = MlpParams::init(&[2, 256, 256, 1], 7).unwrap();
        let b = MlpParams::init(&[2, 256, 256, 1], 7).unwrap();
        let c = MlpParams::init(&[2, 256, 256, 1], 8).unwrap();
        assert!(a
            .flatten()
            .iter()
            .zip(b.flatten())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_and_bounds() {
        let p = MlpParams::init(&[3, 4], 0).unwrap();
        assert_eq!(p.weight(0).shape(), &[3, 4]);
        assert_eq!(p.bias(0).shape(), &[4]);
        assert!(p.bias(0).data().iter().all(|&b| b == 0.0));

        let p = MlpParams::init(&[5, 17, 9, 2], 3).unwrap();
        for l in 0..p.num_layers() {
            let w = p.weight(l);
            let bound = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            assert!(w.data().iter().all(|v| v.abs() < bound + 1e-12));
        }
    }

    #[test]
    fn degenerate_layer_lists_are_rejected() {
        assert!(matches!(MlpParams::init(&[], 0), Err(Error::Structural(_))));
        assert!(matches!(MlpParams::init(&[4], 0), Err(Error::Structural(_))));
        assert!(matches!(MlpParams::init(&[4, 0, 1], 0), Err(Error::Structural(_))));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut p = MlpParams::init(&[3, 8, 2], 1).unwrap();
        let n = p.num_params();
        p.set_flat(&vec![0.0; n]).unwrap();
        let out = p.apply(&Tensor::vector(vec![1.0, -2.0, 0.5])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = MlpParams::from_tensors(vec![w, Tensor::zeros(&[2])]).unwrap();
        let x = Tensor::matrix(1, 2, vec![-0.7, 3.0]).unwrap();
        assert_eq!(p.apply(&x).unwrap(), x);
    }

    #[test]
    fn batched_rows_equal_single_row_applications() {
        let p = MlpParams::init(&[3, 16, 16, 2], 11).unwrap();
        let r0 = [0.2, -1.0, 0.4];
        let r1 = [1.5, 0.3, -0.9];
        let batch = p.apply(&Tensor::from_rows(&[r0, r1]).unwrap()).unwrap();
        let s0 = p.apply(&Tensor::vector(r0.to_vec())).unwrap();
        let s1 = p.apply(&Tensor::vector(r1.to_vec())).unwrap();
        assert_eq!(batch.row(0), s0.data());
        assert_eq!(batch.row(1), s1.data());
    }

    #[test]
    fn graph_build_matches_direct_apply() {
        let p = MlpParams::init(&[3, 8, 8, 2], 5).unwrap();
        let x = Tensor::from_rows(&[[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]]).unwrap();
        let mut g = Graph::new();
        let input = g.constant(x.clone());
        let nodes = p.build(&mut g, input, ParamMode::Constant);
        let y = g.eval(&Bindings::new(), nodes.output).unwrap();
        assert!(y.max_abs_diff(&p.apply(&x).unwrap()) < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let p = MlpParams::init(&[3, 4], 0).unwrap();
        assert!(matches!(p.apply(&Tensor::vector(vec![1.0, 2.0])), Err(Error::Structural(_))));
        let bad = vec![Tensor::zeros(&[3, 4]), Tensor::zeros(&[4]), Tensor::zeros(&[5, 1]), Tensor::zeros(&[1])];
        assert!(matches!(MlpParams::from_tensors(bad), Err(Error::Structural(_))));
    }

    #[test]
    fn one_dimensional_relu_net_is_affine_between_kinks() {
        // Inside a region with a fixed activation pattern the output is exactly
        // affine, so second differences vanish up to roundoff.
        let p = MlpParams::init(&[1, 6, 6, 1], 21).unwrap();
        let f = |x: f64| p.apply(&Tensor::vector(vec![x])).unwrap().item();
        let pattern = |x: f64| -> Vec<bool> {
            let h1: Vec<f64> = (0..6)
                .map(|j| x * p.weight(0).get(0, j) + p.bias(0).data()[j])
                .collect();
            let mut bits: Vec<bool> = h1.iter().map(|&v| v > 0.0).collect();
            for k in 0..6 {
                let z: f64 = (0..6).map(|j| h1[j].max(0.0) * p.weight(1).get(j, k)).sum::<f64>()
                    + p.bias(1).data()[k];
                bits.push(z > 0.0);
            }
            bits
        };
        let mut checked = 0;
        let mut x = -3.0;
        while x < 3.0 {
            let (a, b, c) = (x, x + 0.01, x + 0.02);
            if pattern(a) == pattern(b) && pattern(b) == pattern(c) {
                let second = f(a) - 2.0 * f(b) + f(c);
                assert!(second.abs() < 1e-12, "{x}: {second}");
                checked += 1;
            }
            x += 0.05;
        }
        assert!(checked > 50);
    }
}

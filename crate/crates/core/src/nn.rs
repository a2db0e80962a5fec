//! Feed-forward layer stacks with hand-written backward passes.
//!
//! Feature maps are NHWC. Every layer owns exactly two arrays in its
//! parameter group: a weight matrix followed by a bias vector.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{gemm, ConvGeometry, MatRef, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::LeakyRelu(slope) => {
                for v in z {
                    if *v < 0.0 {
                        *v *= slope;
                    }
                }
            }
            Activation::Sigmoid => {
                for v in z {
                    *v = 1.0 / (1.0 + libm::exp(-*v));
                }
            }
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` in place by the derivative, expressed through the
    /// activation output `y`.
    fn backprop(self, y: &[f64], grad: &mut [f64]) {
        match self {
            Activation::LeakyRelu(slope) => {
                for (g, &y) in grad.iter_mut().zip(y) {
                    if y <= 0.0 {
                        *g *= slope;
                    }
                }
            }
            Activation::Sigmoid => {
                for (g, &y) in grad.iter_mut().zip(y) {
                    *g *= y * (1.0 - y);
                }
            }
            Activation::Identity => {}
        }
    }

    fn gain(self) -> f64 {
        match self {
            Activation::LeakyRelu(a) => libm::sqrt(2.0 / (1.0 + a * a)),
            Activation::Sigmoid | Activation::Identity => 1.0,
        }
    }
}

/// Per-sample feature shape `(height, width, channels)`; dense vectors are `(1, 1, n)`.
pub(crate) type FeatureShape = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LayerKind {
    /// Strided convolution, weight `[k·k·c_in, c_out]`.
    Conv { kernel: usize, stride: usize, pad: usize },
    /// Transposed convolution, weight `[c_in, k·k·c_out]`.
    Deconv { kernel: usize, stride: usize, pad: usize },
    /// Affine map on the flattened sample, weight `[n_in, n_out]`.
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub kind: LayerKind,
    pub act: Activation,
    pub input: FeatureShape,
    pub output: FeatureShape,
}

impl Layer {
    pub fn conv(input: FeatureShape, out_ch: usize, kernel: usize, stride: usize, pad: usize, act: Activation) -> Self {
        let (h, w, _) = input;
        let oh = (h + 2 * pad - kernel) / stride + 1;
        let ow = (w + 2 * pad - kernel) / stride + 1;
        Self { kind: LayerKind::Conv { kernel, stride, pad }, act, input, output: (oh, ow, out_ch) }
    }

    pub fn deconv(input: FeatureShape, out_ch: usize, kernel: usize, stride: usize, pad: usize, act: Activation) -> Self {
        let (h, w, _) = input;
        let oh = (h - 1) * stride + kernel - 2 * pad;
        let ow = (w - 1) * stride + kernel - 2 * pad;
        Self { kind: LayerKind::Deconv { kernel, stride, pad }, act, input, output: (oh, ow, out_ch) }
    }

    pub fn dense(n_in: usize, n_out: usize, act: Activation) -> Self {
        Self { kind: LayerKind::Dense, act, input: (1, 1, n_in), output: (1, 1, n_out) }
    }

    fn in_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    fn out_len(&self) -> usize {
        self.output.0 * self.output.1 * self.output.2
    }

    pub fn weight_shape(&self) -> [usize; 2] {
        let (_, _, cin) = self.input;
        let (_, _, cout) = self.output;
        match self.kind {
            LayerKind::Conv { kernel, .. } => [kernel * kernel * cin, cout],
            LayerKind::Deconv { kernel, .. } => [cin, kernel * kernel * cout],
            LayerKind::Dense => [self.in_len(), self.out_len()],
        }
    }

    fn bias_len(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.out_len(),
            _ => self.output.2,
        }
    }

    fn fan_in(&self) -> f64 {
        let cin = self.input.2 as f64;
        match self.kind {
            LayerKind::Conv { kernel, .. } => (kernel * kernel) as f64 * cin,
            LayerKind::Deconv { kernel, stride, .. } => (kernel * kernel) as f64 * cin / (stride * stride) as f64,
            LayerKind::Dense => self.in_len() as f64,
        }
    }

    /// Geometry of the convolution that maps the larger feature map onto the
    /// smaller one; a transposed convolution is its adjoint.
    fn geometry(&self, batch: usize) -> ConvGeometry {
        let (kernel, stride, pad, big) = match self.kind {
            LayerKind::Conv { kernel, stride, pad } => (kernel, stride, pad, self.input),
            LayerKind::Deconv { kernel, stride, pad } => (kernel, stride, pad, self.output),
            LayerKind::Dense => unreachable!("dense layers have no geometry"),
        };
        ConvGeometry { batch, height: big.0, width: big.1, channels: big.2, kernel, stride, pad }
    }

    fn init<R: Rng>(&self, rng: &mut R) -> [Tensor; 2] {
        let std = self.act.gain() / libm::sqrt(self.fan_in());
        let shape = self.weight_shape();
        let n = shape[0] * shape[1];
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let z: f64 = StandardNormal.sample(rng);
            // truncated at two standard deviations
            if z.abs() <= 2.0 {
                data.push(z * std);
            }
        }
        [Tensor::from_vec(&shape, data).expect("shape matches"), Tensor::zeros(&[self.bias_len()])]
    }

    /// Returns `(saved, output)` where `saved` is what backward needs besides the output.
    fn forward(&self, weight: &Tensor, bias: &Tensor, x: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let [wr, wc] = self.weight_shape();
        let w = MatRef::new(weight.data(), wr, wc);
        let b = bias.data();
        let mut z;
        let saved;
        match self.kind {
            LayerKind::Conv { .. } => {
                let g = self.geometry(batch);
                let cols = g.im2col(x);
                let m = g.out_positions();
                z = vec![0.0; m * wc];
                gemm(MatRef::new(&cols, m, wr), w, 0.0, &mut z);
                saved = cols;
            }
            LayerKind::Deconv { .. } => {
                let g = self.geometry(batch);
                let m = g.out_positions();
                let mut cols = vec![0.0; m * wc];
                gemm(MatRef::new(x, m, wr), w, 0.0, &mut cols);
                z = g.col2im(&cols);
                saved = x.to_vec();
            }
            LayerKind::Dense => {
                z = vec![0.0; batch * wc];
                gemm(MatRef::new(x, batch, wr), w, 0.0, &mut z);
                saved = x.to_vec();
            }
        }
        for chunk in z.chunks_exact_mut(b.len()) {
            for (v, bb) in chunk.iter_mut().zip(b) {
                *v += bb;
            }
        }
        self.act.apply(&mut z);
        (saved, z)
    }

    /// Backpropagates `dy` (overwritten with the pre-activation gradient).
    /// Accumulates parameter gradients into `grads` when given and returns the
    /// input gradient when `need_dx` is set.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        weight: &Tensor,
        saved: &[f64],
        y: &[f64],
        dy: &mut [f64],
        batch: usize,
        grads: Option<(&mut Tensor, &mut Tensor)>,
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        self.act.backprop(y, dy);
        let [wr, wc] = self.weight_shape();
        let w = MatRef::new(weight.data(), wr, wc);
        match self.kind {
            LayerKind::Conv { .. } => {
                let g = self.geometry(batch);
                let m = g.out_positions();
                let dz = MatRef::new(dy, m, wc);
                if let Some((gw, gb)) = grads {
                    gemm(MatRef::new(saved, m, wr).t(), dz, 1.0, gw.data_mut());
                    accumulate_bias(gb.data_mut(), dy);
                }
                need_dx.then(|| {
                    let mut dcols = vec![0.0; m * wr];
                    gemm(dz, w.t(), 0.0, &mut dcols);
                    g.col2im(&dcols)
                })
            }
            LayerKind::Deconv { .. } => {
                let g = self.geometry(batch);
                let m = g.out_positions();
                let dcols = g.im2col(dy);
                let dc = MatRef::new(&dcols, m, wc);
                if let Some((gw, gb)) = grads {
                    gemm(MatRef::new(saved, m, wr).t(), dc, 1.0, gw.data_mut());
                    accumulate_bias(gb.data_mut(), dy);
                }
                need_dx.then(|| {
                    let mut dx = vec![0.0; m * wr];
                    gemm(dc, w.t(), 0.0, &mut dx);
                    dx
                })
            }
            LayerKind::Dense => {
                let dz = MatRef::new(dy, batch, wc);
                if let Some((gw, gb)) = grads {
                    gemm(MatRef::new(saved, batch, wr).t(), dz, 1.0, gw.data_mut());
                    accumulate_bias(gb.data_mut(), dy);
                }
                need_dx.then(|| {
                    let mut dx = vec![0.0; batch * wr];
                    gemm(dz, w.t(), 0.0, &mut dx);
                    dx
                })
            }
        }
    }
}

fn accumulate_bias(gb: &mut [f64], dz: &[f64]) {
    for chunk in dz.chunks_exact(gb.len()) {
        for (g, d) in gb.iter_mut().zip(chunk) {
            *g += d;
        }
    }
}

/// Saved activations of one forward pass through a [`Stack`].
#[derive(Debug, Default)]
pub(crate) struct StackTape {
    saved: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
    batch: usize,
}

/// A sequential stack of layers whose parameters live in one flat array list.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Stack {
    pub layers: Vec<Layer>,
}

impl Stack {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn input_len(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_len)
    }

    pub fn output_shape(&self) -> FeatureShape {
        self.layers.last().map_or((1, 1, 0), |l| l.output)
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight_shape().to_vec(), vec![l.bias_len()]])
            .collect()
    }

    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<Tensor> {
        self.layers.iter().flat_map(|l| l.init(rng)).collect()
    }

    fn out_tensor(&self, data: Vec<f64>, batch: usize) -> Tensor {
        let (h, w, c) = self.output_shape();
        let shape: Vec<usize> = if h == 1 && w == 1 { vec![batch, c] } else { vec![batch, h, w, c] };
        Tensor::from_vec(&shape, data).expect("layer output has declared shape")
    }

    /// Runs the stack on a batch whose rows hold `input_len()` values each.
    pub fn forward(&self, params: &[Tensor], x: &Tensor, tape: Option<&mut StackTape>) -> Tensor {
        debug_assert_eq!(x.row_len(), self.input_len());
        let batch = x.rows();
        let mut cur = x.data().to_vec();
        match tape {
            Some(tape) => {
                tape.saved.clear();
                tape.outputs.clear();
                tape.batch = batch;
                for (i, layer) in self.layers.iter().enumerate() {
                    let (saved, out) = layer.forward(&params[2 * i], &params[2 * i + 1], &cur, batch);
                    tape.saved.push(saved);
                    tape.outputs.push(out.clone());
                    cur = out;
                }
            }
            None => {
                for (i, layer) in self.layers.iter().enumerate() {
                    cur = layer.forward(&params[2 * i], &params[2 * i + 1], &cur, batch).1;
                }
            }
        }
        self.out_tensor(cur, batch)
    }

    /// Backpropagates `dy` through a taped forward pass.
    pub fn backward(
        &self,
        params: &[Tensor],
        tape: &StackTape,
        dy: &Tensor,
        mut grads: Option<&mut [Tensor]>,
        need_dx: bool,
    ) -> Option<Tensor> {
        let batch = tape.batch;
        let mut cur = dy.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let layer_grads = grads.as_deref_mut().map(|g| {
                let (w, b) = g[2 * i..2 * i + 2].split_at_mut(1);
                (&mut w[0], &mut b[0])
            });
            let want_dx = need_dx || i > 0;
            cur = layer.backward(&params[2 * i], &tape.saved[i], &tape.outputs[i], &mut cur, batch, layer_grads, want_dx)?;
        }
        let (h, w, c) = self.layers[0].input;
        let shape: Vec<usize> = if h == 1 && w == 1 { vec![batch, c] } else { vec![batch, h, w, c] };
        Some(Tensor::from_vec(&shape, cur).expect("input gradient has input shape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Scalar probe `sum(out ⊙ r)` so every output element contributes.
    fn probe(stack: &Stack, params: &[Tensor], x: &Tensor, r: &Tensor) -> f64 {
        stack.forward(params, x, None).data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    }

    fn check_stack(stack: Stack, in_shape: &[usize]) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = stack.init(&mut rng);
        for p in &mut params {
            // non-zero biases exercise the bias path too
            for v in p.data_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
        let x = random_tensor(in_shape, &mut rng);
        let mut tape = StackTape::default();
        let y = stack.forward(&params, &x, Some(&mut tape));
        let r = random_tensor(y.shape(), &mut rng);
        let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let dx = stack.backward(&params, &tape, &r, Some(&mut grads), true).unwrap();

        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
        for (pi, g) in grads.iter().enumerate() {
            for idx in (0..g.len()).step_by(1 + g.len() / 7) {
                let mut plus = params.clone();
                plus[pi].data_mut()[idx] += h;
                let mut minus = params.clone();
                minus[pi].data_mut()[idx] -= h;
                let num = (probe(&stack, &plus, &x, &r) - probe(&stack, &minus, &x, &r)) / (2.0 * h);
                assert!(rel(g.data()[idx], num) < 1e-5, "param {pi}[{idx}]: {} vs {num}", g.data()[idx]);
            }
        }
        for idx in (0..x.len()).step_by(1 + x.len() / 11) {
            let mut plus = x.clone();
            plus.data_mut()[idx] += h;
            let mut minus = x.clone();
            minus.data_mut()[idx] -= h;
            let num = (probe(&stack, &params, &plus, &r) - probe(&stack, &params, &minus, &r)) / (2.0 * h);
            assert!(rel(dx.data()[idx], num) < 1e-5, "input[{idx}]: {} vs {num}", dx.data()[idx]);
        }
    }

    #[test]
    fn conv_stack_gradients_match_finite_differences() {
        let l1 = Layer::conv((7, 6, 2), 3, 3, 2, 1, Activation::LeakyRelu(0.2));
        let l2 = Layer::conv(l1.output, 4, 3, 1, 1, Activation::Identity);
        let l3 = Layer::dense(l2.output.0 * l2.output.1 * 4, 5, Activation::Identity);
        check_stack(Stack::new(vec![l1, l2, l3]), &[2, 7, 6, 2]);
    }

    #[test]
    fn deconv_stack_gradients_match_finite_differences() {
        let l0 = Layer::dense(3, 2 * 2 * 3, Activation::LeakyRelu(0.2));
        let l1 = Layer::deconv((2, 2, 3), 3, 3, 1, 1, Activation::LeakyRelu(0.2));
        let l2 = Layer::deconv(l1.output, 2, 4, 2, 1, Activation::Sigmoid);
        assert_eq!(l2.output, (4, 4, 2));
        check_stack(Stack::new(vec![l0, l1, l2]), &[3, 3]);
    }

    #[test]
    fn geometry_of_standard_layers() {
        let c = Layer::conv((32, 32, 1), 8, 3, 2, 1, Activation::Identity);
        assert_eq!(c.output, (16, 16, 8));
        let c = Layer::conv((5, 5, 1), 8, 3, 2, 1, Activation::Identity);
        assert_eq!(c.output, (3, 3, 8));
        let d = Layer::deconv((4, 4, 8), 8, 4, 2, 1, Activation::Identity);
        assert_eq!(d.output, (8, 8, 8));
        assert_eq!(d.weight_shape(), [8, 128]);
    }
}

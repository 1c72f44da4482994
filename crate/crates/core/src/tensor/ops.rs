//! Elementwise, linear and loss operations.

use super::{Scalar, Tape, Tensor};
use crate::error::{Error, Result};

/// Pointwise nonlinearity kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

/// Elementwise arithmetic kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arith {
    Add,
    Hadamard,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

impl<T: Scalar> Tape<T> {
    /// Shape-preserving pointwise nonlinearity.
    pub fn activation(&self, input: &Tensor<T>, kind: Activation) -> Tensor<T> {
        let data: Vec<T> = match kind {
            Activation::Sigmoid => input.data().iter().map(|&x| sigmoid(x)).collect(),
            Activation::Tanh => input.data().iter().map(|&x| x.tanh()).collect(),
            Activation::Relu => input
                .data()
                .iter()
                .map(|&x| if x > T::ZERO { x } else { T::ZERO })
                .collect(),
        };
        let tracked = self.tracks(&[input]);
        let out = self.output(data, input.shape().to_vec(), tracked);
        if tracked {
            let (input, out) = (input.clone(), out.clone());
            self.record(move || {
                out.with_grad(|go| {
                    let delta: Vec<T> = match kind {
                        // d sigmoid = y (1 - y), d tanh = 1 - y^2: both read
                        // the forward output.
                        Activation::Sigmoid => out
                            .data()
                            .iter()
                            .zip(go)
                            .map(|(&y, &g)| g * y * (T::ONE - y))
                            .collect(),
                        Activation::Tanh => out
                            .data()
                            .iter()
                            .zip(go)
                            .map(|(&y, &g)| g * (T::ONE - y * y))
                            .collect(),
                        Activation::Relu => input
                            .data()
                            .iter()
                            .zip(go)
                            .map(|(&x, &g)| if x > T::ZERO { g } else { T::ZERO })
                            .collect(),
                    };
                    input.add_to_grad(&delta);
                });
            });
        }
        out
    }

    pub fn sigmoid(&self, input: &Tensor<T>) -> Tensor<T> {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn tanh(&self, input: &Tensor<T>) -> Tensor<T> {
        self.activation(input, Activation::Tanh)
    }

    pub fn relu(&self, input: &Tensor<T>) -> Tensor<T> {
        self.activation(input, Activation::Relu)
    }

    /// Pointwise sum or product of two same-shape tensors.
    pub fn arith(&self, a: &Tensor<T>, b: &Tensor<T>, kind: Arith) -> Result<Tensor<T>> {
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "elementwise op requires identical shapes, got {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let data: Vec<T> = match kind {
            Arith::Add => a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| x + y)
                .collect(),
            Arith::Hadamard => a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| x * y)
                .collect(),
        };
        let tracked = self.tracks(&[a, b]);
        let out = self.output(data, a.shape().to_vec(), tracked);
        if tracked {
            let (a, b, out) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                out.with_grad(|go| match kind {
                    Arith::Add => {
                        a.add_to_grad(go);
                        b.add_to_grad(go);
                    }
                    Arith::Hadamard => {
                        let da: Vec<T> = b.data().iter().zip(go).map(|(&y, &g)| g * y).collect();
                        let db: Vec<T> = a.data().iter().zip(go).map(|(&x, &g)| g * x).collect();
                        a.add_to_grad(&da);
                        b.add_to_grad(&db);
                    }
                });
            });
        }
        Ok(out)
    }

    pub fn add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.arith(a, b, Arith::Add)
    }

    pub fn hadamard(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.arith(a, b, Arith::Hadamard)
    }

    /// Stack `b`'s channels after `a`'s: `[C1 x H x W] ++ [C2 x H x W] ->
    /// [(C1+C2) x H x W]`. The backward pass splits the gradient at C1.
    pub fn concat_channels(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 3 || sb.len() != 3 {
            return Err(Error::Shape(format!(
                "concat_channels requires rank-3 tensors, got {sa:?} and {sb:?}"
            )));
        }
        if sa[1..] != sb[1..] {
            return Err(Error::Shape(format!(
                "concat_channels spatial mismatch: {:?} vs {:?}",
                &sa[1..],
                &sb[1..]
            )));
        }
        let (c1, c2) = (sa[0], sb[0]);
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        data.extend_from_slice(a.data());
        data.extend_from_slice(b.data());
        let tracked = self.tracks(&[a, b]);
        let out = self.output(data, vec![c1 + c2, sa[1], sa[2]], tracked);
        if tracked {
            let (a, b, out) = (a.clone(), b.clone(), out.clone());
            let split = a.numel();
            self.record(move || {
                out.with_grad(|go| {
                    a.add_to_grad(&go[..split]);
                    b.add_to_grad(&go[split..]);
                });
            });
        }
        Ok(out)
    }

    /// Channels `[lo, hi)` of a rank-3 tensor.
    pub fn slice_channels(&self, input: &Tensor<T>, lo: usize, hi: usize) -> Result<Tensor<T>> {
        let shape = input.shape();
        if shape.len() != 3 {
            return Err(Error::Shape(format!(
                "slice_channels requires a rank-3 tensor, got {shape:?}"
            )));
        }
        if lo >= hi || hi > shape[0] {
            return Err(Error::Shape(format!(
                "channel slice [{lo}, {hi}) out of range for {} channels",
                shape[0]
            )));
        }
        let plane = shape[1] * shape[2];
        let data = input.data()[lo * plane..hi * plane].to_vec();
        let tracked = self.tracks(&[input]);
        let out = self.output(data, vec![hi - lo, shape[1], shape[2]], tracked);
        if tracked {
            let (input, out) = (input.clone(), out.clone());
            let offset = lo * plane;
            self.record(move || {
                out.with_grad(|go| {
                    let mut delta = vec![T::ZERO; input.numel()];
                    delta[offset..offset + go.len()].copy_from_slice(go);
                    input.add_to_grad(&delta);
                });
            });
        }
        Ok(out)
    }

    /// Dense layer: `out_i = sum_j weight[i][j] * input[j] + bias[i]`.
    pub fn linear(
        &self,
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if input.rank() != 1 {
            return Err(Error::Shape(format!(
                "linear input must be rank 1, got {:?}",
                input.shape()
            )));
        }
        let n = input.numel();
        if weight.rank() != 2 || weight.shape()[1] != n {
            return Err(Error::Shape(format!(
                "linear weight {:?} incompatible with input length {n}",
                weight.shape()
            )));
        }
        let m = weight.shape()[0];
        if bias.shape() != [m] {
            return Err(Error::Shape(format!(
                "linear bias {:?} must have shape [{m}]",
                bias.shape()
            )));
        }
        let x = input.data();
        let w = weight.data();
        let mut data = vec![T::ZERO; m];
        for (i, out_i) in data.iter_mut().enumerate() {
            let row = &w[i * n..(i + 1) * n];
            let mut acc = T::ZERO;
            for (wij, xj) in row.iter().zip(x) {
                acc += *wij * *xj;
            }
            *out_i = acc + bias.data()[i];
        }
        let tracked = self.tracks(&[input, weight, bias]);
        let out = self.output(data, vec![m], tracked);
        if tracked {
            let (input, weight, bias, out) =
                (input.clone(), weight.clone(), bias.clone(), out.clone());
            self.record(move || {
                out.with_grad(|go| {
                    let x = input.data();
                    let w = weight.data();
                    let n = x.len();
                    if weight.requires_grad() {
                        let mut dw = vec![T::ZERO; w.len()];
                        for (i, &gi) in go.iter().enumerate() {
                            for (dwij, xj) in dw[i * n..(i + 1) * n].iter_mut().zip(x) {
                                *dwij += gi * *xj;
                            }
                        }
                        weight.add_to_grad(&dw);
                    }
                    if input.requires_grad() {
                        let mut dx = vec![T::ZERO; n];
                        for (i, &gi) in go.iter().enumerate() {
                            for (dxj, wij) in dx.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                                *dxj += gi * *wij;
                            }
                        }
                        input.add_to_grad(&dx);
                    }
                    if bias.requires_grad() {
                        bias.add_to_grad(go);
                    }
                });
            });
        }
        Ok(out)
    }

    /// Numerically stable softmax over a rank-1 tensor.
    pub fn softmax(&self, logits: &Tensor<T>) -> Result<Tensor<T>> {
        if logits.rank() != 1 {
            return Err(Error::Shape(format!(
                "softmax expects a rank-1 tensor, got {:?}",
                logits.shape()
            )));
        }
        let z = logits.data();
        let mut m = z[0];
        for &v in z {
            m = m.max(v);
        }
        let exps: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
        let mut total = T::ZERO;
        for &e in &exps {
            total += e;
        }
        let probs: Vec<T> = exps.iter().map(|&e| e / total).collect();
        let tracked = self.tracks(&[logits]);
        let out = self.output(probs, vec![z.len()], tracked);
        if tracked {
            let (logits, out) = (logits.clone(), out.clone());
            self.record(move || {
                out.with_grad(|go| {
                    // dz_j = p_j * (g_j - sum_k g_k p_k)
                    let p = out.data();
                    let mut dot = T::ZERO;
                    for (&g, &pk) in go.iter().zip(p) {
                        dot += g * pk;
                    }
                    let dz: Vec<T> = go.iter().zip(p).map(|(&g, &pj)| pj * (g - dot)).collect();
                    logits.add_to_grad(&dz);
                });
            });
        }
        Ok(out)
    }

    /// Negative log-likelihood of the labelled class.
    pub fn nll_loss(&self, probs: &Tensor<T>, label: usize) -> Result<Tensor<T>> {
        if probs.rank() != 1 {
            return Err(Error::Shape(format!(
                "nll_loss expects a rank-1 tensor, got {:?}",
                probs.shape()
            )));
        }
        if label >= probs.numel() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                probs.numel()
            )));
        }
        let p = probs.data()[label].max(T::min_positive());
        let tracked = self.tracks(&[probs]);
        let out = self.output(vec![-p.ln()], vec![1], tracked);
        if tracked {
            let (probs, out) = (probs.clone(), out.clone());
            self.record(move || {
                out.with_grad(|go| {
                    let g = go[0];
                    let mut delta = vec![T::ZERO; probs.numel()];
                    let p = probs.data()[label].max(T::min_positive());
                    delta[label] = -g / p;
                    probs.add_to_grad(&delta);
                });
            });
        }
        Ok(out)
    }

    /// Softmax followed by cross-entropy against a class index. Returns the
    /// probability vector and the scalar loss; the gradient of the loss with
    /// respect to the logits is `probs - onehot(label)`.
    pub fn softmax_cross_entropy(
        &self,
        logits: &Tensor<T>,
        label: usize,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if label >= logits.numel() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                logits.numel()
            )));
        }
        let probs = self.softmax(logits)?;
        let loss = self.nll_loss(&probs, label)?;
        Ok((probs, loss))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self, input: &Tensor<T>) -> Tensor<T> {
        let mut total = T::ZERO;
        for &v in input.data() {
            total += v;
        }
        let tracked = self.tracks(&[input]);
        let out = self.output(vec![total], vec![1], tracked);
        if tracked {
            let (input, out) = (input.clone(), out.clone());
            self.record(move || {
                out.with_grad(|go| {
                    let delta = vec![go[0]; input.numel()];
                    input.add_to_grad(&delta);
                });
            });
        }
        out
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, input: &Tensor<T>, factor: T) -> Tensor<T> {
        let data: Vec<T> = input.data().iter().map(|&x| x * factor).collect();
        let tracked = self.tracks(&[input]);
        let out = self.output(data, input.shape().to_vec(), tracked);
        if tracked {
            let (input, out) = (input.clone(), out.clone());
            self.record(move || {
                out.with_grad(|go| {
                    let delta: Vec<T> = go.iter().map(|&g| g * factor).collect();
                    input.add_to_grad(&delta);
                });
            });
        }
        out
    }

    /// View the tensor as rank 1. Row-major data is unchanged.
    pub fn flatten(&self, input: &Tensor<T>) -> Tensor<T> {
        let tracked = self.tracks(&[input]);
        let out = self.output(input.data().to_vec(), vec![input.numel()], tracked);
        if tracked {
            let (input, out) = (input.clone(), out.clone());
            self.record(move || {
                out.with_grad(|go| input.add_to_grad(go));
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_grad;

    fn t(data: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::param(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let tape = Tape::new();
        let out = tape.sigmoid(&t(&[0.0], &[1]));
        assert_eq!(out.data()[0], 0.5);
    }

    #[test]
    fn relu_zeroes_negatives() {
        let tape = Tape::new();
        let out = tape.relu(&t(&[-1.0, -0.5, -3.0], &[3]));
        assert_eq!(out.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let tape = Tape::new();
        let x = t(&[0.0, 0.0], &[2]);
        let y = tape.tanh(&x);
        let loss = tape.sum(&y);
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn arith_identities_and_pointwise() {
        let tape = Tape::<f64>::new();
        let x = t(&[1.0, 2.0, 3.0], &[3]);
        let ones = Tensor::full(&[3], 1.0).unwrap();
        let zeros = Tensor::zeros(&[3]).unwrap();
        assert_eq!(tape.hadamard(&x, &ones).unwrap().data(), x.data());
        assert_eq!(tape.add(&x, &zeros).unwrap().data(), x.data());
        let b = t(&[4.0, 5.0, 6.0], &[3]);
        assert_eq!(tape.hadamard(&x, &b).unwrap().data(), &[4.0, 10.0, 18.0]);
        assert!(tape.add(&x, &t(&[1.0], &[1])).is_err());
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let tape = Tape::<f64>::new();
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[1, 2, 2]);
        let b = t(&[5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0], &[2, 2, 2]);
        let cat = tape.concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), &[3, 2, 2]);
        let back = tape.slice_channels(&cat, 0, 1).unwrap();
        assert_eq!(back.data(), a.data());
        // Zero-channel tensors cannot be constructed at all.
        assert!(Tensor::<f64>::zeros(&[0, 2, 2]).is_err());
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let tape = Tape::new();
        let a = t(&[1.0, 2.0], &[1, 1, 2]);
        let b = t(&[3.0, 4.0], &[1, 1, 2]);
        let cat = tape.concat_channels(&a, &b).unwrap();
        let loss = tape.sum(&tape.scale(&cat, 2.0));
        tape.backward(&loss).unwrap();
        assert_eq!(a.grad().unwrap(), vec![2.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn linear_identity_and_hand_matmul() {
        let tape = Tape::new();
        let x = t(&[1.0, 2.0], &[2]);
        let eye = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let zero_bias = Tensor::zeros(&[2]).unwrap();
        assert_eq!(tape.linear(&x, &eye, &zero_bias).unwrap().data(), x.data());
        let w = t(&[1.0, 1.0, 1.0, -1.0], &[2, 2]);
        assert_eq!(
            tape.linear(&x, &w, &zero_bias).unwrap().data(),
            &[3.0, -1.0]
        );
        assert!(tape
            .linear(&x, &t(&[1.0, 2.0, 3.0], &[1, 3]), &zero_bias)
            .is_err());
    }

    #[test]
    fn linear_weight_gradient_matches_finite_differences() {
        let x = Tensor::new(vec![0.3, -0.7, 1.1], &[3]).unwrap();
        let w = t(&[0.1, 0.2, -0.3, 0.5, -0.4, 0.6], &[2, 3]);
        let b = t(&[0.05, -0.02], &[2]);
        let fd = finite_diff_grad(
            |wt| {
                let tape = Tape::inference();
                let out = tape.linear(&x, wt, &b).unwrap();
                tape.sum(&out).item()
            },
            &w,
            1e-5,
        )
        .unwrap();
        let tape = Tape::new();
        let out = tape.linear(&x, &w, &b).unwrap();
        let loss = tape.sum(&out);
        tape.backward(&loss).unwrap();
        let analytic = w.grad().unwrap();
        for (a, f) in analytic.iter().zip(fd.data()) {
            assert!((a - f).abs() / f.abs().max(1.0) < 1e-4, "{a} vs {f}");
        }
    }

    #[test]
    fn softmax_uniform_and_shift_invariance() {
        let tape = Tape::<f64>::new();
        let (probs, loss) = tape
            .softmax_cross_entropy(&t(&[0.0, 0.0], &[2]), 0)
            .unwrap();
        assert!((probs.data()[0] - 0.5).abs() < 1e-12);
        assert!((loss.item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let p1 = tape.softmax(&t(&[0.4, -1.2], &[2])).unwrap();
        let p2 = tape.softmax(&t(&[0.4 + 7.5, -1.2 + 7.5], &[2])).unwrap();
        for (a, b) in p1.data().iter().zip(p2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot() {
        let tape = Tape::new();
        let logits = t(&[0.2, -0.4, 1.3], &[3]);
        let (probs, loss) = tape.softmax_cross_entropy(&logits, 1).unwrap();
        tape.backward(&loss).unwrap();
        let g = logits.grad().unwrap();
        let p = probs.data();
        assert!((g[0] - p[0]).abs() < 1e-12);
        assert!((g[1] - (p[1] - 1.0)).abs() < 1e-12);
        assert!((g[2] - p[2]).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let tape = Tape::<f64>::new();
        assert!(tape
            .softmax_cross_entropy(&t(&[0.0, 0.0], &[2]), 2)
            .is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let tape = Tape::new();
        let x = t(&[3.0, -1.0, 0.5], &[3]);
        let loss = tape.sum(&x);
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sigmoid_scalar_is_quarter() {
        let tape = Tape::new();
        let x = t(&[0.0], &[1]);
        let y = tape.sigmoid(&x);
        tape.backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = t(&[1.0, 2.0], &[2]);
        let y = tape.scale(&x, 2.0);
        assert!(tape.backward(&y).is_err());
    }

    #[test]
    fn shared_tensor_grads_accumulate() {
        // loss = sum(x*x) => dloss/dx = 2x through two uses of x.
        let tape = Tape::new();
        let x = t(&[1.5, -2.0], &[2]);
        let y = tape.hadamard(&x, &x).unwrap();
        let loss = tape.sum(&y);
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, -4.0]);
    }
}

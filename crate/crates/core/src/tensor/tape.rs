//! The gradient tape: an ordered record of executed operations.

use std::cell::RefCell;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Records differentiable operations as they execute. Confined to one logical
/// execution context; ops may still parallelize internally over their output
/// elements.
pub struct Tape<T: Scalar> {
    steps: RefCell<Vec<Box<dyn Fn()>>>,
    recording: bool,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Tape<T> {
    /// A recording tape for training and gradient checks.
    pub fn new() -> Self {
        Tape {
            steps: RefCell::new(Vec::new()),
            recording: true,
            _marker: std::marker::PhantomData,
        }
    }

    /// An inference tape: forward values only, nothing retained.
    pub fn inference() -> Self {
        Tape {
            steps: RefCell::new(Vec::new()),
            recording: false,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.steps.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.borrow().is_empty()
    }

    /// Whether an op over these inputs must be recorded.
    pub(super) fn tracks(&self, inputs: &[&Tensor<T>]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    /// Build the output tensor for an op and, when tracked, mark it as
    /// gradient-bearing so downstream ops keep the chain alive.
    pub(super) fn output(&self, data: Vec<T>, shape: Vec<usize>, tracked: bool) -> Tensor<T> {
        Tensor::from_parts(data, shape, tracked)
    }

    pub(super) fn record(&self, step: impl Fn() + 'static) {
        self.steps.borrow_mut().push(Box::new(step));
    }

    /// Replay the tape backward from `loss`, visiting each recorded operation
    /// exactly once in reverse execution order. Gradients accumulate
    /// additively across multiple uses of a tensor. The tape is drained.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        loss.add_to_grad(&[T::ONE]);
        let steps = std::mem::take(&mut *self.steps.borrow_mut());
        for step in steps.iter().rev() {
            step();
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::{finite_diff_grad, max_relative_error};

    /// A composite conv -> pool -> linear -> loss graph: every leaf gradient
    /// must match finite differences.
    #[test]
    fn composite_graph_gradients_match_finite_differences() {
        let mut rng = Rng::new(61);
        let mut t = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            Tensor::param((0..n).map(|_| rng.normal()).collect(), shape).unwrap()
        };
        let input = t(&[2, 6, 6]);
        let weight = t(&[3, 2, 3, 3]);
        let conv_bias = t(&[3]);
        // 6x6 conv output pools to 3x3 -> 27 features.
        let fc_weight = t(&[2, 27]);
        let fc_bias = t(&[2]);

        let run = |tape: &Tape<f64>,
                   input: &Tensor<f64>,
                   weight: &Tensor<f64>,
                   conv_bias: &Tensor<f64>,
                   fc_weight: &Tensor<f64>,
                   fc_bias: &Tensor<f64>|
         -> crate::error::Result<Tensor<f64>> {
            let conv = tape.conv2d(input, weight, Some(conv_bias), 1, 1)?;
            let act = tape.tanh(&conv);
            let pooled = tape.maxpool2d(&act, 2, 2, false)?;
            let flat = tape.flatten(&pooled);
            let logits = tape.linear(&flat, fc_weight, fc_bias)?;
            let (_, loss) = tape.softmax_cross_entropy(&logits, 1)?;
            Ok(loss)
        };

        let tape = Tape::new();
        let loss = run(&tape, &input, &weight, &conv_bias, &fc_weight, &fc_bias).unwrap();
        tape.backward(&loss).unwrap();

        let leaves: [(&str, &Tensor<f64>); 5] = [
            ("input", &input),
            ("weight", &weight),
            ("conv_bias", &conv_bias),
            ("fc_weight", &fc_weight),
            ("fc_bias", &fc_bias),
        ];
        for (name, leaf) in leaves {
            let analytic = leaf.grad().unwrap();
            let fd = finite_diff_grad(
                |probe| {
                    let t = Tape::inference();
                    let pick = |n: &str, orig: &Tensor<f64>| {
                        if n == name {
                            probe.clone()
                        } else {
                            orig.clone()
                        }
                    };
                    run(
                        &t,
                        &pick("input", &input),
                        &pick("weight", &weight),
                        &pick("conv_bias", &conv_bias),
                        &pick("fc_weight", &fc_weight),
                        &pick("fc_bias", &fc_bias),
                    )?
                    .item()
                },
                leaf,
                1e-5,
            )
            .unwrap();
            let err = max_relative_error(&analytic, fd.data(), 1e-6);
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::<f64>::inference();
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = tape.scale(&x, 3.0);
        assert_eq!(y.data(), &[3.0, 6.0]);
        assert!(tape.is_empty());
    }
}

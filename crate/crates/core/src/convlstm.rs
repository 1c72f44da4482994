//! Convolutional LSTM cell with peephole connections, and sequence unrolling.
//!
//! All gate transforms are 3x3 convolutions, stride 1, padding 1, so the
//! state keeps its spatial extent. Peephole weights are full
//! `hidden x h x w` tensors applied by Hadamard product:
//!
//! ```text
//! i_t = sigmoid(W_xi * X_t + W_hi * H_{t-1} + W_ci o C_{t-1} + b_i)
//! f_t = sigmoid(W_xf * X_t + W_hf * H_{t-1} + W_cf o C_{t-1} + b_f)
//! C_t = f_t o C_{t-1} + i_t o tanh(W_xc * X_t + W_hc * H_{t-1} + b_c)
//! o_t = sigmoid(W_xo * X_t + W_ho * H_{t-1} + W_co o C_t + b_o)
//! H_t = o_t o tanh(C_t)
//! ```
//!
//! Unrolling backpropagates through every timestep; nothing is truncated.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Scalar, Tape, Tensor};

/// Parameter bundle for one cell. Handles are cheap clones out of the model's
/// registry; the registry stays the owner for checkpointing.
#[derive(Clone)]
pub struct ConvLstmParams<T: Scalar> {
    pub w_xi: Tensor<T>,
    pub w_xf: Tensor<T>,
    pub w_xc: Tensor<T>,
    pub w_xo: Tensor<T>,
    pub w_hi: Tensor<T>,
    pub w_hf: Tensor<T>,
    pub w_hc: Tensor<T>,
    pub w_ho: Tensor<T>,
    pub w_ci: Tensor<T>,
    pub w_cf: Tensor<T>,
    pub w_co: Tensor<T>,
    pub b_i: Tensor<T>,
    pub b_f: Tensor<T>,
    pub b_c: Tensor<T>,
    pub b_o: Tensor<T>,
}

/// Names of the cell's tensors under a registry prefix such as `convlstm_a`.
pub const CONVLSTM_PARAM_NAMES: [&str; 15] = [
    "w_xi", "w_xf", "w_xc", "w_xo", "w_hi", "w_hf", "w_hc", "w_ho", "w_ci", "w_cf", "w_co", "b_i",
    "b_f", "b_c", "b_o",
];

impl<T: Scalar> ConvLstmParams<T> {
    pub fn from_registry(params: &ModelParams<T>, prefix: &str) -> Result<Self> {
        let get = |name: &str| params.get(&format!("{prefix}.{name}")).cloned();
        let cell = ConvLstmParams {
            w_xi: get("w_xi")?,
            w_xf: get("w_xf")?,
            w_xc: get("w_xc")?,
            w_xo: get("w_xo")?,
            w_hi: get("w_hi")?,
            w_hf: get("w_hf")?,
            w_hc: get("w_hc")?,
            w_ho: get("w_ho")?,
            w_ci: get("w_ci")?,
            w_cf: get("w_cf")?,
            w_co: get("w_co")?,
            b_i: get("b_i")?,
            b_f: get("b_f")?,
            b_c: get("b_c")?,
            b_o: get("b_o")?,
        };
        for (name, t) in [
            ("w_xi", &cell.w_xi),
            ("w_xf", &cell.w_xf),
            ("w_xc", &cell.w_xc),
            ("w_xo", &cell.w_xo),
            ("w_hi", &cell.w_hi),
            ("w_hf", &cell.w_hf),
            ("w_hc", &cell.w_hc),
            ("w_ho", &cell.w_ho),
        ] {
            if t.rank() != 4 || t.shape()[2] != 3 || t.shape()[3] != 3 {
                return Err(Error::Shape(format!(
                    "{prefix}.{name}: gate kernels must be 3x3, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(cell)
    }

    pub fn hidden_channels(&self) -> usize {
        self.w_xi.shape()[0]
    }
}

/// Hidden and cell state pair. Every element of H lies in (-1, 1): it is
/// o o tanh(C) with o in (0, 1).
#[derive(Clone)]
pub struct ConvLstmState<T: Scalar> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> ConvLstmState<T> {
    /// The conventional zero initial state.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Ok(ConvLstmState {
            h: Tensor::zeros(&[channels, height, width])?,
            c: Tensor::zeros(&[channels, height, width])?,
        })
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.h.shape()[1], self.h.shape()[2])
    }
}

/// One timestep of the cell.
pub fn convlstm_step<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    state: &ConvLstmState<T>,
    params: &ConvLstmParams<T>,
) -> Result<ConvLstmState<T>> {
    if x.rank() != 3 {
        return Err(Error::Shape(format!(
            "convlstm_step input must be rank 3, got {:?}",
            x.shape()
        )));
    }
    if x.shape()[1..] != state.h.shape()[1..] {
        return Err(Error::Shape(format!(
            "convlstm_step spatial mismatch: input {:?} vs state {:?}",
            &x.shape()[1..],
            &state.h.shape()[1..]
        )));
    }

    let gate_pre = |wx: &Tensor<T>, wh: &Tensor<T>, b: &Tensor<T>| -> Result<Tensor<T>> {
        let from_x = tape.conv2d(x, wx, Some(b), 1, 1)?;
        let from_h = tape.conv2d(&state.h, wh, None, 1, 1)?;
        tape.add(&from_x, &from_h)
    };

    let i_pre = gate_pre(&params.w_xi, &params.w_hi, &params.b_i)?;
    let i_pre = tape.add(&i_pre, &tape.hadamard(&params.w_ci, &state.c)?)?;
    let i = tape.sigmoid(&i_pre);

    let f_pre = gate_pre(&params.w_xf, &params.w_hf, &params.b_f)?;
    let f_pre = tape.add(&f_pre, &tape.hadamard(&params.w_cf, &state.c)?)?;
    let f = tape.sigmoid(&f_pre);

    let g = tape.tanh(&gate_pre(&params.w_xc, &params.w_hc, &params.b_c)?);

    let c_next = tape.add(&tape.hadamard(&f, &state.c)?, &tape.hadamard(&i, &g)?)?;

    let o_pre = gate_pre(&params.w_xo, &params.w_ho, &params.b_o)?;
    let o_pre = tape.add(&o_pre, &tape.hadamard(&params.w_co, &c_next)?)?;
    let o = tape.sigmoid(&o_pre);

    let h_next = tape.hadamard(&o, &tape.tanh(&c_next))?;
    Ok(ConvLstmState {
        h: h_next,
        c: c_next,
    })
}

/// Fold the cell over a frame-feature sequence, returning the final state.
/// Backward flows through all timesteps.
pub fn convlstm_unroll<T: Scalar>(
    tape: &Tape<T>,
    sequence: &[Tensor<T>],
    params: &ConvLstmParams<T>,
    initial: ConvLstmState<T>,
) -> Result<ConvLstmState<T>> {
    if sequence.is_empty() {
        return Err(Error::InvalidArgument(
            "convlstm_unroll requires a nonempty sequence".into(),
        ));
    }
    let mut state = initial;
    for x in sequence {
        state = convlstm_step(tape, x, &state, params)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn zero_cell(hidden: usize, input: usize, h: usize, w: usize) -> ConvLstmParams<f64> {
        let k_x = || Tensor::zeros(&[hidden, input, 3, 3]).unwrap();
        let k_h = || Tensor::zeros(&[hidden, hidden, 3, 3]).unwrap();
        let peep = || Tensor::zeros(&[hidden, h, w]).unwrap();
        let bias = || Tensor::zeros(&[hidden]).unwrap();
        ConvLstmParams {
            w_xi: k_x(),
            w_xf: k_x(),
            w_xc: k_x(),
            w_xo: k_x(),
            w_hi: k_h(),
            w_hf: k_h(),
            w_hc: k_h(),
            w_ho: k_h(),
            w_ci: peep(),
            w_cf: peep(),
            w_co: peep(),
            b_i: bias(),
            b_f: bias(),
            b_c: bias(),
            b_o: bias(),
        }
    }

    fn random_cell(
        hidden: usize,
        input: usize,
        h: usize,
        w: usize,
        seed: u64,
    ) -> ConvLstmParams<f64> {
        let mut rng = Rng::new(seed);
        let mut t = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| 0.3 * rng.normal()).collect();
            Tensor::param(data, shape).unwrap()
        };
        ConvLstmParams {
            w_xi: t(&[hidden, input, 3, 3]),
            w_xf: t(&[hidden, input, 3, 3]),
            w_xc: t(&[hidden, input, 3, 3]),
            w_xo: t(&[hidden, input, 3, 3]),
            w_hi: t(&[hidden, hidden, 3, 3]),
            w_hf: t(&[hidden, hidden, 3, 3]),
            w_hc: t(&[hidden, hidden, 3, 3]),
            w_ho: t(&[hidden, hidden, 3, 3]),
            w_ci: t(&[hidden, h, w]),
            w_cf: t(&[hidden, h, w]),
            w_co: t(&[hidden, h, w]),
            b_i: t(&[hidden]),
            b_f: t(&[hidden]),
            b_c: t(&[hidden]),
            b_o: t(&[hidden]),
        }
    }

    /// Independent scalar peephole LSTM. With 1x1 spatial state, a padded 3x3
    /// convolution reduces to the kernel's center tap, so the whole cell
    /// collapses to scalar arithmetic.
    #[derive(Clone, Copy)]
    struct ScalarOracle {
        wxi: f64,
        wxf: f64,
        wxc: f64,
        wxo: f64,
        whi: f64,
        whf: f64,
        whc: f64,
        who: f64,
        wci: f64,
        wcf: f64,
        wco: f64,
        bi: f64,
        bf: f64,
        bc: f64,
        bo: f64,
    }

    impl ScalarOracle {
        fn from_cell(cell: &ConvLstmParams<f64>) -> Self {
            let center = |t: &Tensor<f64>| t.data()[4]; // middle of a 3x3 kernel
            ScalarOracle {
                wxi: center(&cell.w_xi),
                wxf: center(&cell.w_xf),
                wxc: center(&cell.w_xc),
                wxo: center(&cell.w_xo),
                whi: center(&cell.w_hi),
                whf: center(&cell.w_hf),
                whc: center(&cell.w_hc),
                who: center(&cell.w_ho),
                wci: cell.w_ci.data()[0],
                wcf: cell.w_cf.data()[0],
                wco: cell.w_co.data()[0],
                bi: cell.b_i.data()[0],
                bf: cell.b_f.data()[0],
                bc: cell.b_c.data()[0],
                bo: cell.b_o.data()[0],
            }
        }

        fn step(&self, x: f64, h: f64, c: f64) -> (f64, f64) {
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            let i = sig(self.wxi * x + self.whi * h + self.wci * c + self.bi);
            let f = sig(self.wxf * x + self.whf * h + self.wcf * c + self.bf);
            let c_next = f * c + i * (self.wxc * x + self.whc * h + self.bc).tanh();
            let o = sig(self.wxo * x + self.who * h + self.wco * c_next + self.bo);
            (o * c_next.tanh(), c_next)
        }
    }

    #[test]
    fn zero_parameters_give_half_gates_and_zero_state() {
        let cell = zero_cell(2, 3, 4, 4);
        let state = ConvLstmState::zeros(2, 4, 4).unwrap();
        let mut rng = Rng::new(1);
        let x = Tensor::new((0..3 * 16).map(|_| rng.normal()).collect(), &[3, 4, 4]).unwrap();
        let tape = Tape::inference();
        let next = convlstm_step(&tape, &x, &state, &cell).unwrap();
        assert!(next.c.data().iter().all(|&v| v == 0.0));
        assert!(next.h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_instance_matches_hand_rolled_oracle() {
        let cell = random_cell(1, 1, 1, 1, 77);
        let oracle = ScalarOracle::from_cell(&cell);
        let x_val = 0.37;
        let x = Tensor::new(vec![x_val], &[1, 1, 1]).unwrap();
        let tape = Tape::inference();
        let next =
            convlstm_step(&tape, &x, &ConvLstmState::zeros(1, 1, 1).unwrap(), &cell).unwrap();
        let (h_ref, c_ref) = oracle.step(x_val, 0.0, 0.0);
        assert!((next.h.data()[0] - h_ref).abs() < 1e-12);
        assert!((next.c.data()[0] - c_ref).abs() < 1e-12);
    }

    #[test]
    fn three_step_unroll_matches_iterated_oracle() {
        let cell = random_cell(1, 1, 1, 1, 99);
        let oracle = ScalarOracle::from_cell(&cell);
        let xs = [0.2, -0.5, 0.9];
        let seq: Vec<Tensor<f64>> = xs
            .iter()
            .map(|&v| Tensor::new(vec![v], &[1, 1, 1]).unwrap())
            .collect();
        let tape = Tape::inference();
        let state =
            convlstm_unroll(&tape, &seq, &cell, ConvLstmState::zeros(1, 1, 1).unwrap()).unwrap();
        let (mut h, mut c) = (0.0, 0.0);
        for &x in &xs {
            let (h2, c2) = oracle.step(x, h, c);
            h = h2;
            c = c2;
        }
        assert!((state.h.data()[0] - h).abs() < 1e-12);
        assert!((state.c.data()[0] - c).abs() < 1e-12);
    }

    #[test]
    fn length_one_unroll_equals_single_step() {
        let cell = random_cell(2, 2, 3, 3, 5);
        let mut rng = Rng::new(6);
        let x = Tensor::new((0..2 * 9).map(|_| rng.normal()).collect(), &[2, 3, 3]).unwrap();
        let tape = Tape::inference();
        let init = ConvLstmState::zeros(2, 3, 3).unwrap();
        let a = convlstm_step(&tape, &x, &init, &cell).unwrap();
        let b = convlstm_unroll(&tape, &[x], &cell, init).unwrap();
        assert_eq!(a.h.data(), b.h.data());
        assert_eq!(a.c.data(), b.c.data());
    }

    #[test]
    fn zero_parameters_unroll_to_zero_hidden_state() {
        let cell = zero_cell(1, 1, 2, 2);
        let mut rng = Rng::new(8);
        let seq: Vec<Tensor<f64>> = (0..5)
            .map(|_| {
                Tensor::new((0..4).map(|_| 10.0 * rng.normal()).collect(), &[1, 2, 2]).unwrap()
            })
            .collect();
        let tape = Tape::inference();
        let state =
            convlstm_unroll(&tape, &seq, &cell, ConvLstmState::zeros(1, 2, 2).unwrap()).unwrap();
        assert!(state.h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_sequence_rejected() {
        let cell = zero_cell(1, 1, 2, 2);
        let tape = Tape::<f64>::inference();
        assert!(
            convlstm_unroll(&tape, &[], &cell, ConvLstmState::zeros(1, 2, 2).unwrap()).is_err()
        );
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let cell = zero_cell(1, 1, 2, 2);
        let x = Tensor::<f64>::zeros(&[1, 3, 3]).unwrap();
        let tape = Tape::inference();
        assert!(convlstm_step(&tape, &x, &ConvLstmState::zeros(1, 2, 2).unwrap(), &cell).is_err());
    }

    #[test]
    fn hidden_state_stays_inside_unit_interval() {
        let cell = random_cell(2, 2, 3, 3, 13);
        let mut rng = Rng::new(14);
        let seq: Vec<Tensor<f64>> = (0..6)
            .map(|_| {
                Tensor::new((0..2 * 9).map(|_| 3.0 * rng.normal()).collect(), &[2, 3, 3]).unwrap()
            })
            .collect();
        let tape = Tape::inference();
        let mut state = ConvLstmState::zeros(2, 3, 3).unwrap();
        for x in &seq {
            state = convlstm_step(&tape, x, &state, &cell).unwrap();
            assert!(state.h.data().iter().all(|&v| v.abs() < 1.0));
        }
    }

    #[test]
    fn bias_only_recurrence_stays_bounded() {
        // Zero input kernels, nonzero biases: C follows the monotone
        // recurrence c <- sigma(b_f) c + sigma(b_i) tanh(b_c), bounded by the
        // geometric series limit when sigma(b_f) < 1.
        let mut cell = zero_cell(1, 1, 2, 2);
        cell.b_i = Tensor::new(vec![0.8], &[1]).unwrap();
        cell.b_f = Tensor::new(vec![1.2], &[1]).unwrap();
        cell.b_c = Tensor::new(vec![0.9], &[1]).unwrap();
        cell.b_o = Tensor::new(vec![-0.1], &[1]).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let bound = sig(0.8) * (0.9f64).tanh() / (1.0 - sig(1.2));
        let zero_frame = Tensor::zeros(&[1, 2, 2]).unwrap();
        let tape = Tape::inference();
        let mut state = ConvLstmState::zeros(1, 2, 2).unwrap();
        for _ in 0..100 {
            state = convlstm_step(&tape, &zero_frame, &state, &cell).unwrap();
            assert!(state.c.all_finite());
            assert!(state.c.data().iter().all(|&v| v.abs() <= bound + 1e-9));
        }
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        // 2-channel, 3x3-spatial instance; checks every parameter group.
        let cell = random_cell(2, 2, 3, 3, 55);
        let mut rng = Rng::new(56);
        let x_data: Vec<f64> = (0..2 * 9).map(|_| rng.normal()).collect();
        let x = Tensor::new(x_data, &[2, 3, 3]).unwrap();
        // Nonzero starting state so peephole gradients are visible.
        let h0: Vec<f64> = (0..2 * 9).map(|_| 0.3 * rng.normal()).collect();
        let c0: Vec<f64> = (0..2 * 9).map(|_| 0.3 * rng.normal()).collect();
        let init = ConvLstmState {
            h: Tensor::new(h0.clone(), &[2, 3, 3]).unwrap(),
            c: Tensor::new(c0.clone(), &[2, 3, 3]).unwrap(),
        };

        let tape = Tape::new();
        let next = convlstm_step(&tape, &x, &init, &cell).unwrap();
        let loss = tape.sum(&next.h);
        tape.backward(&loss).unwrap();

        let groups: [(&str, &Tensor<f64>); 15] = [
            ("w_xi", &cell.w_xi),
            ("w_xf", &cell.w_xf),
            ("w_xc", &cell.w_xc),
            ("w_xo", &cell.w_xo),
            ("w_hi", &cell.w_hi),
            ("w_hf", &cell.w_hf),
            ("w_hc", &cell.w_hc),
            ("w_ho", &cell.w_ho),
            ("w_ci", &cell.w_ci),
            ("w_cf", &cell.w_cf),
            ("w_co", &cell.w_co),
            ("b_i", &cell.b_i),
            ("b_f", &cell.b_f),
            ("b_c", &cell.b_c),
            ("b_o", &cell.b_o),
        ];
        let eps = 1e-5;
        for (name, tensor) in groups {
            let analytic = tensor
                .grad()
                .unwrap_or_else(|| panic!("no grad for {name}"));
            let base = tensor.data().to_vec();
            for idx in 0..base.len().min(6) {
                let eval = |delta: f64| {
                    let mut probe = cell.clone();
                    let mut data = base.clone();
                    data[idx] += delta;
                    let replaced = Tensor::new(data, tensor.shape()).unwrap();
                    match name {
                        "w_xi" => probe.w_xi = replaced,
                        "w_xf" => probe.w_xf = replaced,
                        "w_xc" => probe.w_xc = replaced,
                        "w_xo" => probe.w_xo = replaced,
                        "w_hi" => probe.w_hi = replaced,
                        "w_hf" => probe.w_hf = replaced,
                        "w_hc" => probe.w_hc = replaced,
                        "w_ho" => probe.w_ho = replaced,
                        "w_ci" => probe.w_ci = replaced,
                        "w_cf" => probe.w_cf = replaced,
                        "w_co" => probe.w_co = replaced,
                        "b_i" => probe.b_i = replaced,
                        "b_f" => probe.b_f = replaced,
                        "b_c" => probe.b_c = replaced,
                        _ => probe.b_o = replaced,
                    }
                    let tape = Tape::inference();
                    let init = ConvLstmState {
                        h: Tensor::new(h0.clone(), &[2, 3, 3]).unwrap(),
                        c: Tensor::new(c0.clone(), &[2, 3, 3]).unwrap(),
                    };
                    let next = convlstm_step(&tape, &x, &init, &probe).unwrap();
                    tape.sum(&next.h).item().unwrap()
                };
                let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let a = analytic[idx];
                let scale = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (a - fd).abs() / scale < 1e-4,
                    "{name}[{idx}]: analytic {a} vs fd {fd}"
                );
            }
        }
    }
}

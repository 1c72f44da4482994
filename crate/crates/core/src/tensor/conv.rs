//! 2D cross-correlation via patch gathering (im2col) and matrix multiply.
//!
//! The kernel is not flipped. Backward recomputes the patch matrix instead of
//! retaining it, trading a second gather for a much smaller tape.

use rayon::prelude::*;

use super::{conv_out_extent, Scalar, Tape, Tensor};
use crate::error::{Error, Result};

struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Gather input patches into a `[c_in*kh*kw, out_h*out_w]` row-major matrix,
/// zero-filling the padding region.
fn im2col<T: Scalar>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let col_w = g.col_cols();
    let mut col = vec![T::ZERO; g.col_rows() * col_w];
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * col_w..(row + 1) * col_w];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.out_w + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add a column-matrix gradient back onto the input layout.
/// Parallel over input channels: each channel's rows write a disjoint plane.
fn col2im_accumulate<T: Scalar>(dcol: &[T], g: &ConvGeom, dinput: &mut [T]) {
    let col_w = g.col_cols();
    let plane = g.h * g.w;
    dinput
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(c, dplane)| {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let row = (c * g.kh + ky) * g.kw + kx;
                    let src = &dcol[row * col_w..(row + 1) * col_w];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for ox in 0..g.out_w {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dplane[iy as usize * g.w + ix as usize] += src[oy * g.out_w + ox];
                            }
                        }
                    }
                }
            }
        });
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlate `input [C_in x H x W]` with `weight [C_out x C_in x kH x kW]`,
    /// producing `[C_out x H' x W']` where
    /// `H' = floor((H + 2*padding - kH) / stride) + 1` and likewise for `W'`.
    /// The per-channel bias, when given, broadcasts over spatial positions.
    pub fn conv2d(
        &self,
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<T>> {
        if input.rank() != 3 {
            return Err(Error::Shape(format!(
                "conv2d input must be rank 3 (C x H x W), got {:?}",
                input.shape()
            )));
        }
        if weight.rank() != 4 {
            return Err(Error::Shape(format!(
                "conv2d weight must be rank 4 (C_out x C_in x kH x kW), got {:?}",
                weight.shape()
            )));
        }
        let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (c_out, wc_in, kh, kw) = (
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
        );
        if wc_in != c_in {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input has {c_in} channels ({:?}) but weight expects {wc_in} ({:?})",
                input.shape(),
                weight.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "conv2d stride must be positive".into(),
            ));
        }
        let out_h = conv_out_extent(h, kh, stride, padding).ok_or_else(|| {
            Error::Shape(format!(
                "conv2d kernel {kh}x{kw} exceeds padded input {h}x{w} (padding {padding})"
            ))
        })?;
        let out_w = conv_out_extent(w, kw, stride, padding).ok_or_else(|| {
            Error::Shape(format!(
                "conv2d kernel {kh}x{kw} exceeds padded input {h}x{w} (padding {padding})"
            ))
        })?;
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(Error::Shape(format!(
                    "conv2d bias {:?} must have shape [{c_out}]",
                    b.shape()
                )));
            }
        }

        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            out_h,
            out_w,
        };
        let col = im2col(input.data(), &geom);
        let data = matmul_weight_col(weight.data(), bias.map(|b| b.data()), &col, &geom);

        let mut tracked_inputs = vec![input, weight];
        if let Some(b) = bias {
            tracked_inputs.push(b);
        }
        let tracked = self.tracks(&tracked_inputs);
        let out = self.output(data, vec![c_out, out_h, out_w], tracked);
        if tracked {
            let input = input.clone();
            let weight = weight.clone();
            let bias = bias.cloned();
            let out_t = out.clone();
            self.record(move || {
                out_t.with_grad(|go| {
                    conv2d_backward(&input, &weight, bias.as_ref(), go, &geom);
                });
            });
        }
        Ok(out)
    }
}

/// `out[c] = weight_row(c) . col + bias[c]`, parallel over output channels.
fn matmul_weight_col<T: Scalar>(
    weight: &[T],
    bias: Option<&[T]>,
    col: &[T],
    g: &ConvGeom,
) -> Vec<T> {
    let rows = g.col_rows();
    let cols = g.col_cols();
    let mut out = vec![T::ZERO; g.c_out * cols];
    out.par_chunks_mut(cols)
        .enumerate()
        .for_each(|(c, out_row)| {
            let w_row = &weight[c * rows..(c + 1) * rows];
            for (r, &wv) in w_row.iter().enumerate() {
                if wv == T::ZERO {
                    continue;
                }
                let col_row = &col[r * cols..(r + 1) * cols];
                for (o, &cv) in out_row.iter_mut().zip(col_row) {
                    *o += wv * cv;
                }
            }
            if let Some(b) = bias {
                let bv = b[c];
                for o in out_row.iter_mut() {
                    *o += bv;
                }
            }
        });
    out
}

fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    go: &[T],
    g: &ConvGeom,
) {
    let rows = g.col_rows();
    let cols = g.col_cols();

    if weight.requires_grad() {
        // dW[c, r] = sum_o go[c, o] * col[r, o]
        let col = im2col(input.data(), g);
        let mut dw = vec![T::ZERO; g.c_out * rows];
        dw.par_chunks_mut(rows).enumerate().for_each(|(c, dw_row)| {
            let go_row = &go[c * cols..(c + 1) * cols];
            for (r, dwv) in dw_row.iter_mut().enumerate() {
                let col_row = &col[r * cols..(r + 1) * cols];
                let mut acc = T::ZERO;
                for (gv, cv) in go_row.iter().zip(col_row) {
                    acc += *gv * *cv;
                }
                *dwv = acc;
            }
        });
        weight.add_to_grad(&dw);
    }

    if let Some(b) = bias {
        if b.requires_grad() {
            let mut db = vec![T::ZERO; g.c_out];
            for (c, dbv) in db.iter_mut().enumerate() {
                let go_row = &go[c * cols..(c + 1) * cols];
                let mut acc = T::ZERO;
                for &gv in go_row {
                    acc += gv;
                }
                *dbv = acc;
            }
            b.add_to_grad(&db);
        }
    }

    if input.requires_grad() {
        // dcol[r, o] = sum_c W[c, r] * go[c, o], then scatter back to input.
        let w = weight.data();
        let mut dcol = vec![T::ZERO; rows * cols];
        dcol.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(r, dcol_row)| {
                for c in 0..g.c_out {
                    let wv = w[c * rows + r];
                    if wv == T::ZERO {
                        continue;
                    }
                    let go_row = &go[c * cols..(c + 1) * cols];
                    for (d, &gv) in dcol_row.iter_mut().zip(go_row) {
                        *d += wv * gv;
                    }
                }
            });
        let mut dinput = vec![T::ZERO; input.numel()];
        col2im_accumulate(&dcol, g, &mut dinput);
        input.add_to_grad(&dinput);
    }
}

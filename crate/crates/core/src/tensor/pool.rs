//! Spatial pooling: windowed max and adaptive average.

use super::{pool_out_extent, Scalar, Tape, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    /// Windowed maximum over each channel plane. No padding; with `ceil_mode`
    /// a trailing partial window is kept (clipped to the input). Backward
    /// routes the gradient to the window's argmax, first occurrence in
    /// row-major order on ties.
    pub fn maxpool2d(
        &self,
        input: &Tensor<T>,
        kernel: usize,
        stride: usize,
        ceil_mode: bool,
    ) -> Result<Tensor<T>> {
        if input.rank() != 3 {
            return Err(Error::Shape(format!(
                "maxpool2d input must be rank 3, got {:?}",
                input.shape()
            )));
        }
        if stride == 0 || kernel == 0 {
            return Err(Error::InvalidArgument(
                "maxpool2d kernel and stride must be positive".into(),
            ));
        }
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let out_h = pool_out_extent(h, kernel, stride, ceil_mode).ok_or_else(|| {
            Error::Shape(format!(
                "maxpool2d kernel {kernel} exceeds input extent {h}x{w}"
            ))
        })?;
        let out_w = pool_out_extent(w, kernel, stride, ceil_mode).ok_or_else(|| {
            Error::Shape(format!(
                "maxpool2d kernel {kernel} exceeds input extent {h}x{w}"
            ))
        })?;

        let x = input.data();
        let mut data = vec![T::ZERO; c * out_h * out_w];
        let mut argmax = vec![0usize; c * out_h * out_w];
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for oy in 0..out_h {
                let y0 = oy * stride;
                let y1 = (y0 + kernel).min(h);
                for ox in 0..out_w {
                    let x0 = ox * stride;
                    let x1 = (x0 + kernel).min(w);
                    let mut best = plane[y0 * w + x0];
                    let mut best_idx = y0 * w + x0;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            let v = plane[yy * w + xx];
                            if v > best {
                                best = v;
                                best_idx = yy * w + xx;
                            }
                        }
                    }
                    let o = (ci * out_h + oy) * out_w + ox;
                    data[o] = best;
                    argmax[o] = ci * h * w + best_idx;
                }
            }
        }

        let tracked = self.tracks(&[input]);
        let out = self.output(data, vec![c, out_h, out_w], tracked);
        if tracked {
            let (input, out) = (input.clone(), out.clone());
            self.record(move || {
                out.with_grad(|go| {
                    let mut delta = vec![T::ZERO; input.numel()];
                    for (g, &idx) in go.iter().zip(&argmax) {
                        delta[idx] += *g;
                    }
                    input.add_to_grad(&delta);
                });
            });
        }
        Ok(out)
    }

    /// Average pooling onto a fixed `target_h x target_w` grid. Output cell
    /// (i, j) averages the window `[floor(i*H/h), ceil((i+1)*H/h))` by
    /// `[floor(j*W/w), ceil((j+1)*W/w))`; windows may overlap when the target
    /// does not divide the input.
    pub fn adaptive_avgpool2d(
        &self,
        input: &Tensor<T>,
        target_h: usize,
        target_w: usize,
    ) -> Result<Tensor<T>> {
        if input.rank() != 3 {
            return Err(Error::Shape(format!(
                "adaptive_avgpool2d input must be rank 3, got {:?}",
                input.shape()
            )));
        }
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        if target_h == 0 || target_w == 0 || target_h > h || target_w > w {
            return Err(Error::Shape(format!(
                "adaptive_avgpool2d target {target_h}x{target_w} out of range for input {h}x{w}"
            )));
        }

        let row_windows: Vec<(usize, usize)> = (0..target_h)
            .map(|i| (i * h / target_h, ((i + 1) * h).div_ceil(target_h)))
            .collect();
        let col_windows: Vec<(usize, usize)> = (0..target_w)
            .map(|j| (j * w / target_w, ((j + 1) * w).div_ceil(target_w)))
            .collect();

        let x = input.data();
        let mut data = vec![T::ZERO; c * target_h * target_w];
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for (i, &(y0, y1)) in row_windows.iter().enumerate() {
                for (j, &(x0, x1)) in col_windows.iter().enumerate() {
                    let mut acc = T::ZERO;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            acc += plane[yy * w + xx];
                        }
                    }
                    let count = T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    data[(ci * target_h + i) * target_w + j] = acc / count;
                }
            }
        }

        let tracked = self.tracks(&[input]);
        let out = self.output(data, vec![c, target_h, target_w], tracked);
        if tracked {
            let (input, out) = (input.clone(), out.clone());
            self.record(move || {
                out.with_grad(|go| {
                    let mut delta = vec![T::ZERO; input.numel()];
                    for ci in 0..c {
                        for (i, &(y0, y1)) in row_windows.iter().enumerate() {
                            for (j, &(x0, x1)) in col_windows.iter().enumerate() {
                                let g = go[(ci * target_h + i) * target_w + j];
                                let share = g / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                                for yy in y0..y1 {
                                    for xx in x0..x1 {
                                        delta[ci * h * w + yy * w + xx] += share;
                                    }
                                }
                            }
                        }
                    }
                    input.add_to_grad(&delta);
                });
            });
        }
        Ok(out)
    }
}

//! Per-frame spatial feature extractors: the slimmed AlexNet stream and the
//! SqueezeNet stream with Fire modules.
//!
//! Layer schedules are fixed; a width factor uniformly scales channel counts
//! so gradient checks and overfit tests can run at desk scale without
//! changing the topology. Neither stream carries normalization layers.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::model::ModelParams;
use crate::tensor::{Scalar, Tape, Tensor};

/// One convolution stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Fire module channel counts: a 1x1 squeeze feeding parallel 1x1 and 3x3
/// expands whose outputs concatenate along channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FireSpec {
    pub squeeze_channels: usize,
    pub expand1x1_channels: usize,
    pub expand3x3_channels: usize,
}

impl FireSpec {
    pub fn new(squeeze: usize, expand1x1: usize, expand3x3: usize) -> Result<Self> {
        if squeeze == 0 || expand1x1 == 0 || expand3x3 == 0 {
            return Err(Error::InvalidArgument(
                "fire module channel counts must be positive".into(),
            ));
        }
        if squeeze >= expand1x1 + expand3x3 {
            return Err(Error::InvalidArgument(format!(
                "fire module must bottleneck: squeeze {squeeze} >= expand {expand1x1}+{expand3x3}"
            )));
        }
        Ok(FireSpec {
            squeeze_channels: squeeze,
            expand1x1_channels: expand1x1,
            expand3x3_channels: expand3x3,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.expand1x1_channels + self.expand3x3_channels
    }
}

/// Scale a channel count by the width factor, never below one channel.
pub fn scale_channels(base: usize, width_factor: f64) -> usize {
    ((base as f64 * width_factor).round() as usize).max(1)
}

/// AlexNet stage schedule at a given width factor.
pub fn alexnet_layers(width_factor: f64) -> [ConvLayerSpec; 5] {
    let c = |base| scale_channels(base, width_factor);
    [
        ConvLayerSpec {
            out_channels: c(64),
            kernel: 11,
            stride: 4,
            padding: 2,
        },
        ConvLayerSpec {
            out_channels: c(192),
            kernel: 5,
            stride: 1,
            padding: 2,
        },
        ConvLayerSpec {
            out_channels: c(384),
            kernel: 3,
            stride: 1,
            padding: 1,
        },
        ConvLayerSpec {
            out_channels: c(256),
            kernel: 3,
            stride: 1,
            padding: 1,
        },
        ConvLayerSpec {
            out_channels: c(256),
            kernel: 3,
            stride: 1,
            padding: 1,
        },
    ]
}

/// SqueezeNet's standalone first convolution.
pub fn squeezenet_conv1(width_factor: f64) -> ConvLayerSpec {
    ConvLayerSpec {
        out_channels: scale_channels(96, width_factor),
        kernel: 7,
        stride: 2,
        padding: 0,
    }
}

/// Fire module schedule (fire2..fire9), v1.0 channel counts. This is the only
/// schedule consistent with a 512x13x13 output at full width.
pub fn fire_specs(width_factor: f64) -> [FireSpec; 8] {
    let base = [
        (16, 64, 64),
        (16, 64, 64),
        (32, 128, 128),
        (32, 128, 128),
        (48, 192, 192),
        (48, 192, 192),
        (64, 256, 256),
        (64, 256, 256),
    ];
    base.map(|(s, e1, e3)| {
        FireSpec::new(
            scale_channels(s, width_factor),
            scale_channels(e1, width_factor),
            scale_channels(e3, width_factor),
        )
        .expect("scaled fire schedule keeps the bottleneck")
    })
}

/// Per-stage shapes captured during a forward pass, for dimension-chain
/// assertions.
#[derive(Debug, Default)]
pub struct ShapeTrace(pub Vec<(String, Vec<usize>)>);

impl ShapeTrace {
    fn push<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        self.0.push((name.to_string(), t.shape().to_vec()));
    }

    pub fn get(&self, name: &str) -> Option<&[usize]> {
        self.0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.as_slice())
    }
}

fn check_frame<T: Scalar>(frame: &Tensor<T>, crop: usize, stream: &str) -> Result<()> {
    if frame.shape() != [3, crop, crop] {
        return Err(Error::Shape(format!(
            "{stream} expects a 3x{crop}x{crop} frame, got {:?}",
            frame.shape()
        )));
    }
    Ok(())
}

/// The slimmed AlexNet stream: five convolutions with interleaved max pools
/// and a trailing adaptive average pool. 3x224x224 in, 256x6x6 out at full
/// width.
pub fn alexnet_lite_forward<T: Scalar>(
    tape: &Tape<T>,
    frame: &Tensor<T>,
    params: &ModelParams<T>,
    geom: &Geometry,
) -> Result<Tensor<T>> {
    alexnet_forward_inner(tape, frame, params, geom, None)
}

pub fn alexnet_lite_forward_traced<T: Scalar>(
    tape: &Tape<T>,
    frame: &Tensor<T>,
    params: &ModelParams<T>,
    geom: &Geometry,
    trace: &mut ShapeTrace,
) -> Result<Tensor<T>> {
    alexnet_forward_inner(tape, frame, params, geom, Some(trace))
}

fn alexnet_forward_inner<T: Scalar>(
    tape: &Tape<T>,
    frame: &Tensor<T>,
    params: &ModelParams<T>,
    geom: &Geometry,
    mut trace: Option<&mut ShapeTrace>,
) -> Result<Tensor<T>> {
    check_frame(frame, geom.crop, "alexnet_lite_forward")?;
    let strides = [4usize, 1, 1, 1, 1];
    let paddings = [2usize, 2, 1, 1, 1];
    // Pools follow conv1, conv2 and conv5.
    let pool_after = [Some(0usize), Some(1), None, None, Some(2)];

    let mut x = frame.clone();
    for layer in 0..5 {
        let weight = params.get(&format!("alexnet.conv{}.weight", layer + 1))?;
        let bias = params.get(&format!("alexnet.conv{}.bias", layer + 1))?;
        x = tape.conv2d(&x, weight, Some(bias), strides[layer], paddings[layer])?;
        x = tape.relu(&x);
        if let Some(t) = trace.as_deref_mut() {
            t.push(&format!("alexnet.conv{}", layer + 1), &x);
        }
        if let Some(pool_idx) = pool_after[layer] {
            if geom.alex_pools[pool_idx] {
                x = tape.maxpool2d(&x, 3, 2, false)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(&format!("alexnet.pool{}", pool_idx + 1), &x);
                }
            }
        }
    }
    x = tape.adaptive_avgpool2d(&x, geom.alex_adaptive, geom.alex_adaptive)?;
    if let Some(t) = trace {
        t.push("alexnet.out", &x);
    }
    Ok(x)
}

/// One Fire module: relu(1x1 squeeze) feeding concat(relu(1x1 expand),
/// relu(3x3 expand, padding 1)). Spatial dimensions are preserved.
pub fn fire_forward<T: Scalar>(
    tape: &Tape<T>,
    input: &Tensor<T>,
    spec: &FireSpec,
    prefix: &str,
    params: &ModelParams<T>,
) -> Result<Tensor<T>> {
    let squeeze_w = params.get(&format!("{prefix}.squeeze.weight"))?;
    if squeeze_w.shape()[0] != spec.squeeze_channels {
        return Err(Error::Shape(format!(
            "{prefix}: squeeze weight has {} filters, spec says {}",
            squeeze_w.shape()[0],
            spec.squeeze_channels
        )));
    }
    let squeeze_b = params.get(&format!("{prefix}.squeeze.bias"))?;
    let squeezed = tape.relu(&tape.conv2d(input, squeeze_w, Some(squeeze_b), 1, 0)?);

    let e1_w = params.get(&format!("{prefix}.expand1x1.weight"))?;
    let e1_b = params.get(&format!("{prefix}.expand1x1.bias"))?;
    let e1 = tape.relu(&tape.conv2d(&squeezed, e1_w, Some(e1_b), 1, 0)?);

    let e3_w = params.get(&format!("{prefix}.expand3x3.weight"))?;
    let e3_b = params.get(&format!("{prefix}.expand3x3.bias"))?;
    let e3 = tape.relu(&tape.conv2d(&squeezed, e3_w, Some(e3_b), 1, 1)?);

    tape.concat_channels(&e1, &e3)
}

/// The SqueezeNet stream: conv1, eight Fire modules, max pools after conv1,
/// fire4 and fire8. The classifier convolution of the original network is
/// omitted. 3x224x224 in, 512x13x13 out at full width.
pub fn squeezenet_lite_forward<T: Scalar>(
    tape: &Tape<T>,
    frame: &Tensor<T>,
    params: &ModelParams<T>,
    geom: &Geometry,
) -> Result<Tensor<T>> {
    squeezenet_forward_inner(tape, frame, params, geom, None)
}

pub fn squeezenet_lite_forward_traced<T: Scalar>(
    tape: &Tape<T>,
    frame: &Tensor<T>,
    params: &ModelParams<T>,
    geom: &Geometry,
    trace: &mut ShapeTrace,
) -> Result<Tensor<T>> {
    squeezenet_forward_inner(tape, frame, params, geom, Some(trace))
}

fn squeezenet_forward_inner<T: Scalar>(
    tape: &Tape<T>,
    frame: &Tensor<T>,
    params: &ModelParams<T>,
    geom: &Geometry,
    mut trace: Option<&mut ShapeTrace>,
) -> Result<Tensor<T>> {
    check_frame(frame, geom.crop, "squeezenet_lite_forward")?;
    let conv1_w = params.get("squeezenet.conv1.weight")?;
    let conv1_b = params.get("squeezenet.conv1.bias")?;
    let width_factor = conv1_w.shape()[0] as f64 / 96.0;
    let specs = fire_specs(width_factor);

    let mut x = tape.relu(&tape.conv2d(frame, conv1_w, Some(conv1_b), 2, 0)?);
    if let Some(t) = trace.as_deref_mut() {
        t.push("squeezenet.conv1", &x);
    }
    if geom.squeeze_pools[0] {
        x = tape.maxpool2d(&x, 3, 2, true)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push("squeezenet.pool1", &x);
        }
    }
    for (i, spec) in specs.iter().enumerate() {
        let fire_no = i + 2;
        x = fire_forward(tape, &x, spec, &format!("squeezenet.fire{fire_no}"), params)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(&format!("squeezenet.fire{fire_no}"), &x);
        }
        let pool_idx = match fire_no {
            4 => Some(1),
            8 => Some(2),
            _ => None,
        };
        if let Some(p) = pool_idx {
            if geom.squeeze_pools[p] {
                x = tape.maxpool2d(&x, 3, 2, true)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(&format!("squeezenet.pool{}", p + 1), &x);
                }
            }
        }
    }
    if let Some(t) = trace {
        t.push("squeezenet.out", &x);
    }
    Ok(x)
}

//! The full two-stream network: backbones, per-stream ConvLSTMs, state
//! fusion, classifier head, parameter initialization and checkpointing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::backbones::{
    alexnet_layers, alexnet_lite_forward_traced, fire_specs, scale_channels, squeezenet_conv1,
    squeezenet_lite_forward_traced, ShapeTrace,
};
use crate::convlstm::{convlstm_unroll, ConvLstmParams, ConvLstmState, CONVLSTM_PARAM_NAMES};
use crate::error::{Error, Result};
use crate::geometry::{Bridge, Geometry};
use crate::rng::{derive_seed, hash_str, Rng};
use crate::tensor::{Scalar, Tape, Tensor};

/// Structural configuration of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Uniform channel-count multiplier in (0, 1]. 1.0 reproduces the
    /// published dimensions.
    pub width_factor: f64,
    /// Frames per clip fed to the ConvLSTMs.
    pub sequence_length: usize,
    /// Base hidden width of both ConvLSTMs (scaled by `width_factor`).
    pub hidden_channels: usize,
    /// Width of the first fully connected layer.
    pub fc1_width: usize,
    /// Always two: violence / non-violence.
    pub num_classes: usize,
    /// Square crop fed to the backbones.
    pub crop_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width_factor: 1.0,
            sequence_length: 20,
            hidden_channels: 256,
            fc1_width: 1000,
            num_classes: 2,
            crop_size: 224,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if !(self.width_factor > 0.0 && self.width_factor <= 1.0) {
            issues.push(format!(
                "width_factor must be in (0, 1], got {}",
                self.width_factor
            ));
        }
        if self.sequence_length == 0 {
            issues.push("sequence_length must be at least 1".into());
        }
        if self.hidden_channels == 0 {
            issues.push("hidden_channels must be positive".into());
        }
        if self.fc1_width == 0 {
            issues.push("fc1_width must be positive".into());
        }
        if self.num_classes != 2 {
            issues.push(format!(
                "num_classes is fixed at 2, got {}",
                self.num_classes
            ));
        }
        if let Err(e) = Geometry::plan(self.crop_size) {
            issues.push(e.to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn scaled_hidden(&self) -> usize {
        scale_channels(self.hidden_channels, self.width_factor)
    }
}

/// Named registry of every trainable tensor. Iteration order is the sorted
/// name order, which keeps checkpointing and optimizer traversal
/// deterministic.
#[derive(Clone)]
pub struct ModelParams<T: Scalar> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> std::fmt::Debug for ModelParams<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ModelParams({} tensors, {} scalars)",
            self.len(),
            self.total_len()
        )
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn empty() -> Self {
        ModelParams {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        if self.map.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "parameter `{name}` registered twice"
            )));
        }
        self.map.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Replace the tensor behind an existing name (optimizer updates).
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        match self.map.get_mut(name) {
            Some(slot) => {
                if slot.shape() != tensor.shape() {
                    return Err(Error::Shape(format!(
                        "cannot replace `{name}`: shape {:?} with {:?}",
                        slot.shape(),
                        tensor.shape()
                    )));
                }
                *slot = tensor;
                Ok(())
            }
            None => Err(Error::UnknownParam(name.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Sorted (name, shape) listing.
    pub fn census(&self) -> Vec<(String, Vec<usize>)> {
        self.map
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }

    /// Total scalar parameter count.
    pub fn total_len(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    /// Copy of the registry with one tensor's data replaced; used by
    /// finite-difference probes over parameters.
    pub fn with_replaced(&self, name: &str, data: &[T]) -> Result<Self> {
        let current = self.get(name)?;
        let replacement = Tensor::param(data.to_vec(), current.shape())?;
        let mut clone = self.clone();
        clone.set(name, replacement)?;
        Ok(clone)
    }

    pub fn clear_grads(&self) {
        for tensor in self.map.values() {
            tensor.clear_grad();
        }
    }
}

/// Expected (name, shape) table for a configuration, in sorted name order.
/// This is the census a checkpoint must match to load.
pub fn param_shapes(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
    config.validate()?;
    let wf = config.width_factor;
    let geom = Geometry::plan(config.crop_size)?;
    let hidden = config.scaled_hidden();
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();

    let mut in_c = 3usize;
    for (i, layer) in alexnet_layers(wf).iter().enumerate() {
        shapes.push((
            format!("alexnet.conv{}.weight", i + 1),
            vec![layer.out_channels, in_c, layer.kernel, layer.kernel],
        ));
        shapes.push((
            format!("alexnet.conv{}.bias", i + 1),
            vec![layer.out_channels],
        ));
        in_c = layer.out_channels;
    }
    let alexnet_out = in_c;

    let conv1 = squeezenet_conv1(wf);
    shapes.push((
        "squeezenet.conv1.weight".into(),
        vec![conv1.out_channels, 3, conv1.kernel, conv1.kernel],
    ));
    shapes.push(("squeezenet.conv1.bias".into(), vec![conv1.out_channels]));
    let mut in_c = conv1.out_channels;
    for (i, fire) in fire_specs(wf).iter().enumerate() {
        let prefix = format!("squeezenet.fire{}", i + 2);
        shapes.push((
            format!("{prefix}.squeeze.weight"),
            vec![fire.squeeze_channels, in_c, 1, 1],
        ));
        shapes.push((
            format!("{prefix}.squeeze.bias"),
            vec![fire.squeeze_channels],
        ));
        shapes.push((
            format!("{prefix}.expand1x1.weight"),
            vec![fire.expand1x1_channels, fire.squeeze_channels, 1, 1],
        ));
        shapes.push((
            format!("{prefix}.expand1x1.bias"),
            vec![fire.expand1x1_channels],
        ));
        shapes.push((
            format!("{prefix}.expand3x3.weight"),
            vec![fire.expand3x3_channels, fire.squeeze_channels, 3, 3],
        ));
        shapes.push((
            format!("{prefix}.expand3x3.bias"),
            vec![fire.expand3x3_channels],
        ));
        in_c = fire.out_channels();
    }
    let squeezenet_out = in_c;

    let s = geom.state_extent;
    for (prefix, input_c) in [("convlstm_a", alexnet_out), ("convlstm_s", squeezenet_out)] {
        for name in CONVLSTM_PARAM_NAMES {
            let shape = match name {
                "w_xi" | "w_xf" | "w_xc" | "w_xo" => vec![hidden, input_c, 3, 3],
                "w_hi" | "w_hf" | "w_hc" | "w_ho" => vec![hidden, hidden, 3, 3],
                "w_ci" | "w_cf" | "w_co" => vec![hidden, s, s],
                _ => vec![hidden],
            };
            shapes.push((format!("{prefix}.{name}"), shape));
        }
    }

    let fused_channels = 2 * hidden;
    let head_in = geom.head_input_len(fused_channels);
    shapes.push(("head.fc1.weight".into(), vec![config.fc1_width, head_in]));
    shapes.push(("head.fc1.bias".into(), vec![config.fc1_width]));
    shapes.push((
        "head.fc2.weight".into(),
        vec![config.num_classes, config.fc1_width],
    ));
    shapes.push(("head.fc2.bias".into(), vec![config.num_classes]));

    shapes.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(shapes)
}

/// How a parameter tensor is filled at build time.
enum Init {
    /// He/Kaiming normal with the given fan-in.
    HeFanIn(usize),
    /// Uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual bias
    /// initialization for relu-followed layers. A nonzero bias keeps a
    /// starved channel's pre-activation away from the exact relu kink, which
    /// matters at small width factors where whole squeeze layers can
    /// otherwise die to zero.
    UniformFanIn(usize),
    Constant(f64),
}

/// Fan-in of the weight tensor a bias belongs to.
fn sibling_fan_in(name: &str, shapes: &[(String, Vec<usize>)]) -> usize {
    let weight_name = format!("{}.weight", name.trim_end_matches(".bias"));
    shapes
        .iter()
        .find(|(n, _)| n == &weight_name)
        .map(|(_, s)| s[1..].iter().product())
        .unwrap_or(1)
}

fn init_for(name: &str, shape: &[usize], shapes: &[(String, Vec<usize>)]) -> Init {
    if name.ends_with(".bias") {
        return Init::UniformFanIn(sibling_fan_in(name, shapes));
    }
    match name.rsplit('.').next().unwrap_or("") {
        // Peepholes start at zero; the forget bias starts open.
        "w_ci" | "w_cf" | "w_co" => Init::Constant(0.0),
        "b_f" => Init::Constant(1.0),
        "b_i" | "b_c" | "b_o" => Init::Constant(0.0),
        // Conv / linear weights and ConvLSTM gate kernels.
        _ => Init::HeFanIn(shape[1..].iter().product()),
    }
}

/// Deterministic parameter creation: the same (config, seed) pair always
/// yields bitwise-identical tensors. Each tensor draws from its own stream
/// seeded by the run seed and the tensor name.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    let shapes = param_shapes(config)?;
    let mut params = ModelParams::empty();
    for (name, shape) in &shapes {
        let numel: usize = shape.iter().product();
        let data: Vec<T> = match init_for(name, shape, &shapes) {
            Init::Constant(v) => vec![T::from_f64(v); numel],
            Init::HeFanIn(fan_in) => {
                let std = (2.0 / fan_in as f64).sqrt();
                let mut rng = Rng::new(derive_seed(seed, hash_str(name)));
                (0..numel)
                    .map(|_| T::from_f64(std * rng.normal()))
                    .collect()
            }
            Init::UniformFanIn(fan_in) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut rng = Rng::new(derive_seed(seed, hash_str(name)));
                (0..numel)
                    .map(|_| T::from_f64(rng.uniform(-bound, bound)))
                    .collect()
            }
        };
        params.insert(name, Tensor::param(data, shape)?)?;
    }
    Ok(params)
}

/// Everything a forward pass produces, for tests that inspect the fusion
/// layout or the stream states.
pub struct ForwardArtifacts<T: Scalar> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub state_a: ConvLstmState<T>,
    pub state_s: ConvLstmState<T>,
    pub fused: Tensor<T>,
}

/// Run the whole network over one clip of `sequence_length` preprocessed
/// frames: per-frame backbones, per-stream ConvLSTM unrolls, state fusion,
/// pooling and the classifier head.
pub fn model_forward<T: Scalar>(
    tape: &Tape<T>,
    clip: &[Tensor<T>],
    params: &ModelParams<T>,
    config: &ModelConfig,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let art = forward_inner(tape, clip, params, config, None)?;
    Ok((art.logits, art.probs))
}

pub fn model_forward_full<T: Scalar>(
    tape: &Tape<T>,
    clip: &[Tensor<T>],
    params: &ModelParams<T>,
    config: &ModelConfig,
) -> Result<ForwardArtifacts<T>> {
    forward_inner(tape, clip, params, config, None)
}

pub fn model_forward_traced<T: Scalar>(
    tape: &Tape<T>,
    clip: &[Tensor<T>],
    params: &ModelParams<T>,
    config: &ModelConfig,
    trace: &mut ShapeTrace,
) -> Result<ForwardArtifacts<T>> {
    forward_inner(tape, clip, params, config, Some(trace))
}

fn forward_inner<T: Scalar>(
    tape: &Tape<T>,
    clip: &[Tensor<T>],
    params: &ModelParams<T>,
    config: &ModelConfig,
    mut trace: Option<&mut ShapeTrace>,
) -> Result<ForwardArtifacts<T>> {
    if clip.len() != config.sequence_length {
        return Err(Error::InvalidArgument(format!(
            "expected {} frames per clip, got {}",
            config.sequence_length,
            clip.len()
        )));
    }
    let geom = Geometry::plan(config.crop_size)?;

    let mut feats_a = Vec::with_capacity(clip.len());
    let mut feats_s = Vec::with_capacity(clip.len());
    for (i, frame) in clip.iter().enumerate() {
        // Trace the first frame only; the chain is identical for the rest.
        let mut frame_trace = if i == 0 { trace.as_deref_mut() } else { None };
        let a = match frame_trace.as_deref_mut() {
            Some(t) => alexnet_lite_forward_traced(tape, frame, params, &geom, t)?,
            None => crate::backbones::alexnet_lite_forward(tape, frame, params, &geom)?,
        };
        let s_raw = match frame_trace.as_deref_mut() {
            Some(t) => squeezenet_lite_forward_traced(tape, frame, params, &geom, t)?,
            None => crate::backbones::squeezenet_lite_forward(tape, frame, params, &geom)?,
        };
        let s = match geom.bridge {
            Bridge::None => s_raw,
            Bridge::MaxPool3x2 => tape.maxpool2d(&s_raw, 3, 2, false)?,
            Bridge::Adaptive(t) => tape.adaptive_avgpool2d(&s_raw, t, t)?,
        };
        if let Some(t) = frame_trace {
            t.0.push(("squeezenet.bridged".to_string(), s.shape().to_vec()));
        }
        feats_a.push(a);
        feats_s.push(s);
    }

    let hidden = config.scaled_hidden();
    let cell_a = ConvLstmParams::from_registry(params, "convlstm_a")?;
    let cell_s = ConvLstmParams::from_registry(params, "convlstm_s")?;
    let init_a = ConvLstmState::zeros(hidden, geom.state_extent, geom.state_extent)?;
    let init_s = ConvLstmState::zeros(hidden, geom.state_extent, geom.state_extent)?;
    let state_a = convlstm_unroll(tape, &feats_a, &cell_a, init_a)?;
    let state_s = convlstm_unroll(tape, &feats_s, &cell_s, init_s)?;
    if let Some(t) = trace.as_deref_mut() {
        t.0.push(("convlstm_a.h".to_string(), state_a.h.shape().to_vec()));
        t.0.push(("convlstm_s.h".to_string(), state_s.h.shape().to_vec()));
    }

    // Channel layout is fixed: AlexNet-stream state first, SqueezeNet's after.
    let fused = tape.concat_channels(&state_a.h, &state_s.h)?;
    if let Some(t) = trace.as_deref_mut() {
        t.0.push(("fusion".to_string(), fused.shape().to_vec()));
    }
    let pooled = if geom.fused_pool {
        tape.maxpool2d(&fused, 2, 2, false)?
    } else {
        fused.clone()
    };
    if let Some(t) = trace {
        t.0.push(("fusion.pooled".to_string(), pooled.shape().to_vec()));
    }

    let flat = tape.flatten(&pooled);
    let fc1 = tape.linear(
        &flat,
        params.get("head.fc1.weight")?,
        params.get("head.fc1.bias")?,
    )?;
    let fc1 = tape.relu(&fc1);
    let logits = tape.linear(
        &fc1,
        params.get("head.fc2.weight")?,
        params.get("head.fc2.bias")?,
    )?;
    let probs = tape.softmax(&logits)?;
    Ok(ForwardArtifacts {
        logits,
        probs,
        state_a,
        state_s,
        fused,
    })
}

const CHECKPOINT_MAGIC: &[u8; 5] = b"VDCP1";
const OPTIM_PREFIX: &str = "optim.v.";

/// Write parameters (and, optionally, the optimizer's square-gradient
/// accumulators) to `path`. Layout: magic `VDCP1`, u64 entry count, then per
/// entry a u64 name length, the UTF-8 name, a u64 rank, u64 dims and raw
/// little-endian f32 data. The round trip is bitwise exact.
pub fn save_checkpoint(
    params: &ModelParams<f32>,
    optimizer_state: Option<&BTreeMap<String, Vec<f32>>>,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    let opt_entries: Vec<(String, Vec<usize>, &[f32])> = match optimizer_state {
        Some(state) => state
            .iter()
            .map(|(name, v)| (format!("{OPTIM_PREFIX}{name}"), vec![v.len()], v.as_slice()))
            .collect(),
        None => Vec::new(),
    };
    let total = params.len() + opt_entries.len();

    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&(total as u64).to_le_bytes()).map_err(io_err)?;

    let mut write_entry = |name: &str, shape: &[usize], data: &[f32]| -> Result<()> {
        w.write_all(&(name.len() as u64).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&(shape.len() as u64).to_le_bytes())
            .map_err(io_err)?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
        }
        for &v in data {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
        Ok(())
    };

    for (name, tensor) in params.iter() {
        write_entry(name, tensor.shape(), tensor.data())?;
    }
    for (name, shape, data) in opt_entries {
        write_entry(&name, &shape, data)?;
    }
    Ok(())
}

/// Optimizer square-gradient accumulators keyed by parameter name.
pub type OptimAccumulators = BTreeMap<String, Vec<f32>>;

/// Read a checkpoint back. Corrupt headers and truncated entries are rejected
/// with the offending entry named.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams<f32>, Option<OptimAccumulators>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 5];
    read_exact_ctx(&mut r, &mut magic, "header magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(CHECKPOINT_MAGIC)
        )));
    }
    let count = read_u64_ctx(&mut r, "entry count")? as usize;
    if count > 1_000_000 {
        return Err(Error::Checkpoint(format!(
            "implausible entry count {count}"
        )));
    }

    let mut params = ModelParams::empty();
    let mut optim: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    for index in 0..count {
        let ctx = format!("entry {index} name");
        let name_len = read_u64_ctx(&mut r, &ctx)? as usize;
        if name_len > 4096 {
            return Err(Error::Checkpoint(format!(
                "entry {index}: implausible name length {name_len}"
            )));
        }
        let mut name_bytes = vec![0u8; name_len];
        read_exact_ctx(&mut r, &mut name_bytes, &ctx)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint(format!("entry {index}: name is not UTF-8")))?;

        let rank = read_u64_ctx(&mut r, &format!("`{name}` rank"))? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!(
                "`{name}`: implausible rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = read_u64_ctx(&mut r, &format!("`{name}` dims"))? as usize;
            numel = numel.saturating_mul(d);
            shape.push(d);
        }
        if numel > 256_000_000 {
            return Err(Error::Checkpoint(format!(
                "`{name}`: implausible element count {numel}"
            )));
        }
        let mut raw = vec![0u8; numel * 4];
        read_exact_ctx(&mut r, &mut raw, &format!("`{name}` data"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();

        if let Some(param_name) = name.strip_prefix(OPTIM_PREFIX) {
            if optim.insert(param_name.to_string(), data).is_some() {
                return Err(Error::Checkpoint(format!("duplicate entry `{name}`")));
            }
        } else {
            params
                .insert(&name, Tensor::param(data, &shape)?)
                .map_err(|_| Error::Checkpoint(format!("duplicate entry `{name}`")))?;
        }
    }
    let optim = if optim.is_empty() { None } else { Some(optim) };
    Ok((params, optim))
}

fn read_exact_ctx(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))
}

fn read_u64_ctx(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_ctx(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

/// Verify loaded parameters against the census a configuration implies;
/// every missing, extra or reshaped entry is named.
pub fn validate_checkpoint(params: &ModelParams<f32>, config: &ModelConfig) -> Result<()> {
    let expected = param_shapes(config)?;
    for (name, shape) in &expected {
        match params.get(name) {
            Ok(t) if t.shape() == shape.as_slice() => {}
            Ok(t) => {
                return Err(Error::Checkpoint(format!(
                    "`{name}`: checkpoint shape {:?} does not match configured shape {:?}",
                    t.shape(),
                    shape
                )))
            }
            Err(_) => {
                return Err(Error::Checkpoint(format!(
                    "`{name}` expected by the configuration but missing from the checkpoint"
                )))
            }
        }
    }
    if params.len() != expected.len() {
        let expected_names: std::collections::BTreeSet<&str> =
            expected.iter().map(|(n, _)| n.as_str()).collect();
        for (name, _) in params.iter() {
            if !expected_names.contains(name.as_str()) {
                return Err(Error::Checkpoint(format!(
                    "`{name}` present in the checkpoint but not part of the configured model"
                )));
            }
        }
    }
    Ok(())
}

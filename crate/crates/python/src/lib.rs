//! Python bindings: tensors with the core differentiable ops (run in
//! inference mode), the two-stream model, and the preprocessing helpers.
//!
//! Build with `cargo build -p viofuse-py --release`, then import the cdylib
//! as `viofuse_py` (see python/smoke_test.py).

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use viofuse::model::{
    build_model, load_checkpoint, model_forward, save_checkpoint, validate_checkpoint, ModelConfig,
    ModelParams,
};
use viofuse::synth::{generate_dataset, SynthConfig};
use viofuse::trainer::argmax_label;
use viofuse::video::{self, PipelineConfig, RawFrame};
use viofuse::Tape;

fn vf_err(e: viofuse::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Dense f32 tensor, row-major.
#[pyclass(name = "Tensor", unsendable, from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: viofuse::Tensor<f32>,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(data: Vec<f32>, shape: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: viofuse::Tensor::new(data, &shape).map_err(vf_err)?,
        })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn numel(&self) -> usize {
        self.inner.numel()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

#[pyfunction]
#[pyo3(signature = (input, weight, bias=None, stride=1, padding=0))]
fn conv2d(
    input: &PyTensor,
    weight: &PyTensor,
    bias: Option<&PyTensor>,
    stride: usize,
    padding: usize,
) -> PyResult<PyTensor> {
    let tape = Tape::inference();
    let out = tape
        .conv2d(
            &input.inner,
            &weight.inner,
            bias.map(|b| &b.inner),
            stride,
            padding,
        )
        .map_err(vf_err)?;
    Ok(PyTensor { inner: out })
}

#[pyfunction]
#[pyo3(signature = (input, kernel, stride, ceil_mode=false))]
fn maxpool2d(
    input: &PyTensor,
    kernel: usize,
    stride: usize,
    ceil_mode: bool,
) -> PyResult<PyTensor> {
    let tape = Tape::inference();
    Ok(PyTensor {
        inner: tape
            .maxpool2d(&input.inner, kernel, stride, ceil_mode)
            .map_err(vf_err)?,
    })
}

#[pyfunction]
fn adaptive_avgpool2d(input: &PyTensor, target_h: usize, target_w: usize) -> PyResult<PyTensor> {
    let tape = Tape::inference();
    Ok(PyTensor {
        inner: tape
            .adaptive_avgpool2d(&input.inner, target_h, target_w)
            .map_err(vf_err)?,
    })
}

#[pyfunction]
fn sigmoid(input: &PyTensor) -> PyTensor {
    let tape = Tape::inference();
    PyTensor {
        inner: tape.sigmoid(&input.inner),
    }
}

#[pyfunction]
fn tanh(input: &PyTensor) -> PyTensor {
    let tape = Tape::inference();
    PyTensor {
        inner: tape.tanh(&input.inner),
    }
}

#[pyfunction]
fn relu(input: &PyTensor) -> PyTensor {
    let tape = Tape::inference();
    PyTensor {
        inner: tape.relu(&input.inner),
    }
}

#[pyfunction]
fn softmax(input: &PyTensor) -> PyResult<PyTensor> {
    let tape = Tape::inference();
    Ok(PyTensor {
        inner: tape.softmax(&input.inner).map_err(vf_err)?,
    })
}

#[pyfunction]
fn concat_channels(a: &PyTensor, b: &PyTensor) -> PyResult<PyTensor> {
    let tape = Tape::inference();
    Ok(PyTensor {
        inner: tape.concat_channels(&a.inner, &b.inner).map_err(vf_err)?,
    })
}

#[pyfunction]
fn linear(input: &PyTensor, weight: &PyTensor, bias: &PyTensor) -> PyResult<PyTensor> {
    let tape = Tape::inference();
    Ok(PyTensor {
        inner: tape
            .linear(&input.inner, &weight.inner, &bias.inner)
            .map_err(vf_err)?,
    })
}

/// Keyframe selection over raw RGB frames given as bytes.
#[pyfunction]
fn select_keyframe_indices(
    frames: Vec<Vec<u8>>,
    width: usize,
    height: usize,
    threshold: usize,
) -> PyResult<Vec<usize>> {
    let frames: Vec<RawFrame> = frames
        .into_iter()
        .map(|pixels| RawFrame::new(width, height, pixels))
        .collect::<viofuse::Result<_>>()
        .map_err(vf_err)?;
    video::select_keyframe_indices(&frames, threshold).map_err(vf_err)
}

#[pyfunction]
fn sample_indices(n: usize, s: usize) -> Vec<usize> {
    video::sample_indices(n, s)
}

/// Per-channel standardization of one RGB frame into a [3, H, W] tensor.
#[pyfunction]
fn normalize_frame(pixels: Vec<u8>, width: usize, height: usize) -> PyResult<PyTensor> {
    let frame = RawFrame::new(width, height, pixels).map_err(vf_err)?;
    Ok(PyTensor {
        inner: video::normalize_frame(&frame),
    })
}

/// Write a balanced synthetic dataset of PPM clips plus a manifest.
#[pyfunction]
#[pyo3(signature = (out_dir, n_clips, seed, frame_size=40, frames_per_clip=24))]
fn synth_dataset(
    out_dir: PathBuf,
    n_clips: usize,
    seed: u64,
    frame_size: usize,
    frames_per_clip: usize,
) -> PyResult<String> {
    let cfg = SynthConfig {
        frame_size,
        frames_per_clip,
    };
    let clips = generate_dataset(n_clips, &cfg, seed).map_err(vf_err)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| vf_err(viofuse::Error::io(&out_dir, e)))?;
    let mut manifest = String::new();
    for (i, clip) in clips.iter().enumerate() {
        let slug = format!("clip_{i:04}_{}", clip.label.as_str());
        let dir = out_dir.join(&slug);
        std::fs::create_dir_all(&dir).map_err(|e| vf_err(viofuse::Error::io(&dir, e)))?;
        for (j, frame) in clip.frames.iter().enumerate() {
            video::ppm::write_ppm(&dir.join(format!("frame_{j:03}.ppm")), frame).map_err(vf_err)?;
        }
        manifest.push_str(&format!("{slug}\t{}\n", clip.label));
    }
    let manifest_path = out_dir.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest)
        .map_err(|e| vf_err(viofuse::Error::io(&manifest_path, e)))?;
    Ok(manifest_path.display().to_string())
}

/// The two-stream fusion model with its configuration.
#[pyclass(name = "Model", unsendable)]
struct PyModel {
    params: ModelParams<f32>,
    config: ModelConfig,
}

fn make_config(
    width_factor: f64,
    sequence_length: usize,
    hidden_channels: usize,
    fc1_width: usize,
    crop_size: usize,
) -> ModelConfig {
    ModelConfig {
        width_factor,
        sequence_length,
        hidden_channels,
        fc1_width,
        num_classes: 2,
        crop_size,
    }
}

#[pymethods]
impl PyModel {
    /// Deterministic construction from a seed.
    #[staticmethod]
    #[pyo3(signature = (seed, width_factor=1.0, sequence_length=20, hidden_channels=256, fc1_width=1000, crop_size=224))]
    fn build(
        seed: u64,
        width_factor: f64,
        sequence_length: usize,
        hidden_channels: usize,
        fc1_width: usize,
        crop_size: usize,
    ) -> PyResult<Self> {
        let config = make_config(
            width_factor,
            sequence_length,
            hidden_channels,
            fc1_width,
            crop_size,
        );
        let params = build_model::<f32>(&config, seed).map_err(vf_err)?;
        Ok(PyModel { params, config })
    }

    /// Load a checkpoint and verify it against the given configuration.
    #[staticmethod]
    #[pyo3(signature = (path, width_factor=1.0, sequence_length=20, hidden_channels=256, fc1_width=1000, crop_size=224))]
    fn load(
        path: PathBuf,
        width_factor: f64,
        sequence_length: usize,
        hidden_channels: usize,
        fc1_width: usize,
        crop_size: usize,
    ) -> PyResult<Self> {
        let config = make_config(
            width_factor,
            sequence_length,
            hidden_channels,
            fc1_width,
            crop_size,
        );
        let (params, _) = load_checkpoint(&path).map_err(vf_err)?;
        validate_checkpoint(&params, &config).map_err(vf_err)?;
        Ok(PyModel { params, config })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.params, None, &path).map_err(vf_err)
    }

    fn param_count(&self) -> usize {
        self.params.total_len()
    }

    fn census(&self) -> Vec<(String, Vec<usize>)> {
        self.params.census()
    }

    /// Forward one clip of `sequence_length` frames, each a [3, crop, crop]
    /// tensor. Returns (logits, probabilities).
    fn forward(&self, clip: Vec<PyTensor>) -> PyResult<(Vec<f32>, Vec<f32>)> {
        let frames: Vec<viofuse::Tensor<f32>> = clip.into_iter().map(|t| t.inner).collect();
        let tape = Tape::inference();
        let (logits, probs) =
            model_forward(&tape, &frames, &self.params, &self.config).map_err(vf_err)?;
        Ok((logits.data().to_vec(), probs.data().to_vec()))
    }

    /// Classify a directory of PPM frames. Returns
    /// (label, p_violence, p_nonviolence).
    #[pyo3(signature = (clip_dir, keyframe_threshold=None))]
    fn predict_dir(
        &self,
        clip_dir: PathBuf,
        keyframe_threshold: Option<usize>,
    ) -> PyResult<(String, f32, f32)> {
        let frames = video::load_clip_frames(&clip_dir, self.config.crop_size).map_err(vf_err)?;
        let pipeline = PipelineConfig {
            crop_size: self.config.crop_size,
            sequence_length: self.config.sequence_length,
            keyframe_threshold,
        };
        let prepared = video::prepare_frames_eval(&frames, &pipeline).map_err(vf_err)?;
        let tape = Tape::inference();
        let (_, probs) =
            model_forward(&tape, &prepared, &self.params, &self.config).map_err(vf_err)?;
        let p = probs.data();
        let label = argmax_label(p);
        Ok((label.to_string(), p[0], p[1]))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(width_factor={}, crop={}, params={})",
            self.config.width_factor,
            self.config.crop_size,
            self.params.total_len()
        )
    }
}

#[pymodule]
fn viofuse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(maxpool2d, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_avgpool2d, m)?)?;
    m.add_function(wrap_pyfunction!(sigmoid, m)?)?;
    m.add_function(wrap_pyfunction!(tanh, m)?)?;
    m.add_function(wrap_pyfunction!(relu, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(concat_channels, m)?)?;
    m.add_function(wrap_pyfunction!(linear, m)?)?;
    m.add_function(wrap_pyfunction!(select_keyframe_indices, m)?)?;
    m.add_function(wrap_pyfunction!(sample_indices, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_frame, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    Ok(())
}

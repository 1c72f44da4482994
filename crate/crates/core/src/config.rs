//! Run configuration: defaults, the flat key=value config-file format, and
//! per-field overrides.
//!
//! Every knob lives in one table so `--help`, file parsing and `--set`
//! overrides cannot drift apart. Validation collects every bad field before
//! failing.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::OptimizerConfig;
use crate::video::PipelineConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub width_factor: f64,
    pub sequence_length: usize,
    pub hidden_channels: usize,
    pub fc1_width: usize,
    pub num_classes: usize,
    pub crop_size: usize,

    pub learning_rate: f64,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_period: usize,

    /// None = automatic threshold (1% of the frame's pixel bytes).
    pub keyframe_threshold: Option<usize>,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub seed: u64,

    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub out: PathBuf,

    pub synth_clips: usize,
    pub synth_frame_size: usize,
    pub synth_frames_per_clip: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            width_factor: 1.0,
            sequence_length: 20,
            hidden_channels: 256,
            fc1_width: 1000,
            num_classes: 2,
            crop_size: 224,
            learning_rate: 1e-4,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 1e-8,
            weight_decay: 0.05,
            batch_size: 8,
            epochs: 40,
            validation_period: 5,
            keyframe_threshold: None,
            train_ratio: 0.6,
            val_ratio: 0.2,
            test_ratio: 0.2,
            seed: 0,
            manifest: PathBuf::new(),
            checkpoint: PathBuf::new(),
            out: PathBuf::from("out"),
            synth_clips: 16,
            synth_frame_size: 40,
            synth_frames_per_clip: 24,
        }
    }
}

/// One row of the config surface, for help text.
pub struct FieldHelp {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const FIELDS: &[FieldHelp] = &[
    FieldHelp {
        key: "width_factor",
        default: "1.0",
        help: "channel multiplier in (0, 1]; 1.0 is the full architecture",
    },
    FieldHelp {
        key: "sequence_length",
        default: "20",
        help: "frames per clip fed to the ConvLSTMs",
    },
    FieldHelp {
        key: "hidden_channels",
        default: "256",
        help: "ConvLSTM hidden width before scaling",
    },
    FieldHelp {
        key: "fc1_width",
        default: "1000",
        help: "width of the first fully connected layer",
    },
    FieldHelp {
        key: "num_classes",
        default: "2",
        help: "fixed two-class output",
    },
    FieldHelp {
        key: "crop_size",
        default: "224",
        help: "square crop fed to the backbones",
    },
    FieldHelp {
        key: "learning_rate",
        default: "0.0001",
        help: "RMSprop learning rate",
    },
    FieldHelp {
        key: "rmsprop_alpha",
        default: "0.99",
        help: "RMSprop square-gradient decay",
    },
    FieldHelp {
        key: "rmsprop_eps",
        default: "0.00000001",
        help: "RMSprop denominator stabilizer",
    },
    FieldHelp {
        key: "weight_decay",
        default: "0.05",
        help: "coupled L2 weight decay",
    },
    FieldHelp {
        key: "batch_size",
        default: "8",
        help: "clips per optimizer step",
    },
    FieldHelp {
        key: "epochs",
        default: "40",
        help: "training epochs",
    },
    FieldHelp {
        key: "validation_period",
        default: "5",
        help: "epochs between hold-out validations",
    },
    FieldHelp {
        key: "keyframe_threshold",
        default: "auto",
        help: "nonzero-diff count threshold; auto = 1% of frame bytes",
    },
    FieldHelp {
        key: "train_ratio",
        default: "0.6",
        help: "training share of the auto split",
    },
    FieldHelp {
        key: "val_ratio",
        default: "0.2",
        help: "validation share of the auto split",
    },
    FieldHelp {
        key: "test_ratio",
        default: "0.2",
        help: "test share of the auto split",
    },
    FieldHelp {
        key: "seed",
        default: "0",
        help: "master seed; every random draw derives from it",
    },
    FieldHelp {
        key: "manifest",
        default: "",
        help: "dataset manifest path",
    },
    FieldHelp {
        key: "checkpoint",
        default: "",
        help: "checkpoint path for eval/predict",
    },
    FieldHelp {
        key: "out",
        default: "out",
        help: "output directory",
    },
    FieldHelp {
        key: "synth_clips",
        default: "16",
        help: "clips generated by synth (must be even)",
    },
    FieldHelp {
        key: "synth_frame_size",
        default: "40",
        help: "square frame side of synthetic clips",
    },
    FieldHelp {
        key: "synth_frames_per_clip",
        default: "24",
        help: "frames per synthetic clip",
    },
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| format!("{key}: cannot parse `{value}`"))
}

impl RunConfig {
    /// Apply one `key=value` assignment. Unknown keys are rejected.
    pub fn set_field(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "width_factor" => self.width_factor = parse_num(key, value)?,
            "sequence_length" => self.sequence_length = parse_num(key, value)?,
            "hidden_channels" => self.hidden_channels = parse_num(key, value)?,
            "fc1_width" => self.fc1_width = parse_num(key, value)?,
            "num_classes" => self.num_classes = parse_num(key, value)?,
            "crop_size" => self.crop_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "rmsprop_alpha" => self.rmsprop_alpha = parse_num(key, value)?,
            "rmsprop_eps" => self.rmsprop_eps = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "validation_period" => self.validation_period = parse_num(key, value)?,
            "keyframe_threshold" => {
                self.keyframe_threshold = if value.trim() == "auto" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "train_ratio" => self.train_ratio = parse_num(key, value)?,
            "val_ratio" => self.val_ratio = parse_num(key, value)?,
            "test_ratio" => self.test_ratio = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "manifest" => self.manifest = PathBuf::from(value.trim()),
            "checkpoint" => self.checkpoint = PathBuf::from(value.trim()),
            "out" => self.out = PathBuf::from(value.trim()),
            "synth_clips" => self.synth_clips = parse_num(key, value)?,
            "synth_frame_size" => self.synth_frame_size = parse_num(key, value)?,
            "synth_frames_per_clip" => self.synth_frames_per_clip = parse_num(key, value)?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    /// Parse a flat `key=value` config file with `#` comments. Every bad line
    /// is reported, not just the first.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut issues = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((key, value)) => {
                    if let Err(msg) = self.set_field(key.trim(), value) {
                        issues.push(format!("{}:{}: {msg}", path.display(), i + 1));
                    }
                }
                None => issues.push(format!(
                    "{}:{}: expected key=value, got `{line}`",
                    path.display(),
                    i + 1
                )),
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    /// Validate every field, reporting all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if let Err(Error::Config(model_issues)) = self.model_config().validate() {
            issues.extend(model_issues);
        }
        if self.learning_rate < 0.0 {
            issues.push(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.rmsprop_alpha) {
            issues.push(format!(
                "rmsprop_alpha must be in [0, 1), got {}",
                self.rmsprop_alpha
            ));
        }
        if self.rmsprop_eps <= 0.0 {
            issues.push(format!("rmsprop_eps must be > 0, got {}", self.rmsprop_eps));
        }
        if self.weight_decay < 0.0 {
            issues.push(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == 0 {
            issues.push("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            issues.push("epochs must be >= 1".into());
        }
        if self.validation_period == 0 {
            issues.push("validation_period must be >= 1".into());
        }
        let ratio_sum = self.train_ratio + self.val_ratio + self.test_ratio;
        if self.train_ratio < 0.0
            || self.val_ratio < 0.0
            || self.test_ratio < 0.0
            || (ratio_sum - 1.0).abs() > 1e-9
        {
            issues.push(format!(
                "split ratios must be nonnegative and sum to 1, got {} + {} + {}",
                self.train_ratio, self.val_ratio, self.test_ratio
            ));
        }
        if self.synth_clips == 0 || !self.synth_clips.is_multiple_of(2) {
            issues.push(format!(
                "synth_clips must be even and positive, got {}",
                self.synth_clips
            ));
        }
        // synth_frame_size may sit below crop_size: ingestion upscales
        // undersized frames, so the crop precondition still holds.
        if self.synth_frame_size == 0 {
            issues.push("synth_frame_size must be >= 1".into());
        }
        if self.synth_frames_per_clip == 0 {
            issues.push("synth_frames_per_clip must be >= 1".into());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            width_factor: self.width_factor,
            sequence_length: self.sequence_length,
            hidden_channels: self.hidden_channels,
            fc1_width: self.fc1_width,
            num_classes: self.num_classes,
            crop_size: self.crop_size,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            crop_size: self.crop_size,
            sequence_length: self.sequence_length,
            keyframe_threshold: self.keyframe_threshold,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            alpha: self.rmsprop_alpha,
            eps: self.rmsprop_eps,
            weight_decay: self.weight_decay,
        }
    }
}

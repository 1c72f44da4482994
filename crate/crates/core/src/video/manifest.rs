//! Dataset manifests and the stratified train/validation/test split.
//!
//! A manifest is UTF-8 text, one record per line:
//! `<clip_dir>\t<label>\t[train|val|test|auto]` with the split column
//! optional. Labels are `violence` or `non-violence`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

/// The two-class label set. Violence is class index 0; argmax ties at
/// evaluation resolve toward the lower index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Violence,
    NonViolence,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Violence => 0,
            Label::NonViolence => 1,
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(Label::Violence),
            1 => Ok(Label::NonViolence),
            other => Err(Error::InvalidArgument(format!(
                "class index {other} out of range"
            ))),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "violence" => Ok(Label::Violence),
            "non-violence" => Ok(Label::NonViolence),
            other => Err(Error::InvalidArgument(format!(
                "unknown label `{other}` (expected `violence` or `non-violence`)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Violence => "violence",
            Label::NonViolence => "non-violence",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Requested split assignment for a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSpec {
    Train,
    Val,
    Test,
    /// Participates in the seeded stratified split.
    Auto,
}

impl SplitSpec {
    fn parse(text: &str) -> Result<Self> {
        match text {
            "train" => Ok(SplitSpec::Train),
            "val" => Ok(SplitSpec::Val),
            "test" => Ok(SplitSpec::Test),
            "auto" => Ok(SplitSpec::Auto),
            other => Err(Error::InvalidArgument(format!(
                "unknown split `{other}` (expected train, val, test or auto)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestRecord {
    pub dir: PathBuf,
    pub label: Label,
    pub split: SplitSpec,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

/// Parse a manifest file. Every malformed record is rejected with its line
/// number; clip paths must be unique. Relative clip paths resolve against
/// the manifest's own directory, so generated datasets stay relocatable.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = parse_manifest(&text)?;
    if let Some(base) = path.parent() {
        for rec in &mut manifest.records {
            if rec.dir.is_relative() {
                rec.dir = base.join(&rec.dir);
            }
        }
    }
    Ok(manifest)
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut records = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Manifest {
                line: line_no,
                message: format!(
                    "expected `<clip_dir>\\t<label>\\t[split]`, got {} fields",
                    fields.len()
                ),
            });
        }
        let dir = PathBuf::from(fields[0]);
        if fields[0].is_empty() {
            return Err(Error::Manifest {
                line: line_no,
                message: "empty clip path".into(),
            });
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::Manifest {
                line: line_no,
                message: format!("duplicate clip path `{}`", fields[0]),
            });
        }
        let label = Label::parse(fields[1].trim()).map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        let split = match fields.get(2) {
            Some(s) => SplitSpec::parse(s.trim()).map_err(|e| Error::Manifest {
                line: line_no,
                message: e.to_string(),
            })?,
            None => SplitSpec::Auto,
        };
        records.push(ManifestRecord { dir, label, split });
    }
    Ok(Manifest { records })
}

/// The three split lists in (train, val, test) order. Explicit assignments
/// are honored; `auto` records are partitioned per label with floor-rounded
/// validation and test counts, remainders going to training. The partition
/// is a deterministic function of the seed.
pub fn split_dataset(
    manifest: &Manifest,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(
    Vec<ManifestRecord>,
    Vec<ManifestRecord>,
    Vec<ManifestRecord>,
)> {
    let (r_train, r_val, r_test) = ratios;
    if r_train < 0.0 || r_val < 0.0 || r_test < 0.0 || (r_train + r_val + r_test - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be nonnegative and sum to 1, got ({r_train}, {r_val}, {r_test})"
        )));
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for label_idx in 0..2 {
        let label = Label::from_index(label_idx)?;
        let mut auto: Vec<&ManifestRecord> = Vec::new();
        for rec in manifest.records.iter().filter(|r| r.label == label) {
            match rec.split {
                SplitSpec::Train => train.push(rec.clone()),
                SplitSpec::Val => val.push(rec.clone()),
                SplitSpec::Test => test.push(rec.clone()),
                SplitSpec::Auto => auto.push(rec),
            }
        }
        let mut order: Vec<usize> = (0..auto.len()).collect();
        Rng::new(derive_seed(seed, label_idx as u64)).shuffle(&mut order);
        let n = auto.len();
        let n_val = (r_val * n as f64).floor() as usize;
        let n_test = (r_test * n as f64).floor() as usize;
        for (pos, &idx) in order.iter().enumerate() {
            let rec = auto[idx].clone();
            if pos < n_val {
                val.push(rec);
            } else if pos < n_val + n_test {
                test.push(rec);
            } else {
                train.push(rec);
            }
        }
    }
    Ok((train, val, test))
}

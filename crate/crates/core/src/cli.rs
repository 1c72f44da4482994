//! Command-line surface: `preprocess`, `train`, `eval`, `predict`, `synth`.

use std::path::{Path, PathBuf};

use crate::config::{RunConfig, FIELDS};
use crate::error::{Error, Result};
use crate::model::{build_model, load_checkpoint, validate_checkpoint};
use crate::synth::{generate_dataset, SynthConfig};
use crate::trainer::{evaluate, predict_frames, run_training, MetricsLog, TrainContext};
use crate::video::{
    auto_threshold, load_clip, load_clip_frames, load_manifest, ppm::write_ppm, sample_indices,
    select_keyframe_indices, split_dataset, SplitSpec, VideoClip,
};

const COMMANDS: &[&str] = &["preprocess", "train", "eval", "predict", "synth"];

pub fn help_text() -> String {
    let mut s = String::from(
        "viofuse - two-stream ConvLSTM video violence classifier\n\
         \n\
         usage: viofuse <command> [flags]\n\
         \n\
         commands:\n\
         \x20 preprocess   cache keyframe-selected frame sequences per clip\n\
         \x20 train        run the training protocol on a manifest\n\
         \x20 eval         evaluate a checkpoint (confusion matrix + accuracy)\n\
         \x20 predict      classify one clip directory\n\
         \x20 synth        generate a synthetic labeled dataset\n\
         \n\
         flags:\n\
         \x20 --config PATH      flat key=value config file (# comments allowed)\n\
         \x20 --manifest PATH    dataset manifest (tab-separated)\n\
         \x20 --checkpoint PATH  checkpoint file for eval/predict\n\
         \x20 --out DIR          output directory\n\
         \x20 --seed N           master seed\n\
         \x20 --set key=value    override one config field (repeatable)\n\
         \x20 --help             print this text\n\
         \n\
         config fields (key = default):\n",
    );
    for f in FIELDS {
        let default = if f.default.is_empty() {
            "(unset)"
        } else {
            f.default
        };
        s.push_str(&format!("  {:<22} = {:<10}  {}\n", f.key, default, f.help));
    }
    s
}

#[derive(Debug)]
struct ParsedArgs {
    command: String,
    config: RunConfig,
    positional: Vec<String>,
}

fn parse_args(args: &[String]) -> Result<Option<ParsedArgs>> {
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" {
        return Ok(None);
    }
    let command = args[0].clone();
    if !COMMANDS.contains(&command.as_str()) {
        return Err(Error::InvalidArgument(format!(
            "unknown command `{command}`; expected one of {}",
            COMMANDS.join(", ")
        )));
    }

    let mut config_path: Option<PathBuf> = None;
    let mut sets: Vec<(String, String)> = Vec::new();
    let mut flag_overrides: Vec<(&'static str, String)> = Vec::new();
    let mut positional = Vec::new();

    let mut i = 1;
    let take_value = |i: &mut usize, flag: &str, args: &[String]| -> Result<String> {
        *i += 1;
        args.get(*i)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("{flag} requires a value")))
    };
    while i < args.len() {
        match args[i].as_str() {
            "--help" | "-h" => return Ok(None),
            "--config" => config_path = Some(PathBuf::from(take_value(&mut i, "--config", args)?)),
            "--manifest" => {
                flag_overrides.push(("manifest", take_value(&mut i, "--manifest", args)?))
            }
            "--checkpoint" => {
                flag_overrides.push(("checkpoint", take_value(&mut i, "--checkpoint", args)?))
            }
            "--out" => flag_overrides.push(("out", take_value(&mut i, "--out", args)?)),
            "--seed" => flag_overrides.push(("seed", take_value(&mut i, "--seed", args)?)),
            "--set" => {
                let kv = take_value(&mut i, "--set", args)?;
                match kv.split_once('=') {
                    Some((k, v)) => sets.push((k.trim().to_string(), v.to_string())),
                    None => {
                        return Err(Error::InvalidArgument(format!(
                            "--set expects key=value, got `{kv}`"
                        )))
                    }
                }
            }
            flag if flag.starts_with("--") => {
                return Err(Error::InvalidArgument(format!("unknown flag `{flag}`")));
            }
            other => positional.push(other.to_string()),
        }
        i += 1;
    }

    let mut config = RunConfig::default();
    if let Some(path) = config_path {
        config.apply_file(&path)?;
    }
    let mut issues = Vec::new();
    for (key, value) in &sets {
        if let Err(msg) = config.set_field(key, value) {
            issues.push(msg);
        }
    }
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    // Dedicated flags take precedence over file values and --set.
    for (key, value) in flag_overrides {
        config
            .set_field(key, &value)
            .map_err(Error::InvalidArgument)?;
    }

    Ok(Some(ParsedArgs {
        command,
        config,
        positional,
    }))
}

/// Entry point behind `main`. Returns Ok only when the command fully
/// succeeded.
pub fn run(args: &[String]) -> Result<()> {
    let parsed = match parse_args(args)? {
        Some(p) => p,
        None => {
            print!("{}", help_text());
            return Ok(());
        }
    };
    match parsed.command.as_str() {
        "preprocess" => cmd_preprocess(&parsed.config),
        "train" => cmd_train(&parsed.config),
        "eval" => cmd_eval(&parsed.config),
        "predict" => cmd_predict(&parsed.config, &parsed.positional),
        "synth" => cmd_synth(&parsed.config),
        _ => unreachable!("command validated in parse_args"),
    }
}

fn require_path(path: &Path, what: &str) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{what} is required (set --{what} or the `{what}` config key)"
        )));
    }
    Ok(())
}

fn slugify(index: usize, label: &str) -> String {
    format!("clip_{index:04}_{label}")
}

fn split_spec_str(split: SplitSpec) -> &'static str {
    match split {
        SplitSpec::Train => "train",
        SplitSpec::Val => "val",
        SplitSpec::Test => "test",
        SplitSpec::Auto => "auto",
    }
}

/// Cache the selected-and-sampled S-frame sequence per clip, with a sidecar
/// recording the kept indices and the threshold used. Reruns over unchanged
/// inputs produce byte-identical output.
fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    require_path(&cfg.manifest, "manifest")?;
    let manifest = load_manifest(&cfg.manifest)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;

    let mut manifest_lines = String::new();
    let mut failures: Vec<String> = Vec::new();
    let mut processed = 0usize;
    for (i, rec) in manifest.records.iter().enumerate() {
        let slug = slugify(i, rec.label.as_str());
        let clip_out = cfg.out.join(&slug);
        let result = (|| -> Result<()> {
            let clip = load_clip(&rec.dir, rec.label, cfg.crop_size)?;
            let first = &clip.frames[0];
            let threshold = cfg
                .keyframe_threshold
                .unwrap_or_else(|| auto_threshold(first.width, first.height));
            let kept = select_keyframe_indices(&clip.frames, threshold)?;
            let sampled: Vec<usize> = sample_indices(kept.len(), cfg.sequence_length)
                .into_iter()
                .map(|k| kept[k])
                .collect();
            std::fs::create_dir_all(&clip_out).map_err(|e| Error::io(&clip_out, e))?;
            for (j, &orig) in sampled.iter().enumerate() {
                let path = clip_out.join(format!("frame_{j:03}.ppm"));
                write_ppm(&path, &clip.frames[orig])?;
            }
            let join = |v: &[usize]| {
                v.iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let sidecar = format!(
                "source={}\nlabel={}\nthreshold={}\nkept_indices={}\nsampled_indices={}\n",
                rec.dir.display(),
                rec.label,
                threshold,
                join(&kept),
                join(&sampled),
            );
            let sidecar_path = clip_out.join("sidecar.txt");
            std::fs::write(&sidecar_path, sidecar).map_err(|e| Error::io(&sidecar_path, e))?;
            Ok(())
        })();
        match result {
            Ok(()) => {
                processed += 1;
                manifest_lines.push_str(&format!(
                    "{slug}\t{}\t{}\n",
                    rec.label,
                    split_spec_str(rec.split)
                ));
            }
            Err(e) => failures.push(format!("{}: {e}", rec.dir.display())),
        }
    }
    let manifest_out = cfg.out.join("manifest.tsv");
    std::fs::write(&manifest_out, manifest_lines).map_err(|e| Error::io(&manifest_out, e))?;

    println!(
        "preprocessed {processed}/{} clips into {}",
        manifest.records.len(),
        cfg.out.display()
    );
    if failures.is_empty() {
        Ok(())
    } else {
        for f in &failures {
            eprintln!("failed: {f}");
        }
        Err(Error::InvalidArgument(format!(
            "{} of {} clips failed preprocessing",
            failures.len(),
            manifest.records.len()
        )))
    }
}

fn load_records(
    records: &[crate::video::ManifestRecord],
    crop_size: usize,
) -> Result<Vec<VideoClip>> {
    records
        .iter()
        .map(|rec| load_clip(&rec.dir, rec.label, crop_size))
        .collect()
}

fn train_context<'a>(
    cfg: &'a RunConfig,
    model: &'a crate::model::ModelConfig,
    pipeline: &'a crate::video::PipelineConfig,
) -> TrainContext<'a> {
    TrainContext {
        model,
        pipeline,
        optimizer: cfg.optimizer_config(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        validation_period: cfg.validation_period,
    }
}

/// The full training protocol: split, epochs of batched RMSprop, hold-out
/// validation with best checkpointing, metrics CSV and a run summary.
fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    require_path(&cfg.manifest, "manifest")?;
    let manifest = load_manifest(&cfg.manifest)?;
    let (train_recs, val_recs, _) = split_dataset(
        &manifest,
        (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio),
        cfg.seed,
    )?;
    if train_recs.is_empty() {
        return Err(Error::InvalidArgument(
            "the training split is empty; check the manifest and ratios".into(),
        ));
    }
    let train_clips = load_records(&train_recs, cfg.crop_size)?;
    let val_clips = load_records(&val_recs, cfg.crop_size)?;

    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let model = cfg.model_config();
    let pipeline = cfg.pipeline_config();
    let ctx = train_context(cfg, &model, &pipeline);
    let mut params = build_model::<f32>(&model, cfg.seed)?;
    let mut metrics = MetricsLog::create(&cfg.out.join("metrics.csv"))?;
    let ckpt_path = cfg.out.join("best.ckpt");

    let run = run_training(
        &mut params,
        &train_clips,
        &val_clips,
        &ctx,
        Some(&ckpt_path),
        Some(&mut metrics),
        None,
    )?;

    let summary_path = cfg.out.join("summary.txt");
    let summary = format!(
        "best_val_accuracy={}\nbest_epoch={}\nepochs_run={}\ncheckpoint={}\ntrain_clips={}\nval_clips={}\n",
        run.best_val_accuracy,
        run.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| "none".into()),
        run.history
            .iter()
            .filter(|r| r.phase == crate::trainer::Phase::Train)
            .count(),
        ckpt_path.display(),
        train_clips.len(),
        val_clips.len(),
    );
    std::fs::write(&summary_path, summary).map_err(|e| Error::io(&summary_path, e))?;

    if let Some(best) = run.best_epoch {
        println!(
            "training complete: best validation accuracy {} at epoch {best}",
            run.best_val_accuracy
        );
    } else {
        println!("training complete (no validation split); final parameters checkpointed");
    }
    println!("checkpoint: {}", ckpt_path.display());
    println!("metrics:    {}", metrics.path.display());
    Ok(())
}

/// Evaluate a checkpoint. Clips marked `test` in the manifest are used; if
/// none are marked, every clip is evaluated.
fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    require_path(&cfg.checkpoint, "checkpoint")?;
    require_path(&cfg.manifest, "manifest")?;
    let (params, _) = load_checkpoint(&cfg.checkpoint)?;
    let model = cfg.model_config();
    validate_checkpoint(&params, &model)?;

    let manifest = load_manifest(&cfg.manifest)?;
    let test_recs: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| r.split == SplitSpec::Test)
        .cloned()
        .collect();
    let records = if test_recs.is_empty() {
        manifest.records.clone()
    } else {
        test_recs
    };
    let clips = load_records(&records, cfg.crop_size)?;

    let pipeline = cfg.pipeline_config();
    let ctx = train_context(cfg, &model, &pipeline);
    let (accuracy, matrix) = evaluate(&params, &clips, &ctx)?;

    print!("{}", matrix.to_text());
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let text_path = cfg.out.join("confusion.txt");
    std::fs::write(&text_path, matrix.to_text()).map_err(|e| Error::io(&text_path, e))?;
    let csv_path = cfg.out.join("confusion.csv");
    std::fs::write(&csv_path, matrix.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    println!("accuracy {accuracy} over {} clips", matrix.total());
    Ok(())
}

/// Classify one clip directory: prints `label p_violence p_nonviolence`.
fn cmd_predict(cfg: &RunConfig, positional: &[String]) -> Result<()> {
    cfg.validate()?;
    require_path(&cfg.checkpoint, "checkpoint")?;
    let clip_dir = positional.first().ok_or_else(|| {
        Error::InvalidArgument("predict requires a clip directory argument".into())
    })?;
    let (params, _) = load_checkpoint(&cfg.checkpoint)?;
    let model = cfg.model_config();
    validate_checkpoint(&params, &model)?;

    let frames = load_clip_frames(Path::new(clip_dir), cfg.crop_size)?;
    let pipeline = cfg.pipeline_config();
    let ctx = train_context(cfg, &model, &pipeline);
    let (label, probs) = predict_frames(&params, &frames, &ctx)?;
    println!("{label} {} {}", probs[0], probs[1]);
    Ok(())
}

/// Generate a balanced synthetic dataset of PPM clip directories plus a
/// manifest, deterministically from the seed.
fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let synth_cfg = SynthConfig {
        frame_size: cfg.synth_frame_size,
        frames_per_clip: cfg.synth_frames_per_clip,
    };
    let clips = generate_dataset(cfg.synth_clips, &synth_cfg, cfg.seed)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;

    let mut manifest_lines = String::new();
    for (i, clip) in clips.iter().enumerate() {
        let slug = slugify(i, clip.label.as_str());
        let dir = cfg.out.join(&slug);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (j, frame) in clip.frames.iter().enumerate() {
            write_ppm(&dir.join(format!("frame_{j:03}.ppm")), frame)?;
        }
        manifest_lines.push_str(&format!("{slug}\t{}\n", clip.label));
    }
    let manifest_path = cfg.out.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest_lines).map_err(|e| Error::io(&manifest_path, e))?;
    println!(
        "generated {} clips under {} (manifest: {})",
        clips.len(),
        cfg.out.display(),
        manifest_path.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn help_lists_every_config_field() {
        let text = help_text();
        for f in FIELDS {
            assert!(text.contains(f.key), "help is missing `{}`", f.key);
        }
    }

    #[test]
    fn unknown_command_and_flag_rejected() {
        assert!(parse_args(&argv(&["frobnicate"])).is_err());
        assert!(parse_args(&argv(&["train", "--frobnicate"])).is_err());
    }

    #[test]
    fn set_overrides_apply_and_flags_win() {
        let parsed = parse_args(&argv(&[
            "train", "--set", "epochs=3", "--set", "seed=5", "--seed", "9",
        ]))
        .unwrap()
        .unwrap();
        assert_eq!(parsed.config.epochs, 3);
        assert_eq!(parsed.config.seed, 9, "dedicated flag outranks --set");
    }

    #[test]
    fn bad_set_values_are_collected() {
        let err = parse_args(&argv(&["train", "--set", "epochs=x", "--set", "nope=1"]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("epochs"), "{err}");
        assert!(err.contains("nope"), "{err}");
    }
}

//! One handler per CLI subcommand; thin composition over the library crates.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use satsynth_data::{
    load_tile, DatasetManifest, LatentMode, ManifestRecord, Source, Split,
};
use satsynth_eval::{compute_fid, evaluate, train_downstream, RandomProjectionExtractor, SegCheckpoint};
use satsynth_gan::{synthesize_dataset, train_upstream, Checkpoint, SynthesisJob};

use crate::config::HarnessConfig;
use crate::experiments::{
    run_lambda_sweep, run_mix_sweep, run_substitution, ExperimentKind, ExperimentPlan,
};
use crate::report::{fmt_f64, write_text};
use crate::HarnessError;

/// Split inferred from a manifest filename (train/val/test.jsonl), falling
/// back to `train`.
pub fn split_from_path(path: &Path) -> Split {
    match path.file_stem().and_then(|s| s.to_str()) {
        Some("val") => Split::Val,
        Some("test") => Split::Test,
        _ => Split::Train,
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, HarnessError> {
    Ok(DatasetManifest::load(path, split_from_path(path))?)
}

/// Scan a directory of tile containers, validate each, and write one
/// manifest per split found.
pub fn cmd_ingest(tiles_dir: &Path, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut by_split: BTreeMap<String, DatasetManifest> = BTreeMap::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(tiles_dir)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", tiles_dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(HarnessError::Config(format!(
            "no tile directories under {}",
            tiles_dir.display()
        )));
    }
    for dir in entries {
        let tile = load_tile(&dir)?;
        let manifest = by_split
            .entry(tile.split.to_string())
            .or_insert_with(|| DatasetManifest::new(tile.split));
        manifest.records.push(ManifestRecord {
            tile_id: tile.tile_id.clone(),
            image_uri: dir.display().to_string(),
            mask_uri: dir.display().to_string(),
            source: Source::Real,
            generator_lambda: None,
            latent_mode: None,
            seed: None,
        });
    }
    let manifest_dir = out.join("manifests");
    let mut written = Vec::new();
    for (split, manifest) in by_split {
        manifest.validate()?;
        let path = manifest_dir.join(format!("{split}.jsonl"));
        manifest.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_make_toy(config: &HarnessConfig, out: &Path) -> Result<(), HarnessError> {
    let toy = satsynth_data::make_toy_dataset(&config.toy_spec(), out)?;
    println!(
        "toy dataset at {}: {} train / {} val / {} test tiles",
        out.display(),
        toy.train.len(),
        toy.val.len(),
        toy.test.len()
    );
    Ok(())
}

pub fn cmd_train_upstream(
    config: &HarnessConfig,
    manifest_path: &Path,
    lambda: Option<f64>,
    out: &Path,
) -> Result<PathBuf, HarnessError> {
    let manifest = load_manifest(manifest_path)?;
    let lambda = lambda.unwrap_or(config.upstream.lambda);
    let (ckpt, history) = train_upstream(
        config.upstream_config(lambda),
        &manifest,
        Some(&out.join("upstream_history.csv")),
    )?;
    let path = out.join("upstream.ckpt");
    ckpt.save(&path)?;
    println!(
        "trained {} steps at lambda {lambda}; checkpoint {} (hash {})",
        history.len(),
        path.display(),
        ckpt.weights_hash()
    );
    Ok(path)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_synthesize(
    config: &HarnessConfig,
    checkpoint: &Path,
    masks: &Path,
    mode: Option<LatentMode>,
    copies: Option<usize>,
    out: &Path,
) -> Result<DatasetManifest, HarnessError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let masks = load_manifest(masks)?;
    let mut job: SynthesisJob = config.synthesis_job("synthesize-cli");
    if let Some(m) = mode {
        job.mode = m;
    }
    if let Some(c) = copies {
        job.copies = c;
    }
    let manifest = synthesize_dataset(&ckpt, &masks, &job, out)?;
    println!(
        "synthesized {} tiles ({} mode) under {}",
        manifest.len(),
        job.mode,
        out.display()
    );
    Ok(manifest)
}

pub fn cmd_eval_fid(
    config: &HarnessConfig,
    real: &Path,
    synth: &Path,
    mode: LatentMode,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<f64, HarnessError> {
    let real = load_manifest(real)?;
    let synth = load_manifest(synth)?;
    let extractor = RandomProjectionExtractor::new(
        config.fid.extractor_seed,
        config.fid.feature_dim,
        config.fid.resize,
    );
    let hash = match checkpoint {
        Some(path) => Some(Checkpoint::load(path)?.weights_hash()),
        None => None,
    };
    let report = compute_fid(&real, &synth, &extractor, mode, &config.fid_patch(), hash)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&out.join("fid.json"), &json)?;
    println!("{json}");
    Ok(report.value)
}

pub fn cmd_train_downstream(
    config: &HarnessConfig,
    train: &Path,
    val: &Path,
    out: &Path,
) -> Result<PathBuf, HarnessError> {
    let train = load_manifest(train)?;
    let val = load_manifest(val)?;
    let (ckpt, history) = train_downstream(&config.seg_config(), &train, &val)?;
    satsynth_eval::write_seg_history_csv(&out.join("downstream_history.csv"), &history)?;
    let path = out.join("downstream.ckpt");
    ckpt.save(&path)?;
    println!(
        "trained {} epochs; best val mIoU {:.4}; checkpoint {}",
        history.len(),
        ckpt.best_val_miou,
        path.display()
    );
    Ok(path)
}

pub fn cmd_eval_seg(
    config: &HarnessConfig,
    checkpoint: &Path,
    test: &Path,
    out: &Path,
) -> Result<f64, HarnessError> {
    let ckpt = SegCheckpoint::load(checkpoint)?;
    let test = load_manifest(test)?;
    let (metrics, _) = evaluate(
        &ckpt,
        &test,
        config.downstream.eval_window,
        config.downstream.eval_stride,
    )?;
    let class_names = {
        let tile = test.records[0].load()?;
        if tile.class_names.len() == tile.mask.num_classes {
            tile.class_names
        } else {
            (0..tile.mask.num_classes).map(|c| format!("class_{c}")).collect()
        }
    };
    let mut csv = format!("{},mean\n", class_names.join(","));
    let cells: Vec<String> = metrics
        .iou_per_class
        .iter()
        .map(|c| c.map(|v| fmt_f64(v, 4)).unwrap_or_default())
        .collect();
    csv.push_str(&format!("{},{}\n", cells.join(","), fmt_f64(metrics.miou, 4)));
    write_text(&out.join("seg_metrics.csv"), &csv)?;
    println!("test mIoU {:.4}", metrics.miou);
    Ok(metrics.miou)
}

pub fn cmd_experiment(
    kind: ExperimentKind,
    config: &HarnessConfig,
    data_dir: &Path,
    out: &Path,
) -> Result<(), HarnessError> {
    let plan = ExperimentPlan {
        kind,
        config: config.clone(),
        data_dir: data_dir.to_path_buf(),
        out_dir: out.to_path_buf(),
    };
    match plan.kind {
        ExperimentKind::LambdaSweep => {
            let report = run_lambda_sweep(&plan)?;
            println!("lambda sweep written to {}", report.csv_path.display());
        }
        ExperimentKind::Substitution => {
            let report = run_substitution(&plan)?;
            println!("substitution table written to {}", report.csv_path.display());
        }
        ExperimentKind::MixSweep => {
            let report = run_mix_sweep(&plan)?;
            println!(
                "mix sweep written to {} (plot {})",
                report.csv_path.display(),
                report.plot_path.display()
            );
        }
    }
    Ok(())
}

/// Merge completed experiment CSVs under a directory into one markdown
/// summary.
pub fn cmd_report(dir: &Path, out: &Path) -> Result<PathBuf, HarnessError> {
    let mut sections = Vec::new();
    for (title, file) in [
        ("Diversity-weight sweep", "lambda_sweep.csv"),
        ("Substitution / over-sampling", "substitution.csv"),
        ("Real-synthetic mixing", "mix_sweep.csv"),
    ] {
        let path = dir.join(file);
        if let Ok(text) = std::fs::read_to_string(&path) {
            let mut body = String::new();
            for line in text.lines() {
                if line.starts_with('#') {
                    body.push_str(&format!("{line}\n\n"));
                } else {
                    body.push_str(&format!("| {} |\n", line.replace(',', " | ")));
                    if !body.contains("| ---") {
                        let cols = line.matches(',').count() + 1;
                        body.push_str(&format!("|{}\n", " --- |".repeat(cols)));
                    }
                }
            }
            sections.push(format!("## {title}\n\n{body}"));
        }
    }
    if sections.is_empty() {
        return Err(HarnessError::Config(format!(
            "no experiment CSVs found under {}",
            dir.display()
        )));
    }
    let report = format!("# Experiment report\n\n{}", sections.join("\n"));
    let path = out.join("report.md");
    write_text(&path, &report)?;
    println!("report at {}", path.display());
    Ok(path)
}

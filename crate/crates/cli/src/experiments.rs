//! The three experiment drivers: diversity-weight sweep, substitution /
//! over-sampling, and real-synthetic mixing. Each composes the library
//! stages, derives every seed from the harness root seed, and emits
//! byte-stable CSV tables plus a JSON run summary.

use std::path::{Path, PathBuf};

use satsynth_data::{
    build_mix_manifest, make_toy_dataset, DatasetManifest, LatentMode, MixSpec, Split,
};
use satsynth_eval::{compute_fid, evaluate, train_downstream, RandomProjectionExtractor};
use satsynth_gan::{synthesize_dataset, train_upstream, SynthesisJob};

use crate::config::{HarnessConfig, Scale};
use crate::report::{
    csv_document, fmt_f64, fmt_lambda, line_plot_svg, write_run_summary, write_text, RunSummary,
};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    LambdaSweep,
    Substitution,
    MixSweep,
}

/// A resolved experiment: configuration, dataset location, output directory.
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    pub config: HarnessConfig,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

pub struct DataBundle {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

/// Load the split manifests under `data_dir`, generating the toy dataset
/// there first when running at desk scale and nothing exists yet.
pub fn ensure_dataset(config: &HarnessConfig, data_dir: &Path) -> Result<DataBundle, HarnessError> {
    let manifest_dir = data_dir.join("manifests");
    let train_path = manifest_dir.join("train.jsonl");
    if !train_path.exists() {
        if config.scale == Scale::Full {
            return Err(HarnessError::Config(format!(
                "no manifests under {}; full scale expects an ingested dataset",
                manifest_dir.display()
            )));
        }
        make_toy_dataset(&config.toy_spec(), data_dir)?;
    }
    Ok(DataBundle {
        train: DatasetManifest::load(&train_path, Split::Train)?,
        val: DatasetManifest::load(&manifest_dir.join("val.jsonl"), Split::Val)?,
        test: DatasetManifest::load(&manifest_dir.join("test.jsonl"), Split::Test)?,
    })
}

pub const LAMBDA_SWEEP_HEADER: &str = "lambda,miou,fid_a,fid_b";
pub const MIX_SWEEP_HEADER: &str = "p,miou";

fn extractor(config: &HarnessConfig) -> RandomProjectionExtractor {
    RandomProjectionExtractor::new(
        config.fid.extractor_seed,
        config.fid.feature_dim,
        config.fid.resize,
    )
}

/// Train one downstream model on `train_manifest` and return its test mIoU
/// and per-class IoUs.
fn downstream_score(
    config: &HarnessConfig,
    train_manifest: &DatasetManifest,
    data: &DataBundle,
    out_dir: &Path,
    tag: &str,
) -> Result<(f64, Vec<Option<f64>>), HarnessError> {
    let seg_cfg = config.seg_config();
    let (ckpt, history) = train_downstream(&seg_cfg, train_manifest, &data.val)?;
    satsynth_eval::write_seg_history_csv(
        &out_dir.join(format!("downstream_history_{tag}.csv")),
        &history,
    )?;
    ckpt.save(&out_dir.join(format!("downstream_{tag}.ckpt")))?;
    let (metrics, _) = evaluate(
        &ckpt,
        &data.test,
        config.downstream.eval_window,
        config.downstream.eval_stride,
    )?;
    Ok((metrics.miou, metrics.iou_per_class))
}

pub struct LambdaSweepReport {
    pub rows: Vec<(f64, f64, f64, f64)>,
    pub csv_path: PathBuf,
}

/// One upstream model per diversity weight; each is scored by FID in both
/// latent modes over the test masks and by downstream mIoU after retraining
/// the segmenter on its synthetic imagery.
pub fn run_lambda_sweep(plan: &ExperimentPlan) -> Result<LambdaSweepReport, HarnessError> {
    let config = &plan.config;
    let data = ensure_dataset(config, &plan.data_dir)?;
    let ex = extractor(config);
    let fid_patch = config.fid_patch();
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for &lambda in &config.experiment.lambdas {
        let tag = fmt_lambda(lambda);
        let lambda_dir = plan.out_dir.join(format!("lambda_{tag}"));
        let (ckpt, _history) = train_upstream(
            config.upstream_config(lambda),
            &data.train,
            Some(&lambda_dir.join("upstream_history.csv")),
        )?;
        ckpt.save(&lambda_dir.join("upstream.ckpt"))?;
        let hash = ckpt.weights_hash();

        let fid_a = {
            let job = SynthesisJob {
                mode: LatentMode::Prior,
                copies: 1,
                seed: config.derive_seed("synth-fid-a"),
                overlap: config.synthesis.overlap,
            };
            let synth = synthesize_dataset(&ckpt, &data.test, &job, &lambda_dir.join("synth_test_prior"))?;
            compute_fid(&data.test, &synth, &ex, LatentMode::Prior, &fid_patch, Some(hash.clone()))?
        };
        let fid_b = {
            let job = SynthesisJob {
                mode: LatentMode::Encoder,
                copies: 1,
                seed: config.derive_seed("synth-fid-b"),
                overlap: config.synthesis.overlap,
            };
            let synth = synthesize_dataset(&ckpt, &data.test, &job, &lambda_dir.join("synth_test_encoder"))?;
            compute_fid(&data.test, &synth, &ex, LatentMode::Encoder, &fid_patch, Some(hash.clone()))?
        };
        write_text(
            &lambda_dir.join("fid.json"),
            &format!(
                "{}\n{}\n",
                serde_json::to_string(&fid_a).expect("report serializes"),
                serde_json::to_string(&fid_b).expect("report serializes")
            ),
        )?;

        let job = SynthesisJob {
            mode: LatentMode::Prior,
            copies: 1,
            seed: config.derive_seed("synth-train"),
            overlap: config.synthesis.overlap,
        };
        let synth_train = synthesize_dataset(&ckpt, &data.train, &job, &lambda_dir.join("synth_train"))?;
        let (miou, _) = downstream_score(config, &synth_train, &data, &lambda_dir, "synthetic")?;

        outputs.push(lambda_dir.display().to_string());
        rows.push((lambda, miou, fid_a.value, fid_b.value));
    }

    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|&(l, miou, fa, fb)| {
            vec![
                fmt_lambda(l),
                fmt_f64(miou, 4),
                fmt_f64(fa, 4),
                fmt_f64(fb, 4),
            ]
        })
        .collect();
    let csv_path = plan.out_dir.join("lambda_sweep.csv");
    write_text(
        &csv_path,
        &csv_document(config.seed, &config.hash(), LAMBDA_SWEEP_HEADER, &csv_rows),
    )?;
    write_run_summary(
        &plan.out_dir.join("report.json"),
        &RunSummary {
            kind: "lambda_sweep",
            seed: config.seed,
            config_hash: &config.hash(),
            outputs,
        },
    )?;
    Ok(LambdaSweepReport { rows, csv_path })
}

pub struct SubstitutionReport {
    pub methods: Vec<String>,
    pub rows: Vec<(f64, Vec<Option<f64>>)>,
    pub csv_path: PathBuf,
}

/// Downstream models trained on 100% real imagery and on 100/200/300%
/// synthetic imagery from one upstream model.
pub fn run_substitution(plan: &ExperimentPlan) -> Result<SubstitutionReport, HarnessError> {
    let config = &plan.config;
    let data = ensure_dataset(config, &plan.data_dir)?;
    let class_names = class_names_of(&data)?;
    let mut methods = Vec::new();
    let mut rows = Vec::new();
    let mut outputs = Vec::new();

    let (real_miou, real_ious) =
        downstream_score(config, &data.train, &data, &plan.out_dir.join("real"), "real")?;
    methods.push("100% real".to_string());
    rows.push((real_miou, real_ious));
    outputs.push(plan.out_dir.join("real").display().to_string());

    let lambda = config.experiment.synthesis_lambda;
    let up_dir = plan.out_dir.join("upstream");
    let (ckpt, _) = train_upstream(
        config.upstream_config(lambda),
        &data.train,
        Some(&up_dir.join("upstream_history.csv")),
    )?;
    ckpt.save(&up_dir.join("upstream.ckpt"))?;

    for &copies in &config.experiment.substitution_copies {
        let tag = format!("{}00pct", copies);
        let dir = plan.out_dir.join(format!("synthetic_{tag}"));
        let job = SynthesisJob {
            mode: config.synthesis.mode,
            copies,
            seed: config.derive_seed("synth-substitution"),
            overlap: config.synthesis.overlap,
        };
        let synth = synthesize_dataset(&ckpt, &data.train, &job, &dir.join("tiles"))?;
        let (miou, ious) = downstream_score(config, &synth, &data, &dir, &tag)?;
        methods.push(format!("{}00% synthetic", copies));
        rows.push((miou, ious));
        outputs.push(dir.display().to_string());
    }

    let header = format!("method,{},mean", class_names.join(","));
    let csv_rows: Vec<Vec<String>> = methods
        .iter()
        .zip(&rows)
        .map(|(m, (miou, ious))| {
            let mut row = vec![m.clone()];
            for iou in ious {
                row.push(iou.map(|v| fmt_f64(v, 4)).unwrap_or_default());
            }
            row.push(fmt_f64(*miou, 4));
            row
        })
        .collect();
    let csv_path = plan.out_dir.join("substitution.csv");
    write_text(
        &csv_path,
        &csv_document(config.seed, &config.hash(), &header, &csv_rows),
    )?;
    write_run_summary(
        &plan.out_dir.join("report.json"),
        &RunSummary {
            kind: "substitution",
            seed: config.seed,
            config_hash: &config.hash(),
            outputs,
        },
    )?;
    Ok(SubstitutionReport {
        methods,
        rows,
        csv_path,
    })
}

pub struct MixSweepReport {
    pub rows: Vec<(f64, f64)>,
    pub csv_path: PathBuf,
    pub plot_path: PathBuf,
}

/// One downstream model per synthetic fraction p, trained on a seeded mix of
/// real and synthetic tiles.
pub fn run_mix_sweep(plan: &ExperimentPlan) -> Result<MixSweepReport, HarnessError> {
    let config = &plan.config;
    let data = ensure_dataset(config, &plan.data_dir)?;

    let lambda = config.experiment.synthesis_lambda;
    let up_dir = plan.out_dir.join("upstream");
    let (ckpt, _) = train_upstream(
        config.upstream_config(lambda),
        &data.train,
        Some(&up_dir.join("upstream_history.csv")),
    )?;
    ckpt.save(&up_dir.join("upstream.ckpt"))?;
    let job = SynthesisJob {
        mode: config.synthesis.mode,
        copies: 1,
        seed: config.derive_seed("synth-mix"),
        overlap: config.synthesis.overlap,
    };
    let synth_train = synthesize_dataset(&ckpt, &data.train, &job, &plan.out_dir.join("synth_train"))?;

    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for &p in &config.experiment.p_grid {
        let mix = MixSpec {
            synthetic_fraction: p,
            total_tiles: data.train.len(),
            seed: config.derive_seed("mix-select"),
        };
        let mixed = build_mix_manifest(&data.train, &synth_train, &mix)?;
        let tag = format!("p{:02}", (p * 100.0).round() as u32);
        let dir = plan.out_dir.join(&tag);
        let (miou, _) = downstream_score(config, &mixed, &data, &dir, &tag)?;
        rows.push((p, miou));
        outputs.push(dir.display().to_string());
    }

    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|&(p, miou)| vec![fmt_f64(p, 2), fmt_f64(miou, 4)])
        .collect();
    let csv_path = plan.out_dir.join("mix_sweep.csv");
    write_text(
        &csv_path,
        &csv_document(config.seed, &config.hash(), MIX_SWEEP_HEADER, &csv_rows),
    )?;
    let plot_path = plan.out_dir.join("mix_sweep.svg");
    write_text(
        &plot_path,
        &line_plot_svg(
            "Downstream mIoU vs synthetic fraction",
            "synthetic fraction p",
            "test mIoU",
            &rows,
        ),
    )?;
    write_run_summary(
        &plan.out_dir.join("report.json"),
        &RunSummary {
            kind: "mix_sweep",
            seed: config.seed,
            config_hash: &config.hash(),
            outputs,
        },
    )?;
    Ok(MixSweepReport {
        rows,
        csv_path,
        plot_path,
    })
}

fn class_names_of(data: &DataBundle) -> Result<Vec<String>, HarnessError> {
    let record = data
        .test
        .records
        .first()
        .ok_or_else(|| HarnessError::Config("empty test manifest".into()))?;
    let tile = record.load()?;
    if tile.class_names.len() == tile.mask.num_classes {
        Ok(tile.class_names)
    } else {
        Ok((0..tile.mask.num_classes)
            .map(|c| format!("class_{c}"))
            .collect())
    }
}

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mvlift_core::data::{
    format_poses, load_dataset, read_detections, save_dataset, synth_generate, Dataset,
    DatasetManifest, Norm2DParams, SynthConfig, MANIFEST_FILE,
};
use mvlift_core::eval::{evaluate_pairs, format_report, EvalConfig, PairAlignment};
use mvlift_core::geometry::{
    project, read_calibration, root_center, triangulate_dlt, world_to_camera,
};
use mvlift_core::model::{read_checkpoint, write_checkpoint, Checkpoint, Mode, ModelParams};
use mvlift_core::train::{
    checkpoint_path, format_metrics, infer, infer_batch, parse_metrics, run_ablation, EpochMetrics,
    TrainConfig, Trainer,
};
use mvlift_core::{CameraId, Error, Pose2D, Pose3D};

use crate::args::{
    AblateArgs, Alignment, EvalArgs, InferArgs, ModelSource, SynthArgs, TrainArgs, TriangulateArgs,
};
use crate::config::resolve;
use crate::error::{io, CliError};
use crate::manifest::RunManifest;
use crate::plot::skeleton_svg;

type Result<T> = std::result::Result<T, CliError>;

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io(path, e))
}

fn json(value: &impl serde::Serialize) -> serde_json::Value {
    serde_json::to_value(value).expect("configs serialize to JSON")
}

fn record_dataset(run: &mut RunManifest, manifest: &Path) -> Result<()> {
    run.input(manifest)?;
    for file in DatasetManifest::read(manifest)?.files(manifest) {
        run.input(&file)?;
    }
    Ok(())
}

pub fn synth(out: &Path, args: &SynthArgs) -> Result<()> {
    let base = SynthConfig {
        seed: args.seed,
        ..SynthConfig::default()
    };
    let mut config: SynthConfig = resolve(&base, args.config.as_deref(), &args.flags)?;
    config.seed = args.seed;
    let data = synth_generate(&config)?;
    let manifest = save_dataset(&data, out)?;

    let mut run = RunManifest::new("synth", Some(args.seed), json(&config));
    if let Some(c) = &args.config {
        run.input(c)?;
    }
    run.output(&manifest)?;
    for file in DatasetManifest::read(&manifest)?.files(&manifest) {
        run.output(&file)?;
    }
    run.write(out)?;
    println!(
        "wrote {} samples from {} cameras to {}",
        data.len(),
        data.rig.len(),
        out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

pub fn triangulate(out: &Path, args: &TriangulateArgs) -> Result<()> {
    let rig = read_calibration(&args.calibration)?;
    let (declared, records) = read_detections(&args.detections)?;
    let n = declared.unwrap_or(0);

    let mut order: Vec<String> = Vec::new();
    let mut views: HashMap<String, BTreeMap<CameraId, Pose2D>> = HashMap::new();
    for r in records {
        let parse = |msg: String| Error::Parse {
            path: args.detections.clone(),
            line: r.line,
            msg,
        };
        if rig.index_of(r.camera_id).is_none() {
            return Err(parse(format!("unknown camera id {}", r.camera_id)).into());
        }
        let entry = views.entry(r.sample_id.clone()).or_insert_with(|| {
            order.push(r.sample_id.clone());
            BTreeMap::new()
        });
        if entry.insert(r.camera_id, r.pose).is_some() {
            return Err(parse(format!(
                "duplicate view {} of sample {}",
                r.camera_id, r.sample_id
            ))
            .into());
        }
    }

    let mut poses = Vec::new();
    let mut report = String::from("sample,camera,mean_px,max_px\n");
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for id in &order {
        let obs = &views[id];
        let pose = match triangulate_dlt(obs, &rig) {
            Ok(p) => p,
            Err(e @ (Error::InsufficientViews(_) | Error::PointAtInfinity(_))) => {
                eprintln!("skipping {id}: {e}");
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for (cam_id, det) in obs {
            let cam = rig.camera(*cam_id)?;
            let reprojected = project(&world_to_camera(&pose, cam)?, cam)?;
            let errors: Vec<f64> = reprojected
                .landmarks
                .iter()
                .zip(&det.landmarks)
                .map(|(p, q)| (p - q).norm())
                .collect();
            let max = errors.iter().copied().fold(0.0, f64::max);
            worst = worst.max(max);
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            writeln!(report, "{id},{cam_id},{mean:?},{max:?}").unwrap();
        }
        poses.push((id.as_str(), pose));
    }
    let output = out.join(&args.output);
    let report_path = out.join("reprojection.csv");
    write(
        &output,
        &format_poses(n, poses.iter().map(|(id, p)| (*id, p)))?,
    )?;
    write(&report_path, &report)?;

    let mut run = RunManifest::new("triangulate", None, serde_json::Value::Null);
    run.input(&args.calibration)?;
    run.input(&args.detections)?;
    run.output(&output)?;
    run.output(&report_path)?;
    run.write(out)?;
    println!(
        "triangulated {} samples ({skipped} skipped); max re-projection error {worst:e} px",
        poses.len()
    );
    Ok(())
}

fn train_config(source: &ModelSource) -> Result<TrainConfig> {
    let base = TrainConfig::preset(&source.preset).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut config = resolve(&base, source.config.as_deref(), &source.flags)?;
    config.seed = source.seed;
    config.validate()?;
    Ok(config)
}

fn split(data: Dataset, holdout: Option<usize>) -> Result<(Dataset, Option<Dataset>)> {
    match holdout {
        None | Some(0) => Ok((data, None)),
        Some(h) if h >= data.len() => Err(CliError::Validation(format!(
            "cannot hold out {h} of {} samples",
            data.len()
        ))),
        Some(h) => {
            let (train, held) = data.split_at(data.len() - h)?;
            Ok((train, Some(held)))
        }
    }
}

pub fn train(out: &Path, args: &TrainArgs) -> Result<()> {
    let source = &args.source;
    let mut config = train_config(source)?;
    let ckpt_dir = config
        .checkpoint_dir
        .get_or_insert_with(|| out.join("checkpoints"))
        .clone();
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| io(&ckpt_dir, e))?;
    let data = load_dataset(&source.dataset, true)?;
    let (train_set, holdout) = split(data, source.holdout)?;
    let metrics_path = out.join("metrics.csv");

    let (mut trainer, mut history) = match &args.resume {
        None => (
            Trainer::new(&train_set, holdout.as_ref(), config.clone())?,
            Vec::new(),
        ),
        Some(path) => {
            let checkpoint = read_checkpoint(path)?;
            let start = checkpoint.epoch as usize;
            // keep the log of the epochs before the checkpoint
            let earlier: Vec<EpochMetrics> = match std::fs::read_to_string(&metrics_path) {
                Ok(text) => parse_metrics(&text, &metrics_path)?
                    .into_iter()
                    .filter(|r| r.epoch < start)
                    .collect(),
                Err(_) => Vec::new(),
            };
            let trainer =
                Trainer::resume(&train_set, holdout.as_ref(), config.clone(), checkpoint)?;
            (trainer, earlier)
        }
    };

    while !trainer.is_finished() {
        match trainer.run_epoch() {
            Ok(row) => {
                let score = row
                    .p_mpjpe
                    .map(|p| format!("  p_mpjpe {p:.3}"))
                    .unwrap_or_default();
                eprintln!(
                    "epoch {:>4}/{}  total {:.6}{score}",
                    row.epoch + 1,
                    config.epochs,
                    row.total
                );
                history.push(row);
            }
            Err(e) => {
                write(&metrics_path, &format_metrics(&history))?;
                return Err(e.into());
            }
        }
    }
    let model_path = out.join("model.ckpt");
    let checkpoint = trainer.checkpoint();
    write_checkpoint(&checkpoint_path(&ckpt_dir, trainer.epoch()), &checkpoint)?;
    write_checkpoint(&model_path, &checkpoint)?;
    write(&metrics_path, &format_metrics(&history))?;
    let config_path = out.join("train_config.toml");
    write(
        &config_path,
        &toml::to_string(&config).expect("config serializes to TOML"),
    )?;

    let mut run = RunManifest::new("train", Some(config.seed), json(&config));
    record_dataset(&mut run, &source.dataset)?;
    if let Some(p) = &source.config {
        run.input(p)?;
    }
    if let Some(p) = &args.resume {
        run.input(p)?;
    }
    for p in [&model_path, &metrics_path, &config_path] {
        run.output(p)?;
    }
    run.write(out)?;
    println!(
        "trained {} epochs; model written to {}",
        trainer.epoch(),
        model_path.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelParams> {
    let Checkpoint { mut params, .. } = read_checkpoint(path)?;
    params.set_mode(Mode::Eval);
    Ok(params)
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn eval(out: &Path, args: &EvalArgs) -> Result<()> {
    let params = load_model(&args.checkpoint)?;
    let data = load_dataset(&args.dataset, false)?;
    let data = match args.holdout {
        Some(h) => split(data, Some(h))?.1.expect("non-zero holdout"),
        None => data,
    };
    if !data.has_ground_truth() {
        return Err(CliError::Validation(
            "evaluation needs ground truth for every sample".into(),
        ));
    }
    if params.config().n_landmarks != data.n_landmarks() {
        return Err(Error::LandmarkCount {
            expected: params.config().n_landmarks,
            got: data.n_landmarks(),
        }
        .into());
    }
    let root = data.root();
    let per_view: Vec<Vec<Pose3D>> = data
        .rig
        .cameras()
        .iter()
        .enumerate()
        .map(|(c, cam)| {
            let dets: Vec<Pose2D> = data
                .samples
                .iter()
                .map(|s| s.detections[c].clone())
                .collect();
            infer_batch(&params, &dets, &data.normalization, cam.id())
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut pairs = Vec::with_capacity(data.len() * data.rig.len());
    for (i, s) in data.samples.iter().enumerate() {
        let gt = s.gt_pose.as_ref().expect("checked above");
        for (c, cam) in data.rig.cameras().iter().enumerate() {
            let target = root_center(&world_to_camera(gt, cam)?, root)?.0;
            pairs.push((s.group().to_string(), per_view[c][i].clone(), target));
        }
    }
    let config = EvalConfig {
        pck_threshold: args.pck_threshold,
        pck_alignment: match args.alignment {
            Alignment::Root => PairAlignment::Root,
            Alignment::Procrustes => PairAlignment::Procrustes,
        },
        ..EvalConfig::default()
    };
    let report = evaluate_pairs(&pairs, root, &config)?;
    let text = format_report(&report);
    let report_path = out.join("eval_report.csv");
    write(&report_path, &text)?;

    let mut run = RunManifest::new(
        "eval",
        None,
        serde_json::json!({
            "pck_threshold": config.pck_threshold,
            "auc_max": config.auc_max,
            "auc_steps": config.auc_steps,
            "alignment": format!("{:?}", args.alignment).to_lowercase(),
            "holdout": args.holdout,
        }),
    );
    run.input(&args.checkpoint)?;
    record_dataset(&mut run, &args.dataset)?;
    run.output(&report_path)?;
    let n_views = data.rig.len();
    for (i, s) in data.samples.iter().take(args.plots).enumerate() {
        let (_, pred, gt) = &pairs[i * n_views];
        let svg = skeleton_svg(&data.skeleton.parents, &s.id, &s.detections[0], gt, pred);
        let path = out
            .join("plots")
            .join(format!("{i:04}_{}.svg", file_stem(&s.id)));
        write(&path, &svg)?;
        run.output(&path)?;
    }
    run.write(out)?;
    print!("{text}");
    Ok(())
}

pub fn infer_cmd(out: &Path, args: &InferArgs) -> Result<()> {
    let params = load_model(&args.checkpoint)?;
    let scale = match (&args.dataset, args.norm_scale) {
        (_, Some(s)) => s,
        (Some(m), None) => DatasetManifest::read(m)?.norm_scale,
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let norm = Norm2DParams::new(scale)?;
    let (_, records) = read_detections(&args.detections)?;
    let mut poses = Vec::with_capacity(records.len());
    for r in &records {
        let pose = infer(&params, &r.pose, &norm, r.camera_id).map_err(|e| match e {
            Error::LandmarkCount { .. } | Error::Contract(_) => Error::Parse {
                path: args.detections.clone(),
                line: r.line,
                msg: e.to_string(),
            },
            other => other,
        })?;
        poses.push((format!("{}@{}", r.sample_id, r.camera_id), pose));
    }
    let output = out.join(&args.output);
    let n = params.config().n_landmarks;
    write(
        &output,
        &format_poses(n, poses.iter().map(|(id, p)| (id.as_str(), p)))?,
    )?;

    let mut run = RunManifest::new("infer", None, serde_json::json!({ "norm_scale": scale }));
    run.input(&args.checkpoint)?;
    run.input(&args.detections)?;
    run.output(&output)?;
    run.write(out)?;
    println!("lifted {} detections to {}", poses.len(), output.display());
    Ok(())
}

pub fn ablate(out: &Path, args: &AblateArgs) -> Result<()> {
    let source = &args.source;
    let config = train_config(source)?;
    let data = load_dataset(&source.dataset, true)?;
    let holdout = source.holdout.unwrap_or(data.len() / 5);
    let (train_set, held) = split(data, Some(holdout))?;
    let held =
        held.ok_or_else(|| CliError::Validation("ablation needs a non-empty holdout".into()))?;
    if !held.has_ground_truth() {
        return Err(CliError::Validation(
            "held-out samples need ground truth".into(),
        ));
    }
    let rows = run_ablation(&train_set, &held, &config)?;
    let mut text = String::from("config,w_in,w_proj,w_con,w_out,out_loss_fraction,p_mpjpe\n");
    for r in &rows {
        let w = r.weights;
        writeln!(
            text,
            "{},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.name, w.w_in, w.w_proj, w.w_con, w.w_out, r.out_loss_fraction, r.p_mpjpe
        )
        .unwrap();
    }
    let table = out.join("ablation.csv");
    write(&table, &text)?;

    let mut run = RunManifest::new("ablate", Some(config.seed), json(&config));
    record_dataset(&mut run, &source.dataset)?;
    if let Some(p) = &source.config {
        run.input(p)?;
    }
    run.output(&table)?;
    run.write(out)?;
    print!("{text}");
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    Ok(dir.to_path_buf())
}

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use popup_core::baseline::{
    eval_samples, evaluate, nn_predictions, nn_retrieve, popup_predictions, popup_sequence_predictions, EvalMode,
    TrainBank,
};
use popup_core::data::{generate_synthetic, load_dataset, read_pose, Frame, FrameSequence, Split};
use popup_core::inference::{export_estimate, Popup, PoseRecord};
use popup_core::io::read_cloud;
use popup_core::saliency::{export_saliency, saliency_iterate, SaliencyConfig};
use popup_core::training::{train, ModelBundle, RunConfig, TrainData};

use crate::{
    Baseline, BaselineArgs, Cli, Command, EvalArgs, InferArgs, Preset, SaliencyArgs, SplitArg, SynthArgs, TrainArgs,
    UsageError,
};

pub fn run(cli: Cli) -> Result<()> {
    if cli.dump_config {
        let cfg = match cli.preset {
            Preset::Full => RunConfig::default(),
            Preset::Desk => RunConfig::desk(),
        };
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match cli.command {
        None => Err(UsageError("no subcommand given; see --help".into()).into()),
        Some(Command::SynthData(a)) => synth(a),
        Some(Command::Train(a)) => train_cmd(a),
        Some(Command::Infer(a)) => infer(a),
        Some(Command::Eval(a)) => eval(a),
        Some(Command::Saliency(a)) => saliency(a),
        Some(Command::Baseline(a)) => baseline(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| popup_core::Error::io(p, e))
                .with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::from_toml(&text).with_context(|| format!("in config {}", p.display()))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| popup_core::Error::io(dir, e))?;
    Ok(())
}

fn split(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let manifest = generate_synthetic(&cfg.data, a.seed, &a.out)?;
    println!(
        "wrote {} sequences of {} frames ({} points each) to {}",
        manifest.sequences.len(),
        cfg.data.frames_per_sequence,
        manifest.points_per_frame,
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
        cfg.train.warmup_epochs_gt_center = cfg.train.warmup_epochs_gt_center.min(e.saturating_sub(1));
        cfg.train.lr_decay_epochs.retain(|&d| d < e);
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let ds = load_dataset(&a.data)?;
    let data = TrainData::from_dataset(&ds, cfg.train.train_fps)?;
    info!("{} training and {} validation frames", data.train.len(), data.val.len());
    create_dir(&a.out)?;
    let outcome = train(&cfg.model, &cfg.train, &data, Some(&a.out))?;
    let last = outcome.log.last().expect("at least one epoch");
    println!(
        "trained {} epochs; final loss {:.6}; checkpoint {}",
        outcome.log.len(),
        last.loss,
        a.out.join("model.ckpt").display()
    );
    Ok(())
}

fn resolve_class(bundle: &ModelBundle, class: Option<&str>) -> Result<Option<usize>> {
    Ok(match class {
        Some(c) => Some(bundle.resolve_class(c)?),
        None => None,
    })
}

fn cloud_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| popup_core::Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("ply") | Some("xyz")
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(popup_core::Error::format(dir, "no .ply or .xyz frames in directory").into());
    }
    Ok(files)
}

fn infer(a: InferArgs) -> Result<()> {
    let bundle = ModelBundle::load(&a.checkpoint)?;
    let popup = Popup::new(&bundle.network, &bundle.templates)?;
    let class = resolve_class(&bundle, a.class.as_deref())?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
    }
    let estimates = if a.sequence {
        if !a.cloud.is_dir() {
            return Err(UsageError(format!("--sequence needs a directory, got {}", a.cloud.display())).into());
        }
        let frames = cloud_files(&a.cloud)?
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok(Frame {
                    cloud: read_cloud(p)?,
                    gt: None,
                    index: i,
                })
            })
            .collect::<popup_core::Result<Vec<_>>>()?;
        let seq = FrameSequence::new(frames, 1.0)?;
        popup.sequence(&seq, Some(a.sigma), class, a.vote.into())?
    } else {
        let cloud = read_cloud(&a.cloud)?;
        vec![match class {
            Some(c) => popup.single(&cloud, c)?,
            None => popup.single_predicted_class(&cloud)?,
        }]
    };
    for (i, est) in estimates.iter().enumerate() {
        let record = PoseRecord::new(est, &bundle.templates);
        println!("{}", serde_json::to_string(&record)?);
        if let Some(dir) = &a.out {
            let stem = if a.sequence { format!("frame_{i:04}") } else { "estimate".to_string() };
            export_estimate(est, &bundle.templates, dir, &stem)?;
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let bundle = ModelBundle::load(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let popup = Popup::new(&bundle.network, &ds.templates)?;
    let samples = eval_samples(&ds, split(a.split))?;
    info!("{} evaluation frames", samples.len());
    let preds = if a.sequence {
        popup_sequence_predictions(&popup, &samples, a.mode, Some(a.sigma), a.vote.into())?
    } else {
        popup_predictions(&popup, &samples, a.mode)?
    };
    let method = if a.sequence { "popup-sequence" } else { "popup" };
    let mut reports = vec![evaluate(method, &samples, &preds, a.mode, &ds.templates)?];
    if a.baseline == Some(Baseline::Nn) {
        let bank = TrainBank::from_dataset(&ds, Split::Train, bundle.train.train_fps)?;
        let preds = nn_predictions(&bank, &samples, a.mode)?;
        reports.push(evaluate("nn", &samples, &preds, a.mode, &ds.templates)?);
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
    }
    for r in &reports {
        println!("{}", r.to_text());
        if let Some(dir) = &a.out {
            let mode = match a.mode {
                EvalMode::GivenClass => "given",
                EvalMode::PredictedClass => "predicted",
            };
            r.save(dir, &format!("{}_{mode}", r.method))?;
        }
    }
    Ok(())
}

fn saliency(a: SaliencyArgs) -> Result<()> {
    let bundle = ModelBundle::load(&a.checkpoint)?;
    let class = bundle.resolve_class(&a.class)?;
    let cloud = read_cloud(&a.cloud)?;
    let (gt_class, gt) = read_pose(&a.gt, a.frame)?;
    if let Some(c) = gt_class {
        if c != class {
            return Err(UsageError(format!("--class is {class} but the ground truth is class {c}")).into());
        }
    }
    let cfg = SaliencyConfig {
        iterations: a.iterations,
        fraction: a.fraction,
        step: a.step,
    };
    let result = saliency_iterate(&bundle.network, bundle.template(class)?, &cloud, &gt, &cfg)?;
    create_dir(&a.out)?;
    export_saliency(&result, &cloud, &a.out)?;
    for (i, t) in result.touched.iter().enumerate() {
        println!("iteration {i}: offset loss {:.6}, moved {} points", result.losses[i], t.len());
    }
    if let Some(l) = result.losses.last() {
        println!("final offset loss {l:.6}; {} distinct points moved", result.touched_union().len());
    }
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let bank = TrainBank::from_dataset(&ds, Split::Train, a.fps)?;
    let query = read_cloud(&a.query)?;
    let class = match a.class.as_deref() {
        None => None,
        Some(c) => Some(match ds.manifest.classes.iter().position(|n| n == c) {
            Some(i) => i,
            None => c
                .parse::<usize>()
                .ok()
                .filter(|&i| i < ds.num_classes())
                .ok_or_else(|| UsageError(format!("unknown class '{c}'")))?,
        }),
    };
    let m = nn_retrieve(&query, &bank, class)?;
    let out = serde_json::json!({
        "index": m.index,
        "class_id": m.class_id,
        "class_name": ds.manifest.classes[m.class_id],
        "rotation": m.transform.rotation_row_major(),
        "translation": m.transform.translation_array(),
        "distance": m.distance,
    });
    println!("{out}");
    Ok(())
}

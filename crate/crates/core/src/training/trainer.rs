use std::path::Path;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{augment_sample, Augmentation, ModelBundle, TrainConfig, TrainSample};
use crate::data::{downsample_sequence, Dataset, FrameSequence, Split};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::io::write_atomic;
use crate::model::{ForwardOptions, ForwardVars, ModelConfig, ObjectTemplate, PopupNetwork};
use crate::tensor::{adam_step, AdamState, Graph, Tensor, Var};

/// Training and validation frames with the class templates.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<TrainSample>,
    pub val: Vec<TrainSample>,
    pub templates: Vec<ObjectTemplate>,
}

impl TrainData {
    /// Frames of labelled sequences strided to `fps`.
    pub fn samples(seqs: &[FrameSequence], templates: &[ObjectTemplate], fps: f64) -> Result<Vec<TrainSample>> {
        let mut out = Vec::new();
        for seq in seqs {
            let seq = if fps < seq.fps { downsample_sequence(seq, fps)? } else { seq.clone() };
            for f in seq.frames {
                let gt = f
                    .gt
                    .ok_or_else(|| Error::InvalidInput(format!("frame {} has no ground truth", f.index)))?;
                let template = templates
                    .get(gt.class_id)
                    .ok_or_else(|| Error::InvalidInput(format!("no template for class {}", gt.class_id)))?;
                out.push(TrainSample::new(f.cloud, gt.class_id, &gt.transform, template)?);
            }
        }
        Ok(out)
    }

    /// Train and validation splits of a stored dataset, both strided to `fps`.
    pub fn from_dataset(ds: &Dataset, fps: f64) -> Result<Self> {
        let load = |split| {
            ds.split_ids(split)
                .iter()
                .map(|&id| ds.sequence(id))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            train: Self::samples(&load(Split::Train)?, &ds.templates, fps)?,
            val: Self::samples(&load(Split::Val)?, &ds.templates, fps)?,
            templates: ds.templates.clone(),
        })
    }
}

/// Graph handles of the training objective for one sample.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub total: Var,
    pub center: Var,
    pub offset: Var,
    pub class: Option<Var>,
    /// The prepared input cloud, `[N, 3]`.
    pub cloud: Var,
    pub forward: ForwardVars,
}

/// Builds the training objective on a prepared cloud. Keypoints are placed at
/// the ground-truth center when `use_gt_center` is set, otherwise at the
/// predicted one; `aug` perturbs that placement. Set `cloud_grad` to get
/// gradients with respect to the input points, including the path through
/// the predicted placement center.
#[allow(clippy::too_many_arguments)]
pub fn popup_loss_graph(
    net: &PopupNetwork,
    g: &mut Graph,
    prepared: &[Point3],
    sample: &TrainSample,
    canonical: &[Point3],
    aug: &Augmentation,
    use_gt_center: bool,
    alpha: f64,
    cloud_grad: bool,
) -> Result<LossVars> {
    let mut x = Tensor::from_points(prepared);
    if cloud_grad {
        x = x.with_grad();
    }
    let cloud = g.input(x);
    let mut opts = ForwardOptions::new(sample.class_id);
    if use_gt_center {
        opts.center_override = Some(sample.gt_center);
    }
    opts.center_shift = aug.translation;
    opts.center_grad = cloud_grad;
    if !aug.is_identity() {
        opts.keypoint_rotation = Some(aug.rotation);
    }
    let fv = net.forward(g, cloud, canonical, &opts)?;

    let gt_c = g.constant(Tensor::row(&sample.gt_center));
    let dc = g.sub(fv.center, gt_c)?;
    let center = g.sum_squares(dc)?;
    let gt_k = g.constant(Tensor::from_points(&sample.gt_keypoints));
    let dk = g.sub(fv.keypoints, gt_k)?;
    let offset = g.sum_squares(dk)?;
    let weighted = g.scale(offset, alpha)?;
    let mut total = g.add(center, weighted)?;
    let class = match fv.logits {
        Some(l) => {
            let ce = g.softmax_cross_entropy(l, &[sample.class_id])?;
            total = g.add(total, ce)?;
            Some(ce)
        }
        None => None,
    };
    Ok(LossVars {
        total,
        center,
        offset,
        class,
        cloud,
        forward: fv,
    })
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub gt_center: bool,
    /// Sample means of the objective and its parts.
    pub loss: f64,
    pub loss_center: f64,
    pub loss_offset: f64,
    pub loss_class: Option<f64>,
    /// Mean center error on the validation frames (m).
    pub val_center_error: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub log: Vec<EpochRecord>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn check_data(model: &ModelConfig, data: &TrainData) -> Result<()> {
    if data.train.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    if data.templates.len() != model.num_classes
        || data.templates.iter().enumerate().any(|(i, t)| t.class_id != i)
    {
        return Err(Error::InvalidInput(format!(
            "{} templates for {} classes",
            data.templates.len(),
            model.num_classes
        )));
    }
    for (i, s) in data.train.iter().chain(&data.val).enumerate() {
        if s.class_id >= model.num_classes || s.gt_keypoints.len() != model.num_keypoints {
            return Err(Error::InvalidInput(format!(
                "sample {i}: class {} with {} keypoints does not fit the model",
                s.class_id,
                s.gt_keypoints.len()
            )));
        }
    }
    for t in &data.templates {
        if t.keypoints.len() != model.num_keypoints {
            return Err(Error::InvalidInput(format!(
                "template {} has {} keypoints, model expects {}",
                t.name,
                t.keypoints.len(),
                model.num_keypoints
            )));
        }
    }
    Ok(())
}

fn mean_center_error(net: &PopupNetwork, prepared: &[Vec<Point3>], samples: &[TrainSample]) -> Result<f64> {
    let mut total = 0.0;
    for (p, s) in prepared.iter().zip(samples) {
        let mut g = Graph::with_params(net.params());
        let x = g.constant(Tensor::from_points(p));
        let (c, _) = net.encode_global_graph(&mut g, x)?;
        total += crate::geometry::dist2(&g.value(c).to_points()[0], &s.gt_center).sqrt();
    }
    Ok(total / samples.len() as f64)
}

/// Trains a network from scratch. With `out` set, writes `train_log.ndjson`,
/// `last.ckpt` after every epoch and `model.ckpt` at the end. A non-finite
/// loss or gradient aborts with [`Error::Diverged`] naming the last good
/// checkpoint.
pub fn train(model: &ModelConfig, cfg: &TrainConfig, data: &TrainData, out: Option<&Path>) -> Result<TrainOutcome> {
    model.validate()?;
    cfg.validate()?;
    check_data(model, data)?;
    let alpha = cfg.effective_alpha(model);
    let mut net = PopupNetwork::new(model.clone(), cfg.seed)?;
    let prepare = |s: &[TrainSample]| -> Result<Vec<Vec<Point3>>> {
        s.iter().map(|s| Ok(net.prepare(s.cloud.points())?.points)).collect()
    };
    let train_pts = prepare(&data.train)?;
    let val_idx: Vec<usize> = if cfg.val_frames == 0 || cfg.val_frames >= data.val.len() {
        (0..data.val.len()).collect()
    } else {
        (0..cfg.val_frames).map(|i| i * data.val.len() / cfg.val_frames).collect()
    };
    let val: Vec<TrainSample> = val_idx.iter().map(|&i| data.val[i].clone()).collect();
    let val_pts = prepare(&val)?;

    let mut bundle = ModelBundle {
        network: net.clone(),
        train: cfg.clone(),
        templates: data.templates.clone(),
        epoch: 0,
        optimizer: None,
    };
    let last_path = out.map(|o| o.join("last.ckpt")).unwrap_or_default();
    let mut log_text = String::new();
    if let Some(o) = out {
        std::fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
        bundle.save(&last_path)?;
    }

    let mut adam = AdamState::new(net.params());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.lr_at(epoch);
        let gt_center = cfg.uses_gt_center(epoch);
        let epoch_stream = (epoch as u64 + 1) << 32;
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.seed, epoch_stream));
        let diverged = || Error::Diverged {
            epoch,
            checkpoint: last_path.clone(),
        };

        let (mut sum_total, mut sum_c, mut sum_off, mut sum_cls) = (0.0, 0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = net.params().zeros_like();
            for &i in batch {
                let sample = &data.train[i];
                let mut rng = stream(cfg.seed, epoch_stream + 1 + i as u64);
                let aug = augment_sample(cfg.aug_translation, cfg.aug_rotation_deg, &mut rng);
                let canonical = &data.templates[sample.class_id].keypoints;
                let mut g = Graph::with_params(net.params());
                let lv = popup_loss_graph(&net, &mut g, &train_pts[i], sample, canonical, &aug, gt_center, alpha, false)
                    .map_err(|e| if e.is_numeric() { diverged() } else { e })?;
                let total = g.value(lv.total).item();
                if !total.is_finite() {
                    return Err(diverged());
                }
                sum_total += total;
                sum_c += g.value(lv.center).item();
                sum_off += g.value(lv.offset).item();
                sum_cls += lv.class.map_or(0.0, |c| g.value(c).item());
                g.backward_scalar(lv.total)?.accumulate_into(&mut grads);
            }
            let inv = 1.0 / batch.len() as f64;
            for (id, gt) in net.params().ids().zip(grads.iter_mut()) {
                let p = net.params().get(id).data();
                for (gv, pv) in gt.data_mut().iter_mut().zip(p) {
                    *gv = *gv * inv + cfg.weight_decay * pv;
                }
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = grads.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
                if norm > clip {
                    grads.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= clip / norm));
                }
            }
            adam_step(net.params_mut(), &grads, &mut adam, lr).map_err(|e| if e.is_numeric() { diverged() } else { e })?;
        }

        let n = data.train.len() as f64;
        let val_center_error = if val.is_empty() {
            None
        } else {
            Some(mean_center_error(&net, &val_pts, &val)?)
        };
        let record = EpochRecord {
            epoch,
            lr,
            gt_center,
            loss: sum_total / n,
            loss_center: sum_c / n,
            loss_offset: sum_off / n,
            loss_class: model.class_head.then_some(sum_cls / n),
            val_center_error,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {:.5} center {:.5} offset {:.5} val E_c {:?} ({:.1}s)",
            record.loss, record.loss_center, record.loss_offset, record.val_center_error, record.seconds
        );
        bundle.network = net.clone();
        bundle.epoch = epoch + 1;
        bundle.optimizer = Some(adam.clone());
        if let Some(o) = out {
            log_text.push_str(&serde_json::to_string(&record).expect("record serialises"));
            log_text.push('\n');
            write_atomic(&o.join("train_log.ndjson"), log_text.as_bytes())?;
            bundle.save(&last_path)?;
        }
        log.push(record);
    }
    if let Some(o) = out {
        bundle.save(&o.join("model.ckpt"))?;
    }
    Ok(TrainOutcome { bundle, log })
}

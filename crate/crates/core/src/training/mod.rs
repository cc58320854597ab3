//! Losses, augmentation, learning-rate schedule and the training loop.

mod bundle;
mod trainer;

pub use bundle::{ModelBundle, TemplateRecord};
pub use trainer::{popup_loss_graph, train, EpochRecord, LossVars, TrainData, TrainOutcome};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::geometry::{dist2, Point3, PointCloud, RigidTransform};
use crate::model::{ModelConfig, ObjectTemplate, SaLevel};

/// Optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Epochs at whose start the learning rate is divided by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    /// Epochs during which keypoints are placed at the ground-truth center.
    pub warmup_epochs_gt_center: usize,
    /// Offset loss weight; unset means 10, or 100 with the class head.
    pub alpha: Option<f64>,
    pub batch_size: usize,
    pub seed: u64,
    /// Half-width of the uniform placement shift per axis (m).
    pub aug_translation: f64,
    /// Largest placement rotation angle (degrees) about a uniform axis.
    pub aug_rotation_deg: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; unset disables clipping.
    pub grad_clip: Option<f64>,
    /// Training sequences are strided down to this frame rate.
    pub train_fps: f64,
    /// Limit on validation frames scored per epoch (evenly spaced); 0 scores all.
    pub val_frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 1e-4,
            lr_decay_epochs: vec![30, 40],
            lr_decay_factor: 10.0,
            warmup_epochs_gt_center: 20,
            alpha: None,
            batch_size: 16,
            seed: 0,
            aug_translation: 0.05,
            aug_rotation_deg: 15.0,
            weight_decay: 0.0,
            grad_clip: None,
            train_fps: 10.0,
            val_frames: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs <= self.warmup_epochs_gt_center {
            return bad("epochs must exceed the warm-up epochs");
        }
        if self.lr_decay_epochs.iter().any(|&e| e >= self.epochs) {
            return bad("every decay epoch must be below the epoch count");
        }
        if !(self.lr > 0.0 && self.lr_decay_factor > 0.0) {
            return bad("learning rate and decay factor must be positive");
        }
        if matches!(self.alpha, Some(a) if !(a > 0.0)) {
            return bad("alpha must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.aug_translation >= 0.0 && self.aug_rotation_deg >= 0.0 && self.weight_decay >= 0.0) {
            return bad("augmentation ranges and weight decay must be non-negative");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("gradient clip must be positive");
        }
        if !(self.train_fps > 0.0) {
            return bad("train_fps must be positive");
        }
        Ok(())
    }

    pub fn effective_alpha(&self, model: &ModelConfig) -> f64 {
        self.alpha.unwrap_or(if model.class_head { 100.0 } else { 10.0 })
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr / self.lr_decay_factor.powi(decays as i32)
    }

    pub fn uses_gt_center(&self, epoch: usize) -> bool {
        epoch < self.warmup_epochs_gt_center
    }
}

/// Data, model and training settings in one file, one section each.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Reduced sizes that train in minutes on one CPU core: 1024-point
    /// frames, 64 keypoints, narrow layers and 30 epochs. The class head is
    /// on so one model serves pose and classification.
    pub fn desk() -> Self {
        let data = DataConfig {
            frames_per_sequence: 30,
            points_per_frame: 1024,
            num_keypoints: 64,
            ..DataConfig::default()
        };
        let model = ModelConfig {
            input_points: 512,
            num_keypoints: 64,
            global_levels: vec![SaLevel::new(128, 16, &[32, 32, 64]), SaLevel::new(32, 16, &[64, 128])],
            global_widths: vec![256],
            center_widths: vec![128, 64],
            local_k: 256,
            local_level: SaLevel::new(64, 16, &[32, 64]),
            local_widths: vec![64],
            decoder_width: 128,
            posenc_bands: 4,
            class_head: true,
            class_widths: vec![64],
            direct_widths: vec![64, 64],
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            epochs: 30,
            lr: 1e-3,
            batch_size: 2,
            lr_decay_epochs: vec![20, 25],
            warmup_epochs_gt_center: 10,
            val_frames: 8,
            ..TrainConfig::default()
        };
        Self { data, model, train }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.num_classes != self.data.classes.len() {
            return Err(Error::Config(format!(
                "model has {} classes, data has {}",
                self.model.num_classes,
                self.data.classes.len()
            )));
        }
        if self.model.num_keypoints != self.data.num_keypoints {
            return Err(Error::Config(format!(
                "model expects {} keypoints, data has {}",
                self.model.num_keypoints, self.data.num_keypoints
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

/// One supervised frame: a human cloud and its object's posed keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub cloud: PointCloud,
    pub class_id: usize,
    pub gt_center: Point3,
    pub gt_keypoints: Vec<Point3>,
}

impl TrainSample {
    pub fn new(cloud: PointCloud, class_id: usize, gt: &RigidTransform, template: &ObjectTemplate) -> Result<Self> {
        if template.class_id != class_id {
            return Err(Error::InvalidInput(format!(
                "template {} is for class {}, sample is class {class_id}",
                template.name, template.class_id
            )));
        }
        Ok(Self {
            cloud,
            class_id,
            gt_center: gt.translation_array(),
            gt_keypoints: gt.apply_all(&template.keypoints),
        })
    }

    /// Offsets that move keypoints placed at `center_used` onto the ground truth.
    pub fn gt_offsets(&self, placed: &[Point3], center_used: Point3) -> Result<Vec<Point3>> {
        if placed.len() != self.gt_keypoints.len() {
            return Err(Error::InvalidInput(format!(
                "{} placed keypoints for {} ground-truth keypoints",
                placed.len(),
                self.gt_keypoints.len()
            )));
        }
        Ok(self
            .gt_keypoints
            .iter()
            .zip(placed)
            .map(|(g, k)| [0, 1, 2].map(|a| g[a] - k[a] - center_used[a]))
            .collect())
    }
}

/// Random perturbation of where the canonical keypoints are placed: a
/// rotation about the placement center and a shift of that center. The
/// human cloud and the supervision targets are left as they are, so the
/// decoder learns to correct center and orientation errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub translation: Point3,
    pub rotation: Matrix3<f64>,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: Matrix3::identity(),
        }
    }
}

impl Augmentation {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    /// Placement center for a given base center (ground truth or predicted).
    pub fn placement_center(&self, base: Point3) -> Point3 {
        [0, 1, 2].map(|a| base[a] + self.translation[a])
    }

    /// Canonical keypoints rotated about the origin (the placement center).
    pub fn placed_keypoints(&self, canonical: &[Point3]) -> Vec<Point3> {
        canonical
            .iter()
            .map(|k| {
                let v = self.rotation * Vector3::from(*k);
                [v.x, v.y, v.z]
            })
            .collect()
    }
}

/// Draws a placement perturbation: each shift component uniform in
/// `[-translation, translation]`, a uniform axis and an angle uniform in
/// `[-max_deg, max_deg]`. Zero ranges give the identity exactly.
pub fn augment_sample<R: Rng + ?Sized>(translation: f64, max_deg: f64, rng: &mut R) -> Augmentation {
    let mut aug = Augmentation::default();
    if translation > 0.0 {
        aug.translation = [(); 3].map(|_| rng.gen_range(-translation..=translation));
    }
    if max_deg > 0.0 {
        let axis: [f64; 3] = UnitSphere.sample(rng);
        let angle = rng.gen_range(-max_deg..=max_deg).to_radians();
        let axis = Unit::new_normalize(Vector3::from(axis));
        aug.rotation = *Rotation3::from_axis_angle(&axis, angle).matrix();
    }
    aug
}

/// Squared distance between predicted and true center.
pub fn loss_center(pred: &Point3, gt: &Point3) -> f64 {
    dist2(pred, gt)
}

/// Squared Frobenius norm of the offset difference.
pub fn loss_offset(pred: &[Point3], gt: &[Point3]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "{} predicted offsets for {} targets",
            pred.len(),
            gt.len()
        )));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| dist2(p, g)).sum())
}

pub fn total_loss(l_center: f64, l_offset: f64, l_class: Option<f64>, alpha: f64) -> f64 {
    l_center + alpha * l_offset + l_class.unwrap_or(0.0)
}

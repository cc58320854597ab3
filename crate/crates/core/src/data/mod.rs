//! Synthetic human-object interaction data, its on-disk layout, and frame
//! sequences.

mod figure;
mod store;
pub mod templates;

pub use figure::{InteractionMode, Performance, Pose, SurfaceLayout};
pub use store::{
    generate_synthetic, load_dataset, read_pose, Dataset, DatasetManifest, SequenceEntry, Split, Splits, TemplateEntry,
    MANIFEST_VERSION,
};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point3, PointCloud, RigidTransform};
use crate::model::ObjectTemplate;

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Object classes; each name selects a template and an interaction mode
    /// (`box`, `stick`, `ball`, `board`).
    pub classes: Vec<String>,
    pub num_sequences: usize,
    pub frames_per_sequence: usize,
    pub fps: f64,
    pub points_per_frame: usize,
    pub num_keypoints: usize,
    pub train_sequences: usize,
    pub val_sequences: usize,
    pub test_sequences: usize,
    /// Training sequences are strided down to this rate.
    pub train_fps: f64,
    /// Half-width of the uniform figure placement on the ground (m).
    pub placement_range: f64,
    pub yaw_range_deg: f64,
    /// Standard deviation of the point shell around each body part (m).
    pub shell_sigma: f64,
    /// Per-frame sensor noise (m).
    pub sensor_noise: f64,
    /// Maximum distance between an object's contact point and its body anchor (m).
    pub interaction_distance: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: ["box", "stick", "ball", "board"].map(String::from).to_vec(),
            num_sequences: 40,
            frames_per_sequence: 60,
            fps: 30.0,
            points_per_frame: 9000,
            num_keypoints: 1500,
            train_sequences: 28,
            val_sequences: 4,
            test_sequences: 8,
            train_fps: 10.0,
            placement_range: 0.8,
            yaw_range_deg: 30.0,
            shell_sigma: 0.01,
            sensor_noise: 0.003,
            interaction_distance: 0.05,
        }
    }
}

/// Template mesh and interaction mode of a known class name.
pub fn class_spec(name: &str) -> Result<(InteractionMode, Mesh)> {
    Ok(match name {
        "box" => (InteractionMode::SeatedOn, templates::box_mesh([0.42, 0.42, 0.42], 4)),
        "stick" => (InteractionMode::HandHeldRight, templates::box_mesh([0.035, 0.9, 0.035], 6)),
        "ball" => (InteractionMode::HandHeldLeft, templates::icosphere(0.07, 2)),
        "board" => (InteractionMode::TwoHanded, templates::box_mesh([0.7, 0.025, 0.45], 5)),
        other => return Err(Error::Config(format!("unknown object class '{other}'"))),
    })
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes.len() < 2 {
            return bad("need at least 2 object classes".into());
        }
        let mut modes = Vec::new();
        for c in &self.classes {
            let (mode, _) = class_spec(c)?;
            if !modes.contains(&mode) {
                modes.push(mode);
            }
        }
        if modes.len() < 2 {
            return bad("need at least 2 interaction modes".into());
        }
        if self.train_sequences + self.val_sequences + self.test_sequences != self.num_sequences {
            return bad(format!(
                "split sizes {} + {} + {} do not add up to {} sequences",
                self.train_sequences, self.val_sequences, self.test_sequences, self.num_sequences
            ));
        }
        if self.train_sequences == 0 || self.frames_per_sequence == 0 || self.points_per_frame == 0 {
            return bad("train split, frames and points must be non-empty".into());
        }
        if !(self.fps > 0.0 && self.train_fps > 0.0 && self.train_fps <= self.fps) {
            return bad("need 0 < train_fps <= fps".into());
        }
        if self.num_keypoints < 3 {
            return bad("need at least 3 keypoints".into());
        }
        if !(self.shell_sigma >= 0.0 && self.sensor_noise >= 0.0 && self.interaction_distance > 0.0) {
            return bad("noise levels must be non-negative and the interaction distance positive".into());
        }
        Ok(())
    }
}

/// Ground-truth object pose and class of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub class_id: usize,
    pub transform: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub cloud: PointCloud,
    pub gt: Option<GroundTruth>,
    /// Frame index within the source sequence.
    pub index: usize,
}

/// Ordered frames at a uniform rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    pub fps: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self> {
        if frames.is_empty() || !(fps > 0.0) {
            return Err(Error::InvalidInput("a sequence needs at least one frame and a positive rate".into()));
        }
        Ok(Self { frames, fps })
    }
}

/// Keeps every `round(source / target)`-th frame starting with the first.
/// Non-integer ratios round to the nearest stride (halves round up); the
/// resulting rate is `source / stride`.
pub fn downsample_sequence(seq: &FrameSequence, target_fps: f64) -> Result<FrameSequence> {
    if !(target_fps > 0.0) || target_fps > seq.fps {
        return Err(Error::InvalidInput(format!(
            "cannot resample {} fps to {target_fps} fps",
            seq.fps
        )));
    }
    let stride = ((seq.fps / target_fps).round() as usize).max(1);
    Ok(FrameSequence {
        frames: seq.frames.iter().step_by(stride).cloned().collect(),
        fps: seq.fps / stride as f64,
    })
}

/// One generated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub sequence: usize,
    pub frame: usize,
    pub cloud: Vec<Point3>,
    pub class_id: usize,
    pub mode: InteractionMode,
    pub transform: RigidTransform,
    /// World position of the body anchor the object is attached to.
    pub anchor: Point3,
    /// World position of the object's contact point (its center for held
    /// objects, the top of the seat when sat on).
    pub contact: Point3,
}

impl SyntheticScene {
    pub fn contact_distance(&self) -> f64 {
        crate::geometry::dist2(&self.anchor, &self.contact).sqrt()
    }
}

/// Deterministic scene generator. Figure surface parameters, per-sequence
/// motion and per-frame noise come from separate seeded streams, so scenes
/// are identical across point counts.
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    config: DataConfig,
    seed: u64,
    layout: SurfaceLayout,
    templates: Vec<ObjectTemplate>,
    modes: Vec<InteractionMode>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const LAYOUT_STREAM: u64 = 1;
const SEQUENCE_STREAM: u64 = 1 << 32;

impl SyntheticGenerator {
    pub fn new(config: DataConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = SurfaceLayout::new(config.points_per_frame, config.shell_sigma, &mut stream(seed, LAYOUT_STREAM));
        let mut templates = Vec::new();
        let mut modes = Vec::new();
        for (id, name) in config.classes.iter().enumerate() {
            let (mode, mesh) = class_spec(name)?;
            let kp_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(id as u64);
            templates.push(ObjectTemplate::new(id, name.clone(), mesh, config.num_keypoints, kp_seed)?);
            modes.push(mode);
        }
        Ok(Self {
            config,
            seed,
            layout,
            templates,
            modes,
        })
    }

    pub fn config(&self) -> &DataConfig {
        &self.config
    }

    pub fn templates(&self) -> &[ObjectTemplate] {
        &self.templates
    }

    pub fn class_of(&self, sequence: usize) -> usize {
        sequence % self.config.classes.len()
    }

    pub fn sequence(&self, sequence: usize) -> Result<Vec<SyntheticScene>> {
        let class_id = self.class_of(sequence);
        let mode = self.modes[class_id];
        let mut rng = stream(self.seed, SEQUENCE_STREAM + sequence as u64);
        let perf = Performance::sample(
            mode,
            self.config.placement_range,
            self.config.yaw_range_deg.to_radians(),
            &mut rng,
        );
        let noise = Normal::new(0.0, self.config.sensor_noise.max(0.0)).expect("finite noise");
        let template = &self.templates[class_id];
        let half_height = template.mesh.vertices.iter().map(|v| v[1]).fold(0.0f64, f64::max);
        let (scale, to_world) = perf.body_to_world();
        let world = |v: Vector3<f64>| to_world.apply(&[scale * v.x, scale * v.y, scale * v.z]);

        let mut out = Vec::with_capacity(self.config.frames_per_sequence);
        for frame in 0..self.config.frames_per_sequence {
            let t = frame as f64 / self.config.fps;
            let pose = perf.pose(t);
            let sk = pose.skeleton();
            let cloud: Vec<Point3> = self
                .layout
                .points(&sk)
                .into_iter()
                .map(|p| {
                    let w = world(Vector3::from(p));
                    if self.config.sensor_noise > 0.0 {
                        w.map(|x| x + noise.sample(&mut rng))
                    } else {
                        w
                    }
                })
                .collect();
            let (obj_body, anchor_body) = perf.object_in_body(&pose, &sk, half_height / scale);
            let center = world(obj_body.translation);
            let rotation = to_world.rotation * obj_body.rotation;
            let transform = RigidTransform::new(rotation, Vector3::from(center));
            let contact = match mode {
                InteractionMode::SeatedOn => transform.apply(&[0.0, half_height, 0.0]),
                _ => center,
            };
            let scene = SyntheticScene {
                sequence,
                frame,
                cloud,
                class_id,
                mode,
                transform,
                anchor: world(anchor_body),
                contact,
            };
            if scene.contact_distance() > self.config.interaction_distance {
                return Err(Error::Config(format!(
                    "sequence {sequence} frame {frame}: object is {:.3} m from its anchor",
                    scene.contact_distance()
                )));
            }
            out.push(scene);
        }
        Ok(out)
    }

    /// Scenes as a frame sequence with ground truth.
    pub fn frame_sequence(&self, sequence: usize) -> Result<FrameSequence> {
        let frames = self
            .sequence(sequence)?
            .into_iter()
            .map(|s| {
                Ok(Frame {
                    cloud: PointCloud::new(s.cloud)?,
                    gt: Some(GroundTruth {
                        class_id: s.class_id,
                        transform: s.transform,
                    }),
                    index: s.frame,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FrameSequence::new(frames, self.config.fps)
    }
}

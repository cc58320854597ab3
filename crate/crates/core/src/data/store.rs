use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataConfig, Frame, FrameSequence, GroundTruth, InteractionMode, SyntheticGenerator};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::io::{read_obj, read_ply, write_atomic, write_obj, write_ply, PlyData, PlyEncoding};
use crate::model::ObjectTemplate;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: usize,
    pub class_id: usize,
    pub mode: InteractionMode,
    pub frames: usize,
    /// Raw little-endian f64 coordinates, frame-major.
    pub cloud_file: String,
    pub cloud_sha256: String,
    pub gt_file: String,
    pub gt_sha256: String,
    /// First frame as PLY for external tools.
    pub preview_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub class_id: usize,
    pub name: String,
    pub mesh_file: String,
    pub mesh_sha256: String,
    pub keypoints_file: String,
    pub keypoints_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config: DataConfig,
    pub classes: Vec<String>,
    pub fps: f64,
    pub points_per_frame: usize,
    pub splits: Splits,
    pub sequences: Vec<SequenceEntry>,
    pub templates: Vec<TemplateEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FramePose {
    frame: usize,
    rotation: [f64; 9],
    translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceTruth {
    class_id: usize,
    frames: Vec<FramePose>,
}

#[derive(Debug, Deserialize)]
struct SinglePose {
    class_id: Option<usize>,
    rotation: [f64; 9],
    translation: [f64; 3],
}

/// Reads an object pose from JSON: either one record with a row-major
/// `rotation` and a `translation` (an exported estimate qualifies), or a
/// sequence ground-truth file, from which `frame` picks the entry.
pub fn read_pose(path: &Path, frame: Option<usize>) -> Result<(Option<usize>, RigidTransform)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    let parse = |v: serde_json::Value| -> Result<SinglePose> {
        serde_json::from_value(v).map_err(|e| Error::format(path, e.to_string()))
    };
    let pose = if value.get("frames").is_some() {
        let truth: SequenceTruth = serde_json::from_value(value).map_err(|e| Error::format(path, e.to_string()))?;
        let want = frame.ok_or_else(|| Error::format(path, "sequence file: a frame index is required"))?;
        let p = truth
            .frames
            .into_iter()
            .find(|p| p.frame == want)
            .ok_or_else(|| Error::format(path, format!("no frame {want}")))?;
        SinglePose {
            class_id: Some(truth.class_id),
            rotation: p.rotation,
            translation: p.translation,
        }
    } else {
        parse(value)?
    };
    let tf = RigidTransform::from_row_major(pose.rotation, pose.translation);
    if !tf.is_valid(1e-6) {
        return Err(Error::format(path, "rotation is not orthonormal with det +1"));
    }
    Ok((pose.class_id, tf))
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serialisable");
    v.push(b'\n');
    v
}

/// Generates the dataset under `out` and writes `out/manifest.json`.
pub fn generate_synthetic(config: &DataConfig, seed: u64, out: &Path) -> Result<DatasetManifest> {
    let generator = SyntheticGenerator::new(config.clone(), seed)?;
    let mut templates = Vec::new();
    for t in generator.templates() {
        let mesh_file = format!("templates/{}.obj", t.name);
        write_obj(&out.join(&mesh_file), &t.mesh)?;
        let keypoints_file = format!("templates/{}_keypoints.ply", t.name);
        let kp = PlyData {
            points: t.keypoints.clone(),
            ..Default::default()
        };
        write_ply(&out.join(&keypoints_file), &kp, PlyEncoding::BinaryLittleEndian)?;
        templates.push(TemplateEntry {
            class_id: t.class_id,
            name: t.name.clone(),
            mesh_sha256: file_sha(&out.join(&mesh_file))?,
            mesh_file,
            keypoints_sha256: file_sha(&out.join(&keypoints_file))?,
            keypoints_file,
        });
    }

    let mut sequences = Vec::new();
    for id in 0..config.num_sequences {
        let scenes = generator.sequence(id)?;
        let mut raw = Vec::with_capacity(scenes.len() * config.points_per_frame * 24);
        for s in &scenes {
            for p in &s.cloud {
                for v in p {
                    raw.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let truth = SequenceTruth {
            class_id: generator.class_of(id),
            frames: scenes
                .iter()
                .map(|s| FramePose {
                    frame: s.frame,
                    rotation: s.transform.rotation_row_major(),
                    translation: s.transform.translation_array(),
                })
                .collect(),
        };
        let gt = to_json(&truth);
        let cloud_file = format!("sequences/seq_{id:04}.f64");
        let gt_file = format!("sequences/seq_{id:04}.json");
        let preview_file = format!("sequences/seq_{id:04}_frame0.ply");
        write_atomic(&out.join(&cloud_file), &raw)?;
        write_atomic(&out.join(&gt_file), &gt)?;
        let preview = PlyData {
            points: scenes[0].cloud.clone(),
            ..Default::default()
        };
        write_ply(&out.join(&preview_file), &preview, PlyEncoding::BinaryLittleEndian)?;
        sequences.push(SequenceEntry {
            id,
            class_id: generator.class_of(id),
            mode: scenes[0].mode,
            frames: scenes.len(),
            cloud_sha256: sha_hex(&raw),
            cloud_file,
            gt_sha256: sha_hex(&gt),
            gt_file,
            preview_file,
        });
    }

    let (tr, va) = (config.train_sequences, config.val_sequences);
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed,
        config: config.clone(),
        classes: config.classes.clone(),
        fps: config.fps,
        points_per_frame: config.points_per_frame,
        splits: Splits {
            train: (0..tr).collect(),
            val: (tr..tr + va).collect(),
            test: (tr + va..config.num_sequences).collect(),
        },
        sequences,
        templates,
    };
    write_atomic(&out.join("manifest.json"), &to_json(&manifest))?;
    Ok(manifest)
}

fn file_sha(path: &Path) -> Result<String> {
    Ok(sha_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn read_checked(path: &Path, sha: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if sha_hex(&bytes) != sha {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    Ok(bytes)
}

/// A dataset on disk. Templates load eagerly; frames load per sequence.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub templates: Vec<ObjectTemplate>,
}

/// Reads and validates a manifest (or the directory containing one).
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (manifest_path, root) = if path.is_dir() {
        (path.join("manifest.json"), path.to_path_buf())
    } else {
        (path.to_path_buf(), path.parent().unwrap_or(Path::new(".")).to_path_buf())
    };
    let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    validate_manifest(&manifest).map_err(|e| Error::format(&manifest_path, e))?;

    let mut templates = Vec::new();
    for t in &manifest.templates {
        let mesh_path = root.join(&t.mesh_file);
        read_checked(&mesh_path, &t.mesh_sha256)?;
        let mesh = read_obj(&mesh_path)?;
        let kp_path = root.join(&t.keypoints_file);
        read_checked(&kp_path, &t.keypoints_sha256)?;
        let keypoints = read_ply(&kp_path)?.points;
        if keypoints.len() != manifest.config.num_keypoints {
            return Err(Error::format(
                &kp_path,
                format!("{} keypoints, manifest says {}", keypoints.len(), manifest.config.num_keypoints),
            ));
        }
        templates.push(ObjectTemplate {
            class_id: t.class_id,
            name: t.name.clone(),
            mesh,
            keypoints,
        });
    }
    Ok(Dataset {
        manifest,
        root,
        templates,
    })
}

fn validate_manifest(m: &DatasetManifest) -> std::result::Result<(), String> {
    if m.version != MANIFEST_VERSION {
        return Err(format!("unsupported manifest version {}", m.version));
    }
    m.config.validate().map_err(|e| e.to_string())?;
    let n = m.sequences.len();
    let mut seen = BTreeSet::new();
    for (name, ids) in [("train", &m.splits.train), ("val", &m.splits.val), ("test", &m.splits.test)] {
        for &id in ids.iter() {
            if id >= n {
                return Err(format!("{name} split references missing sequence {id}"));
            }
            if !seen.insert(id) {
                return Err(format!("sequence {id} appears in more than one split"));
            }
        }
    }
    for (i, s) in m.sequences.iter().enumerate() {
        if s.id != i || s.class_id >= m.classes.len() || s.frames == 0 {
            return Err(format!("sequence entry {i} is inconsistent"));
        }
    }
    if m.templates.len() != m.classes.len() || m.templates.iter().enumerate().any(|(i, t)| t.class_id != i) {
        return Err("templates do not match the class list".into());
    }
    if m.points_per_frame == 0 || !(m.fps > 0.0) {
        return Err("points per frame and fps must be positive".into());
    }
    Ok(())
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.manifest.classes.len()
    }

    pub fn template(&self, class_id: usize) -> Result<&ObjectTemplate> {
        self.templates
            .get(class_id)
            .ok_or_else(|| Error::InvalidInput(format!("no template for class {class_id}")))
    }

    /// Loads one sequence, verifying checksums and sizes.
    pub fn sequence(&self, id: usize) -> Result<FrameSequence> {
        let entry = self
            .manifest
            .sequences
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("no sequence {id}")))?;
        let cloud_path = self.root.join(&entry.cloud_file);
        let raw = read_checked(&cloud_path, &entry.cloud_sha256)?;
        let n = self.manifest.points_per_frame;
        if raw.len() != entry.frames * n * 24 {
            return Err(Error::format(
                &cloud_path,
                format!("{} bytes, expected {} frames x {n} points", raw.len(), entry.frames),
            ));
        }
        let gt_path = self.root.join(&entry.gt_file);
        let gt_bytes = read_checked(&gt_path, &entry.gt_sha256)?;
        let truth: SequenceTruth =
            serde_json::from_slice(&gt_bytes).map_err(|e| Error::format(&gt_path, e.to_string()))?;
        if truth.frames.len() != entry.frames || truth.class_id != entry.class_id {
            return Err(Error::format(&gt_path, "ground truth does not match the manifest entry"));
        }
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut frames = Vec::with_capacity(entry.frames);
        for (f, pose) in truth.frames.iter().enumerate() {
            let pts: Vec<Point3> = values[f * n * 3..(f + 1) * n * 3]
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect();
            let cloud = PointCloud::new(pts).map_err(|e| Error::format(&cloud_path, e.to_string()))?;
            let transform = RigidTransform::from_row_major(pose.rotation, pose.translation);
            if !transform.is_valid(1e-9) {
                return Err(Error::format(&gt_path, format!("frame {f} has an invalid rotation")));
            }
            frames.push(Frame {
                cloud,
                gt: Some(GroundTruth {
                    class_id: truth.class_id,
                    transform,
                }),
                index: pose.frame,
            });
        }
        FrameSequence::new(frames, self.manifest.fps)
    }

    pub fn split_ids(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.manifest.splits.train,
            Split::Val => &self.manifest.splits.val,
            Split::Test => &self.manifest.splits.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

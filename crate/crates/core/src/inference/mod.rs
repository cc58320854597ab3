//! Pose estimation from a human cloud: per-frame pop-up, template fitting,
//! temporal smoothing of centers and sequence-level class voting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::geometry::{procrustes_align, Mesh, Point3, PointCloud, RigidTransform};
use crate::io::{write_atomic, write_obj, write_ply, PlyData, PlyEncoding};
use crate::model::{ForwardOptions, ObjectTemplate, PopupNetwork};

/// Default smoothing width in frames.
pub const DEFAULT_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    /// Source frame index within a sequence.
    pub frame: Option<usize>,
    pub class_used: usize,
    pub class_distribution: Option<Vec<f64>>,
    /// Center the keypoints were placed at (smoothed in sequences).
    pub center: Point3,
    /// Raw output of the center head.
    pub predicted_center: Point3,
    pub offsets: Vec<Point3>,
    pub transform: RigidTransform,
    pub posed_keypoints: Vec<Point3>,
    pub posed_template: Mesh,
    /// The keypoint alignment had no unique rotation.
    pub non_unique: bool,
    /// The local neighbourhood asked for more points than the cloud had.
    pub local_clamped: bool,
}

/// Rigid fit of the canonical keypoints onto `keypoints + center + offsets`,
/// applied to the full template mesh. Returns the transform, the posed mesh
/// and whether the rotation was non-unique.
pub fn fit_template(
    canonical: &[Point3],
    center: Point3,
    offsets: &[Point3],
    template: &ObjectTemplate,
) -> Result<(RigidTransform, Mesh, bool)> {
    if canonical.len() != offsets.len() {
        return Err(Error::InvalidInput(format!(
            "{} keypoints but {} offsets",
            canonical.len(),
            offsets.len()
        )));
    }
    let target: Vec<Point3> = canonical
        .iter()
        .zip(offsets)
        .map(|(k, d)| [0, 1, 2].map(|a| k[a] + center[a] + d[a]))
        .collect();
    let al = procrustes_align(canonical, &target)?;
    let mesh = template.mesh.transformed(&al.transform);
    Ok((al.transform, mesh, al.non_unique))
}

/// Per-axis Gaussian smoothing over frames, kernel truncated at `4 sigma`
/// and renormalised where it overhangs the sequence ends.
pub fn smooth_sequence(centers: &[Point3], sigma: f64) -> Result<Vec<Point3>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("smoothing sigma must be positive, got {sigma}")));
    }
    if centers.is_empty() {
        return Err(Error::InvalidInput("nothing to smooth".into()));
    }
    let radius = (4.0 * sigma).ceil() as usize;
    let weights: Vec<f64> = (0..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let n = centers.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            let mut acc = [0.0; 3];
            let mut total = 0.0;
            for (j, c) in centers.iter().enumerate().take(hi + 1).skip(lo) {
                let w = weights[i.abs_diff(j)];
                total += w;
                for a in 0..3 {
                    acc[a] += w * c[a];
                }
            }
            acc.map(|v| v / total)
        })
        .collect())
}

/// How per-frame class distributions combine into one sequence class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteRule {
    /// Most frequent per-frame argmax; ties go to the larger summed
    /// probability, then the lower class id.
    #[default]
    Majority,
    /// Class with the highest single-frame probability; ties go to the
    /// lower class id.
    MaxScore,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn vote_class(per_frame: &[Vec<f64>], rule: VoteRule) -> Result<usize> {
    let Some(first) = per_frame.first() else {
        return Err(Error::InvalidInput("no class distributions to vote on".into()));
    };
    let c = first.len();
    if c == 0 || per_frame.iter().any(|p| p.len() != c) {
        return Err(Error::InvalidInput("class distributions differ in length".into()));
    }
    match rule {
        VoteRule::Majority => {
            let mut counts = vec![0usize; c];
            let mut mass = vec![0.0; c];
            for p in per_frame {
                counts[argmax(p)] += 1;
                for (m, v) in mass.iter_mut().zip(p) {
                    *m += v;
                }
            }
            let mut best = 0;
            for k in 1..c {
                if counts[k] > counts[best] || (counts[k] == counts[best] && mass[k] > mass[best]) {
                    best = k;
                }
            }
            Ok(best)
        }
        VoteRule::MaxScore => {
            let mut peak = vec![f64::NEG_INFINITY; c];
            for p in per_frame {
                for (m, &v) in peak.iter_mut().zip(p) {
                    *m = m.max(v);
                }
            }
            Ok(argmax(&peak))
        }
    }
}

/// A network with its class templates.
#[derive(Debug, Clone, Copy)]
pub struct Popup<'a> {
    pub net: &'a PopupNetwork,
    pub templates: &'a [ObjectTemplate],
}

impl<'a> Popup<'a> {
    pub fn new(net: &'a PopupNetwork, templates: &'a [ObjectTemplate]) -> Result<Self> {
        let cfg = net.config();
        if templates.len() != cfg.num_classes
            || templates
                .iter()
                .enumerate()
                .any(|(i, t)| t.class_id != i || t.keypoints.len() != cfg.num_keypoints)
        {
            return Err(Error::InvalidInput(format!(
                "templates do not match a network with {} classes and {} keypoints",
                cfg.num_classes, cfg.num_keypoints
            )));
        }
        Ok(Self { net, templates })
    }

    fn template(&self, class_id: usize) -> Result<&'a ObjectTemplate> {
        self.templates
            .get(class_id)
            .ok_or_else(|| Error::InvalidInput(format!("class {class_id} out of range for {} classes", self.templates.len())))
    }

    /// Full pop-up of one cloud for a known class.
    pub fn single(&self, cloud: &PointCloud, class_id: usize) -> Result<PoseEstimate> {
        self.with_center(cloud, class_id, None)
    }

    /// Pop-up with the keypoints placed at `center` instead of the regressed one.
    pub fn with_center(&self, cloud: &PointCloud, class_id: usize, center: Option<Point3>) -> Result<PoseEstimate> {
        let template = self.template(class_id)?;
        let mut opts = ForwardOptions::new(class_id);
        opts.center_override = center;
        let pred = self.net.predict(cloud, &template.keypoints, &opts)?;
        let (transform, posed_template, non_unique) = match pred.direct {
            Some(tf) => (tf, template.mesh.transformed(&tf), false),
            None => fit_template(&template.keypoints, pred.center_used, &pred.offsets, template)?,
        };
        Ok(PoseEstimate {
            frame: None,
            class_used: class_id,
            class_distribution: pred.class_probs,
            center: pred.center_used,
            predicted_center: pred.center,
            offsets: pred.offsets,
            posed_keypoints: transform.apply_all(&template.keypoints),
            transform,
            posed_template,
            non_unique,
            local_clamped: pred.local_clamped,
        })
    }

    /// Class distribution from the class head.
    pub fn classify(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        if !self.net.config().class_head {
            return Err(Error::Config("this model has no class head".into()));
        }
        let (_, f_global) = self.net.encode_global(cloud)?;
        self.net.predict_class(&f_global)
    }

    /// Pop-up with the class taken from the class head.
    pub fn single_predicted_class(&self, cloud: &PointCloud) -> Result<PoseEstimate> {
        let probs = self.classify(cloud)?;
        let mut est = self.single(cloud, argmax(&probs))?;
        est.class_distribution = Some(probs);
        Ok(est)
    }

    /// Per-frame pop-up with one class for the whole sequence (voted when
    /// not given) and centers smoothed over time before the offsets are
    /// decoded. `sigma = None` disables smoothing.
    pub fn sequence(
        &self,
        seq: &FrameSequence,
        sigma: Option<f64>,
        class_id: Option<usize>,
        rule: VoteRule,
    ) -> Result<Vec<PoseEstimate>> {
        let mut dists = None;
        let class_id = match class_id {
            Some(c) => c,
            None => {
                let d = seq
                    .frames
                    .iter()
                    .map(|f| self.classify(&f.cloud))
                    .collect::<Result<Vec<_>>>()?;
                let c = vote_class(&d, rule)?;
                dists = Some(d);
                c
            }
        };
        let raw: Vec<Point3> = seq
            .frames
            .iter()
            .map(|f| Ok(self.net.encode_global(&f.cloud)?.0))
            .collect::<Result<_>>()?;
        let centers = match sigma {
            Some(s) => smooth_sequence(&raw, s)?,
            None => raw,
        };
        seq.frames
            .iter()
            .zip(centers)
            .enumerate()
            .map(|(i, (f, c))| {
                let mut est = self.with_center(&f.cloud, class_id, Some(c))?;
                est.frame = Some(f.index);
                if let Some(d) = &dists {
                    est.class_distribution = Some(d[i].clone());
                }
                Ok(est)
            })
            .collect()
    }
}

/// Structured export of one estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: Option<usize>,
    pub class_id: usize,
    pub class_name: String,
    /// Row-major rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub center: [f64; 3],
    pub class_distribution: Option<Vec<f64>>,
    pub non_unique: bool,
}

impl PoseRecord {
    pub fn new(est: &PoseEstimate, templates: &[ObjectTemplate]) -> Self {
        Self {
            frame: est.frame,
            class_id: est.class_used,
            class_name: templates.get(est.class_used).map(|t| t.name.clone()).unwrap_or_default(),
            rotation: est.transform.rotation_row_major(),
            translation: est.transform.translation_array(),
            center: est.center,
            class_distribution: est.class_distribution.clone(),
            non_unique: est.non_unique,
        }
    }
}

/// Writes `<stem>.json`, `<stem>.obj` (posed template) and
/// `<stem>_keypoints.ply` into `dir`.
pub fn export_estimate(est: &PoseEstimate, templates: &[ObjectTemplate], dir: &Path, stem: &str) -> Result<()> {
    let record = serde_json::to_vec_pretty(&PoseRecord::new(est, templates)).expect("record serialises");
    write_atomic(&dir.join(format!("{stem}.json")), &record)?;
    write_obj(&dir.join(format!("{stem}.obj")), &est.posed_template)?;
    let kp = PlyData {
        points: est.posed_keypoints.clone(),
        ..Default::default()
    };
    write_ply(&dir.join(format!("{stem}_keypoints.ply")), &kp, PlyEncoding::Ascii)
}

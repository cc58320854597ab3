//! Nearest-neighbour retrieval baseline and the evaluation harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{downsample_sequence, Dataset, FrameSequence, GroundTruth, Split};
use crate::error::{Error, Result};
use crate::geometry::{chamfer_distance, dist2, v2v_error, Point3, PointCloud, RigidTransform};
use crate::inference::{vote_class, Popup, VoteRule};
use crate::io::write_atomic;
use crate::model::ObjectTemplate;

/// Training frames with their object poses, for retrieval.
#[derive(Debug, Clone)]
pub struct TrainBank {
    points: usize,
    clouds: Vec<Vec<Point3>>,
    classes: Vec<usize>,
    transforms: Vec<RigidTransform>,
}

/// Result of a bank lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnMatch {
    pub index: usize,
    pub class_id: usize,
    pub transform: RigidTransform,
    /// Frobenius distance between the query and the retrieved cloud.
    pub distance: f64,
}

impl TrainBank {
    /// All clouds must have the same point count and a shared point order.
    pub fn new(entries: Vec<(PointCloud, GroundTruth)>) -> Result<Self> {
        let Some((first, _)) = entries.first() else {
            return Err(Error::InvalidInput("the retrieval bank is empty".into()));
        };
        let points = first.len();
        let mut bank = Self {
            points,
            clouds: Vec::with_capacity(entries.len()),
            classes: Vec::with_capacity(entries.len()),
            transforms: Vec::with_capacity(entries.len()),
        };
        for (i, (cloud, gt)) in entries.into_iter().enumerate() {
            if cloud.len() != points {
                return Err(Error::InvalidInput(format!(
                    "bank entry {i} has {} points, entry 0 has {points}",
                    cloud.len()
                )));
            }
            bank.clouds.push(cloud.into_points());
            bank.classes.push(gt.class_id);
            bank.transforms.push(gt.transform);
        }
        Ok(bank)
    }

    /// Frames of labelled sequences.
    pub fn from_sequences(seqs: &[FrameSequence]) -> Result<Self> {
        let mut entries = Vec::new();
        for seq in seqs {
            for f in &seq.frames {
                let gt = f
                    .gt
                    .ok_or_else(|| Error::InvalidInput(format!("frame {} has no ground truth", f.index)))?;
                entries.push((f.cloud.clone(), gt));
            }
        }
        Self::new(entries)
    }

    /// Bank of every frame in `split`, strided down to `fps` where the
    /// sequences are faster.
    pub fn from_dataset(ds: &Dataset, split: Split, fps: f64) -> Result<Self> {
        let mut seqs = Vec::new();
        for &id in ds.split_ids(split) {
            let seq = ds.sequence(id)?;
            seqs.push(if fps < seq.fps { downsample_sequence(&seq, fps)? } else { seq });
        }
        Self::from_sequences(&seqs)
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn points_per_cloud(&self) -> usize {
        self.points
    }
}

/// Bank entry with the smallest Frobenius distance to `query`, optionally
/// restricted to one class. Ties go to the lowest index.
pub fn nn_retrieve(query: &PointCloud, bank: &TrainBank, class_filter: Option<usize>) -> Result<NnMatch> {
    if query.len() != bank.points {
        return Err(Error::NotApplicable(format!(
            "query has {} points but bank clouds have {}; retrieval needs identical point count and order",
            query.len(),
            bank.points
        )));
    }
    let q = query.points();
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in bank.clouds.iter().enumerate() {
        if class_filter.is_some_and(|k| bank.classes[i] != k) {
            continue;
        }
        let d: f64 = q.iter().zip(c).map(|(a, b)| dist2(a, b)).sum();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    let (d, index) = best.ok_or_else(|| {
        Error::InvalidInput(format!("no bank entries of class {}", class_filter.unwrap_or_default()))
    })?;
    Ok(NnMatch {
        index,
        class_id: bank.classes[index],
        transform: bank.transforms[index],
        distance: d.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// The object class is given; reports E_c and E_v2v.
    GivenClass,
    /// The class is predicted; reports E_c, E_ch and accuracy.
    PredictedClass,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "given-class" => Ok(Self::GivenClass),
            "predicted-class" => Ok(Self::PredictedClass),
            other => Err(Error::InvalidInput(format!(
                "unknown mode '{other}' (expected given-class or predicted-class)"
            ))),
        }
    }
}

/// One evaluation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub sequence: usize,
    pub frame: usize,
    pub cloud: PointCloud,
    pub gt: Option<GroundTruth>,
}

/// Frames of the given split at their stored rate.
pub fn eval_samples(ds: &Dataset, split: Split) -> Result<Vec<EvalSample>> {
    let mut out = Vec::new();
    for &id in ds.split_ids(split) {
        for f in ds.sequence(id)?.frames {
            out.push(EvalSample {
                sequence: id,
                frame: f.index,
                cloud: f.cloud,
                gt: f.gt,
            });
        }
    }
    Ok(out)
}

/// What a method predicted for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPrediction {
    pub class_id: usize,
    pub transform: RigidTransform,
    pub class_distribution: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub sequence: usize,
    pub frame: usize,
    pub gt_class: usize,
    pub pred_class: usize,
    pub e_c: f64,
    pub e_v2v: Option<f64>,
    pub e_ch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub mode: EvalMode,
    pub samples: usize,
    /// Frames without ground truth.
    pub skipped: usize,
    pub e_c: f64,
    pub e_v2v: Option<f64>,
    pub e_ch: Option<f64>,
    /// Per-frame classification accuracy (%).
    pub accuracy: Option<f64>,
    /// Accuracy (%) when every frame takes its sequence's voted class.
    pub sequence_accuracy: Option<f64>,
    pub class_names: Vec<String>,
    /// Rows are ground-truth classes, columns predictions.
    pub confusion: Option<Vec<Vec<usize>>>,
    pub per_sample: Vec<SampleError>,
}

/// Counts of (ground truth, prediction) pairs.
pub fn confusion_matrix(pairs: &[(usize, usize)], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut m = vec![vec![0; num_classes]; num_classes];
    for &(g, p) in pairs {
        if g >= num_classes || p >= num_classes {
            return Err(Error::InvalidInput(format!(
                "pair ({g}, {p}) out of range for {num_classes} classes"
            )));
        }
        m[g][p] += 1;
    }
    Ok(m)
}

/// Row-normalised confusion matrix; empty rows stay zero.
pub fn normalize_confusion(m: &[Vec<usize>]) -> Vec<Vec<f64>> {
    m.iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        })
        .collect()
}

/// Mean of values summed in sorted order, so the result does not depend on
/// sample order.
fn ordered_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scores predictions against ground truth. Object centers are the
/// translations of the posed templates; E_ch compares template vertices.
pub fn evaluate(
    method: &str,
    samples: &[EvalSample],
    predictions: &[EvalPrediction],
    mode: EvalMode,
    templates: &[ObjectTemplate],
) -> Result<MetricsReport> {
    if samples.len() != predictions.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} samples",
            predictions.len(),
            samples.len()
        )));
    }
    let c = templates.len();
    let mut per_sample = Vec::new();
    let mut skipped = 0;
    for (s, p) in samples.iter().zip(predictions) {
        let Some(gt) = s.gt else {
            skipped += 1;
            continue;
        };
        let (gt_t, pred_t) = templates
            .get(gt.class_id)
            .zip(templates.get(p.class_id))
            .ok_or_else(|| Error::InvalidInput(format!("class out of range in frame {}", s.frame)))?;
        let gt_v = gt.transform.apply_all(&gt_t.mesh.vertices);
        let pred_v = p.transform.apply_all(&pred_t.mesh.vertices);
        let e_c = dist2(&p.transform.translation_array(), &gt.transform.translation_array()).sqrt();
        let (e_v2v, e_ch) = match mode {
            EvalMode::GivenClass => {
                if p.class_id != gt.class_id {
                    return Err(Error::InvalidInput(format!(
                        "given-class prediction for frame {} used class {} instead of {}",
                        s.frame, p.class_id, gt.class_id
                    )));
                }
                (Some(v2v_error(&pred_v, &gt_v)?), None)
            }
            EvalMode::PredictedClass => (None, Some(chamfer_distance(&pred_v, &gt_v)?)),
        };
        per_sample.push(SampleError {
            sequence: s.sequence,
            frame: s.frame,
            gt_class: gt.class_id,
            pred_class: p.class_id,
            e_c,
            e_v2v,
            e_ch,
        });
    }
    if per_sample.is_empty() {
        return Err(Error::InvalidInput("no samples with ground truth to evaluate".into()));
    }
    let n = per_sample.len();
    let e_c = ordered_mean(per_sample.iter().map(|e| e.e_c));
    let (mut e_v2v, mut e_ch, mut accuracy, mut sequence_accuracy, mut confusion) = (None, None, None, None, None);
    match mode {
        EvalMode::GivenClass => e_v2v = Some(ordered_mean(per_sample.iter().filter_map(|e| e.e_v2v))),
        EvalMode::PredictedClass => {
            e_ch = Some(ordered_mean(per_sample.iter().filter_map(|e| e.e_ch)));
            let pairs: Vec<(usize, usize)> = per_sample.iter().map(|e| (e.gt_class, e.pred_class)).collect();
            let m = confusion_matrix(&pairs, c)?;
            let correct: usize = (0..c).map(|k| m[k][k]).sum();
            accuracy = Some(100.0 * correct as f64 / n as f64);
            confusion = Some(m);
            sequence_accuracy = voted_accuracy(samples, predictions)?;
        }
    }
    Ok(MetricsReport {
        method: method.to_string(),
        mode,
        samples: n,
        skipped,
        e_c,
        e_v2v,
        e_ch,
        accuracy,
        sequence_accuracy,
        class_names: templates.iter().map(|t| t.name.clone()).collect(),
        confusion,
        per_sample,
    })
}

/// Frame accuracy after replacing each prediction by its sequence's
/// majority vote; `None` when distributions are missing.
fn voted_accuracy(samples: &[EvalSample], predictions: &[EvalPrediction]) -> Result<Option<f64>> {
    let mut by_seq: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for (s, p) in samples.iter().zip(predictions) {
        let Some(d) = &p.class_distribution else { return Ok(None) };
        if s.gt.is_some() {
            by_seq.entry(s.sequence).or_default().push(d.clone());
        }
    }
    let mut votes = BTreeMap::new();
    for (seq, d) in &by_seq {
        votes.insert(*seq, vote_class(d, VoteRule::Majority)?);
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for s in samples {
        if let Some(gt) = s.gt {
            total += 1;
            correct += usize::from(votes[&s.sequence] == gt.class_id);
        }
    }
    Ok(Some(100.0 * correct as f64 / total as f64))
}

/// Root-mean-square distance of ground-truth object centers from their mean.
pub fn center_spread(samples: &[EvalSample]) -> f64 {
    let centers: Vec<Point3> = samples.iter().filter_map(|s| s.gt.map(|g| g.transform.translation_array())).collect();
    let m = crate::geometry::centroid(&centers);
    (centers.iter().map(|c| dist2(c, &m)).sum::<f64>() / centers.len() as f64).sqrt()
}

/// Retrieval predictions; in given-class mode the bank is filtered to the
/// true class.
pub fn nn_predictions(bank: &TrainBank, samples: &[EvalSample], mode: EvalMode) -> Result<Vec<EvalPrediction>> {
    samples
        .iter()
        .map(|s| {
            let filter = match mode {
                EvalMode::GivenClass => s.gt.map(|g| g.class_id),
                EvalMode::PredictedClass => None,
            };
            let m = nn_retrieve(&s.cloud, bank, filter)?;
            Ok(EvalPrediction {
                class_id: m.class_id,
                transform: m.transform,
                class_distribution: None,
            })
        })
        .collect()
}

/// Per-frame pop-up predictions.
pub fn popup_predictions(popup: &Popup, samples: &[EvalSample], mode: EvalMode) -> Result<Vec<EvalPrediction>> {
    samples
        .iter()
        .map(|s| {
            let est = match (mode, s.gt) {
                (EvalMode::GivenClass, Some(g)) => popup.single(&s.cloud, g.class_id)?,
                (EvalMode::GivenClass, None) => popup.single(&s.cloud, 0)?,
                (EvalMode::PredictedClass, _) => popup.single_predicted_class(&s.cloud)?,
            };
            Ok(EvalPrediction {
                class_id: est.class_used,
                transform: est.transform,
                class_distribution: est.class_distribution,
            })
        })
        .collect()
}

/// Sequence pop-up predictions: consecutive samples of one sequence share a
/// class (given or voted) and smoothed centers.
pub fn popup_sequence_predictions(
    popup: &Popup,
    samples: &[EvalSample],
    mode: EvalMode,
    sigma: Option<f64>,
    rule: VoteRule,
) -> Result<Vec<EvalPrediction>> {
    let mut out = Vec::with_capacity(samples.len());
    let mut start = 0;
    while start < samples.len() {
        let id = samples[start].sequence;
        let end = start + samples[start..].iter().take_while(|s| s.sequence == id).count();
        let chunk = &samples[start..end];
        let frames = chunk
            .iter()
            .map(|s| crate::data::Frame {
                cloud: s.cloud.clone(),
                gt: s.gt,
                index: s.frame,
            })
            .collect();
        let seq = FrameSequence::new(frames, 1.0)?;
        let class = match mode {
            EvalMode::GivenClass => chunk[0].gt.map(|g| g.class_id),
            EvalMode::PredictedClass => None,
        };
        for est in popup.sequence(&seq, sigma, class, rule)? {
            out.push(EvalPrediction {
                class_id: est.class_used,
                transform: est.transform,
                class_distribution: est.class_distribution,
            });
        }
        start = end;
    }
    Ok(out)
}

impl MetricsReport {
    /// Human-readable summary table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            EvalMode::GivenClass => "given class",
            EvalMode::PredictedClass => "predicted class",
        };
        let _ = writeln!(s, "method: {}  mode: {mode}  samples: {}  skipped: {}", self.method, self.samples, self.skipped);
        let _ = writeln!(s, "{:<22}{:>12}", "metric", "value");
        let _ = writeln!(s, "{:<22}{:>12.5}", "E_c (m)", self.e_c);
        if let Some(v) = self.e_v2v {
            let _ = writeln!(s, "{:<22}{:>12.5}", "E_v2v (m)", v);
        }
        if let Some(v) = self.e_ch {
            let _ = writeln!(s, "{:<22}{:>12.5}", "E_ch (m)", v);
        }
        if let Some(v) = self.accuracy {
            let _ = writeln!(s, "{:<22}{:>12.2}", "accuracy (%)", v);
        }
        if let Some(v) = self.sequence_accuracy {
            let _ = writeln!(s, "{:<22}{:>12.2}", "voted accuracy (%)", v);
        }
        if let Some(m) = &self.confusion {
            let _ = writeln!(s, "confusion (rows: ground truth)");
            let _ = write!(s, "{:>10}", "");
            for name in &self.class_names {
                let _ = write!(s, "{name:>10}");
            }
            s.push('\n');
            for (name, row) in self.class_names.iter().zip(m) {
                let _ = write!(s, "{name:>10}");
                for c in row {
                    let _ = write!(s, "{c:>10}");
                }
                s.push('\n');
            }
        }
        s
    }

    /// Confusion matrix as CSV with a header row of predicted classes.
    pub fn confusion_csv(&self) -> Option<String> {
        let m = self.confusion.as_ref()?;
        let mut s = String::from("gt\\pred");
        for name in &self.class_names {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for (name, row) in self.class_names.iter().zip(m) {
            s.push_str(name);
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        Some(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Writes `<stem>.txt`, `<stem>.json` and, when classes were predicted,
    /// `<stem>_confusion.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_atomic(&dir.join(format!("{stem}.txt")), self.to_text().as_bytes())?;
        write_atomic(&dir.join(format!("{stem}.json")), self.to_json().as_bytes())?;
        if let Some(csv) = self.confusion_csv() {
            write_atomic(&dir.join(format!("{stem}_confusion.csv")), csv.as_bytes())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;

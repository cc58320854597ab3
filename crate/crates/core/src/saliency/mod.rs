//! Iterative gradient saliency of the offset loss with respect to the input
//! points: score each point, pull the top-scoring ones toward the cloud
//! median, and repeat.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{coordinate_median, Point3, PointCloud, RigidTransform};
use crate::io::{write_atomic, write_ply, PlyData, PlyEncoding};
use crate::model::{ObjectTemplate, PopupNetwork};
use crate::tensor::Graph;
use crate::training::{popup_loss_graph, Augmentation, TrainSample};

/// Scores of one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyScores {
    /// One score per input point; `-|r| (r . g)`.
    pub scores: Vec<f64>,
    /// Gradient of the offset loss per input point. Points dropped by input
    /// sampling get zero; exact duplicates share their merged row's gradient.
    pub gradients: Vec<Point3>,
    pub median: Point3,
    pub loss: f64,
}

/// Offset loss at the network's own center estimate and its input gradient.
pub fn saliency_scores(
    net: &PopupNetwork,
    template: &ObjectTemplate,
    cloud: &PointCloud,
    gt: &RigidTransform,
) -> Result<SaliencyScores> {
    let median = coordinate_median(cloud.points())?;
    let prepared = net.prepare(cloud.points())?;
    let sample = TrainSample::new(cloud.clone(), template.class_id, gt, template)?;
    let mut g = Graph::with_params(net.params());
    let lv = popup_loss_graph(
        net,
        &mut g,
        &prepared.points,
        &sample,
        &template.keypoints,
        &Augmentation::default(),
        false,
        1.0,
        true,
    )?;
    let loss = g.value(lv.offset).item();
    let grads = g.backward_scalar(lv.offset)?;
    let rows = grads
        .wrt(lv.cloud)
        .ok_or_else(|| Error::InvalidInput("no gradient reached the input cloud".into()))?
        .to_points();
    let mut gradients = vec![[0.0; 3]; cloud.len()];
    for (row, sources) in rows.iter().zip(&prepared.sources) {
        for &i in sources {
            gradients[i] = *row;
        }
    }
    let scores = point_scores(cloud.points(), &median, &gradients);
    Ok(SaliencyScores {
        scores,
        gradients,
        median,
        loss,
    })
}

/// `s_i = -|r_i| (r_i . g_i)` with `r_i = p_i - median`.
pub fn point_scores(points: &[Point3], median: &Point3, gradients: &[Point3]) -> Vec<f64> {
    points
        .iter()
        .zip(gradients)
        .map(|(p, gi)| {
            let r = [0, 1, 2].map(|a| p[a] - median[a]);
            let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            -norm * (r[0] * gi[0] + r[1] * gi[1] + r[2] * gi[2])
        })
        .collect()
}

/// Settings of [`saliency_iterate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyConfig {
    pub iterations: usize,
    /// Fraction of points moved per iteration (rounded up).
    pub fraction: f64,
    /// Each moved point becomes `p - step * (p - median)`.
    pub step: f64,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            fraction: 0.01,
            step: 0.05,
        }
    }
}

impl SaliencyConfig {
    pub fn points_per_iteration(&self, n: usize) -> usize {
        ((self.fraction * n as f64).ceil() as usize).min(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyResult {
    /// Scores computed at the start of each iteration.
    pub scores: Vec<Vec<f64>>,
    /// Indices moved in each iteration, ascending.
    pub touched: Vec<Vec<usize>>,
    /// Cloud after each iteration.
    pub clouds: Vec<PointCloud>,
    /// Median used in each iteration.
    pub medians: Vec<Point3>,
    /// Offset loss before each iteration and after the last one.
    pub losses: Vec<f64>,
}

impl SaliencyResult {
    /// Every index moved at least once, ascending.
    pub fn touched_union(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.touched.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

/// Repeats scoring and moves the top `ceil(fraction * N)` points (highest
/// score first, ties to the lower index) toward the current median. Points
/// may be selected again in later iterations.
pub fn saliency_iterate(
    net: &PopupNetwork,
    template: &ObjectTemplate,
    cloud: &PointCloud,
    gt: &RigidTransform,
    cfg: &SaliencyConfig,
) -> Result<SaliencyResult> {
    if !(cfg.fraction > 0.0 && cfg.fraction <= 1.0) || !cfg.step.is_finite() {
        return Err(Error::InvalidInput(format!(
            "saliency fraction must be in (0, 1] and step finite, got {} and {}",
            cfg.fraction, cfg.step
        )));
    }
    let k = cfg.points_per_iteration(cloud.len());
    let mut current = cloud.clone();
    let mut out = SaliencyResult {
        scores: Vec::new(),
        touched: Vec::new(),
        clouds: Vec::new(),
        medians: Vec::new(),
        losses: Vec::new(),
    };
    for _ in 0..cfg.iterations {
        let s = saliency_scores(net, template, &current, gt)?;
        let mut order: Vec<usize> = (0..current.len()).collect();
        order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]).then(a.cmp(&b)));
        let mut chosen = order[..k].to_vec();
        chosen.sort_unstable();
        let mut pts = current.points().to_vec();
        for &j in &chosen {
            let p = pts[j];
            pts[j] = [0, 1, 2].map(|a| p[a] - cfg.step * (p[a] - s.median[a]));
        }
        current = PointCloud::new(pts)?;
        out.losses.push(s.loss);
        out.medians.push(s.median);
        out.scores.push(s.scores);
        out.touched.push(chosen);
        out.clouds.push(current.clone());
    }
    if cfg.iterations > 0 {
        out.losses.push(saliency_scores(net, template, &current, gt)?.loss);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct IterationRecord<'a> {
    iteration: usize,
    loss_before: f64,
    median: Point3,
    touched: &'a [usize],
}

/// Writes `scores.ply` (original cloud with a `saliency` property from the
/// first iteration), `touched.json` (indices per iteration) and
/// `trace.ndjson` (loss and median per iteration) into `dir`.
pub fn export_saliency(result: &SaliencyResult, original: &PointCloud, dir: &Path) -> Result<()> {
    let mut ply = PlyData {
        points: original.points().to_vec(),
        ..Default::default()
    };
    if let Some(s) = result.scores.first() {
        ply.scalars.insert("saliency".into(), s.clone());
    }
    write_ply(&dir.join("scores.ply"), &ply, PlyEncoding::BinaryLittleEndian)?;
    let touched = serde_json::to_vec_pretty(&result.touched).expect("indices serialise");
    write_atomic(&dir.join("touched.json"), &touched)?;
    let mut trace = String::new();
    for (i, (t, m)) in result.touched.iter().zip(&result.medians).enumerate() {
        let rec = IterationRecord {
            iteration: i,
            loss_before: result.losses[i],
            median: *m,
            touched: t,
        };
        trace.push_str(&serde_json::to_string(&rec).expect("record serialises"));
        trace.push('\n');
    }
    write_atomic(&dir.join("trace.ndjson"), trace.as_bytes())
}

#[cfg(test)]
mod tests;

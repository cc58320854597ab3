use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{init_linear, init_weight, positional_encoding, Mlp};
use super::ClassEncoding;
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample_from, knn_indices, Point3, PointCloud, RigidTransform};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Offset decoder. The first layer is split into a per-keypoint block and a
/// block for the global feature and class code, which is shared by all rows.
#[derive(Debug, Clone)]
struct Decoder {
    point_w: ParamId,
    global: (ParamId, ParamId),
    hidden: Option<Mlp>,
    out: Mlp,
}

#[derive(Debug, Clone)]
struct Layout {
    global_levels: Vec<Mlp>,
    global_all: Mlp,
    center: Mlp,
    local_level: Mlp,
    local_out: Mlp,
    decoder: Option<Decoder>,
    class_head: Option<Mlp>,
    direct: Option<Mlp>,
}

impl Layout {
    fn build(config: &ModelConfig, store: &mut ParamStore, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut global_levels = Vec::new();
        let mut feat = 0;
        for (i, level) in config.global_levels.iter().enumerate() {
            global_levels.push(Mlp::new(store, &format!("global.sa{i}"), 3 + feat, &level.widths, true, rng));
            feat = *level.widths.last().expect("validated");
        }
        let global_all = Mlp::new(store, "global.all", 3 + feat, &config.global_widths, true, rng);
        let mut center_widths = config.center_widths.clone();
        center_widths.push(3);
        let center = Mlp::new(store, "center", config.global_dim(), &center_widths, false, rng);

        // local input features: relative xyz + keypoint flag
        let local_level = Mlp::new(store, "local.sa", 4, &config.local_level.widths, true, rng);
        let local_feat = *config.local_level.widths.last().expect("validated");
        let local_out = Mlp::new(store, "local.out", 3 + local_feat, &config.local_widths, false, rng);

        let pooled_local = config.local_dim();
        let decoder = (!config.direct_rt).then(|| {
            let width = config.decoder_width;
            let point_in = config.posenc_dim() + config.local_dim();
            let point_w = init_weight(store, "decoder.0.point", point_in, width, 1.0, rng);
            let global = init_linear(store, "decoder.0.global", config.global_dim() + config.num_classes, width, 1.0, rng);
            let hidden = (config.decoder_layers > 1).then(|| {
                Mlp::new(store, "decoder.hidden", width, &vec![width; config.decoder_layers - 1], true, rng)
            });
            let out = Mlp::new(store, "decoder.out", width, &[3], false, rng);
            Decoder {
                point_w,
                global,
                hidden,
                out,
            }
        });
        let class_head = config.class_head.then(|| {
            let mut widths = config.class_widths.clone();
            widths.push(config.num_classes);
            Mlp::new(store, "class", config.global_dim(), &widths, false, rng)
        });
        let direct = config.direct_rt.then(|| {
            let input = config.global_dim() + pooled_local + config.num_classes;
            let mut widths = config.direct_widths.clone();
            widths.push(9);
            Mlp::new(store, "direct", input, &widths, false, rng)
        });
        Self {
            global_levels,
            global_all,
            center,
            local_level,
            local_out,
            decoder,
            class_head,
            direct,
        }
    }
}

/// A cloud reduced to the network's canonical input: points sorted
/// lexicographically, exact duplicates merged, and farthest point sampling
/// applied when the cloud exceeds the configured input size.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCloud {
    pub points: Vec<Point3>,
    /// For each prepared point, every original index holding those coordinates.
    pub sources: Vec<Vec<usize>>,
}

impl PreparedCloud {
    /// First original index of each prepared point.
    pub fn representatives(&self) -> Vec<usize> {
        self.sources.iter().map(|s| s[0]).collect()
    }
}

fn lex_cmp(a: &Point3, b: &Point3) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2]))
}

/// Sorted-unique grouping of points: returns groups of original indices in
/// lexicographic order of their coordinates.
fn canonical_groups(points: &[Point3]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if points[g[0]] == points[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Regressed object center, `[1, 3]`.
    pub center: Var,
    pub f_global: Var,
    /// Center the keypoints were placed at, `[1, 3]`.
    pub center_used: Var,
    /// Keypoints relative to `center_used` as fed to the network.
    pub placed_keypoints: Vec<Point3>,
    /// Rows of the prepared cloud forming the local neighbourhood.
    pub local_rows: Vec<usize>,
    pub local_clamped: bool,
    pub f_local: Var,
    pub offsets: Option<Var>,
    pub logits: Option<Var>,
    pub rotation: Option<Var>,
    pub translation: Option<Var>,
    /// Predicted keypoints in world coordinates, `[K, 3]`.
    pub keypoints: Var,
}

/// Per-call settings of [`PopupNetwork::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOptions {
    pub class_id: usize,
    /// Place keypoints and select the neighbourhood here instead of at the
    /// regressed center (training warm-up, smoothed sequences).
    pub center_override: Option<Point3>,
    /// Extra translation of the placement center (augmentation).
    pub center_shift: Point3,
    /// Rotation of the canonical keypoints about the placement center
    /// (augmentation).
    pub keypoint_rotation: Option<Matrix3<f64>>,
    /// Keep the regressed center differentiable in the placement, so input
    /// gradients include its path. Training leaves this off.
    pub center_grad: bool,
}

impl ForwardOptions {
    pub fn new(class_id: usize) -> Self {
        Self {
            class_id,
            center_override: None,
            center_shift: [0.0; 3],
            keypoint_rotation: None,
            center_grad: false,
        }
    }

    pub fn with_center(mut self, center: Point3) -> Self {
        self.center_override = Some(center);
        self
    }
}

/// Plain-value result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub center: Point3,
    pub center_used: Point3,
    /// Offsets relative to the placed keypoints (`K + center_used + d`).
    pub offsets: Vec<Point3>,
    pub keypoints: Vec<Point3>,
    pub class_probs: Option<Vec<f64>>,
    /// Output of the direct rotation/translation head when enabled.
    pub direct: Option<RigidTransform>,
    pub local_clamped: bool,
}

#[derive(Debug, Clone)]
pub struct PopupNetwork {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl PopupNetwork {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, &mut params, seed);
        Ok(Self { config, params, layout })
    }

    /// Rebuilds the network around stored parameters, checking that names and
    /// shapes match the architecture.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        if net.params.len() != params.len() {
            return Err(Error::Config(format!(
                "architecture has {} parameter tensors, stored model has {}",
                net.params.len(),
                params.len()
            )));
        }
        for ((_, a, ta), (_, b, tb)) in net.params.iter().zip(params.iter()) {
            if a != b || ta.shape() != tb.shape() {
                return Err(Error::Config(format!(
                    "parameter mismatch: expected {a} {:?}, found {b} {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Sets the final decoder layer to zero, making every offset zero.
    pub fn zero_decoder_output(&mut self) {
        if let Some(d) = &self.layout.decoder {
            let (w, b) = d.out.last_layer();
            self.params.get_mut(w).data_mut().fill(0.0);
            self.params.get_mut(b).data_mut().fill(0.0);
        }
        if let Some(m) = &self.layout.direct {
            let (w, b) = m.last_layer();
            self.params.get_mut(w).data_mut().fill(0.0);
            self.params.get_mut(b).data_mut().fill(0.0);
        }
    }

    /// Canonical network input for a raw cloud.
    pub fn prepare(&self, points: &[Point3]) -> Result<PreparedCloud> {
        if points.is_empty() {
            return Err(Error::InvalidInput("input cloud is empty".into()));
        }
        let groups = canonical_groups(points);
        let pts: Vec<Point3> = groups.iter().map(|g| points[g[0]]).collect();
        if pts.len() <= self.config.input_points {
            return Ok(PreparedCloud {
                points: pts,
                sources: groups,
            });
        }
        let mut keep = farthest_point_sample_from(&pts, self.config.input_points, 0)?;
        keep.sort_unstable();
        Ok(PreparedCloud {
            points: keep.iter().map(|&i| pts[i]).collect(),
            sources: keep.into_iter().map(|i| groups[i].clone()).collect(),
        })
    }

    fn check_finite(&self, g: &Graph, v: Var, layer: &str) -> Result<()> {
        if g.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("activations of layer {layer}")))
        }
    }

    fn class_code(&self, class_id: usize) -> Result<ClassEncoding> {
        ClassEncoding::new(class_id, self.config.num_classes)
    }

    /// Global encoder on a prepared cloud `[N, 3]`: returns the center
    /// `[1, 3]` and global feature `[1, F]`.
    pub fn encode_global_graph(&self, g: &mut Graph, cloud: Var) -> Result<(Var, Var)> {
        let mean = g.mean_rows(cloud)?;
        let mut xyz = g.sub(cloud, mean)?;
        let mut feats: Option<Var> = None;
        for (level, mlp) in self.config.global_levels.iter().zip(&self.layout.global_levels) {
            let pts = g.value(xyz).to_points();
            let m = level.centers.min(pts.len());
            let k = level.neighbors.min(pts.len());
            let centers = farthest_point_sample_from(&pts, m, 0)?;
            let mut nbr = Vec::with_capacity(m * k);
            let mut rep = Vec::with_capacity(m * k);
            for &c in &centers {
                nbr.extend(knn_indices(&pts, &pts[c], k));
                rep.extend(std::iter::repeat(c).take(k));
            }
            let grouped = g.gather(xyz, nbr.clone())?;
            let anchor = g.gather(xyz, rep)?;
            let rel = g.sub(grouped, anchor)?;
            let input = match feats {
                Some(f) => {
                    let gf = g.gather(f, nbr)?;
                    g.concat(&[rel, gf])?
                }
                None => rel,
            };
            let h = mlp.forward(g, input)?;
            feats = Some(g.group_max(h, k)?);
            xyz = g.gather(xyz, centers)?;
        }
        let input = match feats {
            Some(f) => g.concat(&[xyz, f])?,
            None => xyz,
        };
        let h = self.layout.global_all.forward(g, input)?;
        let rows = g.value(h).rows();
        let f_global = g.group_max(h, rows)?;
        self.check_finite(g, f_global, "global encoder")?;
        let delta = self.layout.center.forward(g, f_global)?;
        let center = g.add(delta, mean)?;
        self.check_finite(g, center, "center head")?;
        Ok((center, f_global))
    }

    /// Local encoder. `keypoints` are relative to `center` (`[K, 3]`),
    /// `local` holds human points in world coordinates in canonical order.
    pub fn encode_local_graph(&self, g: &mut Graph, keypoints: Var, local: Var, center: Var) -> Result<Var> {
        let nk = g.value(keypoints).rows();
        if self.config.no_local_features {
            return Ok(g.constant(Tensor::zeros(&[nk, self.config.local_dim()])));
        }
        let nl = g.value(local).rows();
        if nl == 0 {
            return Err(Error::InvalidInput("local neighbourhood is empty".into()));
        }
        let rel = g.sub(local, center)?;
        let union = g.concat_rows(&[keypoints, rel])?;
        let mut flag = vec![0.0; nk + nl];
        flag[..nk].fill(1.0);
        let flag = g.constant(Tensor::matrix(nk + nl, 1, flag)?);

        let level = &self.config.local_level;
        let pts = g.value(union).to_points();
        let m = level.centers.min(pts.len());
        let k = level.neighbors.min(pts.len());
        let centers = farthest_point_sample_from(&pts, m, 0)?;
        let mut nbr = Vec::with_capacity(m * k);
        let mut rep = Vec::with_capacity(m * k);
        for &c in &centers {
            nbr.extend(knn_indices(&pts, &pts[c], k));
            rep.extend(std::iter::repeat(c).take(k));
        }
        let grouped = g.gather(union, nbr.clone())?;
        let anchor = g.gather(union, rep)?;
        let rel = g.sub(grouped, anchor)?;
        let gflag = g.gather(flag, nbr)?;
        let input = g.concat(&[rel, gflag])?;
        let h = self.layout.local_level.forward(g, input)?;
        let pooled = g.group_max(h, k)?;
        let center_xyz = g.gather(union, centers)?;

        let cpts = g.value(center_xyz).to_points();
        let kpts = g.value(keypoints).to_points();
        let ki = self.config.interp_neighbors.min(cpts.len());
        let mut inbr = Vec::with_capacity(nk * ki);
        for p in &kpts {
            inbr.extend(knn_indices(&cpts, p, ki));
        }
        let propagated = g.interpolate(keypoints, center_xyz, pooled, inbr, ki)?;
        let input = g.concat(&[keypoints, propagated])?;
        let f_local = self.layout.local_out.forward(g, input)?;
        self.check_finite(g, f_local, "local encoder")?;
        Ok(f_local)
    }

    /// Offset decoder over `[posenc(K) | f_local | f_global | one-hot]`.
    pub fn decode_graph(
        &self,
        g: &mut Graph,
        keypoints: &[Point3],
        f_global: Var,
        f_local: Var,
        class: &ClassEncoding,
    ) -> Result<Var> {
        let dec = self
            .layout
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Config("network has no offset decoder (direct head enabled)".into()))?;
        if class.num_classes() != self.config.num_classes {
            return Err(Error::InvalidInput(format!(
                "class code has {} entries, network expects {}",
                class.num_classes(),
                self.config.num_classes
            )));
        }
        let pe = g.constant(positional_encoding(keypoints, self.config.posenc_bands));
        let point_in = g.concat(&[pe, f_local])?;
        let pw = g.param(dec.point_w);
        let point = g.matmul(point_in, pw)?;
        let code = g.constant(Tensor::row(class.one_hot()));
        let global_in = g.concat(&[f_global, code])?;
        let (gw, gb) = (g.param(dec.global.0), g.param(dec.global.1));
        let shared = g.affine(global_in, gw, gb)?;
        let mut h = g.add(point, shared)?;
        h = g.relu(h)?;
        if let Some(hidden) = &dec.hidden {
            h = hidden.forward(g, h)?;
        }
        let offsets = dec.out.forward(g, h)?;
        self.check_finite(g, offsets, "offset decoder")?;
        Ok(offsets)
    }

    fn pool_local(&self, g: &mut Graph, f_local: Var) -> Result<Var> {
        let rows = g.value(f_local).rows();
        g.group_max(f_local, rows)
    }

    /// Class logits `[1, C]` from the global feature alone, so the class can
    /// be predicted before any template is placed.
    pub fn class_logits_graph(&self, g: &mut Graph, f_global: Var) -> Result<Var> {
        let head = self
            .layout
            .class_head
            .as_ref()
            .ok_or_else(|| Error::Config("network has no class head".into()))?;
        let logits = head.forward(g, f_global)?;
        self.check_finite(g, logits, "class head")?;
        Ok(logits)
    }

    /// Direct pose head: rotation `[3, 3]` from a 6D code offset by the
    /// identity, translation `[1, 3]` relative to `center`.
    pub fn direct_rt_graph(
        &self,
        g: &mut Graph,
        f_global: Var,
        f_local_pooled: Var,
        class: &ClassEncoding,
        center: Var,
    ) -> Result<(Var, Var)> {
        let head = self
            .layout
            .direct
            .as_ref()
            .ok_or_else(|| Error::Config("direct rotation/translation head is disabled".into()))?;
        let code = g.constant(Tensor::row(class.one_hot()));
        let input = g.concat(&[f_global, f_local_pooled, code])?;
        let out = head.forward(g, input)?;
        let six = g.slice_cols(out, 0, 6)?;
        let base = g.constant(Tensor::row(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        let six = g.add(six, base)?;
        let rotation = g.six_d_rotation(six)?;
        let dt = g.slice_cols(out, 6, 3)?;
        let translation = g.add(center, dt)?;
        Ok((rotation, translation))
    }

    /// Full forward pass on a prepared cloud held in `cloud` (`[N, 3]`).
    /// `keypoints` are the class template's canonical keypoints.
    pub fn forward(&self, g: &mut Graph, cloud: Var, keypoints: &[Point3], opts: &ForwardOptions) -> Result<ForwardVars> {
        let class = self.class_code(opts.class_id)?;
        if keypoints.len() < 3 {
            return Err(Error::InvalidInput("template needs at least 3 keypoints".into()));
        }
        let (center, f_global) = self.encode_global_graph(g, cloud)?;
        // The placement center is a constant unless `center_grad` is set:
        // offsets are supervised relative to it and the center head only
        // learns from its own loss.
        let c = match opts.center_override {
            Some(c) => c,
            None => {
                let v = g.value(center).data();
                [v[0], v[1], v[2]]
            }
        };
        let c = [0, 1, 2].map(|a| c[a] + opts.center_shift[a]);
        let center_used = if opts.center_grad && opts.center_override.is_none() {
            let shift = g.constant(Tensor::row(&opts.center_shift));
            g.add(center, shift)?
        } else {
            g.constant(Tensor::row(&c))
        };
        let placed: Vec<Point3> = match &opts.keypoint_rotation {
            Some(r) => keypoints
                .iter()
                .map(|k| {
                    let v = r * nalgebra::Vector3::from(*k);
                    [v.x, v.y, v.z]
                })
                .collect(),
            None => keypoints.to_vec(),
        };
        let cloud_pts = g.value(cloud).to_points();
        let mut local_rows = knn_indices(&cloud_pts, &c, self.config.local_k);
        let local_clamped = self.config.local_k > cloud_pts.len();
        local_rows.sort_unstable();
        let local = g.gather(cloud, local_rows.clone())?;
        let kp = g.constant(Tensor::from_points(&placed));
        let f_local = self.encode_local_graph(g, kp, local, center_used)?;

        let (mut offsets, mut rotation, mut translation) = (None, None, None);
        let keypoints_var = if self.config.direct_rt {
            let pooled = self.pool_local(g, f_local)?;
            let (r, t) = self.direct_rt_graph(g, f_global, pooled, &class, center_used)?;
            rotation = Some(r);
            translation = Some(t);
            // canonical keypoints posed by (R, t): K R^T + t
            let canon = g.constant(Tensor::from_points(keypoints));
            let rt = g.transpose(r)?;
            let rotated = g.matmul(canon, rt)?;
            g.add(rotated, t)?
        } else {
            let d = self.decode_graph(g, &placed, f_global, f_local, &class)?;
            offsets = Some(d);
            let shifted = g.add(d, kp)?;
            g.add(shifted, center_used)?
        };
        let logits = if self.config.class_head {
            Some(self.class_logits_graph(g, f_global)?)
        } else {
            None
        };
        Ok(ForwardVars {
            center,
            f_global,
            center_used,
            placed_keypoints: placed,
            local_rows,
            local_clamped,
            f_local,
            offsets,
            logits,
            rotation,
            translation,
            keypoints: keypoints_var,
        })
    }

    /// Forward pass on a raw cloud returning plain values.
    pub fn predict(&self, cloud: &PointCloud, keypoints: &[Point3], opts: &ForwardOptions) -> Result<Prediction> {
        let prepared = self.prepare(cloud.points())?;
        let mut g = Graph::with_params(&self.params);
        let x = g.constant(Tensor::from_points(&prepared.points));
        let fv = self.forward(&mut g, x, keypoints, opts)?;
        Ok(self.collect(&g, &fv))
    }

    pub(crate) fn collect(&self, g: &Graph, fv: &ForwardVars) -> Prediction {
        let p3 = |v: Var| {
            let d = g.value(v).data();
            [d[0], d[1], d[2]]
        };
        let keypoints = g.value(fv.keypoints).to_points();
        let cu = p3(fv.center_used);
        let offsets = match fv.offsets {
            Some(d) => g.value(d).to_points(),
            None => keypoints
                .iter()
                .zip(&fv.placed_keypoints)
                .map(|(p, k)| [0, 1, 2].map(|a| p[a] - k[a] - cu[a]))
                .collect(),
        };
        let direct = match (fv.rotation, fv.translation) {
            (Some(r), Some(t)) => {
                let r: [f64; 9] = g.value(r).data().try_into().expect("3x3 rotation");
                Some(RigidTransform::from_row_major(r, p3(t)))
            }
            _ => None,
        };
        Prediction {
            center: p3(fv.center),
            center_used: cu,
            offsets,
            keypoints,
            class_probs: fv.logits.map(|l| crate::tensor::softmax(g.value(l).data())),
            direct,
            local_clamped: fv.local_clamped,
        }
    }

    /// Center and global feature of a raw cloud.
    pub fn encode_global(&self, cloud: &PointCloud) -> Result<(Point3, Vec<f64>)> {
        let prepared = self.prepare(cloud.points())?;
        let mut g = Graph::with_params(&self.params);
        let x = g.constant(Tensor::from_points(&prepared.points));
        let (c, f) = self.encode_global_graph(&mut g, x)?;
        let c = g.value(c).data();
        Ok(([c[0], c[1], c[2]], g.value(f).data().to_vec()))
    }

    /// Per-keypoint local features `[K, F_local]` for keypoints already moved
    /// to `center` and the human points around it.
    pub fn encode_local(&self, keypoints_at_center: &[Point3], local_cloud: &PointCloud, center: Point3) -> Result<Tensor> {
        let rel: Vec<Point3> = keypoints_at_center
            .iter()
            .map(|k| [k[0] - center[0], k[1] - center[1], k[2] - center[2]])
            .collect();
        let groups = canonical_groups(local_cloud.points());
        let local: Vec<Point3> = groups.iter().map(|g| local_cloud.points()[g[0]]).collect();
        let mut g = Graph::with_params(&self.params);
        let kp = g.constant(Tensor::from_points(&rel));
        let lv = g.constant(Tensor::from_points(&local));
        let cv = g.constant(Tensor::row(&center));
        let f = self.encode_local_graph(&mut g, kp, lv, cv)?;
        Ok(g.value(f).clone())
    }

    /// Offsets `[K, 3]` for keypoints relative to the center.
    pub fn decode_offsets(
        &self,
        keypoints: &[Point3],
        f_global: &[f64],
        f_local: &Tensor,
        class: &ClassEncoding,
    ) -> Result<Tensor> {
        if f_local.rows() != keypoints.len() || f_global.len() != self.config.global_dim() {
            return Err(Error::InvalidInput(format!(
                "decoder inputs: {} keypoints, local features {:?}, global length {}",
                keypoints.len(),
                f_local.shape(),
                f_global.len()
            )));
        }
        let mut g = Graph::with_params(&self.params);
        let fg = g.constant(Tensor::row(f_global));
        let fl = g.constant(f_local.clone());
        let d = self.decode_graph(&mut g, keypoints, fg, fl, class)?;
        Ok(g.value(d).clone())
    }

    /// Class distribution from the global feature.
    pub fn predict_class(&self, f_global: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(&self.params);
        let fg = g.constant(Tensor::row(f_global));
        let logits = self.class_logits_graph(&mut g, fg)?;
        Ok(crate::tensor::softmax(g.value(logits).data()))
    }

    /// Pose from the direct head, translation relative to `center`.
    pub fn direct_rt_head(
        &self,
        f_global: &[f64],
        f_local_pooled: &[f64],
        class: &ClassEncoding,
        center: Point3,
    ) -> Result<RigidTransform> {
        let mut g = Graph::with_params(&self.params);
        let fg = g.constant(Tensor::row(f_global));
        let fl = g.constant(Tensor::row(f_local_pooled));
        let c = g.constant(Tensor::row(&center));
        let (r, t) = self.direct_rt_graph(&mut g, fg, fl, class, c)?;
        let r: [f64; 9] = g.value(r).data().try_into().expect("3x3 rotation");
        let t = g.value(t).data();
        Ok(RigidTransform::from_row_major(r, [t[0], t[1], t[2]]))
    }
}

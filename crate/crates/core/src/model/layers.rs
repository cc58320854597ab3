use rand::Rng;

use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Stack of affine layers with ReLU between them.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    /// Apply ReLU after the last layer too.
    relu_last: bool,
}

/// He-uniform weights, zero biases. Output layers (`scale < 1`) start small.
pub(crate) fn init_linear<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    scale: f64,
    rng: &mut R,
) -> (ParamId, ParamId) {
    let w = init_weight(store, name, fan_in, fan_out, scale, rng);
    let b = store.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
    (w, b)
}

/// Bias-free variant of [`init_linear`].
pub(crate) fn init_weight<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    scale: f64,
    rng: &mut R,
) -> ParamId {
    let bound = scale * (6.0 / fan_in as f64).sqrt();
    let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    store.add(format!("{name}.w"), Tensor::matrix(fan_in, fan_out, w).expect("weight shape"))
}

impl Mlp {
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        widths: &[usize],
        relu_last: bool,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            let last = i + 1 == widths.len();
            let scale = if last && !relu_last { 0.1 } else { 1.0 };
            layers.push(init_linear(store, &format!("{name}.{i}"), fan_in, w, scale, rng));
            fan_in = w;
        }
        Self { layers, relu_last }
    }

    pub(crate) fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = (g.param(w), g.param(b));
            h = g.affine(h, wv, bv)?;
            if self.relu_last || i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    pub(crate) fn last_layer(&self) -> (ParamId, ParamId) {
        *self.layers.last().expect("mlp has layers")
    }
}

/// Sinusoidal encoding: raw xyz, then for each band `b` the values
/// `sin(2^b pi x)` and `cos(2^b pi x)` per axis.
pub fn positional_encoding(points: &[[f64; 3]], bands: usize) -> Tensor {
    let cols = 3 + 6 * bands;
    let mut out = Vec::with_capacity(points.len() * cols);
    for p in points {
        out.extend_from_slice(p);
        for b in 0..bands {
            let f = std::f64::consts::PI * (1u64 << b) as f64;
            for &v in p {
                out.push((f * v).sin());
            }
            for &v in p {
                out.push((f * v).cos());
            }
        }
    }
    Tensor::matrix(points.len(), cols, out).expect("posenc shape")
}

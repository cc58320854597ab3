use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One set-abstraction level: `centers` groups of `neighbors` points each,
/// encoded by a shared MLP with the given layer widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaLevel {
    pub centers: usize,
    pub neighbors: usize,
    pub widths: Vec<usize>,
}

impl SaLevel {
    pub fn new(centers: usize, neighbors: usize, widths: &[usize]) -> Self {
        Self {
            centers,
            neighbors,
            widths: widths.to_vec(),
        }
    }
}

/// Network architecture. Stored verbatim in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Clouds larger than this are reduced by farthest point sampling.
    pub input_points: usize,
    pub num_keypoints: usize,
    pub global_levels: Vec<SaLevel>,
    /// Widths of the final group-all layer; the last one is the global feature size.
    pub global_widths: Vec<usize>,
    pub center_widths: Vec<usize>,
    /// Human points gathered around the center for the local encoder.
    pub local_k: usize,
    pub local_level: SaLevel,
    /// Widths after propagation to keypoints; the last one is the local feature size.
    pub local_widths: Vec<usize>,
    pub interp_neighbors: usize,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    pub posenc_bands: usize,
    pub class_head: bool,
    pub class_widths: Vec<usize>,
    /// Replace offset decoding by a direct rotation + translation head.
    pub direct_rt: bool,
    pub direct_widths: Vec<usize>,
    /// Replace local features by zeros.
    pub no_local_features: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            input_points: 9000,
            num_keypoints: 1500,
            global_levels: vec![SaLevel::new(512, 32, &[64, 64, 128]), SaLevel::new(128, 64, &[128, 128, 256])],
            global_widths: vec![256, 512],
            center_widths: vec![256, 64],
            local_k: 3000,
            local_level: SaLevel::new(256, 32, &[64, 64, 128]),
            local_widths: vec![128, 128],
            interp_neighbors: 3,
            decoder_layers: 4,
            decoder_width: 256,
            posenc_bands: 6,
            class_head: false,
            class_widths: vec![256, 128],
            direct_rt: false,
            direct_widths: vec![256, 128],
            no_local_features: false,
        }
    }
}

impl ModelConfig {
    pub fn global_dim(&self) -> usize {
        *self.global_widths.last().unwrap_or(&0)
    }

    pub fn local_dim(&self) -> usize {
        *self.local_widths.last().unwrap_or(&0)
    }

    /// Raw coordinates plus a sine and cosine per band and axis.
    pub fn posenc_dim(&self) -> usize {
        3 + 6 * self.posenc_bands
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1");
        }
        if self.input_points == 0 || self.num_keypoints < 3 || self.local_k == 0 {
            return bad("input_points and local_k must be positive and num_keypoints at least 3");
        }
        let levels = self.global_levels.iter().chain(std::iter::once(&self.local_level));
        for l in levels {
            if l.centers == 0 || l.neighbors == 0 || l.widths.is_empty() || l.widths.contains(&0) {
                return bad("set-abstraction levels need positive sizes and at least one layer");
            }
        }
        for (name, w) in [
            ("global_widths", &self.global_widths),
            ("center_widths", &self.center_widths),
            ("local_widths", &self.local_widths),
            ("class_widths", &self.class_widths),
            ("direct_widths", &self.direct_widths),
        ] {
            if w.contains(&0) {
                return Err(Error::Config(format!("{name} contains a zero width")));
            }
        }
        if self.global_widths.is_empty() || self.local_widths.is_empty() {
            return bad("global_widths and local_widths need at least one layer");
        }
        if self.interp_neighbors == 0 {
            return bad("interp_neighbors must be positive");
        }
        if !self.direct_rt && (self.decoder_layers == 0 || self.decoder_width == 0) {
            return bad("the offset decoder needs at least one hidden layer");
        }
        Ok(())
    }
}

//! The pop-up network: global encoder with center head, local encoder over
//! keypoints plus nearby human points, offset decoder, and optional class
//! and direct-pose heads.

mod config;
mod layers;
mod network;

pub use config::{ModelConfig, SaLevel};
pub use layers::positional_encoding;
pub use network::{ForwardOptions, ForwardVars, PopupNetwork, Prediction, PreparedCloud};

use crate::error::{Error, Result};
use crate::geometry::{sample_surface, Mesh, Point3};

/// One-hot object class code.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEncoding {
    class_id: usize,
    one_hot: Vec<f64>,
}

impl ClassEncoding {
    pub fn new(class_id: usize, num_classes: usize) -> Result<Self> {
        if class_id >= num_classes {
            return Err(Error::InvalidInput(format!(
                "class {class_id} out of range for {num_classes} classes"
            )));
        }
        let mut one_hot = vec![0.0; num_classes];
        one_hot[class_id] = 1.0;
        Ok(Self { class_id, one_hot })
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn num_classes(&self) -> usize {
        self.one_hot.len()
    }

    pub fn one_hot(&self) -> &[f64] {
        &self.one_hot
    }
}

/// Object template in its canonical frame (origin at the object center)
/// with keypoints sampled once on its surface.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTemplate {
    pub class_id: usize,
    pub name: String,
    pub mesh: Mesh,
    pub keypoints: Vec<Point3>,
}

impl ObjectTemplate {
    pub fn new(class_id: usize, name: impl Into<String>, mesh: Mesh, num_keypoints: usize, seed: u64) -> Result<Self> {
        let keypoints = sample_surface(&mesh, num_keypoints, seed)?;
        Ok(Self {
            class_id,
            name: name.into(),
            mesh,
            keypoints,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests;

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point3};
use crate::model::{ModelConfig, ObjectTemplate, PopupNetwork};
use crate::tensor::{AdamState, Checkpoint};

/// Template as stored inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub class_id: usize,
    pub name: String,
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
    pub keypoints: Vec<Point3>,
}

impl From<&ObjectTemplate> for TemplateRecord {
    fn from(t: &ObjectTemplate) -> Self {
        Self {
            class_id: t.class_id,
            name: t.name.clone(),
            vertices: t.mesh.vertices.clone(),
            faces: t.mesh.faces.clone(),
            keypoints: t.keypoints.clone(),
        }
    }
}

impl TemplateRecord {
    fn into_template(self) -> Result<ObjectTemplate> {
        Ok(ObjectTemplate {
            class_id: self.class_id,
            name: self.name,
            mesh: Mesh::new(self.vertices, self.faces)?,
            keypoints: self.keypoints,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    model: ModelConfig,
    train: TrainConfig,
    templates: Vec<TemplateRecord>,
}

/// A trained network with everything needed to run it: architecture,
/// training settings and the class templates.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub network: PopupNetwork,
    pub train: TrainConfig,
    pub templates: Vec<ObjectTemplate>,
    pub epoch: usize,
    pub optimizer: Option<AdamState>,
}

impl ModelBundle {
    pub fn template(&self, class_id: usize) -> Result<&ObjectTemplate> {
        self.templates
            .get(class_id)
            .ok_or_else(|| Error::InvalidInput(format!("class {class_id} out of range for {} classes", self.templates.len())))
    }

    /// Class id by name or by number.
    pub fn resolve_class(&self, name_or_id: &str) -> Result<usize> {
        if let Some(t) = self.templates.iter().find(|t| t.name == name_or_id) {
            return Ok(t.class_id);
        }
        match name_or_id.parse::<usize>() {
            Ok(id) if id < self.templates.len() => Ok(id),
            _ => Err(Error::InvalidInput(format!(
                "unknown class '{name_or_id}'; known: {}",
                self.templates.iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = Meta {
            model: self.network.config().clone(),
            train: self.train.clone(),
            templates: self.templates.iter().map(TemplateRecord::from).collect(),
        };
        let json = serde_json::to_string(&meta).expect("metadata serialises");
        Checkpoint::new(json, self.epoch, self.network.params().clone(), self.optimizer.clone())
    }

    pub fn from_checkpoint(ck: Checkpoint, path: &Path) -> Result<Self> {
        let meta: Meta =
            serde_json::from_str(&ck.config_json).map_err(|e| Error::format(path, format!("metadata: {e}")))?;
        let network = PopupNetwork::from_params(meta.model, ck.params)?;
        let templates = meta
            .templates
            .into_iter()
            .map(TemplateRecord::into_template)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let cfg = network.config();
        if templates.len() != cfg.num_classes
            || templates.iter().enumerate().any(|(i, t)| t.class_id != i || t.keypoints.len() != cfg.num_keypoints)
        {
            return Err(Error::format(path, "templates do not match the model configuration"));
        }
        Ok(Self {
            network,
            train: meta.train,
            templates,
            epoch: ck.epoch,
            optimizer: ck.optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?, path)
    }
}

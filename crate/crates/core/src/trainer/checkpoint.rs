use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::constrained_opt::MultiplierState;
use crate::diff_core::{Activation, MlpParams};
use crate::error::{Error, Result};
use crate::node_model::FieldScaling;

pub const CHECKPOINT_FORMAT: &str = "nlbac-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDoc {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major values.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub activation: Activation,
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<LayerDoc>,
}

impl NetworkDoc {
    pub fn from_params(net: &MlpParams) -> Self {
        let mut layers = Vec::with_capacity(2 * net.num_layers());
        for (i, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
            layers.push(LayerDoc {
                name: format!("layer{i}.weight"),
                shape: vec![w.nrows(), w.ncols()],
                values: w.iter().copied().collect(),
            });
            layers.push(LayerDoc {
                name: format!("layer{i}.bias"),
                shape: vec![b.len()],
                values: b.to_vec(),
            });
        }
        Self {
            activation: net.activation(),
            layer_sizes: net.layer_sizes().to_vec(),
            layers,
        }
    }

    pub fn to_params(&self) -> Result<MlpParams> {
        let find = |name: &str| {
            self.layers
                .iter()
                .find(|l| l.name == name)
                .ok_or_else(|| Error::invalid(format!("missing layer {name}")))
        };
        let n = self.layer_sizes.len().saturating_sub(1);
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for i in 0..n {
            let w = find(&format!("layer{i}.weight"))?;
            let b = find(&format!("layer{i}.bias"))?;
            if w.shape.len() != 2 || b.shape.len() != 1 {
                return Err(Error::invalid(format!("layer {i} has a malformed shape")));
            }
            weights.push(
                Array2::from_shape_vec((w.shape[0], w.shape[1]), w.values.clone())
                    .map_err(|e| Error::invalid(format!("{}: {e}", w.name)))?,
            );
            if b.values.len() != b.shape[0] {
                return Err(Error::invalid(format!("{}: length does not match shape", b.name)));
            }
            biases.push(Array1::from(b.values.clone()));
        }
        MlpParams::from_layers(weights, biases, self.activation)
    }
}

/// Everything needed to resume evaluation of a trained agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub episode: usize,
    pub networks: BTreeMap<String, NetworkDoc>,
    pub scalars: BTreeMap<String, f64>,
    pub multipliers: MultiplierState,
    pub model_scaling: FieldScaling,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn new(
        episode: usize,
        config: TrainConfig,
        multipliers: MultiplierState,
        model_scaling: FieldScaling,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            episode,
            networks: BTreeMap::new(),
            scalars: BTreeMap::new(),
            multipliers,
            model_scaling,
            config,
        }
    }

    pub fn insert_network(&mut self, name: &str, net: &MlpParams) {
        self.networks.insert(name.to_string(), NetworkDoc::from_params(net));
    }

    pub fn network(&self, name: &str) -> Result<MlpParams> {
        self.networks
            .get(name)
            .ok_or_else(|| Error::invalid(format!("checkpoint has no network {name}")))?
            .to_params()
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("checkpoint has no scalar {name}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::parse(path, format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::parse(path, format!("unsupported version {}", ck.version)));
        }
        Ok(ck)
    }
}

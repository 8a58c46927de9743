use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_version, json_error, read, write, FORMAT_VERSION};
use crate::cells::{CellRegistry, LayerRecord, Network, Nonlinearity, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsDoc {
    format_version: String,
    arch: String,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    n_hidden: usize,
    n_input: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nonlinearity: Option<Nonlinearity>,
    params: BTreeMap<String, Tensor>,
}

pub fn weights_to_string(net: &Network) -> Result<String> {
    let layers = net.layers();
    let arch = layers[0].arch();
    if let Some(other) = layers.iter().find(|l| l.arch() != arch) {
        return Err(Error::Config(format!(
            "weight files hold a single architecture; found `{arch}` and `{}`",
            other.arch()
        )));
    }
    let doc = WeightsDoc {
        format_version: FORMAT_VERSION.to_string(),
        arch: arch.to_string(),
        layers: layers
            .iter()
            .map(|cell| {
                let rec = cell.to_record();
                LayerDoc {
                    n_hidden: rec.n_hidden,
                    n_input: rec.n_input,
                    nonlinearity: rec.nonlinearity,
                    params: rec.tensors,
                }
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("weights serialize");
    s.push('\n');
    Ok(s)
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &weights_to_string(net)?)
}

/// Parses and validates a weights document; `path` is used for messages.
pub fn weights_from_str(text: &str, path: &Path, registry: &CellRegistry) -> Result<Network> {
    #[derive(Deserialize)]
    struct VersionProbe {
        format_version: Option<String>,
    }
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| json_error(path, e))?;
    let version = probe.format_version.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        location: "document".into(),
        message: "missing format_version".into(),
    })?;
    check_version(path, &version)?;

    let doc: WeightsDoc = serde_json::from_str(text).map_err(|e| json_error(path, e))?;
    let factory = registry.get(&doc.arch).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        location: "arch".into(),
        message: e.to_string(),
    })?;
    if doc.layers.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            location: "layers".into(),
            message: "no layers".into(),
        });
    }
    let mut cells = Vec::with_capacity(doc.layers.len());
    for (k, layer) in doc.layers.into_iter().enumerate() {
        let rec = LayerRecord {
            arch: doc.arch.clone(),
            n_hidden: layer.n_hidden,
            n_input: layer.n_input,
            nonlinearity: layer.nonlinearity,
            tensors: layer.params,
        };
        let cell = factory.load(&rec).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            location: format!("layer {}", k + 1),
            message: e.to_string(),
        })?;
        cells.push(cell);
    }
    Network::new(cells).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        location: "layers".into(),
        message: e.to_string(),
    })
}

pub fn load_weights(path: impl AsRef<Path>, registry: &CellRegistry) -> Result<Network> {
    let path = path.as_ref();
    weights_from_str(&read(path)?, path, registry)
}

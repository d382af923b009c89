//! Model checkpoints in the safetensors container: every parameter as a
//! little-endian `F64` tensor, with the model configuration stored as JSON in
//! the header metadata.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::{ParamStore, Tensor};

const FORMAT_KEY: &str = "format";
const FORMAT_VALUE: &str = "notefusion-checkpoint-v1";
const CONFIG_KEY: &str = "model_config";

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let raw: Vec<(String, Vec<usize>, Vec<u8>)> = model
        .params()
        .iter()
        .map(|(name, t)| {
            let bytes = t.values().iter().flat_map(|v| v.to_le_bytes()).collect();
            (name.to_string(), t.shape().to_vec(), bytes)
        })
        .collect();
    let mut views = Vec::with_capacity(raw.len());
    for (name, shape, bytes) in &raw {
        let view = TensorView::new(Dtype::F64, shape.clone(), bytes)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        views.push((name.clone(), view));
    }
    let metadata = HashMap::from([
        (FORMAT_KEY.to_string(), FORMAT_VALUE.to_string()),
        (CONFIG_KEY.to_string(), serde_json::to_string(model.config())?),
    ]);
    safetensors::serialize(views, &Some(metadata)).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta = header
        .metadata()
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("header metadata missing".into()))?;
    if meta.get(FORMAT_KEY).map(String::as_str) != Some(FORMAT_VALUE) {
        return Err(Error::Checkpoint(format!(
            "unrecognized format tag {:?}",
            meta.get(FORMAT_KEY)
        )));
    }
    let config_json = meta
        .get(CONFIG_KEY)
        .ok_or_else(|| Error::Checkpoint("model config missing".into()))?;
    let config: ModelConfig =
        serde_json::from_str(config_json).map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;

    let tensors = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut params = ParamStore::new();
    let mut entries = tensors.tensors();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    for (name, view) in entries {
        if view.dtype() != Dtype::F64 {
            return Err(Error::Checkpoint(format!("{name}: expected F64, found {:?}", view.dtype())));
        }
        let values = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let tensor = Tensor::new(view.shape().to_vec(), values).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        params.insert(name, tensor)?;
    }
    Model::from_parts(config, params).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;
    use crate::model::Variant;

    fn small(task: Task, variant: Variant) -> Model {
        let mut cfg = ModelConfig::for_task(task, variant, 3, 5);
        cfg.lstm_hidden = 4;
        cfg.filters_per_width = 2;
        cfg.conv_widths = vec![2, 3];
        Model::init(cfg, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in Variant::ALL {
            let m = small(Task::Los, variant);
            let back = from_bytes(&to_bytes(&m).unwrap()).unwrap();
            assert_eq!(back.config(), m.config());
            for (name, t) in m.params().iter() {
                let other = back.params().get(name).unwrap();
                assert_eq!(t.shape(), other.shape());
                let a: Vec<u64> = t.values().iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = other.values().iter().map(|v| v.to_bits()).collect();
                assert_eq!(a, b, "{name}");
            }
        }
    }

    #[test]
    fn corrupt_bytes_rejected() {
        let mut bytes = to_bytes(&small(Task::Ihm, Variant::Baseline)).unwrap();
        assert!(from_bytes(&bytes[..10]).is_err());
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(from_bytes(b"not a checkpoint at all").is_err());
    }
}

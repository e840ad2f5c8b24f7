//! Checkpoints: one OCTF container file holding every parameter tensor
//! back to back, plus a JSON sidecar with the byte offset of each tensor
//! and the model configuration.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use omnicast_tensor::{octf, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct TensorIndexEntry {
    name: String,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    config: serde_json::Value,
    tensors: Vec<TensorIndexEntry>,
}

/// Write `<stem>.octf` + `<stem>.json` into `dir`.
pub fn save(dir: &Path, stem: &str, named: &[(String, Tensor)], config: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let octf_path = dir.join(format!("{stem}.octf"));
    let mut file = fs::File::create(&octf_path).map_err(|e| Error::io(&octf_path, e))?;
    let mut index = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, tensor) in named {
        index.push(TensorIndexEntry { name: name.clone(), offset });
        let mut buf = Vec::new();
        octf::write_octf_to(&mut buf, tensor.shape(), &tensor.to_vec())
            .map_err(|e| Error::octf(&octf_path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(&octf_path, e))?;
        offset += buf.len() as u64;
    }
    file.flush().map_err(|e| Error::io(&octf_path, e))?;

    let json_path = dir.join(format!("{stem}.json"));
    let sidecar = Sidecar { config, tensors: index };
    let body = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json(&json_path, e))?;
    fs::write(&json_path, body + "\n").map_err(|e| Error::io(&json_path, e))
}

/// Read the sidecar config and all tensors of `<stem>` in `dir`.
pub fn load(dir: &Path, stem: &str) -> Result<(serde_json::Value, BTreeMap<String, (Vec<usize>, Vec<f32>)>)> {
    let json_path = dir.join(format!("{stem}.json"));
    let body = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&body).map_err(|e| Error::json(&json_path, e))?;

    let octf_path = dir.join(format!("{stem}.octf"));
    let mut file = fs::File::open(&octf_path).map_err(|e| Error::io(&octf_path, e))?;
    let mut tensors = BTreeMap::new();
    for entry in &sidecar.tensors {
        file.seek(SeekFrom::Start(entry.offset)).map_err(|e| Error::io(&octf_path, e))?;
        let mut reader = std::io::BufReader::new(&mut file);
        let (shape, data) =
            octf::read_octf_from::<f32, _>(&mut reader).map_err(|e| Error::octf(&octf_path, e))?;
        tensors.insert(entry.name.clone(), (shape, data));
    }
    Ok((sidecar.config, tensors))
}

/// Copy loaded tensors into live parameters by name. Every parameter must
/// be present with a matching shape.
pub fn restore_params(
    params: &[(String, Tensor)],
    loaded: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    what: &str,
) -> Result<()> {
    for (name, tensor) in params {
        let Some((shape, data)) = loaded.get(name) else {
            return Err(Error::Input(format!("{what} checkpoint is missing tensor `{name}`")));
        };
        if shape != tensor.shape() {
            return Err(Error::Input(format!(
                "{what} checkpoint tensor `{name}` has shape {:?}, model expects {:?}",
                shape,
                tensor.shape()
            )));
        }
        tensor.set_data(data);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_two_tensors_with_config() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[3], vec![5.0, 6.0, 7.0]);
        let named = vec![("layer.weight".to_string(), a), ("layer.bias".to_string(), b)];
        let cfg = serde_json::json!({"width": 128});
        save(dir.path(), "checkpoint", &named, cfg.clone()).unwrap();

        let (cfg_back, tensors) = load(dir.path(), "checkpoint").unwrap();
        assert_eq!(cfg_back, cfg);
        assert_eq!(tensors["layer.weight"].0, vec![2, 2]);
        assert_eq!(tensors["layer.bias"].1, vec![5.0, 6.0, 7.0]);

        let target = vec![
            ("layer.weight".to_string(), Tensor::param(&[2, 2], vec![0.0; 4])),
            ("layer.bias".to_string(), Tensor::param(&[3], vec![0.0; 3])),
        ];
        restore_params(&target, &tensors, "test").unwrap();
        assert_eq!(*target[0].1.data(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn missing_tensor_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), "ck", &[], serde_json::json!({})).unwrap();
        let (_, tensors) = load(dir.path(), "ck").unwrap();
        let target = vec![("w".to_string(), Tensor::param(&[1], vec![0.0]))];
        assert!(restore_params(&target, &tensors, "test").is_err());
    }
}

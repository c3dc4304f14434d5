//! Field checkpoints: one `APRF-BIN` array per tensor plus `manifest.txt`.
//!
//! The manifest is line oriented: `key = value` entries for the topology, the
//! config hash and any caller metadata, and one `tensor <name> <dims...>` line
//! per stored array (file `<name>.bin`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{AprfError, Result};
use crate::field::{FieldTopology, MlpField};
use crate::io::{load_array, save_array};

pub const MANIFEST: &str = "manifest.txt";

fn manifest_err(reason: impl Into<String>) -> AprfError {
    AprfError::Format { what: "checkpoint manifest", reason: reason.into() }
}

/// Writes `field` into `dir`, creating it if needed.
pub fn save_checkpoint(
    dir: &Path,
    field: &MlpField,
    config_hash: &str,
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let t = field.topology();
    let mut manifest = String::from("# aprf field checkpoint\n");
    manifest.push_str(&format!("config_hash = {config_hash}\n"));
    manifest.push_str(&format!("width = {}\nenc_x = {}\nenc_o = {}\n", t.width, t.enc_x, t.enc_o));
    manifest.push_str(&format!(
        "use_center_input = {}\ndecouple_heads = {}\n",
        t.use_center_input, t.decouple_heads
    ));
    for (k, v) in metadata {
        manifest.push_str(&format!("meta.{k} = {v}\n"));
    }
    for (name, layer) in field.named_linears() {
        let (out, inp) = layer.shape();
        let weight = format!("{name}.weight");
        let bias = format!("{name}.bias");
        save_array(&dir.join(format!("{weight}.bin")), &[out, inp], &field.params()[layer.weight_range()])?;
        save_array(&dir.join(format!("{bias}.bin")), &[out], &field.params()[layer.bias_range()])?;
        manifest.push_str(&format!("tensor {weight} {out} {inp}\ntensor {bias} {out}\n"));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

/// A loaded checkpoint. Parameters round-trip through `f32`.
pub struct Checkpoint {
    pub field: MlpField,
    pub config_hash: String,
    pub metadata: BTreeMap<String, String>,
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut keys = BTreeMap::new();
    let mut tensors = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("tensor ") {
            let mut parts = rest.split_whitespace();
            let name = parts.next().ok_or_else(|| manifest_err("tensor line without a name"))?;
            let dims = parts
                .map(|d| d.parse::<usize>().map_err(|e| manifest_err(format!("bad dimension {d}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            tensors.push((name.to_string(), dims));
        } else if let Some((k, v)) = line.split_once('=') {
            keys.insert(k.trim().to_string(), v.trim().to_string());
        } else {
            return Err(manifest_err(format!("unrecognized line: {line}")));
        }
    }
    let get = |k: &str| keys.get(k).ok_or_else(|| manifest_err(format!("missing key {k}")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| manifest_err(format!("{k}: {e}"))) };
    let flag = |k: &str| -> Result<bool> { get(k)?.parse().map_err(|e| manifest_err(format!("{k}: {e}"))) };
    let topology = FieldTopology {
        width: num("width")?,
        enc_x: num("enc_x")?,
        enc_o: num("enc_o")?,
        use_center_input: flag("use_center_input")?,
        decouple_heads: flag("decouple_heads")?,
    };
    let mut field = MlpField::zeros(topology)?;
    let layers = field.named_linears();
    if tensors.len() != 2 * layers.len() {
        return Err(manifest_err(format!("expected {} tensors, found {}", 2 * layers.len(), tensors.len())));
    }
    for (name, layer) in layers {
        let (out, inp) = layer.shape();
        for (suffix, range, dims) in [
            ("weight", layer.weight_range(), vec![out, inp]),
            ("bias", layer.bias_range(), vec![out]),
        ] {
            let tensor = format!("{name}.{suffix}");
            if !tensors.iter().any(|(n, d)| *n == tensor && *d == dims) {
                return Err(manifest_err(format!("tensor {tensor} with shape {dims:?} not listed")));
            }
            let arr = load_array(&dir.join(format!("{tensor}.bin")))?;
            if arr.shape != dims {
                return Err(manifest_err(format!("{tensor} has shape {:?}, expected {dims:?}", arr.shape)));
            }
            field.params_mut()[range].copy_from_slice(&arr.to_f64());
        }
    }
    let metadata = keys
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok(Checkpoint { field, config_hash: get("config_hash")?.clone(), metadata })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let t = FieldTopology { decouple_heads: false, ..FieldTopology::new(8, 6, 4) };
        let field = MlpField::init(t, 3).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("omega".to_string(), "10".to_string());
        save_checkpoint(dir.path(), &field, "abc123", &meta).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.config_hash, "abc123");
        assert_eq!(back.metadata, meta);
        assert_eq!(back.field.topology(), t);
        for (a, b) in back.field.params().iter().zip(field.params()) {
            assert_eq!(*a, (*b as f32) as f64);
        }
    }

    #[test]
    fn missing_tensor_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let field = MlpField::init(FieldTopology::new(8, 6, 4), 3).unwrap();
        save_checkpoint(dir.path(), &field, "h", &BTreeMap::new()).unwrap();
        fs::remove_file(dir.path().join("trunk.3.bias.bin")).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}

//! Model files: JSON with every float written to 17 significant digits and
//! a SHA-256 digest over the parameters.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{Dense, Mlp, Model, Scaler};
use crate::audio_io::write_atomic;
use crate::error::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    config_hash: String,
    scaler: Scaler,
    layers: Vec<Dense>,
    threshold: f64,
    digest: String,
}

fn digest(model: &Model) -> String {
    let mut h = Sha256::new();
    h.update(MODEL_VERSION.to_le_bytes());
    h.update((model.config_hash.len() as u64).to_le_bytes());
    h.update(model.config_hash.as_bytes());
    let mut put = |v: &[f64]| {
        h.update((v.len() as u64).to_le_bytes());
        v.iter().for_each(|x| h.update(x.to_bits().to_le_bytes()));
    };
    put(&model.scaler.mean);
    put(&model.scaler.std);
    for l in &model.network.layers {
        put(&[l.inputs as f64, l.outputs as f64]);
        put(&l.weights);
        put(&l.bias);
    }
    put(&[model.threshold]);
    hex::encode(h.finalize())
}

fn push_array(out: &mut String, v: &[f64]) {
    out.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{x:.16e}");
    }
    out.push(']');
}

pub fn model_to_json(model: &Model) -> Result<String> {
    model.validate()?;
    let mut out = String::new();
    let _ = write!(
        out,
        "{{\n  \"version\": {MODEL_VERSION},\n  \"config_hash\": {},\n  \"scaler\": {{\n    \"mean\": ",
        serde_json::to_string(&model.config_hash)?
    );
    push_array(&mut out, &model.scaler.mean);
    out.push_str(",\n    \"std\": ");
    push_array(&mut out, &model.scaler.std);
    out.push_str("\n  },\n  \"layers\": [\n");
    for (i, l) in model.network.layers.iter().enumerate() {
        let _ = write!(out, "    {{\n      \"rows\": {},\n      \"cols\": {},\n      \"weights\": ", l.outputs, l.inputs);
        push_array(&mut out, &l.weights);
        out.push_str(",\n      \"bias\": ");
        push_array(&mut out, &l.bias);
        out.push_str(if i + 1 < model.network.layers.len() { "\n    },\n" } else { "\n    }\n" });
    }
    let _ = write!(
        out,
        "  ],\n  \"threshold\": {:.16e},\n  \"digest\": \"{}\"\n}}\n",
        model.threshold,
        digest(model)
    );
    Ok(out)
}

pub fn model_from_json(text: &str) -> Result<Model> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| {
        if e.is_eof() {
            Error::Model(format!("model file is truncated: {e}"))
        } else {
            Error::Model(format!("malformed model file: {e}"))
        }
    })?;
    if file.version != MODEL_VERSION {
        return Err(Error::Model(format!(
            "model version {} is not supported (expected {MODEL_VERSION})",
            file.version
        )));
    }
    let model = Model {
        config_hash: file.config_hash,
        scaler: file.scaler,
        network: Mlp { layers: file.layers },
        threshold: file.threshold,
    };
    model.validate()?;
    if digest(&model) != file.digest {
        return Err(Error::Model("model digest mismatch; the file is corrupted".into()));
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), model_to_json(model)?.as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

//! Checkpoint files: a text header of `key = value` lines terminated by
//! `end`, followed by the parameter vector as little-endian f64.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AttentionKind, ModelConfig, ParameterVector, TinyModel};
use crate::{Error, Result};

const MAGIC: &str = "icp-lab checkpoint";
const FORMAT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &TinyModel, path: &Path) -> Result<()> {
    let c = model.config();
    let mut bytes = format!(
        "{MAGIC}\nformat_version = {FORMAT_VERSION}\nvocab_size = {}\nd_model = {}\nd_attn = {}\nn_layers = {}\nattention = {}\ncontext_cap = {}\ntied_output = {}\nisolate_demonstration = {}\nstep = {}\nnum_params = {}\nend\n",
        c.vocab_size,
        c.d_model,
        c.d_attn,
        c.n_layers,
        c.attention,
        c.context_cap,
        c.tied_output,
        c.isolate_demonstration,
        model.step(),
        model.num_params(),
    )
    .into_bytes();
    for v in model.params().as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TinyModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };

    let mut header = Vec::new();
    let mut offset = 0;
    loop {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header".into()))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8".into()))?;
        offset += nl + 1;
        if line == "end" {
            break;
        }
        header.push(line.to_string());
    }
    if header.first().map(String::as_str) != Some(MAGIC) {
        return Err(bad("missing checkpoint magic".into()));
    }
    let mut fields = std::collections::HashMap::new();
    for line in &header[1..] {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| bad(format!("bad header line {line:?}")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing header field {k}")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad value for {k}"))) };
    let flag = |k: &str| -> Result<bool> { get(k)?.parse().map_err(|_| bad(format!("bad value for {k}"))) };

    if num("format_version")? != FORMAT_VERSION as usize {
        return Err(bad(format!("unsupported format version {}", get("format_version")?)));
    }
    let attention: AttentionKind = get("attention")?.parse()?;
    let config = ModelConfig {
        vocab_size: num("vocab_size")?,
        d_model: num("d_model")?,
        d_attn: num("d_attn")?,
        n_layers: num("n_layers")?,
        attention,
        context_cap: num("context_cap")?,
        tied_output: flag("tied_output")?,
        isolate_demonstration: flag("isolate_demonstration")?,
    };
    config.validate()?;
    let p = num("num_params")?;
    if p != config.num_params() {
        return Err(bad(format!(
            "header declares {p} parameters but the config implies {}",
            config.num_params()
        )));
    }
    let body = &bytes[offset..];
    if body.len() != p * 8 {
        return Err(bad(format!("expected {} parameter bytes, found {}", p * 8, body.len())));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    TinyModel::from_parts(config, ParameterVector(values), num("step")? as u64)
}

/// Short content hash identifying a checkpoint file.
pub fn checkpoint_id(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

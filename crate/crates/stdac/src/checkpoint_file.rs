//! `.stdac` checkpoint files: the experiment configuration as text, a
//! blank line, then the binary parameter dump of `stdac_core::checkpoint`.

use std::fs;
use std::path::Path;

use stdac_core::checkpoint;
use stdac_core::dac::Model;
use stdac_core::params::ParamStore;

use crate::config::ExperimentConfig;
use crate::error::{io_err, Error, Result};

const BANNER: &str = "# stdac checkpoint\n";

pub fn encode(cfg: &ExperimentConfig, params: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::from(BANNER.as_bytes());
    out.extend_from_slice(cfg.to_text()?.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&checkpoint::encode(params));
    Ok(out)
}

pub fn save(path: &Path, cfg: &ExperimentConfig, params: &ParamStore) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, encode(cfg, params)?).map_err(io_err(path))
}

/// Splits a checkpoint into its configuration and parameter entries.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(ExperimentConfig, Vec<checkpoint::Entry>)> {
    let bad = |msg: &str| Error::Results {
        path: path.into(),
        msg: msg.into(),
    };
    let rest = bytes
        .strip_prefix(BANNER.as_bytes())
        .ok_or_else(|| bad("not a stdac checkpoint"))?;
    let split = rest
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| bad("no end of configuration block"))?;
    let text =
        std::str::from_utf8(&rest[..split + 1]).map_err(|_| bad("configuration is not UTF-8"))?;
    let cfg = ExperimentConfig::parse_text(text)?;
    let entries = checkpoint::decode(&rest[split + 2..])?;
    Ok((cfg, entries))
}

/// Rebuilds the model a checkpoint was saved from.
pub fn load(path: &Path) -> Result<(ExperimentConfig, Model)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (cfg, entries) = decode(&bytes, path)?;
    let mut model = Model::new(cfg.backbone(), cfg.seed)?;
    checkpoint::restore(&mut model.params, &entries)?;
    Ok((cfg, model))
}

pub mod attack;
pub mod craft;
pub mod detect;
pub mod synth;
pub mod train;

use std::path::PathBuf;

use anyhow::Context;
use drdetect::classifier::Mlp;

use crate::failure::{usage, Failure};

/// Loads the model named by `--model`, which is required.
pub(crate) fn load_model(path: Option<&PathBuf>) -> Result<(Mlp, PathBuf), Failure> {
    let path = path.ok_or_else(|| usage("--model is required"))?;
    let model = Mlp::load(path).with_context(|| format!("cannot load model {}", path.display()))?;
    Ok((model, path.clone()))
}

//! Versioned JSON checkpoint container: model config plus flattened
//! weights. Loading rejects schema and shape mismatches.

use crate::error::{CbpError, Result};
use crate::model::predictor::{ModelConfig, PredictorParams};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_SCHEMA: &str = "cbp.checkpoint.v1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema: String,
    model: ModelConfig,
    weights: Vec<f64>,
}

pub fn save_checkpoint(path: &Path, params: &PredictorParams) -> Result<()> {
    let file = CheckpointFile {
        schema: CHECKPOINT_SCHEMA.to_string(),
        model: params.config.clone(),
        weights: params.flatten(),
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &file)?;
    use std::io::Write;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PredictorParams> {
    let bytes = std::fs::read(path)?;
    let file: CheckpointFile = serde_json::from_slice(&bytes)?;
    if file.schema != CHECKPOINT_SCHEMA {
        return Err(CbpError::Schema(format!(
            "unsupported checkpoint schema {:?}, expected {CHECKPOINT_SCHEMA:?}",
            file.schema
        )));
    }
    file.model.validate()?;
    let mut params = PredictorParams::init(file.model, 0)?;
    if file.weights.len() != params.param_count() {
        return Err(CbpError::Schema(format!(
            "checkpoint holds {} weights, model shape needs {}",
            file.weights.len(),
            params.param_count()
        )));
    }
    if file.weights.iter().any(|w| !w.is_finite()) {
        return Err(CbpError::Schema("checkpoint contains non-finite weights".into()));
    }
    params.load_flat(&file.weights)?;
    Ok(params)
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::EvalReport;
use super::train::{RecoveredModel, Standardizer};
use crate::error::{Error, Result};
use crate::library::{SparseModel, LIBRARY_MAP_VERSION};
use crate::nn::NetworkParams;
use crate::solver::Scheme;

pub const CHECKPOINT_FORMAT: &str = "modelrec-checkpoint-v1";

/// Model dimensions recorded alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub n: usize,
    pub m: usize,
    pub order: u32,
    pub hidden: usize,
    pub support_size: usize,
    pub shifts: usize,
}

/// Self-describing JSON checkpoint of a recovered model and its network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub library_map: String,
    pub dims: Dimensions,
    pub standardize: bool,
    pub standardizer: Option<Standardizer>,
    pub best_epoch: usize,
    /// Integrator the model was trained with.
    pub scheme: Scheme,
    pub shifts: Vec<f64>,
    pub model: SparseModel,
    pub params: NetworkParams,
}

impl Checkpoint {
    pub fn from_recovered(rec: &RecoveredModel) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            library_map: LIBRARY_MAP_VERSION.to_owned(),
            dims: Dimensions {
                n: rec.model.n(),
                m: rec.model.m(),
                order: rec.model.library().order(),
                hidden: rec.params.gru.hidden(),
                support_size: rec.config.support_size,
                shifts: rec.shifts.len(),
            },
            standardize: rec.standardizer.is_some(),
            standardizer: rec.standardizer.clone(),
            best_epoch: rec.best_epoch,
            scheme: rec.config.scheme,
            shifts: rec.shifts.clone(),
            model: rec.model.clone(),
            params: rec.params.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::contract(format!("unsupported checkpoint format `{}`", ck.format)));
        }
        if ck.library_map != LIBRARY_MAP_VERSION {
            return Err(Error::contract(format!("checkpoint uses library map `{}`", ck.library_map)));
        }
        let d = ck.dims;
        if d.n != ck.model.n() || d.m != ck.model.m() || d.order != ck.model.library().order() || d.shifts != ck.shifts.len() {
            return Err(Error::contract("checkpoint dimensions disagree with its contents"));
        }
        ck.params.gru.check()?;
        ck.params.dense.check()?;
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// `epoch,loss` rows, epochs counted from 1.
pub fn loss_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    out
}

/// File names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const LOSS: &str = "loss.csv";
    pub const CHECKPOINT: &str = "checkpoint.json";
    pub const MODEL: &str = "model.txt";
    pub const EVAL: &str = "eval.json";
}

/// Writes the config echo, loss history, checkpoint, the recovered equations
/// and (when given) the evaluation report into `dir`.
pub fn write_run_dir(dir: &Path, rec: &RecoveredModel, report: Option<&EvalReport>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(files::CONFIG), rec.config.to_toml_string())?;
    fs::write(dir.join(files::LOSS), loss_csv(&rec.history))?;
    fs::write(dir.join(files::CHECKPOINT), Checkpoint::from_recovered(rec).to_json())?;
    fs::write(dir.join(files::MODEL), rec.model.equations())?;
    if let Some(r) = report {
        fs::write(dir.join(files::EVAL), r.to_json())?;
    }
    Ok(())
}

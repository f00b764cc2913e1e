use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AblationFlags, RunConfig};
use super::evaluate::{evaluate_model, EvalOptions};
use super::train::{load_sequences, Trainer, CHECKPOINT_FILE};
use crate::error::{Error, Result};
use crate::evalkit::EvalReport;
use crate::net::write_checkpoint;
use crate::synthworld::Sequence;
use crate::util::atomic_write;

/// Trains for `config.optim.steps` steps in memory.
pub fn train_to_end(config: &RunConfig, sequences: &[Sequence]) -> Result<Trainer> {
    let mut t = Trainer::new(config.clone(), sequences)?;
    while t.step < config.optim.steps {
        t.train_step()?;
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub flags: AblationFlags,
    pub report: EvalReport,
}

/// Trains and evaluates the four OPE x HA variants of `base`.
pub fn ablate(
    base: &RunConfig,
    train: &[Sequence],
    test: &[Sequence],
    opts: &EvalOptions,
) -> Result<Vec<(AblationRow, Trainer)>> {
    AblationFlags::sweep()
        .into_par_iter()
        .map(|(name, flags)| {
            let cfg = base.clone().with_ablation(flags);
            let trainer = train_to_end(&cfg, train)?;
            let (report, _) = evaluate_model(&trainer.model, &cfg.fingerprint(), test, opts)?;
            Ok((
                AblationRow {
                    name,
                    flags,
                    report,
                },
                trainer,
            ))
        })
        .collect()
}

pub const ABLATION_FILE: &str = "ablation.json";

/// Runs the sweep on the config's datasets, writing one checkpoint per row
/// under `out_dir/<row>/` plus `ablation.json`. Returns the rows and a text
/// table.
pub fn ablate_run(
    base: &RunConfig,
    out_dir: &Path,
    opts: &EvalOptions,
) -> Result<(Vec<AblationRow>, String)> {
    base.validate()?;
    let train = load_sequences(&base.data.train)?;
    if base.data.test.is_empty() {
        return Err(Error::Config("ablation needs test datasets".into()));
    }
    let test = load_sequences(&base.data.test)?;
    let results = ablate(base, &train, &test, opts)?;
    let mut rows = Vec::with_capacity(results.len());
    let mut table = String::new();
    for (k, (row, trainer)) in results.into_iter().enumerate() {
        let dir = out_dir.join(&row.name);
        std::fs::create_dir_all(&dir)?;
        write_checkpoint(&dir.join(CHECKPOINT_FILE), &trainer.checkpoint())?;
        trainer.config.save(&dir.join("config.json"))?;
        let t = row.report.table(&row.name);
        if k == 0 {
            table.push_str(&t);
        } else {
            table.push_str(t.lines().nth(1).unwrap_or(""));
            table.push('\n');
        }
        rows.push(row);
    }
    atomic_write(
        &out_dir.join(ABLATION_FILE),
        &serde_json::to_vec_pretty(&rows)?,
    )?;
    Ok((rows, table))
}

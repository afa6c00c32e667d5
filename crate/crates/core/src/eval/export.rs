use std::path::Path;

use super::checkpoint::Checkpoint;
use crate::error::Result;
use crate::model::ModelKind;

/// Plain-network checkpoint materialized at `x`; optimizer state is dropped.
pub fn export_plain(ckpt: &Checkpoint, x: f64) -> Result<Checkpoint> {
    let plain = ckpt.model()?.materialize(x)?;
    let h = &ckpt.header;
    let tensors = plain
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    Ok(Checkpoint::assemble(
        ModelKind::Plain,
        plain.config().clone(),
        h.train.clone(),
        h.iteration,
        h.seed,
        Some(x),
        None,
        tensors,
    ))
}

pub fn export_plain_to(ckpt: &Checkpoint, x: f64, path: impl AsRef<Path>) -> Result<Checkpoint> {
    let out = export_plain(ckpt, x)?;
    out.save(path)?;
    Ok(out)
}

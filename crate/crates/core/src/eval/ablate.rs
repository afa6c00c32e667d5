//! Ablation harness: the same architecture and training budget with
//! different weight parameterizations.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::metrics::report_db;
use super::restore::evaluate_at;
use crate::data::ImageBuffer;
use crate::error::{Error, Result};
use crate::func_param::MapKind;
use crate::model::{Model, ModelKind, NetworkConfig};
use crate::train::{run_training, LossReport, TrainConfig, TrainOutputs, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Functional parameters with the task's own map.
    Funcnet,
    /// One fixed weight set trained on the full parameter range.
    Plain,
    /// Functional parameters with `H(x) = x`.
    IdentityH,
    /// Functional parameters with a learned map.
    MlpH,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Funcnet,
        Variant::Plain,
        Variant::IdentityH,
        Variant::MlpH,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Funcnet => "funcnet",
            Variant::Plain => "plain",
            Variant::IdentityH => "identity_h",
            Variant::MlpH => "mlp_h",
        }
    }

    pub fn kind(self) -> ModelKind {
        match self {
            Variant::Plain => ModelKind::Plain,
            _ => ModelKind::Funcnet,
        }
    }

    /// Network for this variant derived from the FuncNet configuration.
    pub fn network(self, base: &NetworkConfig) -> NetworkConfig {
        let map = match self {
            Variant::Funcnet | Variant::Plain => base.map,
            Variant::IdentityH => MapKind::Identity,
            Variant::MlpH => MapKind::LearnedMlp,
        };
        NetworkConfig {
            map,
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// Variant whose trained model was reused; differs from `variant` when
    /// two variants have identical effective configurations.
    pub trained_as: Variant,
    pub levels: Vec<f64>,
    pub psnr: Vec<f64>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.psnr.len() as f64
    }
}

pub fn checkpoint_path(dir: &Path, variant: Variant) -> PathBuf {
    dir.join(format!("{}.fnck", variant.name()))
}

/// Trains `variant` into `dir`, or continues/reuses a checkpoint there when
/// its network and training configuration match.
pub fn train_variant(
    variant: Variant,
    base: &NetworkConfig,
    train: &TrainConfig,
    train_images: &[ImageBuffer],
    val_images: &[ImageBuffer],
    dir: &Path,
    progress: &mut dyn FnMut(Variant, &LossReport, Option<&[f64]>),
) -> Result<Model<f32>> {
    let network = variant.network(base);
    let path = checkpoint_path(dir, variant);
    let mut trainer = None;
    if path.is_file() {
        let ckpt = Checkpoint::load(&path)?;
        let h = &ckpt.header;
        if h.kind == variant.kind() && h.network == network && h.train.as_ref() == Some(train) {
            if h.iteration >= train.total_iters {
                return ckpt.model();
            }
            trainer = Some(ckpt.trainer()?);
        }
    }
    let mut trainer = match trainer {
        Some(t) => t,
        None => Trainer::new(variant.kind(), network, train.clone())?,
    };
    let outputs = TrainOutputs {
        checkpoint: path,
        log: dir.join(format!("{}.log.csv", variant.name())),
    };
    run_training(
        &mut trainer,
        train_images,
        val_images,
        &outputs,
        &mut |r, v| progress(variant, r, v),
    )?;
    Ok(trainer.model)
}

/// Trains every requested variant under one seed schedule and evaluates
/// each at the task's probe levels.
pub fn ablate(
    base: &NetworkConfig,
    train: &TrainConfig,
    variants: &[Variant],
    train_images: &[ImageBuffer],
    val_images: &[ImageBuffer],
    dir: &Path,
    progress: &mut dyn FnMut(Variant, &LossReport, Option<&[f64]>),
) -> Result<Vec<AblationRow>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let levels = train.task.probes();
    let mut trained: Vec<(Variant, ModelKind, NetworkConfig, Vec<f64>)> = Vec::new();
    let mut rows = Vec::new();
    for &variant in variants {
        let network = variant.network(base);
        let reuse = trained
            .iter()
            .find(|(_, kind, net, _)| *kind == variant.kind() && *net == network)
            .map(|(v, _, _, psnr)| (*v, psnr.clone()));
        let (trained_as, psnr) = match reuse {
            Some(r) => r,
            None => {
                let model = train_variant(
                    variant,
                    base,
                    train,
                    train_images,
                    val_images,
                    dir,
                    progress,
                )?;
                let psnr = levels
                    .iter()
                    .map(|&x| {
                        evaluate_at(&model, val_images, train.task, x, train.eval_seed, false)
                    })
                    .collect::<Result<Vec<_>>>()?;
                trained.push((variant, variant.kind(), network, psnr.clone()));
                (variant, psnr)
            }
        };
        rows.push(AblationRow {
            variant,
            trained_as,
            levels: levels.clone(),
            psnr,
        });
    }
    Ok(rows)
}

/// Columns `variant, trained_as, <one per level>, mean`.
pub fn write_ablation_csv(rows: &[AblationRow], out: impl Write) -> Result<()> {
    let err = |e: csv::Error| Error::Data(format!("writing ablation CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = rows.first() {
        let mut header = vec!["variant".to_string(), "trained_as".into()];
        header.extend(first.levels.iter().map(|x| x.to_string()));
        header.push("mean".into());
        w.write_record(&header).map_err(err)?;
    }
    for r in rows {
        let mut rec = vec![
            r.variant.name().to_string(),
            r.trained_as.name().to_string(),
        ];
        rec.extend(r.psnr.iter().map(|&p| report_db(p).to_string()));
        rec.push(report_db(r.mean()).to_string());
        w.write_record(&rec).map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("writing ablation CSV: {e}")))
}

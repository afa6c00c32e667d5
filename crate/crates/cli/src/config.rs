//! Run configuration: an optional TOML file overlaid with command-line flags.
//!
//! ```toml
//! model = "funcnet"
//! map = "identity"
//! channels = 3
//!
//! [data]
//! manifest = "data/corpus/manifest.csv"
//!
//! [train]
//! task = "denoise"
//! total_iters = 20000
//! seed = 1
//!
//! [network]          # optional; omitted means the default backbone
//! input_channels = 3
//! # ...
//! ```
//!
//! Relative paths in the file resolve against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use funcnet::data::Manifest;
use funcnet::func_param::MapKind;
use funcnet::model::{ModelKind, NetworkConfig};
use funcnet::train::TrainConfig;
use funcnet::{Error, Result};
use serde::Deserialize;

use crate::args::RunArgs;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub model: Option<ModelKind>,
    pub map: Option<MapKind>,
    pub channels: Option<usize>,
    pub data: DataConfig,
    pub train: Option<TrainConfig>,
    pub network: Option<NetworkConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: CliConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(m) = &mut cfg.data.manifest {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        Ok(cfg)
    }
}

/// Fully resolved settings of a training run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub manifest: Manifest,
}

fn from_cli(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Merges `--config` with flags typed on the command line, validates the
/// result and checks that every listed image exists.
pub fn resolve(run: &RunArgs, m: &ArgMatches) -> Result<RunConfig> {
    let file = match &run.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    let set = |id: &str| from_cli(m, id);

    let mut train = file.train.clone().unwrap_or_default();
    if set("task") || file.train.is_none() {
        train.task = run
            .task
            .task()
            .ok_or_else(|| Error::Config("training needs a concrete --task".into()))?;
    }
    let overrides: [(&str, &dyn Fn(&mut TrainConfig)); 10] = [
        ("iters", &|t| t.total_iters = run.iters),
        ("seed", &|t| t.seed = run.seed),
        ("lr", &|t| t.lr0 = run.lr),
        ("decay_every", &|t| t.decay_every = run.decay_every),
        ("batch", &|t| t.batch_n = run.batch),
        ("patch", &|t| t.patch = run.patch),
        ("levels_per_batch", &|t| {
            t.levels_per_batch = run.levels_per_batch
        }),
        ("val_every", &|t| t.val_every = run.val_every),
        ("checkpoint_every", &|t| {
            t.checkpoint_every = run.checkpoint_every
        }),
        ("eval_seed", &|t| t.eval_seed = run.eval_seed),
    ];
    for (id, apply) in overrides {
        if set(id) || file.train.is_none() {
            apply(&mut train);
        }
    }
    train.validate()?;

    let kind = if set("model") {
        run.model.into()
    } else {
        file.model.unwrap_or_else(|| run.model.into())
    };
    let map = if set("map") { run.map.map() } else { file.map }.unwrap_or(train.task.map_kind());
    let channels = if set("channels") {
        Some(run.channels)
    } else {
        file.channels
    }
    .filter(|&c| c > 0)
    .unwrap_or(train.task.default_channels());

    let network = match file.network {
        Some(mut n) => {
            if set("map") || file.map.is_some() {
                n.map = map;
            }
            if set("channels") || file.channels.is_some() {
                return Err(Error::Config(
                    "channels cannot be overridden for an explicit [network]".into(),
                ));
            }
            n
        }
        None => NetworkConfig::desk_default(channels, train.task.domain(), map),
    };
    network.validate()?;

    let manifest_path = match (&file.data.manifest, set("manifest")) {
        (Some(p), false) => p.clone(),
        _ => run.manifest.clone(),
    };
    let manifest = Manifest::load(&manifest_path)?;
    Ok(RunConfig {
        kind,
        network,
        train,
        manifest,
    })
}

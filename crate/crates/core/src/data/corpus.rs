//! CSV manifest of train/validation images.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{pnm, ImageBuffer};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
}

/// Manifest with paths resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses `path,split` rows and checks that every listed file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut entries = Vec::new();
        for (i, row) in reader.deserialize::<ManifestEntry>().enumerate() {
            let mut entry =
                row.map_err(|e| Error::Data(format!("{} row {}: {e}", path.display(), i + 2)))?;
            entry.path = base.join(&entry.path);
            if !entry.path.is_file() {
                return Err(Error::Data(format!(
                    "{} row {}: image {} does not exist",
                    path.display(),
                    i + 2,
                    entry.path.display()
                )));
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(Error::Data(format!("{} lists no images", path.display())));
        }
        Ok(Manifest { entries })
    }

    pub fn paths(&self, split: Split) -> impl Iterator<Item = &Path> {
        self.entries
            .iter()
            .filter(move |e| e.split == split)
            .map(|e| e.path.as_path())
    }

    /// Reads every image of `split`, converted to `channels` channels.
    pub fn load_split(&self, split: Split, channels: usize) -> Result<Vec<ImageBuffer>> {
        let images = self
            .paths(split)
            .map(|p| pnm::read(p)?.with_channels(channels))
            .collect::<Result<Vec<_>>>()?;
        if images.is_empty() {
            return Err(Error::Data(format!("manifest has no {split} images")));
        }
        Ok(images)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

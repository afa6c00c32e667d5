//! Task definitions, parameter sampling, patch extraction and dihedral
//! augmentation.

use std::fmt;
use std::str::FromStr;

use funcnet_tensor::Tensor;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::degrade::{add_awgn_slice, jpeg_degrade};
use super::ImageBuffer;
use crate::error::{Error, Result};
use crate::func_param::{MapKind, ParamDomain};
use crate::rng::{stream, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Additive white Gaussian noise, parameter σ on the 0–255 scale.
    Denoise,
    /// JPEG quantization artifacts, parameter is the quality factor.
    Deblock,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Denoise => "denoise",
            Task::Deblock => "deblock",
        }
    }

    pub fn domain(self) -> ParamDomain {
        match self {
            Task::Denoise => ParamDomain { lo: 0.0, hi: 75.0 },
            Task::Deblock => ParamDomain { lo: 10.0, hi: 80.0 },
        }
    }

    pub fn map_kind(self) -> MapKind {
        match self {
            Task::Denoise => MapKind::Identity,
            Task::Deblock => MapKind::JpegScale,
        }
    }

    pub fn default_channels(self) -> usize {
        match self {
            Task::Denoise => 3,
            Task::Deblock => 1,
        }
    }

    /// Patches must start on the 8×8 block grid.
    pub fn align8(self) -> bool {
        self == Task::Deblock
    }

    /// Parameter levels reported during validation.
    pub fn probes(self) -> Vec<f64> {
        match self {
            Task::Denoise => vec![15.0, 35.0, 75.0],
            Task::Deblock => vec![10.0, 20.0, 30.0, 40.0],
        }
    }

    pub fn sweep_grid(self) -> Vec<f64> {
        match self {
            Task::Denoise => vec![5.0, 15.0, 25.0, 35.0, 50.0, 75.0],
            Task::Deblock => vec![10.0, 20.0, 30.0, 40.0],
        }
    }

    /// Denoise: uniform on `(0, 75]`. Deblock: uniform on `{10, 12, ..., 80}`.
    pub fn sample_parameter(self, rng: &mut impl Rng) -> f64 {
        match self {
            Task::Denoise => 75.0 * (1.0 - rng.random::<f64>()),
            Task::Deblock => f64::from(10 + 2 * rng.random_range(0..=35u32)),
        }
    }

    /// Degrades `img` at parameter `x`; `rng` feeds the noise.
    pub fn degrade(self, img: &ImageBuffer, x: f64, rng: &mut impl Rng) -> Result<ImageBuffer> {
        match self {
            Task::Denoise => {
                let mut out = img.clone();
                add_awgn_slice(out.data_mut(), x, rng)?;
                Ok(out)
            }
            Task::Deblock => jpeg_degrade(img, x),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoise" => Ok(Task::Denoise),
            "deblock" => Ok(Task::Deblock),
            other => Err(Error::Config(format!(
                "unknown task {other:?} (expected denoise or deblock)"
            ))),
        }
    }
}

/// Applies the dihedral element `code` to a planar `[c, h, w]` buffer:
/// `code & 3` counter-clockwise quarter turns, then a horizontal flip when
/// `code & 4` is set. Returns the buffer and its new `(h, w)`.
pub fn dihedral<T: Copy>(
    data: &[T],
    c: usize,
    h: usize,
    w: usize,
    code: u8,
) -> (Vec<T>, usize, usize) {
    assert!(code < 8, "dihedral code {code} out of range");
    assert_eq!(data.len(), c * h * w);
    let turns = code & 3;
    let flip = code & 4 != 0;
    let (oh, ow) = if turns % 2 == 1 { (w, h) } else { (h, w) };
    let mut out = Vec::with_capacity(data.len());
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let x = if flip { ow - 1 - x } else { x };
                let (sy, sx) = match turns {
                    0 => (y, x),
                    1 => (x, w - 1 - y),
                    2 => (h - 1 - y, w - 1 - x),
                    _ => (h - 1 - x, y),
                };
                out.push(plane[sy * w + sx]);
            }
        }
    }
    (out, oh, ow)
}

/// Code of the inverse transform.
pub fn dihedral_inverse(code: u8) -> u8 {
    if code & 4 != 0 {
        code
    } else {
        (4 - code) & 3
    }
}

/// Dihedral augmentation of a square patch.
pub fn augment(img: &ImageBuffer, code: u8) -> Result<ImageBuffer> {
    if code >= 8 {
        return Err(Error::Config(format!(
            "augmentation code {code} outside 0..8"
        )));
    }
    if img.width() != img.height() && code & 1 == 1 {
        return Err(Error::Data(
            "rotating a non-square patch changes its shape".into(),
        ));
    }
    let (data, h, w) = dihedral(img.data(), img.channels(), img.height(), img.width(), code);
    ImageBuffer::new(w, h, img.channels(), data)
}

fn check_images(images: &[ImageBuffer], patch: usize, align8: bool) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Data("no training images".into()));
    }
    if patch == 0 || (align8 && !patch.is_multiple_of(8)) {
        return Err(Error::Config(format!(
            "patch size {patch} must be positive (and a multiple of 8 when aligned)"
        )));
    }
    let c = images[0].channels();
    for (i, img) in images.iter().enumerate() {
        if img.width() < patch || img.height() < patch {
            return Err(Error::Data(format!(
                "image {i} is {}x{}, smaller than the {patch}x{patch} patch",
                img.width(),
                img.height()
            )));
        }
        if img.channels() != c {
            return Err(Error::Data("images have mixed channel counts".into()));
        }
    }
    Ok(())
}

fn draw_crop(
    images: &[ImageBuffer],
    patch: usize,
    align8: bool,
    rng: &mut impl Rng,
) -> Result<ImageBuffer> {
    let img = &images[rng.random_range(0..images.len())];
    let (ry, rx) = (img.height() - patch, img.width() - patch);
    let (y, x) = if align8 {
        (
            8 * rng.random_range(0..=ry / 8),
            8 * rng.random_range(0..=rx / 8),
        )
    } else {
        (rng.random_range(0..=ry), rng.random_range(0..=rx))
    };
    img.crop(y, x, patch, patch)
}

fn stack(patches: Vec<Vec<f32>>, c: usize, patch: usize) -> Tensor<f32> {
    let n = patches.len();
    Tensor::from_vec(&[n, c, patch, patch], patches.concat()).expect("patch geometry")
}

/// Clean patches for one iteration. Sample `i` draws its image and origin
/// from stream `(seed, Patch, iteration, i)`.
pub fn sample_patches(
    images: &[ImageBuffer],
    patch: usize,
    batch_n: usize,
    align8: bool,
    seed: u64,
    iteration: u64,
) -> Result<Tensor<f32>> {
    check_images(images, patch, align8)?;
    let crops = (0..batch_n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Purpose::Patch, iteration, i as u64);
            Ok(draw_crop(images, patch, align8, &mut rng)?.data().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(stack(crops, images[0].channels(), patch))
}

/// Clean/degraded training pair with the parameter of each sample.
#[derive(Clone, Debug)]
pub struct PatchBatch {
    pub clean: Tensor<f32>,
    pub degraded: Tensor<f32>,
    pub parameters: Vec<f64>,
}

/// Builds a minibatch: sample `i` gets `levels[i / (batch_n / levels.len())]`,
/// is degraded with noise stream `(seed, Noise, iteration, i)`, and both
/// patches receive the same dihedral augmentation.
pub fn make_batch(
    images: &[ImageBuffer],
    task: Task,
    patch: usize,
    batch_n: usize,
    levels: &[f64],
    seed: u64,
    iteration: u64,
) -> Result<PatchBatch> {
    if levels.is_empty() || !batch_n.is_multiple_of(levels.len()) {
        return Err(Error::Config(format!(
            "batch of {batch_n} cannot be split evenly across {} levels",
            levels.len()
        )));
    }
    check_images(images, patch, task.align8())?;
    let per_level = batch_n / levels.len();
    let c = images[0].channels();
    let pairs = (0..batch_n)
        .into_par_iter()
        .map(|i| {
            let x = levels[i / per_level];
            let mut rng = stream(seed, Purpose::Patch, iteration, i as u64);
            let clean = draw_crop(images, patch, task.align8(), &mut rng)?;
            let code = rng.random_range(0..8u8);
            let degraded = task.degrade(
                &clean,
                x,
                &mut stream(seed, Purpose::Noise, iteration, i as u64),
            )?;
            let clean = dihedral(clean.data(), c, patch, patch, code).0;
            let degraded = dihedral(degraded.data(), c, patch, patch, code).0;
            Ok((clean, degraded))
        })
        .collect::<Result<Vec<_>>>()?;
    let (clean, degraded): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(PatchBatch {
        clean: stack(clean, c, patch),
        degraded: stack(degraded, c, patch),
        parameters: (0..batch_n).map(|i| levels[i / per_level]).collect(),
    })
}

//! Evaluation protocol: degrade validation images at a fixed seed, restore
//! through a materialized network, clamp, and average PSNR.

use std::io::Write;

use funcnet_tensor::{Element, Tensor};
use rayon::prelude::*;

use super::metrics::{psnr, report_db};
use crate::data::{dihedral, dihedral_inverse, ImageBuffer, Task};
use crate::error::{Error, Result};
use crate::model::{Model, PlainNetwork};
use crate::rng::{stream, Purpose};

/// Degraded copy of validation image `index` at level `x`.
pub fn degrade_for_eval(
    task: Task,
    img: &ImageBuffer,
    x: f64,
    seed: u64,
    index: usize,
) -> Result<ImageBuffer> {
    task.degrade(
        img,
        x,
        &mut stream(seed, Purpose::Eval, x.to_bits(), index as u64),
    )
}

/// Averages the network output over the eight dihedral transforms of the
/// input, undoing each transform before averaging.
pub fn self_ensemble<T: Element>(net: &PlainNetwork<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = match *input.dims() {
        [n, c, h, w] => (n, c, h, w),
        ref d => {
            return Err(Error::Config(format!(
                "expected an [N, C, H, W] input, got {d:?}"
            )))
        }
    };
    let mut acc = vec![T::zero(); input.numel()];
    for code in 0..8u8 {
        let (t, th, tw) = dihedral(input.data(), n * c, h, w, code);
        let out = net.forward(&Tensor::from_vec(&[n, c, th, tw], t)?)?;
        let (back, _, _) = dihedral(out.data(), n * c, th, tw, dihedral_inverse(code));
        for (a, b) in acc.iter_mut().zip(back) {
            *a = *a + b;
        }
    }
    let eighth = T::from_f64_lossy(0.125);
    Ok(Tensor::from_vec(
        input.dims(),
        acc.into_iter().map(|v| v * eighth).collect(),
    )?)
}

/// Restored image, clamped to `[0, 1]`.
pub fn restore(
    net: &PlainNetwork<f32>,
    degraded: &ImageBuffer,
    ensemble: bool,
) -> Result<ImageBuffer> {
    let input = degraded.to_tensor::<f32>();
    let out = if ensemble {
        self_ensemble(net, &input)?
    } else {
        net.forward(&input)?
    };
    Ok(ImageBuffer::from_tensor(&out)?.clamped())
}

/// Mean PSNR of `net` over `images` degraded at `x`.
pub fn evaluate_plain(
    net: &PlainNetwork<f32>,
    images: &[ImageBuffer],
    task: Task,
    x: f64,
    seed: u64,
    ensemble: bool,
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Data("no evaluation images".into()));
    }
    let scores = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let degraded = degrade_for_eval(task, img, x, seed, i)?;
            psnr(&restore(net, &degraded, ensemble)?, img, 1.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Materializes `model` at `x` and evaluates it.
pub fn evaluate_at(
    model: &Model<f32>,
    images: &[ImageBuffer],
    task: Task,
    x: f64,
    seed: u64,
    ensemble: bool,
) -> Result<f64> {
    evaluate_plain(&model.materialize(x)?, images, task, x, seed, ensemble)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub x: f64,
    pub psnr: f64,
    pub images: usize,
}

/// One evaluation row per level; levels must be strictly increasing.
pub fn sweep(
    model: &Model<f32>,
    images: &[ImageBuffer],
    task: Task,
    xs: &[f64],
    seed: u64,
    ensemble: bool,
) -> Result<Vec<SweepRow>> {
    if xs.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(
            "sweep levels must be strictly increasing".into(),
        ));
    }
    for &x in xs {
        model.config().domain.check(x)?;
    }
    xs.iter()
        .map(|&x| {
            Ok(SweepRow {
                x,
                psnr: evaluate_at(model, images, task, x, seed, ensemble)?,
                images: images.len(),
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Data(format!("writing sweep CSV: {e}"));
    w.write_record(["x", "psnr_db", "images"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.x.to_string(),
            report_db(r.psnr).to_string(),
            r.images.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("writing sweep CSV: {e}")))?;
    Ok(())
}

//! Convolution kernels evaluated across parameter levels.

use std::io::Write;

use crate::data::ImageBuffer;
use crate::error::{Error, Result};
use crate::model::{FuncNetwork, LayerSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSlice {
    pub x: f64,
    pub t: f64,
    /// Row-major `k × k` values.
    pub values: Vec<f32>,
}

impl KernelSlice {
    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrid {
    pub layer: usize,
    pub out_channel: usize,
    pub in_channel: usize,
    pub k: usize,
    pub slices: Vec<KernelSlice>,
}

/// Evaluates the `(out_channel, in_channel)` slice of conv layer `layer` at
/// every level in `xs`.
pub fn kernel_viz(
    net: &FuncNetwork<f32>,
    layer: usize,
    out_channel: usize,
    in_channel: usize,
    xs: &[f64],
) -> Result<KernelGrid> {
    let (in_ch, out_ch, k) = match net.config().layers.get(layer) {
        Some(&LayerSpec::Conv { in_ch, out_ch, k }) => (in_ch, out_ch, k),
        Some(other) => {
            return Err(Error::Config(format!(
                "layer {layer} is {other:?}, not a convolution"
            )))
        }
        None => return Err(Error::Config(format!("network has no layer {layer}"))),
    };
    if out_channel >= out_ch || in_channel >= in_ch {
        return Err(Error::Config(format!(
            "channel ({out_channel}, {in_channel}) outside the {out_ch}x{in_ch} kernel bank of layer {layer}"
        )));
    }
    let index = net
        .config()
        .param_specs()
        .iter()
        .position(|s| s.layer == layer)
        .expect("conv layers own a kernel");
    let param = &net.params()[index];
    let start = (out_channel * in_ch + in_channel) * k * k;
    let slices = xs
        .iter()
        .map(|&x| {
            let t = net.normalize(x)?;
            Ok(KernelSlice {
                x,
                t,
                values: param.evaluate(t).data()[start..start + k * k].to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelGrid {
        layer,
        out_channel,
        in_channel,
        k,
        slices,
    })
}

impl KernelGrid {
    /// Columns `x, t, l2_norm, w0 .. w{k²-1}`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let err = |e: csv::Error| Error::Data(format!("writing kernel CSV: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x".to_string(), "t".into(), "l2_norm".into()];
        header.extend((0..self.k * self.k).map(|i| format!("w{i}")));
        w.write_record(&header).map_err(err)?;
        for s in &self.slices {
            let mut row = vec![s.x.to_string(), s.t.to_string(), s.l2_norm().to_string()];
            row.extend(s.values.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::Data(format!("writing kernel CSV: {e}")))
    }

    /// Each slice rescaled so its minimum maps to 0 and its maximum to 255; a
    /// constant slice maps to mid-gray.
    pub fn normalized_slices(&self) -> Vec<Vec<u8>> {
        self.slices
            .iter()
            .map(|s| {
                let lo = s.values.iter().copied().fold(f32::INFINITY, f32::min);
                let hi = s.values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                s.values
                    .iter()
                    .map(|&v| {
                        if hi > lo {
                            ((f64::from(v - lo) / f64::from(hi - lo)) * 255.0).round() as u8
                        } else {
                            128
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Slices side by side, separated by one-pixel black gaps.
    pub fn montage(&self) -> Result<ImageBuffer> {
        let n = self.slices.len();
        if n == 0 {
            return Err(Error::Config("kernel grid has no levels".into()));
        }
        let k = self.k;
        let width = n * k + (n - 1);
        let mut bytes = vec![0u8; width * k];
        for (i, s) in self.normalized_slices().iter().enumerate() {
            for y in 0..k {
                for x in 0..k {
                    bytes[y * width + i * (k + 1) + x] = s[y * k + x];
                }
            }
        }
        ImageBuffer::from_u8(width, k, 1, &bytes)
    }
}

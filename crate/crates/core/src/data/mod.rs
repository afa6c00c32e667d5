//! Images, degradations and the training patch pipeline.

pub mod corpus;
pub mod degrade;
pub mod patches;
pub mod pnm;

use funcnet_tensor::{Element, Tensor};

use crate::error::{Error, Result};

pub use corpus::{Manifest, ManifestEntry, Split};
pub use degrade::{add_awgn, jpeg_degrade, quant_table, DegradationSpec, LUMINANCE_TABLE};
pub use patches::{
    augment, dihedral, dihedral_inverse, make_batch, sample_patches, PatchBatch, Task,
};

/// Planar (channel-major) float image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Data(format!(
                "invalid image geometry {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Data(format!(
                "image buffer holds {} values, geometry needs {}",
                data.len(),
                width * height * channels
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite pixel value at index {i}")));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    /// From interleaved 8-bit samples.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * channels {
            return Err(Error::Data(
                "pixel byte count does not match geometry".into(),
            ));
        }
        let plane = width * height;
        let mut data = vec![0.0f32; bytes.len()];
        for (i, &b) in bytes.iter().enumerate() {
            data[(i % channels) * plane + i / channels] = f32::from(b) / 255.0;
        }
        ImageBuffer::new(width, height, channels, data)
    }

    /// Interleaved 8-bit samples after clamping to `[0, 1]` and rounding.
    pub fn to_u8(&self) -> Vec<u8> {
        let plane = self.width * self.height;
        let mut out = vec![0u8; self.data.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let v = self.data[(i % self.channels) * plane + i / self.channels];
            *o = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_geometry(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn clamped(&self) -> ImageBuffer {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    /// Rec. 601 luma for RGB images; gray images are returned unchanged.
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = (0..r.len())
            .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
            .collect();
        ImageBuffer {
            data,
            channels: 1,
            ..*self
        }
    }

    /// Replicates a gray plane into three channels.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        ImageBuffer {
            data,
            channels: 3,
            ..*self
        }
    }

    pub fn with_channels(&self, channels: usize) -> Result<ImageBuffer> {
        match channels {
            1 => Ok(self.to_gray()),
            3 => Ok(self.to_rgb()),
            c => Err(Error::Config(format!("unsupported channel count {c}"))),
        }
    }

    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<ImageBuffer> {
        if y + h > self.height || x + w > self.width || h == 0 || w == 0 {
            return Err(Error::Data(format!(
                "crop {h}x{w} at ({y}, {x}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for c in 0..self.channels {
            let p = self.plane(c);
            for row in y..y + h {
                data.extend_from_slice(&p[row * self.width + x..row * self.width + x + w]);
            }
        }
        Ok(ImageBuffer {
            width: w,
            height: h,
            channels: self.channels,
            data,
        })
    }

    /// `[1, C, H, W]` tensor.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data = self
            .data
            .iter()
            .map(|&v| T::from_f64_lossy(f64::from(v)))
            .collect();
        Tensor::from_vec(&[1, self.channels, self.height, self.width], data)
            .expect("geometry checked")
    }

    /// Image from a `[1, C, H, W]` tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<ImageBuffer> {
        match *t.dims() {
            [1, c, h, w] => ImageBuffer::new(
                w,
                h,
                c,
                t.data().iter().map(|v| v.as_f64() as f32).collect(),
            ),
            ref d => Err(Error::Data(format!(
                "expected a [1, C, H, W] tensor, got {d:?}"
            ))),
        }
    }
}

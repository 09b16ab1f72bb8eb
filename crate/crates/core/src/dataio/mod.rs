//! Image datasets: MNIST IDX and CIFAR-10 binary ingestion, the native
//! `DRSET` container, grayscale conversion, per-channel views and synthetic
//! Gaussian data.

mod cifar;
mod drset;
mod idx;
mod synthetic;

pub use cifar::load_cifar_binary;
pub use drset::{load_drset, save_drset};
pub use idx::{load_idx, write_idx};
pub use synthetic::synthetic_gaussian;

use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}")]
    BadPath {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { expected: u32, found: u32 },
    #[error("image file holds {images} samples but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("unrecognized header: {0}")]
    BadHeader(String),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("expected a 3-channel image set, got {0} channel(s)")]
    NotThreeChannel(usize),
    #[error("channel {channel} out of range for {channels} channel(s)")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("invalid image set: {0}")]
    Invalid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A batch of images stored sample-major, each sample channel-planar
/// (`channel, row, column`), with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    labels: Vec<usize>,
}

impl ImageSet {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self, DataError> {
        let sample_len = channels * height * width;
        if sample_len == 0 {
            return Err(DataError::Invalid(format!(
                "empty sample shape {channels}x{height}x{width}"
            )));
        }
        if pixels.len() != labels.len() * sample_len {
            return Err(DataError::Invalid(format!(
                "{} pixel values for {} samples of {sample_len}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(pos) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(DataError::Invalid(format!(
                "pixel {pos} = {} outside [0, 1]",
                pixels[pos]
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            pixels,
            labels,
        })
    }

    /// Builds a set from f64 sample vectors, clamping into `[0, 1]`.
    pub fn from_samples<S: AsRef<[f64]>>(
        channels: usize,
        height: usize,
        width: usize,
        samples: &[S],
        labels: Vec<usize>,
    ) -> Result<Self, DataError> {
        let mut pixels = Vec::with_capacity(samples.len() * channels * height * width);
        for s in samples {
            pixels.extend(s.as_ref().iter().map(|&v| v.clamp(0.0, 1.0) as f32));
        }
        Self::new(channels, height, width, pixels, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Values per sample, `channels × height × width`.
    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.pixels[i * len..(i + 1) * len]
    }

    pub fn sample_f64(&self, i: usize) -> Vec<f64> {
        self.sample(i).iter().map(|&p| p as f64).collect()
    }

    pub fn same_shape(&self, other: &ImageSet) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    /// The samples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> ImageSet {
        let len = self.sample_len();
        let mut pixels = Vec::with_capacity(idx.len() * len);
        for &i in idx {
            pixels.extend_from_slice(self.sample(i));
        }
        ImageSet {
            pixels,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ..*self
        }
    }

    /// The first `n` samples (or all of them).
    pub fn head(&self, n: usize) -> ImageSet {
        let n = n.min(self.len());
        ImageSet {
            pixels: self.pixels[..n * self.sample_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..*self
        }
    }

    /// All channels flattened into one `n × (channels·height·width)` matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_raw(
            self.len(),
            self.sample_len(),
            self.pixels.iter().map(|&p| p as f64).collect(),
        )
    }

    pub fn channel(&self, channel: usize) -> Result<ChannelView<'_>, DataError> {
        if channel >= self.channels {
            return Err(DataError::ChannelOutOfRange {
                channel,
                channels: self.channels,
            });
        }
        Ok(ChannelView {
            parent: self,
            channel,
        })
    }

    /// BT.601 luma conversion of a 3-channel set.
    pub fn to_grayscale(&self) -> Result<ImageSet, DataError> {
        to_grayscale(self)
    }
}

/// One colour plane of every sample in an [`ImageSet`].
#[derive(Debug, Clone, Copy)]
pub struct ChannelView<'a> {
    parent: &'a ImageSet,
    channel: usize,
}

impl<'a> ChannelView<'a> {
    pub fn index(&self) -> usize {
        self.channel
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Sample `i`'s plane, row-major.
    pub fn plane(&self, i: usize) -> &'a [f32] {
        let plane = self.parent.plane_len();
        let start = i * self.parent.sample_len() + self.channel * plane;
        &self.parent.pixels[start..start + plane]
    }

    pub fn to_matrix(&self) -> Matrix {
        let plane = self.parent.plane_len();
        let mut data = Vec::with_capacity(self.len() * plane);
        for i in 0..self.len() {
            data.extend(self.plane(i).iter().map(|&p| p as f64));
        }
        Matrix::from_raw(self.len(), plane, data)
    }
}

/// `n × (height·width)` matrix holding one channel of every sample.
pub fn channel_matrix(set: &ImageSet, channel: usize) -> Result<Matrix, DataError> {
    Ok(set.channel(channel)?.to_matrix())
}

pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

pub fn to_grayscale(set: &ImageSet) -> Result<ImageSet, DataError> {
    if set.channels != 3 {
        return Err(DataError::NotThreeChannel(set.channels));
    }
    let plane = set.plane_len();
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let mut pixels = Vec::with_capacity(set.len() * plane);
    for i in 0..set.len() {
        let s = set.sample(i);
        let (r, rest) = s.split_at(plane);
        let (g, b) = rest.split_at(plane);
        pixels.extend(
            r.iter()
                .zip(g)
                .zip(b)
                .map(|((&r, &g), &b)| (wr * r + wg * g + wb * b).clamp(0.0, 1.0)),
        );
    }
    Ok(ImageSet {
        channels: 1,
        pixels,
        labels: set.labels.clone(),
        ..*set
    })
}

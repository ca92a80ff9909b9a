//! Raster types shared across the crate: images, index masks and per-pixel
//! class probability maps.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower clamp applied to probabilities before taking a logarithm.
pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{what}: expected {expected} values, got {actual}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("image value {value} at index {index} outside [0, 1]")]
    ValueRange { index: usize, value: f32 },
    #[error("label {label} at pixel {index} out of range for {num_classes} classes")]
    LabelRange {
        index: usize,
        label: u8,
        num_classes: usize,
    },
    #[error("non-finite probability at pixel {pixel}")]
    NonFinite { pixel: usize },
    #[error("pixel {pixel} probabilities sum to {sum}, expected 1")]
    NotNormalized { pixel: usize, sum: f64 },
    #[error("invalid dimension: {0}")]
    Dimension(String),
}

/// Stable sample identifier. Ordering is lexicographic and is the tie-break
/// order used everywhere in the crate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub String);

impl SampleId {
    pub fn new(id: impl Into<String>) -> Self {
        SampleId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SampleId {
    fn from(s: &str) -> Self {
        SampleId(s.to_owned())
    }
}

impl From<String> for SampleId {
    fn from(s: String) -> Self {
        SampleId(s)
    }
}

/// Interleaved (row-major, channel-last) image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    id: SampleId,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(
        id: SampleId,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, TensorError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(TensorError::Dimension(format!(
                "image {id} has shape {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(TensorError::Length {
                what: "image data",
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(TensorError::ValueRange { index, value });
        }
        Ok(Image {
            id,
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from 8-bit samples, normalizing by 255.
    pub fn from_u8(
        id: SampleId,
        height: usize,
        width: usize,
        channels: usize,
        raw: &[u8],
    ) -> Result<Self, TensorError> {
        let data = raw.iter().map(|&v| f32::from(v) / 255.0).collect();
        Image::new(id, height, width, channels, data)
    }

    /// Quantizes back to 8-bit samples. Exact inverse of [`Image::from_u8`].
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn id(&self) -> &SampleId {
        &self.id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Channel values of the pixel at `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }
}

/// Per-pixel class index mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    id: SampleId,
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl Mask {
    pub fn new(
        id: SampleId,
        height: usize,
        width: usize,
        labels: Vec<u8>,
    ) -> Result<Self, TensorError> {
        if height == 0 || width == 0 {
            return Err(TensorError::Dimension(format!(
                "mask {id} has shape {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(TensorError::Length {
                what: "mask labels",
                expected: height * width,
                actual: labels.len(),
            });
        }
        Ok(Mask {
            id,
            height,
            width,
            labels,
        })
    }

    /// Checks every label is below `num_classes`.
    pub fn validate_classes(&self, num_classes: usize) -> Result<(), TensorError> {
        match self
            .labels
            .iter()
            .position(|&l| usize::from(l) >= num_classes)
        {
            Some(index) => Err(TensorError::LabelRange {
                index,
                label: self.labels[index],
                num_classes,
            }),
            None => Ok(()),
        }
    }

    pub fn id(&self) -> &SampleId {
        &self.id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn with_id(mut self, id: SampleId) -> Self {
        self.id = id;
        self
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Per-pixel class distribution. Rows are stored contiguously: pixel `i`
/// occupies `probs[i * K .. (i + 1) * K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    id: SampleId,
    height: usize,
    width: usize,
    num_classes: usize,
    probs: Vec<f64>,
}

impl ProbMap {
    /// Validating constructor: rows must already be distributions
    /// (non-negative, summing to 1 within 1e-6).
    pub fn new(
        id: SampleId,
        height: usize,
        width: usize,
        num_classes: usize,
        probs: Vec<f64>,
    ) -> Result<Self, TensorError> {
        let map = Self::checked_shape(id, height, width, num_classes, probs)?;
        for (pixel, row) in map.probs.chunks_exact(num_classes).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(TensorError::NonFinite { pixel });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(TensorError::NotNormalized { pixel, sum });
            }
        }
        Ok(map)
    }

    /// Builds a map from raw learner output: each value is clamped to
    /// `[PROB_EPSILON, 1]` and every row is then renormalized to sum to 1.
    pub fn from_learner_output(
        id: SampleId,
        height: usize,
        width: usize,
        num_classes: usize,
        mut probs: Vec<f64>,
    ) -> Result<Self, TensorError> {
        for (pixel, row) in probs.chunks_exact_mut(num_classes.max(1)).enumerate() {
            if row.iter().any(|p| !p.is_finite()) {
                return Err(TensorError::NonFinite { pixel });
            }
            for p in row.iter_mut() {
                *p = p.clamp(PROB_EPSILON, 1.0);
            }
            let sum: f64 = row.iter().sum();
            if sum != 1.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }
        Self::checked_shape(id, height, width, num_classes, probs)
    }

    fn checked_shape(
        id: SampleId,
        height: usize,
        width: usize,
        num_classes: usize,
        probs: Vec<f64>,
    ) -> Result<Self, TensorError> {
        if height == 0 || width == 0 || num_classes == 0 {
            return Err(TensorError::Dimension(format!(
                "probability map {id} has shape {height}x{width}x{num_classes}"
            )));
        }
        let expected = height * width * num_classes;
        if probs.len() != expected {
            return Err(TensorError::Length {
                what: "probabilities",
                expected,
                actual: probs.len(),
            });
        }
        Ok(ProbMap {
            id,
            height,
            width,
            num_classes,
            probs,
        })
    }

    pub fn id(&self) -> &SampleId {
        &self.id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.num_classes)
    }

    /// Argmax prediction, ties broken by the lowest class index.
    pub fn argmax(&self) -> Mask {
        let labels = self
            .rows()
            .map(|row| {
                let mut best = 0;
                for (k, &p) in row.iter().enumerate().skip(1) {
                    if p > row[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        Mask {
            id: self.id.clone(),
            height: self.height,
            width: self.width,
            labels,
        }
    }

    /// Image-level mean probability per class.
    pub fn mean_class_probs(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.num_classes];
        for row in self.rows() {
            for (a, p) in acc.iter_mut().zip(row) {
                *a += p;
            }
        }
        let n = self.num_pixels() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        let err = Image::new("a".into(), 1, 1, 1, vec![1.5]).unwrap_err();
        assert!(matches!(err, TensorError::ValueRange { .. }));
    }

    #[test]
    fn image_u8_round_trip_is_exact() {
        let raw: Vec<u8> = (0..=255).collect();
        let img = Image::from_u8("a".into(), 16, 16, 1, &raw).unwrap();
        assert_eq!(img.to_u8(), raw);
    }

    #[test]
    fn mask_label_range() {
        let m = Mask::new("m".into(), 1, 2, vec![0, 9]).unwrap();
        assert!(m.validate_classes(10).is_ok());
        assert_eq!(
            m.validate_classes(9),
            Err(TensorError::LabelRange {
                index: 1,
                label: 9,
                num_classes: 9
            })
        );
    }

    #[test]
    fn learner_output_is_clamped_and_renormalized() {
        let pm =
            ProbMap::from_learner_output("p".into(), 1, 2, 3, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0])
                .unwrap();
        for row in pm.rows() {
            assert!(row.iter().all(|&p| p >= PROB_EPSILON / 3.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        // [1, 1, eps] / (2 + eps)
        assert!((pm.pixel(1)[0] - 1.0 / (2.0 + PROB_EPSILON)).abs() < 1e-15);
    }

    #[test]
    fn validating_constructor_rejects_bad_rows() {
        let err = ProbMap::new("p".into(), 1, 1, 2, vec![0.7, 0.7]).unwrap_err();
        assert!(matches!(err, TensorError::NotNormalized { .. }));
    }

    #[test]
    fn argmax_ties_pick_lowest_class() {
        let pm = ProbMap::new("p".into(), 1, 2, 3, vec![0.4, 0.4, 0.2, 0.2, 0.4, 0.4]).unwrap();
        assert_eq!(pm.argmax().labels(), &[0, 1]);
    }
}

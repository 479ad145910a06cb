//! Scalar volumes with physical spacing.
//!
//! Axis order is `(D, H, W)` with `D` the slice axis, stored with `W`
//! varying fastest.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VolumeKind {
    Intensity,
    Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    extents: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f64>,
    kind: VolumeKind,
}

impl Volume {
    /// Validates length, finiteness, spacing, and (for masks) binarity.
    pub fn new(extents: [usize; 3], spacing: [f64; 3], data: Vec<f64>, kind: VolumeKind) -> Result<Self> {
        let n: usize = extents.iter().product();
        if data.len() != n {
            return Err(Error::InvalidShape(format!(
                "volume extents {extents:?} need {n} voxels, got {}",
                data.len()
            )));
        }
        if let Some((axis, s)) = spacing
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > 0.0))
        {
            return Err(Error::InvalidValue(format!(
                "spacing along axis {axis} must be positive and finite, got {s}"
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("volume voxel {i} is {}", data[i])));
        }
        if kind == VolumeKind::Mask {
            if let Some(i) = data.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidValue(format!(
                    "mask voxel {i} has value {} (masks must contain only 0 and 1)",
                    data[i]
                )));
            }
        }
        Ok(Volume {
            extents,
            spacing,
            data,
            kind,
        })
    }

    pub fn filled(extents: [usize; 3], value: f64, kind: VolumeKind) -> Result<Self> {
        Volume::new(extents, [1.0; 3], vec![value; extents.iter().product()], kind)
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        let data = std::mem::take(&mut self.data);
        Volume::new(self.extents, spacing, data, self.kind)
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.extents[1] + y) * self.extents[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(z, y, x)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Fraction of voxels equal to 1.
    pub fn foreground_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|&&v| v == 1.0).count() as f64 / self.data.len() as f64
    }

    /// `[1, 1, D, H, W]` network input.
    pub fn to_tensor(&self) -> Tensor {
        let [d, h, w] = self.extents;
        Tensor::from_parts(vec![1, 1, d, h, w], self.data.clone())
    }

    /// Thresholds a `[1, 1, D, H, W]` probability map into a mask (`p >= threshold`).
    pub fn mask_from_probabilities(probs: &Tensor, spacing: [f64; 3], threshold: f64) -> Result<Self> {
        let [n, c, d, h, w] = probs.dims5()?;
        if n != 1 || c != 1 {
            return Err(Error::InvalidShape(format!(
                "expected a single-item single-channel prediction, got {:?}",
                probs.shape()
            )));
        }
        let data = probs
            .data()
            .iter()
            .map(|&p| if p >= threshold { 1.0 } else { 0.0 })
            .collect();
        Volume::new([d, h, w], spacing, data, VolumeKind::Mask)
    }
}

//! Volume preprocessing: slice-wise CLAHE, min-max normalization, centre
//! crop and resampling to the network input size, applied in that order.

pub mod clahe;

use std::str::FromStr;

use rayon::prelude::*;

pub use clahe::{clahe_slice, clip_histogram, tile_mappings, ClaheParams, TileMapping};

use crate::error::{Error, Result};
use crate::nn::{nearest_index, resize_trilinear};
use crate::volume::{Volume, VolumeKind};

const AXES: [&str; 3] = ["depth", "height", "width"];

/// CLAHE on every depth slice, slices in parallel on the current rayon pool.
pub fn clahe_volume(v: &Volume, params: &ClaheParams) -> Result<Volume> {
    if v.kind() != VolumeKind::Intensity {
        return Err(Error::InvalidValue("CLAHE applies to intensity volumes only".into()));
    }
    let [_, h, w] = v.extents();
    let slices = v
        .data()
        .par_chunks(h * w)
        .map(|s| clahe_slice(s, h, w, params))
        .collect::<Result<Vec<_>>>()?;
    Volume::new(v.extents(), v.spacing(), slices.concat(), VolumeKind::Intensity)
}

/// Min-max rescale to `[0, 1]`; a constant volume maps to zeros.
pub fn normalize_volume(v: &Volume) -> Result<Volume> {
    if v.kind() != VolumeKind::Intensity {
        return Err(Error::InvalidValue("normalization applies to intensity volumes only".into()));
    }
    let (lo, hi) = v.min_max();
    let data = if hi > lo {
        let range = hi - lo;
        v.data().iter().map(|&x| (x - lo) / range).collect()
    } else {
        vec![0.0; v.len()]
    };
    Volume::new(v.extents(), v.spacing(), data, v.kind())
}

/// Start offsets of a centred crop; odd margins leave the extra voxel on
/// the high-index side.
pub fn crop_offsets(extents: [usize; 3], target: [usize; 3]) -> Result<[usize; 3]> {
    let mut off = [0; 3];
    for a in 0..3 {
        if target[a] == 0 || target[a] > extents[a] {
            return Err(Error::InvalidShape(format!(
                "crop target {} along {} must be in 1..={}",
                target[a], AXES[a], extents[a]
            )));
        }
        off[a] = (extents[a] - target[a]) / 2;
    }
    Ok(off)
}

pub fn center_crop(v: &Volume, target: [usize; 3]) -> Result<Volume> {
    let [oz, oy, ox] = crop_offsets(v.extents(), target)?;
    let [td, th, tw] = target;
    let mut data = Vec::with_capacity(td * th * tw);
    for z in 0..td {
        for y in 0..th {
            let start = v.index(z + oz, y + oy, ox);
            data.extend_from_slice(&v.data()[start..start + tw]);
        }
    }
    Volume::new(target, v.spacing(), data, v.kind())
}

/// Trilinear for intensities, nearest neighbour for masks; spacing scales
/// by the extent ratio so the physical field of view is unchanged.
pub fn resample(v: &Volume, target: [usize; 3]) -> Result<Volume> {
    if let Some(a) = target.iter().position(|&t| t == 0) {
        return Err(Error::InvalidShape(format!("resample target along {} must be >= 1", AXES[a])));
    }
    let ext = v.extents();
    let spacing = [0, 1, 2].map(|a| v.spacing()[a] * ext[a] as f64 / target[a] as f64);
    let data = match v.kind() {
        VolumeKind::Intensity => resize_trilinear(v.data(), 1, ext, target),
        VolumeKind::Mask => {
            let zs: Vec<_> = (0..target[0]).map(|o| nearest_index(o, ext[0], target[0])).collect();
            let ys: Vec<_> = (0..target[1]).map(|o| nearest_index(o, ext[1], target[1])).collect();
            let xs: Vec<_> = (0..target[2]).map(|o| nearest_index(o, ext[2], target[2])).collect();
            let mut out = Vec::with_capacity(target.iter().product());
            for &z in &zs {
                for &y in &ys {
                    out.extend(xs.iter().map(|&x| v.get(z, y, x)));
                }
            }
            out
        }
    };
    Volume::new(target, spacing, data, v.kind())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessParams {
    pub clahe: ClaheParams,
    /// `None` skips cropping.
    pub crop: Option<[usize; 3]>,
    /// `None` skips resampling.
    pub resample: Option<[usize; 3]>,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            clahe: ClaheParams::default(),
            crop: Some([88, 400, 400]),
            resample: Some([80, 256, 256]),
        }
    }
}

fn parse_extents(key: &str, value: &str) -> Result<Option<[usize; 3]>> {
    if value.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let parts: Vec<_> = value
        .split(|c: char| c == 'x' || c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(usize::from_str)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("{key}: expected DxHxW or 'none', got '{value}'")))?;
    <[usize; 3]>::try_from(parts)
        .map(Some)
        .map_err(|_| Error::Config(format!("{key}: expected three extents, got '{value}'")))
}

impl PreprocessParams {
    pub const KEYS: [&'static str; 5] = ["tiles", "clip_limit", "bins", "crop", "resample"];

    /// Sets one option from its text form. Keys: `tiles` (`YxX` or a single
    /// count), `clip_limit`, `bins`, `crop` and `resample` (`DxHxW` or
    /// `none`). Does not validate the combination; see
    /// [`ClaheParams::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("{key}: {what}, got '{value}'"));
        match key {
            "tiles" => {
                let t: Vec<usize> = value
                    .split(|c: char| c == 'x' || c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(usize::from_str)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("expected YxX"))?;
                self.clahe.tiles = match t[..] {
                    [n] => [n, n],
                    [a, b] => [a, b],
                    _ => return Err(bad("expected YxX")),
                };
            }
            "clip_limit" => self.clahe.clip_limit = value.parse().map_err(|_| bad("expected a number"))?,
            "bins" => self.clahe.bins = value.parse().map_err(|_| bad("expected an integer"))?,
            "crop" => self.crop = parse_extents(key, value)?,
            "resample" => self.resample = parse_extents(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key '{key}' (expected one of {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`; blank lines and `#`
    /// comments are skipped.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (key, value, line) in parse_key_values(text)? {
            self.set(&key, &value)
                .map_err(|e| Error::Config(format!("line {line}: {}", e.to_string().trim_start_matches("invalid configuration: "))))?;
        }
        self.clahe.validate()
    }
}

/// `(key, value, line number)` triples from `key = value` text.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", i + 1)))?;
        out.push((key.trim().to_string(), value.trim().to_string(), i + 1));
    }
    Ok(out)
}

/// CLAHE, normalize, crop, resample for the intensity volume; crop and
/// resample only for the mask.
pub fn preprocess_case(intensity: &Volume, mask: Option<&Volume>, params: &PreprocessParams) -> Result<(Volume, Option<Volume>)> {
    if let Some(m) = mask {
        if m.extents() != intensity.extents() {
            return Err(Error::InvalidShape(format!(
                "mask extents {:?} differ from intensity extents {:?}",
                m.extents(),
                intensity.extents()
            )));
        }
        if m.kind() != VolumeKind::Mask {
            return Err(Error::InvalidValue("mask volume must have mask kind".into()));
        }
    }
    let mut img = normalize_volume(&clahe_volume(intensity, &params.clahe)?)?;
    let mut lab = mask.cloned();
    if let Some(target) = params.crop {
        img = center_crop(&img, target)?;
        lab = lab.map(|m| center_crop(&m, target)).transpose()?;
    }
    if let Some(target) = params.resample {
        img = resample(&img, target)?;
        lab = lab.map(|m| resample(&m, target)).transpose()?;
    }
    Ok((img, lab))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(ext: [usize; 3], data: Vec<f64>) -> Volume {
        Volume::new(ext, [1.0; 3], data, VolumeKind::Intensity).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let v = normalize_volume(&vol([1, 1, 3], vec![0.0, 5.0, 10.0])).unwrap();
        assert_eq!(v.data(), &[0.0, 0.5, 1.0]);
        assert_eq!(normalize_volume(&v).unwrap(), v);
        let c = normalize_volume(&vol([1, 1, 2], vec![4.0, 4.0])).unwrap();
        assert_eq!(c.data(), &[0.0, 0.0]);
    }

    #[test]
    fn crop_offsets_examples() {
        assert_eq!(crop_offsets([88, 640, 640], [88, 400, 400]).unwrap(), [0, 120, 120]);
        assert_eq!(crop_offsets([88, 576, 576], [88, 400, 400]).unwrap(), [0, 88, 88]);
        assert_eq!(crop_offsets([5, 5, 5], [2, 2, 2]).unwrap(), [1, 1, 1]);
        let err = crop_offsets([8, 8, 8], [8, 9, 8]).unwrap_err();
        assert!(err.to_string().contains("height"));
    }

    #[test]
    fn crop_to_same_extents_is_identity() {
        let v = vol([2, 3, 4], (0..24).map(f64::from).collect());
        assert_eq!(center_crop(&v, [2, 3, 4]).unwrap(), v);
    }

    #[test]
    fn resample_rescales_spacing() {
        let v = vol([4, 4, 4], vec![2.0; 64]);
        let r = resample(&v, [2, 8, 4]).unwrap();
        assert_eq!(r.spacing(), [2.0, 0.5, 1.0]);
        assert!(r.data().iter().all(|&x| (x - 2.0).abs() < 1e-12));
    }

    #[test]
    fn config_overrides() {
        let mut p = PreprocessParams::default();
        p.apply_config("# c\ntiles = 4x2\nclip_limit=3.5\nbins = 64\ncrop = none\nresample = 8x16x16\n").unwrap();
        assert_eq!(p.clahe.tiles, [4, 2]);
        assert_eq!(p.clahe.clip_limit, 3.5);
        assert_eq!(p.clahe.bins, 64);
        assert_eq!(p.crop, None);
        assert_eq!(p.resample, Some([8, 16, 16]));
        assert!(p.apply_config("colour = red").unwrap_err().to_string().contains("colour"));
        assert!(p.apply_config("clip_limit = 0.5").is_err());
    }
}

//! Contrast limited adaptive histogram equalization on 2D slices.
//!
//! Each slice is min-max scaled to `[0, 1]` and binned. The slice is cut
//! into a `tiles_y x tiles_x` grid (tile `r` covers rows
//! `r*H/ty .. (r+1)*H/ty`), every tile gets a clipped histogram and an
//! equalization mapping, and each pixel blends the mappings of the four
//! nearest tile centres bilinearly.
//!
//! Clipping uses an integer threshold `T`: counts above `T` are cut off and
//! the cut mass `E` is handed back uniformly, `E / bins` to every bin and the
//! remaining `E % bins` one each to bins `0, 1, ..`. `T` is the largest value
//! for which `T + E(T) / bins` stays within the limit
//! `clip_limit * pixels / bins`, so after redistribution a bin exceeds the
//! limit by at most the single remainder count.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClaheParams {
    pub tiles: [usize; 2],
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            tiles: [8, 8],
            clip_limit: 2.0,
            bins: 256,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if self.tiles.contains(&0) {
            return Err(Error::Config(format!("tiles must be >= 1 per axis, got {:?}", self.tiles)));
        }
        if self.clip_limit.is_nan() || self.clip_limit < 1.0 {
            return Err(Error::Config(format!("clip_limit must be >= 1.0, got {}", self.clip_limit)));
        }
        if self.bins < 2 {
            return Err(Error::Config(format!("bins must be >= 2, got {}", self.bins)));
        }
        Ok(())
    }
}

/// Per-tile intermediate results, exposed for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct TileMapping {
    /// Rows `[y0, y1)` and columns `[x0, x1)` covered by the tile.
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    /// Raw bin counts.
    pub histogram: Vec<u64>,
    /// Counts after clipping and redistribution (same total as `histogram`).
    pub clipped: Vec<u64>,
    /// `clip_limit * pixels / bins`.
    pub limit: f64,
    /// Equalization transfer function, `cumsum(clipped) / pixels`.
    pub mapping: Vec<f64>,
}

fn tile_bounds(extent: usize, tiles: usize, t: usize) -> (usize, usize) {
    (t * extent / tiles, (t + 1) * extent / tiles)
}

fn bin_of(v: f64, lo: f64, range: f64, bins: usize) -> usize {
    let s = (v - lo) / range;
    ((s * bins as f64) as usize).min(bins - 1)
}

/// Clips `hist` per the module-level rule and returns the new counts.
pub fn clip_histogram(hist: &[u64], limit: f64) -> Vec<u64> {
    let bins = hist.len() as u64;
    let max = hist.iter().copied().max().unwrap_or(0);
    let cap = if limit >= max as f64 { max } else { limit.floor() as u64 };
    let excess = |t: u64| -> u64 { hist.iter().map(|&h| h.saturating_sub(t)).sum() };
    // t + excess(t) / bins is non-decreasing in t, so bisect for the largest
    // feasible t in [0, max].
    let feasible = |t: u64| t + excess(t) / bins <= cap;
    let (mut lo, mut hi) = (0u64, max);
    if feasible(hi) {
        lo = hi;
    } else {
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let t = lo;
    let e = excess(t);
    let (share, rem) = (e / bins, (e % bins) as usize);
    hist.iter()
        .enumerate()
        .map(|(i, &h)| h.min(t) + share + u64::from(i < rem))
        .collect()
}

/// Histograms, clipped histograms and mappings for every tile, row-major
/// over the tile grid. Returns `None` for a constant slice.
pub fn tile_mappings(slice: &[f64], height: usize, width: usize, params: &ClaheParams) -> Result<Option<Vec<TileMapping>>> {
    params.validate()?;
    if slice.len() != height * width {
        return Err(Error::InvalidShape(format!(
            "slice of {height}x{width} needs {} pixels, got {}",
            height * width,
            slice.len()
        )));
    }
    let [ty, tx] = params.tiles;
    if height < ty || width < tx {
        return Err(Error::InvalidShape(format!(
            "slice {height}x{width} is smaller than the {ty}x{tx} tile grid"
        )));
    }
    let (lo, hi) = slice
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return Ok(None);
    }
    let range = hi - lo;
    let mut tiles = Vec::with_capacity(ty * tx);
    for r in 0..ty {
        let rows = tile_bounds(height, ty, r);
        for c in 0..tx {
            let cols = tile_bounds(width, tx, c);
            let mut histogram = vec![0u64; params.bins];
            for y in rows.0..rows.1 {
                for &v in &slice[y * width + cols.0..y * width + cols.1] {
                    histogram[bin_of(v, lo, range, params.bins)] += 1;
                }
            }
            let pixels = ((rows.1 - rows.0) * (cols.1 - cols.0)) as f64;
            let limit = params.clip_limit * pixels / params.bins as f64;
            let clipped = clip_histogram(&histogram, limit);
            let mut acc = 0u64;
            let mapping = clipped
                .iter()
                .map(|&h| {
                    acc += h;
                    acc as f64 / pixels
                })
                .collect();
            tiles.push(TileMapping {
                rows,
                cols,
                histogram,
                clipped,
                limit,
                mapping,
            });
        }
    }
    Ok(Some(tiles))
}

/// Lower tile index and weight of the upper one for pixel `p` along an axis
/// of `extent` pixels cut into `tiles` tiles; tile centres sit at
/// `(t + 0.5) * extent / tiles - 0.5` and coordinates clamp at the edges.
fn interp_coord(p: usize, extent: usize, tiles: usize) -> (usize, usize, f64) {
    let f = (p as f64 + 0.5) * tiles as f64 / extent as f64 - 0.5;
    if f <= 0.0 {
        return (0, 0, 0.0);
    }
    let t0 = f.floor() as usize;
    if t0 >= tiles - 1 {
        return (tiles - 1, tiles - 1, 0.0);
    }
    (t0, t0 + 1, f - t0 as f64)
}

/// Equalizes one `height x width` slice. Output lies in `[0, 1]`; a
/// constant slice comes back unchanged.
pub fn clahe_slice(slice: &[f64], height: usize, width: usize, params: &ClaheParams) -> Result<Vec<f64>> {
    let Some(tiles) = tile_mappings(slice, height, width, params)? else {
        return Ok(slice.to_vec());
    };
    let (lo, hi) = slice
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    let [ty, tx] = params.tiles;
    let cols: Vec<_> = (0..width).map(|x| interp_coord(x, width, tx)).collect();
    let mut out = vec![0.0; slice.len()];
    for y in 0..height {
        let (r0, r1, wy) = interp_coord(y, height, ty);
        for (x, &(c0, c1, wx)) in cols.iter().enumerate() {
            let b = bin_of(slice[y * width + x], lo, range, params.bins);
            let m = |r: usize, c: usize| tiles[r * tx + c].mapping[b];
            let top = (1.0 - wx) * m(r0, c0) + wx * m(r0, c1);
            let bottom = (1.0 - wx) * m(r1, c0) + wx * m(r1, c1);
            out[y * width + x] = ((1.0 - wy) * top + wy * bottom).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_slice_is_unchanged() {
        let s = vec![3.5; 64];
        assert_eq!(clahe_slice(&s, 8, 8, &ClaheParams::default()).unwrap(), s);
    }

    #[test]
    fn clipping_respects_limit_and_mass() {
        let hist = [40, 0, 3, 1, 0, 0, 0, 4];
        let clipped = clip_histogram(&hist, 2.0 * 48.0 / 8.0);
        assert_eq!(clipped.iter().sum::<u64>(), 48);
        assert!(clipped.iter().all(|&c| c <= 13), "{clipped:?}");
    }

    #[test]
    fn unbounded_clip_is_plain_equalization() {
        let hist = [5, 0, 2, 9];
        assert_eq!(clip_histogram(&hist, f64::INFINITY), hist.to_vec());
    }

    #[test]
    fn undersized_slice_is_rejected() {
        assert!(clahe_slice(&[0.0, 1.0, 2.0, 3.0], 2, 2, &ClaheParams::default()).is_err());
    }
}

//! Synthetic left-atrium-like phantoms with known masks.
//!
//! The mask is a randomly rotated ellipsoid with 2 to 4 cylinders running
//! outward from its centre. The intensity is a dark background plus a
//! bright foreground, modulated by a smooth multiplicative bias field and
//! corrupted by Gaussian noise. Everything is a pure function of
//! `(seed, extents, params)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::volume::{Volume, VolumeKind};

/// Isotropic voxel size written into phantom volumes, in mm.
pub const PHANTOM_SPACING: f64 = 0.625;

const MAX_ATTEMPTS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomParams {
    /// Ellipsoid semi-axes as fractions of the per-axis extent.
    pub radius_range: (f64, f64),
    /// Inclusive range for the number of cylinders.
    pub vein_count: (usize, usize),
    /// Cylinder radius as a fraction of the smallest extent (lower bound
    /// one voxel).
    pub vein_radius: (f64, f64),
    pub background: f64,
    pub contrast: f64,
    pub noise_sigma: f64,
    /// Peak relative deviation of the bias field from 1.
    pub bias_amplitude: f64,
    /// Accepted foreground fraction range; draws outside it are redrawn.
    pub foreground_bounds: (f64, f64),
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            radius_range: (0.14, 0.24),
            vein_count: (2, 4),
            vein_radius: (0.04, 0.07),
            background: 0.2,
            contrast: 0.5,
            noise_sigma: 0.05,
            bias_amplitude: 0.3,
            foreground_bounds: (0.01, 0.10),
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let (r0, r1) = self.radius_range;
        if !(r0 > 0.0 && r0 <= r1 && r1 < 0.5) {
            return Err(Error::Config(format!("radius_range must satisfy 0 < lo <= hi < 0.5, got {:?}", self.radius_range)));
        }
        let (v0, v1) = self.vein_count;
        if v0 > v1 {
            return Err(Error::Config(format!("vein_count range is empty: {:?}", self.vein_count)));
        }
        let (w0, w1) = self.vein_radius;
        if !(w0 >= 0.0 && w0 <= w1) {
            return Err(Error::Config(format!("vein_radius must satisfy 0 <= lo <= hi, got {:?}", self.vein_radius)));
        }
        if !(self.noise_sigma >= 0.0 && self.bias_amplitude >= 0.0 && self.bias_amplitude < 1.0) {
            return Err(Error::Config("noise_sigma must be >= 0 and bias_amplitude in [0, 1)".into()));
        }
        let (f0, f1) = self.foreground_bounds;
        if !(f0 > 0.0 && f0 <= f1 && f1 <= 1.0) {
            return Err(Error::Config(format!(
                "foreground_bounds must satisfy 0 < lo <= hi <= 1, got {:?}",
                self.foreground_bounds
            )));
        }
        Ok(())
    }
}

type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit_vector<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v: Vec3 = [0; 3].map(|_| StandardNormal.sample(rng));
        let n = dot(v, v).sqrt();
        if n > 1e-6 {
            return v.map(|c| c / n);
        }
    }
}

/// Rows of a uniformly random rotation matrix (from a random unit
/// quaternion).
fn random_rotation<R: Rng>(rng: &mut R) -> [Vec3; 3] {
    let q: [f64; 4] = {
        loop {
            let v: [f64; 4] = [0; 4].map(|_| StandardNormal.sample(rng));
            let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n > 1e-6 {
                break v.map(|c| c / n);
            }
        }
    };
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

struct Shape {
    centre: Vec3,
    rotation: [Vec3; 3],
    radii: Vec3,
    veins: Vec<(Vec3, f64, f64)>, // direction, length, radius
}

impl Shape {
    fn draw<R: Rng>(ext: [usize; 3], p: &PhantomParams, rng: &mut R) -> Shape {
        let e = ext.map(|v| v as f64);
        let min_ext = e.iter().cloned().fold(f64::INFINITY, f64::min);
        let centre = [0, 1, 2].map(|a| e[a] / 2.0 - 0.5 + rng.random_range(-0.05..=0.05) * e[a]);
        let rotation = random_rotation(rng);
        let radii = [0, 1, 2].map(|a| rng.random_range(p.radius_range.0..=p.radius_range.1) * e[a]);
        let n = rng.random_range(p.vein_count.0..=p.vein_count.1);
        let veins = (0..n)
            .map(|_| {
                let dir = unit_vector(rng);
                let length = rng.random_range(0.3..=0.45) * min_ext;
                let radius = (rng.random_range(p.vein_radius.0..=p.vein_radius.1) * min_ext).max(1.0);
                (dir, length, radius)
            })
            .collect();
        Shape {
            centre,
            rotation,
            radii,
            veins,
        }
    }

    fn contains(&self, pt: Vec3) -> bool {
        let d = [0, 1, 2].map(|a| pt[a] - self.centre[a]);
        let local = self.rotation.map(|row| dot(row, d));
        let q: f64 = (0..3).map(|a| (local[a] / self.radii[a]).powi(2)).sum();
        if q <= 1.0 {
            return true;
        }
        self.veins.iter().any(|&(dir, length, radius)| {
            let t = dot(d, dir).clamp(0.0, length);
            let off = [0, 1, 2].map(|a| d[a] - t * dir[a]);
            dot(off, off) <= radius * radius
        })
    }
}

/// Smooth field in `[1 - amp, 1 + amp]`: random low-order terms over
/// normalized coordinates, rescaled to unit peak.
fn bias_field<R: Rng>(ext: [usize; 3], amp: f64, rng: &mut R) -> Vec<f64> {
    let coef: [f64; 7] = [0; 7].map(|_| rng.random_range(-1.0..=1.0));
    let norm = |i: usize, n: usize| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
    let mut raw = Vec::with_capacity(ext.iter().product());
    for z in 0..ext[0] {
        let w = norm(z, ext[0]);
        for y in 0..ext[1] {
            let v = norm(y, ext[1]);
            for x in 0..ext[2] {
                let u = norm(x, ext[2]);
                raw.push(
                    coef[0] * u + coef[1] * v + coef[2] * w + coef[3] * u * v + coef[4] * v * w + coef[5] * u * w
                        + coef[6] * (u * u + v * v + w * w - 1.0),
                );
            }
        }
    }
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { amp / peak } else { 0.0 };
    raw.into_iter().map(|b| 1.0 + scale * b).collect()
}

/// Generates an `(intensity, mask)` pair.
pub fn generate_phantom(seed: u64, extents: [usize; 3], params: &PhantomParams) -> Result<(Volume, Volume)> {
    params.validate()?;
    if let Some(a) = extents.iter().position(|&e| e < 16) {
        return Err(Error::InvalidShape(format!(
            "phantom extents must be >= 16 per axis, got {} along axis {a}",
            extents[a]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = extents.iter().product();
    let mut mask = vec![0.0; n];
    let mut accepted = false;
    let mut last_fraction = 0.0;
    for _ in 0..MAX_ATTEMPTS {
        let shape = Shape::draw(extents, params, &mut rng);
        let mut count = 0usize;
        let mut i = 0;
        for z in 0..extents[0] {
            for y in 0..extents[1] {
                for x in 0..extents[2] {
                    let inside = shape.contains([z as f64, y as f64, x as f64]);
                    mask[i] = if inside { 1.0 } else { 0.0 };
                    count += inside as usize;
                    i += 1;
                }
            }
        }
        last_fraction = count as f64 / n as f64;
        if count > 0 && last_fraction >= params.foreground_bounds.0 && last_fraction <= params.foreground_bounds.1 {
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(Error::Config(if last_fraction == 0.0 {
            "phantom parameters produce an empty mask".to_string()
        } else {
            format!(
                "no phantom within foreground bounds {:?} after {MAX_ATTEMPTS} draws (last {last_fraction:.4})",
                params.foreground_bounds
            )
        }));
    }

    let bias = bias_field(extents, params.bias_amplitude, &mut rng);
    let intensity: Vec<f64> = mask
        .iter()
        .zip(&bias)
        .map(|(&m, &b)| {
            let clean = (params.background + params.contrast * m) * b;
            if params.noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                clean + params.noise_sigma * z
            } else {
                clean
            }
        })
        .collect();
    let spacing = [PHANTOM_SPACING; 3];
    Ok((
        Volume::new(extents, spacing, intensity, VolumeKind::Intensity)?,
        Volume::new(extents, spacing, mask, VolumeKind::Mask)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let p = PhantomParams::default();
        let a = generate_phantom(3, [16, 16, 16], &p).unwrap();
        let b = generate_phantom(3, [16, 16, 16], &p).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(4, [16, 16, 16], &p).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn clean_phantom_is_two_valued() {
        let p = PhantomParams {
            noise_sigma: 0.0,
            bias_amplitude: 0.0,
            ..Default::default()
        };
        let (img, mask) = generate_phantom(0, [16, 20, 18], &p).unwrap();
        let mut vals: Vec<f64> = img.data().to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        assert_eq!(vals.len(), 2);
        for (v, m) in img.data().iter().zip(mask.data()) {
            assert_eq!(*v, 0.2 + 0.5 * m);
        }
    }

    #[test]
    fn small_extents_rejected() {
        assert!(generate_phantom(0, [15, 16, 16], &PhantomParams::default()).is_err());
    }
}

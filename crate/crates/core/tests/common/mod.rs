//! Reference implementations used as test oracles: direct loops with no
//! code shared with the library kernels.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unetdr::arch::Variant;
use unetdr::nn::{conv3d, ConvGeometry};
use unetdr::volume::{Volume, VolumeKind};
use unetdr::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct 3D cross-correlation: for every output voxel, sum over input
/// channels and kernel taps, skipping taps that land in the zero padding.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv3d(
    x: &[f64],
    [n, cin, d, h, w]: [usize; 5],
    wt: &[f64],
    [cout, k]: [usize; 2],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    dil: usize,
) -> (Vec<f64>, [usize; 5]) {
    let span = dil * (k - 1) + 1;
    let od = (d + 2 * pad - span) / stride + 1;
    let oh = (h + 2 * pad - span) / stride + 1;
    let ow = (w + 2 * pad - span) / stride + 1;
    let mut out = vec![0.0; n * cout * od * oh * ow];
    for b in 0..n {
        for co in 0..cout {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = bias.map_or(0.0, |bv| bv[co]);
                        for ci in 0..cin {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iz = (z * stride + kz * dil) as isize - pad as isize;
                                        let iy = (y * stride + ky * dil) as isize - pad as isize;
                                        let ix = (xx * stride + kx * dil) as isize - pad as isize;
                                        if iz < 0 || iy < 0 || ix < 0 {
                                            continue;
                                        }
                                        let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                        if iz >= d || iy >= h || ix >= w {
                                            continue;
                                        }
                                        let xv = x[(((b * cin + ci) * d + iz) * h + iy) * w + ix];
                                        let wv = wt[(((co * cin + ci) * k + kz) * k + ky) * k + kx];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out[(((b * cout + co) * od + z) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
    }
    (out, [n, cout, od, oh, ow])
}

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k * k + cout
}

fn bn(c: usize) -> usize {
    2 * c
}

/// Parameter tally written out layer by layer from the architecture
/// description: returns (layer name, count) in forward order.
pub fn hand_tally(variant: Variant, f: usize, levels: usize, rates: usize) -> Vec<(String, usize)> {
    let mut layers = Vec::new();
    let mut skips = Vec::new();
    let mut cin = 1;
    for i in 0..levels {
        let width = f * (1 << i);
        let name = format!("enc{}", i + 1);
        layers.push((format!("{name}.unit1.conv"), conv(cin, width, 3)));
        layers.push((format!("{name}.unit1.bn"), bn(width)));
        layers.push((format!("{name}.unit2.conv"), conv(width, width, 3)));
        layers.push((format!("{name}.unit2.bn"), bn(width)));
        cin = match variant {
            Variant::BaselineUnet => width,
            Variant::UnetDr => cin + width,
        };
        skips.push(cin);
    }
    let deepest = f * (1 << levels);
    let mut ch = match variant {
        Variant::BaselineUnet => {
            layers.push(("bottleneck.unit1.conv".into(), conv(cin, deepest, 3)));
            layers.push(("bottleneck.unit1.bn".into(), bn(deepest)));
            layers.push(("bottleneck.unit2.conv".into(), conv(deepest, deepest, 3)));
            layers.push(("bottleneck.unit2.bn".into(), bn(deepest)));
            deepest
        }
        Variant::UnetDr => {
            let branch = deepest / rates;
            for r in 1..=rates {
                layers.push((format!("bottleneck.d{r}.conv"), conv(cin, branch, 3)));
                layers.push((format!("bottleneck.d{r}.bn"), bn(branch)));
            }
            branch
        }
    };
    for i in (0..levels).rev() {
        let width = f * (1 << i);
        let name = format!("dec{}", i + 1);
        layers.push((format!("{name}.unit1.conv"), conv(ch + skips[i], width, 3)));
        layers.push((format!("{name}.unit1.bn"), bn(width)));
        layers.push((format!("{name}.unit2.conv"), conv(width, width, 3)));
        layers.push((format!("{name}.unit2.bn"), bn(width)));
        ch = width;
    }
    layers.push(("head".into(), conv(ch, 1, 1)));
    layers
}

/// Plain CLAHE written straight from its definition: integer bins on the
/// min-max scaled slice, clip threshold found by scanning down from the
/// tallest bin, uniform redistribution with the remainder from bin 0,
/// cumulative mapping, bilinear blend of the surrounding tile centres.
pub fn naive_clahe(slice: &[f64], h: usize, w: usize, tiles: [usize; 2], clip: f64, bins: usize) -> Vec<f64> {
    let lo = slice.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bin = |v: f64| (((v - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1);
    let [ty, tx] = tiles;
    let mut maps = vec![vec![0.0; bins]; ty * tx];
    for r in 0..ty {
        for c in 0..tx {
            let (y0, y1) = (r * h / ty, (r + 1) * h / ty);
            let (x0, x1) = (c * w / tx, (c + 1) * w / tx);
            let mut hist = vec![0u64; bins];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[bin(slice[y * w + x])] += 1;
                }
            }
            let pixels = ((y1 - y0) * (x1 - x0)) as u64;
            let cap = (clip * pixels as f64 / bins as f64).floor() as u64;
            let mut t = *hist.iter().max().unwrap();
            loop {
                let excess: u64 = hist.iter().map(|&v| v.saturating_sub(t)).sum();
                if t + excess / bins as u64 <= cap || t == 0 {
                    break;
                }
                t -= 1;
            }
            let excess: u64 = hist.iter().map(|&v| v.saturating_sub(t)).sum();
            let mut acc = 0u64;
            for i in 0..bins {
                let extra = excess / bins as u64 + u64::from((i as u64) < excess % bins as u64);
                acc += hist[i].min(t) + extra;
                maps[r * tx + c][i] = acc as f64 / pixels as f64;
            }
        }
    }
    let coord = |p: usize, extent: usize, n: usize| -> (usize, usize, f64) {
        let f = (p as f64 + 0.5) * n as f64 / extent as f64 - 0.5;
        let f = f.clamp(0.0, (n - 1) as f64);
        let i0 = f.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, f - i0 as f64)
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (r0, r1, fy) = coord(y, h, ty);
        for x in 0..w {
            let (c0, c1, fx) = coord(x, w, tx);
            let b = bin(slice[y * w + x]);
            let v = (1.0 - fy) * ((1.0 - fx) * maps[r0 * tx + c0][b] + fx * maps[r0 * tx + c1][b])
                + fy * ((1.0 - fx) * maps[r1 * tx + c0][b] + fx * maps[r1 * tx + c1][b]);
            out[y * w + x] = v;
        }
    }
    out
}

/// Largest absolute difference between the library conv3d and
/// [`naive_conv3d`] on random data of the given geometry.
#[allow(clippy::too_many_arguments)]
pub fn conv_max_error(shape: [usize; 5], cout: usize, k: usize, stride: usize, pad: usize, dil: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_tensor(&shape, &mut r);
    let w = random_tensor(&[cout, shape[1], k, k, k], &mut r);
    let b = random_tensor(&[cout], &mut r);
    let geom = ConvGeometry {
        kernel: [k; 3],
        stride: [stride; 3],
        padding: [pad; 3],
        dilation: [dil; 3],
    };
    let fast = conv3d(&x, &w, Some(&b), geom).unwrap();
    let (slow, slow_shape) = naive_conv3d(x.data(), shape, w.data(), [cout, k], Some(b.data()), stride, pad, dil);
    assert_eq!(fast.shape(), &slow_shape, "shape for {shape:?} k={k} s={stride} p={pad} d={dil}");
    fast.data().iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Synthetic scan of the given extents: a bright ellipsoid on a textured
/// background, plus its mask.
pub fn scan_like(extents: [usize; 3]) -> (Volume, Volume) {
    let [d, h, w] = extents;
    let mut img = Vec::with_capacity(d * h * w);
    let mut lab = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let (fz, fy, fx) = (z as f64 / d as f64 - 0.5, y as f64 / h as f64 - 0.5, x as f64 / w as f64 - 0.5);
                let inside = fz * fz + fy * fy * 4.0 + fx * fx * 4.0 < 0.09;
                img.push(100.0 + 400.0 * f64::from(inside as u8) + ((x * 7 + y * 13 + z * 3) % 50) as f64);
                lab.push(f64::from(inside as u8));
            }
        }
    }
    (
        Volume::new(extents, [1.25, 0.625, 0.625], img, VolumeKind::Intensity).unwrap(),
        Volume::new(extents, [1.25, 0.625, 0.625], lab, VolumeKind::Mask).unwrap(),
    )
}

//! Separable linear resampling with the half-pixel (`align_corners = false`)
//! convention: output sample `o` reads input coordinate
//! `(o + 0.5) * in / out - 0.5`, clamped to the valid range.

/// Interpolation taps for one axis: `value = (1 - w) * v[lo] + w * v[hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearTap {
    pub lo: usize,
    pub hi: usize,
    pub weight: f64,
}

pub fn linear_taps(input: usize, output: usize) -> Vec<LinearTap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let weight = if hi == lo { 0.0 } else { src - lo as f64 };
            LinearTap { lo, hi, weight }
        })
        .collect()
}

/// Nearest input index for output sample `o`: `floor((o + 0.5) * in / out)`,
/// computed in integers so it is exact.
pub fn nearest_index(o: usize, input: usize, output: usize) -> usize {
    (((2 * o + 1) * input) / (2 * output)).min(input - 1)
}

/// Resamples `src` viewed as `[outer, len_in, inner]` along the middle axis.
fn resize_axis(src: &[f64], outer: usize, len_in: usize, len_out: usize, inner: usize) -> Vec<f64> {
    let taps = linear_taps(len_in, len_out);
    let mut out = vec![0.0; outer * len_out * inner];
    for a in 0..outer {
        let s = &src[a * len_in * inner..(a + 1) * len_in * inner];
        let d = &mut out[a * len_out * inner..(a + 1) * len_out * inner];
        for (o, t) in taps.iter().enumerate() {
            let lo = &s[t.lo * inner..(t.lo + 1) * inner];
            let hi = &s[t.hi * inner..(t.hi + 1) * inner];
            let row = &mut d[o * inner..(o + 1) * inner];
            for ((r, &l), &h) in row.iter_mut().zip(lo).zip(hi) {
                *r = (1.0 - t.weight) * l + t.weight * h;
            }
        }
    }
    out
}

/// Adjoint of [`resize_axis`].
fn resize_axis_adjoint(
    dout: &[f64],
    outer: usize,
    len_in: usize,
    len_out: usize,
    inner: usize,
) -> Vec<f64> {
    let taps = linear_taps(len_in, len_out);
    let mut din = vec![0.0; outer * len_in * inner];
    for a in 0..outer {
        let g = &dout[a * len_out * inner..(a + 1) * len_out * inner];
        let d = &mut din[a * len_in * inner..(a + 1) * len_in * inner];
        for (o, t) in taps.iter().enumerate() {
            let row = &g[o * inner..(o + 1) * inner];
            for (k, &v) in row.iter().enumerate() {
                d[t.lo * inner + k] += (1.0 - t.weight) * v;
                d[t.hi * inner + k] += t.weight * v;
            }
        }
    }
    din
}

/// Trilinear resize of `planes` independent `[D, H, W]` volumes.
pub fn resize_trilinear(src: &[f64], planes: usize, input: [usize; 3], output: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = input;
    let [od, oh, ow] = output;
    let a = resize_axis(src, planes * d * h, w, ow, 1);
    let b = resize_axis(&a, planes * d, h, oh, ow);
    resize_axis(&b, planes, d, od, oh * ow)
}

/// Adjoint of [`resize_trilinear`]: maps output gradients to input gradients.
pub fn resize_trilinear_adjoint(
    dout: &[f64],
    planes: usize,
    input: [usize; 3],
    output: [usize; 3],
) -> Vec<f64> {
    let [d, h, w] = input;
    let [od, oh, ow] = output;
    let b = resize_axis_adjoint(dout, planes, d, od, oh * ow);
    let a = resize_axis_adjoint(&b, planes * d, h, oh, ow);
    resize_axis_adjoint(&a, planes * d * h, w, ow, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_a_two_sample_ramp() {
        let out = resize_trilinear(&[0.0, 1.0], 1, [1, 1, 2], [1, 1, 4]);
        assert_eq!(out, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let src = vec![3.5; 2 * 3 * 4];
        let out = resize_trilinear(&src, 1, [2, 3, 4], [5, 7, 3]);
        assert!(out.iter().all(|&v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn adjoint_preserves_total_mass() {
        let g: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let back = resize_trilinear_adjoint(&g, 1, [2, 2, 2], [4, 4, 4]);
        let a: f64 = g.iter().sum();
        let b: f64 = back.iter().sum();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn nearest_round_trip_factor_two() {
        // coarse 4 -> fine 8 -> coarse 4 reads back the same coarse sample
        for o in 0..4 {
            let fine = nearest_index(o, 8, 4);
            assert_eq!(nearest_index(fine, 4, 8), o);
        }
    }
}

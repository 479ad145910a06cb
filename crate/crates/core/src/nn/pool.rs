//! 2x2x2 max pooling with stride 2.

use crate::error::{Error, Result};

/// Pooled values plus, for every output, the flat input index that won.
pub(crate) struct Pooled {
    pub output: Vec<f64>,
    pub argmax: Vec<usize>,
    pub shape: Vec<usize>,
}

pub(crate) fn forward(x: &[f64], shape: &[usize]) -> Result<Pooled> {
    let [n, c, d, h, w]: [usize; 5] = shape.try_into().map_err(|_| {
        Error::InvalidShape(format!("maxpool3d expects [N, C, D, H, W], got {shape:?}"))
    })?;
    for (axis, extent) in ["depth", "height", "width"].iter().zip([d, h, w]) {
        if extent % 2 != 0 || extent == 0 {
            return Err(Error::InvalidShape(format!(
                "maxpool3d needs even spatial extents, {axis} is {extent}"
            )));
        }
    }
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let mut output = Vec::with_capacity(n * c * od * oh * ow);
    let mut argmax = Vec::with_capacity(output.capacity());
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    // scan order z, y, x; strict comparison keeps the first maximum
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = base + ((2 * z + dz) * h + 2 * y + dy) * w + 2 * xo + dx;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    output.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok(Pooled {
        output,
        argmax,
        shape: vec![n, c, od, oh, ow],
    })
}

pub(crate) fn backward(argmax: &[usize], dout: &[f64], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&idx, &g) in argmax.iter().zip(dout) {
        dx[idx] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_block_maximum() {
        let mut x = vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0];
        x[6] = 9.0;
        let p = forward(&x, &[1, 1, 2, 2, 2]).unwrap();
        assert_eq!(p.output, vec![9.0]);
        assert_eq!(p.argmax, vec![6]);
    }

    #[test]
    fn ties_resolve_to_first_index() {
        let x = vec![5.0; 8];
        let p = forward(&x, &[1, 1, 2, 2, 2]).unwrap();
        assert_eq!(p.argmax, vec![0]);
    }

    #[test]
    fn odd_extent_is_an_error() {
        let err = forward(&[0.0; 12], &[1, 1, 3, 2, 2]).err().unwrap().to_string();
        assert!(err.contains("depth"), "{err}");
    }
}

//! Receptive-field measurement by single-voxel perturbation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{build_dilated_bottleneck, run_block, LayerBuilder};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::nn::{conv3d, ConvGeometry, NormMode};
use crate::tensor::Tensor;

/// Magnitude of the probe impulse; large enough to push ReLU units across
/// their threshold in one direction or the other.
const IMPULSE: f64 = 1e3;

/// Runs `fragment` on a zero input of shape `[1, channels, D, H, W]` and on
/// copies with the centre voxel set to `+IMPULSE` and `-IMPULSE` in every
/// channel, and returns the per-axis extent of the bounding box of output
/// voxels that changed.
pub fn receptive_field_probe<F>(
    fragment: F,
    channels: usize,
    input_extents: [usize; 3],
) -> Result<[usize; 3]>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let [d, h, w] = input_extents;
    let shape = vec![1, channels, d, h, w];
    let zero = Tensor::zeros(shape.clone());
    let base = fragment(&zero)?;
    let centre = (d / 2 * h + h / 2) * w + w / 2;

    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut changed = false;
    for sign in [1.0, -1.0] {
        let mut x = zero.clone();
        for c in 0..channels {
            x.data_mut()[c * d * h * w + centre] = sign * IMPULSE;
        }
        let y = fragment(&x)?;
        if y.shape() != base.shape() {
            return Err(Error::ShapeMismatch {
                lhs: y.shape().to_vec(),
                rhs: base.shape().to_vec(),
                context: "receptive_field_probe outputs",
            });
        }
        let [_, _, od, oh, ow] = y.dims5()?;
        let scale = base.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (i, (a, b)) in y.data().iter().zip(base.data()).enumerate() {
            if (a - b).abs() > 1e-12 * scale {
                let z = (i / (oh * ow)) % od;
                let yy = (i / ow) % oh;
                let xx = i % ow;
                for (axis, v) in [z, yy, xx].into_iter().enumerate() {
                    lo[axis] = lo[axis].min(v);
                    hi[axis] = hi[axis].max(v);
                }
                changed = true;
            }
        }
    }
    if !changed {
        return Err(Error::InvalidValue(
            "perturbation produced no output change (are all weights zero?)".into(),
        ));
    }
    Ok([0, 1, 2].map(|a| hi[a] - lo[a] + 1))
}

/// Probe of a single 3x3x3 convolution with dilation `d` and random weights
/// on a cubic input of side `extent`.
pub fn probe_single_conv(dilation: usize, extent: usize, seed: u64) -> Result<[usize; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::randn(vec![2, 1, 3, 3, 3], 1.0, &mut rng);
    receptive_field_probe(|x| conv3d(x, &w, None, ConvGeometry::same(3, dilation)), 1, [extent; 3])
}

/// Probe of a freshly initialized summed dilated bottleneck (one
/// conv-BN-ReLU branch per rate, batch norm in inference mode).
pub fn probe_dilated_bottleneck(rates: &[usize], channels: usize, extent: usize, seed: u64) -> Result<[usize; 3]> {
    let mut store = ParamStore::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bottleneck = {
        let mut builder = LayerBuilder::new(&mut store, &mut rng);
        build_dilated_bottleneck(&mut builder, "probe", channels, channels, rates)?
    };
    receptive_field_probe(
        |x| run_block(&store, x, NormMode::Inference, |f, v| bottleneck.forward(f, v)),
        channels,
        [extent; 3],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_extents() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (d, expected) in [(1, 3), (2, 5), (3, 7), (4, 9)] {
            let w = Tensor::randn(vec![2, 1, 3, 3, 3], 1.0, &mut rng);
            let ext = receptive_field_probe(
                |x| conv3d(x, &w, None, ConvGeometry::same(3, d)),
                1,
                [13, 13, 13],
            )
            .unwrap();
            assert_eq!(ext, [expected; 3], "d={d}");
        }
    }

    #[test]
    fn zero_weights_are_an_error() {
        let w = Tensor::zeros(vec![1, 1, 3, 3, 3]);
        let r = receptive_field_probe(|x| conv3d(x, &w, None, ConvGeometry::same(3, 1)), 1, [5, 5, 5]);
        assert!(r.is_err());
    }

    #[test]
    fn bottleneck_spans_largest_rate() {
        assert_eq!(probe_dilated_bottleneck(&[1, 2, 3, 4], 2, 13, 0).unwrap(), [9; 3]);
        assert_eq!(probe_dilated_bottleneck(&[1, 2], 2, 13, 0).unwrap(), [5; 3]);
    }
}

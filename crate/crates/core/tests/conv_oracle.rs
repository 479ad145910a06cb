mod common;

use common::conv_max_error as compare;
use unetdr::nn::{conv3d, ConvGeometry};
use unetdr::Tensor;

#[test]
fn spec_grid_one_by_two_channels_all_dilations() {
    for d in 1..=4 {
        let err = compare([1, 2, 5, 5, 5], 3, 3, 1, d, d, d as u64);
        assert!(err <= 1e-6, "d={d}: {err}");
    }
}

#[test]
fn wider_parameter_grid() {
    let mut seed = 100;
    for d in 1..=4 {
        for pad in [0, d, d + 1] {
            for stride in [1, 2] {
                for (cin, cout) in [(1, 1), (3, 2)] {
                    for k in [1, 3] {
                        let span = d * (k - 1) + 1;
                        let shape = [2, cin, 6, 5, 7];
                        if [6, 5, 7].iter().any(|&e| e + 2 * pad < span) {
                            continue;
                        }
                        seed += 1;
                        let err = compare(shape, cout, k, stride, pad, d, seed);
                        assert!(err <= 1e-6, "d={d} p={pad} s={stride} c={cin}->{cout} k={k}: {err}");
                    }
                }
            }
        }
    }
}

#[test]
fn dilation_larger_than_input() {
    // effective extent 9 on a 3-wide input: only the centre tap sees data
    let err = compare([1, 2, 3, 3, 3], 2, 3, 1, 4, 4, 7);
    assert!(err <= 1e-6);
}

#[test]
fn output_extent_examples() {
    let x = Tensor::zeros(vec![1, 1, 8, 8, 8]);
    let w = Tensor::zeros(vec![1, 1, 3, 3, 3]);
    assert_eq!(conv3d(&x, &w, None, ConvGeometry::cubic(3, 1, 1)).unwrap().shape(), &[1, 1, 8, 8, 8]);
    assert_eq!(conv3d(&x, &w, None, ConvGeometry::cubic(3, 2, 2)).unwrap().shape(), &[1, 1, 8, 8, 8]);
    let x = Tensor::zeros(vec![1, 1, 10, 10, 10]);
    assert_eq!(conv3d(&x, &w, None, ConvGeometry::cubic(3, 4, 0)).unwrap().shape(), &[1, 1, 2, 2, 2]);
    assert_eq!(conv3d(&x, &w, None, ConvGeometry::cubic(3, 4, 4)).unwrap().shape(), &[1, 1, 10, 10, 10]);
}

//! Measure how far a single-voxel perturbation spreads through dilated
//! convolutions and through the summed multi-rate bottleneck.
//!
//! ```text
//! cargo run --example dilation_receptive_field
//! ```

use unetdr::arch::{probe_dilated_bottleneck, probe_single_conv};
use unetdr::nn::effective_extent;

fn main() -> unetdr::Result<()> {
    println!("{:<32} {:>9} {:>8}", "fragment", "predicted", "measured");
    for d in 1..=4 {
        let measured = probe_single_conv(d, 13, d as u64)?;
        println!("{:<32} {:>9} {:>8}", format!("3x3x3 conv, dilation {d}"), effective_extent(3, d), measured[0]);
    }
    for rates in [vec![1, 2], vec![1, 2, 3], vec![1, 2, 3, 4]] {
        let measured = probe_dilated_bottleneck(&rates, 2, 13, 0)?;
        let predicted = effective_extent(3, *rates.iter().max().unwrap());
        println!("{:<32} {:>9} {:>8}", format!("bottleneck, rates {rates:?}"), predicted, measured[0]);
    }
    Ok(())
}

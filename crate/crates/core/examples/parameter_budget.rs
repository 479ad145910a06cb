//! Compare trainable parameter counts of the baseline U-Net and the
//! dilated-bottleneck variant across base widths.
//!
//! ```text
//! cargo run --example parameter_budget -- [base_channels...]
//! ```

use unetdr::arch::{Model, NetworkConfig, Variant};

fn main() -> unetdr::Result<()> {
    let widths: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let widths = if widths.is_empty() { vec![4, 8, 16, 24, 32] } else { widths };
    println!("{:>4} {:>12} {:>12} {:>7}", "F", "baseline", "unet_dr", "ratio");
    for f in widths {
        let base = Model::new(NetworkConfig::new(Variant::BaselineUnet, f), 0)?.parameter_count();
        let dr = Model::new(NetworkConfig::new(Variant::UnetDr, f), 0)?.parameter_count();
        println!("{f:>4} {base:>12} {dr:>12} {:>7.3}", dr as f64 / base as f64);
    }

    println!("\nlargest layers of unet_dr at F=24:");
    let model = Model::new(NetworkConfig::new(Variant::UnetDr, 24), 0)?;
    let mut layers = model.layer_parameter_counts();
    layers.sort_by_key(|l| std::cmp::Reverse(l.1));
    for (name, n) in layers.iter().take(8) {
        println!("  {name:<24} {n:>9}");
    }
    Ok(())
}

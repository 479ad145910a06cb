//! Run the preprocessing chain (slice-wise CLAHE, min-max normalization,
//! centre crop, resampling) on a synthetic volume and show what each step
//! does to extents, spacing and intensity range.
//!
//! ```text
//! cargo run --example preprocess_volume
//! ```

use unetdr::io::{generate_phantom, PhantomParams};
use unetdr::preprocess::{center_crop, clahe_volume, normalize_volume, resample, ClaheParams};
use unetdr::volume::Volume;

fn describe(step: &str, v: &Volume) {
    let (lo, hi) = v.min_max();
    let [d, h, w] = v.extents();
    let [sd, sh, sw] = v.spacing();
    println!("{step:<10} {d:>3}x{h:>3}x{w:>3}  spacing {sd:.3}/{sh:.3}/{sw:.3}  range [{lo:.3}, {hi:.3}]");
}

fn main() -> unetdr::Result<()> {
    // Same axis ratios as an 88x640x640 scan, scaled down by 8.
    let (image, mask) = generate_phantom(3, [22, 80, 80], &PhantomParams::default())?;
    describe("input", &image);

    let eq = clahe_volume(&image, &ClaheParams { tiles: [4, 4], ..Default::default() })?;
    describe("clahe", &eq);
    let norm = normalize_volume(&eq)?;
    describe("normalize", &norm);
    let cropped = center_crop(&norm, [22, 50, 50])?;
    describe("crop", &cropped);
    let out = resample(&cropped, [20, 32, 32])?;
    describe("resample", &out);

    let m = resample(&center_crop(&mask, [22, 50, 50])?, [20, 32, 32])?;
    let binary = m.data().iter().all(|&v| v == 0.0 || v == 1.0);
    println!(
        "mask: foreground {:.4} -> {:.4}, still binary: {binary}",
        mask.foreground_fraction(),
        m.foreground_fraction()
    );
    Ok(())
}

//! Write a volume in every supported scalar type and encoding, read it back
//! and confirm the values survive unchanged.
//!
//! ```text
//! cargo run --example nrrd_roundtrip
//! ```

use unetdr::io::{encode_volume, parse_nrrd_header, read_volume, write_volume, Encoding, ScalarType, WriteOptions};
use unetdr::volume::{Volume, VolumeKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("unetdr-nrrd-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let extents = [3, 4, 5];
    let data: Vec<f64> = (0..60).map(|i| ((i * 37) % 200) as f64).collect();
    let volume = Volume::new(extents, [2.5, 0.625, 0.625], data, VolumeKind::Intensity)?;

    let mut encodings = vec![Encoding::Raw];
    if cfg!(feature = "gzip") {
        encodings.push(Encoding::Gzip);
    }
    for scalar in ScalarType::ALL {
        for &encoding in &encodings {
            let opts = WriteOptions { scalar, encoding };
            let path = dir.join(format!("v_{}_{encoding:?}.nrrd", scalar.token()));
            write_volume(&path, &volume, opts)?;
            let back = read_volume(&path, VolumeKind::Intensity)?;
            let bytes = encode_volume(&volume, opts)?;
            let header = parse_nrrd_header(&bytes)?;
            println!(
                "{:<7} {:<5} {:>5} bytes  sizes {:?}  exact: {}",
                scalar.token(),
                format!("{encoding:?}").to_lowercase(),
                bytes.len(),
                header.sizes,
                back == volume
            );
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}

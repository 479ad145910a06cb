//! Train a small network on synthetic phantoms and report validation scores.
//!
//! ```text
//! cargo run --release --example segment_phantom -- [variant] [extent] [epochs] [seed] [cases] [batch]
//! ```

use std::time::Instant;

use unetdr::arch::{Model, NetworkConfig, Variant};
use unetdr::io::{generate_phantom, Case, PhantomParams};
use unetdr::preprocess::normalize_volume;
use unetdr::train::{train_fold, Sample, TrainConfig, TrainState};

fn main() -> unetdr::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: Variant = args.first().map_or("unet_dr", String::as_str).parse()?;
    let extent: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let cases: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(12);
    let params = PhantomParams::default();
    let samples = (0..cases)
        .map(|i| {
            let (image, label) = generate_phantom(i, [extent; 3], &params)?;
            let case = Case {
                id: format!("case_{i:02}"),
                image: normalize_volume(&image)?,
                label,
            };
            Ok(Sample::from_case(&case))
        })
        .collect::<unetdr::Result<Vec<_>>>()?;
    let (train, val) = samples.split_at(samples.len() * 2 / 3);

    let model = Model::new(NetworkConfig::new(variant, 4), seed)?;
    println!("{} with {} parameters", variant.name(), model.parameter_count());
    let config = TrainConfig {
        epochs,
        seed,
        batch_size: args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1),
        ..Default::default()
    };
    let start = Instant::now();
    let state = train_fold(TrainState::new(model, config.adam), train, val, &config, None)?;
    let best = state.best.expect("trained at least one epoch");
    println!(
        "best epoch {} val dc {:.4} ji {:.4} ac {:.4} ({:.1}s)",
        best.epoch,
        best.scores.dc,
        best.scores.ji,
        best.scores.ac,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

//! k-fold cross-validation on synthetic phantoms: split, train each fold,
//! pick the fold with the best validation Dice and score the test cases.
//!
//! ```text
//! cargo run --example cross_validation -- [cases] [folds] [epochs] [out_dir]
//! ```

use std::path::PathBuf;

use unetdr::arch::{NetworkConfig, Variant};
use unetdr::io::{generate_phantom, make_split, Case, PhantomParams};
use unetdr::preprocess::normalize_volume;
use unetdr::train::{cross_validate, Sample, TrainConfig};

fn main() -> unetdr::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(12);
    let k: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let out: Option<PathBuf> = args.get(3).map(PathBuf::from);

    let samples = (0..n)
        .map(|i| {
            let (image, label) = generate_phantom(i, [16; 3], &PhantomParams::default())?;
            let case = Case {
                id: format!("phantom_{i:03}"),
                image: normalize_volume(&image)?,
                label,
            };
            Ok(Sample::from_case(&case))
        })
        .collect::<unetdr::Result<Vec<_>>>()?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let split = make_split(&ids, 0.2, k, 0)?;
    println!("{} test cases, folds of {:?}", split.test_ids.len(), split.folds.iter().map(Vec::len).collect::<Vec<_>>());

    let config = TrainConfig { epochs, ..Default::default() };
    let report = cross_validate(&samples, &split, &NetworkConfig::new(Variant::UnetDr, 4), &config, out.as_deref())?;
    for f in &report.folds {
        let v = f.val_report.aggregate().expect("non-empty fold");
        println!("fold {}: best epoch {}, validation dc {:.4}", f.fold, f.best_epoch, v.dc);
    }
    print!("{}", report.summary_table());
    Ok(())
}

//! Trains on 40 synthetic images with an 80/20 split (50 epochs, batch 2,
//! Adam) and reports held-out dice before and after postprocessing.
//!
//!     cargo run --release --example train_synthetic -- [epochs] [base_channels] [copies] [seed]

use std::time::Instant;

use segforge::dataset::{DatasetManifest, ManifestEntry, MaskRef, Source, Split};
use segforge::morphology::PostprocessConfig;
use segforge::optim::TrainConfig;
use segforge::synth::synthetic_samples;
use segforge::train::{evaluate, train, LogProgress};
use segforge::transform::{expand_training_set, AugmentConfig};
use segforge::unet::{ModelParams, UNetConfig};

fn main() -> segforge::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(50);
    let base: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(16);
    let copies: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);

    let samples = synthetic_samples(40, (64, 64), seed)?;

    // Reuse the manifest splitter so the 80/20 assignment matches the CLI.
    let mut manifest = DatasetManifest::new(".");
    for s in &samples {
        manifest.entries.push(ManifestEntry {
            id: s.id.clone(),
            source: Source::Synthetic,
            split: Split::Train,
            image: format!("{}.png", s.id).into(),
            mask: MaskRef::Single(format!("{}_mask.png", s.id).into()),
        });
    }
    manifest.split(0.8, seed)?;
    let (mut train_set, mut test_set) = (Vec::new(), Vec::new());
    for (s, e) in samples.into_iter().zip(&manifest.entries) {
        match e.split {
            Split::Train => train_set.push(s),
            Split::Test => test_set.push(s),
        }
    }

    let augment = AugmentConfig {
        copies,
        seed,
        ..Default::default()
    };
    let expanded = expand_training_set(&train_set, &augment, (64, 64))?;
    println!(
        "{} train images ({} after augmentation), {} test",
        train_set.len(),
        expanded.len(),
        test_set.len()
    );

    let config = UNetConfig {
        base_channels: base,
        ..UNetConfig::desk_scale()
    };
    let mut params = ModelParams::<f32>::build(config, seed)?;
    let train_cfg = TrainConfig {
        epochs,
        seed,
        ..Default::default()
    };
    let post = PostprocessConfig::default();

    let start = Instant::now();
    let outcome = train(&mut params, &expanded, &test_set, &train_cfg, &post, &mut LogProgress)?;
    println!("trained in {:.1?}; best epoch {}", start.elapsed(), outcome.best_epoch);

    let final_scores = evaluate(&params, &test_set, &post, 2)?;
    println!("final model\n{final_scores}");
    let open_close = evaluate(&params, &test_set, &PostprocessConfig::open_close(), 2)?;
    println!(
        "mean dice: raw {:.5}, default postprocessing {:.5}, with opening {:.5}",
        final_scores.raw.mean_dice(),
        final_scores.post.mean_dice(),
        open_close.post.mean_dice()
    );
    Ok(())
}

//! Fits a depth-3, base-8 U-Net to a single synthetic 64x64 sample with
//! 200 Adam steps and reports the training dice along the way.
//!
//!     cargo run --release --example overfit_single -- [steps] [lr] [seed]

use std::time::Instant;

use segforge::metrics::dice_binary;
use segforge::morphology::binarize;
use segforge::optim::{AdamState, TrainConfig};
use segforge::synth::synthetic_samples;
use segforge::train::{predict, train_step};
use segforge::unet::{ModelParams, UNetConfig};

fn main() -> segforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let sample = synthetic_samples(1, (64, 64), seed)?.remove(0);
    let config = UNetConfig {
        depth: 3,
        base_channels: 8,
        input_size: (64, 64),
        ..UNetConfig::desk_scale()
    };
    let mut params = ModelParams::<f32>::build(config, seed)?;
    let train_cfg = TrainConfig {
        learning_rate: lr,
        seed,
        ..Default::default()
    };
    let mut state = AdamState::for_model(&params);

    let start = Instant::now();
    let dice = |p: &ModelParams<f32>| -> segforge::Result<f64> {
        let prob = predict(p, &[&sample.image], 1)?.remove(0);
        dice_binary(&binarize(&prob, 0.5), &sample.mask)
    };
    for step in 1..=steps {
        let loss = train_step(&mut params, &mut state, &[&sample], &train_cfg)?;
        if step % 20 == 0 || step == steps {
            println!("step {step:>4}  loss {loss:.5}  dice {:.4}", dice(&params)?);
        }
    }
    println!(
        "final training dice {:.4} after {:.1?}",
        dice(&params)?,
        start.elapsed()
    );
    Ok(())
}

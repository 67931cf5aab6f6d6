//! Writes a synthetic sample and its augmented copies as PNG files, along
//! with the drawn rotation, zoom and crop of each copy.
//!
//!     cargo run --example augmentation -- [out_dir] [copies] [seed]

use std::path::PathBuf;

use segforge::image::{write_image, write_mask};
use segforge::synth::synthetic_samples;
use segforge::transform::{augment_rng, AugmentConfig, Transform};

fn main() -> segforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "augmented".into()));
    let copies: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    std::fs::create_dir_all(&out).map_err(|source| segforge::SegError::Write {
        path: out.clone(),
        source,
    })?;

    let sample = synthetic_samples(1, (128, 128), seed)?.remove(0);
    write_image(&out.join("original.png"), &sample.image)?;
    write_mask(&out.join("original_mask.png"), &sample.mask)?;
    let config = AugmentConfig {
        seed,
        ..Default::default()
    };
    let (h, w) = sample.image.shape();
    for k in 0..copies {
        let t = Transform::draw(&config, h, w, &mut augment_rng(seed, 0, k));
        let (top, left, ch, cw) = t.crop;
        println!(
            "copy {k}: rotate {:+.2} deg, zoom {:.3}, crop {ch}x{cw} at ({top}, {left})",
            t.angle_rad.to_degrees(),
            t.zoom
        );
        write_image(&out.join(format!("copy{k}.png")), &t.apply_image(&sample.image))?;
        write_mask(&out.join(format!("copy{k}_mask.png")), &t.apply_mask(&sample.mask))?;
    }
    println!("wrote {} files to {}", 2 * (copies + 1), out.display());
    Ok(())
}

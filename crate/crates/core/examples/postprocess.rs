//! Cleans a noisy probability map (speckle, holes, a stray blob) with the
//! default pipeline and with opening added, printing the masks.
//!
//!     cargo run --example postprocess

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segforge::image::Image;
use segforge::metrics::dice_binary;
use segforge::morphology::{binarize, connected_components, postprocess, BinaryMask, PostprocessConfig};

fn main() -> segforge::Result<()> {
    let (h, w) = (20, 36);
    let inside = |y: usize, x: usize, cy: f64, cx: f64| {
        let (dy, dx) = ((y as f64 - cy) / 7.5, (x as f64 - cx) / 6.0);
        dy * dy + dx * dx <= 1.0
    };
    let truth = BinaryMask::from_fn(h, w, |y, x| inside(y, x, 10.0, 9.0) || inside(y, x, 10.0, 26.0));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let prob = Image::from_fn(h, w, |y, x| {
        let base = if truth.get(y, x) { 0.85 } else { 0.1 };
        let flip = rng.random_bool(0.04);
        (if flip { 1.0 - base } else { base }) as f32
    });

    let raw = binarize(&prob, 0.5);
    let clean = postprocess(&prob, &PostprocessConfig::default())?;
    let opened = postprocess(&prob, &PostprocessConfig::open_close())?;
    for (name, m) in [
        ("truth", &truth),
        ("raw", &raw),
        ("close + keep 2", &clean),
        ("open + close + keep 2", &opened),
    ] {
        println!(
            "{name}: {} components, dice vs truth {:.4}\n{m:?}",
            connected_components(m).len(),
            dice_binary(m, &truth)?
        );
    }
    Ok(())
}

//! Prints the layer table and parameter count of a U-Net configuration and
//! runs one forward pass on random input.
//!
//!     cargo run --release --example unet_shapes -- [depth] [base_channels] [size]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segforge::tensor::{Shape, Tensor};
use segforge::unet::{ModelParams, UNetConfig};

fn main() -> segforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let depth: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let base: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(16);
    let size: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(64);

    let config = UNetConfig {
        depth,
        base_channels: base,
        input_size: (size, size),
        ..UNetConfig::desk_scale()
    };
    let params = ModelParams::<f32>::build(config, 0)?;
    println!("{:<18} {:>22} {:>10}", "layer", "weight", "params");
    for layer in params.layers() {
        let n = layer.weight.numel() + layer.bias.numel();
        println!(
            "{:<18} {:>22} {n:>10}",
            layer.name,
            format!("{:?}", layer.weight.shape().dims())
        );
    }
    println!("total parameters: {}", params.num_parameters());
    println!(
        "full-scale model: {}",
        ModelParams::<f32>::build(UNetConfig::full_scale(), 0)?.num_parameters()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = Shape::new(1, 1, size, size);
    let x = Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.random::<f32>()).collect())?;
    let y = params.forward(&x)?;
    let (lo, hi) = y
        .data()
        .iter()
        .fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("output {:?}, probabilities in [{lo:.3}, {hi:.3}]", y.shape().dims());
    Ok(())
}

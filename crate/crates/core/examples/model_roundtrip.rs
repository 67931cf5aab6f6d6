//! Saves a model, inspects the file header and loads it back both at the
//! stored precision and converted to f64.
//!
//!     cargo run --example model_roundtrip -- [path]

use std::path::PathBuf;

use segforge::modelfile;
use segforge::unet::{ModelParams, UNetConfig};

fn main() -> segforge::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("segforge-example.segf"));
    let params = ModelParams::<f32>::build(UNetConfig::desk_scale(), 42)?;
    modelfile::save(&path, &params)?;

    let bytes = std::fs::read(&path).map_err(|source| segforge::SegError::Read {
        path: path.clone(),
        source,
    })?;
    let header = modelfile::peek_header(&bytes)?;
    println!(
        "{}: {} bytes, {} records, {}",
        path.display(),
        bytes.len(),
        header.records,
        header.dtype
    );
    println!("{:?}", header.config);

    let same: ModelParams<f32> = modelfile::load(&path)?;
    println!("exact f32 roundtrip: {}", same.layers() == params.layers());
    let wide: ModelParams<f64> = modelfile::load_as(&path)?;
    println!("f64 copy has {} parameters", wide.num_parameters());
    if modelfile::load::<f64>(&path).is_err() {
        println!("strict load at the wrong precision is refused");
    }
    Ok(())
}

//! Verifies every differentiable op, both losses and a tiny U-Net against
//! central finite differences.
//!
//!     cargo run --release --example gradient_check -- [instances] [seed]

use std::time::Instant;

use segforge::gradcheck::{self, FdConfig};

fn main() -> segforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let instances: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = FdConfig::default();

    let start = Instant::now();
    let mut all_ok = true;
    for (op, result) in gradcheck::op_suite(instances, seed, &cfg)? {
        let ok = result.passed(cfg.tolerance);
        all_ok &= ok;
        println!("{:<20} {}  {result}", op, if ok { "ok  " } else { "FAIL" });
    }

    let tiny = gradcheck::check_unet(&gradcheck::tiny_unet_config(), seed, &cfg)?;
    let ok = tiny.passed(cfg.tolerance);
    all_ok &= ok;
    println!("{:<20} {}  {tiny}", "unet(depth 1)", if ok { "ok  " } else { "FAIL" });

    println!("finished in {:.2?}", start.elapsed());
    if !all_ok {
        std::process::exit(1);
    }
    Ok(())
}

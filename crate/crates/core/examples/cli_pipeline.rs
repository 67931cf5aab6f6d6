//! Runs the command-line workflow in-process on a small synthetic set:
//! synth, prepare, train, infer and eval, all under one directory.
//!
//!     cargo run --release --example cli_pipeline -- [work_dir] [epochs]

use std::path::PathBuf;

use segforge::cli::run;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "segforge-demo".into()));
    let epochs = args.next().unwrap_or_else(|| "5".into());
    let p = |s: &str| dir.join(s).display().to_string();

    let steps: Vec<Vec<String>> = vec![
        vec![
            "synth".into(),
            "--out".into(),
            p("synthetic"),
            "--count".into(),
            "20".into(),
        ],
        vec![
            "prepare".into(),
            "--raw-dir".into(),
            p("synthetic"),
            "--out".into(),
            p("prepared"),
        ],
        vec![
            "train".into(),
            "--manifest".into(),
            p("prepared/manifest.tsv"),
            "--out".into(),
            p("model"),
            "--preset".into(),
            "desk".into(),
            "--base-channels".into(),
            "8".into(),
            "--epochs".into(),
            epochs,
        ],
        vec![
            "infer".into(),
            "--model".into(),
            p("model/best.segf"),
            "--out".into(),
            p("predictions"),
            "--save-raw".into(),
            p("synthetic/synthetic/images"),
        ],
        vec![
            "eval".into(),
            "--manifest".into(),
            p("prepared/manifest.tsv"),
            "--pred-dir".into(),
            p("predictions"),
            "--out".into(),
            p("eval"),
        ],
    ];
    for step in steps {
        println!("$ segforge {}", step.join(" "));
        let code = run(std::iter::once("segforge".to_string()).chain(step));
        if code != 0 {
            std::process::exit(code);
        }
    }
}

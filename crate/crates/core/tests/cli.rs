use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use segforge::image::{read_mask, write_image, write_mask};
use segforge::morphology::BinaryMask;
use segforge::synth::synthetic_samples;

fn segforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segforge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// synth + prepare into `dir`, returning the manifest path.
fn prepared(dir: &Path, count: &str) -> std::path::PathBuf {
    let syn = dir.join("syn");
    let prep = dir.join("prep");
    assert_eq!(
        code(&segforge(&[
            "synth",
            "--out",
            p(&syn),
            "--count",
            count,
            "--size",
            "32",
            "--seed",
            "2"
        ])),
        0
    );
    assert_eq!(
        code(&segforge(&[
            "prepare",
            "--raw-dir",
            p(&syn),
            "--out",
            p(&prep),
            "--seed",
            "2"
        ])),
        0
    );
    prep.join("manifest.tsv")
}

fn train_small(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--manifest",
        p(manifest),
        "--out",
        p(out),
        "--size",
        "32",
        "--depth",
        "2",
        "--base-channels",
        "4",
        "--copies",
        "1",
        "--seed",
        "2",
    ];
    args.extend_from_slice(extra);
    segforge(&args)
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&segforge(&[])), 1);
    assert_eq!(code(&segforge(&["train"])), 1);
    assert_eq!(
        code(&segforge(&["eval", "--manifest", "m.tsv"])),
        1,
        "needs --model or --pred-dir"
    );

    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "train.epochs = 2\ntrain.speed = 3\n").unwrap();
    let o = segforge(&["--config", p(&cfg), "synth", "--out", p(&tmp.path().join("s"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bad.cfg:2"), "{}", stderr(&o));

    let manifest = prepared(tmp.path(), "6");
    let o = train_small(&manifest, &tmp.path().join("r"), &["--epochs", "0"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = train_small(&manifest, &tmp.path().join("r"), &["--pipeline", "open:1:4"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn missing_lobe_is_a_data_error_naming_the_id() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw/montgomery");
    for d in ["images", "masks_left", "masks_right"] {
        fs::create_dir_all(raw.join(d)).unwrap();
    }
    let s = synthetic_samples(2, (24, 24), 1).unwrap();
    for (i, s) in s.iter().enumerate() {
        let id = format!("MCUCXR_000{i}_1");
        write_image(&raw.join(format!("images/{id}.png")), &s.image).unwrap();
        write_mask(&raw.join(format!("masks_left/{id}.png")), &s.mask).unwrap();
        if i == 0 {
            write_mask(&raw.join(format!("masks_right/{id}.png")), &s.mask).unwrap();
        }
    }
    let o = segforge(&[
        "prepare",
        "--raw-dir",
        p(&tmp.path().join("raw")),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("MCUCXR_0001_1") && !err.contains("MCUCXR_0000_1"), "{err}");

    assert_eq!(
        code(&segforge(&[
            "prepare",
            "--raw-dir",
            p(tmp.path()),
            "--out",
            p(&tmp.path().join("o"))
        ])),
        2
    );
}

#[test]
fn prepare_merges_lobes_and_accepts_mask_suffix() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    for d in [
        "montgomery/images",
        "montgomery/masks_left",
        "montgomery/masks_right",
        "shenzhen/images",
        "shenzhen/masks",
    ] {
        fs::create_dir_all(raw.join(d)).unwrap();
    }
    let s = synthetic_samples(4, (24, 28), 3).unwrap();
    let left = BinaryMask::from_fn(24, 28, |y, x| (6..18).contains(&y) && (3..10).contains(&x));
    let right = BinaryMask::from_fn(24, 28, |y, x| (6..18).contains(&y) && (16..24).contains(&x));
    for (i, s) in s.iter().enumerate() {
        if i < 2 {
            write_image(&raw.join(format!("montgomery/images/m{i}.png")), &s.image).unwrap();
            write_mask(&raw.join(format!("montgomery/masks_left/m{i}.png")), &left).unwrap();
            write_mask(&raw.join(format!("montgomery/masks_right/m{i}.png")), &right).unwrap();
        } else {
            write_image(&raw.join(format!("shenzhen/images/s{i}.png")), &s.image).unwrap();
            write_mask(&raw.join(format!("shenzhen/masks/s{i}_mask.png")), &s.mask).unwrap();
        }
    }
    let out = tmp.path().join("prep");
    let o = segforge(&[
        "prepare",
        "--raw-dir",
        p(&raw),
        "--out",
        p(&out),
        "--train-fraction",
        "0.5",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let merged = read_mask(&out.join("masks/m0.png")).unwrap();
    assert!(left.union(&right).unwrap().is_subset(&merged));
    assert!(merged.count() > left.count() + right.count());

    let text = fs::read_to_string(out.join("manifest.tsv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("\ttest\t")).count(), 2);
    assert!(text.contains("s2_mask.png"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = prepared(tmp.path(), "6");
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# small run\ntrain.epochs = 3\npostprocess.keep_largest = 1\n").unwrap();

    let a = tmp.path().join("a");
    let o = segforge(&[
        "--config",
        p(&cfg),
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&a),
        "--size",
        "32",
        "--depth",
        "1",
        "--base-channels",
        "2",
        "--no-augment",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(a.join("history.csv")).unwrap().lines().count(), 4);
    let effective = fs::read_to_string(a.join("config.txt")).unwrap();
    assert!(effective.contains("postprocess.keep_largest = 1"));
    assert!(effective.contains("augment.copies = 0"));

    let b = tmp.path().join("b");
    let o = segforge(&[
        "--config",
        p(&cfg),
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&b),
        "--size",
        "32",
        "--depth",
        "1",
        "--base-channels",
        "2",
        "--epochs",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(b.join("history.csv")).unwrap().lines().count(), 2);
}

#[test]
fn eval_of_infer_output_matches_eval_of_model() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = prepared(tmp.path(), "10");
    let run = tmp.path().join("run");
    let o = train_small(&manifest, &run, &["--epochs", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model = run.join("best.segf");

    let pred = tmp.path().join("pred");
    let images = tmp.path().join("syn/synthetic/images");
    let o = segforge(&[
        "infer",
        "--model",
        p(&model),
        "--out",
        p(&pred),
        "--save-raw",
        p(&images),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for suffix in ["mask", "overlay", "prob", "raw"] {
        assert!(pred.join(format!("syn000_{suffix}.png")).is_file(), "{suffix}");
    }

    let (e1, e2) = (tmp.path().join("e1"), tmp.path().join("e2"));
    assert_eq!(
        code(&segforge(&[
            "eval",
            "--manifest",
            p(&manifest),
            "--model",
            p(&model),
            "--out",
            p(&e1)
        ])),
        0
    );
    assert_eq!(
        code(&segforge(&[
            "eval",
            "--manifest",
            p(&manifest),
            "--pred-dir",
            p(&pred),
            "--out",
            p(&e2)
        ])),
        0
    );
    let r1 = fs::read_to_string(e1.join("report.csv")).unwrap();
    assert_eq!(r1, fs::read_to_string(e2.join("report.csv")).unwrap());
    // train scores its best checkpoint the same way
    assert_eq!(r1, fs::read_to_string(run.join("report.csv")).unwrap());

    let o = segforge(&["eval", "--manifest", p(&manifest), "--model", p(&model), "--pooled"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("\npooled,"));

    // Raw masks written without postprocessing equal the `_raw` output.
    let bare = tmp.path().join("bare");
    let one = images.join("syn001.png");
    assert_eq!(
        code(&segforge(&[
            "infer",
            "--model",
            p(&model),
            "--out",
            p(&bare),
            "--no-postprocess",
            p(&one)
        ])),
        0
    );
    assert_eq!(
        read_mask(&bare.join("syn001_mask.png")).unwrap(),
        read_mask(&pred.join("syn001_raw.png")).unwrap()
    );
}

#[test]
fn infer_continues_past_bad_files() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = prepared(tmp.path(), "6");
    let run = tmp.path().join("run");
    assert_eq!(code(&train_small(&manifest, &run, &["--epochs", "1"])), 0);

    let inputs = tmp.path().join("in");
    fs::create_dir_all(&inputs).unwrap();
    fs::write(inputs.join("a_broken.png"), b"not a png").unwrap();
    fs::copy(
        tmp.path().join("syn/synthetic/images/syn000.png"),
        inputs.join("b_good.png"),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = segforge(&[
        "infer",
        "--model",
        p(&run.join("model.segf")),
        "--out",
        p(&out),
        p(&inputs),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("a_broken.png"));
    assert!(out.join("b_good_mask.png").is_file());

    let o = segforge(&[
        "infer",
        "--model",
        p(&inputs.join("a_broken.png")),
        "--out",
        p(&out),
        p(&inputs),
    ]);
    assert_eq!(code(&o), 2, "a corrupt model is a data error");
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain-file");
    fs::write(&file, "x").unwrap();
    let o = segforge(&["synth", "--out", p(&file.join("sub")), "--count", "2", "--size", "16"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

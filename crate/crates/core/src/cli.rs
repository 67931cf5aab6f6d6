//! The `segforge` command line: `synth`, `prepare`, `train`, `infer`, `eval`.
//!
//! Settings resolve as defaults, then `--config FILE`, then flags. Exit
//! codes: 0 success, 1 usage or configuration error, 2 data error, 3 any
//! other runtime failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{parse_size, RunConfig};
use crate::dataset::{
    duplicate_ids, load_sample, merge_lobes, DatasetManifest, ManifestEntry, MaskRef, Sample, Source, Split,
};
use crate::error::{ErrorKind, Result, SegError};
use crate::image::{read_image, read_mask, write_image, write_mask, Image};
use crate::metrics::EvalSummary;
use crate::modelfile;
use crate::morphology::{binarize, boundary, parse_pipeline, postprocess, BinaryMask, PostprocessConfig};
use crate::optim::LossKind;
use crate::synth::generate_synthetic;
use crate::train::{evaluate, predict, train, write_history, LogProgress};
use crate::transform::{expand_sample, resize_image, resize_mask, resize_sample, AugmentConfig};
use crate::unet::{ModelParams, UNetConfig};

#[derive(Debug, Parser)]
#[command(name = "segforge", version, about = "Lung-field segmentation for chest radiographs")]
pub struct Cli {
    /// File of `key = value` settings applied before the flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Index a dataset, merge lobe masks and assign the train/test split.
    Prepare(PrepareArgs),
    /// Train a model on the train split of a manifest.
    Train(TrainArgs),
    /// Segment images with a trained model.
    Infer(InferArgs),
    /// Score a model or saved predictions on one split of a manifest.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    /// Image size, `N` or `HxW`.
    #[arg(long, default_value = "64", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["raw_dir", "manifest"]))]
pub struct PrepareArgs {
    /// Directory with `montgomery/`, `shenzhen/` and/or `synthetic/` folders.
    #[arg(long)]
    pub raw_dir: Option<PathBuf>,
    /// Existing manifest to re-split instead of scanning a directory.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for `manifest.tsv` and merged masks.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Side of the square element that dilates merged lobe masks.
    #[arg(long)]
    pub lobe_se: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Depth 4, 64 base channels, 512x512.
    Full,
    /// Depth 3, 16 base channels, 64x64.
    Desk,
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    /// Starting point for the model settings below.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub convs_per_block: Option<usize>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    /// Model input size, `N` or `HxW`. Images are resized to it.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
pub struct PostFlags {
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Morphology steps such as `close:1` or `open:1,close:1:5`, or `none`.
    #[arg(long)]
    pub pipeline: Option<String>,
    /// Connected components to keep, 0 for all.
    #[arg(long)]
    pub keep_largest: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints, history and the evaluation report.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Augmented copies per training image.
    #[arg(long)]
    pub copies: Option<usize>,
    /// Train on the original images only.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub lobe_se: Option<usize>,
    #[command(flatten)]
    pub post: PostFlags,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Image files or directories of PNG images.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Also write the probability map and the thresholded mask.
    #[arg(long)]
    pub save_raw: bool,
    /// Write the thresholded mask without morphology or component filtering.
    #[arg(long)]
    pub no_postprocess: bool,
    #[command(flatten)]
    pub post: PostFlags,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("predictions").required(true).args(["model", "pred_dir"]))]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory of `infer --save-raw` to score instead of a model.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Directory for `report.csv` and `summary.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report dice and IoU over all pixels instead of per-image means.
    #[arg(long)]
    pub pooled: bool,
    #[arg(long)]
    pub lobe_se: Option<usize>,
    #[command(flatten)]
    pub post: PostFlags,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &SegError) -> i32 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Runtime => 3,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Synth(a) => cmd_synth(&mut cfg, a),
        Command::Prepare(a) => cmd_prepare(&mut cfg, a),
        Command::Train(a) => cmd_train(&mut cfg, a),
        Command::Infer(a) => cmd_infer(&mut cfg, a),
        Command::Eval(a) => cmd_eval(&mut cfg, a),
    }
}

fn apply_post(cfg: &mut RunConfig, f: &PostFlags) -> Result<()> {
    if let Some(t) = f.threshold {
        cfg.post.threshold = t;
    }
    if let Some(p) = &f.pipeline {
        cfg.post.pipeline = parse_pipeline(p)?;
    }
    if let Some(k) = f.keep_largest {
        cfg.post.keep_largest = k;
    }
    Ok(())
}

fn apply_model(cfg: &mut RunConfig, f: &ModelFlags) {
    match f.preset {
        Some(Preset::Full) => cfg.model = UNetConfig::full_scale(),
        Some(Preset::Desk) => cfg.model = UNetConfig::desk_scale(),
        None => {}
    }
    let m = &mut cfg.model;
    m.depth = f.depth.unwrap_or(m.depth);
    m.base_channels = f.base_channels.unwrap_or(m.base_channels);
    m.convs_per_block = f.convs_per_block.unwrap_or(m.convs_per_block);
    m.kernel_size = f.kernel_size.unwrap_or(m.kernel_size);
    m.input_size = f.size.unwrap_or(m.input_size);
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| SegError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| SegError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_report(dir: &Path, summary: &EvalSummary, pooled: bool) -> Result<()> {
    let mut csv = Vec::new();
    summary.write_csv(&mut csv, pooled).expect("writing to memory");
    write_file(&dir.join("report.csv"), &csv)?;
    write_file(&dir.join("summary.txt"), format!("{summary}\n").as_bytes())
}

fn cmd_synth(cfg: &mut RunConfig, a: &SynthArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(cfg.seed);
    let manifest = generate_synthetic(a.count, a.size, seed, &a.out)?;
    println!(
        "wrote {} synthetic samples and {}",
        manifest.len(),
        a.out.join("manifest.tsv").display()
    );
    Ok(())
}

/// `target` expressed relative to `base`. Both must be absolute.
fn relative_to(target: &Path, base: &Path) -> PathBuf {
    let t: Vec<Component> = target.components().collect();
    let b: Vec<Component> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return target.to_path_buf();
    }
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c);
    }
    out
}

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|source| SegError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|source| SegError::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry
            .map_err(|source| SegError::Read {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Builds a manifest from the raw directory layout:
///
/// ```text
/// montgomery/images/<id>.png  montgomery/masks_left/<id>.png  montgomery/masks_right/<id>.png
/// shenzhen/images/<id>.png    shenzhen/masks/<id>.png (or <id>_mask.png)
/// synthetic/images/<id>.png   synthetic/masks/<id>.png
/// ```
///
/// Images without masks and masks without images are all reported together.
pub fn scan_raw_dir(raw: &Path) -> Result<DatasetManifest> {
    // Entry paths already include `raw`.
    let mut manifest = DatasetManifest::new("");
    let mut missing = Vec::new();
    let mut found_any = false;
    for source in Source::ALL {
        let dir = raw.join(source.to_string());
        let images_dir = dir.join("images");
        if !images_dir.is_dir() {
            continue;
        }
        found_any = true;
        let images = png_stems(&images_dir)?;
        let mask_dirs: Vec<PathBuf> = match source {
            Source::Montgomery => vec![dir.join("masks_left"), dir.join("masks_right")],
            Source::Shenzhen | Source::Synthetic => vec![dir.join("masks")],
        };
        for (id, image) in &images {
            let mut masks = Vec::new();
            for md in &mask_dirs {
                let plain = md.join(format!("{id}.png"));
                let suffixed = md.join(format!("{id}_mask.png"));
                if plain.is_file() {
                    masks.push(plain);
                } else if source == Source::Shenzhen && suffixed.is_file() {
                    masks.push(suffixed);
                } else {
                    missing.push((id.clone(), plain));
                }
            }
            if masks.len() != mask_dirs.len() {
                continue;
            }
            let mask = match &masks[..] {
                [l, r] => MaskRef::Lobes {
                    left: l.clone(),
                    right: r.clone(),
                },
                [m] => MaskRef::Single(m.clone()),
                _ => unreachable!("one or two mask folders"),
            };
            manifest.entries.push(ManifestEntry {
                id: id.clone(),
                source,
                split: Split::Train,
                image: image.clone(),
                mask,
            });
        }
        // Masks with no image.
        for md in mask_dirs.iter().filter(|d| d.is_dir()) {
            for (stem, _) in png_stems(md)? {
                let id = stem.strip_suffix("_mask").unwrap_or(&stem);
                if !images.iter().any(|(i, _)| i == id) {
                    missing.push((id.to_string(), images_dir.join(format!("{id}.png"))));
                }
            }
        }
    }
    if !found_any {
        return Err(SegError::EmptyDataset(format!(
            "{} has no montgomery/images, shenzhen/images or synthetic/images folder",
            raw.display()
        )));
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(SegError::MissingFiles(missing));
    }
    Ok(manifest)
}

fn cmd_prepare(cfg: &mut RunConfig, a: &PrepareArgs) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(f) = a.train_fraction {
        cfg.train_fraction = f;
    }
    if let Some(s) = a.lobe_se {
        cfg.lobe_se_size = s;
    }
    cfg.validate()?;

    let source = match (&a.raw_dir, &a.manifest) {
        (Some(raw), _) => scan_raw_dir(raw)?,
        (None, Some(m)) => DatasetManifest::load(m)?,
        (None, None) => unreachable!("clap requires one input"),
    };
    if source.is_empty() {
        return Err(SegError::EmptyDataset("no samples found".into()));
    }
    let dups = duplicate_ids(source.entries.iter().map(|e| e.id.as_str()));
    if !dups.is_empty() {
        return Err(SegError::Config(format!(
            "duplicate ids across sources: {}",
            dups.join(", ")
        )));
    }

    create_dir(&a.out)?;
    let out_abs = absolute(&a.out)?;
    let masks_dir = a.out.join("masks");
    let se = cfg.lobe_se();
    let mut manifest = DatasetManifest::new(&a.out);
    for e in &source.entries {
        let image = relative_to(&absolute(&source.resolve(&e.image))?, &out_abs);
        let mask = match &e.mask {
            MaskRef::Single(p) => relative_to(&absolute(&source.resolve(p))?, &out_abs),
            MaskRef::Lobes { left, right } => {
                let lp = source.resolve(left);
                let merged =
                    merge_lobes(&read_mask(&lp)?, &read_mask(&source.resolve(right))?, &se).map_err(|err| {
                        SegError::Image {
                            path: lp,
                            msg: format!("{}: lobe masks disagree: {err}", e.id),
                        }
                    })?;
                create_dir(&masks_dir)?;
                let rel = PathBuf::from("masks").join(format!("{}.png", e.id));
                write_mask(&a.out.join(&rel), &merged)?;
                rel
            }
        };
        manifest.entries.push(ManifestEntry {
            id: e.id.clone(),
            source: e.source,
            split: Split::Train,
            image,
            mask: MaskRef::Single(mask),
        });
    }
    manifest.split(cfg.train_fraction, cfg.seed)?;
    let path = a.out.join("manifest.tsv");
    manifest.save(&path)?;
    println!(
        "{}: {} train, {} test",
        path.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Test)
    );
    Ok(())
}

fn cmd_train(cfg: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    apply_model(cfg, &a.model);
    apply_post(cfg, &a.post)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.learning_rate = a.lr.unwrap_or(t.learning_rate);
    t.loss = a.loss.unwrap_or(t.loss);
    if a.no_augment {
        cfg.augment = AugmentConfig::disabled();
    }
    if let Some(c) = a.copies {
        cfg.augment.copies = c;
    }
    if let Some(s) = a.lobe_se {
        cfg.lobe_se_size = s;
    }
    cfg.validate()?;

    let manifest = DatasetManifest::load(&a.manifest)?;
    let se = cfg.lobe_se();
    let target = cfg.model.input_size;
    let augment = cfg.augment_config();
    let mut train_set = Vec::new();
    for (i, e) in manifest.with_split(Split::Train).enumerate() {
        let s = load_sample(&manifest, e, &se)?;
        train_set.extend(expand_sample(&s, i, &augment, target)?);
    }
    let val: Vec<Sample> = manifest
        .with_split(Split::Test)
        .map(|e| load_sample(&manifest, e, &se).and_then(|s| resize_sample(&s, target)))
        .collect::<Result<_>>()?;
    log::info!(
        "{} training images after augmentation, {} test images, model {}x{}",
        train_set.len(),
        val.len(),
        target.0,
        target.1
    );

    create_dir(&a.out)?;
    write_file(&a.out.join("config.txt"), cfg.to_text().as_bytes())?;
    let mut params = ModelParams::<f32>::build(cfg.model, cfg.seed)?;
    let outcome = train(
        &mut params,
        &train_set,
        &val,
        &cfg.train_config(),
        &cfg.post,
        &mut LogProgress,
    )?;

    modelfile::save(&a.out.join("model.segf"), &params)?;
    modelfile::save(&a.out.join("best.segf"), &outcome.best)?;
    let mut history = Vec::new();
    write_history(&mut history, &outcome.history).expect("writing to memory");
    write_file(&a.out.join("history.csv"), &history)?;
    println!("best epoch {} of {}", outcome.best_epoch, outcome.history.len());
    if !val.is_empty() {
        let summary = evaluate(&outcome.best, &val, &cfg.post, cfg.train.batch_size)?;
        write_report(&a.out, &summary, false)?;
        println!("{summary}");
    }
    Ok(())
}

/// The input image with the mask outline drawn at full intensity.
pub fn overlay(image: &Image, mask: &BinaryMask) -> Image {
    let edge = boundary(mask);
    let mut out = image.clone();
    for (y, x) in edge.foreground() {
        out.set(y, x, 1.0);
    }
    out
}

fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            files.extend(png_stems(p)?.into_iter().map(|(_, f)| f));
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn infer_one(
    params: &ModelParams<f32>,
    path: &Path,
    out: &Path,
    a: &InferArgs,
    post: &PostprocessConfig,
) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| SegError::invalid("infer", format!("{} has no usable file name", path.display())))?;
    let image = resize_image(&read_image(path)?, params.config().input_size)?;
    let prob = predict(params, &[&image], 1)?.remove(0);
    let raw = binarize(&prob, post.threshold);
    let mask = if a.no_postprocess {
        raw.clone()
    } else {
        postprocess(&prob, post)?
    };
    write_mask(&out.join(format!("{stem}_mask.png")), &mask)?;
    write_image(&out.join(format!("{stem}_overlay.png")), &overlay(&image, &mask))?;
    if a.save_raw {
        write_image(&out.join(format!("{stem}_prob.png")), &prob)?;
        write_mask(&out.join(format!("{stem}_raw.png")), &raw)?;
    }
    Ok(())
}

fn cmd_infer(cfg: &mut RunConfig, a: &InferArgs) -> Result<()> {
    apply_post(cfg, &a.post)?;
    cfg.post.validate()?;
    let params = modelfile::load_as::<f32>(&a.model)?;
    let files = collect_inputs(&a.inputs)?;
    if files.is_empty() {
        return Err(SegError::EmptyDataset("no input images".into()));
    }
    create_dir(&a.out)?;
    let mut failed: Vec<SegError> = Vec::new();
    for f in &files {
        match infer_one(&params, f, &a.out, a, &cfg.post) {
            Ok(()) => log::info!("segmented {}", f.display()),
            Err(e) => {
                eprintln!("error: {e}");
                failed.push(e);
            }
        }
    }
    println!("{} of {} images segmented", files.len() - failed.len(), files.len());
    match failed.into_iter().next() {
        None => Ok(()),
        // Report the first failure's class; every failure was printed above.
        Some(first) => Err(first),
    }
}

fn read_prediction(dir: &Path, id: &str, kind: &str) -> Result<BinaryMask> {
    let path = dir.join(format!("{id}_{kind}.png"));
    if !path.is_file() {
        return Err(SegError::MissingFiles(vec![(id.to_string(), path)]));
    }
    read_mask(&path)
}

fn cmd_eval(cfg: &mut RunConfig, a: &EvalArgs) -> Result<()> {
    apply_post(cfg, &a.post)?;
    if let Some(s) = a.lobe_se {
        cfg.lobe_se_size = s;
    }
    cfg.post.validate()?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let entries: Vec<&ManifestEntry> = manifest.with_split(a.split).collect();
    if entries.is_empty() {
        return Err(SegError::EmptyDataset(format!("the {} split has no samples", a.split)));
    }
    let se = cfg.lobe_se();
    let summary = match (&a.model, &a.pred_dir) {
        (Some(model), _) => {
            let params = modelfile::load_as::<f32>(model)?;
            let size = params.config().input_size;
            let samples: Vec<Sample> = entries
                .iter()
                .map(|e| load_sample(&manifest, e, &se).and_then(|s| resize_sample(&s, size)))
                .collect::<Result<_>>()?;
            evaluate(&params, &samples, &cfg.post, cfg.train.batch_size)?
        }
        (None, Some(dir)) => {
            let mut summary = EvalSummary::default();
            for e in &entries {
                let post = read_prediction(dir, &e.id, "mask")?;
                let raw = read_prediction(dir, &e.id, "raw")?;
                let truth = resize_mask(&load_sample(&manifest, e, &se)?.mask, post.shape())?;
                summary.push(&e.id, &raw, &post, &truth)?;
            }
            summary
        }
        (None, None) => unreachable!("clap requires one source of predictions"),
    };
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_report(out, &summary, a.pooled)?;
    } else {
        summary
            .write_csv(std::io::stdout().lock(), a.pooled)
            .map_err(|source| SegError::Write {
                path: "<stdout>".into(),
                source,
            })?;
    }
    println!("{summary}");
    std::io::stdout().flush().ok();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths() {
        assert_eq!(
            relative_to(Path::new("/a/b/c.png"), Path::new("/a/d")),
            PathBuf::from("../b/c.png")
        );
        assert_eq!(
            relative_to(Path::new("/a/d/x.png"), Path::new("/a/d")),
            PathBuf::from("x.png")
        );
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["segforge"]), 1);
        assert_eq!(run(["segforge", "frobnicate"]), 1);
        assert_eq!(run(["segforge", "synth"]), 1);
        assert_eq!(run(["segforge", "synth", "--out", "x", "--size", "big"]), 1);
        assert_eq!(run(["segforge", "--help"]), 0);
    }

    #[test]
    fn overlay_marks_the_outline() {
        let img = Image::new(6, 6);
        let m = BinaryMask::from_fn(6, 6, |y, x| (1..5).contains(&y) && (1..5).contains(&x));
        let o = overlay(&img, &m);
        assert_eq!(o.get(1, 1), 1.0);
        assert_eq!(o.get(2, 2), 0.0);
        assert_eq!(o.get(0, 0), 0.0);
    }
}

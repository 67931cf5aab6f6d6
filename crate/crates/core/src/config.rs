//! Run configuration shared by the command-line tools.
//!
//! Files hold one `key = value` per line, `#` starts a comment. Keys are
//! the ones [`RunConfig::to_text`] writes, plus `model.preset`
//! (`full` or `desk`), which resets every model field at once.

use std::fs;
use std::path::Path;

use crate::error::{Result, SegError};
use crate::morphology::{format_pipeline, parse_pipeline, PostprocessConfig, StructuringElement};
use crate::optim::TrainConfig;
use crate::transform::AugmentConfig;
use crate::unet::UNetConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Feeds weight init, splitting, augmentation and batch order.
    pub seed: u64,
    pub model: UNetConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub post: PostprocessConfig,
    pub train_fraction: f64,
    /// Side of the square element used to dilate merged lobe masks.
    pub lobe_se_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: UNetConfig::full_scale(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            post: PostprocessConfig::default(),
            train_fraction: 0.8,
            lobe_se_size: 5,
        }
    }
}

/// `"64"` or `"64x48"` (height x width).
pub fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let num = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad size {s:?}; expected N or HxW"))
    };
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((num(h)?, num(w)?)),
        None => num(s).map(|n| (n, n)),
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

impl RunConfig {
    /// Defaults overridden by the file at `path`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| SegError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of `text` in order.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| SegError::Config(format!("{}:{}: {msg}", origin.display(), i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                SegError::Config(m) => at(m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| SegError::Config(format!("{key}: cannot parse {v:?}")))
        }
        let flag = |v: &str| {
            parse_bool(v).ok_or_else(|| SegError::Config(format!("{key}: expected true or false, got {v:?}")))
        };
        match key {
            "seed" => self.seed = num(key, value)?,
            "model.preset" => {
                self.model = match value {
                    "full" => UNetConfig::full_scale(),
                    "desk" => UNetConfig::desk_scale(),
                    _ => {
                        return Err(SegError::Config(format!(
                            "model.preset must be full or desk, got {value:?}"
                        )))
                    }
                }
            }
            "model.depth" => self.model.depth = num(key, value)?,
            "model.base_channels" => self.model.base_channels = num(key, value)?,
            "model.convs_per_block" => self.model.convs_per_block = num(key, value)?,
            "model.kernel_size" => self.model.kernel_size = num(key, value)?,
            "model.input_size" => self.model.input_size = parse_size(value).map_err(SegError::Config)?,
            "train.epochs" => self.train.epochs = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.learning_rate" => self.train.learning_rate = num(key, value)?,
            "train.adam_beta1" => self.train.adam_beta1 = num(key, value)?,
            "train.adam_beta2" => self.train.adam_beta2 = num(key, value)?,
            "train.adam_eps" => self.train.adam_eps = num(key, value)?,
            "train.loss" => self.train.loss = value.parse()?,
            "augment.enabled" => {
                if !flag(value)? {
                    self.augment = AugmentConfig::disabled();
                }
            }
            "augment.rotate" => self.augment.rotate = flag(value)?,
            "augment.rotate_max_deg" => self.augment.rotate_max_deg = num(key, value)?,
            "augment.zoom" => self.augment.zoom = flag(value)?,
            "augment.zoom_min" => self.augment.zoom_range.0 = num(key, value)?,
            "augment.zoom_max" => self.augment.zoom_range.1 = num(key, value)?,
            "augment.crop" => self.augment.crop = flag(value)?,
            "augment.crop_fraction" => self.augment.crop_fraction = num(key, value)?,
            "augment.copies" => self.augment.copies = num(key, value)?,
            "postprocess.threshold" => self.post.threshold = num(key, value)?,
            "postprocess.pipeline" => self.post.pipeline = parse_pipeline(value)?,
            "postprocess.keep_largest" => self.post.keep_largest = num(key, value)?,
            "data.train_fraction" => self.train_fraction = num(key, value)?,
            "data.lobe_se_size" => self.lobe_se_size = num(key, value)?,
            _ => return Err(SegError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value; [`RunConfig::apply_text`] reads it
    /// back to an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let a = &self.augment;
        let p = &self.post;
        let lines = [
            format!("seed = {}", self.seed),
            format!("model.depth = {}", m.depth),
            format!("model.base_channels = {}", m.base_channels),
            format!("model.convs_per_block = {}", m.convs_per_block),
            format!("model.kernel_size = {}", m.kernel_size),
            format!("model.input_size = {}x{}", m.input_size.0, m.input_size.1),
            format!("train.epochs = {}", t.epochs),
            format!("train.batch_size = {}", t.batch_size),
            format!("train.learning_rate = {:e}", t.learning_rate),
            format!("train.adam_beta1 = {}", t.adam_beta1),
            format!("train.adam_beta2 = {}", t.adam_beta2),
            format!("train.adam_eps = {:e}", t.adam_eps),
            format!("train.loss = {}", t.loss),
            format!("augment.rotate = {}", a.rotate),
            format!("augment.rotate_max_deg = {}", a.rotate_max_deg),
            format!("augment.zoom = {}", a.zoom),
            format!("augment.zoom_min = {}", a.zoom_range.0),
            format!("augment.zoom_max = {}", a.zoom_range.1),
            format!("augment.crop = {}", a.crop),
            format!("augment.crop_fraction = {}", a.crop_fraction),
            format!("augment.copies = {}", a.copies),
            format!("postprocess.threshold = {}", p.threshold),
            format!("postprocess.pipeline = {}", format_pipeline(&p.pipeline)),
            format!("postprocess.keep_largest = {}", p.keep_largest),
            format!("data.train_fraction = {}", self.train_fraction),
            format!("data.lobe_se_size = {}", self.lobe_se_size),
        ];
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Augmentation settings with the run seed applied.
    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            seed: self.seed,
            ..self.augment.clone()
        }
    }

    pub fn lobe_se(&self) -> StructuringElement {
        StructuringElement::square(self.lobe_se_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| SegError::Config(e.to_string()))?;
        self.train.validate()?;
        self.augment.validate()?;
        self.post.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(SegError::Config(format!(
                "data.train_fraction {} must be in (0, 1]",
                self.train_fraction
            )));
        }
        if self.lobe_se_size.is_multiple_of(2) {
            return Err(SegError::Config(format!(
                "data.lobe_se_size {} must be odd",
                self.lobe_se_size
            )));
        }
        Ok(())
    }
}

//! Mini-batch training and batched inference.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::dataset::Sample;
use crate::error::{Result, SegError};
use crate::image::Image;
use crate::metrics::EvalSummary;
use crate::morphology::{binarize, postprocess, BinaryMask, PostprocessConfig};
use crate::optim::{adam_step, AdamState, TrainConfig};
use crate::tensor::{Real, Shape, Tensor};
use crate::unet::ModelParams;

/// Stacks images into an `(n, 1, h, w)` tensor.
pub fn images_to_tensor<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        return Err(SegError::invalid("images_to_tensor", "no images"));
    };
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.shape() != (h, w) {
            let (ih, iw) = img.shape();
            let (dim, got, exp) = if ih != h { ("height", ih, h) } else { ("width", iw, w) };
            return Err(SegError::shape("images_to_tensor", dim, got, exp));
        }
        data.extend(img.data().iter().map(|&v| T::of(v as f64)));
    }
    Tensor::from_vec(Shape::new(images.len(), 1, h, w), data)
}

/// Stacks masks into an `(n, 1, h, w)` tensor of zeros and ones.
pub fn masks_to_tensor<T: Real>(masks: &[&BinaryMask]) -> Result<Tensor<T>> {
    let images: Vec<Image> = masks.iter().map(|m| Image::from_mask(m)).collect();
    images_to_tensor(&images.iter().collect::<Vec<_>>())
}

/// Splits an `(n, 1, h, w)` tensor back into images.
pub fn tensor_to_images<T: Real>(t: &Tensor<T>) -> Vec<Image> {
    let s = t.shape();
    (0..s.n)
        .map(|n| {
            let plane = t.plane(n, 0);
            Image::from_vec(s.h, s.w, plane.iter().map(|v| v.f64() as f32).collect()).expect("plane size")
        })
        .collect()
}

/// Probability maps for `images`, evaluated `batch_size` at a time.
pub fn predict<T: Real>(params: &ModelParams<T>, images: &[&Image], batch_size: usize) -> Result<Vec<Image>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let x = images_to_tensor::<T>(chunk)?;
        out.extend(tensor_to_images(&params.forward(&x)?));
    }
    Ok(out)
}

/// Raw (threshold only) and postprocessed scores for `samples`.
pub fn evaluate<T: Real>(
    params: &ModelParams<T>,
    samples: &[Sample],
    post: &PostprocessConfig,
    batch_size: usize,
) -> Result<EvalSummary> {
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let probs = predict(params, &images, batch_size)?;
    let mut summary = EvalSummary::default();
    for (s, p) in samples.iter().zip(&probs) {
        let raw = binarize(p, post.threshold);
        let pp = postprocess(p, post)?;
        summary.push(&s.id, &raw, &pp, &s.mask)?;
    }
    Ok(summary)
}

/// One line of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean validation dice; NaN without a validation set.
    pub val_dice_raw: f64,
    pub val_dice_post: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{:.6},{:.6},{:.6}",
            self.epoch, self.mean_loss, self.val_dice_raw, self.val_dice_post
        )
    }
}

pub const HISTORY_HEADER: &str = "epoch,mean_loss,val_dice_raw,val_dice_post";

pub fn write_history(mut out: impl Write, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in history {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

/// Progress callbacks. All methods default to doing nothing.
pub trait TrainObserver {
    fn on_step(&mut self, _epoch: usize, _step: usize, _loss: f64) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

/// Observer that ignores everything.
pub struct Silent;

impl TrainObserver for Silent {}

/// Logs each epoch through the `log` crate.
pub struct LogProgress;

impl TrainObserver for LogProgress {
    fn on_epoch(&mut self, r: &EpochRecord) {
        log::info!(
            "epoch {:>3}  loss {:.5}  val dice raw {:.4}  post {:.4}",
            r.epoch,
            r.mean_loss,
            r.val_dice_raw,
            r.val_dice_post
        );
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub history: Vec<EpochRecord>,
    /// Parameters from the epoch with the highest postprocessed validation
    /// dice (earliest on ties), or the final ones without validation data.
    pub best: ModelParams<T>,
    pub best_epoch: usize,
}

/// Forward, backward and Adam update on one batch. Returns the loss.
pub fn train_step<T: Real>(
    params: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    batch: &[&Sample],
    config: &TrainConfig,
) -> Result<f64> {
    let images: Vec<&Image> = batch.iter().map(|s| &s.image).collect();
    let masks: Vec<&BinaryMask> = batch.iter().map(|s| &s.mask).collect();
    let mut tape = Tape::new();
    let x = tape.constant(images_to_tensor(&images)?);
    let truth = tape.constant(masks_to_tensor(&masks)?);
    let (prob, leaves) = params.forward_tape(&mut tape, x)?;
    let loss = config.loss.build(&mut tape, prob, truth)?;
    let loss_value = tape.value(loss).data()[0].f64();
    if !loss_value.is_finite() {
        return Err(SegError::invalid("train_step", format!("loss became {loss_value}")));
    }
    let mut grads = tape.backward(loss)?;
    let g: Vec<Tensor<T>> = leaves
        .iter()
        .flat_map(|&(w, b)| [w, b])
        .map(|v| grads.take(v).expect("parameter leaves require grad"))
        .collect();
    drop(tape);
    adam_step(params, &g, state, config)?;
    Ok(loss_value)
}

/// Trains `params` in place on `train`, scoring `val` after every epoch.
///
/// Batches are drawn from a fresh seeded shuffle each epoch; the last batch
/// of an epoch may be smaller than `batch_size`.
pub fn train<T: Real>(
    params: &mut ModelParams<T>,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    post: &PostprocessConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    post.validate()?;
    if train.is_empty() {
        return Err(SegError::EmptyDataset("the training split has no samples".into()));
    }
    let size = params.config().input_size;
    if let Some(s) = train.iter().chain(val).find(|s| s.image.shape() != size) {
        let (h, w) = s.image.shape();
        return Err(SegError::invalid(
            "train",
            format!("sample {} is {h}x{w} but the model expects {}x{}", s.id, size.0, size.1),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::for_model(params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams<T>)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = train_step(params, &mut state, &batch, config)?;
            observer.on_step(epoch, steps, loss);
            total += loss;
            steps += 1;
        }
        let (raw, pp) = if val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let s = evaluate(params, val, post, config.batch_size)?;
            (s.raw.mean_dice(), s.post.mean_dice())
        };
        let record = EpochRecord {
            epoch,
            mean_loss: total / steps as f64,
            val_dice_raw: raw,
            val_dice_post: pp,
        };
        observer.on_epoch(&record);
        history.push(record);
        if !val.is_empty() && best.as_ref().is_none_or(|(d, _, _)| pp > *d) {
            best = Some((pp, epoch, params.clone()));
        }
    }

    let (best_epoch, best) = match best {
        Some((_, e, p)) => (e, p),
        None => (config.epochs, params.clone()),
    };
    Ok(TrainOutcome {
        history,
        best,
        best_epoch,
    })
}

//! Overlap metrics and evaluation reports.

use std::fmt;
use std::io::Write;

use crate::error::{Result, SegError};
use crate::morphology::BinaryMask;

fn counts(pred: &BinaryMask, truth: &BinaryMask, op: &'static str) -> Result<(usize, usize, usize)> {
    if pred.shape() != truth.shape() {
        let (ph, pw) = pred.shape();
        let (th, tw) = truth.shape();
        return Err(if ph != th {
            SegError::shape(op, "height", ph, th)
        } else {
            SegError::shape(op, "width", pw, tw)
        });
    }
    let mut inter = 0;
    let mut a = 0;
    let mut b = 0;
    for (&p, &t) in pred.bits().iter().zip(truth.bits()) {
        inter += (p && t) as usize;
        a += p as usize;
        b += t as usize;
    }
    Ok((inter, a, b))
}

/// `2|A∩B| / (|A|+|B|)`, or 1.0 when both masks are empty.
pub fn dice_binary(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    let (inter, a, b) = counts(pred, truth, "dice_binary")?;
    Ok(if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    })
}

/// `|A∩B| / |A∪B|`, or 1.0 when both masks are empty.
pub fn iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    let (inter, a, b) = counts(pred, truth, "iou")?;
    let union = a + b - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Postprocessed,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Raw => "raw",
            Stage::Postprocessed => "postprocessed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub id: String,
    pub dice: f64,
    pub iou: f64,
    /// Overlap counts `(|A∩B|, |A|, |B|)`, kept for pooled statistics.
    pub counts: (usize, usize, usize),
}

impl SampleScore {
    pub fn compute(id: impl Into<String>, pred: &BinaryMask, truth: &BinaryMask) -> Result<Self> {
        let c = counts(pred, truth, "SampleScore")?;
        let (inter, a, b) = c;
        let union = a + b - inter;
        Ok(SampleScore {
            id: id.into(),
            dice: if a + b == 0 {
                1.0
            } else {
                2.0 * inter as f64 / (a + b) as f64
            },
            iou: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
            counts: c,
        })
    }
}

/// Per-sample and aggregate scores for one stage of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub stage: Stage,
    pub samples: Vec<SampleScore>,
}

impl EvalReport {
    pub fn new(stage: Stage) -> Self {
        EvalReport {
            stage,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, score: SampleScore) {
        self.samples.push(score);
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    /// Mean per-sample dice; 0 for an empty report.
    pub fn mean_dice(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.dice))
    }

    pub fn mean_iou(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.iou))
    }

    /// Dice over all pixels of all samples at once.
    pub fn pooled_dice(&self) -> f64 {
        let (i, a, b) = self.pooled_counts();
        if a + b == 0 {
            1.0
        } else {
            2.0 * i as f64 / (a + b) as f64
        }
    }

    pub fn pooled_iou(&self) -> f64 {
        let (i, a, b) = self.pooled_counts();
        let u = a + b - i;
        if u == 0 {
            1.0
        } else {
            i as f64 / u as f64
        }
    }

    fn pooled_counts(&self) -> (usize, usize, usize) {
        self.samples.iter().fold((0, 0, 0), |acc, s| {
            (acc.0 + s.counts.0, acc.1 + s.counts.1, acc.2 + s.counts.2)
        })
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Raw and postprocessed reports over the same samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub raw: EvalReport,
    pub post: EvalReport,
}

impl Default for EvalSummary {
    fn default() -> Self {
        EvalSummary {
            raw: EvalReport::new(Stage::Raw),
            post: EvalReport::new(Stage::Postprocessed),
        }
    }
}

impl EvalSummary {
    pub fn push(&mut self, id: &str, raw: &BinaryMask, post: &BinaryMask, truth: &BinaryMask) -> Result<()> {
        self.raw.push(SampleScore::compute(id, raw, truth)?);
        self.post.push(SampleScore::compute(id, post, truth)?);
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.raw.count()
    }

    /// CSV with one row per sample and a trailing `mean` row (or `pooled`
    /// when `pooled` is set).
    pub fn write_csv(&self, mut out: impl Write, pooled: bool) -> std::io::Result<()> {
        writeln!(out, "id,dice_raw,iou_raw,dice_post,iou_post")?;
        for (r, p) in self.raw.samples.iter().zip(&self.post.samples) {
            writeln!(out, "{},{:.6},{:.6},{:.6},{:.6}", r.id, r.dice, r.iou, p.dice, p.iou)?;
        }
        if pooled {
            writeln!(
                out,
                "pooled,{:.6},{:.6},{:.6},{:.6}",
                self.raw.pooled_dice(),
                self.raw.pooled_iou(),
                self.post.pooled_dice(),
                self.post.pooled_iou()
            )
        } else {
            writeln!(
                out,
                "mean,{:.6},{:.6},{:.6},{:.6}",
                self.raw.mean_dice(),
                self.raw.mean_iou(),
                self.post.mean_dice(),
                self.post.mean_iou()
            )
        }
    }
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples: {}", self.count())?;
        for r in [&self.raw, &self.post] {
            writeln!(
                f,
                "{:<14} mean dice {:.4}  mean IoU {:.4}  pooled dice {:.4}",
                r.stage,
                r.mean_dice(),
                r.mean_iou(),
                r.pooled_dice()
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::from_bits(1, bits.len(), bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = mask(&[1, 1, 1, 1, 0, 0]);
        assert_eq!(dice_binary(&a, &a).unwrap(), 1.0);
        let b = mask(&[0, 0, 0, 0, 1, 1]);
        assert_eq!(dice_binary(&a, &b).unwrap(), 0.0);
        let c = mask(&[0, 0, 1, 1, 1, 1]);
        assert_eq!(dice_binary(&a, &c).unwrap(), 0.5);
        assert!((iou(&a, &c).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let e = mask(&[0, 0]);
        assert_eq!(dice_binary(&e, &e).unwrap(), 1.0);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert!(dice_binary(&a, &e).is_err());
    }

    #[test]
    fn report_aggregates_and_writes_csv() {
        let t = mask(&[1, 1, 1, 1, 0, 0]);
        let mut s = EvalSummary::default();
        s.push("a", &t, &t, &t).unwrap();
        s.push("b", &mask(&[0, 0, 1, 1, 1, 1]), &t, &t).unwrap();
        assert_eq!(s.raw.mean_dice(), 0.75);
        assert_eq!(s.post.mean_dice(), 1.0);
        assert!((s.raw.pooled_dice() - 12.0 / 16.0).abs() < 1e-15);
        let mut buf = Vec::new();
        s.write_csv(&mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "id,dice_raw,iou_raw,dice_post,iou_post");
        assert_eq!(lines[2], "b,0.500000,0.333333,1.000000,1.000000");
        assert!(lines[3].starts_with("mean,0.750000"));
    }
}

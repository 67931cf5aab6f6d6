//! Central finite-difference checks for the tape.
//!
//! Each check rebuilds the graph from scratch for every perturbed
//! coordinate, so it is only meant for small tensors in double precision.
//! Coordinates whose `±step` perturbation flips a ReLU sign or a pooling
//! winner are skipped: the one-sided slopes differ there and a central
//! difference does not estimate either of them.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Padding, Tape, Var};
use crate::error::Result;
use crate::tensor::{Shape, Tensor};
use crate::unet::{forward_graph, ModelParams, UNetConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so that gradients which are
    /// zero up to rounding are compared absolutely.
    pub floor: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

impl FdConfig {
    pub fn relative_error(&self, analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor)
    }
}

/// Outcome of one or more checks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CheckResult {
    pub instances: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tolerance
    }

    pub fn merge(&mut self, other: CheckResult) {
        self.instances += other.instances;
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} instances, {} coords checked, {} skipped at kinks, max rel err {:.3e}",
            self.instances, self.checked, self.skipped, self.max_rel_error
        )
    }
}

/// Compares the tape gradient of `build` with central differences for every
/// coordinate of every input. `build` receives the inputs as leaves that
/// require gradients and must return a scalar.
pub fn check<F>(inputs: &[Tensor<f64>], cfg: &FdConfig, build: F) -> Result<CheckResult>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(Tape<f64>, Var, Vec<Var>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok((tape, loss, vars))
    };

    let (tape, loss, vars) = eval(inputs)?;
    let base_sig = tape.kink_signature();
    let grads = tape.backward(loss)?;

    let mut result = CheckResult {
        instances: 1,
        ..Default::default()
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("parameter leaf").data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = work[k].data()[i];
            let mut probe = |delta: f64| -> Result<(f64, u64)> {
                work[k].data_mut()[i] = orig + delta;
                let (t, l, _) = eval(&work)?;
                Ok((t.value(l).data()[0], t.kink_signature()))
            };
            let (plus, sig_p) = probe(cfg.step)?;
            let (minus, sig_m) = probe(-cfg.step)?;
            work[k].data_mut()[i] = orig;
            if sig_p != base_sig || sig_m != base_sig {
                result.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            result.checked += 1;
            result.max_rel_error = result.max_rel_error.max(cfg.relative_error(a, numeric));
        }
    }
    Ok(result)
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

fn binary(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
}

fn small_shape(rng: &mut ChaCha8Rng, even: bool) -> Shape {
    let side = |rng: &mut ChaCha8Rng| {
        if even {
            2 * rng.random_range(1..=4)
        } else {
            rng.random_range(1..=8)
        }
    };
    Shape::new(rng.random_range(1..=2), rng.random_range(1..=3), side(rng), side(rng))
}

/// Reduces a tensor-valued op to a scalar with fixed random weights, so that
/// every output coordinate contributes a distinct amount.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let r = tape.constant(weights.clone());
    let prod = tape.mul(y, r)?;
    Ok(tape.sum(prod))
}

/// Names of the ops covered by [`op_suite`], in run order.
pub const SUITE_OPS: &[&str] = &[
    "conv2d_same",
    "conv2d_valid",
    "relu",
    "sigmoid",
    "maxpool2x2",
    "upsample_nearest2x",
    "concat_channels",
    "add",
    "mul",
    "scale",
    "sum",
    "bce_loss",
    "soft_dice_loss",
    "composed",
];

/// Runs `instances` random checks of a single op from [`SUITE_OPS`].
pub fn check_op(op: &str, instances: usize, seed: u64, cfg: &FdConfig) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = CheckResult::default();
    for _ in 0..instances {
        let r = check_op_once(op, &mut rng, cfg)?;
        total.merge(r);
    }
    Ok(total)
}

fn check_op_once(op: &str, rng: &mut ChaCha8Rng, cfg: &FdConfig) -> Result<CheckResult> {
    match op {
        "conv2d_same" | "conv2d_valid" => {
            let s = small_shape(rng, false);
            let padding = if op == "conv2d_same" {
                Padding::Same
            } else {
                Padding::Valid
            };
            let max_k = if padding == Padding::Same {
                5
            } else {
                s.h.min(s.w).min(5)
            };
            let k = 2 * rng.random_range(0..=(max_k - 1) / 2) + 1;
            let co = rng.random_range(1..=3);
            let x = uniform(rng, s, -1.0, 1.0);
            let w = uniform(rng, Shape::new(co, s.c, k, k), -1.0, 1.0);
            let b = uniform(rng, Shape::new(1, co, 1, 1), -1.0, 1.0);
            let (oh, ow) = match padding {
                Padding::Same => (s.h, s.w),
                Padding::Valid => (s.h - k + 1, s.w - k + 1),
            };
            let r = uniform(rng, Shape::new(s.n, co, oh, ow), -1.0, 1.0);
            check(&[x, w, b], cfg, |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], padding)?;
                weighted_sum(t, y, &r)
            })
        }
        "relu" | "sigmoid" | "upsample_nearest2x" | "scale" | "sum" => {
            let s = small_shape(rng, false);
            let (lo, hi) = if op == "sigmoid" { (-4.0, 4.0) } else { (-1.0, 1.0) };
            let x = uniform(rng, s, lo, hi);
            let out_shape = if op == "upsample_nearest2x" {
                Shape::new(s.n, s.c, 2 * s.h, 2 * s.w)
            } else {
                s
            };
            let r = uniform(rng, out_shape, -1.0, 1.0);
            let factor = rng.random_range(-2.0..2.0);
            check(&[x], cfg, |t, v| {
                let y = match op {
                    "relu" => t.relu(v[0]),
                    "sigmoid" => t.sigmoid(v[0]),
                    "upsample_nearest2x" => t.upsample_nearest2x(v[0]),
                    "scale" => t.scale(v[0], factor),
                    _ => return Ok(t.sum(v[0])),
                };
                weighted_sum(t, y, &r)
            })
        }
        "maxpool2x2" => {
            let s = small_shape(rng, true);
            let x = uniform(rng, s, -1.0, 1.0);
            let r = uniform(rng, Shape::new(s.n, s.c, s.h / 2, s.w / 2), -1.0, 1.0);
            check(&[x], cfg, |t, v| {
                let y = t.maxpool2x2(v[0])?;
                weighted_sum(t, y, &r)
            })
        }
        "concat_channels" => {
            let s = small_shape(rng, false);
            let c2 = rng.random_range(1..=3);
            let a = uniform(rng, s, -1.0, 1.0);
            let b = uniform(rng, Shape::new(s.n, c2, s.h, s.w), -1.0, 1.0);
            let r = uniform(rng, Shape::new(s.n, s.c + c2, s.h, s.w), -1.0, 1.0);
            check(&[a, b], cfg, |t, v| {
                let y = t.concat_channels(v[0], v[1])?;
                weighted_sum(t, y, &r)
            })
        }
        "add" | "mul" => {
            let s = small_shape(rng, false);
            let a = uniform(rng, s, -1.0, 1.0);
            let b = uniform(rng, s, -1.0, 1.0);
            let r = uniform(rng, s, -1.0, 1.0);
            check(&[a, b], cfg, |t, v| {
                let y = if op == "add" {
                    t.add(v[0], v[1])?
                } else {
                    t.mul(v[0], v[1])?
                };
                weighted_sum(t, y, &r)
            })
        }
        "bce_loss" | "soft_dice_loss" => {
            let s = small_shape(rng, false);
            let s = Shape::new(s.n, 1, s.h, s.w);
            let p = uniform(rng, s, 0.02, 0.98);
            let truth = binary(rng, s);
            check(&[p], cfg, |t, v| {
                let tr = t.constant(truth.clone());
                if op == "bce_loss" {
                    t.bce_loss(v[0], tr)
                } else {
                    t.soft_dice_loss(v[0], tr)
                }
            })
        }
        "composed" => {
            // conv -> relu -> pool -> upsample -> concat(skip) -> conv -> sigmoid -> both losses
            let n = rng.random_range(1..=2);
            let (h, w) = (2 * rng.random_range(1..=4), 2 * rng.random_range(1..=4));
            let x = uniform(rng, Shape::new(n, 1, h, w), -1.0, 1.0);
            let w1 = uniform(rng, Shape::new(2, 1, 3, 3), -1.0, 1.0);
            let b1 = uniform(rng, Shape::new(1, 2, 1, 1), -0.5, 0.5);
            let w2 = uniform(rng, Shape::new(1, 4, 3, 3), -1.0, 1.0);
            let b2 = uniform(rng, Shape::new(1, 1, 1, 1), -0.5, 0.5);
            let truth = binary(rng, Shape::new(n, 1, h, w));
            check(&[x, w1, b1, w2, b2], cfg, |t, v| {
                let a = t.conv2d(v[0], v[1], v[2], Padding::Same)?;
                let a = t.relu(a);
                let p = t.maxpool2x2(a)?;
                let u = t.upsample_nearest2x(p);
                let c = t.concat_channels(a, u)?;
                let z = t.conv2d(c, v[3], v[4], Padding::Same)?;
                let prob = t.sigmoid(z);
                let tr = t.constant(truth.clone());
                let l1 = t.bce_loss(prob, tr)?;
                let l2 = t.soft_dice_loss(prob, tr)?;
                t.add(l1, l2)
            })
        }
        other => Err(crate::error::SegError::invalid(
            "gradcheck",
            format!("unknown op {other:?}"),
        )),
    }
}

/// Every entry of [`SUITE_OPS`] with `instances` random cases each.
pub fn op_suite(instances: usize, seed: u64, cfg: &FdConfig) -> Result<Vec<(&'static str, CheckResult)>> {
    SUITE_OPS
        .iter()
        .enumerate()
        .map(|(i, &op)| Ok((op, check_op(op, instances, seed.wrapping_add(i as u64 * 7919), cfg)?)))
        .collect()
}

/// Checks the full U-Net plus the combined BCE and soft dice loss, with
/// respect to every parameter and the input image.
pub fn check_unet(config: &UNetConfig, seed: u64, cfg: &FdConfig) -> Result<CheckResult> {
    config.validate()?;
    let model = ModelParams::<f64>::build(*config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (h, w) = config.input_size;
    let x = uniform(&mut rng, Shape::new(1, config.in_channels, h, w), 0.0, 1.0);
    let truth = binary(&mut rng, Shape::new(1, config.out_channels, h, w));
    let mut inputs = vec![x];
    for layer in model.layers() {
        inputs.push(layer.weight.clone());
        // nonzero biases so that no gradient is trivially symmetric
        inputs.push(uniform(&mut rng, layer.bias.shape(), -0.1, 0.1));
    }
    check(&inputs, cfg, |t, v| {
        let params: Vec<(Var, Var)> = v[1..].chunks(2).map(|p| (p[0], p[1])).collect();
        let prob = forward_graph(config, t, &params, v[0])?;
        let tr = t.constant(truth.clone());
        let l1 = t.bce_loss(prob, tr)?;
        let l2 = t.soft_dice_loss(prob, tr)?;
        t.add(l1, l2)
    })
}

/// Depth-1, base-2 U-Net on an 8x8 single-channel input.
pub fn tiny_unet_config() -> UNetConfig {
    UNetConfig {
        depth: 1,
        base_channels: 2,
        convs_per_block: 2,
        kernel_size: 3,
        in_channels: 1,
        out_channels: 1,
        input_size: (8, 8),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        let cfg = FdConfig::default();
        assert_eq!(cfg.relative_error(1.0, 1.0), 0.0);
        assert!((cfg.relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((cfg.relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5, -0.3, 0.8]).unwrap();
        let ok = check(std::slice::from_ref(&x), &FdConfig::default(), |t, v| {
            let y = t.mul(v[0], v[0])?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert!(ok.passed(1e-4), "{ok}");

        // x * stop_gradient(x * x): the tape sees x^2, the true slope is 3x^2
        let bad = check(&[x], &FdConfig::default(), |t, v| {
            let sq = t.value(v[0]).map(|a| a * a);
            let c = t.constant(sq);
            let y = t.mul(v[0], c)?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert!(!bad.passed(1e-4));
        assert!(bad.max_rel_error > 0.5);
    }

    #[test]
    fn kinks_are_skipped() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1e-7, 0.5]).unwrap();
        let r = check(&[x], &FdConfig::default(), |t, v| {
            let y = t.relu(v[0]);
            Ok(t.sum(y))
        })
        .unwrap();
        assert_eq!((r.checked, r.skipped), (1, 1));
        assert!(r.passed(1e-4));
    }

    #[test]
    fn every_suite_op_passes_a_few_instances() {
        let cfg = FdConfig::default();
        for (op, r) in op_suite(3, 11, &cfg).unwrap() {
            assert!(r.passed(cfg.tolerance), "{op}: {r}");
        }
    }
}

//! Training hyperparameters, loss selection and the Adam optimizer.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Result, SegError};
use crate::tensor::{Real, Tensor};
use crate::unet::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    Bce,
    SoftDice,
    #[default]
    BcePlusDice,
}

impl LossKind {
    /// Records the loss on `tape`.
    pub fn build<T: Real>(self, tape: &mut Tape<T>, prob: Var, truth: Var) -> Result<Var> {
        match self {
            LossKind::Bce => tape.bce_loss(prob, truth),
            LossKind::SoftDice => tape.soft_dice_loss(prob, truth),
            LossKind::BcePlusDice => {
                let a = tape.bce_loss(prob, truth)?;
                let b = tape.soft_dice_loss(prob, truth)?;
                tape.add(a, b)
            }
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::SoftDice => "soft_dice",
            LossKind::BcePlusDice => "bce_plus_dice",
        })
    }
}

impl FromStr for LossKind {
    type Err = SegError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "soft_dice" | "dice" => Ok(LossKind::SoftDice),
            "bce_plus_dice" | "bce+dice" => Ok(LossKind::BcePlusDice),
            other => Err(SegError::Config(format!(
                "unknown loss {other:?}; expected bce, soft_dice or bce_plus_dice"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 2,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            loss: LossKind::BcePlusDice,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            problems.push(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SegError::Config(problems.join("; ")))
        }
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments shaped like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { v: m.clone(), m, t: 0 }
    }

    pub fn for_model(params: &ModelParams<T>) -> Self {
        Self::new(params.tensors())
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<T>>,
        grads: &[Tensor<T>],
        config: &TrainConfig,
    ) -> Result<()>
    where
        T: 'a,
    {
        let params: Vec<&mut Tensor<T>> = params.into_iter().collect();
        if params.len() != self.m.len() {
            return Err(SegError::shape(
                "adam_step",
                "parameter count",
                params.len(),
                self.m.len(),
            ));
        }
        if grads.len() != self.m.len() {
            return Err(SegError::shape(
                "adam_step",
                "gradient count",
                grads.len(),
                self.m.len(),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            SegError::check_shape("adam_step", p.shape(), m.shape())?;
            SegError::check_shape("adam_step", g.shape(), p.shape())?;
        }

        self.t += 1;
        let (b1, b2) = (config.adam_beta1, config.adam_beta2);
        let t = self.t as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let (b1t, b2t) = (T::of(b1), T::of(b2));
        let (one_b1, one_b2) = (T::of(1.0 - b1), T::of(1.0 - b2));
        let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
        let (lr, eps) = (T::of(config.learning_rate), T::of(config.adam_eps));

        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = b1t * md[i] + one_b1 * gi;
                vd[i] = b2t * vd[i] + one_b2 * gi * gi;
                let m_hat = md[i] * inv_bc1;
                let v_hat = vd[i] * inv_bc2;
                pd[i] = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam update to every weight and bias of `params`. `grads`
/// follows [`ModelParams::tensors`] order.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    state.update(params.tensors_mut(), grads, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut p = vec![scalar(1.0)];
        let mut st = AdamState::new(&p);
        st.update(p.iter_mut(), &[scalar(0.3)], &cfg).unwrap();
        let delta = p[0].data()[0] - 1.0;
        let expected = -1e-4 * 0.3 / (0.3 + 1e-8);
        assert!((delta - expected).abs() < 1e-15, "{delta}");
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradients_leave_params_alone() {
        let cfg = TrainConfig::default();
        let mut p = vec![Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5, -2.0, 3.0]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::new(&p);
        for _ in 0..10 {
            st.update(p.iter_mut(), &[Tensor::zeros(Shape::new(1, 1, 1, 3))], &cfg)
                .unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn update_opposes_first_moment() {
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            ..Default::default()
        };
        let mut p = vec![Tensor::zeros(Shape::new(1, 1, 1, 4))];
        let mut st = AdamState::new(&p);
        let gs = [[0.5, -0.2, 1.0, -3.0], [0.1, 0.4, -1.0, -3.0], [-0.2, 0.1, 0.3, 2.0]];
        for g in gs {
            let before = p[0].clone();
            let g = Tensor::from_vec(Shape::new(1, 1, 1, 4), g.to_vec()).unwrap();
            st.update(p.iter_mut(), &[g], &cfg).unwrap();
            for i in 0..4 {
                let d = p[0].data()[i] - before.data()[i];
                let m = st.first_moments()[0].data()[i];
                assert!(d * m < 0.0, "step {i}: delta {d}, m {m}");
                assert!(st.second_moments()[0].data()[i] >= 0.0);
            }
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let cfg = TrainConfig::default();
        let mut p = vec![scalar(1.0)];
        let mut st = AdamState::new(&p);
        assert!(st.update(p.iter_mut(), &[], &cfg).is_err());
        let wrong = Tensor::zeros(Shape::new(1, 1, 1, 2));
        assert!(st.update(p.iter_mut(), &[wrong], &cfg).is_err());
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn config_validation_lists_problems() {
        let bad = TrainConfig {
            epochs: 0,
            adam_beta2: 1.0,
            ..Default::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("epochs") && msg.contains("adam_beta2"), "{msg}");
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!("bce_plus_dice".parse::<LossKind>().unwrap(), LossKind::BcePlusDice);
        assert!("l2".parse::<LossKind>().is_err());
    }
}

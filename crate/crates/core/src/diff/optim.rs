//! Adam with L2 weight decay, plus learning-rate schedules.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tensor::{Real, Tensor};
use super::DiffError;

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay * param` (classic L2 form).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates and step counter for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    first: Vec<Option<Tensor<T>>>,
    second: Vec<Option<Tensor<T>>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `config.lr * lr_multiplier`.
    /// Parameters without a gradient, or marked non-trainable, are left alone.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr_multiplier: f64) -> Result<(), DiffError> {
        for (id, g) in grads.iter() {
            if !g.all_finite() {
                return Err(DiffError::NonFiniteGradient {
                    param: store.name(id).to_string(),
                });
            }
        }
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        let lr = c.lr * lr_multiplier;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let wd = T::lit(c.weight_decay);
        let step_size = T::lit(lr / bc1);
        let inv_sqrt_bc2 = T::lit(1.0 / bc2.sqrt());
        let eps = T::lit(c.eps);

        for (id, g) in grads.iter() {
            if !store.is_trainable(id) {
                continue;
            }
            let i = id.index();
            let shape = store.get(id).shape().to_vec();
            let m = self.first[i].get_or_insert_with(|| Tensor::zeros(&shape));
            let v = self.second[i].get_or_insert_with(|| Tensor::zeros(&shape));
            let p = store.get_mut(id);
            if m.shape() != p.shape() || g.shape() != p.shape() {
                return Err(DiffError::Shape {
                    op: "adam",
                    detail: format!("param {:?}, grad {:?}, moment {:?}", p.shape(), g.shape(), m.shape()),
                });
            }
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                let gd = gv + wd * *pv;
                *mv = b1 * *mv + one_b1 * gd;
                *vv = b2 * *vv + one_b2 * gd * gd;
                let denom = vv.sqrt() * inv_sqrt_bc2 + eps;
                *pv -= step_size * *mv / denom;
            }
        }
        Ok(())
    }
}

/// Learning-rate multiplier schedules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear ramp 0 → 1 over `warmup_rate · total_steps`, then linear decay to 0.
    Linear { total_steps: usize, warmup_rate: f64 },
    /// `gamma^(step / period)`.
    Step { gamma: f64, period: usize },
}

impl LrSchedule {
    pub fn multiplier(&self, step: usize) -> Result<f64, DiffError> {
        match *self {
            LrSchedule::Constant => Ok(1.0),
            LrSchedule::Linear {
                total_steps,
                warmup_rate,
            } => {
                if total_steps == 0 {
                    return Err(DiffError::Argument("linear schedule needs total_steps > 0".into()));
                }
                if !(0.0..=1.0).contains(&warmup_rate) {
                    return Err(DiffError::Argument(format!("warmup rate {warmup_rate} outside [0, 1]")));
                }
                let warmup = (warmup_rate * total_steps as f64).floor() as usize;
                if step < warmup {
                    Ok(step as f64 / warmup as f64)
                } else if step >= total_steps {
                    Ok(0.0)
                } else {
                    Ok((total_steps - step) as f64 / (total_steps - warmup) as f64)
                }
            }
            LrSchedule::Step { gamma, period } => {
                if period == 0 {
                    return Err(DiffError::Argument("step schedule needs period > 0".into()));
                }
                Ok(gamma.powi((step / period) as i32))
            }
        }
    }
}

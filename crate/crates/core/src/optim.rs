//! Adam, the cosine learning-rate schedule, and the SAM perturbation.

use std::f64::consts::PI;

use thiserror::Error;

use crate::params::Params;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("shape mismatch between parameters and {0}")]
    ShapeMismatch(&'static str),
    #[error("non-finite gradient at flattened index {0}")]
    NonFiniteGradient(usize),
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid optimizer configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamVariant {
    /// `delta * sign(g)`, the closed form used for the detector.
    Sign,
    /// `delta * g / ||g||_2` over the whole flattened parameter vector.
    L2Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamConfig {
    pub delta: f64,
    pub variant: SamVariant,
}

impl SamConfig {
    pub fn new(delta: f64, variant: SamVariant) -> Result<Self, OptimError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(OptimError::Invalid(format!("delta {delta} must be positive")));
        }
        Ok(Self { delta, variant })
    }
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The SAM ascent direction `epsilon*` for a gradient.
pub fn compute_epsilon(grads: &Params, cfg: &SamConfig) -> Result<Params, OptimError> {
    if let Some(i) = grads.first_non_finite() {
        return Err(OptimError::NonFiniteGradient(i));
    }
    let mut eps = grads.clone();
    match cfg.variant {
        SamVariant::Sign => {
            for t in eps.tensors_mut() {
                t.iter_mut().for_each(|g| *g = cfg.delta * sign(*g));
            }
        }
        SamVariant::L2Normalized => {
            let norm = grads.l2_norm();
            if norm == 0.0 {
                eps.fill(0.0);
            } else {
                let s = cfg.delta / norm;
                for t in eps.tensors_mut() {
                    t.iter_mut().for_each(|g| *g *= s);
                }
            }
        }
    }
    Ok(eps)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first_moment: Params,
    second_moment: Params,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &Params {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Params {
        &self.second_moment
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) -> Result<(), OptimError> {
        if !params.same_shape(grads) {
            return Err(OptimError::ShapeMismatch("gradients"));
        }
        if !params.same_shape(&self.first_moment) {
            return Err(OptimError::ShapeMismatch("optimizer state"));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first_moment.tensors_mut())
            .zip(self.second_moment.tensors_mut());
        for (((p, g), m), v) in tensors {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut Params, grads: &Params, lr: f64) -> Result<(), OptimError> {
    state.step(params, grads, lr)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub total_steps: u64,
    pub kind: ScheduleKind,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, total_steps: u64, kind: ScheduleKind) -> Result<Self, OptimError> {
        if !(initial_lr >= 0.0 && initial_lr.is_finite()) {
            return Err(OptimError::Invalid(format!("learning rate {initial_lr} must be >= 0")));
        }
        Ok(Self {
            initial_lr,
            total_steps,
            kind,
        })
    }

    /// `initial * (1 + cos(pi t / T)) / 2` for cosine; `initial` for constant.
    pub fn lr_at(&self, step: u64) -> Result<f64, OptimError> {
        if step > self.total_steps {
            return Err(OptimError::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        Ok(match self.kind {
            ScheduleKind::Constant => self.initial_lr,
            ScheduleKind::Cosine if self.total_steps == 0 => self.initial_lr,
            ScheduleKind::Cosine => {
                let frac = step as f64 / self.total_steps as f64;
                self.initial_lr * (1.0 + (PI * frac).cos()) / 2.0
            }
        })
    }
}

pub fn lr_at(schedule: &LrSchedule, step: u64) -> Result<f64, OptimError> {
    schedule.lr_at(step)
}

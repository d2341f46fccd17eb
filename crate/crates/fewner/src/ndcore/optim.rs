use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One named parameter update: current value and the gradient for this step.
pub struct ParamUpdate<'a> {
    pub name: &'a str,
    pub value: &'a mut Tensor,
    pub grad: &'a Tensor,
}

/// Adam with L2 regularization applied as a gradient addition
/// (g <- g + l2 * value) before the moment updates.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2: f64,
    t: u64,
    slots: Vec<Slot>,
}

struct Slot {
    name: String,
    m: Tensor,
    v: Tensor,
}

impl Adam {
    pub fn new(lr: f64, l2: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2,
            t: 0,
            slots: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. The parameter list must be presented in the same
    /// order with the same names and shapes on every call; moment slots are
    /// allocated on the first step.
    pub fn step(&mut self, params: &mut [ParamUpdate]) -> Result<()> {
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| Slot {
                    name: p.name.to_string(),
                    m: Tensor::zeros(p.value.rows(), p.value.cols()),
                    v: Tensor::zeros(p.value.rows(), p.value.cols()),
                })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer saw {} params, expected {}",
                params.len(),
                self.slots.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, p) in self.slots.iter_mut().zip(params.iter_mut()) {
            if slot.name != p.name {
                return Err(Error::Contract(format!(
                    "optimizer slot order changed: saw {}, expected {}",
                    p.name, slot.name
                )));
            }
            if p.grad.shape() != p.value.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "{}: grad {:?} vs value {:?}",
                        p.name,
                        p.grad.shape(),
                        p.value.shape()
                    ),
                ));
            }
            if !p.grad.is_all_finite() {
                return Err(Error::non_finite(format!("gradient of {}", p.name)));
            }
            for i in 0..p.value.numel() {
                let g = p.grad.data()[i] + self.l2 * p.value.data()[i];
                let m = self.beta1 * slot.m.data()[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * slot.v.data()[i] + (1.0 - self.beta2) * g * g;
                slot.m.data_mut()[i] = m;
                slot.v.data_mut()[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                p.value.data_mut()[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            if !p.value.is_all_finite() {
                return Err(Error::non_finite(format!("value of {}", p.name)));
            }
        }
        Ok(())
    }
}

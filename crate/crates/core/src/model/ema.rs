//! Exponential moving average of the student parameters, used as sg(θ).

use super::network::CtmParams;
use crate::{CtmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub shadow: CtmParams,
    pub decay: f64,
}

impl EmaState {
    pub fn new(params: &CtmParams, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(CtmError::config(format!("ema decay must lie in [0, 1], got {decay}")));
        }
        Ok(Self {
            shadow: params.clone(),
            decay,
        })
    }

    /// `sg ← μ·sg + (1 − μ)·θ`, in place.
    pub fn update(&mut self, params: &CtmParams) -> Result<()> {
        if params.weights.len() != self.shadow.weights.len() {
            return Err(CtmError::Shape {
                expected: self.shadow.weights.len(),
                actual: params.weights.len(),
            });
        }
        if params.frequencies.len() != self.shadow.frequencies.len() {
            return Err(CtmError::Shape {
                expected: self.shadow.frequencies.len(),
                actual: params.frequencies.len(),
            });
        }
        let mu = self.decay;
        let blend = |s: &mut f64, p: f64| {
            if mu == 1.0 {
                return;
            }
            *s = if mu == 0.0 { p } else { mu * *s + (1.0 - mu) * p };
        };
        for (s, p) in self.shadow.weights.iter_mut().zip(&params.weights) {
            blend(s, *p);
        }
        for (s, p) in self.shadow.frequencies.iter_mut().zip(&params.frequencies) {
            blend(s, *p);
        }
        Ok(())
    }
}

pub fn ema_update(ema: &EmaState, params: &CtmParams) -> Result<EmaState> {
    let mut next = ema.clone();
    next.update(params)?;
    Ok(next)
}

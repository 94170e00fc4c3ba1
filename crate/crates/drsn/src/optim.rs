//! Adam with bias correction over the network's parameter list.

use crate::error::{Error, Result};
use crate::model::SegNetwork;
use crate::scalar::{rf, Real};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the global step
/// counter, aligned with the network's fixed parameter order.
pub struct OptimizerState<R: Real = f64> {
    step: u64,
    moments: Vec<(Vec<R>, Vec<R>)>,
}

impl<R: Real> OptimizerState<R> {
    pub fn new(net: &SegNetwork<R>) -> OptimizerState<R> {
        let mut moments = Vec::new();
        net.visit_params(|p| {
            moments.push((vec![R::zero(); p.values.len()], vec![R::zero(); p.values.len()]));
        });
        OptimizerState { step: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over every parameter, reading the accumulated gradients.
/// Parameters are re-quantized through `f32` after the update so they stay
/// exactly representable in the checkpoint encoding.
pub fn adam_step<R: Real>(
    net: &mut SegNetwork<R>,
    state: &mut OptimizerState<R>,
    hp: &AdamParams,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = rf::<R>(1.0 - hp.beta1.powi(t));
    let bc2 = rf::<R>(1.0 - hp.beta2.powi(t));
    let (b1, b2) = (rf::<R>(hp.beta1), rf::<R>(hp.beta2));
    let (lr, eps) = (rf::<R>(hp.lr), rf::<R>(hp.eps));
    let one = R::one();

    let mut idx = 0usize;
    let mut bad: Option<Error> = None;
    let moments = &mut state.moments;
    net.visit_params_mut(|p| {
        if bad.is_some() {
            return;
        }
        let (m, v) = &mut moments[idx];
        idx += 1;
        if let Some(g) = p.grads.iter().find(|g| !g.is_finite()) {
            bad = Some(Error::Numeric(format!(
                "non-finite gradient {g} in {}",
                p.name
            )));
            return;
        }
        for ((pv, g), (mi, vi)) in p
            .values
            .iter_mut()
            .zip(p.grads.iter())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = b1 * *mi + (one - b1) * *g;
            *vi = b2 * *vi + (one - b2) * *g * *g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pv = (*pv - lr * m_hat / (v_hat.sqrt() + eps)).snap_f32();
        }
    });
    if let Some(e) = bad {
        return Err(e);
    }
    debug_assert_eq!(idx, moments.len());
    Ok(())
}

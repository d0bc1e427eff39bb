//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::ParamSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one slot per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Adam {
            lr,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the gradients stored on `params`. Tensors
    /// without a gradient are left alone. Any non-finite gradient aborts
    /// the step before anything is modified.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Invariant(format!(
                "optimizer has {} slots for {} tensors",
                self.m.len(),
                params.len()
            )));
        }
        for (_, name, t) in params.iter() {
            if let Some(g) = &t.grad {
                if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        op: format!("adam_step: gradient of {name}[{i}]"),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for id in params.ids().collect::<Vec<_>>() {
            let tensor = params.get_mut(id);
            let Some(g) = tensor.grad.take() else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
            tensor.grad = Some(g);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![w]).unwrap());
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.0);
        let mut opt = Adam::new(&p, 0.001);
        p.get_mut(crate::tensor::ParamId(0)).grad = Some(vec![1.0]);
        opt.step(&mut p).unwrap();
        let w = p.get(crate::tensor::ParamId(0)).data()[0];
        assert!((w + 0.001).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_no_op() {
        let mut p = single(0.5);
        let mut opt = Adam::new(&p, 0.001);
        p.zero_grads();
        opt.step(&mut p).unwrap();
        assert_eq!(p.get(crate::tensor::ParamId(0)).data()[0], 0.5);
    }

    #[test]
    fn converges_on_quadratic() {
        let id = crate::tensor::ParamId(0);
        let mut p = single(0.0);
        let mut opt = Adam::new(&p, 0.1);
        for _ in 0..100 {
            let w = p.get(id).data()[0];
            p.get_mut(id).grad = Some(vec![2.0 * (w - 3.0)]);
            opt.step(&mut p).unwrap();
        }
        assert!((p.get(id).data()[0] - 3.0).abs() < 0.1);
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let id = crate::tensor::ParamId(0);
        let mut p = single(1.0);
        let mut opt = Adam::new(&p, 0.1);
        p.get_mut(id).grad = Some(vec![f64::NAN]);
        assert!(matches!(opt.step(&mut p), Err(Error::NonFinite { .. })));
        assert_eq!(p.get(id).data()[0], 1.0);
        assert_eq!(opt.step, 0);
    }
}

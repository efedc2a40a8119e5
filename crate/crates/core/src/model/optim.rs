use super::bundle::ParamSpec;
use super::TrainConfig;
use crate::tensor::{Scalar, Tensor};

/// AdamW moments and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub step: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
        }
    }

    /// One AdamW update with decoupled weight decay on `decay` parameters.
    /// Parameters without a gradient are left untouched (moments included).
    pub fn update(&mut self, params: &mut [Tensor<S>], specs: &[ParamSpec], grads: &[Option<Vec<S>>], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = S::from_f64(1.0 - b1.powi(t));
        let c2 = S::from_f64(1.0 - b2.powi(t));
        let (b1, b2) = (S::from_f64(b1), S::from_f64(b2));
        let one = S::one();
        let lr_s = S::from_f64(lr);
        let eps = S::from_f64(cfg.adam_eps);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let shrink = if specs[i].decay { S::from_f64(1.0 - lr * cfg.weight_decay) } else { one };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w = *w * shrink - lr_s * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Global L2 norm of all gradients.
pub fn global_norm<S: Scalar>(grads: &[Option<Vec<S>>]) -> f64 {
    grads.iter().flatten().flat_map(|g| g.iter()).map(|&x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global<S: Scalar>(grads: &mut [Option<Vec<S>>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = S::from_f64(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(decay: bool) -> ParamSpec {
        ParamSpec { name: "w".into(), shape: vec![2], decay }
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![Tensor::<f64>::from_f64(&[2], &[1.0, -1.0]).unwrap()];
        let mut st = AdamState::new(&p);
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        st.update(&mut p, &[spec(false)], &[Some(vec![0.3, -2.0])], 0.01, &cfg);
        // bias-corrected first step is g / (|g| + eps)
        assert!((p[0].data()[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((p[0].data()[1] - (-1.0 + 0.01)).abs() < 1e-9);
    }

    #[test]
    fn decay_is_decoupled_and_selective() {
        let cfg = TrainConfig::default();
        for (decay, want) in [(true, 2.0 * (1.0 - 0.5 * 0.1)), (false, 2.0)] {
            let mut p = vec![Tensor::<f64>::from_f64(&[2], &[2.0, 2.0]).unwrap()];
            let mut st = AdamState::new(&p);
            st.update(&mut p, &[spec(decay)], &[Some(vec![0.0, 0.0])], 0.5, &cfg);
            assert!((p[0].data()[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![Some(vec![3.0f64, 0.0]), None, Some(vec![4.0])];
        assert_eq!(clip_global(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let mut small = vec![Some(vec![0.1f64])];
        clip_global(&mut small, 1.0);
        assert_eq!(small[0].as_ref().unwrap()[0], 0.1);
    }
}

//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::Params;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Params,
    pub v: Params,
    /// Updates applied so far.
    pub step: u64,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &Params) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.lr;
        let eps = self.eps;
        let blobs = params
            .blobs_mut()
            .into_iter()
            .zip(grads.blobs())
            .zip(self.m.blobs_mut().into_iter().zip(self.v.blobs_mut()));
        for ((p, g), (m, v)) in blobs {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::{Activation, AggregatorKind, AggregatorParams};
    use crate::tensor::Mat;

    fn scalar(x: f64) -> Params {
        let agg = AggregatorParams::identity(AggregatorKind::LightGcn, Activation::Identity, 1, 1);
        Params {
            embeddings: Mat::from_vec(1, 1, vec![x]),
            user_fields: vec![],
            item_fields: vec![],
            within: agg.clone(),
            across: agg,
            mlp: vec![],
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(1.0);
        let mut opt = Adam::new(&p, 0.01);
        opt.update(&mut p, &scalar(3.0));
        // bias-corrected first step is lr * sign(g) up to eps
        assert!((p.embeddings[(0, 0)] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = scalar(5.0);
        let mut opt = Adam::new(&p, 0.1);
        for _ in 0..500 {
            let g = scalar(2.0 * (p.embeddings[(0, 0)] - 2.0));
            opt.update(&mut p, &g);
        }
        assert!((p.embeddings[(0, 0)] - 2.0).abs() < 1e-2);
    }
}

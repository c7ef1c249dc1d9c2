use crate::autodiff::{Gradients, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one model. Updates minimize the negated objective, so
/// [`OptimizerState::ascend`] takes an uphill gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, a)| vec![0.0; a.len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn matches(&self, params: &ParamStore) -> bool {
        self.first.len() == params.len()
            && params
                .iter()
                .zip(self.first.iter().zip(&self.second))
                .all(|((_, a), (m, v))| m.len() == a.len() && v.len() == a.len())
    }

    pub fn ascend(&mut self, params: &mut ParamStore, gradient: &Gradients) -> Result<()> {
        if !self.matches(params) || gradient.len() != params.len() {
            return Err(Error::InvalidArgument("optimizer state does not match the parameters".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = gradient.by_index(i).data();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, theta) in params.values_mut(i).iter_mut().enumerate() {
                let loss_grad = -g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * loss_grad;
                v[j] = beta2 * v[j] + (1.0 - beta2) * loss_grad * loss_grad;
                *theta -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Array, Graph};

    #[test]
    fn first_step_moves_by_lr_against_the_loss() {
        let mut store = ParamStore::new();
        store.insert("w", Array::row(vec![1.0, -2.0]).unwrap()).unwrap();
        let mut opt = OptimizerState::new(&store, AdamConfig::default());
        let mut grad = store.zero_gradients();
        grad.arrays_mut()[0].data_mut().copy_from_slice(&[3.0, -0.5]);
        opt.ascend(&mut store, &grad).unwrap();
        let w = store.by_index(0).data();
        assert!((w[0] - 1.001).abs() < 1e-9);
        assert!((w[1] + 2.001).abs() < 1e-9);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn maximizes_a_concave_objective() {
        let mut store = ParamStore::new();
        store.insert("x", Array::scalar(0.0).unwrap()).unwrap();
        let mut opt = OptimizerState::new(
            &store,
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
        );
        for _ in 0..2000 {
            // objective -(x - 3)^2
            let grad = {
                let mut g = Graph::with_params(&store);
                let x = g.param("x").unwrap();
                let c = g.input(Array::scalar(-3.0).unwrap());
                let d = g.add(x, c).unwrap();
                let sq = g.mul(d, d).unwrap();
                let obj = g.scale(sq, -1.0).unwrap();
                g.backward(obj).unwrap()
            };
            opt.ascend(&mut store, &grad).unwrap();
        }
        assert!((store.by_index(0).data()[0] - 3.0).abs() < 1e-3);
    }
}

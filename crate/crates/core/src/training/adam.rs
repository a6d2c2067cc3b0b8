//! Adam with bias correction.

use autograd::Tensor;
use indexmap::IndexMap;

use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every parameter named in `grads`, in `grads` order.
    pub fn step(&mut self, params: &mut ParamStore, grads: &IndexMap<String, Tensor>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter `{name}`"));
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            for (((pi, mi), vi), gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]));
        let mut g = IndexMap::new();
        g.insert("w".to_string(), Tensor::new(&[3], vec![4.0, -0.001, 0.0]));
        let mut opt = Adam::new(0.1, 0.9, 0.99);
        opt.step(&mut p, &g);
        let w = p.get("w").unwrap().data();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        assert!((w[0] - (1.0 - 0.1 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
        assert!((w[1] - (-2.0 + 0.1 * 0.001 / (0.001 + 1e-8))).abs() < 1e-15);
        assert_eq!(w[2], 0.5);
    }
}

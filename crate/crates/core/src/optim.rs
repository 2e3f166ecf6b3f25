//! ADAM optimizer.

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// One bias-corrected update of every trainable parameter, then clears gradients.
    ///
    /// Fails without touching any value if a trainable parameter has no gradient.
    pub fn step(&self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if let Some((_, p)) = store
            .iter()
            .find(|(_, p)| p.kind == ParamKind::Trainable && p.grad.is_none())
        {
            return Err(Error::State(format!("parameter `{}` has no gradient", p.name)));
        }
        for p in store.iter_mut() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let grad = p.grad.take().expect("checked above");
            p.step += 1;
            let t = p.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let m = p.first_moment.data_mut();
            let v = p.second_moment.data_mut();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let g = grad.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    fn single(value: Vec<f64>) -> (ParamStore, crate::params::ParamId) {
        let mut store = ParamStore::new();
        let n = value.len();
        let id = store
            .register("w", ParamKind::Trainable, Tensor::new(&[n], value).unwrap())
            .unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_values_and_counts_step() {
        let (mut store, id) = single(vec![1.5, -2.0]);
        store.get_mut(id).grad = Some(Tensor::zeros(&[2]));
        Adam::default().step(&mut store, 0.01).unwrap();
        assert_eq!(store.get(id).value.data(), &[1.5, -2.0]);
        assert_eq!(store.get(id).step, 1);
        assert!(store.get(id).grad.is_none());
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let (mut store, id) = single(vec![1.0]);
        assert!(matches!(Adam::default().step(&mut store, 0.01), Err(Error::State(_))));
        assert_eq!(store.get(id).step, 0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g² after bias correction, so |Δw| = lr·|g|/(|g|+ε) ≈ lr.
        for g in [3.0, -0.02, 150.0] {
            let (mut store, id) = single(vec![0.0]);
            store.get_mut(id).grad = Some(Tensor::new(&[1], vec![g]).unwrap());
            Adam::default().step(&mut store, 0.01).unwrap();
            let delta = store.get(id).value.data()[0];
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-15, "g={g}: {delta} vs {expected}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let (mut store, id) = single(vec![0.5, -0.4, 0.3]);
        let start = store.get(id).value.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let adam = Adam::default();
        let mut norms = Vec::new();
        for _ in 0..200 {
            let mut g = Graph::new();
            let w = g.param(&store, id);
            let sq = g.mul(w, w).unwrap();
            let loss = g.sum(sq).unwrap();
            g.backward(loss).unwrap();
            store.absorb(&mut g).unwrap();
            adam.step(&mut store, 0.01).unwrap();
            norms.push(store.get(id).value.data().iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        // Monotone descent through the warm-up phase while far from the minimum.
        let warm = 5;
        for w in norms[warm..40].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
        let end = *norms.last().unwrap();
        assert!(end < 1e-2 * start, "end {end} start {start}");
    }
}

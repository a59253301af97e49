use ndarray::Array2;

use crate::autograd::{Gradients, ParamStore};

/// Adam with a fixed learning rate. Parameters without a gradient in a step
/// are left untouched, moments included.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    state: Vec<Option<Moments>>,
}

#[derive(Debug, Clone)]
struct Moments {
    step: i32,
    m: Array2<f64>,
    v: Array2<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            state: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        for (id, grad) in grads.params() {
            if self.state.len() <= id.0 {
                self.state.resize(id.0 + 1, None);
            }
            let st = self.state[id.0].get_or_insert_with(|| Moments {
                step: 0,
                m: Array2::zeros(grad.dim()),
                v: Array2::zeros(grad.dim()),
            });
            st.step += 1;
            let (b1, b2) = (self.beta1, self.beta2);
            st.m.zip_mut_with(grad, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            st.v.zip_mut_with(grad, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let c1 = 1.0 - b1.powi(st.step);
            let c2 = 1.0 - b2.powi(st.step);
            let (lr, eps) = (self.learning_rate, self.epsilon);
            let p = params.get_mut(id);
            ndarray::Zip::from(p).and(&st.m).and(&st.v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[1.0, -2.0]]);
        let b = store.add("b", array![[5.0]]);
        let grads = {
            let mut g = Graph::new(&store);
            let x = g.param(a);
            let _ = g.param(b);
            let s = g.mul(x, x);
            let s = g.sum(s);
            g.backward(s)
        };
        let mut opt = Adam::new(0.1);
        opt.step(&mut store, &grads);
        let got = store.get(a);
        assert!((got[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((got[[0, 1]] + 1.9).abs() < 1e-6);
        assert_eq!(store.get(b)[[0, 0]], 5.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[3.0, -4.0]]);
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let grads = {
                let mut g = Graph::new(&store);
                let x = g.param(a);
                let s = g.mul(x, x);
                let s = g.sum(s);
                g.backward(s)
            };
            opt.step(&mut store, &grads);
        }
        assert!(store.get(a).iter().all(|v| v.abs() < 1e-2));
    }
}

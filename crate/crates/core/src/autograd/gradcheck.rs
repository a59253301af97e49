//! Central finite-difference checking of [`Graph`](super::Graph) gradients.

use ndarray::Array2;

use super::{Graph, ParamId, ParamStore, Var};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Per input: `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub analytic: Vec<Array2<f64>>,
    pub numeric: Vec<Array2<f64>>,
}

pub const DEFAULT_STEP: f64 = 1e-5;

/// Checks the gradient of the scalar built by `build` with respect to every input.
pub fn check_gradients<F>(inputs: &[Array2<f64>], build: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    check_gradients_with_step(inputs, DEFAULT_STEP, build)
}

pub fn check_gradients_with_step<F>(inputs: &[Array2<f64>], step: f64, build: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| store.add(format!("input{i}"), x.clone()))
        .collect();
    let evaluate = |store: &ParamStore| -> f64 {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let out = build(&mut g, &vars);
        g.scalar(out)
    };

    let analytic: Vec<Array2<f64>> = {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let out = build(&mut g, &vars);
        let grads = g.backward(out);
        ids.iter()
            .zip(inputs)
            .map(|(&id, x)| grads.param(id).cloned().unwrap_or_else(|| Array2::zeros(x.dim())))
            .collect()
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    for (&id, x) in ids.iter().zip(inputs) {
        let mut grad = Array2::zeros(x.dim());
        for ((r, c), &orig) in x.indexed_iter() {
            store.get_mut(id)[[r, c]] = orig + step;
            let plus = evaluate(&store);
            store.get_mut(id)[[r, c]] = orig - step;
            let minus = evaluate(&store);
            store.get_mut(id)[[r, c]] = orig;
            grad[[r, c]] = (plus - minus) / (2.0 * step);
        }
        numeric.push(grad);
    }

    let relative_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .collect();
    let max_relative_error = relative_errors.iter().copied().fold(0.0, f64::max);
    GradCheckReport {
        relative_errors,
        max_relative_error,
        analytic,
        numeric,
    }
}

/// Norm-wise relative error; two all-zero gradients compare equal.
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&(a - b));
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

//! Central finite-difference oracle for gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xconv::graph::{Graph, NodeId};
use xconv::{ParamKind, ParamStore, Result, Tensor};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// Norm of a gradient below which the comparison becomes absolute: tensors
/// whose gradient vanishes structurally (a shift feeding another batch norm)
/// would otherwise compare rounding noise against rounding noise.
pub const FLOOR: f64 = 1e-4;

/// `‖a − n‖ / max(‖a‖ + ‖n‖, FLOOR)`.
pub fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(n).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()) + norm(&mut n.iter().copied());
    diff / scale.max(FLOOR)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces `out` to a scalar with fixed pseudo-random weights so every output
/// entry contributes a distinct sensitivity.
pub fn weighted_sum(g: &mut Graph, out: NodeId, seed: u64) -> Result<NodeId> {
    let shape = g.value(out).shape().to_vec();
    let w = random_tensor(&shape, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    g.sum(p)
}

pub type Build<'a> = dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + 'a;

/// Largest relative error between backprop and central differences over all inputs.
pub fn input_grad_error(inputs: &[Tensor], build: &Build) -> Result<f64> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| g.grad(id).map_or_else(|| vec![0.0; g.value(id).len()], |t| t.data().to_vec()))
        .collect();
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.variable(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; t.len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            *n = (eval(&plus)? - eval(&minus)?) / (2.0 * H);
        }
        worst = worst.max(rel_error(&analytic[i], &numeric));
    }
    Ok(worst)
}

pub type ParamBuild<'a> = dyn Fn(&mut Graph, &ParamStore) -> Result<NodeId> + 'a;

/// Largest per-parameter relative error between backprop and central
/// differences over every trainable tensor in `store`.
pub fn param_grad_error(store: &mut ParamStore, build: &ParamBuild) -> Result<f64> {
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss)?;
    let analytic: Vec<_> = g.param_grads().into_iter().map(|(id, t)| (id, t.data().to_vec())).collect();
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Trainable)
        .map(|(id, _)| id)
        .collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let len = store.get(id).value.len();
        let mut numeric = vec![0.0; len];
        for (j, n) in numeric.iter_mut().enumerate() {
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + H;
            let mut gp = Graph::new();
            let lp = build(&mut gp, store)?;
            let fp = gp.value(lp).item();
            store.get_mut(id).value.data_mut()[j] = orig - H;
            let mut gm = Graph::new();
            let lm = build(&mut gm, store)?;
            let fm = gm.value(lm).item();
            store.get_mut(id).value.data_mut()[j] = orig;
            *n = (fp - fm) / (2.0 * H);
        }
        let a = analytic
            .iter()
            .find(|(pid, _)| *pid == id)
            .map_or_else(|| vec![0.0; len], |(_, v)| v.clone());
        worst = worst.max(rel_error(&a, &numeric));
    }
    Ok(worst)
}

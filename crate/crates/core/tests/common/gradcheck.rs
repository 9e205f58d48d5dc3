//! Central finite-difference oracle in f64.
//!
//! `build` maps leaf inputs to some output node; the checked scalar is
//! `sum(output ⊙ probe)` for a fixed random probe, so every output element
//! contributes with a distinct weight.

use rand::Rng;
use regionfer::{Graph, ParamStore, Shape, Tensor, Var};

pub const EPSILON: f64 = 1e-3;
pub const MAX_REL_ERROR: f64 = 1e-4;
/// Components whose analytic and numeric gradients are both below this
/// magnitude are compared absolutely against it.
const FLOOR: f64 = 1e-6;

pub struct Report {
    pub max_rel: f64,
    pub checked: usize,
}

fn scalar_loss<F>(build: &F, inputs: &[Tensor<f64>], probe: &Tensor<f64>) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
}

pub fn check<F, R>(build: F, inputs: Vec<Tensor<f64>>, rng: &mut R) -> Report
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
    R: Rng,
{
    // Analytic pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars);
    let out_shape: Shape = g.shape(out);
    let probe = Tensor::<f64>::uniform(out_shape, -1.0, 1.0, rng);
    let weighted = g.mul_const(out, probe.clone()).unwrap();
    let root = g.sum(weighted);
    let mut store = ParamStore::new();
    g.backward(root, &mut store).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect();

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += EPSILON;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= EPSILON;
            let numeric = (scalar_loss(&build, &plus, &probe) - scalar_loss(&build, &minus, &probe)) / (2.0 * EPSILON);
            let a = analytic[i].data()[j];
            let denom = a.abs().max(numeric.abs()).max(FLOOR);
            max_rel = max_rel.max((a - numeric).abs() / denom);
            checked += 1;
        }
    }
    Report { max_rel, checked }
}

/// Values at 1e-1 scale kept at least `gap` away from zero, so kinks at
/// zero are never straddled by the finite difference.
pub fn away_from_zero<R: Rng>(shape: Shape, gap: f64, rng: &mut R) -> Tensor<f64> {
    let data = (0..shape.len())
        .map(|_| loop {
            let v: f64 = rng.random_range(-0.1..0.1);
            if v.abs() > gap {
                break v;
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Values at 1e-1 scale whose 2×2 pooling windows have a unique maximum
/// separated from the runner-up by more than `gap`.
pub fn distinct_windows<R: Rng>(shape: Shape, gap: f64, rng: &mut R) -> Tensor<f64> {
    loop {
        let t = Tensor::<f64>::uniform(shape, -0.1, 0.1, rng);
        let mut ok = true;
        'outer: for plane in 0..shape.n * shape.c {
            for oy in 0..shape.h / 2 {
                for ox in 0..shape.w / 2 {
                    let base = plane * shape.plane() + 2 * oy * shape.w + 2 * ox;
                    let mut cells = [
                        t.data()[base],
                        t.data()[base + 1],
                        t.data()[base + shape.w],
                        t.data()[base + shape.w + 1],
                    ];
                    cells.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    if cells[0] - cells[1] <= gap {
                        ok = false;
                        break 'outer;
                    }
                }
            }
        }
        if ok {
            return t;
        }
    }
}

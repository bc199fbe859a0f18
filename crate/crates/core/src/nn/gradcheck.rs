//! Central finite-difference verification of every layer's backward pass.
//!
//! Runs entirely in `f64` on small randomized tensors. Each case reduces the
//! layer output to a scalar through a fixed random projection, so every
//! output element receives a distinct upstream gradient.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{BnStats, Graph, Mode, Var};
use super::ops::PoolSpec;
use super::param::ParamStore;
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerCase {
    Conv3x3,
    Conv1x4,
    Conv1x1,
    BatchNorm,
    Relu,
    MaxPool,
    MaxPoolSame,
    GlobalMaxPool,
    Dense,
    SoftmaxKl,
    Concat,
    Add,
    L2,
}

impl LayerCase {
    pub const ALL: [LayerCase; 13] = [
        LayerCase::Conv3x3,
        LayerCase::Conv1x4,
        LayerCase::Conv1x1,
        LayerCase::BatchNorm,
        LayerCase::Relu,
        LayerCase::MaxPool,
        LayerCase::MaxPoolSame,
        LayerCase::GlobalMaxPool,
        LayerCase::Dense,
        LayerCase::SoftmaxKl,
        LayerCase::Concat,
        LayerCase::Add,
        LayerCase::L2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerCase::Conv3x3 => "conv2d[3x3]",
            LayerCase::Conv1x4 => "conv2d[1x4]",
            LayerCase::Conv1x1 => "conv2d[1x1]",
            LayerCase::BatchNorm => "batchnorm",
            LayerCase::Relu => "relu",
            LayerCase::MaxPool => "maxpool[2x2,ceil]",
            LayerCase::MaxPoolSame => "maxpool[3x3,same]",
            LayerCase::GlobalMaxPool => "global_maxpool",
            LayerCase::Dense => "dense",
            LayerCase::SoftmaxKl => "softmax+kl",
            LayerCase::Concat => "concat",
            LayerCase::Add => "add",
            LayerCase::L2 => "l2_penalty",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOutcome {
    pub layer: &'static str,
    pub seeds: usize,
    pub worst_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst_rel_error < self.tolerance
    }
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Values bounded away from zero, so relu has no kink within `h`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(rng, shape, 0.05, 1.0);
    t.data_mut().iter_mut().for_each(|v| {
        if rng.gen::<bool>() {
            *v = -*v
        }
    });
    t
}

/// Distinct values spaced 0.05 apart, so every max has a clear winner.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).expect("shape")
}

fn random_simplex_rows(rng: &mut ChaCha8Rng, rows: usize, c: usize) -> Tensor<f64> {
    let mut v = Vec::with_capacity(rows * c);
    for r in 0..rows {
        let mut row: Vec<f64> = (0..c).map(|_| rng.gen_range(0.05..1.0)).collect();
        if r == 0 {
            row[0] = 0.0;
        }
        let s: f64 = row.iter().sum();
        v.extend(row.into_iter().map(|x| x / s));
    }
    Tensor::new(&[rows, c], v).expect("shape")
}

/// Builds a scalar from leaf inputs and parameters.
type BuildFn = Box<dyn Fn(&mut Graph<f64>, &[Var], &[Var]) -> Result<Var, NnError>>;

struct Case {
    leaves: Vec<Tensor<f64>>,
    store: ParamStore<f64>,
    build: BuildFn,
}

fn projected(g: &mut Graph<f64>, y: Var, proj: &Tensor<f64>) -> Result<Var, NnError> {
    let n = g.value(y).len();
    let flat = g.reshape(y, &[1, n])?;
    let w = g.input(proj.clone().reshape(&[n, 1])?);
    g.dense(flat, w, None)
}

fn make_case(kind: LayerCase, rng: &mut ChaCha8Rng) -> Result<Case, NnError> {
    let mut store = ParamStore::new();
    let case = match kind {
        LayerCase::Conv3x3 | LayerCase::Conv1x4 | LayerCase::Conv1x1 => {
            let (kh, kw, h, w) = match kind {
                LayerCase::Conv3x3 => (3, 3, 5, 5),
                LayerCase::Conv1x4 => (1, 4, 4, 6),
                _ => (1, 1, 4, 4),
            };
            let x = uniform(rng, &[1, h, w, 2], -1.0, 1.0);
            store.add_param("w", uniform(rng, &[kh, kw, 2, 3], -1.0, 1.0), true)?;
            store.add_param("b", uniform(rng, &[3], -0.5, 0.5), false)?;
            let proj = uniform(rng, &[1, h, w, 3], -1.0, 1.0);
            Case {
                leaves: vec![x],
                store,
                build: Box::new(move |g, l, p| {
                    let y = g.conv2d(l[0], p[0], Some(p[1]))?;
                    projected(g, y, &proj)
                }),
            }
        }
        LayerCase::BatchNorm => {
            let x = uniform(rng, &[2, 3, 3, 3], -2.0, 2.0);
            store.add_param("gamma", uniform(rng, &[3], 0.5, 1.5), false)?;
            store.add_param("beta", uniform(rng, &[3], -0.5, 0.5), false)?;
            let mean = store.add_buffer("rm", Tensor::zeros(&[3]))?;
            let var = store.add_buffer("rv", Tensor::full(&[3], 1.0))?;
            let proj = uniform(rng, &[2, 3, 3, 3], -1.0, 1.0);
            Case {
                leaves: vec![x],
                store,
                build: Box::new(move |g, l, p| {
                    let y = g.batchnorm(l[0], p[0], p[1], BnStats { mean, var })?;
                    projected(g, y, &proj)
                }),
            }
        }
        LayerCase::Relu => {
            let x = away_from_zero(rng, &[2, 4, 4, 3]);
            let proj = uniform(rng, &[2, 4, 4, 3], -1.0, 1.0);
            Case {
                leaves: vec![x],
                store,
                build: Box::new(move |g, l, _| {
                    let y = g.relu(l[0]);
                    projected(g, y, &proj)
                }),
            }
        }
        LayerCase::MaxPool | LayerCase::MaxPoolSame => {
            let spec = if kind == LayerCase::MaxPool { PoolSpec::HALVE } else { PoolSpec::SAME3 };
            let x = distinct(rng, &[1, 5, 7, 2]);
            let (oh, ow) = spec.output_hw(5, 7);
            let proj = uniform(rng, &[1, oh, ow, 2], -1.0, 1.0);
            Case {
                leaves: vec![x],
                store,
                build: Box::new(move |g, l, _| {
                    let y = g.maxpool2d(l[0], spec)?;
                    projected(g, y, &proj)
                }),
            }
        }
        LayerCase::GlobalMaxPool => {
            let x = distinct(rng, &[2, 4, 5, 3]);
            let proj = uniform(rng, &[2, 3], -1.0, 1.0);
            Case {
                leaves: vec![x],
                store,
                build: Box::new(move |g, l, _| {
                    let y = g.global_maxpool(l[0])?;
                    projected(g, y, &proj)
                }),
            }
        }
        LayerCase::Dense => {
            let x = uniform(rng, &[3, 5], -1.0, 1.0);
            store.add_param("w", uniform(rng, &[5, 4], -1.0, 1.0), true)?;
            store.add_param("b", uniform(rng, &[4], -0.5, 0.5), false)?;
            let proj = uniform(rng, &[3, 4], -1.0, 1.0);
            Case {
                leaves: vec![x],
                store,
                build: Box::new(move |g, l, p| {
                    let y = g.dense(l[0], p[0], Some(p[1]))?;
                    projected(g, y, &proj)
                }),
            }
        }
        LayerCase::SoftmaxKl => {
            let z = uniform(rng, &[3, 4], -2.0, 2.0);
            let target = random_simplex_rows(rng, 3, 4);
            Case {
                leaves: vec![z],
                store,
                build: Box::new(move |g, l, _| {
                    let p = g.softmax(l[0]);
                    g.kl_div(p, &target)
                }),
            }
        }
        LayerCase::Concat => {
            let a = uniform(rng, &[2, 2, 3], -1.0, 1.0);
            let b = uniform(rng, &[2, 2, 2], -1.0, 1.0);
            let proj = uniform(rng, &[2, 2, 5], -1.0, 1.0);
            Case {
                leaves: vec![a, b],
                store,
                build: Box::new(move |g, l, _| {
                    let y = g.concat(&[l[0], l[1]])?;
                    projected(g, y, &proj)
                }),
            }
        }
        LayerCase::Add => {
            let a = uniform(rng, &[2, 3, 2], -1.0, 1.0);
            let b = uniform(rng, &[2, 3, 2], -1.0, 1.0);
            let proj = uniform(rng, &[2, 3, 2], -1.0, 1.0);
            Case {
                leaves: vec![a, b],
                store,
                build: Box::new(move |g, l, _| {
                    let y = g.add(l[0], l[1])?;
                    projected(g, y, &proj)
                }),
            }
        }
        LayerCase::L2 => {
            store.add_param("w1", uniform(rng, &[3, 4], -1.0, 1.0), true)?;
            store.add_param("w2", uniform(rng, &[5], -1.0, 1.0), true)?;
            Case { leaves: vec![], store, build: Box::new(|g, _, p| Ok(g.l2_penalty(p, 0.37))) }
        }
    };
    Ok(case)
}

fn evaluate(case: &Case, store: &ParamStore<f64>, leaves: &[Tensor<f64>]) -> Result<f64, NnError> {
    let mut g = Graph::new(store, Mode::Train);
    let l: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone())).collect();
    let p: Vec<Var> = store.param_ids().map(|id| g.param(id)).collect();
    let loss = (case.build)(&mut g, &l, &p)?;
    Ok(g.value(loss).data()[0])
}

/// Relative error between analytic and central-difference gradients of one
/// randomized case, over every leaf and parameter.
pub fn check_case(kind: LayerCase, seed: u64, h: f64) -> Result<f64, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let case = make_case(kind, &mut rng)?;

    let mut analytic = Vec::new();
    {
        let mut g = Graph::new(&case.store, Mode::Train);
        let l: Vec<Var> = case.leaves.iter().map(|t| g.leaf(t.clone())).collect();
        let p: Vec<Var> = case.store.param_ids().map(|id| g.param(id)).collect();
        let loss = (case.build)(&mut g, &l, &p)?;
        let grads = g.backward(loss);
        for (v, t) in l.iter().zip(&case.leaves) {
            analytic.extend_from_slice(grads.wrt(*v).unwrap_or(&vec![0.0; t.len()]));
        }
        let mut by_param = vec![None; case.store.params().len()];
        for (id, gr) in grads.params() {
            by_param[id.0] = Some(gr.clone());
        }
        for (i, p) in case.store.params().iter().enumerate() {
            analytic.extend(by_param[i].take().unwrap_or_else(|| vec![0.0; p.value.len()]));
        }
    }

    let mut numeric = Vec::with_capacity(analytic.len());
    for li in 0..case.leaves.len() {
        for e in 0..case.leaves[li].len() {
            let mut plus = case.leaves.clone();
            plus[li].data_mut()[e] += h;
            let mut minus = case.leaves.clone();
            minus[li].data_mut()[e] -= h;
            numeric.push((evaluate(&case, &case.store, &plus)? - evaluate(&case, &case.store, &minus)?) / (2.0 * h));
        }
    }
    for pi in 0..case.store.params().len() {
        for e in 0..case.store.params()[pi].value.len() {
            let mut plus = case.store.clone();
            plus.params_mut()[pi].value.data_mut()[e] += h;
            let mut minus = case.store.clone();
            minus.params_mut()[pi].value.data_mut()[e] -= h;
            numeric.push((evaluate(&case, &plus, &case.leaves)? - evaluate(&case, &minus, &case.leaves)?) / (2.0 * h));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Checks every layer over `seeds` randomized cases.
pub fn run_suite(seeds: usize, h: f64, tolerance: f64) -> Result<Vec<GradCheckOutcome>, NnError> {
    LayerCase::ALL
        .iter()
        .map(|&kind| {
            let mut worst = 0.0f64;
            for s in 0..seeds {
                worst = worst.max(check_case(kind, s as u64, h)?);
            }
            Ok(GradCheckOutcome { layer: kind.name(), seeds, worst_rel_error: worst, tolerance })
        })
        .collect()
}

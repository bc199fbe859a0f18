//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] borrows the parameter store for one forward pass, records
//! every operation on a tape, and [`Graph::backward`] walks the tape in
//! reverse to produce gradients for parameters and leaf inputs.

use rand::Rng;

use super::ops::{self, PoolSpec};
use super::param::{BufferId, ParamId, ParamStore};
use super::scalar::Real;
use super::tensor::Tensor;
use super::NnError;

/// Batchnorm variance epsilon.
pub const BN_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a value recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Running-statistics buffers of one batchnorm layer.
#[derive(Debug, Clone, Copy)]
pub struct BnStats {
    pub mean: BufferId,
    pub var: BufferId,
}

/// Batch statistics observed in train mode, to be folded into the running
/// buffers once the step completes.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub stats: BnStats,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op<T: Real> {
    Input { requires_grad: bool },
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Option<Var> },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Relu { x: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    Dense { x: Var, w: Var, b: Option<Var> },
    Dropout { x: Var, mask: Vec<T> },
    Softmax { x: Var },
    Concat { xs: Vec<Var> },
    Add { a: Var, b: Var },
    Reshape { x: Var },
    KlDiv { pred: Var, target: Vec<T> },
    L2 { params: Vec<Var>, lambda: T },
}

struct Node<T: Real> {
    value: Option<Tensor<T>>,
    op: Op<T>,
}

pub struct Graph<'a, T: Real> {
    store: &'a ParamStore<T>,
    nodes: Vec<Node<T>>,
    mode: Mode,
    bn_updates: Vec<BnUpdate>,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a recorded value, if it received any.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &[(ParamId, Vec<T>)] {
        &self.params
    }

    /// Adds parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for (id, g) in &self.params {
            for (acc, v) in store.param_mut(*id).grad.iter_mut().zip(g) {
                *acc += *v;
            }
        }
    }
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
        None => *slot = Some(g),
    }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Self { store, nodes: Vec::new(), mode, bn_updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        debug_assert!(value.all_finite(), "non-finite activation");
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input { requires_grad: false })
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input { requires_grad: true })
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.store.param(*id).value,
            _ => unreachable!("node without value"),
        }
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let y = ops::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(y, Op::Conv2d { x, w, b }))
    }

    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, stats: BnStats) -> Result<Var, NnError> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(NnError::ShapeMismatch(format!(
                "batchnorm: {} channels, gamma {}, beta {}",
                c,
                self.value(gamma).len(),
                self.value(beta).len()
            )));
        }
        let (mean, var, batch_stats) = match self.mode {
            Mode::Train => {
                let (m, v) = ops::channel_moments(xv);
                self.bn_updates.push(BnUpdate { stats, mean: m.clone(), var: v.clone() });
                (m, v, true)
            }
            Mode::Eval => {
                let m = self.store.buffer(stats.mean).value.data().iter().map(|v| v.f64()).collect();
                let v = self.store.buffer(stats.var).value.data().iter().map(|v| v.f64()).collect();
                (m, v, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + BN_EPS).sqrt())).collect();
        let mean: Vec<T> = mean.into_iter().map(T::of).collect();
        let y = ops::batchnorm_apply(self.value(x), self.value(gamma).data(), self.value(beta).data(), &mean, &inv_std);
        Ok(self.push(y, Op::BatchNorm { x, gamma, beta, mean, inv_std, batch_stats }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        self.push(y, Op::Relu { x })
    }

    pub fn maxpool2d(&mut self, x: Var, spec: PoolSpec) -> Result<Var, NnError> {
        let (y, argmax) = ops::maxpool_forward(self.value(x), spec)?;
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    pub fn global_maxpool(&mut self, x: Var) -> Result<Var, NnError> {
        let (y, argmax) = ops::global_maxpool_forward(self.value(x))?;
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let y = ops::dense_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(y, Op::Dense { x, w, b }))
    }

    /// Inverted dropout; the identity outside train mode.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if self.mode == Mode::Eval || rate <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len()).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect();
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
        self.push(y, Op::Dropout { x, mask })
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let y = ops::softmax_forward(self.value(x));
        self.push(y, Op::Softmax { x })
    }

    /// Concatenates along the last (channel) dimension.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, NnError> {
        let first = self.value(*xs.first().ok_or_else(|| NnError::ShapeMismatch("concat of nothing".into()))?);
        let lead = &first.shape()[..first.rank() - 1];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.value(x).shape();
            if &s[..s.len() - 1] != lead {
                return Err(NnError::ShapeMismatch(format!("concat: {:?} vs {:?}", lead, s)));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut shape = lead.to_vec();
        shape.push(total);
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let y = Tensor::new(&shape, out)?;
        Ok(self.push(y, Op::Concat { xs: xs.to_vec() }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NnError::ShapeMismatch(format!("add: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let mut y = av.clone();
        y.data_mut().iter_mut().zip(bv.data()).for_each(|(x, y)| *x += *y);
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    /// KL divergence of predicted probabilities from soft targets, summed
    /// over the batch.
    pub fn kl_div(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var, NnError> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(NnError::ShapeMismatch(format!("kl: pred {:?} vs target {:?}", p.shape(), target.shape())));
        }
        let loss = ops::kl_forward(target.data(), p.data());
        Ok(self.push(Tensor::scalar(T::of(loss)), Op::KlDiv { pred, target: target.data().to_vec() }))
    }

    /// `lambda / 2 * sum ||w||^2` over the given values.
    pub fn l2_penalty(&mut self, params: &[Var], lambda: f64) -> Var {
        let ss: f64 = params.iter().flat_map(|&p| self.value(p).data().iter()).map(|v| v.f64() * v.f64()).sum();
        self.push(Tensor::scalar(T::of(0.5 * lambda * ss)), Op::L2 { params: params.to_vec(), lambda: T::of(lambda) })
    }

    /// Reverse sweep from a scalar.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one(); self.value(loss).len()]);
        let mut param_grads = Vec::new();
        let mut kept: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input { requires_grad } => {
                    if *requires_grad {
                        kept[i] = Some(dy);
                    }
                }
                Op::Param(id) => {
                    param_grads.push((*id, dy));
                }
                Op::Conv2d { x, w, b } => {
                    let want_dx = !matches!(self.nodes[x.0].op, Op::Input { requires_grad: false });
                    let g = ops::conv2d_backward(self.value(*x), self.value(*w), &dy, want_dx).expect("shapes checked in forward");
                    if let Some(dx) = g.dx {
                        add_into(&mut grads[x.0], dx.into_data());
                    }
                    add_into(&mut grads[w.0], g.dw.into_data());
                    if let Some(b) = b {
                        add_into(&mut grads[b.0], g.db);
                    }
                }
                Op::BatchNorm { x, gamma, beta, mean, inv_std, batch_stats } => {
                    let g = ops::batchnorm_backward(self.value(*x), self.value(*gamma).data(), mean, inv_std, &dy, *batch_stats);
                    add_into(&mut grads[x.0], g.dx);
                    add_into(&mut grads[gamma.0], g.dgamma);
                    add_into(&mut grads[beta.0], g.dbeta);
                }
                Op::Relu { x } => {
                    let y = self.nodes[i].value.as_ref().expect("relu output");
                    let dx = dy.iter().zip(y.data()).map(|(g, v)| if *v > T::zero() { *g } else { T::zero() }).collect();
                    add_into(&mut grads[x.0], dx);
                }
                Op::MaxPool { x, argmax } => {
                    add_into(&mut grads[x.0], ops::scatter_argmax(self.value(*x).len(), argmax, &dy));
                }
                Op::Dense { x, w, b } => {
                    let (dx, dw, db) = ops::dense_backward(self.value(*x), self.value(*w), &dy);
                    add_into(&mut grads[x.0], dx);
                    add_into(&mut grads[w.0], dw);
                    if let Some(b) = b {
                        add_into(&mut grads[b.0], db);
                    }
                }
                Op::Dropout { x, mask } => {
                    add_into(&mut grads[x.0], dy.iter().zip(mask).map(|(g, m)| *g * *m).collect());
                }
                Op::Softmax { x } => {
                    let y = self.nodes[i].value.as_ref().expect("softmax output");
                    add_into(&mut grads[x.0], ops::softmax_backward(y, &dy));
                }
                Op::Concat { xs } => {
                    let total = self.value(Var(i)).last_dim();
                    let rows = dy.len() / total.max(1);
                    let mut offset = 0;
                    for x in xs {
                        let w = self.value(*x).last_dim();
                        let mut part = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            part.extend_from_slice(&dy[r * total + offset..r * total + offset + w]);
                        }
                        add_into(&mut grads[x.0], part);
                        offset += w;
                    }
                }
                Op::Add { a, b } => {
                    add_into(&mut grads[a.0], dy.clone());
                    add_into(&mut grads[b.0], dy);
                }
                Op::Reshape { x } => add_into(&mut grads[x.0], dy),
                Op::KlDiv { pred, target } => {
                    let p = self.value(*pred);
                    // Through a softmax, the fused gradient stays exact where p underflows the floor.
                    match self.nodes[pred.0].op {
                        Op::Softmax { x } => add_into(&mut grads[x.0], ops::softmax_kl_backward(target, p, dy[0])),
                        _ => add_into(&mut grads[pred.0], ops::kl_backward(target, p.data(), dy[0])),
                    }
                }
                Op::L2 { params, lambda } => {
                    for p in params {
                        let g = self.value(*p).data().iter().map(|w| *lambda * *w * dy[0]).collect();
                        add_into(&mut grads[p.0], g);
                    }
                }
            }
        }
        // A parameter may appear as several leaves; merge per id.
        param_grads.sort_by_key(|(id, _)| id.0);
        let mut merged: Vec<(ParamId, Vec<T>)> = Vec::new();
        for (id, g) in param_grads {
            match merged.last_mut() {
                Some((last, acc)) if *last == id => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                _ => merged.push((id, g)),
            }
        }
        Gradients { nodes: kept, params: merged }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropout_is_identity_in_eval_mode() {
        let store = ParamStore::<f32>::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = g.dropout(x, 0.5, &mut rng);
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn dropout_keeps_expectation_in_train_mode() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store, Mode::Train);
        let x = g.input(Tensor::full(&[1, 20000], 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = g.dropout(x, 0.3, &mut rng);
        let mean: f64 = g.value(y).data().iter().sum::<f64>() / 20000.0;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
        let zeros = g.value(y).data().iter().filter(|v| **v == 0.0).count();
        assert!((zeros as f64 / 20000.0 - 0.3).abs() < 0.02);
    }

    #[test]
    fn batchnorm_train_normalizes_each_channel() {
        let mut store = ParamStore::<f64>::new();
        let gamma = store.add_param("g", Tensor::full(&[2], 1.0), false).unwrap();
        let beta = store.add_param("b", Tensor::zeros(&[2]), false).unwrap();
        let rm = store.add_buffer("rm", Tensor::zeros(&[2])).unwrap();
        let rv = store.add_buffer("rv", Tensor::full(&[2], 1.0)).unwrap();
        let data: Vec<f64> = (0..2 * 3 * 4 * 2).map(|i| ((i * 37) % 11) as f64 * 0.5 + (i % 2) as f64 * 10.0).collect();
        let mut g = Graph::new(&store, Mode::Train);
        let x = g.input(Tensor::new(&[2, 3, 4, 2], data).unwrap());
        let (gv, bv) = (g.param(gamma), g.param(beta));
        let y = g.batchnorm(x, gv, bv, BnStats { mean: rm, var: rv }).unwrap();
        let (m, v) = ops::channel_moments(g.value(y));
        for c in 0..2 {
            assert!(m[c].abs() < 1e-5);
            assert!((v[c] - 1.0).abs() < 1e-3, "{}", v[c]);
        }
        assert_eq!(g.take_bn_updates().len(), 1);
    }

    #[test]
    fn batchnorm_affine_shifts_and_scales() {
        let mut store = ParamStore::<f64>::new();
        let gamma = store.add_param("g", Tensor::full(&[1], 2.0), false).unwrap();
        let beta = store.add_param("b", Tensor::full(&[1], 3.0), false).unwrap();
        let rm = store.add_buffer("rm", Tensor::zeros(&[1])).unwrap();
        let rv = store.add_buffer("rv", Tensor::full(&[1], 1.0)).unwrap();
        let data: Vec<f64> = (0..64).map(|i| (i as f64 * 1.3).sin() * 4.0 + 7.0).collect();
        let mut g = Graph::new(&store, Mode::Train);
        let x = g.input(Tensor::new(&[1, 8, 8, 1], data).unwrap());
        let (gv, bv) = (g.param(gamma), g.param(beta));
        let y = g.batchnorm(x, gv, bv, BnStats { mean: rm, var: rv }).unwrap();
        let (m, v) = ops::channel_moments(g.value(y));
        assert!((m[0] - 3.0).abs() < 1e-3);
        assert!((v[0].sqrt() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn shared_parameter_gradients_are_summed() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add_param("w", Tensor::new(&[1, 1], vec![3.0]).unwrap(), true).unwrap();
        let g = {
            let mut g = Graph::new(&store, Mode::Train);
            let a = g.param(w);
            let b = g.param(w);
            let l = g.l2_penalty(&[a, b], 1.0);
            g.backward(l).params().to_vec()
        };
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].1, vec![6.0]);
    }

    #[test]
    fn softmax_kl_gradient_survives_saturation() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store, Mode::Train);
        let x = g.leaf(Tensor::new(&[1, 2], vec![0.0, 80.0]).unwrap());
        let p = g.softmax(x);
        let loss = g.kl_div(p, &Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap()).unwrap();
        let grads = g.backward(loss);
        let dx = grads.wrt(x).unwrap();
        assert!((dx[0] + 1.0).abs() < 1e-12 && (dx[1] - 1.0).abs() < 1e-12, "{dx:?}");
    }
}

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Scalar type the network is generic over: `f32` for training and
/// inference, `f64` for gradient checks.
pub trait Real:
    LinalgScalar
    + ScalarOperand
    + PartialOrd
    + std::fmt::Debug
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::Neg<Output = Self>
    + Send
    + Sync
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Affine layer `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> Dense<T> {
    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }
}

/// Fully connected network with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Per-layer activations kept for the backward pass.
pub struct Trace<T> {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`
    /// (after ReLU for hidden layers).
    pub acts: Vec<Array2<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &Array2<T> {
        self.acts.last().expect("trace holds the input")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub w: Vec<Array2<T>>,
    pub b: Vec<Array1<T>>,
}

impl<T: Real> Mlp<T> {
    /// He-normal weights, zero biases.
    pub fn new(widths: &[usize], seed: u64) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let n = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
                Dense {
                    w: Array2::from_shape_fn((w[0], w[1]), |_| T::from_f64(n.sample(&mut rng))),
                    b: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            layers: widths
                .windows(2)
                .map(|w| Dense {
                    w: Array2::zeros((w[0], w[1])),
                    b: Array1::zeros(w[1]),
                })
                .collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs()];
        w.extend(self.layers.iter().map(|l| l.outputs()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward_trace(&self, x: ArrayView2<T>) -> Result<Trace<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::WidthMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut h = acts[i].dot(&l.w);
            h += &l.b;
            if i < last {
                h.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
            }
            acts.push(h);
        }
        Ok(Trace { acts })
    }

    /// Batched forward pass, one row per sample.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.forward_trace(x)?.acts.pop().expect("non-empty"))
    }

    /// Gradients of a loss whose derivative w.r.t. the network output is
    /// `d_out`. Also returns the derivative w.r.t. the input.
    pub fn backward(&self, trace: &Trace<T>, d_out: &Array2<T>) -> (Gradients<T>, Array2<T>) {
        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = d_out.clone();
        for i in (0..n).rev() {
            let input = &trace.acts[i];
            gw.push(input.t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            let mut d_in = delta.dot(&self.layers[i].w.t());
            if i > 0 {
                // ReLU derivative from the stored post-activation
                ndarray::Zip::from(&mut d_in).and(input).for_each(|d, &a| {
                    if !(a > T::zero()) {
                        *d = T::zero();
                    }
                });
            }
            delta = d_in;
        }
        gw.reverse();
        gb.reverse();
        (Gradients { w: gw, b: gb }, delta)
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    w: l.w.mapv(|v| U::from_f64(v.to_f64())),
                    b: l.b.mapv(|v| U::from_f64(v.to_f64())),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.to_f64().is_finite()))
    }
}

/// Smooth-L1 with threshold `delta`, averaged over all elements.
pub fn smooth_l1<T: Real>(pred: ArrayView2<T>, target: ArrayView2<T>, delta: f64) -> f64 {
    assert_eq!(pred.dim(), target.dim(), "smooth_l1 shapes differ");
    let n = pred.len().max(1) as f64;
    let sum: f64 = ndarray::Zip::from(&pred)
        .and(&target)
        .fold(0.0, |acc, &p, &t| {
            let x = (p - t).to_f64().abs();
            acc + if x < delta { 0.5 * x * x } else { delta * (x - 0.5 * delta) }
        });
    sum / n
}

/// Derivative of [`smooth_l1`] w.r.t. `pred`.
pub fn smooth_l1_grad<T: Real>(pred: ArrayView2<T>, target: ArrayView2<T>, delta: f64) -> Array2<T> {
    let n = pred.len().max(1) as f64;
    let mut g = Array2::zeros(pred.dim());
    ndarray::Zip::from(&mut g)
        .and(&pred)
        .and(&target)
        .for_each(|g, &p, &t| {
            let x = (p - t).to_f64();
            let d = if x.abs() < delta { x } else { delta * x.signum() };
            *g = T::from_f64(d / n);
        });
    g
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Gradients<T>,
    v: Gradients<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &Mlp<T>, lr: f64) -> Self {
        let zeros = || Gradients {
            w: model.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            b: model.layers.iter().map(|l| Array1::zeros(l.b.dim())).collect(),
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, model: &mut Mlp<T>, g: &Gradients<T>) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = T::from_f64(self.lr * c2.sqrt() / c1);
        let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
        let (ob1, ob2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
        let eps = T::from_f64(self.eps * c2.sqrt());
        let update = |p: &mut T, m: &mut T, v: &mut T, g: T| {
            *m = b1t * *m + ob1 * g;
            *v = b2t * *v + ob2 * g * g;
            *p -= lr * *m / (v.sqrt() + eps);
        };
        for (i, layer) in model.layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.w)
                .and(&mut self.m.w[i])
                .and(&mut self.v.w[i])
                .and(&g.w[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut layer.b)
                .and(&mut self.m.b[i])
                .and(&mut self.v.b[i])
                .and(&g.b[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

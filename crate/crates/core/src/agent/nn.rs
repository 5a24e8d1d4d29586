//! Small dense networks with hand-written backprop, generic over f32/f64.
//! Training runs in f32; gradient checks run in f64.

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;

pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + Serialize
    + DeserializeOwned
    + Debug
    + Send
    + Sync
    + Default
    + 'static
{
}
impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn c<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("representable constant")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct Dense<F> {
    /// Shape (out, in).
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> Dense<F> {
    fn zeros_like(&self) -> Self {
        Dense { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.raw_dim()) }
    }
}

/// Fully connected net, ReLU on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct Mlp<F> {
    pub sizes: Vec<usize>,
    pub layers: Vec<Dense<F>>,
}

/// Layer inputs recorded during a forward pass.
pub struct Tape<F> {
    inputs: Vec<Array2<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads<F> {
    pub layers: Vec<Dense<F>>,
}

impl<F: Real> Grads<F> {
    pub fn add(&mut self, other: &Grads<F>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn flat(&self) -> Vec<F> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

impl<F: Real> Mlp<F> {
    /// Uniform fan-in initialization, U(−1/√in, 1/√in).
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|io| {
                let bound = 1.0 / (io[0] as f64).sqrt();
                let mut draw = || c::<F>(rng.random_range(-bound..bound));
                let w = Array2::from_shape_simple_fn((io[1], io[0]), &mut draw);
                let b = Array1::from_shape_simple_fn(io[1], &mut draw);
                Dense { w, b }
            })
            .collect();
        Mlp { sizes: sizes.to_vec(), layers }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w.t()) + &l.b;
            if k < last {
                h.mapv_inplace(|v| v.max(F::zero()));
            }
        }
        h
    }

    pub fn forward_tape(&self, x: ArrayView2<F>) -> (Array2<F>, Tape<F>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let next = h.dot(&l.w.t()) + &l.b;
            inputs.push(h);
            h = next;
            if k < last {
                h.mapv_inplace(|v| v.max(F::zero()));
            }
        }
        (h, Tape { inputs })
    }

    /// Gradients of Σ grad_out ⊙ output with respect to the parameters and the input.
    pub fn backward(&self, tape: &Tape<F>, grad_out: Array2<F>) -> (Grads<F>, Array2<F>) {
        let mut g = grad_out;
        let mut layers: Vec<Dense<F>> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let x = &tape.inputs[k];
            layers.push(Dense { w: g.t().dot(x), b: g.sum_axis(Axis(0)) });
            g = g.dot(&self.layers[k].w);
            if k > 0 {
                // Hidden inputs are ReLU outputs: positive exactly where the unit was active.
                ndarray::Zip::from(&mut g).and(x).for_each(|gi, &xi| {
                    if xi <= F::zero() {
                        *gi = F::zero();
                    }
                });
            }
        }
        layers.reverse();
        (Grads { layers }, g)
    }

    pub fn zero_grads(&self) -> Grads<F> {
        Grads { layers: self.layers.iter().map(Dense::zeros_like).collect() }
    }

    /// Polyak average: self ← (1 − tau)·self + tau·source.
    pub fn soft_update(&mut self, source: &Mlp<F>, tau: F) {
        let keep = F::one() - tau;
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            ndarray::Zip::from(&mut t.w).and(&s.w).for_each(|a, &b| *a = keep * *a + tau * b);
            ndarray::Zip::from(&mut t.b).and(&s.b).for_each(|a, &b| *a = keep * *a + tau * b);
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in the same order as [`Grads::flat`].
    pub fn params_flat(&self) -> Vec<F> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
    }

    pub fn set_params_flat(&mut self, p: &[F]) {
        assert_eq!(p.len(), self.n_params());
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
    }

    pub fn cast<G: Real>(&self) -> Mlp<G> {
        let conv = |v: &F| G::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(G::nan());
        Mlp {
            sizes: self.sizes.clone(),
            layers: self.layers.iter().map(|l| Dense { w: l.w.map(conv), b: l.b.map(conv) }).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params_flat().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    t: i32,
    m: Vec<Dense<F>>,
    v: Vec<Dense<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(net: &Mlp<F>, lr: f64) -> Self {
        let zeros: Vec<Dense<F>> = net.layers.iter().map(Dense::zeros_like).collect();
        Adam { lr: c(lr), beta1: c(0.9), beta2: c(0.999), eps: c(1e-8), t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, net: &mut Mlp<F>, g: &Grads<F>) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = F::one() - b1.powi(self.t);
        let bc2 = F::one() - b2.powi(self.t);
        let step = self.lr * bc2.sqrt() / bc1;
        let eps_hat = self.eps * bc2.sqrt();
        let one = F::one();
        for (((p, g), m), v) in net.layers.iter_mut().zip(&g.layers).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut p.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p = *p - step * *m / (v.sqrt() + eps_hat);
            });
            ndarray::Zip::from(&mut p.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p = *p - step * *m / (v.sqrt() + eps_hat);
            });
        }
    }
}

/// Adam for a single scalar parameter (the log-temperature).
#[derive(Debug, Clone, Default)]
pub struct ScalarAdam {
    pub lr: f64,
    t: i32,
    m: f64,
    v: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        ScalarAdam { lr, ..Default::default() }
    }

    pub fn step(&mut self, p: &mut f64, g: f64) {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let m_hat = self.m / (1.0 - 0.9f64.powi(self.t));
        let v_hat = self.v / (1.0 - 0.999f64.powi(self.t));
        *p -= self.lr * m_hat / (v_hat.sqrt() + 1e-8);
    }
}

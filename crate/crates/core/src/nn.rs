//! Dense-layer arithmetic and first-order optimizers over flat parameter
//! vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// `out = W x + b` with `W` stored row-major as `out.len() x x.len()`.
pub fn dense_forward(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
        *o = bias + dot(row, x);
    }
}

/// Dot product with four independent accumulators, which lets the compiler
/// vectorize; the summation order is fixed, so results are deterministic.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, ra) = (a.chunks_exact(4), a.chunks_exact(4).remainder());
    let rb = &b[a.len() - ra.len()..a.len()];
    for (x, y) in ca.zip(b.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Accumulates `dW += d_out x^T`, `db += d_out` and, when requested,
/// writes `dx = W^T d_out`.
pub fn dense_backward(w: &[f64], x: &[f64], d_out: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let n_in = x.len();
    for ((g, row_grad), bias_grad) in d_out.iter().zip(dw.chunks_exact_mut(n_in)).zip(db.iter_mut()) {
        if *g == 0.0 {
            continue;
        }
        *bias_grad += g;
        for (rg, v) in row_grad.iter_mut().zip(x) {
            *rg += g * v;
        }
    }
    if let Some(dx) = dx {
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (g, row) in d_out.iter().zip(w.chunks_exact(n_in)) {
            if *g == 0.0 {
                continue;
            }
            for (d, a) in dx.iter_mut().zip(row) {
                *d += g * a;
            }
        }
    }
}

pub fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Zeroes gradient entries whose activation was clipped by ReLU.
pub fn relu_backward(act: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(act) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Glorot-uniform fill.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, w: &mut [f64], fan_in: usize, fan_out: usize) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    w.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient descent.
    Sgd,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { num_params } else { 0 };
        Optimizer { kind, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; moments], v: vec![0.0; moments], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.t as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip_shapes() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.5, -0.5];
        let mut out = [0.0; 2];
        dense_forward(&w, &b, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [1.0 - 3.0 + 0.5, 4.0 - 6.0 - 0.5]);
        let (mut dw, mut db, mut dx) = ([0.0; 6], [0.0; 2], [0.0; 3]);
        dense_backward(&w, &[1.0, 0.0, -1.0], &[1.0, 2.0], &mut dw, &mut db, Some(&mut dx));
        assert_eq!(dw, [1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
        assert_eq!(db, [1.0, 2.0]);
        assert_eq!(dx, [9.0, 12.0, 15.0]);
    }

    #[test]
    fn dot_matches_naive_sum() {
        for n in 0..11 {
            let a: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 1.0).collect();
            let b: Vec<f64> = (0..n).map(|i| 2.0 - i as f64).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 2);
        let mut p = [1.0, 1.0];
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] - 1.1).abs() < 1e-7);
    }

    #[test]
    fn stable_scalar_functions() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }
}

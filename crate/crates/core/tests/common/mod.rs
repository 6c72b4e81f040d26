#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uft::measures::{CostMatrix, MassVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_cost(rng: &mut ChaCha8Rng, nx: usize, nz: usize) -> CostMatrix {
    CostMatrix::new(Array2::from_shape_fn((nx, nz), |_| rng.random_range(0.0..2.0))).unwrap()
}

pub fn random_mass(rng: &mut ChaCha8Rng, n: usize) -> MassVector {
    MassVector::new(Array1::from_shape_fn(n, |_| rng.random_range(0.1..1.0))).unwrap()
}

/// Straight double-loop evaluation of the unbalanced primal, with the entropy
/// taken relative to the product of the masses.
pub fn naive_primal(plan: &Array2<f64>, cost: &CostMatrix, alpha: &MassVector, beta: &MassVector, eta: f64, tau: f64) -> f64 {
    let (a, b, c) = (alpha.as_array(), beta.as_array(), cost.as_array());
    let (nx, nz) = plan.dim();
    let xlogx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    let kl = |p: f64, q: f64| xlogx(p) - p * q.ln() - p + q;
    let mut total = 0.0;
    let mut rows = vec![0.0; nx];
    let mut cols = vec![0.0; nz];
    for i in 0..nx {
        for j in 0..nz {
            let t = plan[[i, j]];
            total += c[[i, j]] * t + eta * (kl(t, a[i] * b[j]) - a[i] * b[j]);
            rows[i] += t;
            cols[j] += t;
        }
    }
    for i in 0..nx {
        total += tau * kl(rows[i], a[i]);
    }
    for j in 0..nz {
        total += tau * kl(cols[j], b[j]);
    }
    total
}

pub fn frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

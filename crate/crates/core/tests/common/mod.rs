#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use v2g_core::lti::{augment, AugmentedModel, DiscreteStateSpace};

pub fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

pub fn max_real_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Random Hurwitz matrix: a random matrix shifted left past its rightmost eigenvalue.
pub fn random_stable_a(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = uniform_matrix(rng, n, n, 1.0);
    let shift = max_real_eigenvalue(&m) + rng.gen_range(0.05..1.0);
    m - DMatrix::identity(n, n) * shift
}

/// Singular system matrices: zero, nilpotent chains, similarity transforms of
/// diagonals with zero entries, and an undamped oscillator with an integrator.
pub fn singular_a(rng: &mut ChaCha8Rng, case: usize) -> DMatrix<f64> {
    match case % 5 {
        0 => DMatrix::zeros(1 + case % 4, 1 + case % 4),
        1 => {
            let n = 2 + case % 5;
            DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
        }
        2 | 3 => {
            let n = 3 + case % 6;
            let p = uniform_matrix(rng, n, n, 1.0) + DMatrix::identity(n, n) * 2.0;
            let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| if i == 0 { 0.0 } else { -(i as f64) }));
            let p_inv = p.clone().try_inverse().expect("diagonally dominant");
            p * d * p_inv
        }
        _ => {
            let w = 2.0;
            DMatrix::from_row_slice(3, 3, &[0.0, w, 0.0, -w, 0.0, 0.0, 1.0, 0.0, 0.0])
        }
    }
}

/// Composite Simpson estimate of `int_0^T e^(A tau) B dtau`. Node values are
/// advanced with the one-interval exponential from nalgebra.
pub fn simpson_h(a: &DMatrix<f64>, b: &DMatrix<f64>, ts: f64, intervals: usize) -> DMatrix<f64> {
    assert!(intervals % 2 == 0);
    let dt = ts / intervals as f64;
    let step = (a * dt).exp();
    let mut e = DMatrix::identity(a.nrows(), a.ncols());
    let mut acc = DMatrix::zeros(b.nrows(), b.ncols());
    for k in 0..=intervals {
        let w = if k == 0 || k == intervals {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += &e * b * w;
        e = &e * &step;
    }
    acc * (dt / 3.0)
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Random discrete model with spectral radius below one, `q = m = 3`.
pub fn random_demo_model(rng: &mut ChaCha8Rng) -> DiscreteStateSpace {
    let n = rng.gen_range(3..=9);
    let g0 = uniform_matrix(rng, n, n, 1.0);
    let rho = g0.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let g = g0 * (rng.gen_range(0.3..0.95) / rho);
    let h = uniform_matrix(rng, n, 3, 1.0);
    let c = uniform_matrix(rng, 3, n, 1.0);
    DiscreteStateSpace::new(g, h, c, 1e-5).unwrap()
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Outputs `y[k+1..=k+Np]` from stepping the augmented model directly,
/// holding the move at zero after the control horizon.
pub fn simulate_augmented(aug: &AugmentedModel, x0: &DVector<f64>, du: &DVector<f64>, np: usize, nc: usize) -> DVector<f64> {
    let m = aug.n_inputs();
    let q = aug.n_outputs();
    let mut x = x0.clone();
    let mut out = DVector::zeros(q * np);
    for i in 0..np {
        let u = if i < nc { du.rows(i * m, m).into_owned() } else { DVector::zeros(m) };
        x = &aug.gm * &x + &aug.hm * u;
        out.rows_mut(i * q, q).copy_from(&(&aug.cm * &x));
    }
    out
}

/// Cost computed from a direct simulation rather than the stacked matrices.
pub fn direct_cost(aug: &AugmentedModel, x0: &DVector<f64>, r: &DVector<f64>, du: &DVector<f64>, np: usize, nc: usize, r_w: f64) -> f64 {
    let y = simulate_augmented(aug, x0, du, np, nc);
    let q = r.len();
    let e = DVector::from_fn(q * np, |i, _| r[i % q] - y[i]);
    e.norm_squared() + r_w * du.norm_squared()
}

pub fn demo_augmented(rng: &mut ChaCha8Rng) -> AugmentedModel {
    augment(&random_demo_model(rng))
}

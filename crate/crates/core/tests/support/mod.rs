//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nsgp::model::{NsgpModel, Variant};
use nsgp::train::init;
use nsgp::Matrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Central difference of `f` at `x` along every coordinate.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

/// Textbook stationary GP NLML with an RBF kernel of amplitude `s²`, via
/// Gaussian elimination with partial pivoting.
pub fn naive_stationary_nlml(x: &[Vec<f64>], y: &[f64], ell: f64, s: f64, omega: f64) -> f64 {
    let n = y.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let r2: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            k[i][j] = s * s * (-r2 / (2.0 * ell * ell)).exp();
        }
        k[i][i] += omega * omega;
    }
    let mut aug: Vec<Vec<f64>> = k
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let mut r = row.clone();
            r.push(yi);
            r
        })
        .collect();
    let mut log_abs_det = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .unwrap();
        aug.swap(col, piv);
        let p = aug[col][col];
        log_abs_det += p.abs().ln();
        for r in (col + 1)..n {
            let f = aug[r][col] / p;
            for c in col..=n {
                aug[r][c] -= f * aug[col][c];
            }
        }
    }
    let mut sol = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = aug[i][n];
        for j in (i + 1)..n {
            v -= aug[i][j] * sol[j];
        }
        sol[i] = v / aug[i][i];
    }
    let quad: f64 = y.iter().zip(&sol).map(|(a, b)| a * b).sum();
    0.5 * quad + 0.5 * log_abs_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Random data set with `n` points in `d` dimensions.
pub fn random_data(rng: &mut StdRng, n: usize, d: usize) -> (Matrix, Vec<f64>) {
    let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y = (0..n)
        .map(|i| {
            let r = x.row(i);
            r.iter().map(|v| (1.5 * v).sin()).sum::<f64>() + 0.2 * rng.random_range(-1.0..1.0)
        })
        .collect();
    (x, y)
}

/// A prior draw for `variant` with every parameter then jittered, so
/// configurations do not sit exactly at the prior.
pub fn random_model(variant: Variant, seed: u64, n: usize, m: usize, d: usize) -> NsgpModel {
    let mut rng = StdRng::seed_from_u64(seed);
    let (x, y) = random_data(&mut rng, n, d);
    let base = init(variant, &x, &y, m, seed).unwrap();
    let layout = base.pack().layout;
    let mut values = base.pack().values;
    for s in &layout.segments {
        for v in &mut values[s.offset..s.offset + s.len] {
            *v += 0.3 * rng.random_range(-1.0..1.0);
        }
        // keep latent length scales and amplitudes in a moderate range
        if s.name.ends_with(".lengthscale") {
            values[s.offset] = rng.random_range(-0.5..1.0);
        }
        if s.name.ends_with(".amplitude") {
            values[s.offset] = rng.random_range(-1.5..0.5);
        }
        if s.name == "omega.constant" || s.name == "omega.mean" {
            values[s.offset] = values[s.offset].max(-2.5);
        }
    }
    base.with_params(&values).unwrap()
}

/// Whether `analytic` matches `numeric` within max(rel·|·|, abs).
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    (analytic - numeric).abs() <= (rel * analytic.abs().max(numeric.abs())).max(abs)
}

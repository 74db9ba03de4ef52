//! Lanczos iteration with full reorthogonalization.
//!
//! The Krylov basis grows until the wanted Ritz pairs have residual
//! `|β_j s_{j,i}|` below tolerance. If the recurrence breaks down before
//! that, the basis is continued with a fresh random direction orthogonal to
//! everything found so far, which also recovers repeated eigenvalues that a
//! single starting vector cannot see.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LanczosEnd {
    Smallest,
    Largest,
}

const RESIDUAL_TOL: f64 = 1e-10;
const BREAKDOWN_TOL: f64 = 1e-12;

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    // two passes are enough to keep the basis orthonormal to working precision
    for _ in 0..2 {
        for q in basis {
            let d: f64 = q.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= d * qi;
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_direction(n: usize, basis: &[Vec<f64>], rng: &mut seed::Rng) -> Option<Vec<f64>> {
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        orthogonalize(&mut v, basis);
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return Some(v);
        }
    }
    None
}

/// Ritz pairs of the tridiagonal matrix, sorted so the wanted end comes
/// first.
fn ritz(alpha: &[f64], beta: &[f64], end: LanczosEnd) -> (Vec<f64>, DMatrix<f64>) {
    let j = alpha.len();
    let mut t = DMatrix::zeros(j, j);
    for i in 0..j {
        t[(i, i)] = alpha[i];
        if i + 1 < j {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..j).collect();
    let vals = eig.eigenvalues.as_slice();
    match end {
        LanczosEnd::Smallest => order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b])),
        LanczosEnd::Largest => order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a])),
    }
    let mut s = DMatrix::zeros(j, j);
    for (c, &src) in order.iter().enumerate() {
        s.set_column(c, &eig.eigenvectors.column(src));
    }
    (order.iter().map(|&i| vals[i]).collect(), s)
}

/// Returns the `k` extreme eigenvalues at `end` and their eigenvectors
/// (columns), unsorted beyond the Ritz ordering.
pub fn lanczos(
    m: &CsrMatrix,
    k: usize,
    end: LanczosEnd,
    seed: u64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.n();
    if k == 0 || k > n {
        return Err(Error::pre(format!("cannot extract {k} pairs from n = {n}")));
    }
    let scale = m.max_abs().max(1.0);
    let tol = RESIDUAL_TOL * scale;
    let mut rng = seed::rng_for(seed, &[0x1a2c]);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut q = random_direction(n, &basis, &mut rng)
        .ok_or_else(|| Error::num("could not draw a starting vector"))?;
    let mut w = vec![0.0; n];
    let mut next_check = (2 * k + 20).min(n);

    loop {
        m.matvec(&q, &mut w);
        let a: f64 = q.iter().zip(&w).map(|(x, y)| x * y).sum();
        basis.push(q);
        alpha.push(a);
        orthogonalize(&mut w, &basis);
        let b = norm(&w);
        let j = basis.len();

        let exhausted = j == n;
        let broke = b < BREAKDOWN_TOL * scale;
        if j >= k && (j >= next_check || exhausted || broke) {
            let (theta, s) = ritz(&alpha, &beta, end);
            let residual_b = if broke || exhausted { 0.0 } else { b };
            let converged = (0..k).all(|i| (residual_b * s[(j - 1, i)]).abs() <= tol);
            if converged {
                let mut vecs = DMatrix::zeros(n, k);
                for i in 0..k {
                    let mut v = DVector::<f64>::zeros(n);
                    for (l, ql) in basis.iter().enumerate() {
                        let coef = s[(l, i)];
                        for r in 0..n {
                            v[r] += coef * ql[r];
                        }
                    }
                    let nv = v.norm();
                    vecs.set_column(i, &(v / nv));
                }
                return Ok((theta[..k].to_vec(), vecs));
            }
            if exhausted {
                return Err(Error::num(format!(
                    "Lanczos exhausted the full space (n = {n}) without converging"
                )));
            }
            next_check = (j + (j / 4).max(10)).min(n);
        }

        if broke {
            beta.push(0.0);
            q = random_direction(n, &basis, &mut rng).ok_or_else(|| {
                Error::num(format!("Lanczos breakdown at step {j} with no new direction"))
            })?;
        } else {
            beta.push(b);
            q = w.iter().map(|x| x / b).collect();
        }
    }
}

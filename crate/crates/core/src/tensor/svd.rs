//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of a working copy of `A` are rotated pairwise until every pair is
//! orthogonal to within [`OFF_DIAGONAL_TOL`]; the column norms are then the
//! singular values and the accumulated rotations form `V`. The method is slow
//! for large matrices but very accurate, which is what the small dense
//! cross-covariance matrices of embedding alignment need.

use crate::error::{Error, Result};
use crate::tensor::matrix::{dot, Matrix};

pub const MAX_SWEEPS: usize = 60;
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `m x k` with orthonormal columns.
    pub u: Matrix,
    /// Length `k = min(m, n)`, non-negative, descending.
    pub singular_values: Vec<f64>,
    /// `n x k` with orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (c, s) in self.singular_values.iter().enumerate() {
                let x = us.get(r, c) * s;
                us.set(r, c, x);
            }
        }
        us.matmul_t(&self.v)
            .expect("svd factors have consistent shapes")
    }
}

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::Shape {
            op: "svd",
            left: a.shape(),
            right: (1, 1),
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite(
            "svd input contains NaN or infinity".into(),
        ));
    }
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose())?;
        Ok(SvdResult {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        })
    }
}

/// Requires `m >= n`.
fn jacobi_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    // column-major working storage
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| a.column(c)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= OFF_DIAGONAL_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<(usize, f64)> = cols.iter().map(|c| dot(c, c).sqrt()).enumerate().collect();
    // stable sort keeps results deterministic when singular values tie
    order.sort_by(|x, y| y.1.total_cmp(&x.1));

    let s_max = order.first().map_or(0.0, |o| o.1);
    let tiny = f64::EPSILON * (m.max(n) as f64) * s_max.max(f64::MIN_POSITIVE);

    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    let mut u_basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (k, &(src, sigma)) in order.iter().enumerate() {
        for r in 0..n {
            v.set(r, k, vcols[src][r]);
        }
        if sigma > tiny {
            singular_values.push(sigma);
            let col: Vec<f64> = cols[src].iter().map(|x| x / sigma).collect();
            u_basis.push(col);
        } else {
            singular_values.push(0.0);
            u_basis.push(Vec::new());
            deficient.push(k);
        }
    }
    complete_basis(&mut u_basis, &deficient, m);
    for (k, col) in u_basis.iter().enumerate() {
        for r in 0..m {
            u.set(r, k, col[r]);
        }
    }
    Ok(SvdResult {
        u,
        singular_values,
        v,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the empty slots listed in `missing` with unit vectors orthogonal to
/// every other column, by Gram-Schmidt against the standard basis.
fn complete_basis(basis: &mut [Vec<f64>], missing: &[usize], m: usize) {
    let mut candidate = 0;
    for &slot in missing {
        loop {
            assert!(candidate < m, "cannot complete an orthonormal basis");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // two passes of modified Gram-Schmidt for stability
            for _ in 0..2 {
                for b in basis.iter().filter(|b| !b.is_empty()) {
                    let proj = dot(&e, b);
                    for (x, y) in e.iter_mut().zip(b) {
                        *x -= proj * y;
                    }
                }
            }
            let nrm = dot(&e, &e).sqrt();
            if nrm > 1e-6 {
                basis[slot] = e.into_iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}

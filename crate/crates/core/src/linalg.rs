//! Dense exact elimination over `Cq` and float rank helpers.

use nalgebra::DMatrix;
use num::Zero;

use crate::scalars::{Cq, Scalar, C64};

/// Rank by fraction-free (Bareiss) elimination.
pub fn rank_bareiss(rows: &[Vec<Cq>]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let ncols = rows[0].len();
    let mut m: Vec<Vec<Cq>> = rows.to_vec();
    let nrows = m.len();
    let mut prev = Cq::new(num::One::one(), num::Zero::zero());
    let mut rank = 0;
    let mut col = 0;
    while rank < nrows && col < ncols {
        let pivot = (rank..nrows).find(|&r| !m[r][col].is_zero());
        let Some(p) = pivot else {
            col += 1;
            continue;
        };
        m.swap(rank, p);
        let piv = m[rank][col].clone();
        for r in rank + 1..nrows {
            let f = m[r][col].clone();
            for c in col + 1..ncols {
                let v = (piv.clone() * m[r][c].clone() - f.clone() * m[rank][c].clone()) / prev.clone();
                m[r][c] = v;
            }
            m[r][col] = Cq::zero();
        }
        prev = piv;
        rank += 1;
        col += 1;
    }
    rank
}

/// Reduced row echelon form; returns the pivot columns.
pub fn rref(rows: &mut [Vec<Cq>]) -> Vec<usize> {
    let nrows = rows.len();
    if nrows == 0 {
        return vec![];
    }
    let ncols = rows[0].len();
    let mut pivots = vec![];
    let mut r = 0;
    for c in 0..ncols {
        if r == nrows {
            break;
        }
        let Some(p) = (r..nrows).find(|&i| !rows[i][c].is_zero()) else {
            continue;
        };
        rows.swap(r, p);
        let inv = Cq::new(num::One::one(), num::Zero::zero()) / rows[r][c].clone();
        for v in rows[r].iter_mut() {
            *v = v.clone() * inv.clone();
        }
        for i in 0..nrows {
            if i != r && !rows[i][c].is_zero() {
                let f = rows[i][c].clone();
                for j in 0..ncols {
                    let v = rows[i][j].clone() - f.clone() * rows[r][j].clone();
                    rows[i][j] = v;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

/// Basis of `{v : M v = 0}` for an `nrows × ncols` matrix.
pub fn nullspace(rows: &[Vec<Cq>], ncols: usize) -> Vec<Vec<Cq>> {
    let mut m = rows.to_vec();
    let pivots = rref(&mut m);
    let free: Vec<usize> = (0..ncols).filter(|c| !pivots.contains(c)).collect();
    let mut basis = vec![];
    for &f in &free {
        let mut v = vec![Cq::zero(); ncols];
        v[f] = Cq::new(num::One::one(), num::Zero::zero());
        for (r, &p) in pivots.iter().enumerate() {
            v[p] = -m[r][f].clone();
        }
        basis.push(v);
    }
    basis
}

/// Numerical rank from singular values relative to the largest one.
pub fn rank_svd(m: &DMatrix<C64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * smax).count()
}

/// Row-major `n × n` product.
pub fn mat_mul<S: Scalar>(a: &[S], b: &[S], n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = &a[i * n + k];
            if aik.is_zero() {
                continue;
            }
            for j in 0..n {
                out[i * n + j] = out[i * n + j].clone() + aik.clone() * b[k * n + j].clone();
            }
        }
    }
    out
}

pub fn mat_identity<S: Scalar>(n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * n];
    for i in 0..n {
        out[i * n + i] = S::one();
    }
    out
}

pub fn mat_trace<S: Scalar>(a: &[S], n: usize) -> S {
    (0..n).fold(S::zero(), |acc, i| acc + a[i * n + i].clone())
}

/// Gauss-Jordan inverse; `None` when singular (exactly, or below `1e-300` in float mode).
pub fn mat_inverse<S: Scalar>(a: &[S], n: usize) -> Option<Vec<S>> {
    let mut m = a.to_vec();
    let mut inv = mat_identity::<S>(n);
    for c in 0..n {
        let p = (c..n)
            .filter(|&r| !m[r * n + c].is_zero())
            .max_by(|&x, &y| m[x * n + c].norm_f64().total_cmp(&m[y * n + c].norm_f64()))?;
        if !S::is_exact() && m[p * n + c].norm_f64() < 1e-300 {
            return None;
        }
        if p != c {
            for j in 0..n {
                m.swap(p * n + j, c * n + j);
                inv.swap(p * n + j, c * n + j);
            }
        }
        let d = S::one() / m[c * n + c].clone();
        for j in 0..n {
            m[c * n + j] = m[c * n + j].clone() * d.clone();
            inv[c * n + j] = inv[c * n + j].clone() * d.clone();
        }
        for r in 0..n {
            if r == c || m[r * n + c].is_zero() {
                continue;
            }
            let f = m[r * n + c].clone();
            for j in 0..n {
                m[r * n + j] = m[r * n + j].clone() - f.clone() * m[c * n + j].clone();
                inv[r * n + j] = inv[r * n + j].clone() - f.clone() * inv[c * n + j].clone();
            }
        }
    }
    Some(inv)
}

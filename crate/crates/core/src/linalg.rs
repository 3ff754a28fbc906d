//! Small dense symmetric linear algebra.
//!
//! Everything here targets c×c matrices with c up to a few dozen (Gram
//! matrices of class embeddings), so the implementations favour determinism
//! and simplicity over asymptotic speed. Inner sums are evaluated in a
//! value-sorted order, which makes matrix-vector products bit-identical
//! under a permutation of the index set.

use crate::error::{DfmError, Result};

/// Dense symmetric matrix storing a single (lower) triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    order: usize,
    tri: Vec<f64>, // row-major lower triangle: (i, j) with j <= i at i*(i+1)/2 + j
}

impl SymMatrix {
    pub fn zeros(order: usize) -> Self {
        assert!(order >= 1, "SymMatrix order must be positive");
        SymMatrix {
            order,
            tri: vec![0.0; order * (order + 1) / 2],
        }
    }

    /// Build from a function evaluated on the lower triangle (j <= i).
    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = SymMatrix::zeros(order);
        for i in 0..order {
            for j in 0..=i {
                m.tri[i * (i + 1) / 2 + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    fn idx(i: usize, j: usize) -> usize {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        hi * (hi + 1) / 2 + lo
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.tri[Self::idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.tri[Self::idx(i, j)] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.tri.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        let diag: Vec<f64> = (0..self.order).map(|i| self.get(i, i)).collect();
        ordered_sum(diag)
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut terms = Vec::with_capacity(self.order * self.order);
        for i in 0..self.order {
            for j in 0..=i {
                let v = self.get(i, j) * self.get(i, j);
                terms.push(v);
                if j < i {
                    terms.push(v);
                }
            }
        }
        ordered_sum(terms).sqrt()
    }

    /// Dense row-major copy with both triangles filled.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.order;
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = self.get(i, j);
            }
        }
        d
    }

    /// y = M x, each row summed in value order.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.order);
        let mut y = vec![0.0; self.order];
        let mut row = vec![0.0; self.order];
        for i in 0..self.order {
            for j in 0..self.order {
                row[j] = self.get(i, j) * x[j];
            }
            y[i] = ordered_sum_slice(&mut row);
        }
        y
    }

    /// xᵀ M x.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mx = self.matvec(x);
        ordered_dot(x, &mx)
    }

    /// Eigenvalues in ascending order (cyclic Jacobi).
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.eigen()?.values)
    }

    /// Full eigen decomposition by cyclic Jacobi rotations.
    ///
    /// Sweeps stop when the off-diagonal Frobenius norm drops below
    /// 1e-13 × ‖M‖_F; at most 100 sweeps.
    pub fn eigen(&self) -> Result<EigenDecomposition> {
        if !self.is_finite() {
            return Err(DfmError::NonFinite("symmetric eigen input"));
        }
        let n = self.order;
        let mut a = self.to_dense();
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        let fro = self.frobenius_norm();
        if fro == 0.0 {
            return Ok(EigenDecomposition {
                values: vec![0.0; n],
                vectors: v,
            });
        }
        let threshold = 1e-13 * fro;
        const MAX_SWEEPS: usize = 100;
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += 2.0 * a[p * n + q] * a[p * n + q];
                }
            }
            if off.sqrt() <= threshold {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    rotate(&mut a, &mut v, n, p, q);
                }
            }
        }
        if !converged {
            // re-check: the last sweep may have finished the job
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += 2.0 * a[p * n + q] * a[p * n + q];
                }
            }
            if off.sqrt() > threshold {
                return Err(DfmError::EigenNonConvergence { sweeps: MAX_SWEEPS });
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
        let values: Vec<f64> = order.iter().map(|&k| a[k * n + k]).collect();
        let mut vectors = vec![0.0; n * n];
        for (slot, &k) in order.iter().enumerate() {
            for r in 0..n {
                vectors[slot * n + r] = v[r * n + k];
            }
        }
        Ok(EigenDecomposition { values, vectors })
    }
}

/// Eigen pairs sorted by ascending eigenvalue; `vectors[k*n..(k+1)*n]` is the
/// unit eigenvector of `values[k]`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
}

impl EigenDecomposition {
    pub fn vector(&self, k: usize) -> &[f64] {
        let n = self.values.len();
        &self.vectors[k * n..(k + 1) * n]
    }
}

fn rotate(a: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = a[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = a[p * n + p];
    let aqq = a[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e15 {
        1.0 / (2.0 * theta)
    } else {
        let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
        sign / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let tau = s / (1.0 + c);

    a[p * n + p] = app - t * apq;
    a[q * n + q] = aqq + t * apq;
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;
    for r in 0..n {
        if r != p && r != q {
            let arp = a[r * n + p];
            let arq = a[r * n + q];
            a[r * n + p] = arp - s * (arq + tau * arp);
            a[p * n + r] = a[r * n + p];
            a[r * n + q] = arq + s * (arp - tau * arq);
            a[q * n + r] = a[r * n + q];
        }
    }
    for r in 0..n {
        let vrp = v[r * n + p];
        let vrq = v[r * n + q];
        v[r * n + p] = vrp - s * (vrq + tau * vrp);
        v[r * n + q] = vrq + s * (vrp - tau * vrq);
    }
}

/// Solve M x = b for a PSD matrix via the eigen pseudo-inverse.
///
/// Eigenvalues at or below `rel_tol × λ_max` are treated as zero. Returns the
/// minimum-norm solution on the achieved span and whether M had full rank.
pub fn solve_psd(m: &SymMatrix, b: &[f64], rel_tol: f64) -> Result<(Vec<f64>, bool)> {
    let n = m.order();
    assert_eq!(b.len(), n);
    let eig = m.eigen()?;
    let lmax = eig.values.iter().cloned().fold(0.0_f64, f64::max);
    if lmax <= 0.0 {
        return Ok((vec![0.0; n], false));
    }
    let cutoff = rel_tol * lmax;
    let mut x = vec![0.0; n];
    let mut full_rank = true;
    for k in 0..n {
        let lam = eig.values[k];
        if lam <= cutoff {
            full_rank = false;
            continue;
        }
        let vk = eig.vector(k);
        let coeff = ordered_dot(vk, b) / lam;
        for i in 0..n {
            x[i] += coeff * vk[i];
        }
    }
    Ok((x, full_rank))
}

/// Lower Cholesky factor of a dense SPD matrix (row-major), or an error if
/// the matrix is not positive definite.
pub fn cholesky_lower(order: usize, dense: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(dense.len(), order * order);
    let mut l = vec![0.0; order * order];
    for i in 0..order {
        for j in 0..=i {
            let mut s = dense[i * order + j];
            for k in 0..j {
                s -= l[i * order + k] * l[j * order + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(DfmError::Parameter(
                        "covariance matrix is not positive definite".into(),
                    ));
                }
                l[i * order + j] = s.sqrt();
            } else {
                l[i * order + j] = s / l[j * order + j];
            }
        }
    }
    Ok(l)
}

/// Sum in ascending value order; invariant under permutations of the input.
pub fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    ordered_sum_slice(&mut terms)
}

pub(crate) fn ordered_sum_slice(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Dot product with value-ordered summation.
pub fn ordered_dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    ordered_sum_slice(&mut prods)
}

/// Pairwise (tree) sum of scalars: splits by index, so the result depends
/// only on the block layout, not on the number of workers that produced it.
pub fn tree_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let mid = n / 2;
            tree_sum(&xs[..mid]) + tree_sum(&xs[mid..])
        }
    }
}

/// Pairwise (tree) sum of equal-length vectors in block-index order.
pub fn tree_sum_vectors(blocks: &[Vec<f64>], dim: usize) -> Vec<f64> {
    match blocks.len() {
        0 => vec![0.0; dim],
        1 => blocks[0].clone(),
        n => {
            let mid = n / 2;
            let a = tree_sum_vectors(&blocks[..mid], dim);
            let b = tree_sum_vectors(&blocks[mid..], dim);
            a.iter().zip(&b).map(|(x, y)| x + y).collect()
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    ordered_dot(v, v).sqrt()
}

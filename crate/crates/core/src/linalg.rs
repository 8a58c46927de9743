//! Householder QR with a positive-diagonal convention, plus small helpers
//! shared by the cells and the estimator.

use nalgebra::{DMatrix, DVector};

/// Thin QR factorization `A = Q R` of an `m × k` matrix (`k ≤ m`).
///
/// `Q` is `m × k` with orthonormal columns and `R` is `k × k` upper
/// triangular with a non-negative diagonal. Signs are fixed by flipping
/// each (column of Q, row of R) pair whose diagonal entry came out negative.
pub fn qr_positive(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, k) = a.shape();
    assert!(k <= m, "qr_positive needs at least as many rows as columns");

    let mut r = a.clone();
    // Householder vectors, stored per column.
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(k);

    for j in 0..k {
        let mut v = DVector::from_iterator(m - j, (j..m).map(|i| r[(i, j)]));
        let norm = v.norm();
        if norm == 0.0 {
            reflectors.push(DVector::zeros(m - j));
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm == 0.0 {
            reflectors.push(DVector::zeros(m - j));
            continue;
        }
        v /= vnorm;

        for c in j..k {
            let mut dot = 0.0;
            for i in 0..(m - j) {
                dot += v[i] * r[(j + i, c)];
            }
            let s = 2.0 * dot;
            for i in 0..(m - j) {
                r[(j + i, c)] -= s * v[i];
            }
        }
        reflectors.push(v);
    }

    // Accumulate Q = H_0 H_1 ... H_{k-1} applied to the first k identity columns.
    let mut q = DMatrix::<f64>::identity(m, k);
    for j in (0..k).rev() {
        let v = &reflectors[j];
        for c in 0..k {
            let mut dot = 0.0;
            for i in 0..(m - j) {
                dot += v[i] * q[(j + i, c)];
            }
            if dot == 0.0 {
                continue;
            }
            let s = 2.0 * dot;
            for i in 0..(m - j) {
                q[(j + i, c)] -= s * v[i];
            }
        }
    }

    let mut r_sq = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for c in i..k {
            r_sq[(i, c)] = r[(i, c)];
        }
    }

    for i in 0..k {
        if r_sq[(i, i)] < 0.0 {
            for c in i..k {
                r_sq[(i, c)] = -r_sq[(i, c)];
            }
            for row in 0..m {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }

    (q, r_sq)
}

/// `max |QᵀQ − I|` over all entries.
pub fn orthonormality_error(q: &DMatrix<f64>) -> f64 {
    let gram = q.transpose() * q;
    let mut worst: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Scales row `i` of `m` by `d[i]` (the row-wise `d ∘ M` product).
pub fn scale_rows(d: &DVector<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= d[i];
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `σ′(x) = σ(x) σ(−x)`, accurate in both tails.
pub fn sigmoid_prime(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

/// `tanh′(x) = sech²(x)`. Unlike `1 − tanh²(x)` this keeps full relative
/// precision under saturation and only reaches zero for |x| ≳ 355.
pub fn sech2(x: f64) -> f64 {
    let c = x.cosh();
    1.0 / (c * c)
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

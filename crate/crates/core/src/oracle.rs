//! Brute-force exponent computations from an explicitly formed Jacobian
//! product. These use nalgebra's own factorizations so they stay
//! independent of the estimator's Householder QR.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn explicit_product(jacobians: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = jacobians
        .first()
        .ok_or_else(|| Error::Config("oracle needs at least one Jacobian".into()))?;
    let n = first.nrows();
    let mut product = DMatrix::<f64>::identity(n, n);
    for (t, j) in jacobians.iter().enumerate() {
        if j.shape() != (n, n) {
            return Err(Error::dim(
                format!("Jacobian {t}"),
                format!("{n}x{n}"),
                format!("{:?}", j.shape()),
            ));
        }
        product = j * product;
        if !product.iter().all(|v| v.is_finite()) {
            return Err(Error::ProductOverflow { steps: t + 1 });
        }
    }
    Ok(product)
}

/// `log |R_ii| / T` from a single QR of `J_T ⋯ J_1`, in column order.
pub fn product_qr_exponents(jacobians: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    let product = explicit_product(jacobians)?;
    let t = jacobians.len() as f64;
    let r = product.qr().r();
    let out: Vec<f64> = r.diagonal().iter().map(|d| d.abs().ln() / t).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::ProductOverflow { steps: jacobians.len() });
    }
    Ok(out)
}

/// `log σ_i / T` for the singular values of `J_T ⋯ J_1`, descending.
pub fn svd_exponents(jacobians: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    let product = explicit_product(jacobians)?;
    let t = jacobians.len() as f64;
    let mut sv: Vec<f64> = product.singular_values().iter().map(|s| s.ln() / t).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv.iter().any(|v| !v.is_finite()) {
        return Err(Error::ProductOverflow { steps: jacobians.len() });
    }
    Ok(sv)
}

/// `(1/T) Σ_t log |det J_t|`, the volume growth rate.
pub fn log_det_rate(jacobians: &[DMatrix<f64>]) -> Result<f64> {
    if jacobians.is_empty() {
        return Err(Error::Config("oracle needs at least one Jacobian".into()));
    }
    let mut total = 0.0;
    for j in jacobians {
        let det = j.clone().lu().determinant();
        total += det.abs().ln();
    }
    let rate = total / jacobians.len() as f64;
    if rate.is_finite() {
        Ok(rate)
    } else {
        Err(Error::NonFinite("log-determinant".into()))
    }
}

//! Reduced forms of a componentwise power nonlinearity `N(x) = x^p`.
//!
//! With `x ≈ U x~` the projected term is `W^T (U x~)^p`. Its coefficient
//! tensor has entries
//!
//! ```text
//! M^i[i1, .., ip] = sum_l weights[i, l] U[l, i1] ... U[l, ip]
//! ```
//!
//! with `weights = W^T` over all `n` rows, or `weights = E` over the `m`
//! DEIM rows. Contraction against `x~ ⊗ .. ⊗ x~` costs `O(k^{p+1})`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Result, RomError};

/// Degree-`p` coefficient tensor, stored `k x k^p` (last index fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct PolyTensor {
    pub p: u32,
    pub k: usize,
    pub coeffs: DMatrix<f64>,
}

fn check_degree(p: u32) -> Result<()> {
    if p < 2 {
        return Err(RomError::InvalidInput(format!("polynomial degree must be at least 2, got {p}")));
    }
    Ok(())
}

/// `x ⊗ x ⊗ .. ⊗ x` (`p` factors) with the last index varying fastest.
pub fn kron_power(x: &DVector<f64>, p: u32) -> DVector<f64> {
    let mut out = DVector::from_element(1, 1.0);
    for _ in 0..p {
        let mut next = DVector::zeros(out.len() * x.len());
        for (a, &oa) in out.iter().enumerate() {
            for (b, &xb) in x.iter().enumerate() {
                next[a * x.len() + b] = oa * xb;
            }
        }
        out = next;
    }
    out
}

/// Builds the tensor from `weights` (`k_out x L`) and row data `rows` (`L x k`).
pub fn build_poly_tensor(weights: &DMatrix<f64>, rows: &DMatrix<f64>, p: u32) -> Result<PolyTensor> {
    check_degree(p)?;
    check_len("weight columns", rows.nrows(), weights.ncols())?;
    let (len, k) = rows.shape();
    let width = k.pow(p - 1);
    let mut coeffs = DMatrix::zeros(weights.nrows(), k * width);
    // one block of k^{p-1} columns per leading index keeps memory at L x k^{p-1}
    let mut block = DMatrix::zeros(len, width);
    for lead in 0..k {
        for l in 0..len {
            let row = rows.row(l).transpose();
            let tail = kron_power(&row, p - 1);
            for c in 0..width {
                block[(l, c)] = rows[(l, lead)] * tail[c];
            }
        }
        coeffs.columns_mut(lead * width, width).copy_from(&(weights * &block));
    }
    Ok(PolyTensor { p, k, coeffs })
}

impl PolyTensor {
    pub fn evaluate(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("reduced coordinates", self.k, z.len())?;
        Ok(&self.coeffs * kron_power(z, self.p))
    }
}

/// `W^T (U z)^p` through the full grid.
pub fn standard_poly(w: &DMatrix<f64>, u: &DMatrix<f64>, z: &DVector<f64>, p: u32) -> Result<DVector<f64>> {
    check_degree(p)?;
    check_len("reduced coordinates", u.ncols(), z.len())?;
    let lifted = (u * z).map(|x| x.powi(p as i32));
    Ok(w.tr_mul(&lifted))
}

/// `E (U_m z)^p` on the sampled rows.
pub fn deim_poly(e: &DMatrix<f64>, um: &DMatrix<f64>, z: &DVector<f64>, p: u32) -> Result<DVector<f64>> {
    check_degree(p)?;
    check_len("reduced coordinates", um.ncols(), z.len())?;
    let sampled = (um * z).map(|x| x.powi(p as i32));
    Ok(e * sampled)
}

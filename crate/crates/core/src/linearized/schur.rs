use nalgebra::DMatrix;

use super::{LinearError, LinearizedOp};
use crate::lattice::Sector;

/// `(sign, log|det|)` of a square matrix by LU factorization.
pub fn log_det(m: &DMatrix<f64>) -> (f64, f64) {
    let lu = m.clone().lu();
    let mut sign: f64 = lu.p().determinant();
    let mut log = 0.0;
    let u = lu.u();
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        if d == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        sign *= d.signum();
        log += d.abs().ln();
    }
    (sign, log)
}

/// Effective minus-sector matrix `T₋₋ − T₋₊ T₊₊⁻¹ T₊₋`.
pub fn schur_effective(op: &LinearizedOp) -> Result<DMatrix<f64>, LinearError> {
    let np = op.sector_sites(Sector::Plus).len();
    let t = op.to_dense();
    let n = t.nrows();
    let tpp = t.view((0, 0), (np, np)).into_owned();
    let tpm = t.view((0, np), (np, n - np)).into_owned();
    let tmp = t.view((np, 0), (n - np, np)).into_owned();
    let tmm = t.view((np, np), (n - np, n - np)).into_owned();
    let min_eig = tpp
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let scale = tpp.amax().max(1.0);
    if !(min_eig > 1e-13 * scale) {
        return Err(LinearError::PlusBlockSingular { min_eig });
    }
    let x = tpp
        .lu()
        .solve(&tpm)
        .ok_or(LinearError::PlusBlockSingular { min_eig })?;
    Ok(tmm - tmp * x)
}

/// Eigenvalues of the symmetrized Schur matrix, ascending.
pub fn schur_eigenvalues(op: &LinearizedOp) -> Result<Vec<f64>, LinearError> {
    let s = schur_effective(op)?;
    let sym = (&s + s.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

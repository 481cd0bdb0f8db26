//! Linear solves for the quasi-Newton iterations: sparse direct LU (faer) or
//! restarted GMRES with a diagonal preconditioner.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::MatMut;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RomError};
use crate::operators::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LinearSolverKind {
    #[default]
    DirectSparse,
    IterativeRestartedResidual,
}

/// Square sparse matrix accumulated as coordinate triplets.
#[derive(Clone, Debug, Default)]
pub struct TripletMatrix {
    pub dim: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl TripletMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, cap: usize) -> Self {
        Self {
            dim,
            entries: Vec::with_capacity(cap),
        }
    }

    /// Adds `val` at `(row, col)`; duplicates are summed.
    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        self.entries.push(Triplet::new(row, col, val));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        SparseColMat::try_new_from_triplets(self.dim, self.dim, &self.entries)
            .map_err(|e| RomError::InvalidInput(format!("sparse assembly failed: {e:?}")))
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.dim];
        for t in &self.entries {
            rows[t.row].push((t.col, t.val));
        }
        CsrMatrix::from_rows(self.dim, self.dim, rows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmresParams {
    pub restart: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for GmresParams {
    fn default() -> Self {
        Self {
            restart: 60,
            max_iters: 2000,
            rel_tol: 1e-13,
        }
    }
}

/// A factorized (or preconditioned) linear operator ready for repeated solves.
pub enum LinearSolver {
    Direct(Lu<usize, f64>),
    Gmres {
        matrix: CsrMatrix,
        inv_diag: Vec<f64>,
        params: GmresParams,
    },
}

/// Caches the symbolic LU analysis of a fixed sparsity pattern.
#[derive(Default)]
pub struct LuCache {
    symbolic: Option<(Vec<usize>, Vec<usize>, SymbolicLu<usize>)>,
}

impl LinearSolver {
    pub fn factorize(
        kind: LinearSolverKind,
        a: &TripletMatrix,
        cache: &mut LuCache,
        gmres: GmresParams,
    ) -> Result<Self> {
        match kind {
            LinearSolverKind::DirectSparse => {
                let m = a.to_faer()?;
                let pattern = m.symbolic();
                let symbolic = match &cache.symbolic {
                    Some((col_ptr, row_idx, s))
                        if col_ptr.as_slice() == pattern.col_ptr()
                            && row_idx.as_slice() == pattern.row_idx() =>
                    {
                        s.clone()
                    }
                    _ => {
                        let s = SymbolicLu::try_new(pattern).map_err(|e| {
                            RomError::Singular(format!("symbolic LU failed: {e:?}"))
                        })?;
                        cache.symbolic = Some((
                            pattern.col_ptr().to_vec(),
                            pattern.row_idx().to_vec(),
                            s.clone(),
                        ));
                        s
                    }
                };
                let lu = Lu::try_new_with_symbolic(symbolic, m.as_ref())
                    .map_err(|e| RomError::Singular(format!("numeric LU failed: {e:?}")))?;
                Ok(LinearSolver::Direct(lu))
            }
            LinearSolverKind::IterativeRestartedResidual => {
                let matrix = a.to_csr();
                let mut inv_diag = vec![1.0; a.dim];
                for (r, d) in inv_diag.iter_mut().enumerate() {
                    let diag: f64 = matrix.row(r).filter(|&(c, _)| c == r).map(|(_, v)| v).sum();
                    if diag.abs() < f64::MIN_POSITIVE {
                        return Err(RomError::Singular(format!("zero diagonal in row {r}")));
                    }
                    *d = 1.0 / diag;
                }
                Ok(LinearSolver::Gmres {
                    matrix,
                    inv_diag,
                    params: gmres,
                })
            }
        }
    }

    /// Overwrites `rhs` with the solution of `A x = rhs`.
    pub fn solve_in_place(&self, rhs: &mut [f64]) -> Result<()> {
        match self {
            LinearSolver::Direct(lu) => {
                let n = rhs.len();
                let mat = MatMut::from_column_major_slice_mut(rhs, n, 1);
                lu.solve_in_place(mat);
            }
            LinearSolver::Gmres {
                matrix,
                inv_diag,
                params,
            } => {
                let b = rhs.to_vec();
                let x = gmres(matrix, inv_diag, &b, params)?;
                rhs.copy_from_slice(&x);
            }
        }
        if rhs.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(RomError::Singular("linear solve produced non-finite values".into()))
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned restarted GMRES, `A M^{-1} y = b`, `x = M^{-1} y`,
/// with `M = diag(A)`.
pub fn gmres(a: &CsrMatrix, inv_diag: &[f64], b: &[f64], p: &GmresParams) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let m = p.restart.max(1);
    let mut total = 0;
    let mut r = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut w = vec![0.0; n];
    loop {
        a.mul_slice_into(&x, &mut tmp);
        for i in 0..n {
            r[i] = b[i] - tmp[i];
        }
        let beta = norm(&r);
        if beta <= p.rel_tol * bnorm {
            return Ok(x);
        }
        if total >= p.max_iters {
            return Err(RomError::NonConvergence {
                iterations: total,
                residual: beta / bnorm,
            });
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut used = 0;
        for j in 0..m {
            for i in 0..n {
                tmp[i] = basis[j][i] * inv_diag[i];
            }
            a.mul_slice_into(&tmp, &mut w);
            // modified Gram-Schmidt
            for (i, q) in basis.iter().enumerate() {
                let hij = dot(&w, q);
                h[i][j] = hij;
                for (wk, qk) in w.iter_mut().zip(q) {
                    *wk -= hij * qk;
                }
            }
            let hn = norm(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if denom == 0.0 {
                return Err(RomError::Singular("GMRES breakdown".into()));
            }
            cs[j] = h[j][j] / denom;
            sn[j] = h[j + 1][j] / denom;
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            total += 1;
            if g[j + 1].abs() <= p.rel_tol * bnorm || hn == 0.0 || total >= p.max_iters {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        // back substitution for the Krylov coefficients
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for k in i + 1..used {
                s -= h[i][k] * y[k];
            }
            y[i] = s / h[i][i];
        }
        for (k, yk) in y.iter().enumerate() {
            for i in 0..n {
                x[i] += yk * basis[k][i] * inv_diag[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> TripletMatrix {
        let mut t = TripletMatrix::new(n);
        for i in 0..n {
            t.push(i, i, 4.0 + i as f64 * 0.1);
            if i > 0 {
                t.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                t.push(i, i + 1, -1.5);
            }
        }
        t
    }

    #[test]
    fn direct_and_gmres_agree() {
        let a = tridiag(40);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut cache = LuCache::default();
        let mut x1 = b.clone();
        LinearSolver::factorize(LinearSolverKind::DirectSparse, &a, &mut cache, GmresParams::default())
            .unwrap()
            .solve_in_place(&mut x1)
            .unwrap();
        let mut x2 = b.clone();
        let params = GmresParams {
            restart: 7,
            ..Default::default()
        };
        LinearSolver::factorize(LinearSolverKind::IterativeRestartedResidual, &a, &mut cache, params)
            .unwrap()
            .solve_in_place(&mut x2)
            .unwrap();
        let csr = a.to_csr();
        let mut ax = vec![0.0; 40];
        csr.mul_slice_into(&x1, &mut ax);
        for i in 0..40 {
            assert!((ax[i] - b[i]).abs() < 1e-12);
            assert!((x1[i] - x2[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn symbolic_cache_is_reused() {
        let a = tridiag(10);
        let mut cache = LuCache::default();
        LinearSolver::factorize(LinearSolverKind::DirectSparse, &a, &mut cache, GmresParams::default())
            .unwrap();
        assert!(cache.symbolic.is_some());
        let mut x = vec![1.0; 10];
        LinearSolver::factorize(LinearSolverKind::DirectSparse, &a, &mut cache, GmresParams::default())
            .unwrap()
            .solve_in_place(&mut x)
            .unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn singular_is_reported() {
        let mut a = TripletMatrix::new(2);
        a.push(0, 0, 1.0);
        a.push(0, 1, 1.0);
        a.push(1, 0, 1.0);
        a.push(1, 1, 1.0);
        let mut cache = LuCache::default();
        let res = LinearSolver::factorize(
            LinearSolverKind::DirectSparse,
            &a,
            &mut cache,
            GmresParams::default(),
        )
        .and_then(|s| {
            let mut x = vec![1.0, 2.0];
            s.solve_in_place(&mut x)
        });
        assert!(res.is_err());
    }
}

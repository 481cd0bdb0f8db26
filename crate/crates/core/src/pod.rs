//! POD bases from snapshot matrices.
//!
//! The primary route is the thin SVD of the (optionally centered) snapshot
//! matrix. The method-of-snapshots route builds the `Nt x Nt` correlation
//! matrix `K_ij = <x_i - xbar, x_j - xbar>`, takes its eigenvectors and maps
//! them back to state space. Both produce the same subspace.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, RomError};

/// How many modes to keep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModeSelector {
    Fixed(usize),
    /// Smallest `k` with `I(k) >= gamma`.
    Energy(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PodRoute {
    #[default]
    Svd,
    SnapshotCorrelation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PodBasis {
    /// Trial basis `U`, `n x k`, orthonormal columns.
    pub trial: DMatrix<f64>,
    /// Test basis `W` when it differs from `U` (Petrov-Galerkin).
    pub test: Option<DMatrix<f64>>,
    /// Centering vector, zero when snapshots were not centered.
    pub mean: DVector<f64>,
    /// Eigenvalues `lambda_i` (squared singular values), nonincreasing.
    pub spectrum: Vec<f64>,
    /// Energy fraction requested when the size was chosen by energy.
    pub gamma: Option<f64>,
}

impl PodBasis {
    pub fn n(&self) -> usize {
        self.trial.nrows()
    }

    pub fn k(&self) -> usize {
        self.trial.ncols()
    }

    /// Test basis `W` (equal to `U` under Galerkin projection).
    pub fn test_basis(&self) -> &DMatrix<f64> {
        self.test.as_ref().unwrap_or(&self.trial)
    }

    /// Installs a Petrov-Galerkin test basis; requires `W^T U = I`.
    pub fn with_test_basis(mut self, w: DMatrix<f64>) -> Result<Self> {
        if w.shape() != self.trial.shape() {
            return Err(RomError::DimensionMismatch {
                context: "test basis",
                expected: self.trial.ncols(),
                actual: w.ncols(),
            });
        }
        let dev = (w.transpose() * &self.trial - DMatrix::identity(self.k(), self.k())).amax();
        if dev > 1e-10 {
            return Err(RomError::InvalidInput(format!(
                "test basis violates W^T U = I (max deviation {dev:e})"
            )));
        }
        self.test = Some(w);
        Ok(self)
    }

    /// Keeps only the leading `k` modes.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.k() {
            return Err(RomError::RankExceeded {
                requested: k,
                rank: self.k(),
            });
        }
        Ok(Self {
            trial: self.trial.columns(0, k).into_owned(),
            test: self.test.as_ref().map(|w| w.columns(0, k).into_owned()),
            mean: self.mean.clone(),
            spectrum: self.spectrum.clone(),
            gamma: self.gamma,
        })
    }

    /// `W^T (x - xbar)`.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.test_basis().tr_mul(&(x - &self.mean))
    }

    /// `xbar + U x~`.
    pub fn lift(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.trial * coeffs
    }
}

/// Row-wise mean and the snapshot matrix with the mean removed from each column.
pub fn center_snapshots(snaps: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let nt = snaps.ncols().max(1) as f64;
    let mean = snaps.column_sum() / nt;
    let mut centered = snaps.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    (centered, mean)
}

/// `I(m) = sum_{i<=m} lambda_i / sum_i lambda_i`.
pub fn energy_index(spectrum: &[f64], m: usize) -> Result<f64> {
    if m == 0 || m > spectrum.len() {
        return Err(RomError::InvalidInput(format!(
            "energy index needs 1 <= m <= {}, got {m}",
            spectrum.len()
        )));
    }
    let total: f64 = spectrum.iter().sum();
    if !(total > 0.0) {
        return Err(RomError::ZeroSpectrum);
    }
    if m == spectrum.len() {
        return Ok(1.0);
    }
    Ok(spectrum[..m].iter().sum::<f64>() / total)
}

/// Smallest `m` with `I(m) >= gamma`.
pub fn modes_for_energy(spectrum: &[f64], gamma: f64) -> Result<usize> {
    let total: f64 = spectrum.iter().sum();
    if !(total > 0.0) {
        return Err(RomError::ZeroSpectrum);
    }
    let mut acc = 0.0;
    for (i, l) in spectrum.iter().enumerate() {
        acc += l;
        if acc / total >= gamma {
            return Ok(i + 1);
        }
    }
    Ok(spectrum.len())
}

/// Number of singular values above `s_max * max(rows, cols) * eps`.
pub fn numerical_rank(singular_values: &[f64], rows: usize, cols: usize) -> usize {
    let smax = singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * rows.max(cols) as f64 * f64::EPSILON;
    singular_values.iter().filter(|&&s| s > tol).count()
}

/// Makes the largest-magnitude entry of every column positive.
pub fn fix_signs(basis: &mut DMatrix<f64>) {
    for mut col in basis.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Left singular vectors and singular values, sorted nonincreasing.
pub fn thin_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (n, nt) = a.shape();
    let r = n.min(nt);
    if r == 0 {
        return (DMatrix::zeros(n, 0), Vec::new());
    }
    let m = faer::Mat::<f64>::from_fn(n, nt, |i, j| a[(i, j)]);
    let svd = match m.thin_svd() {
        Ok(svd) => svd,
        // only non-convergence can fail
        Err(_) => return snapshot_correlation_modes(a),
    };
    let (u, s) = (svd.U(), svd.S().column_vector());
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let sv = order.iter().map(|&i| s[i]).collect();
    (DMatrix::from_fn(n, r, |row, c| u[(row, order[c])]), sv)
}

fn select_k(selector: ModeSelector, spectrum: &[f64], rank: usize) -> Result<usize> {
    match selector {
        ModeSelector::Fixed(k) => {
            if k > rank {
                Err(RomError::RankExceeded { requested: k, rank })
            } else {
                Ok(k)
            }
        }
        ModeSelector::Energy(gamma) => {
            if !(0.0..=1.0).contains(&gamma) {
                return Err(RomError::InvalidInput(format!("gamma must lie in [0, 1], got {gamma}")));
            }
            Ok(modes_for_energy(spectrum, gamma)?.min(rank.max(1)))
        }
    }
}

/// POD basis of an already centered snapshot matrix via the thin SVD.
pub fn compute_pod_basis(centered: &DMatrix<f64>, selector: ModeSelector) -> Result<PodBasis> {
    compute_pod_basis_with(centered, selector, PodRoute::Svd)
}

pub fn compute_pod_basis_with(
    centered: &DMatrix<f64>,
    selector: ModeSelector,
    route: PodRoute,
) -> Result<PodBasis> {
    let (n, nt) = centered.shape();
    let (modes, singular) = match route {
        PodRoute::Svd => thin_svd(centered),
        PodRoute::SnapshotCorrelation => snapshot_correlation_modes(centered),
    };
    let rank = numerical_rank(&singular, n, nt);
    let spectrum: Vec<f64> = singular.iter().map(|s| s * s).collect();
    let k = select_k(selector, &spectrum, rank)?;
    let mut trial = modes.columns(0, k).into_owned();
    fix_signs(&mut trial);
    Ok(PodBasis {
        trial,
        test: None,
        mean: DVector::zeros(n),
        spectrum,
        gamma: match selector {
            ModeSelector::Energy(g) => Some(g),
            ModeSelector::Fixed(_) => None,
        },
    })
}

/// Centers (optionally) and computes the POD basis of raw snapshots.
pub fn build_pod_basis(snaps: &DMatrix<f64>, selector: ModeSelector, centering: bool) -> Result<PodBasis> {
    if centering {
        let (centered, mean) = center_snapshots(snaps);
        let mut basis = compute_pod_basis(&centered, selector)?;
        basis.mean = mean;
        Ok(basis)
    } else {
        compute_pod_basis(snaps, selector)
    }
}

/// Bases of `u`, `v`, `phi` sharing one size `k`.
///
/// With an energy selector each variable asks for its own smallest `k`; the
/// largest of the three is used, capped by the smallest numerical rank.
pub fn build_state_bases(states: &[DMatrix<f64>; 3], selector: ModeSelector, centering: bool) -> Result<[PodBasis; 3]> {
    let mut full = Vec::with_capacity(3);
    for snaps in states {
        let (centered, mean) = if centering {
            center_snapshots(snaps)
        } else {
            (snaps.clone(), DVector::zeros(snaps.nrows()))
        };
        let (modes, singular) = thin_svd(&centered);
        let rank = numerical_rank(&singular, centered.nrows(), centered.ncols());
        let mut trial = modes.columns(0, rank).into_owned();
        fix_signs(&mut trial);
        full.push(PodBasis {
            trial,
            test: None,
            mean,
            spectrum: singular.iter().map(|s| s * s).collect(),
            gamma: None,
        });
    }
    let min_rank = full.iter().map(PodBasis::k).min().unwrap_or(0);
    let k = match selector {
        ModeSelector::Fixed(k) => k,
        ModeSelector::Energy(_) => {
            let mut k = 0;
            for b in &full {
                k = k.max(select_k(selector, &b.spectrum, b.k())?);
            }
            k.min(min_rank)
        }
    };
    if k == 0 || k > min_rank {
        return Err(RomError::RankExceeded {
            requested: k,
            rank: min_rank,
        });
    }
    let mut out = Vec::with_capacity(3);
    for b in &full {
        let mut t = b.truncated(k)?;
        if let ModeSelector::Energy(g) = selector {
            t.gamma = Some(g);
        }
        out.push(t);
    }
    Ok(out.try_into().expect("three bases"))
}

/// Method of snapshots: eigen-decomposition of `X^T X`, modes `X v_i / sqrt(lambda_i)`.
///
/// Returns the modes for the nonzero eigenvalues and the implied singular
/// values for the full spectrum.
fn snapshot_correlation_modes(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (n, nt) = x.shape();
    let k = x.transpose() * x;
    let eig = SymmetricEigen::new(k);
    let mut order: Vec<usize> = (0..nt).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let singular: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
        .take(n.min(nt))
        .collect();
    let rank = numerical_rank(&singular, n, nt);
    let cols: Vec<DVector<f64>> = order[..rank]
        .iter()
        .map(|&i| {
            let mut c = x * eig.eigenvectors.column(i);
            let nrm = c.norm();
            c /= nrm;
            c
        })
        .collect();
    let modes = if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    (modes, singular)
}

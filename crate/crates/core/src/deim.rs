//! Discrete empirical interpolation of the projected nonlinear terms.
//!
//! Each of the six terms gets its own basis `V` (leading left singular
//! vectors of the raw term snapshots), a greedy set of `m` interpolation
//! rows `P`, and the projector `E = W^T V (P^T V)^{-1}`. The reduced term is
//! then `E` applied to the products evaluated on the sampled rows only.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Result, RomError};
use crate::pod::{fix_signs, numerical_rank, thin_svd};
use crate::rom::{ProductTensor, ReducedCoriolis, ReducedSpace, ReducedState, TensorCoefficients, TermTensors};
use crate::swe::{NonlinearTerm, Var};

/// Greedy interpolation indices of the columns of `v`.
pub fn deim_select_points(v: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (n, m) = v.shape();
    if m == 0 || m > n {
        return Err(RomError::InvalidInput(format!("cannot select {m} points from {n} rows")));
    }
    let mut points = Vec::with_capacity(m);
    points.push(argmax_abs(v.column(0).iter().copied()).ok_or_else(|| RomError::DeimBreakdown {
        stage: 1,
        reason: "first basis vector is zero".into(),
    })?);
    for j in 1..m {
        let pv = DMatrix::from_fn(j, j, |r, c| v[(points[r], c)]);
        let rhs = DVector::from_fn(j, |r, _| v[(points[r], j)]);
        let c = pv.lu().solve(&rhs).ok_or_else(|| RomError::DeimBreakdown {
            stage: j + 1,
            reason: "singular interpolation system".into(),
        })?;
        let residual = v.column(j) - v.columns(0, j) * c;
        let p = argmax_abs(residual.iter().copied()).ok_or_else(|| RomError::DeimBreakdown {
            stage: j + 1,
            reason: "basis vector lies in the span of the previous ones".into(),
        })?;
        if points.contains(&p) {
            return Err(RomError::DeimBreakdown {
                stage: j + 1,
                reason: format!("index {p} selected twice"),
            });
        }
        points.push(p);
    }
    Ok(points)
}

/// Index of the largest magnitude (lowest index on ties); `None` if all zero.
fn argmax_abs(it: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best = None;
    let mut best_val = 0.0;
    for (i, x) in it.enumerate() {
        if x.abs() > best_val {
            best_val = x.abs();
            best = Some(i);
        }
    }
    best
}

/// Gathers the given rows of `a` (the action of `P^T`).
pub fn gather_rows(a: &DMatrix<f64>, points: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), a.ncols(), |r, c| a[(points[r], c)])
}

pub fn gather(v: &DVector<f64>, points: &[usize]) -> DVector<f64> {
    DVector::from_iterator(points.len(), points.iter().map(|&p| v[p]))
}

/// `E = W^T V (P^T V)^{-1}` and the 2-norm condition number of `P^T V`.
pub fn deim_projector(w: &DMatrix<f64>, v: &DMatrix<f64>, points: &[usize]) -> Result<(DMatrix<f64>, f64)> {
    check_len("DEIM basis rows", w.nrows(), v.nrows())?;
    check_len("DEIM points", v.ncols(), points.len())?;
    if let Some(&p) = points.iter().find(|&&p| p >= v.nrows()) {
        return Err(RomError::InvalidInput(format!("DEIM point {p} outside [0, {})", v.nrows())));
    }
    let ptv = gather_rows(v, points);
    let sv = ptv.singular_values();
    let cond = sv.max() / sv.min();
    if !cond.is_finite() || cond > 1.0 / f64::EPSILON {
        return Err(RomError::Singular(format!("P^T V (condition number {cond:e})")));
    }
    // E^T = (P^T V)^{-T} V^T W
    let et = ptv
        .transpose()
        .lu()
        .solve(&v.tr_mul(w))
        .ok_or_else(|| RomError::Singular("P^T V".into()))?;
    Ok((et.transpose(), cond))
}

/// Sampled factors of one quadratic product.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledProduct {
    pub coef: f64,
    pub left: Var,
    pub right: Var,
    /// `P^T A`, `m x k`.
    pub a: DMatrix<f64>,
    /// `P^T D B`, `m x k`.
    pub db: DMatrix<f64>,
    pub abar: DVector<f64>,
    pub dbbar: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeimOperator {
    pub term: NonlinearTerm,
    /// Term basis `V`, `n x m`.
    pub basis: DMatrix<f64>,
    pub points: Vec<usize>,
    /// `W^T V (P^T V)^{-1}`, `k x m`.
    pub e: DMatrix<f64>,
    pub products: Vec<SampledProduct>,
    pub condition: f64,
}

impl DeimOperator {
    pub fn m(&self) -> usize {
        self.points.len()
    }

    pub fn k(&self) -> usize {
        self.e.nrows()
    }
}

/// Projector plus the sampled rows of every factor the term needs.
pub fn build_deim_operator(
    term: NonlinearTerm,
    space: &ReducedSpace,
    basis: DMatrix<f64>,
    points: Vec<usize>,
) -> Result<DeimOperator> {
    check_len("DEIM basis rows", space.n(), basis.nrows())?;
    let (e, condition) = deim_projector(space.basis(term.equation()).test_basis(), &basis, &points)?;
    let dir = term.direction();
    let products = term
        .products()
        .iter()
        .map(|p| SampledProduct {
            coef: p.coef,
            left: p.left,
            right: p.right,
            a: gather_rows(&space.basis(p.left).trial, &points),
            db: gather_rows(space.d_trial(dir, p.right), &points),
            abar: gather(&space.basis(p.left).mean, &points),
            dbbar: gather(space.d_mean(dir, p.right), &points),
        })
        .collect();
    Ok(DeimOperator {
        term,
        basis,
        points,
        e,
        products,
        condition,
    })
}

/// DEIM approximation of the projected term, cost `O(k m)`.
pub fn deim_nonlinear(term: NonlinearTerm, z: &ReducedState, op: &DeimOperator) -> Result<DVector<f64>> {
    if term != op.term {
        return Err(RomError::InvalidInput(format!(
            "DEIM operator built for {} used for {}",
            op.term.name(),
            term.name()
        )));
    }
    for v in Var::ALL {
        check_len("reduced state", op.k(), z.field(v).len())?;
    }
    let mut sampled = DVector::zeros(op.m());
    for p in &op.products {
        let a = &p.a * z.field(p.left) + &p.abar;
        let db = &p.db * z.field(p.right) + &p.dbbar;
        sampled.zip_zip_apply(&a, &db, |o, x, y| *o += p.coef * x * y);
    }
    Ok(&op.e * sampled)
}

/// Tensors of one term summed over the `m` sampled rows only.
pub fn deim_term_tensors(op: &DeimOperator) -> TermTensors {
    let products = op
        .products
        .iter()
        .zip(op.term.products())
        .map(|(s, p)| ProductTensor::from_rows(p, &op.e, &s.a, &s.db, &s.abar, &s.dbbar))
        .collect();
    TermTensors { term: op.term, products }
}

/// All six DEIM operators with the singular values of each term's snapshots.
#[derive(Clone, Debug)]
pub struct DeimSet {
    pub operators: Vec<DeimOperator>,
    pub spectra: Vec<Vec<f64>>,
}

impl DeimSet {
    pub fn operator(&self, term: NonlinearTerm) -> &DeimOperator {
        &self.operators[term.index()]
    }

    /// Tensors summed over the sampled rows; the linear Coriolis part is exact.
    pub fn tensor_coefficients(&self, coriolis: &ReducedCoriolis) -> TensorCoefficients {
        TensorCoefficients {
            k: self.operators[0].k(),
            terms: self.operators.iter().map(deim_term_tensors).collect(),
            coriolis: coriolis.clone(),
        }
    }
}

pub fn deim_tensor_coefficients(set: &DeimSet, coriolis: &ReducedCoriolis) -> TensorCoefficients {
    set.tensor_coefficients(coriolis)
}

/// Left singular vectors and singular values of uncentered term snapshots.
pub fn term_basis(snaps: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (mut u, s) = thin_svd(snaps);
    fix_signs(&mut u);
    (u, s)
}

/// Numerical rank of a term snapshot matrix.
pub fn term_rank(snaps: &DMatrix<f64>) -> usize {
    let (_, s) = thin_svd(snaps);
    numerical_rank(&s, snaps.nrows(), snaps.ncols())
}

/// Builds the six operators with `ms[t]` points for term `t`.
pub fn build_deim_set_with(space: &ReducedSpace, snapshots: &[DMatrix<f64>; 6], ms: [usize; 6]) -> Result<DeimSet> {
    let mut operators = Vec::with_capacity(6);
    let mut spectra = Vec::with_capacity(6);
    for term in NonlinearTerm::ALL {
        let snaps = &snapshots[term.index()];
        check_len("term snapshot rows", space.n(), snaps.nrows())?;
        let m = ms[term.index()];
        let (u, s) = term_basis(snaps);
        let rank = numerical_rank(&s, snaps.nrows(), snaps.ncols());
        if m > rank {
            return Err(RomError::RankExceeded { requested: m, rank });
        }
        let basis = u.columns(0, m).into_owned();
        let points = deim_select_points(&basis)?;
        operators.push(build_deim_operator(term, space, basis, points)?);
        spectra.push(s);
    }
    Ok(DeimSet { operators, spectra })
}

/// Builds the six operators with a common number of points `m`.
pub fn build_deim_set(space: &ReducedSpace, snapshots: &[DMatrix<f64>; 6], m: usize) -> Result<DeimSet> {
    build_deim_set_with(space, snapshots, [m; 6])
}

/// Per-node maximum over time of `|term|`.
pub fn max_over_time(snaps: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(snaps.nrows(), snaps.row_iter().map(|r| r.amax()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, PhysicalConstants};
    use crate::operators::build_operators;
    use crate::pod::{build_pod_basis, ModeSelector};
    use crate::rom::{build_tensor_coefficients, standard_pod_nonlinear};
    use crate::swe::{eval_nonlinear, CoriolisField};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn orthonormal(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        a.qr().q()
    }

    fn space(k: usize, centered: bool, seed: u64) -> ReducedSpace {
        let g = Grid::new(5, 5, 1.0, 1.0).unwrap();
        let ops = build_operators(&g);
        let f = CoriolisField::new(&g, &PhysicalConstants::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bases = [0, 1, 2].map(|_| {
            let s = DMatrix::from_fn(25, k + 2, |_, _| rng.random_range(-1.0..1.0));
            build_pod_basis(&s, ModeSelector::Fixed(k), centered).unwrap()
        });
        ReducedSpace::new(bases, &ops, &f).unwrap()
    }

    fn random_state(k: usize, rng: &mut ChaCha8Rng) -> ReducedState {
        let mut r = || DVector::from_fn(k, |_, _| rng.random_range(-2.0..2.0));
        ReducedState {
            u: r(),
            v: r(),
            phi: r(),
            time: 0.0,
        }
    }

    #[test]
    fn unit_vector_selects_its_index() {
        let mut v = DMatrix::zeros(6, 1);
        v[(4, 0)] = 1.0;
        assert_eq!(deim_select_points(&v).unwrap(), vec![4]);
        let mut v = DMatrix::zeros(6, 2);
        v[(0, 0)] = 1.0;
        v[(1, 1)] = 1.0;
        assert_eq!(deim_select_points(&v).unwrap(), vec![0, 1]);
    }

    #[test]
    fn ties_take_lowest_index() {
        let v = DMatrix::from_column_slice(4, 1, &[0.5, -0.5, 0.5, 0.5]);
        assert_eq!(deim_select_points(&v).unwrap(), vec![0]);
    }

    #[test]
    fn dependent_columns_break_down() {
        let c = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let v = DMatrix::from_columns(&[c.clone(), c * 2.0]);
        match deim_select_points(&v) {
            Err(RomError::DeimBreakdown { stage, .. }) => assert_eq!(stage, 2),
            other => panic!("{other:?}"),
        }
    }

    // greedy recursion written out with explicit loops and Cramer-free Gaussian elimination
    fn greedy_oracle(v: &DMatrix<f64>) -> Vec<usize> {
        let (n, m) = v.shape();
        let mut pts: Vec<usize> = Vec::new();
        for j in 0..m {
            let mut r: Vec<f64> = (0..n).map(|i| v[(i, j)]).collect();
            if j > 0 {
                let mut a = vec![vec![0.0; j + 1]; j];
                for (row, &p) in pts.iter().enumerate() {
                    for c in 0..j {
                        a[row][c] = v[(p, c)];
                    }
                    a[row][j] = v[(p, j)];
                }
                for col in 0..j {
                    let piv = (col..j).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
                    a.swap(col, piv);
                    for row in col + 1..j {
                        let f = a[row][col] / a[col][col];
                        for c in col..=j {
                            a[row][c] -= f * a[col][c];
                        }
                    }
                }
                let mut c = vec![0.0; j];
                for row in (0..j).rev() {
                    let mut s = a[row][j];
                    for cc in row + 1..j {
                        s -= a[row][cc] * c[cc];
                    }
                    c[row] = s / a[row][row];
                }
                for (i, ri) in r.iter_mut().enumerate() {
                    for (cc, ci) in c.iter().enumerate() {
                        *ri -= v[(i, cc)] * ci;
                    }
                }
            }
            let mut best = 0;
            for i in 1..n {
                if r[i].abs() > r[best].abs() {
                    best = i;
                }
            }
            pts.push(best);
        }
        pts
    }

    #[test]
    fn selection_matches_loop_oracle() {
        for seed in 0..5 {
            let v = orthonormal(10, 3, seed);
            assert_eq!(deim_select_points(&v).unwrap(), greedy_oracle(&v));
        }
        let v = orthonormal(40, 12, 99);
        assert_eq!(deim_select_points(&v).unwrap(), greedy_oracle(&v));
    }

    #[test]
    fn projector_identity_case() {
        let mut v = DMatrix::zeros(5, 2);
        v[(1, 0)] = 1.0;
        v[(3, 1)] = 1.0;
        let (e, cond) = deim_projector(&v, &v, &[1, 3]).unwrap();
        assert!((e - DMatrix::identity(2, 2)).amax() < 1e-15);
        assert!((cond - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projector_scalar_case() {
        let v = DMatrix::from_column_slice(3, 1, &[0.6, 0.0, 0.8]);
        let w = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let (e, _) = deim_projector(&w, &v, &[2]).unwrap();
        // (0.6 + 2.4) / 0.8
        assert!((e[(0, 0)] - 3.75).abs() < 1e-14);
    }

    #[test]
    fn projector_matches_dense_oracle() {
        let w = orthonormal(25, 3, 7);
        let v = orthonormal(25, 3, 8);
        let pts = deim_select_points(&v).unwrap();
        let (e, _) = deim_projector(&w, &v, &pts).unwrap();
        let mut p = DMatrix::zeros(25, 3);
        for (c, &r) in pts.iter().enumerate() {
            p[(r, c)] = 1.0;
        }
        let want = w.transpose() * &v * (p.transpose() * &v).try_inverse().unwrap();
        assert!((&e - &want).amax() < 1e-12);
        // reconstruction E (P^T V) = W^T V
        assert!((e * (p.transpose() * &v) - w.transpose() * &v).amax() < 1e-12);
    }

    #[test]
    fn invalid_points_rejected() {
        let v = orthonormal(6, 2, 1);
        assert!(deim_projector(&v, &v, &[0, 9]).is_err());
        assert!(deim_projector(&v, &v, &[0]).is_err());
        assert!(deim_projector(&v, &v, &[2, 2]).is_err());
    }

    fn random_snapshots(sp: &ReducedSpace, count: usize, seed: u64) -> [DMatrix<f64>; 6] {
        let g = sp.grid;
        let ops = build_operators(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states: Vec<_> = (0..count).map(|_| sp.lift(&random_state(sp.k(), &mut rng))).collect();
        NonlinearTerm::ALL.map(|t| {
            let cols: Vec<_> = states.iter().map(|s| eval_nonlinear(t, s, &ops).unwrap()).collect();
            DMatrix::from_columns(&cols)
        })
    }

    #[test]
    fn sampled_tensors_reproduce_deim_evaluation() {
        for centered in [false, true] {
            let sp = space(3, centered, 11);
            let snaps = random_snapshots(&sp, 8, 12);
            let set = build_deim_set(&sp, &snaps, 3).unwrap();
            let tensors = set.tensor_coefficients(&sp.coriolis);
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            for _ in 0..20 {
                let z = random_state(3, &mut rng);
                for term in NonlinearTerm::ALL {
                    let d = deim_nonlinear(term, &z, set.operator(term)).unwrap();
                    let t = tensors.term(term).evaluate(&z);
                    assert!((&d - &t).norm() <= 1e-12 * (1.0 + d.norm()));
                }
            }
        }
    }

    #[test]
    fn full_sampling_reduces_to_projected_tensors() {
        let sp = space(2, true, 21);
        let projected = build_tensor_coefficients(&sp);
        let ident = DMatrix::<f64>::identity(25, 25);
        for term in NonlinearTerm::ALL {
            let op = build_deim_operator(term, &sp, ident.clone(), (0..25).collect()).unwrap();
            let sampled = deim_term_tensors(&op);
            for (a, b) in sampled.products.iter().zip(&projected.term(term).products) {
                assert!((&a.quad - &b.quad).amax() < 1e-12);
                assert!((&a.lin_left - &b.lin_left).amax() < 1e-12);
                assert!((&a.constant - &b.constant).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn scalar_tensor_entry() {
        let sp = space(1, false, 31);
        let snaps = random_snapshots(&sp, 3, 32);
        let set = build_deim_set(&sp, &snaps, 1).unwrap();
        let op = set.operator(NonlinearTerm::F12);
        let t = deim_term_tensors(op);
        let s = &op.products[0];
        let want = op.e[(0, 0)] * s.a[(0, 0)] * s.db[(0, 0)];
        assert!((t.products[0].quad[(0, 0)] - want).abs() < 1e-15);
    }

    #[test]
    fn exact_when_term_in_span() {
        let sp = space(3, true, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let ops = build_operators(&sp.grid);
        // enough snapshots that every reachable term value lies in span(V)
        let rich = random_snapshots(&sp, 60, 44);
        let ms = rich.each_ref().map(term_rank);
        let set = build_deim_set_with(&sp, &rich, ms).unwrap();
        for _ in 0..5 {
            let z = random_state(3, &mut rng);
            let lifted = sp.lift(&z);
            for term in NonlinearTerm::ALL {
                let exact = sp.basis(term.equation()).test_basis().tr_mul(&eval_nonlinear(term, &lifted, &ops).unwrap());
                let d = deim_nonlinear(term, &z, set.operator(term)).unwrap();
                let s = standard_pod_nonlinear(term, &z, &sp).unwrap();
                assert!((&d - &exact).amax() <= 1e-9 * (1.0 + exact.amax()));
                assert!((&s - &exact).amax() <= 1e-12 * (1.0 + exact.amax()));
            }
        }
    }

    #[test]
    fn zero_state_gives_zero() {
        let sp = space(2, false, 51);
        let snaps = random_snapshots(&sp, 5, 52);
        let set = build_deim_set(&sp, &snaps, 2).unwrap();
        let z = ReducedState::zeros(2);
        for term in NonlinearTerm::ALL {
            assert_eq!(deim_nonlinear(term, &z, set.operator(term)).unwrap().amax(), 0.0);
        }
        assert!(deim_nonlinear(NonlinearTerm::F11, &z, set.operator(NonlinearTerm::F12)).is_err());
    }

    #[test]
    fn too_many_points_rejected() {
        let sp = space(2, false, 61);
        let snaps = random_snapshots(&sp, 3, 62);
        assert!(matches!(build_deim_set(&sp, &snaps, 10), Err(RomError::RankExceeded { .. })));
    }
}

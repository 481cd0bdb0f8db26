//! Galerkin reduced models of the ADI shallow water scheme.
//!
//! Every variable has its own basis, `w ≈ wbar + W_trial w~`. A quadratic
//! product `c * a ⊙ (D b)` projected on the test basis `W_e` of its equation
//! expands into
//!
//! ```text
//! c * [ sum_{i1,i2} M^i[i1,i2] a~_i1 b~_i2 + L_a a~ + L_b b~ + k0 ]_i
//! M^i[i1,i2] = sum_l W_e[l,i] A[l,i1] (D B)[l,i2]
//! L_a = W_e^T diag(D bbar) A,  L_b = W_e^T diag(abar) (D B),  k0 = W_e^T (abar ⊙ D bbar)
//! ```
//!
//! Standard POD evaluates the lifted product on the full grid and projects
//! it (cost `O(n k)`); tensorial POD contracts the precomputed `M^i` (cost
//! `O(k^3)`, independent of `n`). Both use the tensors for the reduced
//! Jacobians.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::deim::DeimSet;
use crate::error::{check_len, Result, RomError};
use crate::grid::Grid;
use crate::operators::{DifferenceOperators, Direction};
use crate::pod::PodBasis;
use crate::solver::SolverConfig;
use crate::swe::{CoriolisField, FieldState, NonlinearTerm, Product, Var};

fn dir_index(dir: Direction) -> usize {
    match dir {
        Direction::X => 0,
        Direction::Y => 1,
    }
}

/// Reduced coordinates of the three variables.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedState {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub phi: DVector<f64>,
    pub time: f64,
}

impl ReducedState {
    pub fn zeros(k: usize) -> Self {
        Self {
            u: DVector::zeros(k),
            v: DVector::zeros(k),
            phi: DVector::zeros(k),
            time: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.u.len()
    }

    pub fn field(&self, var: Var) -> &DVector<f64> {
        match var {
            Var::U => &self.u,
            Var::V => &self.v,
            Var::Phi => &self.phi,
        }
    }

    pub fn to_stacked(&self) -> DVector<f64> {
        let k = self.k();
        let mut z = DVector::zeros(3 * k);
        z.rows_mut(0, k).copy_from(&self.u);
        z.rows_mut(k, k).copy_from(&self.v);
        z.rows_mut(2 * k, k).copy_from(&self.phi);
        z
    }

    pub fn from_stacked(z: &DVector<f64>, time: f64) -> Self {
        let k = z.len() / 3;
        Self {
            u: z.rows(0, k).into_owned(),
            v: z.rows(k, k).into_owned(),
            phi: z.rows(2 * k, k).into_owned(),
            time,
        }
    }

    fn check(&self, k: usize) -> Result<()> {
        check_len("reduced u", k, self.u.len())?;
        check_len("reduced v", k, self.v.len())?;
        check_len("reduced phi", k, self.phi.len())
    }
}

/// Exactly projected Coriolis coupling (half of it, as used in each half-step).
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedCoriolis {
    /// `1/2 W_u^T diag(f) V`
    pub uv: DMatrix<f64>,
    /// `-1/2 W_v^T diag(f) U`
    pub vu: DMatrix<f64>,
    pub const_u: DVector<f64>,
    pub const_v: DVector<f64>,
}

/// Bases of the three variables plus everything derived from them that the
/// reduced models need on-line.
#[derive(Clone, Debug)]
pub struct ReducedSpace {
    pub grid: Grid,
    pub bases: [PodBasis; 3],
    /// `D * U_var`, indexed `[direction][variable]`.
    pub d_trial: [[DMatrix<f64>; 3]; 2],
    /// `D * wbar_var`, indexed `[direction][variable]`.
    pub d_mean: [[DVector<f64>; 3]; 2],
    pub coriolis: ReducedCoriolis,
    // U^T wbar and |wbar|^2 for O(k) norms of lifted states
    trial_mean: [DVector<f64>; 3],
    mean_sq: [f64; 3],
}

impl ReducedSpace {
    pub fn new(bases: [PodBasis; 3], ops: &DifferenceOperators, coriolis: &CoriolisField) -> Result<Self> {
        let n = ops.grid.n();
        let k = bases[0].k();
        for b in &bases {
            check_len("basis rows", n, b.n())?;
            check_len("basis size (shared k)", k, b.k())?;
            check_len("basis mean", n, b.mean.len())?;
        }
        check_len("coriolis", n, coriolis.f.len())?;
        let d_trial = [Direction::X, Direction::Y].map(|d| {
            let op = ops.get(d);
            [0, 1, 2].map(|v| op.mul_dense(&bases[v].trial))
        });
        let d_mean = [Direction::X, Direction::Y].map(|d| {
            let op = ops.get(d);
            [0, 1, 2].map(|v| op.mul_vec(&bases[v].mean))
        });
        let f = &coriolis.f;
        let scale_rows = |m: &DMatrix<f64>, s: f64| {
            let mut out = m.clone();
            for (r, mut row) in out.row_iter_mut().enumerate() {
                row *= s * f[r];
            }
            out
        };
        let (bu, bv) = (&bases[0], &bases[1]);
        let coriolis = ReducedCoriolis {
            uv: bu.test_basis().tr_mul(&scale_rows(&bv.trial, 0.5)),
            vu: bv.test_basis().tr_mul(&scale_rows(&bu.trial, -0.5)),
            const_u: bu.test_basis().tr_mul(&(f.component_mul(&bv.mean) * 0.5)),
            const_v: bv.test_basis().tr_mul(&(f.component_mul(&bu.mean) * -0.5)),
        };
        let trial_mean = [0, 1, 2].map(|v| bases[v].trial.tr_mul(&bases[v].mean));
        let mean_sq = [0, 1, 2].map(|v| bases[v].mean.norm_squared());
        Ok(Self {
            grid: ops.grid,
            bases,
            d_trial,
            d_mean,
            coriolis,
            trial_mean,
            mean_sq,
        })
    }

    pub fn k(&self) -> usize {
        self.bases[0].k()
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn basis(&self, var: Var) -> &PodBasis {
        &self.bases[var.index()]
    }

    pub fn d_trial(&self, dir: Direction, var: Var) -> &DMatrix<f64> {
        &self.d_trial[dir_index(dir)][var.index()]
    }

    pub fn d_mean(&self, dir: Direction, var: Var) -> &DVector<f64> {
        &self.d_mean[dir_index(dir)][var.index()]
    }

    /// `x~(0) = W^T (x0 - xbar)` for each variable.
    pub fn project_initial(&self, x0: &FieldState) -> Result<ReducedState> {
        check_len("initial state", self.n(), x0.len())?;
        Ok(ReducedState {
            u: self.bases[0].project(&x0.u),
            v: self.bases[1].project(&x0.v),
            phi: self.bases[2].project(&x0.phi),
            time: x0.time,
        })
    }

    pub fn lift(&self, z: &ReducedState) -> FieldState {
        FieldState {
            u: self.bases[0].lift(&z.u),
            v: self.bases[1].lift(&z.v),
            phi: self.bases[2].lift(&z.phi),
            time: z.time,
        }
    }

    /// `|wbar + U z|` over all three variables, computed in `O(k)`.
    pub fn lifted_norm(&self, z: &ReducedState) -> f64 {
        Var::ALL
            .iter()
            .map(|&v| {
                let c = z.field(v);
                self.mean_sq[v.index()] + 2.0 * self.trial_mean[v.index()].dot(c) + c.norm_squared()
            })
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }

    /// Row data of one product: `(A, D B, abar, D bbar)` on all `n` nodes.
    fn product_rows(&self, dir: Direction, p: &Product) -> (&DMatrix<f64>, &DMatrix<f64>, &DVector<f64>, &DVector<f64>) {
        (
            &self.basis(p.left).trial,
            self.d_trial(dir, p.right),
            &self.basis(p.left).mean,
            self.d_mean(dir, p.right),
        )
    }
}

/// Coefficient tensors of one quadratic product.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductTensor {
    pub coef: f64,
    pub left: Var,
    pub right: Var,
    /// `quad[(i, i1 * k + i2)] = M^i[i1, i2]`.
    pub quad: DMatrix<f64>,
    /// Linear map acting on the left variable's coordinates (from centering).
    pub lin_left: DMatrix<f64>,
    /// Linear map acting on the right variable's coordinates (from centering).
    pub lin_right: DMatrix<f64>,
    pub constant: DVector<f64>,
}

impl ProductTensor {
    /// Builds the tensors from weighted row data:
    /// `M^i[i1,i2] = sum_l weights[i,l] a[l,i1] db[l,i2]`.
    ///
    /// Tensorial POD passes `weights = W^T` with all `n` rows; the DEIM
    /// variant passes `weights = E` with the `m` sampled rows.
    pub fn from_rows(
        p: &Product,
        weights: &DMatrix<f64>,
        a: &DMatrix<f64>,
        db: &DMatrix<f64>,
        abar: &DVector<f64>,
        dbbar: &DVector<f64>,
    ) -> Self {
        let k = a.ncols();
        let kout = weights.nrows();
        let rows = a.nrows();
        let mut quad = DMatrix::zeros(kout, k * k);
        let mut scaled = DMatrix::zeros(rows, k);
        for i1 in 0..k {
            for c in 0..k {
                for l in 0..rows {
                    scaled[(l, c)] = a[(l, i1)] * db[(l, c)];
                }
            }
            quad.columns_mut(i1 * k, k).copy_from(&(weights * &scaled));
        }
        let mut da = a.clone();
        for (l, mut row) in da.row_iter_mut().enumerate() {
            row *= dbbar[l];
        }
        let mut adb = db.clone();
        for (l, mut row) in adb.row_iter_mut().enumerate() {
            row *= abar[l];
        }
        Self {
            coef: p.coef,
            left: p.left,
            right: p.right,
            quad,
            lin_left: weights * da,
            lin_right: weights * adb,
            constant: weights * abar.component_mul(dbbar),
        }
    }

    pub fn k(&self) -> usize {
        self.lin_left.ncols()
    }

    /// The `k x k` slice `M^i`.
    pub fn mode(&self, i: usize) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_fn(k, k, |i1, i2| self.quad[(i, i1 * k + i2)])
    }

    /// Value of the projected product (including `coef`).
    pub fn evaluate(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.constant.len());
        self.accumulate(a, b, &mut DVector::zeros(a.len() * b.len()), &mut out);
        out
    }

    /// Adds the projected product to `out`; `outer` is scratch of length `k^2`.
    pub fn accumulate(&self, a: &DVector<f64>, b: &DVector<f64>, outer: &mut DVector<f64>, out: &mut DVector<f64>) {
        let k = self.k();
        for i1 in 0..k {
            for i2 in 0..k {
                outer[i1 * k + i2] = a[i1] * b[i2];
            }
        }
        let c = self.coef;
        out.gemv(c, &self.quad, outer, 1.0);
        out.gemv(c, &self.lin_left, a, 1.0);
        out.gemv(c, &self.lin_right, b, 1.0);
        out.axpy(c, &self.constant, 1.0);
    }

    /// Derivatives of the projected product w.r.t. the left and right coordinates.
    pub fn jacobians(&self, a: &DVector<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = self.k();
        let mut j_left = self.lin_left.clone();
        let mut j_right = self.lin_right.clone();
        for i1 in 0..k {
            let block = self.quad.columns(i1 * k, k);
            // d/da_i1: sum_i2 M^i[i1,i2] b_i2
            j_left.column_mut(i1).gemv(1.0, &block, b, 1.0);
            // d/db: sum_i1 a_i1 M^i[i1, :]
            j_right.zip_apply(&block, |x, y| *x += a[i1] * y);
        }
        (j_left * self.coef, j_right * self.coef)
    }
}

/// Tensors of every product of one nonlinear term.
#[derive(Clone, Debug, PartialEq)]
pub struct TermTensors {
    pub term: NonlinearTerm,
    pub products: Vec<ProductTensor>,
}

impl TermTensors {
    pub fn evaluate(&self, z: &ReducedState) -> DVector<f64> {
        let Some(first) = self.products.first() else {
            return DVector::zeros(z.k());
        };
        let mut out = DVector::zeros(first.constant.len());
        let mut outer = DVector::zeros(z.k() * z.k());
        for p in &self.products {
            p.accumulate(z.field(p.left), z.field(p.right), &mut outer, &mut out);
        }
        out
    }

    /// `k x 3k` derivative w.r.t. the stacked reduced state.
    pub fn jacobian(&self, z: &ReducedState) -> DMatrix<f64> {
        let k = z.k();
        let mut j = DMatrix::zeros(k, 3 * k);
        for p in &self.products {
            let (jl, jr) = p.jacobians(z.field(p.left), z.field(p.right));
            let mut bl = j.columns_mut(p.left.index() * k, k);
            bl += jl;
            let mut br = j.columns_mut(p.right.index() * k, k);
            br += jr;
        }
        j
    }
}

/// Precomputed reduced coefficients of all six nonlinear terms.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCoefficients {
    pub k: usize,
    /// Indexed by `NonlinearTerm::index`.
    pub terms: Vec<TermTensors>,
    /// Linear Coriolis coupling shared by every mode.
    pub coriolis: ReducedCoriolis,
}

impl TensorCoefficients {
    pub fn term(&self, term: NonlinearTerm) -> &TermTensors {
        &self.terms[term.index()]
    }
}

/// Builds the tensors by summing over all `n` grid points.
pub fn build_tensor_coefficients(space: &ReducedSpace) -> TensorCoefficients {
    let terms = NonlinearTerm::ALL
        .iter()
        .map(|&term| {
            let weights = space.basis(term.equation()).test_basis().transpose();
            let products = term
                .products()
                .iter()
                .map(|p| {
                    let (a, db, abar, dbbar) = space.product_rows(term.direction(), p);
                    ProductTensor::from_rows(p, &weights, a, db, abar, dbbar)
                })
                .collect();
            TermTensors { term, products }
        })
        .collect();
    TensorCoefficients {
        k: space.k(),
        terms,
        coriolis: space.coriolis.clone(),
    }
}

/// Projected nonlinear term evaluated through the full grid: lift, multiply
/// componentwise, project with `W^T`.
pub fn standard_pod_nonlinear(term: NonlinearTerm, z: &ReducedState, space: &ReducedSpace) -> Result<DVector<f64>> {
    z.check(space.k())?;
    let n = space.n();
    let dir = term.direction();
    let mut full = DVector::zeros(n);
    for p in term.products() {
        let (a, db, abar, dbbar) = space.product_rows(dir, p);
        let lifted = a * z.field(p.left) + abar;
        let dlifted = db * z.field(p.right) + dbbar;
        full.zip_zip_apply(&lifted, &dlifted, |o, x, y| *o += p.coef * x * y);
    }
    Ok(space.basis(term.equation()).test_basis().tr_mul(&full))
}

/// Projected nonlinear term by tensor contraction, independent of `n`.
pub fn tensorial_nonlinear(term: NonlinearTerm, z: &ReducedState, tensors: &TensorCoefficients) -> Result<DVector<f64>> {
    z.check(tensors.k)?;
    Ok(tensors.term(term).evaluate(z))
}

/// Analytic `k x 3k` Jacobian of a projected nonlinear term.
pub fn reduced_jacobian(term: NonlinearTerm, z: &ReducedState, tensors: &TensorCoefficients) -> Result<DMatrix<f64>> {
    z.check(tensors.k)?;
    Ok(tensors.term(term).jacobian(z))
}

/// Frobenius inner product of two equally shaped matrices.
pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RomMode {
    StandardPod,
    TensorialPod,
    PodDeim,
}

impl RomMode {
    pub const ALL: [RomMode; 3] = [RomMode::StandardPod, RomMode::TensorialPod, RomMode::PodDeim];

    pub fn name(self) -> &'static str {
        match self {
            RomMode::StandardPod => "standard-pod",
            RomMode::TensorialPod => "tensorial-pod",
            RomMode::PodDeim => "pod-deim",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Everything the on-line stage of one reduced model needs.
#[derive(Clone, Debug)]
pub struct RomEngine {
    pub space: ReducedSpace,
    pub mode: RomMode,
    /// Tensors for the Jacobians (and for the right-hand side in tensorial mode).
    pub tensors: TensorCoefficients,
    pub deim: Option<DeimSet>,
}

impl RomEngine {
    pub fn standard(space: ReducedSpace, tensors: TensorCoefficients) -> Self {
        Self {
            space,
            mode: RomMode::StandardPod,
            tensors,
            deim: None,
        }
    }

    pub fn tensorial(space: ReducedSpace, tensors: TensorCoefficients) -> Self {
        Self {
            space,
            mode: RomMode::TensorialPod,
            tensors,
            deim: None,
        }
    }

    /// POD/DEIM: right-hand side by DEIM, Jacobians from the DEIM-built tensors.
    pub fn pod_deim(space: ReducedSpace, deim: DeimSet) -> Self {
        let tensors = deim.tensor_coefficients(&space.coriolis);
        Self {
            space,
            mode: RomMode::PodDeim,
            tensors,
            deim: Some(deim),
        }
    }

    pub fn k(&self) -> usize {
        self.space.k()
    }

    pub fn nonlinear(&self, term: NonlinearTerm, z: &ReducedState) -> Result<DVector<f64>> {
        match self.mode {
            RomMode::StandardPod => standard_pod_nonlinear(term, z, &self.space),
            RomMode::TensorialPod => tensorial_nonlinear(term, z, &self.tensors),
            RomMode::PodDeim => {
                let deim = self.deim.as_ref().ok_or_else(|| RomError::InvalidInput("POD/DEIM engine without DEIM operators".into()))?;
                crate::deim::deim_nonlinear(term, z, deim.operator(term))
            }
        }
    }

    fn coriolis_into(&self, z: &ReducedState, out: &mut DVector<f64>) {
        let k = self.k();
        let c = &self.tensors.coriolis;
        let mut ou = out.rows_mut(0, k);
        ou.gemv(1.0, &c.uv, &z.v, 1.0);
        ou += &c.const_u;
        let mut ov = out.rows_mut(k, k);
        ov.gemv(1.0, &c.vu, &z.u, 1.0);
        ov += &c.const_v;
    }

    /// Reduced directional tendency, stacked `3k`. Also returns the seconds
    /// spent in the nonlinear terms.
    pub fn directional_tendency(&self, z: &ReducedState, dir: Direction) -> Result<(DVector<f64>, f64)> {
        let k = self.k();
        let mut out = DVector::zeros(3 * k);
        let t0 = Instant::now();
        for term in NonlinearTerm::in_direction(dir) {
            let val = self.nonlinear(term, z)?;
            let mut slot = out.rows_mut(term.equation().index() * k, k);
            slot -= val;
        }
        let nl = t0.elapsed().as_secs_f64();
        self.coriolis_into(z, &mut out);
        Ok((out, nl))
    }

    /// `3k x 3k` Jacobian of the reduced directional tendency.
    pub fn directional_jacobian(&self, z: &ReducedState, dir: Direction) -> DMatrix<f64> {
        let k = self.k();
        let mut j = DMatrix::zeros(3 * k, 3 * k);
        for term in NonlinearTerm::in_direction(dir) {
            let jt = self.tensors.term(term).jacobian(z);
            let mut rows = j.rows_mut(term.equation().index() * k, k);
            rows -= jt;
        }
        let c = &self.tensors.coriolis;
        let mut b = j.view_mut((0, k), (k, k));
        b += &c.uv;
        let mut b = j.view_mut((k, 0), (k, k));
        b += &c.vu;
        j
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RomTimings {
    pub nonlinear: f64,
    pub jacobian: f64,
    pub factorization: f64,
    pub solve: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RomStepStats {
    pub iterations: [usize; 2],
    pub residual: [f64; 2],
    pub forced_refreshes: usize,
}

/// Reduced ADI integrator, mirroring the full solver's half-steps and
/// refactorization cadence on the `3k` coupled system.
pub struct RomStepper<'a> {
    engine: &'a RomEngine,
    cfg: SolverConfig,
    step_index: usize,
    factors: [Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>; 2],
    timings: RomTimings,
}

impl<'a> RomStepper<'a> {
    pub fn new(engine: &'a RomEngine, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            engine,
            cfg,
            step_index: 0,
            factors: [None, None],
            timings: RomTimings::default(),
        })
    }

    pub fn timings(&self) -> RomTimings {
        self.timings
    }

    fn refactorize(&mut self, z: &ReducedState, dir: Direction) -> Result<()> {
        let h = 0.5 * self.cfg.dt;
        let t0 = Instant::now();
        let j = self.engine.directional_jacobian(z, dir);
        let n = j.nrows();
        let a = DMatrix::identity(n, n) - j * h;
        let t1 = Instant::now();
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(RomError::Singular("reduced half-step Jacobian".into()));
        }
        self.factors[dir_index(dir)] = Some(lu);
        self.timings.jacobian += (t1 - t0).as_secs_f64();
        self.timings.factorization += t1.elapsed().as_secs_f64();
        Ok(())
    }

    fn half_step(
        &mut self,
        base: &ReducedState,
        frozen: &DVector<f64>,
        dir: Direction,
        refresh: bool,
    ) -> Result<(ReducedState, usize, f64, usize)> {
        let h = 0.5 * self.cfg.dt;
        let base_vec = base.to_stacked();
        let mut z = base.clone();
        if refresh || self.factors[dir_index(dir)].is_none() {
            self.refactorize(&z, dir)?;
        }
        let mut iterations = 0;
        let mut forced = 0;
        let mut prev_rel = f64::INFINITY;
        loop {
            let (t, nl) = self.engine.directional_tendency(&z, dir)?;
            self.timings.nonlinear += nl;
            let zv = z.to_stacked();
            let r = &zv - &base_vec - t * h - frozen;
            let rel = r.norm() / self.engine.space.lifted_norm(&z).max(f64::MIN_POSITIVE);
            if !rel.is_finite() {
                return Err(RomError::NonConvergence { iterations, residual: rel });
            }
            if rel < self.cfg.newton_tol {
                return Ok((z, iterations, rel, forced));
            }
            if iterations >= self.cfg.newton_max_iters {
                return Err(RomError::NonConvergence { iterations, residual: rel });
            }
            if self.cfg.refresh_on_stall && iterations > 0 && rel > self.cfg.stall_ratio * prev_rel {
                self.refactorize(&z, dir)?;
                forced += 1;
            }
            prev_rel = rel;
            let t0 = Instant::now();
            let delta = self.factors[dir_index(dir)]
                .as_ref()
                .expect("factorization present")
                .solve(&(-r))
                .ok_or_else(|| RomError::Singular("reduced solve".into()))?;
            self.timings.solve += t0.elapsed().as_secs_f64();
            z = ReducedState::from_stacked(&(zv + delta), z.time);
            iterations += 1;
        }
    }

    /// One reduced ADI step.
    pub fn step(&mut self, z: &ReducedState) -> Result<(ReducedState, RomStepStats)> {
        z.check(self.engine.k())?;
        let start = Instant::now();
        let h = 0.5 * self.cfg.dt;
        let refresh = self.step_index % self.cfg.lu_refresh_every == 0;

        let (ty, nl) = self.engine.directional_tendency(z, Direction::Y)?;
        self.timings.nonlinear += nl;
        let (z_half, i1, r1, f1) = self.half_step(z, &(ty * h), Direction::X, refresh)?;

        let (tx, nl) = self.engine.directional_tendency(&z_half, Direction::X)?;
        self.timings.nonlinear += nl;
        let (mut z_new, i2, r2, f2) = self.half_step(&z_half, &(tx * h), Direction::Y, refresh)?;

        z_new.time = z.time + self.cfg.dt;
        self.step_index += 1;
        self.timings.total += start.elapsed().as_secs_f64();
        Ok((
            z_new,
            RomStepStats {
                iterations: [i1, i2],
                residual: [r1, r2],
                forced_refreshes: f1 + f2,
            },
        ))
    }
}

/// One reduced ADI step from a fresh stepper (Jacobians factorized at `z`).
pub fn rom_step(z: &ReducedState, engine: &RomEngine, cfg: &SolverConfig) -> Result<ReducedState> {
    RomStepper::new(engine, *cfg)?.step(z).map(|(s, _)| s)
}

/// Reduced trajectory: column `t` holds the coordinates after step `t + 1`.
#[derive(Clone, Debug)]
pub struct RomRun {
    pub trajectory: [DMatrix<f64>; 3],
    pub times: Vec<f64>,
    pub timings: RomTimings,
    pub steps: Vec<RomStepStats>,
}

impl RomRun {
    pub fn state_at(&self, t: usize) -> ReducedState {
        ReducedState {
            u: self.trajectory[0].column(t).into_owned(),
            v: self.trajectory[1].column(t).into_owned(),
            phi: self.trajectory[2].column(t).into_owned(),
            time: self.times[t],
        }
    }

    /// Full-space trajectory `wbar + U w~` of every variable, `n x Nt` each.
    pub fn lift(&self, space: &ReducedSpace) -> [DMatrix<f64>; 3] {
        [0, 1, 2].map(|v| {
            let b = &space.bases[v];
            let mut m = &b.trial * &self.trajectory[v];
            for mut col in m.column_iter_mut() {
                col += &b.mean;
            }
            m
        })
    }

    pub fn final_state(&self) -> ReducedState {
        self.state_at(self.times.len() - 1)
    }
}

pub fn run_rom(engine: &RomEngine, z0: &ReducedState, cfg: &SolverConfig) -> Result<RomRun> {
    let start = Instant::now();
    let mut stepper = RomStepper::new(engine, *cfg)?;
    let k = engine.k();
    let mut trajectory = [(); 3].map(|_| DMatrix::zeros(k, cfg.nt));
    let mut times = Vec::with_capacity(cfg.nt);
    let mut steps = Vec::with_capacity(cfg.nt);
    let mut z = z0.clone();
    for t in 0..cfg.nt {
        let (next, stats) = stepper.step(&z)?;
        z = next;
        for v in Var::ALL {
            trajectory[v.index()].set_column(t, z.field(v));
        }
        times.push(z.time);
        steps.push(stats);
    }
    let mut timings = stepper.timings();
    timings.total = start.elapsed().as_secs_f64();
    Ok(RomRun {
        trajectory,
        times,
        timings,
        steps,
    })
}

//! Alternating-direction implicit integrator for the full model.
//!
//! Each step is split into two half-steps of length `dt/2`. The tendency is
//! divided into an x part (`-F11 - F21 - F31` plus half the Coriolis
//! coupling) and a y part (`-F12 - F22 - F32` plus the other half):
//!
//! ```text
//! w*      - w^n = dt/2 [ X(w*) + Y(w^n)     ]   (implicit in x)
//! w^{n+1} - w*  = dt/2 [ X(w*) + Y(w^{n+1}) ]   (implicit in y)
//! ```
//!
//! Each half-step is a coupled `3n` nonlinear system solved by quasi-Newton.
//! The Jacobian of a half-step is only reassembled and refactorized every
//! `lu_refresh_every` steps; in between the stale factorization is reused.
//! On the `y = 0` and `y = D` rows the `v` equation is replaced by `v = 0`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, RomError};
use crate::grid::Grid;
use crate::linsolve::{GmresParams, LinearSolver, LinearSolverKind, LuCache, TripletMatrix};
use crate::operators::{DifferenceOperators, Direction};
use crate::swe::{cfl_indicator, eval_all_nonlinear, CoriolisField, FieldState, NonlinearTerm, Var, CFL_LIMIT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub dt: f64,
    pub nt: usize,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub lu_refresh_every: usize,
    pub linear_solver: LinearSolverKind,
    pub gmres: GmresParams,
    /// Refactorize early when the stale Jacobian contracts the residual by
    /// less than `stall_ratio` per iteration.
    pub refresh_on_stall: bool,
    pub stall_ratio: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 120.0,
            nt: 91,
            newton_tol: 1e-10,
            newton_max_iters: 20,
            lu_refresh_every: 6,
            linear_solver: LinearSolverKind::DirectSparse,
            gmres: GmresParams::default(),
            refresh_on_stall: true,
            stall_ratio: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(RomError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.nt == 0 {
            return Err(RomError::Config("nt must be at least 1".into()));
        }
        if !(self.newton_tol > 0.0) {
            return Err(RomError::Config("newton_tol must be positive".into()));
        }
        if self.newton_max_iters == 0 || self.lu_refresh_every == 0 {
            return Err(RomError::Config(
                "newton_max_iters and lu_refresh_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Convergence record of one half-step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HalfStepStats {
    pub iterations: usize,
    pub residual: f64,
    pub refactorized: bool,
    pub forced_refreshes: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub cfl: f64,
    pub half: [HalfStepStats; 2],
}

impl StepStats {
    pub fn cfl_exceeded(&self) -> bool {
        self.cfl > CFL_LIMIT
    }
}

/// Wall-clock seconds spent in each phase of the full solver.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTimings {
    pub assembly: f64,
    pub factorization: f64,
    pub solve: f64,
    pub residual: f64,
    pub record: f64,
    pub total: f64,
}

fn secs(d: Duration) -> f64 {
    // microsecond resolution
    d.as_micros() as f64 * 1e-6
}

/// Stateful ADI integrator; keeps the stale factorizations between steps.
pub struct AdiSolver<'a> {
    ops: &'a DifferenceOperators,
    coriolis: &'a CoriolisField,
    cfg: SolverConfig,
    step_index: usize,
    factors: [Option<LinearSolver>; 2],
    caches: [LuCache; 2],
    timings: SolverTimings,
}

fn dir_slot(dir: Direction) -> usize {
    match dir {
        Direction::X => 0,
        Direction::Y => 1,
    }
}

impl<'a> AdiSolver<'a> {
    pub fn new(ops: &'a DifferenceOperators, coriolis: &'a CoriolisField, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        check_len("coriolis", ops.grid.n(), coriolis.f.len())?;
        Ok(Self {
            ops,
            coriolis,
            cfg,
            step_index: 0,
            factors: [None, None],
            caches: Default::default(),
            timings: SolverTimings::default(),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn timings(&self) -> SolverTimings {
        self.timings
    }

    fn n(&self) -> usize {
        self.ops.grid.n()
    }

    /// Directional tendency `X(w)` or `Y(w)` of a stacked state.
    pub fn directional_tendency(&self, w: &[f64], dir: Direction) -> Vec<f64> {
        directional_tendency(self.ops, self.coriolis, w, dir)
    }

    fn residual(&self, w: &[f64], base: &[f64], frozen: &[f64], dir: Direction) -> Vec<f64> {
        let n = self.n();
        let h = 0.5 * self.cfg.dt;
        let t = self.directional_tendency(w, dir);
        let mut r: Vec<f64> = (0..3 * n)
            .map(|i| w[i] - base[i] - h * t[i] - frozen[i])
            .collect();
        for node in self.ops.grid.y_boundary_nodes() {
            r[n + node] = w[n + node];
        }
        r
    }

    fn assemble(&self, w: &[f64], dir: Direction) -> TripletMatrix {
        assemble_half_step_matrix(self.ops, self.coriolis, w, dir, 0.5 * self.cfg.dt)
    }

    fn refactorize(&mut self, w: &[f64], dir: Direction) -> Result<()> {
        let t0 = Instant::now();
        let a = self.assemble(w, dir);
        let t1 = Instant::now();
        let slot = dir_slot(dir);
        let solver = LinearSolver::factorize(self.cfg.linear_solver, &a, &mut self.caches[slot], self.cfg.gmres)?;
        self.factors[slot] = Some(solver);
        self.timings.assembly += secs(t1 - t0);
        self.timings.factorization += secs(t1.elapsed());
        Ok(())
    }

    fn half_step(&mut self, base: &[f64], frozen: &[f64], dir: Direction, refresh: bool) -> Result<(Vec<f64>, HalfStepStats)> {
        let mut stats = HalfStepStats::default();
        let mut w = base.to_vec();
        let slot = dir_slot(dir);
        if refresh || self.factors[slot].is_none() {
            self.refactorize(&w, dir)?;
            stats.refactorized = true;
        }
        let mut prev_rel = f64::INFINITY;
        loop {
            let t0 = Instant::now();
            let mut r = self.residual(&w, base, frozen, dir);
            self.timings.residual += secs(t0.elapsed());
            let scale = norm(&w).max(f64::MIN_POSITIVE);
            let rel = norm(&r) / scale;
            stats.residual = rel;
            if !rel.is_finite() {
                return Err(RomError::NonConvergence {
                    iterations: stats.iterations,
                    residual: rel,
                });
            }
            if rel < self.cfg.newton_tol {
                return Ok((w, stats));
            }
            if stats.iterations >= self.cfg.newton_max_iters {
                return Err(RomError::NonConvergence {
                    iterations: stats.iterations,
                    residual: rel,
                });
            }
            if self.cfg.refresh_on_stall && stats.iterations > 0 && rel > self.cfg.stall_ratio * prev_rel {
                self.refactorize(&w, dir)?;
                stats.forced_refreshes += 1;
            }
            prev_rel = rel;
            let t1 = Instant::now();
            r.iter_mut().for_each(|x| *x = -*x);
            self.factors[slot]
                .as_ref()
                .expect("factorization present")
                .solve_in_place(&mut r)?;
            for (wi, di) in w.iter_mut().zip(&r) {
                *wi += di;
            }
            self.timings.solve += secs(t1.elapsed());
            stats.iterations += 1;
        }
    }

    /// Advances the state by one full ADI step.
    pub fn step(&mut self, state: &FieldState) -> Result<(FieldState, StepStats)> {
        check_len("state", self.n(), state.len())?;
        let start = Instant::now();
        let h = 0.5 * self.cfg.dt;
        let refresh = self.step_index % self.cfg.lu_refresh_every == 0;
        let cfl = cfl_indicator(state, &self.ops.grid, self.cfg.dt);

        let wn = state.to_stacked();
        let wn = wn.as_slice();

        let t0 = Instant::now();
        let frozen_y: Vec<f64> = self.directional_tendency(wn, Direction::Y).iter().map(|v| h * v).collect();
        self.timings.residual += secs(t0.elapsed());
        let (w_half, s1) = self.half_step(wn, &frozen_y, Direction::X, refresh)?;

        let t0 = Instant::now();
        let frozen_x: Vec<f64> = self.directional_tendency(&w_half, Direction::X).iter().map(|v| h * v).collect();
        self.timings.residual += secs(t0.elapsed());
        let (w_new, s2) = self.half_step(&w_half, &frozen_x, Direction::Y, refresh)?;

        let stats = StepStats {
            step: self.step_index,
            cfl,
            half: [s1, s2],
        };
        self.step_index += 1;
        self.timings.total += secs(start.elapsed());
        let next = FieldState::from_stacked(&DVector::from_vec(w_new), state.time + self.cfg.dt);
        Ok((next, stats))
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Directional tendency of a stacked `[u; v; phi]` vector.
pub fn directional_tendency(
    ops: &DifferenceOperators,
    coriolis: &CoriolisField,
    w: &[f64],
    dir: Direction,
) -> Vec<f64> {
    let n = ops.grid.n();
    let d = ops.get(dir);
    let field = |v: Var| &w[v.index() * n..(v.index() + 1) * n];
    let mut deriv = vec![0.0; 3 * n];
    for v in Var::ALL {
        d.mul_slice_into(field(v), &mut deriv[v.index() * n..(v.index() + 1) * n]);
    }
    let mut out = vec![0.0; 3 * n];
    for term in NonlinearTerm::in_direction(dir) {
        let e = term.equation().index() * n;
        for p in term.products() {
            let a = field(p.left);
            let db = &deriv[p.right.index() * n..(p.right.index() + 1) * n];
            for l in 0..n {
                out[e + l] -= p.coef * a[l] * db[l];
            }
        }
    }
    let f = &coriolis.f;
    let (u, v) = (field(Var::U), field(Var::V));
    for l in 0..n {
        out[l] += 0.5 * f[l] * v[l];
        out[n + l] -= 0.5 * f[l] * u[l];
    }
    out
}

/// `I - h dT_dir/dw` at `w`, with identity rows for `v` on the y boundaries.
pub fn assemble_half_step_matrix(
    ops: &DifferenceOperators,
    coriolis: &CoriolisField,
    w: &[f64],
    dir: Direction,
    h: f64,
) -> TripletMatrix {
    let grid = &ops.grid;
    let n = grid.n();
    let d = ops.get(dir);
    let field = |v: Var| &w[v.index() * n..(v.index() + 1) * n];
    let deriv: Vec<Vec<f64>> = Var::ALL
        .iter()
        .map(|&v| {
            let mut out = vec![0.0; n];
            d.mul_slice_into(field(v), &mut out);
            out
        })
        .collect();
    let mut a = TripletMatrix::with_capacity(3 * n, 3 * n + 24 * n);
    let v_row = |l: usize| n + l;
    for r in 0..3 * n {
        a.push(r, r, 1.0);
    }
    for term in NonlinearTerm::in_direction(dir) {
        let eq = term.equation();
        for p in term.products() {
            let left = field(p.left);
            let db = &deriv[p.right.index()];
            for l in 0..n {
                if eq == Var::V && grid.on_y_boundary(l) {
                    continue;
                }
                let row = eq.index() * n + l;
                a.push(row, p.left.index() * n + l, h * p.coef * db[l]);
                for (col, val) in d.row(l) {
                    a.push(row, p.right.index() * n + col, h * p.coef * left[l] * val);
                }
            }
        }
    }
    for l in 0..n {
        let half_f = 0.5 * h * coriolis.f[l];
        a.push(l, v_row(l), -half_f);
        if !grid.on_y_boundary(l) {
            a.push(v_row(l), l, half_f);
        }
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct RecordFlags {
    pub states: bool,
    pub nonlinear: bool,
}

impl RecordFlags {
    pub const ALL: RecordFlags = RecordFlags {
        states: true,
        nonlinear: true,
    };

    pub fn bits(self) -> u64 {
        (self.states as u64) | ((self.nonlinear as u64) << 1)
    }

    pub fn from_bits(bits: u64) -> Self {
        Self {
            states: bits & 1 != 0,
            nonlinear: bits & 2 != 0,
        }
    }
}

/// Recorded trajectory: column `t` of every matrix is the same time instant.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    pub grid: Grid,
    pub dt: f64,
    pub times: Vec<f64>,
    /// `u`, `v`, `phi` snapshot matrices, each `n x Nt`.
    pub states: Option<[DMatrix<f64>; 3]>,
    /// `F11..F32` snapshot matrices, each `n x Nt`.
    pub nonlinear: Option<[DMatrix<f64>; 6]>,
}

impl SnapshotSet {
    pub fn nt(&self) -> usize {
        self.times.len()
    }

    pub fn flags(&self) -> RecordFlags {
        RecordFlags {
            states: self.states.is_some(),
            nonlinear: self.nonlinear.is_some(),
        }
    }

    pub fn state_matrix(&self, var: Var) -> Option<&DMatrix<f64>> {
        self.states.as_ref().map(|s| &s[var.index()])
    }

    pub fn term_matrix(&self, term: NonlinearTerm) -> Option<&DMatrix<f64>> {
        self.nonlinear.as_ref().map(|s| &s[term.index()])
    }

    /// The recorded state at column `t`.
    pub fn state_at(&self, t: usize) -> Option<FieldState> {
        let s = self.states.as_ref()?;
        Some(FieldState {
            u: s[0].column(t).into_owned(),
            v: s[1].column(t).into_owned(),
            phi: s[2].column(t).into_owned(),
            time: self.times[t],
        })
    }
}

/// Output of [`run_full`].
#[derive(Clone, Debug)]
pub struct FullRun {
    pub final_state: FieldState,
    pub snapshots: SnapshotSet,
    pub timings: SolverTimings,
    pub steps: Vec<StepStats>,
}

impl FullRun {
    pub fn cfl_warnings(&self) -> usize {
        self.steps.iter().filter(|s| s.cfl_exceeded()).count()
    }
}

/// Integrates `cfg.nt` ADI steps from `ic`, recording what `record` asks for.
pub fn run_full(
    ic: &FieldState,
    cfg: &SolverConfig,
    ops: &DifferenceOperators,
    coriolis: &CoriolisField,
    record: RecordFlags,
) -> Result<FullRun> {
    let start = Instant::now();
    let mut solver = AdiSolver::new(ops, coriolis, *cfg)?;
    let n = ops.grid.n();
    let nt = cfg.nt;
    let mut states = record.states.then(|| [(); 3].map(|_| DMatrix::zeros(n, nt)));
    let mut nonlinear = record.nonlinear.then(|| [(); 6].map(|_| DMatrix::zeros(n, nt)));
    let mut times = Vec::with_capacity(nt);
    let mut steps = Vec::with_capacity(nt);
    let mut state = ic.clone();
    let mut record_secs = 0.0;
    for t in 0..nt {
        let (next, stats) = solver.step(&state)?;
        state = next;
        steps.push(stats);
        times.push(state.time);
        let t0 = Instant::now();
        if let Some(s) = states.as_mut() {
            for v in Var::ALL {
                s[v.index()].set_column(t, state.field(v));
            }
        }
        if let Some(f) = nonlinear.as_mut() {
            let terms = eval_all_nonlinear(&state, ops)?;
            for (m, term) in f.iter_mut().zip(terms.iter()) {
                m.set_column(t, term);
            }
        }
        record_secs += secs(t0.elapsed());
    }
    let mut timings = solver.timings();
    timings.record = record_secs;
    timings.total = secs(start.elapsed());
    Ok(FullRun {
        final_state: state,
        snapshots: SnapshotSet {
            grid: ops.grid,
            dt: cfg.dt,
            times,
            states,
            nonlinear,
        },
        timings,
        steps,
    })
}

//! Semi-discrete shallow water model on the beta-plane channel.
//!
//! The state is `w = (u, v, phi)` with `phi = 2 sqrt(g h)`. The tendencies are
//!
//! ```text
//! u'   = -F11 - F12 + f v
//! v'   = -F21 - F22 - f u
//! phi' = -F31 - F32
//! ```
//!
//! where every `Fab` is a sum of componentwise products `c * a ⊙ (D b)` with
//! `D` one of the difference operators. `Fa1` terms use `Ax`, `Fa2` use `Ay`.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{check_len, Result, RomError};
use crate::grid::{Grid, PhysicalConstants};
use crate::operators::{DifferenceOperators, Direction};

/// One of the three prognostic variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    U,
    V,
    Phi,
}

impl Var {
    pub const ALL: [Var; 3] = [Var::U, Var::V, Var::Phi];

    pub fn index(self) -> usize {
        match self {
            Var::U => 0,
            Var::V => 1,
            Var::Phi => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Var::U => "u",
            Var::V => "v",
            Var::Phi => "phi",
        }
    }

    pub fn from_index(i: usize) -> Option<Var> {
        Var::ALL.get(i).copied()
    }
}

/// A single quadratic product `coef * left ⊙ (D right)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Product {
    pub coef: f64,
    pub left: Var,
    pub right: Var,
}

const fn prod(coef: f64, left: Var, right: Var) -> Product {
    Product { coef, left, right }
}

/// The six nonlinear advection terms of the semi-discrete model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NonlinearTerm {
    F11,
    F12,
    F21,
    F22,
    F31,
    F32,
}

impl NonlinearTerm {
    pub const ALL: [NonlinearTerm; 6] = [
        NonlinearTerm::F11,
        NonlinearTerm::F12,
        NonlinearTerm::F21,
        NonlinearTerm::F22,
        NonlinearTerm::F31,
        NonlinearTerm::F32,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            NonlinearTerm::F11 => "F11",
            NonlinearTerm::F12 => "F12",
            NonlinearTerm::F21 => "F21",
            NonlinearTerm::F22 => "F22",
            NonlinearTerm::F31 => "F31",
            NonlinearTerm::F32 => "F32",
        }
    }

    /// The equation whose tendency this term enters (with a minus sign).
    pub fn equation(self) -> Var {
        match self {
            NonlinearTerm::F11 | NonlinearTerm::F12 => Var::U,
            NonlinearTerm::F21 | NonlinearTerm::F22 => Var::V,
            NonlinearTerm::F31 | NonlinearTerm::F32 => Var::Phi,
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            NonlinearTerm::F11 | NonlinearTerm::F21 | NonlinearTerm::F31 => Direction::X,
            _ => Direction::Y,
        }
    }

    pub fn products(self) -> &'static [Product] {
        use Var::*;
        const F11: [Product; 2] = [prod(1.0, U, U), prod(0.5, Phi, Phi)];
        const F12: [Product; 1] = [prod(1.0, V, U)];
        const F21: [Product; 1] = [prod(1.0, U, V)];
        const F22: [Product; 2] = [prod(1.0, V, V), prod(0.5, Phi, Phi)];
        const F31: [Product; 2] = [prod(0.5, Phi, U), prod(1.0, U, Phi)];
        const F32: [Product; 2] = [prod(0.5, Phi, V), prod(1.0, V, Phi)];
        match self {
            NonlinearTerm::F11 => &F11,
            NonlinearTerm::F12 => &F12,
            NonlinearTerm::F21 => &F21,
            NonlinearTerm::F22 => &F22,
            NonlinearTerm::F31 => &F31,
            NonlinearTerm::F32 => &F32,
        }
    }

    /// Terms that enter the given directional half of the tendency.
    pub fn in_direction(dir: Direction) -> impl Iterator<Item = NonlinearTerm> {
        Self::ALL.into_iter().filter(move |t| t.direction() == dir)
    }
}

/// Prognostic fields at one time instant, each of length `n` in x-fastest order.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub phi: DVector<f64>,
    pub time: f64,
}

impl FieldState {
    pub fn new(u: DVector<f64>, v: DVector<f64>, phi: DVector<f64>, time: f64) -> Result<Self> {
        check_len("FieldState v", u.len(), v.len())?;
        check_len("FieldState phi", u.len(), phi.len())?;
        Ok(Self { u, v, phi, time })
    }

    /// Fluid at rest with uniform geopotential.
    pub fn at_rest(n: usize, phi: f64) -> Self {
        Self {
            u: DVector::zeros(n),
            v: DVector::zeros(n),
            phi: DVector::from_element(n, phi),
            time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn field(&self, var: Var) -> &DVector<f64> {
        match var {
            Var::U => &self.u,
            Var::V => &self.v,
            Var::Phi => &self.phi,
        }
    }

    pub fn field_mut(&mut self, var: Var) -> &mut DVector<f64> {
        match var {
            Var::U => &mut self.u,
            Var::V => &mut self.v,
            Var::Phi => &mut self.phi,
        }
    }

    /// Stacks `[u; v; phi]` into one vector of length `3n`.
    pub fn to_stacked(&self) -> DVector<f64> {
        let n = self.len();
        let mut out = DVector::zeros(3 * n);
        out.rows_mut(0, n).copy_from(&self.u);
        out.rows_mut(n, n).copy_from(&self.v);
        out.rows_mut(2 * n, n).copy_from(&self.phi);
        out
    }

    pub fn from_stacked(w: &DVector<f64>, time: f64) -> Self {
        let n = w.len() / 3;
        Self {
            u: w.rows(0, n).into_owned(),
            v: w.rows(n, n).into_owned(),
            phi: w.rows(2 * n, n).into_owned(),
            time,
        }
    }
}

/// Beta-plane Coriolis parameter sampled on every node.
#[derive(Clone, Debug, PartialEq)]
pub struct CoriolisField {
    pub f: DVector<f64>,
}

impl CoriolisField {
    pub fn new(grid: &Grid, consts: &PhysicalConstants) -> Self {
        let half = 0.5 * grid.length_y;
        let f = DVector::from_fn(grid.n(), |node, _| {
            let (_, j) = grid.coords(node);
            consts.f_hat + consts.beta * (grid.y(j) - half)
        });
        Self { f }
    }
}

/// Grammeltvedt initial height field (conventional form `H0 + H1 tanh + ...`).
pub fn grammeltvedt_height(grid: &Grid, consts: &PhysicalConstants) -> DVector<f64> {
    grammeltvedt_height_with(grid, consts, false)
}

/// Grammeltvedt height field. With `literal` set, `H1` and the `tanh` term are
/// added instead of multiplied, matching an alternative printed form.
pub fn grammeltvedt_height_with(
    grid: &Grid,
    consts: &PhysicalConstants,
    literal: bool,
) -> DVector<f64> {
    DVector::from_fn(grid.n(), |node, _| {
        let (i, j) = grid.coords(node);
        grammeltvedt_point(grid.x(i), grid.y(j), grid.length_x, grid.length_y, consts, literal)
    })
}

fn grammeltvedt_point(x: f64, y: f64, l: f64, d: f64, c: &PhysicalConstants, literal: bool) -> f64 {
    let theta = 9.0 * (0.5 * d - y) / (2.0 * d);
    let sech = 1.0 / theta.cosh();
    let zonal = if literal {
        c.h1 + theta.tanh()
    } else {
        c.h1 * theta.tanh()
    };
    c.h0 + zonal + c.h2 * sech * sech * (2.0 * PI * x / l).sin()
}

/// Geostrophic winds `u = -(g/f) dh/dy`, `v = (g/f) dh/dx`, with `v = 0` on the
/// y-boundary rows.
pub fn geostrophic_wind(
    h: &DVector<f64>,
    ops: &DifferenceOperators,
    coriolis: &CoriolisField,
    consts: &PhysicalConstants,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = ops.grid.n();
    check_len("geostrophic_wind h", n, h.len())?;
    check_len("geostrophic_wind f", n, coriolis.f.len())?;
    if let Some((node, &value)) = coriolis
        .f
        .iter()
        .enumerate()
        .find(|(_, f)| f.abs() < 1e-12)
    {
        return Err(RomError::CoriolisTooSmall { node, value });
    }
    let hx = ops.ax.mul_vec(h);
    let hy = ops.ay.mul_vec(h);
    let u = DVector::from_fn(n, |l, _| -consts.g / coriolis.f[l] * hy[l]);
    let mut v = DVector::from_fn(n, |l, _| consts.g / coriolis.f[l] * hx[l]);
    for node in ops.grid.y_boundary_nodes() {
        v[node] = 0.0;
    }
    Ok((u, v))
}

/// `phi = 2 sqrt(g h)` componentwise.
pub fn geopotential_from_height(h: &DVector<f64>, g: f64) -> Result<DVector<f64>> {
    if let Some((node, &value)) = h.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(RomError::NonpositiveHeight { node, value });
    }
    Ok(h.map(|x| 2.0 * (g * x).sqrt()))
}

/// Grammeltvedt height, geostrophic winds and the resulting state at `t = 0`.
pub fn grammeltvedt_initial_state(
    ops: &DifferenceOperators,
    coriolis: &CoriolisField,
    consts: &PhysicalConstants,
    literal: bool,
) -> Result<FieldState> {
    let h = grammeltvedt_height_with(&ops.grid, consts, literal);
    let (u, v) = geostrophic_wind(&h, ops, coriolis, consts)?;
    let phi = geopotential_from_height(&h, consts.g)?;
    FieldState::new(u, v, phi, 0.0)
}

/// First derivatives of every variable in both directions.
#[derive(Clone, Debug)]
pub struct Derivatives {
    x: [DVector<f64>; 3],
    y: [DVector<f64>; 3],
}

impl Derivatives {
    pub fn new(state: &FieldState, ops: &DifferenceOperators) -> Self {
        let x = Var::ALL.map(|v| ops.ax.mul_vec(state.field(v)));
        let y = Var::ALL.map(|v| ops.ay.mul_vec(state.field(v)));
        Self { x, y }
    }

    /// Only the derivatives needed by one direction; the other is left empty.
    pub fn in_direction(state: &FieldState, ops: &DifferenceOperators, dir: Direction) -> Self {
        let d = Var::ALL.map(|v| ops.get(dir).mul_vec(state.field(v)));
        let empty = Var::ALL.map(|_| DVector::zeros(0));
        match dir {
            Direction::X => Self { x: d, y: empty },
            Direction::Y => Self { x: empty, y: d },
        }
    }

    pub fn get(&self, dir: Direction, var: Var) -> &DVector<f64> {
        match dir {
            Direction::X => &self.x[var.index()],
            Direction::Y => &self.y[var.index()],
        }
    }
}

fn term_from_derivatives(term: NonlinearTerm, state: &FieldState, d: &Derivatives) -> DVector<f64> {
    let mut out = DVector::zeros(state.len());
    for p in term.products() {
        let a = state.field(p.left);
        let db = d.get(term.direction(), p.right);
        for l in 0..out.len() {
            out[l] += p.coef * a[l] * db[l];
        }
    }
    out
}

/// Evaluates one nonlinear term on the full grid.
pub fn eval_nonlinear(
    term: NonlinearTerm,
    state: &FieldState,
    ops: &DifferenceOperators,
) -> Result<DVector<f64>> {
    check_state(state, ops)?;
    let d = Derivatives::in_direction(state, ops, term.direction());
    Ok(term_from_derivatives(term, state, &d))
}

/// All six nonlinear terms in `NonlinearTerm::ALL` order.
pub fn eval_all_nonlinear(
    state: &FieldState,
    ops: &DifferenceOperators,
) -> Result<[DVector<f64>; 6]> {
    check_state(state, ops)?;
    let d = Derivatives::new(state, ops);
    Ok(NonlinearTerm::ALL.map(|t| term_from_derivatives(t, state, &d)))
}

fn check_state(state: &FieldState, ops: &DifferenceOperators) -> Result<()> {
    let n = ops.grid.n();
    check_len("state u", n, state.u.len())?;
    check_len("state v", n, state.v.len())?;
    check_len("state phi", n, state.phi.len())
}

/// Time derivatives of the three fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Tendency {
    pub du: DVector<f64>,
    pub dv: DVector<f64>,
    pub dphi: DVector<f64>,
}

impl Tendency {
    pub fn get(&self, var: Var) -> &DVector<f64> {
        match var {
            Var::U => &self.du,
            Var::V => &self.dv,
            Var::Phi => &self.dphi,
        }
    }
}

pub fn full_rhs(
    state: &FieldState,
    ops: &DifferenceOperators,
    coriolis: &CoriolisField,
) -> Result<Tendency> {
    check_len("coriolis", ops.grid.n(), coriolis.f.len())?;
    let [f11, f12, f21, f22, f31, f32] = eval_all_nonlinear(state, ops)?;
    let f = &coriolis.f;
    Ok(Tendency {
        du: -f11 - f12 + f.component_mul(&state.v),
        dv: -f21 - f22 - f.component_mul(&state.u),
        dphi: -f31 - f32,
    })
}

/// Largest gravity-wave CFL number `sqrt(g h_max) dt / dx` of a state.
pub fn cfl_indicator(state: &FieldState, grid: &Grid, dt: f64) -> f64 {
    // phi = 2 sqrt(g h)  =>  sqrt(g h) = phi / 2
    let c = 0.5 * state.phi.amax();
    c * dt / grid.dx.min(grid.dy)
}

/// Stability limit of the implicit scheme on the gravity-wave CFL number.
pub const CFL_LIMIT: f64 = 8.9301;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::build_operators;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn grammeltvedt_symmetry_points() {
        let c = consts();
        let g = Grid::new(5, 3, c.length_x, c.length_y).unwrap();
        let h = grammeltvedt_height(&g, &c);
        // (x = 0, y = D/2)
        assert!((h[g.index(0, 1)] - 2000.0).abs() < 1e-9);
        // (x = L/4, y = D/2)
        assert!((h[g.index(1, 1)] - 2133.0).abs() < 1e-9);
        // (x = L/4, y = 0): theta = 9/4
        let theta: f64 = 9.0 / 4.0;
        let oracle = 2000.0 + 220.0 * theta.tanh() + 133.0 / theta.cosh().powi(2);
        assert!((h[g.index(1, 0)] - oracle).abs() < 1e-9);
    }

    #[test]
    fn literal_form_differs() {
        let c = consts();
        let g = Grid::new(5, 3, c.length_x, c.length_y).unwrap();
        let h = grammeltvedt_height_with(&g, &c, true);
        assert!((h[g.index(0, 1)] - 2220.0).abs() < 1e-9);
    }

    #[test]
    fn geopotential_values() {
        let phi = geopotential_from_height(&DVector::from_vec(vec![2000.0, 0.025]), 10.0).unwrap();
        assert!((phi[0] - 2.0 * 20000f64.sqrt()).abs() < 1e-12);
        assert!((phi[1] - 1.0).abs() < 1e-15);
        assert!(geopotential_from_height(&DVector::from_vec(vec![1.0, 0.0]), 10.0).is_err());
        assert!(geopotential_from_height(&DVector::from_vec(vec![-1.0]), 10.0).is_err());
    }

    #[test]
    fn geopotential_bounds_on_grammeltvedt() {
        let c = consts();
        let g = Grid::new(31, 23, c.length_x, c.length_y).unwrap();
        let h = grammeltvedt_height(&g, &c);
        let phi = geopotential_from_height(&h, c.g).unwrap();
        let lo = 2.0 * (c.g * h.min()).sqrt();
        let hi = 2.0 * (c.g * h.max()).sqrt();
        assert!(phi.iter().all(|&p| p >= lo && p <= hi));
    }

    #[test]
    fn coriolis_mid_channel() {
        let c = consts();
        let g = Grid::new(4, 5, c.length_x, c.length_y).unwrap();
        let f = CoriolisField::new(&g, &c);
        assert_eq!(f.f[g.index(2, 2)], c.f_hat);
        assert!((f.f[g.index(0, 4)] - (c.f_hat + c.beta * 0.5 * c.length_y)).abs() < 1e-18);
    }

    #[test]
    fn geostrophic_constant_height_is_calm() {
        let c = consts();
        let g = Grid::new(7, 5, c.length_x, c.length_y).unwrap();
        let ops = build_operators(&g);
        let f = CoriolisField::new(&g, &c);
        let (u, v) = geostrophic_wind(&DVector::from_element(g.n(), 1000.0), &ops, &f, &c).unwrap();
        assert_eq!(u.amax(), 0.0);
        assert_eq!(v.amax(), 0.0);
    }

    #[test]
    fn geostrophic_v_matches_analytic_at_origin() {
        let c = consts();
        let mut errs = Vec::new();
        for nx in [31, 61, 121] {
            let g = Grid::new(nx, 23, c.length_x, c.length_y).unwrap();
            let ops = build_operators(&g);
            let f = CoriolisField::new(&g, &c);
            let h = grammeltvedt_height(&g, &c);
            let (_, v) = geostrophic_wind(&h, &ops, &f, &c).unwrap();
            let exact = c.g / c.f_hat * c.h2 * 2.0 * PI / c.length_x;
            errs.push((v[g.index(0, 11)] - exact).abs());
        }
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
    }

    #[test]
    fn geostrophic_v_vanishes_on_boundaries() {
        let c = consts();
        let g = Grid::new(11, 9, c.length_x, c.length_y).unwrap();
        let ops = build_operators(&g);
        let f = CoriolisField::new(&g, &c);
        let h = grammeltvedt_height(&g, &c);
        let (_, v) = geostrophic_wind(&h, &ops, &f, &c).unwrap();
        assert!(g.y_boundary_nodes().all(|node| v[node] == 0.0));
        assert!(v.amax() > 0.0);
    }

    #[test]
    fn geostrophic_rejects_vanishing_coriolis() {
        let c = consts();
        let g = Grid::new(5, 5, c.length_x, c.length_y).unwrap();
        let ops = build_operators(&g);
        let mut f = CoriolisField::new(&g, &c);
        f.f[3] = 0.0;
        let err = geostrophic_wind(&DVector::zeros(g.n()), &ops, &f, &c).unwrap_err();
        assert!(matches!(err, RomError::CoriolisTooSmall { node: 3, .. }));
    }

    #[test]
    fn rest_state_has_zero_tendency() {
        let c = consts();
        let g = Grid::new(6, 5, c.length_x, c.length_y).unwrap();
        let ops = build_operators(&g);
        let f = CoriolisField::new(&g, &c);
        let rhs = full_rhs(&FieldState::at_rest(g.n(), 280.0), &ops, &f).unwrap();
        for var in Var::ALL {
            assert_eq!(rhs.get(var).amax(), 0.0);
        }
    }

    #[test]
    fn zero_v_kills_cross_terms() {
        let g = Grid::new(5, 5, 1.0, 1.0).unwrap();
        let ops = build_operators(&g);
        let n = g.n();
        let s = FieldState::new(
            DVector::from_fn(n, |i, _| (i as f64).sin()),
            DVector::zeros(n),
            DVector::from_fn(n, |i, _| 2.0 + (i as f64).cos()),
            0.0,
        )
        .unwrap();
        assert_eq!(eval_nonlinear(NonlinearTerm::F12, &s, &ops).unwrap().amax(), 0.0);
        assert_eq!(eval_nonlinear(NonlinearTerm::F21, &s, &ops).unwrap().amax(), 0.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let g = Grid::new(5, 5, 1.0, 1.0).unwrap();
        let ops = build_operators(&g);
        let s = FieldState::at_rest(24, 1.0);
        assert!(eval_nonlinear(NonlinearTerm::F11, &s, &ops).is_err());
        assert!(FieldState::new(DVector::zeros(3), DVector::zeros(2), DVector::zeros(3), 0.0).is_err());
    }

    #[test]
    fn cfl_at_paper_resolution() {
        let c = consts();
        let g = Grid::new(376, 276, c.length_x, c.length_y).unwrap();
        let s = FieldState::at_rest(4, 2.0 * (c.g * 2000.0).sqrt());
        let cfl = cfl_indicator(&s, &g, 960.0);
        assert!((cfl - 8.485).abs() < 1e-3 && cfl <= CFL_LIMIT, "{cfl}");
    }
}

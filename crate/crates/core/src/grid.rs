//! Structured grid and physical constants of the beta-plane channel.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RomError};

/// Physical constants of the Grammeltvedt channel problem, SI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Channel length in x (m).
    pub length_x: f64,
    /// Channel width in y (m).
    pub length_y: f64,
    /// Reference Coriolis parameter at mid-channel (1/s).
    pub f_hat: f64,
    /// Meridional Coriolis gradient (1/(s m)).
    pub beta: f64,
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
    pub h0: f64,
    pub h1: f64,
    pub h2: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            length_x: 6.0e6,
            length_y: 4.4e6,
            f_hat: 1.0e-4,
            beta: 1.5e-11,
            g: 10.0,
            h0: 2000.0,
            h1: 220.0,
            h2: 133.0,
        }
    }
}

/// Uniform `nx` by `ny` mesh over `[0, L] x [0, D]`, both end points included.
///
/// Nodes are numbered x-fastest: node `(i, j)` has linear index `i + j * nx`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub length_x: f64,
    pub length_y: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, length_x: f64, length_y: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(RomError::InvalidGrid(format!(
                "{nx}x{ny}: at least 3 points per direction are required"
            )));
        }
        if !(length_x > 0.0 && length_y > 0.0) {
            return Err(RomError::InvalidGrid(format!(
                "domain extents must be positive, got {length_x} x {length_y}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            length_x,
            length_y,
            dx: length_x / (nx - 1) as f64,
            dy: length_y / (ny - 1) as f64,
        })
    }

    /// Number of mesh points.
    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + j * self.nx
    }

    /// Inverse of [`Grid::index`].
    #[inline]
    pub fn coords(&self, node: usize) -> (usize, usize) {
        (node % self.nx, node / self.nx)
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy
    }

    /// True for nodes on the `y = 0` or `y = D` rows.
    pub fn on_y_boundary(&self, node: usize) -> bool {
        let j = node / self.nx;
        j == 0 || j == self.ny - 1
    }

    /// Linear indices of every node on the two y-boundary rows.
    pub fn y_boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        let top = (self.ny - 1) * self.nx;
        (0..self.nx).chain(top..top + self.nx)
    }
}

pub fn build_grid(nx: usize, ny: usize, consts: &PhysicalConstants) -> Result<Grid> {
    Grid::new(nx, ny, consts.length_x, consts.length_y)
}

/// Parses a `NXxNY` grid descriptor such as `31x23`.
pub fn parse_grid_spec(spec: &str) -> Result<(usize, usize)> {
    let bad = || RomError::Config(format!("grid must look like NXxNY, got {spec:?}"));
    let (a, b) = spec.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    let nx = a.trim().parse().map_err(|_| bad())?;
    let ny = b.trim().parse().map_err(|_| bad())?;
    Ok((nx, ny))
}

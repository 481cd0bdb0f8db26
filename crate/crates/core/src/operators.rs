//! First-derivative difference operators on the structured grid.
//!
//! `Ax` is second-order central in x with a periodic wrap. The domain
//! includes both `x = 0` and `x = L`, which are the same physical point,
//! so column 0 and column `Nx - 1` share the stencil `(w[1] - w[Nx-2]) / 2dx`.
//!
//! `Ay` is second-order central in the interior and first-order one-sided on
//! the `y = 0` and `y = D` rows. Every row of both operators sums to zero.

use nalgebra::{DMatrix, DVector};

use crate::grid::Grid;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix row by row. Each row is a list of `(column, value)`.
    pub fn from_rows<I, R>(nrows: usize, ncols: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = (usize, f64)>,
    {
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            let mut entries: Vec<(usize, f64)> = row.into_iter().collect();
            entries.sort_by_key(|&(c, _)| c);
            for (c, v) in entries {
                assert!(c < ncols, "column {c} out of range");
                match col_idx.last() {
                    Some(&last) if last == c && col_idx.len() > *row_ptr.last().unwrap() => {
                        *values.last_mut().unwrap() += v;
                    }
                    _ => {
                        col_idx.push(c);
                        values.push(v);
                    }
                }
            }
            row_ptr.push(col_idx.len());
        }
        assert_eq!(row_ptr.len(), nrows + 1, "row count mismatch");
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzeros of one row as `(column, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn mul_slice_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(out.len(), self.nrows);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows);
        self.mul_slice_into(x.as_slice(), out.as_mut_slice());
        out
    }

    /// Sparse times dense, column by column.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, b.ncols());
        for c in 0..b.ncols() {
            let src = b.column(c);
            let mut dst = out.column_mut(c);
            for r in 0..self.nrows {
                let mut acc = 0.0;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.values[k] * src[self.col_idx[k]];
                }
                dst[r] = acc;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                d[(r, c)] += v;
            }
        }
        d
    }
}

/// Direction of a first derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    X,
    Y,
}

#[derive(Clone, Debug)]
pub struct DifferenceOperators {
    pub grid: Grid,
    pub ax: CsrMatrix,
    pub ay: CsrMatrix,
}

impl DifferenceOperators {
    pub fn get(&self, dir: Direction) -> &CsrMatrix {
        match dir {
            Direction::X => &self.ax,
            Direction::Y => &self.ay,
        }
    }
}

pub fn build_operators(grid: &Grid) -> DifferenceOperators {
    let (nx, ny) = (grid.nx, grid.ny);
    let n = grid.n();
    let cx = 0.5 / grid.dx;
    let cy = 0.5 / grid.dy;

    let ax = CsrMatrix::from_rows(
        n,
        n,
        (0..n).map(|node| {
            let (i, j) = grid.coords(node);
            let (left, right) = if i == 0 || i == nx - 1 {
                (nx - 2, 1)
            } else {
                (i - 1, i + 1)
            };
            [(grid.index(left, j), -cx), (grid.index(right, j), cx)]
        }),
    );

    let ay = CsrMatrix::from_rows(
        n,
        n,
        (0..n).map(|node| {
            let (i, j) = grid.coords(node);
            if j == 0 {
                vec![(grid.index(i, 0), -1.0 / grid.dy), (grid.index(i, 1), 1.0 / grid.dy)]
            } else if j == ny - 1 {
                vec![
                    (grid.index(i, ny - 2), -1.0 / grid.dy),
                    (grid.index(i, ny - 1), 1.0 / grid.dy),
                ]
            } else {
                vec![(grid.index(i, j - 1), -cy), (grid.index(i, j + 1), cy)]
            }
        }),
    );

    DifferenceOperators {
        grid: *grid,
        ax,
        ay,
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn field(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> DVector<f64> {
        DVector::from_fn(grid.n(), |node, _| {
            let (i, j) = grid.coords(node);
            f(grid.x(i), grid.y(j))
        })
    }

    #[test]
    fn annihilates_constants() {
        let g = Grid::new(9, 7, 3.0, 2.0).unwrap();
        let ops = build_operators(&g);
        let ones = DVector::from_element(g.n(), 1.0);
        assert_eq!(ops.ax.mul_vec(&ones).amax(), 0.0);
        assert_eq!(ops.ay.mul_vec(&ones).amax(), 0.0);
    }

    #[test]
    fn periodic_columns_share_stencil() {
        let g = Grid::new(16, 5, 2.0 * PI, 1.0).unwrap();
        let ops = build_operators(&g);
        let w = field(&g, |x, y| (x).sin() * (1.0 + y) + (2.0 * x).cos());
        let d = ops.ax.mul_vec(&w);
        for j in 0..g.ny {
            let a = d[g.index(0, j)];
            let b = d[g.index(g.nx - 1, j)];
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn ax_converges_second_order() {
        let c = crate::grid::PhysicalConstants::default();
        let l = c.length_x;
        let mut errs = Vec::new();
        for nx in [21, 41, 81] {
            let g = Grid::new(nx, 5, l, c.length_y).unwrap();
            let ops = build_operators(&g);
            let w = field(&g, |x, _| (2.0 * PI * x / l).sin());
            let exact = field(&g, |x, _| 2.0 * PI / l * (2.0 * PI * x / l).cos());
            errs.push((ops.ax.mul_vec(&w) - exact).amax());
        }
        for pair in errs.windows(2) {
            let order = (pair[0] / pair[1]).log2();
            assert!(order > 1.9, "observed order {order}");
        }
    }

    #[test]
    fn ay_exact_on_linear_fields() {
        let g = Grid::new(5, 9, 1.0, 4.0).unwrap();
        let ops = build_operators(&g);
        let w = field(&g, |x, y| 3.0 * y + x);
        let d = ops.ay.mul_vec(&w);
        for node in 0..g.n() {
            assert!((d[node] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_product_matches_columnwise() {
        let g = Grid::new(4, 4, 1.0, 1.0).unwrap();
        let ops = build_operators(&g);
        let b = DMatrix::from_fn(g.n(), 3, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        let dense = ops.ay.to_dense() * &b;
        assert!((ops.ay.mul_dense(&b) - dense).amax() < 1e-12);
    }

    #[test]
    fn csr_merges_duplicates() {
        let m = CsrMatrix::from_rows(1, 2, [vec![(1, 1.0), (0, 2.0), (1, 3.0)]]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense(), DMatrix::from_row_slice(1, 2, &[2.0, 4.0]));
    }
}

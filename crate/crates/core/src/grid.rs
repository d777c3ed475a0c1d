use alloc::format;

use crate::error::{Error, Result};

/// Regular 2D grid of `nx × ny` rectangular cells.
///
/// Cells are indexed row-major: `cell = j * nx + i`, with `i` along x
/// (west to east) and `j` along y (south to north).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::validation(format!(
                "grid needs at least one cell per axis, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0 && dx.is_finite() && dy > 0.0 && dy.is_finite()) {
            return Err(Error::validation(format!(
                "cell sizes must be positive and finite, got dx={dx}, dy={dy}"
            )));
        }
        Ok(Self { nx, ny, dx, dy })
    }

    /// Square domain of side `extent` split into `n × n` cells.
    pub fn square(n: usize, extent: f64) -> Result<Self> {
        let h = extent / n as f64;
        Self::new(n, n, h, h)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.nx as f64 * self.dx, self.ny as f64 * self.dy)
    }

    pub fn cell(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn contains_cell(&self, cell: usize) -> bool {
        cell < self.n_cells()
    }

    pub fn center(&self, cell: usize) -> (f64, f64) {
        let (i, j) = self.ij(cell);
        ((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }

    /// Cell containing the physical point `(x, y)`.
    pub fn cell_at(&self, x: f64, y: f64) -> Result<usize> {
        let (ex, ey) = self.extent();
        if !(0.0..ex).contains(&x) || !(0.0..ey).contains(&y) {
            return Err(Error::validation(format!(
                "point ({x}, {y}) lies outside the {ex} x {ey} domain"
            )));
        }
        let i = libm::floor(x / self.dx) as usize;
        let j = libm::floor(y / self.dy) as usize;
        Ok(self.cell(i.min(self.nx - 1), j.min(self.ny - 1)))
    }

    /// Euclidean distance between two cell centers.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (xa, ya) = self.center(a);
        let (xb, yb) = self.center(b);
        libm::hypot(xa - xb, ya - yb)
    }
}

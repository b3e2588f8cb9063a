//! Staggered lattice on a rectangle: tangential field components live on
//! edges, the scalar curl lives on cell centers.
//!
//! Edge storage is one flat vector: all x-edges first (`E1[i][j]` joins node
//! `(i, j)` to `(i + 1, j)`), then all y-edges (`E2[i][j]` joins `(i, j)` to
//! `(i, j + 1)`).

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::error::Result;
use crate::model::{GridSpec, Rect, C64};

/// Field scalar: real for the control solver, complex for probes.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Default
    + Add<Output = Self>
    + Sub<Output = Self>
    + Neg<Output = Self>
    + Mul<f64, Output = Self>
    + AddAssign
    + SubAssign
{
    fn abs2(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Scalar for f64 {
    fn abs2(self) -> f64 {
        self * self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for C64 {
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// One boundary edge in counterclockwise perimeter order.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryEdge {
    pub edge: usize,
    /// Arclength of the edge midpoint, measured counterclockwise from `(x0, y0)`.
    pub s: f64,
    /// +1 where the edge direction agrees with the counterclockwise tangent.
    pub sign: f64,
}

/// Curl sample on the boundary, extrapolated from the two nearest cell rows.
#[derive(Clone, Copy, Debug)]
pub struct ArcSample {
    pub s: f64,
    pub point: [f64; 2],
    pub near: usize,
    pub far: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: [f64; 2],
}

impl Lattice {
    pub fn new(rect: &Rect, grid: &GridSpec) -> Result<Self> {
        let (nx, ny) = grid.cells(rect)?;
        Ok(Self {
            nx,
            ny,
            h: grid.h,
            origin: [rect.x0, rect.y0],
        })
    }

    pub fn n_e1(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    pub fn n_edges(&self) -> usize {
        self.n_e1() + (self.nx + 1) * self.ny
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn e1(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn e2(&self, i: usize, j: usize) -> usize {
        self.n_e1() + j * (self.nx + 1) + i
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.h,
            self.origin[1] + (j as f64 + 0.5) * self.h,
        ]
    }

    pub fn edge_axis(&self, k: usize) -> Axis {
        if k < self.n_e1() {
            Axis::X
        } else {
            Axis::Y
        }
    }

    /// Midpoint and orientation of edge `k`.
    pub fn edge_midpoint(&self, k: usize) -> ([f64; 2], Axis) {
        let h = self.h;
        if k < self.n_e1() {
            let (i, j) = (k % self.nx, k / self.nx);
            (
                [self.origin[0] + (i as f64 + 0.5) * h, self.origin[1] + j as f64 * h],
                Axis::X,
            )
        } else {
            let r = k - self.n_e1();
            let (i, j) = (r % (self.nx + 1), r / (self.nx + 1));
            (
                [self.origin[0] + i as f64 * h, self.origin[1] + (j as f64 + 0.5) * h],
                Axis::Y,
            )
        }
    }

    pub fn is_boundary_edge(&self, k: usize) -> bool {
        if k < self.n_e1() {
            let j = k / self.nx;
            j == 0 || j == self.ny
        } else {
            let i = (k - self.n_e1()) % (self.nx + 1);
            i == 0 || i == self.nx
        }
    }

    pub fn interior_edges(&self) -> Vec<usize> {
        (0..self.n_edges())
            .filter(|&k| !self.is_boundary_edge(k))
            .collect()
    }

    /// Boundary edges in counterclockwise order: bottom, right, top, left.
    pub fn boundary_edges(&self) -> Vec<BoundaryEdge> {
        let (nx, ny, h) = (self.nx, self.ny, self.h);
        let (w, ht) = (nx as f64 * h, ny as f64 * h);
        let mut out = Vec::with_capacity(2 * (nx + ny));
        for i in 0..nx {
            out.push(BoundaryEdge {
                edge: self.e1(i, 0),
                s: (i as f64 + 0.5) * h,
                sign: 1.0,
            });
        }
        for j in 0..ny {
            out.push(BoundaryEdge {
                edge: self.e2(nx, j),
                s: w + (j as f64 + 0.5) * h,
                sign: 1.0,
            });
        }
        for i in (0..nx).rev() {
            out.push(BoundaryEdge {
                edge: self.e1(i, ny),
                s: w + ht + ((nx - 1 - i) as f64 + 0.5) * h,
                sign: -1.0,
            });
        }
        for j in (0..ny).rev() {
            out.push(BoundaryEdge {
                edge: self.e2(0, j),
                s: 2.0 * w + ht + ((ny - 1 - j) as f64 + 0.5) * h,
                sign: -1.0,
            });
        }
        out
    }

    /// Curl samples on the boundary, at the projections of the adjacent cell
    /// centers, in the same order as [`Lattice::boundary_edges`].
    pub fn arc_samples(&self) -> Vec<ArcSample> {
        let (nx, ny) = (self.nx, self.ny);
        let be = self.boundary_edges();
        let mut out = Vec::with_capacity(be.len());
        let x_end = self.origin[0] + nx as f64 * self.h;
        let y_end = self.origin[1] + ny as f64 * self.h;
        for (n, b) in be.iter().enumerate() {
            let (near, far, point) = if n < nx {
                let i = n;
                let c = self.cell_center(i, 0);
                (self.cell(i, 0), self.cell(i, 1), [c[0], self.origin[1]])
            } else if n < nx + ny {
                let j = n - nx;
                let c = self.cell_center(nx - 1, j);
                (self.cell(nx - 1, j), self.cell(nx - 2, j), [x_end, c[1]])
            } else if n < 2 * nx + ny {
                let i = nx - 1 - (n - nx - ny);
                let c = self.cell_center(i, ny - 1);
                (self.cell(i, ny - 1), self.cell(i, ny - 2), [c[0], y_end])
            } else {
                let j = ny - 1 - (n - 2 * nx - ny);
                let c = self.cell_center(0, j);
                (self.cell(0, j), self.cell(1, j), [self.origin[0], c[1]])
            };
            out.push(ArcSample {
                s: b.s,
                point,
                near,
                far,
            });
        }
        out
    }

    /// Cell-centered curl `(E2[i+1][j] - E2[i][j] - E1[i][j+1] + E1[i][j]) / h`.
    pub fn curl<T: Scalar>(&self, e: &[T], c: &mut [T]) {
        let inv_h = 1.0 / self.h;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let v = e[self.e2(i + 1, j)] - e[self.e2(i, j)] - e[self.e1(i, j + 1)]
                    + e[self.e1(i, j)];
                c[self.cell(i, j)] = v * inv_h;
            }
        }
    }

    /// `out += scale * curl^T(s)`, cells outside the lattice counting as zero.
    pub fn curl_t_add<T: Scalar>(&self, s: &[T], scale: f64, out: &mut [T]) {
        let f = scale / self.h;
        let (nx, ny) = (self.nx, self.ny);
        for j in 0..=ny {
            for i in 0..nx {
                let mut v = T::default();
                if j < ny {
                    v += s[self.cell(i, j)];
                }
                if j > 0 {
                    v -= s[self.cell(i, j - 1)];
                }
                out[self.e1(i, j)] += v * f;
            }
        }
        for j in 0..ny {
            for i in 0..=nx {
                let mut v = T::default();
                if i > 0 {
                    v += s[self.cell(i - 1, j)];
                }
                if i < nx {
                    v -= s[self.cell(i, j)];
                }
                out[self.e2(i, j)] += v * f;
            }
        }
    }

    /// Node divergence `(E1[i][j] - E1[i-1][j] + E2[i][j] - E2[i][j-1]) / h`
    /// at interior nodes, row-major over `1..nx` x `1..ny`.
    pub fn divergence<T: Scalar>(&self, e: &[T]) -> Vec<T> {
        let inv_h = 1.0 / self.h;
        let mut out = Vec::with_capacity((self.nx - 1) * (self.ny - 1));
        for j in 1..self.ny {
            for i in 1..self.nx {
                let v = e[self.e1(i, j)] - e[self.e1(i - 1, j)] + e[self.e2(i, j)]
                    - e[self.e2(i, j - 1)];
                out.push(v * inv_h);
            }
        }
        out
    }

    /// Discrete L2 norm over edges, each edge carrying area `h^2`.
    pub fn edge_norm<T: Scalar>(&self, e: &[T]) -> f64 {
        (e.iter().map(|v| v.abs2()).sum::<f64>()).sqrt() * self.h
    }

    pub fn cell_norm<T: Scalar>(&self, c: &[T]) -> f64 {
        (c.iter().map(|v| v.abs2()).sum::<f64>()).sqrt() * self.h
    }

    /// Bilinear interpolation of a cell-centered field at an arbitrary point.
    pub fn interpolate_cells(&self, c: &[C64], p: [f64; 2]) -> C64 {
        let u = ((p[0] - self.origin[0]) / self.h - 0.5).clamp(0.0, (self.nx - 1) as f64);
        let v = ((p[1] - self.origin[1]) / self.h - 0.5).clamp(0.0, (self.ny - 1) as f64);
        let i0 = (u.floor() as usize).min(self.nx - 2);
        let j0 = (v.floor() as usize).min(self.ny - 2);
        let (fx, fy) = (u - i0 as f64, v - j0 as f64);
        c[self.cell(i0, j0)] * ((1.0 - fx) * (1.0 - fy))
            + c[self.cell(i0 + 1, j0)] * (fx * (1.0 - fy))
            + c[self.cell(i0, j0 + 1)] * ((1.0 - fx) * fy)
            + c[self.cell(i0 + 1, j0 + 1)] * (fx * fy)
    }
}

//! Structured triangulation of the strip (0, L) x (0, H).
//!
//! Nodes sit on a uniform (nx+1) x (nz+1) lattice, numbered row-major with
//! the y index fastest: node (i, j) = j * (nx + 1) + i, y = i * L / nx,
//! z = j * H / nz. Every cell is split into two triangles; the diagonal
//! alternates in a checkerboard on the left half and is mirrored about the
//! vertical midline so that the triangulation is invariant under
//! y -> L - y (exact for even nx). All triangles are oriented
//! counterclockwise.

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Grid {
    pub l: f64,
    pub h: f64,
    pub nx: usize,
    pub nz: usize,
    pub dy: f64,
    pub dz: f64,
    tris: Vec<[usize; 3]>,
}

/// Diagonal orientation of cell (i, j): true for "/" (SW-NE), false for
/// "\" (SE-NW). Checkerboard by (i + j) parity, mirrored about the midline.
fn diag_up(i: usize, j: usize, nx: usize) -> bool {
    let im = nx - 1 - i;
    if i <= im {
        (i + j) % 2 == 0
    } else {
        !diag_up(im, j, nx)
    }
}

impl Grid {
    pub fn new(l: f64, h: f64, nx: usize, nz: usize) -> Result<Self> {
        if !(l.is_finite() && l > 0.0 && h.is_finite() && h > 0.0) {
            return Err(Error::InvalidInput(format!("grid extents must be positive, got L = {l}, H = {h}")));
        }
        if nx == 0 || nz == 0 {
            return Err(Error::InvalidInput("grid must have at least one cell per direction".into()));
        }
        let mut tris = Vec::with_capacity(2 * nx * nz);
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        for j in 0..nz {
            for i in 0..nx {
                let (sw, se) = (id(i, j), id(i + 1, j));
                let (nw, ne) = (id(i, j + 1), id(i + 1, j + 1));
                if diag_up(i, j, nx) {
                    tris.push([sw, se, ne]);
                    tris.push([sw, ne, nw]);
                } else {
                    tris.push([sw, se, nw]);
                    tris.push([se, ne, nw]);
                }
            }
        }
        Ok(Self { l, h, nx, nz, dy: l / nx as f64, dz: h / nz as f64, tris })
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.nz + 1)
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j <= self.nz);
        j * (self.nx + 1) + i
    }

    /// Inverse of `node`: (y index, z index).
    #[inline]
    pub fn node_ij(&self, n: usize) -> (usize, usize) {
        (n % (self.nx + 1), n / (self.nx + 1))
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        i as f64 * self.dy
    }

    #[inline]
    pub fn z(&self, j: usize) -> f64 {
        j as f64 * self.dz
    }

    #[inline]
    pub fn coords(&self, n: usize) -> (f64, f64) {
        let (i, j) = self.node_ij(n);
        (self.y(i), self.z(j))
    }

    pub fn tris(&self) -> &[[usize; 3]] {
        &self.tris
    }

    pub fn tri_coords(&self, t: usize) -> [(f64, f64); 3] {
        let tri = self.tris[t];
        [self.coords(tri[0]), self.coords(tri[1]), self.coords(tri[2])]
    }

    #[inline]
    pub fn is_bottom(&self, n: usize) -> bool {
        n <= self.nx
    }

    #[inline]
    pub fn is_top(&self, n: usize) -> bool {
        n >= self.nz * (self.nx + 1)
    }

    /// True away from all four boundary segments.
    #[inline]
    pub fn is_interior(&self, n: usize) -> bool {
        let (i, j) = self.node_ij(n);
        i > 0 && i < self.nx && j > 0 && j < self.nz
    }

    pub fn bottom_nodes(&self) -> impl Iterator<Item = usize> {
        0..=self.nx
    }

    pub fn top_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.nx).map(move |i| self.node(i, self.nz))
    }

    /// Node mirrored about the vertical midline y = L/2.
    #[inline]
    pub fn mirror_node(&self, n: usize) -> usize {
        let (i, j) = self.node_ij(n);
        self.node(self.nx - i, j)
    }
}

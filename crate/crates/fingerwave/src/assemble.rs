//! P1 finite-element assembly on the structured triangulation: consistent
//! mass, stiffness, the vertical-derivative bilinear form, and the gravity
//! load, all with elementwise-constant coefficients taken as the mean of
//! the three vertex values.

use crate::mesh::Grid;
use crate::{Error, Result};

/// Compressed sparse row matrix. Column indices are strictly increasing
/// within each row; assembly order is fixed, so equal inputs produce
/// bit-identical matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        let mut y = vec![0.0; self.n_rows];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// `alpha * a + beta * b` on the union sparsity pattern.
    pub fn linear_combination(alpha: f64, a: &Csr, beta: f64, b: &Csr) -> Result<Csr> {
        if a.n_rows != b.n_rows || a.n_cols != b.n_cols {
            return Err(Error::InvalidInput(format!(
                "matrix size mismatch: {}x{} vs {}x{}",
                a.n_rows, a.n_cols, b.n_rows, b.n_cols
            )));
        }
        let mut builder = CsrBuilder::new(a.n_rows, a.n_cols);
        for i in 0..a.n_rows {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                builder.add(i, j, alpha * v);
            }
            let (cols, vals) = b.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                builder.add(i, j, beta * v);
            }
        }
        Ok(builder.build())
    }
}

/// Accumulates duplicate (row, col) contributions, then compresses. Entries
/// are summed in insertion order.
pub struct CsrBuilder {
    n_cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl CsrBuilder {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self { n_cols, rows: vec![Vec::new(); n_rows] }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j < self.n_cols);
        self.rows[i].push((j, v));
    }

    pub fn build(mut self) -> Csr {
        let n_rows = self.rows.len();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in &mut self.rows {
            // Stable by column; insertion order within a column preserved.
            row.sort_by_key(|&(j, _)| j);
            let mut it = row.iter().peekable();
            while let Some(&(j, v)) = it.next() {
                let mut acc = v;
                while let Some(&&(j2, v2)) = it.peek() {
                    if j2 != j {
                        break;
                    }
                    acc += v2;
                    it.next();
                }
                col_idx.push(j);
                vals.push(acc);
            }
            row_ptr.push(col_idx.len());
        }
        Csr { n_rows, n_cols: self.n_cols, row_ptr, col_idx, vals }
    }
}

/// Gradients of the three P1 shape functions and the triangle area.
/// Components are (d/dy, d/dz).
#[inline]
pub fn p1_gradients(v: &[(f64, f64); 3]) -> ([f64; 3], [f64; 3], f64) {
    let two_a = (v[1].0 - v[0].0) * (v[2].1 - v[0].1) - (v[2].0 - v[0].0) * (v[1].1 - v[0].1);
    let area = 0.5 * two_a;
    let by = [
        (v[1].1 - v[2].1) / two_a,
        (v[2].1 - v[0].1) / two_a,
        (v[0].1 - v[1].1) / two_a,
    ];
    let bz = [
        (v[2].0 - v[1].0) / two_a,
        (v[0].0 - v[2].0) / two_a,
        (v[1].0 - v[0].0) / two_a,
    ];
    (by, bz, area)
}

fn check_weight(name: &str, grid: &Grid, w: &[f64]) -> Result<()> {
    if w.len() != grid.n_nodes() {
        return Err(Error::InvalidInput(format!(
            "{name}: coefficient field has {} entries, grid has {} nodes",
            w.len(),
            grid.n_nodes()
        )));
    }
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{name}: non-finite coefficient at node {i}")));
    }
    Ok(())
}

/// Consistent mass matrix with entries `int w phi_i phi_j`, the nodal
/// weight `w` averaged per element.
pub fn assemble_mass(grid: &Grid, w: &[f64]) -> Result<Csr> {
    check_weight("assemble_mass", grid, w)?;
    let n = grid.n_nodes();
    let mut b = CsrBuilder::new(n, n);
    for t in 0..grid.tris().len() {
        let tri = grid.tris()[t];
        let (_, _, area) = p1_gradients(&grid.tri_coords(t));
        let wbar = (w[tri[0]] + w[tri[1]] + w[tri[2]]) / 3.0;
        let c = wbar * area / 12.0;
        for (li, &ni) in tri.iter().enumerate() {
            for (lj, &nj) in tri.iter().enumerate() {
                b.add(ni, nj, if li == lj { 2.0 * c } else { c });
            }
        }
    }
    Ok(b.build())
}

/// Stiffness matrix with entries `int a grad phi_j . grad phi_i`, the nodal
/// coefficient `a` averaged per element. Rows sum to zero.
pub fn assemble_stiffness(grid: &Grid, a: &[f64]) -> Result<Csr> {
    check_weight("assemble_stiffness", grid, a)?;
    let n = grid.n_nodes();
    let mut b = CsrBuilder::new(n, n);
    for t in 0..grid.tris().len() {
        let tri = grid.tris()[t];
        let (by, bz, area) = p1_gradients(&grid.tri_coords(t));
        let abar = (a[tri[0]] + a[tri[1]] + a[tri[2]]) / 3.0;
        for (li, &ni) in tri.iter().enumerate() {
            for (lj, &nj) in tri.iter().enumerate() {
                b.add(ni, nj, abar * area * (by[li] * by[lj] + bz[li] * bz[lj]));
            }
        }
    }
    Ok(b.build())
}

/// Vertical-derivative form with entries `int (d phi_j / dz) phi_i`.
pub fn assemble_dz(grid: &Grid) -> Csr {
    let n = grid.n_nodes();
    let mut b = CsrBuilder::new(n, n);
    for t in 0..grid.tris().len() {
        let tri = grid.tris()[t];
        let (_, bz, area) = p1_gradients(&grid.tri_coords(t));
        for &ni in &tri {
            for (lj, &nj) in tri.iter().enumerate() {
                b.add(ni, nj, bz[lj] * area / 3.0);
            }
        }
    }
    b.build()
}

/// Inflow-biased (upwind) vertical-derivative form: row `i` of the result
/// applies `m_i (s_i - s_below) / dz` with the lumped vertex mass `m_i`, so
/// the action on fields linear in z matches [`assemble_dz`] exactly while
/// the stencil stays monotone for transport up the column. Bottom-row
/// entries are left empty; that row is inflow and always constrained.
pub fn assemble_upwind_dz(grid: &Grid) -> Csr {
    let lumped = lumped_mass(grid);
    let n = grid.n_nodes();
    let mut b = CsrBuilder::new(n, n);
    for j in 1..=grid.nz {
        for i in 0..=grid.nx {
            let node = grid.node(i, j);
            let w = lumped[node] / grid.dz;
            b.add(node, node, w);
            b.add(node, grid.node(i, j - 1), -w);
        }
    }
    b.build()
}

/// Gravity load vector with entries `int a g (d phi_i / dz)`, the nodal
/// coefficient `a` averaged per element. Sums to zero over all nodes.
pub fn assemble_gravity_load(grid: &Grid, a: &[f64], g: f64) -> Result<Vec<f64>> {
    check_weight("assemble_gravity_load", grid, a)?;
    if !g.is_finite() {
        return Err(Error::InvalidInput(format!("assemble_gravity_load: g must be finite, got {g}")));
    }
    let mut load = vec![0.0; grid.n_nodes()];
    for t in 0..grid.tris().len() {
        let tri = grid.tris()[t];
        let (_, bz, area) = p1_gradients(&grid.tri_coords(t));
        let abar = (a[tri[0]] + a[tri[1]] + a[tri[2]]) / 3.0;
        for (li, &ni) in tri.iter().enumerate() {
            load[ni] += abar * g * bz[li] * area;
        }
    }
    Ok(load)
}

/// Lumped mass: `int phi_i`, one third of the node's patch area.
pub fn lumped_mass(grid: &Grid) -> Vec<f64> {
    let mut m = vec![0.0; grid.n_nodes()];
    for t in 0..grid.tris().len() {
        let tri = grid.tris()[t];
        let (_, _, area) = p1_gradients(&grid.tri_coords(t));
        for &ni in &tri {
            m[ni] += area / 3.0;
        }
    }
    m
}

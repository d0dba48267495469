//! Reduction of an assembled node-indexed system to free degrees of
//! freedom: Dirichlet rows are eliminated with their columns folded into
//! the right-hand side, and (optionally) the whole top row of nodes is
//! merged into a single unknown carrying the prescribed total-flux load.
//! The merged unknown realizes "p constant on the top boundary, value
//! unknown" exactly, with the sum of the top nodal test functions as its
//! test function.

use crate::assemble::{Csr, CsrBuilder};
use crate::mesh::Grid;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LinearSystem {
    /// Reduced matrix over free DOFs.
    pub matrix: Csr,
    pub rhs: Vec<f64>,
    pub n: usize,
    /// node -> free DOF; `None` for Dirichlet nodes. All top nodes map to
    /// the same DOF when the top is merged.
    pub dof_of_node: Vec<Option<usize>>,
    /// Dirichlet value per node (0 for free nodes).
    pub boundary_value: Vec<f64>,
    pub merged_dof: Option<usize>,
    /// Whether the matrix is symmetric positive definite (caller-asserted).
    pub spd: bool,
    /// Per-DOF contribution of the eliminated Dirichlet columns; fixed as
    /// long as the matrix and boundary values stand.
    fold: Vec<f64>,
}

/// Eliminates `dirichlet` nodes from `matrix * u = full_rhs` and, when
/// `merge_top` is set, collapses the top node row into one unknown whose
/// equation additionally receives `top_load`.
pub fn reduce_system(
    matrix: &Csr,
    full_rhs: &[f64],
    grid: &Grid,
    dirichlet: &[(usize, f64)],
    merge_top: bool,
    top_load: f64,
    spd: bool,
) -> Result<LinearSystem> {
    let n_nodes = grid.n_nodes();
    if matrix.n_rows != n_nodes || matrix.n_cols != n_nodes {
        return Err(Error::InvalidInput(format!(
            "reduce_system: matrix is {}x{}, grid has {} nodes",
            matrix.n_rows, matrix.n_cols, n_nodes
        )));
    }
    if full_rhs.len() != n_nodes {
        return Err(Error::InvalidInput(format!(
            "reduce_system: rhs has {} entries, grid has {} nodes",
            full_rhs.len(),
            n_nodes
        )));
    }

    let mut boundary_value = vec![0.0; n_nodes];
    let mut is_dirichlet = vec![false; n_nodes];
    for &(node, value) in dirichlet {
        if node >= n_nodes {
            return Err(Error::InvalidInput(format!("reduce_system: Dirichlet node {node} out of range")));
        }
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!("reduce_system: non-finite Dirichlet value at node {node}")));
        }
        if is_dirichlet[node] {
            return Err(Error::InvalidInput(format!("reduce_system: node {node} constrained twice")));
        }
        if merge_top && grid.is_top(node) {
            return Err(Error::InvalidInput(format!(
                "reduce_system: node {node} is both Dirichlet and part of the merged top boundary"
            )));
        }
        is_dirichlet[node] = true;
        boundary_value[node] = value;
    }

    // Free DOFs in node order; the merged top DOF is allocated at the first
    // top node, which keeps it last and the bandwidth at one node row.
    let mut dof_of_node: Vec<Option<usize>> = vec![None; n_nodes];
    let mut merged_dof = None;
    let mut next = 0;
    for node in 0..n_nodes {
        if is_dirichlet[node] {
            continue;
        }
        if merge_top && grid.is_top(node) {
            let dof = *merged_dof.get_or_insert_with(|| {
                let d = next;
                next += 1;
                d
            });
            dof_of_node[node] = Some(dof);
        } else {
            dof_of_node[node] = Some(next);
            next += 1;
        }
    }
    let n = next;

    let mut builder = CsrBuilder::new(n, n);
    let mut fold = vec![0.0; n];
    for node in 0..n_nodes {
        let Some(r) = dof_of_node[node] else { continue };
        let (cols, vals) = matrix.row(node);
        for (&c, &v) in cols.iter().zip(vals) {
            match dof_of_node[c] {
                Some(d) => builder.add(r, d, v),
                None => fold[r] += v * boundary_value[c],
            }
        }
    }

    let mut sys = LinearSystem {
        matrix: builder.build(),
        rhs: Vec::new(),
        n,
        dof_of_node,
        boundary_value,
        merged_dof,
        spd,
        fold,
    };
    sys.replace_rhs(full_rhs, top_load);
    Ok(sys)
}

impl LinearSystem {
    /// Reduced right-hand side for a new load under the same matrix and
    /// boundary values.
    pub fn reduced_rhs(&self, full_rhs: &[f64], top_load: f64) -> Vec<f64> {
        assert_eq!(full_rhs.len(), self.dof_of_node.len());
        let mut rhs = vec![0.0; self.n];
        for (node, dof) in self.dof_of_node.iter().enumerate() {
            if let Some(r) = dof {
                rhs[*r] += full_rhs[node];
            }
        }
        for r in 0..self.n {
            rhs[r] -= self.fold[r];
        }
        if let Some(m) = self.merged_dof {
            rhs[m] += top_load;
        }
        rhs
    }

    /// Replaces the stored right-hand side via `reduced_rhs`.
    pub fn replace_rhs(&mut self, full_rhs: &[f64], top_load: f64) {
        self.rhs = self.reduced_rhs(full_rhs, top_load);
    }

    /// Maps a DOF vector back to nodes, filling Dirichlet values.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        self.dof_of_node
            .iter()
            .enumerate()
            .map(|(node, dof)| match dof {
                Some(d) => x[*d],
                None => self.boundary_value[node],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::{assemble_mass, assemble_stiffness};

    fn grid_2x2() -> Grid {
        Grid::new(1.0, 1.0, 2, 2).unwrap()
    }

    #[test]
    fn dof_layout_with_merged_top() {
        let grid = grid_2x2();
        let k = assemble_stiffness(&grid, &vec![1.0; 9]).unwrap();
        let dir: Vec<(usize, f64)> = (0..=2).map(|i| (i, 1.0)).collect();
        let sys = reduce_system(&k, &vec![0.0; 9], &grid, &dir, true, 0.0, true).unwrap();
        // 9 nodes - 3 Dirichlet - 3 top + 1 merged = 4 free DOFs.
        assert_eq!(sys.n, 4);
        assert_eq!(sys.merged_dof, Some(3));
        assert_eq!(sys.dof_of_node[3], Some(0));
        assert_eq!(sys.dof_of_node[6], Some(3));
        assert_eq!(sys.dof_of_node[7], Some(3));
        assert_eq!(sys.dof_of_node[8], Some(3));
        assert_eq!(sys.dof_of_node[0], None);
    }

    #[test]
    fn merged_row_sums_top_rows_and_columns() {
        let grid = grid_2x2();
        let k = assemble_stiffness(&grid, &vec![1.0; 9]).unwrap();
        let sys = reduce_system(&k, &vec![0.0; 9], &grid, &[], true, 0.0, true).unwrap();
        let m = sys.merged_dof.unwrap();
        // Diagonal of the merged DOF = sum of all top-row x top-column
        // entries of the full matrix.
        let mut expect = 0.0;
        for i in 6..9 {
            for j in 6..9 {
                expect += k.get(i, j);
            }
        }
        assert!((sys.matrix.get(m, m) - expect).abs() < 1e-14);
        // Coupling merged ~ node 4 (center) = sum over top row entries.
        let d4 = sys.dof_of_node[4].unwrap();
        let expect: f64 = (6..9).map(|i| k.get(i, 4)).sum();
        assert!((sys.matrix.get(m, d4) - expect).abs() < 1e-14);
        assert!((sys.matrix.get(d4, m) - expect).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_columns_fold_into_rhs() {
        let grid = grid_2x2();
        let mass = assemble_mass(&grid, &vec![1.0; 9]).unwrap();
        let dir = [(0usize, 2.0), (1usize, -1.0), (2usize, 0.5)];
        let full_rhs: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let sys = reduce_system(&mass, &full_rhs, &grid, &dir, false, 0.0, true).unwrap();
        assert_eq!(sys.n, 6);
        // Row for node 4 (dof 1): rhs[4] - sum_d M[4,d] * value_d.
        let expect = 4.0 - (mass.get(4, 0) * 2.0 + mass.get(4, 1) * -1.0 + mass.get(4, 2) * 0.5);
        assert!((sys.rhs[sys.dof_of_node[4].unwrap()] - expect).abs() < 1e-14);
    }

    #[test]
    fn top_load_lands_on_merged_dof_only() {
        let grid = grid_2x2();
        let k = assemble_stiffness(&grid, &vec![1.0; 9]).unwrap();
        let sys = reduce_system(&k, &vec![0.0; 9], &grid, &[], true, 0.056, true).unwrap();
        for r in 0..sys.n {
            let expect = if Some(r) == sys.merged_dof { 0.056 } else { 0.0 };
            assert_eq!(sys.rhs[r], expect);
        }
    }

    #[test]
    fn replace_rhs_matches_fresh_reduction() {
        let grid = grid_2x2();
        let k = assemble_stiffness(&grid, &vec![1.0; 9]).unwrap();
        let dir: Vec<(usize, f64)> = (0..=2).map(|i| (i, 0.3 * i as f64)).collect();
        let rhs1: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let rhs2: Vec<f64> = (0..9).map(|i| (i * i) as f64).collect();
        let mut sys = reduce_system(&k, &rhs1, &grid, &dir, true, 1.0, true).unwrap();
        sys.replace_rhs(&rhs2, 2.0);
        let fresh = reduce_system(&k, &rhs2, &grid, &dir, true, 2.0, true).unwrap();
        assert_eq!(sys.rhs, fresh.rhs);
    }

    #[test]
    fn expand_restores_boundary_values() {
        let grid = grid_2x2();
        let k = assemble_stiffness(&grid, &vec![1.0; 9]).unwrap();
        let dir = [(0usize, 7.0), (1usize, 8.0), (2usize, 9.0)];
        let sys = reduce_system(&k, &vec![0.0; 9], &grid, &dir, true, 0.0, true).unwrap();
        let x: Vec<f64> = (0..sys.n).map(|d| d as f64).collect();
        let full = sys.expand(&x);
        assert_eq!(&full[0..3], &[7.0, 8.0, 9.0]);
        assert_eq!(full[3], 0.0);
        // All top nodes share the merged value.
        assert_eq!(full[6], 3.0);
        assert_eq!(full[7], 3.0);
        assert_eq!(full[8], 3.0);
    }

    #[test]
    fn rejects_inconsistent_constraints() {
        let grid = grid_2x2();
        let k = assemble_stiffness(&grid, &vec![1.0; 9]).unwrap();
        let rhs = vec![0.0; 9];
        assert!(reduce_system(&k, &rhs, &grid, &[(20, 1.0)], false, 0.0, true).is_err());
        assert!(reduce_system(&k, &rhs, &grid, &[(1, 1.0), (1, 2.0)], false, 0.0, true).is_err());
        assert!(reduce_system(&k, &rhs, &grid, &[(7, 1.0)], true, 0.0, true).is_err());
        assert!(reduce_system(&k, &rhs, &grid, &[(0, f64::NAN)], false, 0.0, true).is_err());
        // Constraining a top node is fine when the top is not merged.
        assert!(reduce_system(&k, &rhs, &grid, &[(7, 1.0)], false, 0.0, true).is_ok());
    }
}

//! Damped fixed-point solver for the coupled travelling-wave system.
//!
//! One outer iteration performs two linear solves on the strip:
//!
//! 1. a damped pressure update,
//!    `M p - div(k(s)(grad p + g e_z)) = M p_prev - (1/tau) [p_prev - pc(s)]_+`,
//!    with the Dirichlet trace on the bottom, the single merged unknown
//!    `p*` on the top carrying the prescribed flux, and natural lateral
//!    conditions;
//! 2. a saturation transport update,
//!    `c dz(s) - c eps lap(s) = (1/tau) [p - pc(s_prev)]_+`,
//!    with the inflow trace on the bottom.
//!
//! The saturation matrix does not depend on the wave speed `c` (the speed
//! scales both sides), so it is assembled and factored once per solver and
//! reused across every iteration and every continuation step.
//!
//! The positive-part source terms are integrated with the vertex rule.  With
//! that choice the pressure update is exactly a descent step for the convex
//! energy implemented by [`Solver::energy`], which `variational_pressure_solve`
//! exploits; the damping weight only has to satisfy `M >= 1/(2 tau)` for the
//! descent argument, which the reference value `M = 4` does comfortably.

use serde::{Deserialize, Serialize};

use crate::assemble::{
    assemble_dz, assemble_gravity_load, assemble_mass, assemble_stiffness, lumped_mass, Csr,
};
use crate::constitutive::{k_field, pc_field, pos_part, ConstitutiveModel, QuadraticKinkLaws};
use crate::linsolve::{self, Factorization};
use crate::mesh::Grid;
use crate::system::{reduce_system, LinearSystem};
use crate::{Error, Result};

/// How the prescribed top flux `f_inf` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxConvention {
    /// `f_inf` is the total flux through the top boundary (default).
    Total,
    /// `f_inf` is a flux density per unit width; the total load is `f_inf * l`.
    PerLength,
}

/// Full parameter set for one solve.  `Default` is the reference
/// configuration used throughout the test suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Params {
    /// Strip width (y extent).
    pub l: f64,
    /// Strip height (z extent, truncation of the half-infinite strip).
    pub h: f64,
    /// Cells across the width.
    pub nx: usize,
    /// Cells across the height.
    pub nz: usize,
    /// Gravity coefficient multiplying `e_z` in the flux.
    pub g: f64,
    /// Hysteresis relaxation time.
    pub tau: f64,
    /// Wave speed (continuation parameter).
    pub c: f64,
    /// Prescribed flux through the top boundary; see `flux_convention`.
    pub f_inf: f64,
    /// Conductivity floor in `k(s) = kappa + [s - a]_+^2`.
    pub kappa: f64,
    /// Conductivity kink location.
    pub a: f64,
    /// Uniform bottom saturation trace.
    pub s0_base: f64,
    /// Amplitude of the Gaussian bump in the bottom pressure trace.
    pub delta: f64,
    /// Width of the Gaussian bump.
    pub d: f64,
    /// Center of the Gaussian bump.
    pub y_c: f64,
    /// Fixed-point damping weight `M`.
    pub m_damp: f64,
    /// Saturation diffusion regularization `eps`.
    pub epsilon: f64,
    /// Fixed-point stopping tolerance on `|dp|_inf + |ds|_inf`.
    pub tol_fp: f64,
    /// Fixed-point iteration cap.
    pub max_iter: usize,
    /// Relative residual tolerance for the inner linear solves.
    pub rtol_lin: f64,
    /// Initial pressure (constant field) for cold starts.
    pub p_init: f64,
    /// Initial saturation (constant field) for cold starts.
    pub s_init: f64,
    /// Interpretation of `f_inf`.
    pub flux_convention: FluxConvention,
    /// Far-field saturation used by diagnostics; defaults to `s0_base`.
    pub s_star: f64,
    /// Relative source threshold when locating the free boundary.
    pub dz_threshold_rel: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            l: 2.0,
            h: 2.0,
            nx: 128,
            nz: 128,
            g: 1.0,
            tau: 2.0,
            c: 0.04,
            f_inf: 0.056,
            kappa: 0.001,
            a: 0.32,
            s0_base: 1e-5,
            delta: 0.078,
            d: 0.25,
            y_c: 1.0,
            m_damp: 4.0,
            epsilon: 8e-4,
            tol_fp: 1e-9,
            max_iter: 20_000,
            rtol_lin: 1e-10,
            p_init: 4.5,
            s_init: 1e-5,
            flux_convention: FluxConvention::Total,
            s_star: 1e-5,
            dz_threshold_rel: 1e-8,
        }
    }
}

impl Params {
    /// Checks ranges and finiteness of every field; collects all problems.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut chk = |ok: bool, msg: &str| {
            if !ok {
                bad.push(msg.to_string());
            }
        };
        chk(self.l.is_finite() && self.l > 0.0, "l must be positive");
        chk(self.h.is_finite() && self.h > 0.0, "h must be positive");
        chk(self.nx >= 1, "nx must be at least 1");
        chk(self.nz >= 1, "nz must be at least 1");
        chk(self.g.is_finite() && self.g >= 0.0, "g must be nonnegative");
        chk(self.tau.is_finite() && self.tau > 0.0, "tau must be positive");
        chk(self.c.is_finite() && self.c > 0.0, "c must be positive");
        chk(self.f_inf.is_finite(), "f_inf must be finite");
        chk(self.kappa.is_finite() && self.kappa > 0.0, "kappa must be positive");
        chk(self.a.is_finite() && (0.0..=1.0).contains(&self.a), "a must lie in [0, 1]");
        chk(
            self.s0_base.is_finite() && (0.0..=1.0).contains(&self.s0_base),
            "s0_base must lie in [0, 1]",
        );
        chk(self.delta.is_finite() && self.delta >= 0.0, "delta must be nonnegative");
        chk(self.d.is_finite() && self.d > 0.0, "d must be positive");
        chk(self.y_c.is_finite(), "y_c must be finite");
        chk(self.m_damp.is_finite() && self.m_damp > 0.0, "m_damp must be positive");
        chk(self.epsilon.is_finite() && self.epsilon >= 0.0, "epsilon must be nonnegative");
        chk(self.tol_fp.is_finite() && self.tol_fp > 0.0, "tol_fp must be positive");
        chk(self.max_iter >= 1, "max_iter must be at least 1");
        chk(self.rtol_lin.is_finite() && self.rtol_lin > 0.0, "rtol_lin must be positive");
        chk(self.p_init.is_finite(), "p_init must be finite");
        chk(
            self.s_init.is_finite() && (0.0..=1.0).contains(&self.s_init),
            "s_init must lie in [0, 1]",
        );
        chk(
            self.s_star.is_finite() && 0.0 <= self.s_star && self.s_star < 1.0,
            "s_star must lie in [0, 1)",
        );
        chk(
            self.dz_threshold_rel.is_finite() && self.dz_threshold_rel > 0.0,
            "dz_threshold_rel must be positive",
        );
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(bad.join("; ")))
        }
    }

    /// Total flux loaded on the merged top unknown.
    pub fn top_load(&self) -> f64 {
        match self.flux_convention {
            FluxConvention::Total => self.f_inf,
            FluxConvention::PerLength => self.f_inf * self.l,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.l, self.h, self.nx, self.nz)
    }
}

/// Dirichlet traces on the bottom boundary, indexed by column `i = 0..=nx`.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub s0: Vec<f64>,
    pub p0: Vec<f64>,
}

/// Builds the bottom traces: a uniform saturation `s0_base` and the pressure
/// `pc(s0_base) + delta * exp(-((y - y_c)/d)^2)`.  A negative bump amplitude
/// would push the pressure below the capillary threshold and is rejected.
pub fn boundary_data(
    params: &Params,
    grid: &Grid,
    laws: &dyn ConstitutiveModel,
) -> Result<BoundaryData> {
    if params.delta < 0.0 {
        return Err(Error::InvalidInput(
            "delta must be nonnegative: the bottom pressure may not drop below pc(s0)".into(),
        ));
    }
    let base = laws.pc(params.s0_base);
    if !base.is_finite() {
        return Err(Error::InvalidInput(format!(
            "pc(s0_base) is not finite: pc({}) = {base}",
            params.s0_base
        )));
    }
    let mut s0 = Vec::with_capacity(grid.nx + 1);
    let mut p0 = Vec::with_capacity(grid.nx + 1);
    for i in 0..=grid.nx {
        let y = grid.y(i);
        let w = (y - params.y_c) / params.d;
        s0.push(params.s0_base);
        p0.push(base + params.delta * (-w * w).exp());
    }
    Ok(BoundaryData { s0, p0 })
}

/// Result of one pressure half-step.
#[derive(Debug, Clone)]
pub struct PressureStep {
    pub p: Vec<f64>,
    /// Value of the merged top unknown.
    pub p_star: f64,
    /// Saturation nodes outside `[0, 1]` met while forming coefficients.
    pub out_of_range: u64,
    pub rel_residual: f64,
}

/// Result of one saturation half-step.
#[derive(Debug, Clone)]
pub struct SaturationStep {
    pub s: Vec<f64>,
    /// Saturation nodes outside `[0, 1]` met while forming the source.
    pub out_of_range: u64,
    pub rel_residual: f64,
}

/// Converged (or capped) outer iteration state.
#[derive(Debug, Clone)]
pub struct Solution {
    pub s: Vec<f64>,
    pub p: Vec<f64>,
    pub p_star: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Last combined update `|dp|_inf + |ds|_inf`.
    pub final_update: f64,
    /// Combined update after every outer iteration.
    pub update_history: Vec<f64>,
    /// Total law evaluations at saturations outside `[0, 1]`.
    pub out_of_range: u64,
}

/// Result of the energy-descent pressure solve.
#[derive(Debug, Clone)]
pub struct VariationalSolve {
    pub p: Vec<f64>,
    pub p_star: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Energy after every iterate, starting with the initial guess.
    pub energy_history: Vec<f64>,
    /// Whether the energy decreased (up to roundoff) at every step.
    pub monotone: bool,
    /// Sup norm of the discrete Euler-Lagrange residual at the final iterate,
    /// measured against the vertex masses.
    pub stationarity: f64,
}

/// Sup norms of the strong-form residuals of a computed state.
#[derive(Debug, Clone, Copy)]
pub struct ResidualReport {
    /// Pressure equation residual over interior rows, `|r_i| / m_i`.
    pub r_pde: f64,
    /// Hysteresis relation residual over free saturation rows.
    pub r_hys: f64,
}

/// Fixed-grid solver with the grid, constitutive laws, constant matrices, and
/// the factored saturation operator cached.  The wave speed can be changed
/// with [`Solver::set_c`] without touching any cached factorization.
pub struct Solver {
    pub params: Params,
    pub grid: Grid,
    laws: Box<dyn ConstitutiveModel + Send + Sync>,
    bdata: BoundaryData,
    /// Consistent mass matrix with unit weight.
    mass_unit: Csr,
    /// Vertex-rule (lumped) masses.
    lumped: Vec<f64>,
    /// Stiffness matrix with unit coefficient.
    stiff_unit: Csr,
    /// Vertical transport matrix (`dz` tested against P1 functions).
    dz_mat: Csr,
    /// Reduced saturation system `dz + eps * stiffness`, bottom rows eliminated.
    sat_sys: LinearSystem,
    sat_factor: Factorization,
}

impl Solver {
    pub fn new(params: Params) -> Result<Self> {
        let laws = QuadraticKinkLaws::new(params.kappa, params.a)?;
        Self::with_laws(params, Box::new(laws))
    }

    /// Builds a solver around custom constitutive laws; `kappa` and `a` in
    /// `params` are ignored in that case.
    pub fn with_laws(
        params: Params,
        laws: Box<dyn ConstitutiveModel + Send + Sync>,
    ) -> Result<Self> {
        params.validate()?;
        let grid = params.grid()?;
        let bdata = boundary_data(&params, &grid, laws.as_ref())?;
        let ones = vec![1.0; grid.n_nodes()];
        let mass_unit = assemble_mass(&grid, &ones)?;
        let lumped = lumped_mass(&grid);
        let stiff_unit = assemble_stiffness(&grid, &ones)?;
        // Experiment gate: upwinded transport row (see assemble_upwind_dz).
        let dz_mat = if std::env::var_os("FINGERWAVE_UPWIND").is_some() {
            crate::assemble::assemble_upwind_dz(&grid)
        } else {
            assemble_dz(&grid)
        };
        let sat_matrix = Csr::linear_combination(1.0, &dz_mat, params.epsilon, &stiff_unit)?;
        let s_dirichlet: Vec<(usize, f64)> =
            grid.bottom_nodes().map(|n| (n, bdata.s0[n])).collect();
        let zeros = vec![0.0; grid.n_nodes()];
        let sat_sys = reduce_system(&sat_matrix, &zeros, &grid, &s_dirichlet, false, 0.0, false)?;
        let sat_factor = linsolve::factor(&sat_sys.matrix, false)?;
        Ok(Solver {
            params,
            grid,
            laws,
            bdata,
            mass_unit,
            lumped,
            stiff_unit,
            dz_mat,
            sat_sys,
            sat_factor,
        })
    }

    pub fn laws(&self) -> &dyn ConstitutiveModel {
        self.laws.as_ref()
    }

    pub fn boundary(&self) -> &BoundaryData {
        &self.bdata
    }

    /// Changes the wave speed.  Every cached matrix is speed-independent, so
    /// this is free; it is the entry point for continuation sweeps.
    pub fn set_c(&mut self, c: f64) -> Result<()> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidInput(format!("wave speed must be positive, got {c}")));
        }
        self.params.c = c;
        Ok(())
    }

    fn pressure_dirichlet(&self) -> Vec<(usize, f64)> {
        self.grid.bottom_nodes().map(|n| (n, self.bdata.p0[n])).collect()
    }

    /// One damped pressure update with the saturation frozen.
    pub fn pressure_step(&self, s_frozen: &[f64], p_prev: &[f64]) -> Result<PressureStep> {
        let n = self.grid.n_nodes();
        if s_frozen.len() != n || p_prev.len() != n {
            return Err(Error::InvalidInput("pressure_step: field length mismatch".into()));
        }
        let (ks, oob_k) = k_field(self.laws.as_ref(), s_frozen)?;
        let (pcs, oob_pc) = pc_field(self.laws.as_ref(), s_frozen)?;
        let stiff = assemble_stiffness(&self.grid, &ks)?;
        let matrix = Csr::linear_combination(1.0, &stiff, self.params.m_damp, &self.mass_unit)?;
        let gl = assemble_gravity_load(&self.grid, &ks, self.params.g)?;

        let damped: Vec<f64> = p_prev.iter().map(|v| self.params.m_damp * v).collect();
        let mut rhs = self.mass_unit.mul_vec(&damped);
        let inv_tau = 1.0 / self.params.tau;
        for i in 0..n {
            rhs[i] -= self.lumped[i] * inv_tau * pos_part(p_prev[i] - pcs[i]);
            rhs[i] -= gl[i];
        }

        let sys = reduce_system(
            &matrix,
            &rhs,
            &self.grid,
            &self.pressure_dirichlet(),
            true,
            self.params.top_load(),
            true,
        )?;
        let (p, report) = linsolve::solve(&sys, self.params.rtol_lin)?;
        let p_star = p[self.grid.node(0, self.grid.nz)];
        Ok(PressureStep { p, p_star, out_of_range: oob_k + oob_pc, rel_residual: report.rel_residual })
    }

    /// One saturation transport update with the new pressure, reusing the
    /// cached factorization.
    pub fn saturation_step(&self, s_prev: &[f64], p_new: &[f64]) -> Result<SaturationStep> {
        self.saturation_update(s_prev, p_new, None)
    }

    /// Saturation update with a different regularization (used to compare
    /// regularizations without re-building a solver).  Factors the modified
    /// matrix on every call.
    pub fn saturation_step_with_epsilon(
        &self,
        s_prev: &[f64],
        p_new: &[f64],
        epsilon: f64,
    ) -> Result<SaturationStep> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidInput(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        self.saturation_update(s_prev, p_new, Some(epsilon))
    }

    fn saturation_update(
        &self,
        s_prev: &[f64],
        p_new: &[f64],
        epsilon: Option<f64>,
    ) -> Result<SaturationStep> {
        let n = self.grid.n_nodes();
        if s_prev.len() != n || p_new.len() != n {
            return Err(Error::InvalidInput("saturation_step: field length mismatch".into()));
        }
        if std::env::var_os("FINGERWAVE_IMPLICIT_SAT").is_some() {
            return self.saturation_update_implicit(s_prev, p_new, epsilon);
        }
        let (pcs, oob) = pc_field(self.laws.as_ref(), s_prev)?;
        let scale = 1.0 / (self.params.c * self.params.tau);
        let mut load = vec![0.0; n];
        for i in 0..n {
            load[i] = self.lumped[i] * scale * pos_part(p_new[i] - pcs[i]);
        }
        let (x, rel) = match epsilon {
            None => {
                let rhs = self.sat_sys.reduced_rhs(&load, 0.0);
                linsolve::solve_reduced(
                    &self.sat_factor,
                    &self.sat_sys.matrix,
                    &rhs,
                    self.params.rtol_lin,
                )?
            }
            Some(eps) => {
                let matrix = Csr::linear_combination(1.0, &self.dz_mat, eps, &self.stiff_unit)?;
                let s_dirichlet: Vec<(usize, f64)> =
                    self.grid.bottom_nodes().map(|n| (n, self.bdata.s0[n])).collect();
                let sys =
                    reduce_system(&matrix, &load, &self.grid, &s_dirichlet, false, 0.0, false)?;
                let f = linsolve::factor(&sys.matrix, false)?;
                let (x, rel) =
                    linsolve::solve_reduced(&f, &sys.matrix, &sys.rhs, self.params.rtol_lin)?;
                return Ok(SaturationStep { s: sys.expand(&x), out_of_range: oob, rel_residual: rel });
            }
        };
        Ok(SaturationStep { s: self.sat_sys.expand(&x), out_of_range: oob, rel_residual: rel })
    }

    /// Transport update with the capillary pressure taken at the unknown
    /// iterate: solves  Dz s + eps K1 s = m (1/(c tau)) [p - pc(s)]_+  by a
    /// semismooth Newton / active-set loop, warm-started from `s_start`.
    fn saturation_update_implicit(
        &self,
        s_start: &[f64],
        p_new: &[f64],
        epsilon: Option<f64>,
    ) -> Result<SaturationStep> {
        let n = self.grid.n_nodes();
        let eps = epsilon.unwrap_or(self.params.epsilon);
        let base = Csr::linear_combination(1.0, &self.dz_mat, eps, &self.stiff_unit)?;
        let s_dirichlet: Vec<(usize, f64)> =
            self.grid.bottom_nodes().map(|nd| (nd, self.bdata.s0[nd])).collect();
        let scale = 1.0 / (self.params.c * self.params.tau);
        let laws = self.laws.as_ref();

        let mut s = s_start.to_vec();
        let mut oob = 0;
        let mut rel = 0.0;
        let mut active: Vec<bool> = Vec::new();
        for _inner in 0..80 {
            let (pcs, o) = pc_field(laws, &s)?;
            oob += o;
            let next_active: Vec<bool> =
                (0..n).map(|i| p_new[i] - pcs[i] > 0.0).collect();
            let mut b = crate::assemble::CsrBuilder::new(n, n);
            for i in 0..n {
                let (cols, vals) = base.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    b.add(i, j, v);
                }
                if next_active[i] {
                    b.add(i, i, self.lumped[i] * scale * laws.pc_prime_ext(s[i]));
                }
            }
            let matrix = b.build();
            let mut load = vec![0.0; n];
            for i in 0..n {
                if next_active[i] {
                    load[i] = self.lumped[i]
                        * scale
                        * (p_new[i] - pcs[i] + laws.pc_prime_ext(s[i]) * s[i]);
                }
            }
            let sys = reduce_system(&matrix, &load, &self.grid, &s_dirichlet, false, 0.0, false)?;
            let f = linsolve::factor(&sys.matrix, false)?;
            let (x, r) = linsolve::solve_reduced(&f, &sys.matrix, &sys.rhs, self.params.rtol_lin)?;
            let s_next = sys.expand(&x);
            rel = r;
            let mut dsup = 0.0_f64;
            let mut ssup = 0.0_f64;
            for i in 0..n {
                dsup = dsup.max((s_next[i] - s[i]).abs());
                ssup = ssup.max(s_next[i].abs());
            }
            let settled = dsup <= 1e-12 * (1.0 + ssup)
                && next_active == active;
            s = s_next;
            active = next_active;
            if settled {
                return Ok(SaturationStep { s, out_of_range: oob, rel_residual: rel });
            }
        }
        Err(Error::Solver {
            message: "saturation stage active set did not settle within 80 sweeps".into(),
            residual: rel,
        })
    }

    /// Cold-start fields: constant `p_init` away from the bottom trace, and
    /// constant `s_init` away from the bottom trace.
    pub fn initial_state(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.n_nodes();
        let mut p = vec![self.params.p_init; n];
        let mut s = vec![self.params.s_init; n];
        for node in self.grid.bottom_nodes() {
            p[node] = self.bdata.p0[node];
            s[node] = self.bdata.s0[node];
        }
        (p, s)
    }

    /// Runs the damped fixed-point iteration from the cold start.
    pub fn fixed_point_solve(&self) -> Result<Solution> {
        let (p, s) = self.initial_state();
        self.fixed_point_solve_from(p, s)
    }

    /// Runs the damped fixed-point iteration from given fields (warm start).
    pub fn fixed_point_solve_from(&self, p_start: Vec<f64>, s_start: Vec<f64>) -> Result<Solution> {
        let n = self.grid.n_nodes();
        if p_start.len() != n || s_start.len() != n {
            return Err(Error::InvalidInput("fixed_point_solve: field length mismatch".into()));
        }
        let mut p = p_start;
        let mut s = s_start;
        let mut history = Vec::new();
        let mut out_of_range = 0;
        let mut converged = false;
        let mut iterations = 0;
        let mut p_star = 0.0;
        for it in 1..=self.params.max_iter {
            let ps = self.pressure_step(&s, &p)?;
            let ss = self.saturation_step(&s, &ps.p)?;
            let dp = sup_diff(&ps.p, &p);
            let ds = sup_diff(&ss.s, &s);
            let update = dp + ds;
            if !update.is_finite() {
                return Err(Error::Solver {
                    message: format!("iteration {it} produced a non-finite update"),
                    residual: update,
                });
            }
            history.push(update);
            p = ps.p;
            s = ss.s;
            p_star = ps.p_star;
            out_of_range += ps.out_of_range + ss.out_of_range;
            iterations = it;
            if update < self.params.tol_fp {
                converged = true;
                break;
            }
            if it % 500 == 0 {
                log::debug!("iteration {it}: update {update:.3e}");
            }
        }
        let final_update = history.last().copied().unwrap_or(f64::INFINITY);
        log::info!(
            "fixed point: c = {}, {} iterations, update {:.3e}, converged = {}",
            self.params.c,
            iterations,
            final_update,
            converged
        );
        Ok(Solution {
            s,
            p,
            p_star,
            iterations,
            converged,
            final_update,
            update_history: history,
            out_of_range,
        })
    }

    /// Discrete energy whose minimizer over the admissible pressure set is
    /// the fixed point of [`Solver::pressure_step`] at frozen saturation:
    /// the vertex-rule obstacle term plus the quadratic flux energy minus the
    /// work of the prescribed top flux.
    ///
    /// `p` must carry the bottom trace and be constant on the top; otherwise
    /// it is not admissible and an error is returned.
    pub fn energy(&self, p: &[f64], s_frozen: &[f64]) -> Result<f64> {
        let n = self.grid.n_nodes();
        if p.len() != n || s_frozen.len() != n {
            return Err(Error::InvalidInput("energy: field length mismatch".into()));
        }
        let top0 = p[self.grid.node(0, self.grid.nz)];
        for node in self.grid.top_nodes() {
            if (p[node] - top0).abs() > 1e-11 * (1.0 + top0.abs()) {
                return Err(Error::InvalidInput(
                    "energy: pressure is not constant on the top boundary".into(),
                ));
            }
        }
        for node in self.grid.bottom_nodes() {
            if (p[node] - self.bdata.p0[node]).abs() > 1e-11 * (1.0 + self.bdata.p0[node].abs()) {
                return Err(Error::InvalidInput(
                    "energy: pressure does not carry the bottom trace".into(),
                ));
            }
        }
        let (ks, _) = k_field(self.laws.as_ref(), s_frozen)?;
        let (pcs, _) = pc_field(self.laws.as_ref(), s_frozen)?;
        let mut a_h = 0.0;
        let half_inv_tau = 0.5 / self.params.tau;
        for i in 0..n {
            let w = pos_part(p[i] - pcs[i]);
            a_h += self.lumped[i] * half_inv_tau * w * w;
        }
        for t in 0..self.grid.tris().len() {
            let tri = self.grid.tris()[t];
            let (by, bz, area) = crate::assemble::p1_gradients(&self.grid.tri_coords(t));
            let abar = (ks[tri[0]] + ks[tri[1]] + ks[tri[2]]) / 3.0;
            let mut gy = 0.0;
            let mut gz = 0.0;
            for v in 0..3 {
                gy += by[v] * p[tri[v]];
                gz += bz[v] * p[tri[v]];
            }
            gz += self.params.g;
            a_h += 0.5 * abar * area * (gy * gy + gz * gz);
        }
        a_h -= self.params.top_load() * top0;
        Ok(a_h)
    }

    /// Minimizes the frozen-saturation energy by iterating the damped
    /// pressure update, certifying monotone descent and stationarity.
    pub fn variational_pressure_solve(
        &self,
        s_frozen: &[f64],
        p_start: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> Result<VariationalSolve> {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be positive, got {tol}")));
        }
        let mut p = p_start.to_vec();
        let mut energy_history = vec![self.energy(&p, s_frozen)?];
        let mut monotone = true;
        let mut converged = false;
        let mut iterations = 0;
        let mut p_star = p[self.grid.node(0, self.grid.nz)];
        for it in 1..=max_iter {
            let step = self.pressure_step(s_frozen, &p)?;
            let update = sup_diff(&step.p, &p);
            let a_h = self.energy(&step.p, s_frozen)?;
            let prev = *energy_history.last().unwrap();
            if a_h > prev + 1e-12 * (1.0 + prev.abs()) {
                monotone = false;
            }
            energy_history.push(a_h);
            p = step.p;
            p_star = step.p_star;
            iterations = it;
            if update < tol {
                converged = true;
                break;
            }
        }
        let stationarity = self.stationarity_residual(&p, s_frozen)?;
        Ok(VariationalSolve {
            p,
            p_star,
            iterations,
            converged,
            energy_history,
            monotone,
            stationarity,
        })
    }

    /// Sup norm (scaled by vertex masses) of the discrete Euler-Lagrange
    /// system of the frozen-saturation energy: stiffness and gravity terms,
    /// the vertex-rule obstacle term, and the top flux on the merged row.
    fn stationarity_residual(&self, p: &[f64], s_frozen: &[f64]) -> Result<f64> {
        let n = self.grid.n_nodes();
        let (ks, _) = k_field(self.laws.as_ref(), s_frozen)?;
        let (pcs, _) = pc_field(self.laws.as_ref(), s_frozen)?;
        let stiff = assemble_stiffness(&self.grid, &ks)?;
        let gl = assemble_gravity_load(&self.grid, &ks, self.params.g)?;
        let kp = stiff.mul_vec(p);
        let inv_tau = 1.0 / self.params.tau;
        let mut worst: f64 = 0.0;
        let mut top_sum = 0.0;
        let mut top_mass = 0.0;
        for node in 0..n {
            let r = kp[node] + gl[node] + self.lumped[node] * inv_tau * pos_part(p[node] - pcs[node]);
            if self.grid.is_bottom(node) {
                continue;
            }
            if self.grid.is_top(node) {
                top_sum += r;
                top_mass += self.lumped[node];
            } else {
                worst = worst.max((r / self.lumped[node]).abs());
            }
        }
        worst = worst.max(((top_sum - self.params.top_load()) / top_mass).abs());
        Ok(worst)
    }

    /// Integrates the hysteresis relation `c tau ds/dz = [p - pc(s)]_+`
    /// column by column with implicit Euler steps of size `dz`, taking the
    /// nodal pressure on each mesh line.  Independent of the finite-element
    /// transport operator; used as a cross-check oracle.
    pub fn ode_transport(&self, p: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n_nodes();
        if p.len() != n {
            return Err(Error::InvalidInput("ode_transport: field length mismatch".into()));
        }
        let ctau = self.params.c * self.params.tau;
        let step = self.grid.dz / ctau;
        let mut s = vec![0.0; n];
        for i in 0..=self.grid.nx {
            let mut cur = self.bdata.s0[i];
            s[self.grid.node(i, 0)] = cur;
            for j in 1..=self.grid.nz {
                let pv = p[self.grid.node(i, j)];
                cur = implicit_euler_step(self.laws.as_ref(), cur, pv, step)?;
                s[self.grid.node(i, j)] = cur;
            }
        }
        Ok(s)
    }

    /// Strong-form residuals of a state, scaled by vertex masses: the
    /// pressure equation over interior rows and the hysteresis relation over
    /// all free saturation rows.
    pub fn strong_residual(&self, s: &[f64], p: &[f64]) -> Result<ResidualReport> {
        let n = self.grid.n_nodes();
        if s.len() != n || p.len() != n {
            return Err(Error::InvalidInput("strong_residual: field length mismatch".into()));
        }
        let (ks, _) = k_field(self.laws.as_ref(), s)?;
        let (pcs, _) = pc_field(self.laws.as_ref(), s)?;
        let stiff = assemble_stiffness(&self.grid, &ks)?;
        let gl = assemble_gravity_load(&self.grid, &ks, self.params.g)?;
        let kp = stiff.mul_vec(p);
        let dzs = self.dz_mat.mul_vec(s);
        let k1s = self.stiff_unit.mul_vec(s);
        let c = self.params.c;
        let ctau = c * self.params.tau;
        let mut r_pde: f64 = 0.0;
        let mut r_hys: f64 = 0.0;
        for node in 0..n {
            if self.grid.is_bottom(node) {
                continue;
            }
            let transport = c * dzs[node] + c * self.params.epsilon * k1s[node];
            let hys = ctau * (dzs[node] + self.params.epsilon * k1s[node]) / self.lumped[node]
                - pos_part(p[node] - pcs[node]);
            r_hys = r_hys.max(hys.abs());
            if self.grid.is_interior(node) {
                let pde = (transport + kp[node] + gl[node]) / self.lumped[node];
                r_pde = r_pde.max(pde.abs());
            }
        }
        Ok(ResidualReport { r_pde, r_hys })
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solves `x = s_prev + step * [p - pc(x)]_+` for one implicit Euler step.
/// The right-hand side is nonincreasing in `x`, so the root is unique and
/// bracketed by `[s_prev, s_prev + step * [p - pc(s_prev)]_+]`; safeguarded
/// Newton from the upper end.
fn implicit_euler_step(
    laws: &dyn ConstitutiveModel,
    s_prev: f64,
    p: f64,
    step: f64,
) -> Result<f64> {
    let f = |x: f64| x - s_prev - step * pos_part(p - laws.pc_ext(x));
    let mut lo = s_prev;
    let hi0 = s_prev + step * pos_part(p - laws.pc_ext(s_prev));
    if hi0 == lo {
        return Ok(lo);
    }
    let mut hi = hi0;
    let mut x = hi;
    for _ in 0..200 {
        let fx = f(x);
        if fx.abs() <= 1e-14 * (1.0 + x.abs()) {
            return Ok(x);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        // Derivative of f where the obstacle is active; fall back to bisection
        // when Newton leaves the bracket.
        let active = p - laws.pc_ext(x) > 0.0;
        let dfx = if active { 1.0 + step * laws.pc_prime(x.clamp(0.0, 1.0)) } else { 1.0 };
        let newton = x - fx / dfx;
        x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * (1.0 + hi.abs()) {
            return Ok(x);
        }
    }
    Err(Error::Solver {
        message: format!("implicit Euler step failed to converge at p = {p}, s = {s_prev}"),
        residual: f(x).abs(),
    })
}

/// Injects a coarse nodal field into a grid refined by exactly a factor of
/// two in both directions (bilinear interpolation on the cell structure).
/// Used to warm-start fine-grid runs from coarse solutions.
pub fn refine_field(coarse: &Grid, fine: &Grid, field: &[f64]) -> Result<Vec<f64>> {
    if fine.nx != 2 * coarse.nx || fine.nz != 2 * coarse.nz {
        return Err(Error::InvalidInput(format!(
            "refine_field: {}x{} does not refine {}x{} by two",
            fine.nx, fine.nz, coarse.nx, coarse.nz
        )));
    }
    if field.len() != coarse.n_nodes() {
        return Err(Error::InvalidInput("refine_field: field length mismatch".into()));
    }
    let mut out = vec![0.0; fine.n_nodes()];
    for j in 0..=fine.nz {
        for i in 0..=fine.nx {
            let (ci, cj) = (i / 2, j / 2);
            let v = if i % 2 == 0 && j % 2 == 0 {
                field[coarse.node(ci, cj)]
            } else if i % 2 == 1 && j % 2 == 0 {
                0.5 * (field[coarse.node(ci, cj)] + field[coarse.node(ci + 1, cj)])
            } else if i % 2 == 0 {
                0.5 * (field[coarse.node(ci, cj)] + field[coarse.node(ci, cj + 1)])
            } else {
                0.25 * (field[coarse.node(ci, cj)]
                    + field[coarse.node(ci + 1, cj)]
                    + field[coarse.node(ci, cj + 1)]
                    + field[coarse.node(ci + 1, cj + 1)])
            };
            out[fine.node(i, j)] = v;
        }
    }
    Ok(out)
}

//! Post-processing of converged states: flux profiles, the free boundary,
//! the limiting saturation and its derived quantities, and the Lipschitz
//! bound check.
//!
//! Everything here is pure measurement — no field is modified, and the
//! quantities proved for the doubly infinite strip (`g_f`, `c_mass_balance`)
//! are reported as infinite-domain estimates evaluated on the truncated one.

use crate::assemble::p1_gradients;
use crate::constitutive::pos_part;
use crate::mesh::Grid;
use crate::scheme::{Solution, Solver};
use crate::{Error, Result};

/// Which horizontal edge of a cell row the gradient is taken across.
#[derive(Clone, Copy)]
enum LineSide {
    Lower,
    Upper,
}

/// Per-cell vertical gradient of `p` along one horizontal mesh line,
/// taken from the triangle of element row `r` that contains that edge.
/// (P1 gradients are constant per triangle; the lower-edge triangle is
/// stored first in every cell, the upper-edge triangle second.)
fn row_dpz(grid: &Grid, p: &[f64], r: usize, side: LineSide) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.nx);
    for i in 0..grid.nx {
        let cell = 2 * (r * grid.nx + i);
        let t = match side {
            LineSide::Lower => cell,
            LineSide::Upper => cell + 1,
        };
        let tri = grid.tris()[t];
        let (_, bz, _) = p1_gradients(&grid.tri_coords(t));
        let mut gz = 0.0;
        for v in 0..3 {
            gz += bz[v] * p[tri[v]];
        }
        out.push(gz);
    }
    out
}

/// Trapezoid integral along mesh line `j` of `k(s)(dpz + g) - c s`, with a
/// per-cell constant `dpz` and nodal `s`.
fn line_flux(solver: &Solver, s: &[f64], j: usize, dpz: &[f64]) -> f64 {
    let grid = &solver.grid;
    let laws = solver.laws();
    let g = solver.params.g;
    let c = solver.params.c;
    let f_at = |i: usize, gz: f64| {
        let sv = s[grid.node(i, j)].clamp(0.0, 1.0);
        laws.k(sv) * (gz + g) - c * s[grid.node(i, j)]
    };
    let mut total = 0.0;
    for i in 0..grid.nx {
        total += 0.5 * grid.dy * (f_at(i, dpz[i]) + f_at(i + 1, dpz[i]));
    }
    total
}

/// Cross-section flux on every horizontal mesh line.
#[derive(Debug, Clone)]
pub struct FluxProfile {
    /// Line heights, `j = 0..=nz`.
    pub z: Vec<f64>,
    /// `F_c(z_j)`; boundary lines use the one-sided element row, interior
    /// lines average the rows above and below.
    pub values: Vec<f64>,
    /// Mean over interior lines.
    pub mean: f64,
    /// Max absolute deviation from the mean over interior lines.
    pub max_abs_dev: f64,
    /// `max_abs_dev / |mean|`.
    pub max_rel_dev: f64,
}

/// Evaluates the travelling-wave flux `F_c(z) = int k(s)(dz p + g) - c s dy`
/// on every mesh line. For an exact travelling wave this is independent of
/// `z`; the deviation measures discretization error.
pub fn flux_profile(solver: &Solver, sol: &Solution) -> Result<FluxProfile> {
    let grid = &solver.grid;
    let nz = grid.nz;
    if sol.p.len() != grid.n_nodes() || sol.s.len() != grid.n_nodes() {
        return Err(Error::InvalidInput("flux_profile: field length mismatch".into()));
    }
    let mut z = Vec::with_capacity(nz + 1);
    let mut values = Vec::with_capacity(nz + 1);
    for j in 0..=nz {
        let below = if j >= 1 {
            let dpz = row_dpz(grid, &sol.p, j - 1, LineSide::Upper);
            Some(line_flux(solver, &sol.s, j, &dpz))
        } else {
            None
        };
        let above = if j <= nz - 1 {
            let dpz = row_dpz(grid, &sol.p, j, LineSide::Lower);
            Some(line_flux(solver, &sol.s, j, &dpz))
        } else {
            None
        };
        let f = match (below, above) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => unreachable!("nz >= 1"),
        };
        z.push(grid.z(j));
        values.push(f);
    }
    let interior = &values[1..nz];
    let mean = if interior.is_empty() {
        values.iter().sum::<f64>() / values.len() as f64
    } else {
        interior.iter().sum::<f64>() / interior.len() as f64
    };
    let max_abs_dev = interior
        .iter()
        .map(|v| (v - mean).abs())
        .fold(0.0, f64::max);
    let scale = mean.abs().max(1e-300);
    Ok(FluxProfile { z, values, mean, max_abs_dev, max_rel_dev: max_abs_dev / scale })
}

/// Nodal hysteresis source `[p - pc(s)]_+` of a state.
pub fn source_field(solver: &Solver, sol: &Solution) -> Vec<f64> {
    let laws = solver.laws();
    sol.p
        .iter()
        .zip(&sol.s)
        .map(|(&p, &s)| pos_part(p - laws.pc(s.clamp(0.0, 1.0))))
        .collect()
}

/// Default free-boundary threshold in `dz s` units: the relative factor
/// from the parameters times the largest observed `dz s = source / (c tau)`,
/// floored at roundoff scale so that a state with `p = pc(s)` up to machine
/// precision counts as source-free.
pub fn default_dz_threshold(solver: &Solver, sol: &Solution) -> f64 {
    let max_src = source_field(solver, sol).into_iter().fold(0.0, f64::max);
    let p_scale = sol.p.iter().fold(0.0, |a: f64, &v| a.max(v.abs()));
    let floor = 1e-13 * (1.0 + p_scale);
    (solver.params.dz_threshold_rel * max_src).max(floor)
        / (solver.params.c * solver.params.tau)
}

/// Free boundary of the saturation profile.
#[derive(Debug, Clone)]
pub struct FreeBoundary {
    /// Column positions.
    pub y: Vec<f64>,
    /// Per-column largest height with an active source; 0 when never active.
    pub psi: Vec<f64>,
    /// `max_y psi` — the discrete finger height.
    pub h: f64,
    /// Whether the source exceeds the threshold anywhere (the bottom row
    /// included, which `psi` alone cannot distinguish from inactivity).
    pub any_active: bool,
}

/// Per column, the largest `z` at which the hysteresis source exceeds
/// `threshold * c * tau` (that is, where `dz s` exceeds `threshold`).
pub fn free_boundary(solver: &Solver, sol: &Solution, threshold: f64) -> FreeBoundary {
    let grid = &solver.grid;
    let src = source_field(solver, sol);
    let cut = threshold * solver.params.c * solver.params.tau;
    let mut y = Vec::with_capacity(grid.nx + 1);
    let mut psi = Vec::with_capacity(grid.nx + 1);
    let mut h: f64 = 0.0;
    let mut any_active = false;
    for i in 0..=grid.nx {
        let mut top = 0.0;
        for j in (0..=grid.nz).rev() {
            if src[grid.node(i, j)] > cut {
                any_active = true;
                top = grid.z(j);
                break;
            }
        }
        y.push(grid.y(i));
        psi.push(top);
        h = h.max(top);
    }
    FreeBoundary { y, psi, h, any_active }
}

/// Top-row nodal saturation — the discrete limiting profile.
pub fn s_star_profile(solver: &Solver, sol: &Solution) -> Vec<f64> {
    let grid = &solver.grid;
    (0..=grid.nx).map(|i| sol.s[grid.node(i, grid.nz)]).collect()
}

/// Residual gravity `g - F_inf / int k(s_star)`: the effective driving
/// gradient of the far field (infinite-domain estimate).
pub fn g_f(solver: &Solver, sol: &Solution) -> f64 {
    let grid = &solver.grid;
    let laws = solver.laws();
    let star = s_star_profile(solver, sol);
    let mut integral = 0.0;
    for i in 0..grid.nx {
        let ka = laws.k(star[i].clamp(0.0, 1.0));
        let kb = laws.k(star[i + 1].clamp(0.0, 1.0));
        integral += 0.5 * grid.dy * (ka + kb);
    }
    solver.params.g - solver.params.top_load() / integral
}

/// Mass-balance estimate of the wave speed,
/// `(F_inf - k(s_*) g L) / int (s_star - s_*)` (infinite-domain estimate;
/// meaningful for states whose saturation has genuinely grown at the top).
pub fn c_mass_balance(solver: &Solver, sol: &Solution) -> Result<f64> {
    let grid = &solver.grid;
    let laws = solver.laws();
    let params = &solver.params;
    let star = s_star_profile(solver, sol);
    let mut denom = 0.0;
    for i in 0..grid.nx {
        denom += 0.5 * grid.dy * (star[i] - params.s_star + star[i + 1] - params.s_star);
    }
    if !(denom > 1e-12 * grid.l) {
        return Err(Error::InvalidInput(format!(
            "mass-balance wave speed is undefined: int(s_star - s_*) = {denom:e}"
        )));
    }
    let k_star = laws.k(params.s_star);
    Ok((params.top_load() - k_star * params.g * grid.l) / denom)
}

/// Lipschitz bound report together with the field bound measurements.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzReport {
    /// Measured `max |grad p|` over all triangles.
    pub c_p: f64,
    /// `min pc'` sampled over [0, 1].
    pub rho: f64,
    /// The bound `C_s = C_P / rho + |dy s0|_inf + |p0 - pc(s0)|_inf / (c tau)`.
    pub c_s: f64,
    pub max_ds_dz: f64,
    pub max_ds_dy: f64,
    /// `C_s - max(max_ds_dz, max_ds_dy)`; nonnegative when the bound holds.
    pub margin: f64,
    pub within_bound: bool,
    /// Field bound measurements: max pressure, max saturation, and the
    /// largest value of `p - pc(s) - c tau C_s` (nonpositive when the
    /// pressure-excess bound holds).
    pub max_p: f64,
    pub max_s: f64,
    pub p_excess: f64,
}

/// Measures the saturation gradient against its theoretical Lipschitz bound
/// and collects the pointwise field bounds. Violations are reported, not
/// asserted — the bound is proved for exact solutions only.
pub fn lipschitz_check(solver: &Solver, sol: &Solution) -> Result<LipschitzReport> {
    let grid = &solver.grid;
    let laws = solver.laws();
    let params = &solver.params;
    if sol.p.len() != grid.n_nodes() || sol.s.len() != grid.n_nodes() {
        return Err(Error::InvalidInput("lipschitz_check: field length mismatch".into()));
    }
    let mut c_p: f64 = 0.0;
    let mut max_ds_dz: f64 = 0.0;
    let mut max_ds_dy: f64 = 0.0;
    for t in 0..grid.tris().len() {
        let tri = grid.tris()[t];
        let (by, bz, _) = p1_gradients(&grid.tri_coords(t));
        let (mut py, mut pz, mut sy, mut sz) = (0.0, 0.0, 0.0, 0.0);
        for v in 0..3 {
            py += by[v] * sol.p[tri[v]];
            pz += bz[v] * sol.p[tri[v]];
            sy += by[v] * sol.s[tri[v]];
            sz += bz[v] * sol.s[tri[v]];
        }
        c_p = c_p.max((py * py + pz * pz).sqrt());
        max_ds_dy = max_ds_dy.max(sy.abs());
        max_ds_dz = max_ds_dz.max(sz.abs());
    }
    let mut rho = f64::INFINITY;
    for k in 0..=1000 {
        rho = rho.min(laws.pc_prime(k as f64 / 1000.0));
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidInput(format!(
            "Lipschitz bound needs min pc' > 0, sampled {rho}"
        )));
    }
    let bdata = solver.boundary();
    let mut dy_s0: f64 = 0.0;
    for i in 0..grid.nx {
        dy_s0 = dy_s0.max((bdata.s0[i + 1] - bdata.s0[i]).abs() / grid.dy);
    }
    let mut gap0: f64 = 0.0;
    for i in 0..=grid.nx {
        gap0 = gap0.max((bdata.p0[i] - laws.pc(bdata.s0[i])).abs());
    }
    let ctau = params.c * params.tau;
    let c_s = c_p / rho + dy_s0 + gap0 / ctau;
    let measured = max_ds_dz.max(max_ds_dy);
    let margin = c_s - measured;
    let max_p = sol.p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let max_s = sol.s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p_excess = sol
        .p
        .iter()
        .zip(&sol.s)
        .map(|(&p, &s)| p - laws.pc(s.clamp(0.0, 1.0)) - ctau * c_s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LipschitzReport {
        c_p,
        rho,
        c_s,
        max_ds_dz,
        max_ds_dy,
        margin,
        within_bound: margin >= -1e-12 * (1.0 + c_s.abs()),
        max_p,
        max_s,
        p_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::Params;

    fn constant_state_params(nx: usize, nz: usize) -> Params {
        let base = Params::default();
        Params {
            nx,
            nz,
            delta: 0.0,
            f_inf: base.g * base.kappa * base.l,
            p_init: 1e-5,
            s_init: 1e-5,
            ..base
        }
    }

    fn solution_from(solver: &Solver, s: Vec<f64>, p: Vec<f64>) -> Solution {
        let p_star = p[solver.grid.node(0, solver.grid.nz)];
        Solution {
            s,
            p,
            p_star,
            iterations: 0,
            converged: true,
            final_update: 0.0,
            update_history: Vec::new(),
            out_of_range: 0,
        }
    }

    #[test]
    fn constant_state_flux_is_exact() {
        let params = constant_state_params(8, 8);
        let solver = Solver::new(params).unwrap();
        let sol = solver.fixed_point_solve().unwrap();
        let fp = flux_profile(&solver, &sol).unwrap();
        let expect = params.g * params.kappa * params.l - params.c * 1e-5 * params.l;
        for v in &fp.values {
            assert!((v - expect).abs() < 1e-12, "flux {v} vs {expect}");
        }
        assert!(fp.max_rel_dev < 1e-9);
    }

    /// For a pressure linear in z and uniform saturation, every stencil
    /// (one-sided and averaged) sees the same gradient, so the profile is
    /// exactly flat.
    #[test]
    fn linear_pressure_gives_flat_profile() {
        let params = Params { nx: 6, nz: 9, ..Params::default() };
        let solver = Solver::new(params).unwrap();
        let grid = &solver.grid;
        let alpha = 0.7;
        let mut p = vec![0.0; grid.n_nodes()];
        for j in 0..=grid.nz {
            for i in 0..=grid.nx {
                p[grid.node(i, j)] = alpha * grid.z(j) - 0.2;
            }
        }
        let s = vec![0.5; grid.n_nodes()];
        let sol = solution_from(&solver, s, p);
        let fp = flux_profile(&solver, &sol).unwrap();
        let k = solver.laws().k(0.5);
        let expect = (k * (alpha + params.g) - params.c * 0.5) * params.l;
        for v in &fp.values {
            assert!((v - expect).abs() < 1e-13, "flux {v} vs {expect}");
        }
        assert!(fp.max_abs_dev < 1e-13);
    }

    #[test]
    fn constant_state_free_boundary_is_empty() {
        let solver = Solver::new(constant_state_params(8, 8)).unwrap();
        let sol = solver.fixed_point_solve().unwrap();
        let fb = free_boundary(&solver, &sol, default_dz_threshold(&solver, &sol));
        assert!(fb.psi.iter().all(|&v| v == 0.0));
        assert_eq!(fb.h, 0.0);
        assert!(!fb.any_active, "balanced state has p = pc(s) exactly");
    }

    #[test]
    fn free_boundary_tracks_synthetic_staircase() {
        let params = Params { nx: 4, nz: 8, ..Params::default() };
        let solver = Solver::new(params).unwrap();
        let grid = &solver.grid;
        let n = grid.n_nodes();
        let s = vec![0.2; n];
        // Source active (p > pc(s) = 0.2) for z strictly below a per-column
        // staircase height: column i active up to row i + 1.
        let mut p = vec![0.0; n];
        for i in 0..=grid.nx {
            for j in 0..=grid.nz {
                p[grid.node(i, j)] = if j <= i + 1 { 0.2 + 0.1 * (i + 1) as f64 } else { 0.0 };
            }
        }
        let sol = solution_from(&solver, s, p);
        let fb = free_boundary(&solver, &sol, 1e-12);
        for i in 0..=grid.nx {
            let expect = grid.z((i + 1).min(grid.nz));
            assert!(
                (fb.psi[i] - expect).abs() < 1e-15,
                "column {i}: psi = {}, expected {expect}",
                fb.psi[i]
            );
        }
        assert!(fb.any_active);
        assert!((fb.h - grid.z(grid.nx + 1)).abs() < 1e-15);

        // Raising the threshold never raises psi.
        let mut prev = fb.psi.clone();
        for thr in [1e-6, 1e-2, 1.0] {
            let cur = free_boundary(&solver, &sol, thr / (params.c * params.tau));
            for i in 0..=grid.nx {
                assert!(cur.psi[i] <= prev[i] + 1e-15);
            }
            prev = cur.psi;
        }
    }

    #[test]
    fn constant_state_g_f_vanishes_and_mass_balance_degenerates() {
        let solver = Solver::new(constant_state_params(8, 8)).unwrap();
        let sol = solver.fixed_point_solve().unwrap();
        let gf = g_f(&solver, &sol);
        assert!(gf.abs() < 1e-9, "g_F = {gf}");
        // s_star == s_* identically: the denominator is empty.
        assert!(c_mass_balance(&solver, &sol).is_err());
    }

    #[test]
    fn mass_balance_hand_arithmetic() {
        // s_star = 1, s_* = 0, F = g k(0) L + L  =>  c_hat = 1.
        let base = Params::default();
        let params = Params {
            nx: 5,
            nz: 4,
            s_star: 0.0,
            f_inf: base.g * base.kappa * base.l + base.l,
            ..base
        };
        let solver = Solver::new(params).unwrap();
        let grid = &solver.grid;
        let mut s = vec![0.0; grid.n_nodes()];
        for i in 0..=grid.nx {
            s[grid.node(i, grid.nz)] = 1.0;
        }
        let p = vec![0.0; grid.n_nodes()];
        let sol = solution_from(&solver, s, p);
        let c_hat = c_mass_balance(&solver, &sol).unwrap();
        assert!((c_hat - 1.0).abs() < 1e-14, "c_hat = {c_hat}");
    }

    #[test]
    fn lipschitz_constant_state() {
        let solver = Solver::new(constant_state_params(8, 8)).unwrap();
        let sol = solver.fixed_point_solve().unwrap();
        let rep = lipschitz_check(&solver, &sol).unwrap();
        assert!(rep.c_p < 1e-10, "flat pressure, got c_p = {}", rep.c_p);
        assert_eq!(rep.rho, 1.0, "identity capillary law has pc' = 1");
        assert!(rep.max_ds_dz < 1e-10);
        assert!(rep.max_ds_dy < 1e-10);
        assert!(rep.within_bound);
        assert!((rep.max_p - 1e-5).abs() < 1e-12);
        assert!((rep.max_s - 1e-5).abs() < 1e-12);
        // p - pc(s) = 0 and c tau C_s ~ 0: excess is ~0 but not positive.
        assert!(rep.p_excess < 1e-10);
    }

    #[test]
    fn lipschitz_bound_reflects_boundary_bump() {
        // delta > 0 enters C_s through |p0 - pc(s0)| / (c tau).
        let params = Params { nx: 8, nz: 8, ..Params::default() };
        let solver = Solver::new(params).unwrap();
        let grid = &solver.grid;
        let n = grid.n_nodes();
        let sol = solution_from(&solver, vec![0.3; n], vec![0.1; n]);
        let rep = lipschitz_check(&solver, &sol).unwrap();
        let expect = params.delta / (params.c * params.tau);
        assert!(
            (rep.c_s - expect).abs() < 1e-12,
            "flat fields: C_s = {} should be the boundary term {expect}",
            rep.c_s
        );
    }
}

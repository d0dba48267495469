use fingerwave::scheme::{Params, Solver};
use std::time::Instant;

fn main() {
    let c: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.04);
    let cells: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(128);
    let params = Params { c, nx: cells, nz: cells, ..Params::default() };
    let solver = Solver::new(params).unwrap();
    let t0 = Instant::now();
    let sol = solver.fixed_point_solve().unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "c = {c}, {}x{}: converged = {}, iterations = {}, final_update = {:.3e}, wall = {:.1}s",
        cells, cells, sol.converged, sol.iterations, sol.final_update, dt
    );
    println!("p_star = {:.12}", sol.p_star);
    let grid = &solver.grid;
    let laws = solver.laws();

    // One-sided top flux integral G2 = int_top k(s) dz p (trapezoid in y).
    let dz = grid.dz;
    let mut g2 = 0.0;
    for i in 0..=grid.nx {
        let dpz = (sol.p[grid.node(i, grid.nz)] - sol.p[grid.node(i, grid.nz - 1)]) / dz;
        let k = laws.k(sol.s[grid.node(i, grid.nz)].clamp(0.0, 1.0));
        let w = if i == 0 || i == grid.nx { 0.5 } else { 1.0 };
        g2 += w * grid.dy * k * dpz;
    }
    // G1 = c - kappa * int_bottom dz p / (L * s0).
    let mut ib = 0.0;
    for i in 0..=grid.nx {
        let dpz = (sol.p[grid.node(i, 1)] - sol.p[grid.node(i, 0)]) / dz;
        let w = if i == 0 || i == grid.nx { 0.5 } else { 1.0 };
        ib += w * grid.dy * dpz;
    }
    let g1 = c - 0.001 * ib / (2.0 * 1e-5);
    // Finger height: largest z with active source anywhere.
    let ctau = c * params.tau;
    let mut src_max: f64 = 0.0;
    let mut h_src: f64 = 0.0;
    let mut src = vec![0.0; grid.n_nodes()];
    for n in 0..grid.n_nodes() {
        let v = (sol.p[n] - laws.pc(sol.s[n].clamp(0.0, 1.0))).max(0.0) / ctau;
        src[n] = v;
        src_max = src_max.max(v);
    }
    for j in 0..=grid.nz {
        for i in 0..=grid.nx {
            if src[grid.node(i, j)] > 1e-8 * src_max {
                h_src = h_src.max(grid.z(j));
            }
        }
    }
    let smax = sol.s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let smin = sol.s.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("G1 = {g1:.6e}, G2 = {g2:.6e}, h_src = {h_src:.4}, s in [{smin:.3e}, {smax:.6}]");
    // Iteration history tail to judge contraction rate.
    let h = &sol.update_history;
    let m = h.len();
    if m >= 6 {
        println!("last updates: {:?}", &h[m - 5..]);
        if m > 600 {
            println!("rate per 100 iters at end: {:.4}", h[m - 1] / h[m - 101]);
        }
    }
}

use fingerwave::scheme::{Params, Solver};
use std::time::Instant;

fn main() {
    let cells: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(128);
    let n_it: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let params = Params { nx: cells, nz: cells, ..Params::default() };
    let solver = Solver::new(params).unwrap();
    let (mut p, mut s) = solver.initial_state();
    let t0 = Instant::now();
    let mut updates = Vec::new();
    for _ in 0..n_it {
        let ps = solver.pressure_step(&s, &p).unwrap();
        let ss = solver.saturation_step(&s, &ps.p).unwrap();
        let du = ps
            .p
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
            + ss.s.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        updates.push(du);
        p = ps.p;
        s = ss.s;
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("{} iterations at {cells}x{cells}: {:.2}s total, {:.3}s/iter", n_it, dt, dt / n_it as f64);
    println!("updates: first {:?}", &updates[..4.min(updates.len())]);
    println!("updates: last  {:?}", &updates[updates.len().saturating_sub(4)..]);
    if updates.len() >= 20 {
        let r = (updates[updates.len() - 1] / updates[updates.len() - 11]).powf(0.1);
        println!("contraction per iter (last 10): {r:.6}");
    }
}

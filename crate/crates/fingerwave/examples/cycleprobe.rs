//! Dev probe: cold-start convergence behaviour across grid sizes, speeds,
//! damping, and law-evaluation variants.

use fingerwave::constitutive::{pos_part, ConstitutiveModel};
use fingerwave::scheme::{Params, Solver};
use std::time::Instant;

/// Reference laws with evaluation clamped into [0, 1].
struct ClampedLaws {
    kappa: f64,
    a: f64,
}

impl ConstitutiveModel for ClampedLaws {
    fn k(&self, s: f64) -> f64 {
        let e = pos_part(s - self.a);
        self.kappa + e * e
    }
    fn k_prime(&self, s: f64) -> f64 {
        2.0 * pos_part(s - self.a)
    }
    fn pc(&self, s: f64) -> f64 {
        s
    }
    fn pc_prime(&self, _s: f64) -> f64 {
        1.0
    }
    fn pc_ext(&self, s: f64) -> f64 {
        s.clamp(0.0, 1.0)
    }
    fn k_ext(&self, s: f64) -> f64 {
        self.k(s.clamp(0.0, 1.0))
    }
}

fn main() {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let c: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.04);
    let mi: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(20000);
    let mode = args.get(4).map(String::as_str).unwrap_or("clamped");
    let m_damp: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(4.0);
    let p_init: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(4.5);

    let params =
        Params { nx: n, nz: n, c, max_iter: mi, m_damp, p_init, ..Params::default() };
    let solver = if mode == "clamped" {
        Solver::with_laws(params, Box::new(ClampedLaws { kappa: params.kappa, a: params.a }))
            .unwrap()
    } else {
        Solver::new(params).unwrap()
    };
    let t0 = Instant::now();
    let sol = match solver.fixed_point_solve() {
        Ok(s) => s,
        Err(e) => {
            println!("n={n} c={c} mode={mode} M={m_damp} p0={p_init}: ERROR {e}");
            return;
        }
    };
    let wall = t0.elapsed().as_secs_f64();
    let h = &sol.update_history;
    let m = h.len();
    let tail: Vec<f64> = h.iter().rev().take(6).cloned().collect();
    let (mut smin, mut smax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &sol.s {
        smin = smin.min(v);
        smax = smax.max(v);
    }
    println!(
        "n={n:3} c={c:.4} mode={mode} M={m_damp} p0={p_init}: conv={} it={} upd={:.3e} wall={wall:.1}s p*={:.4} s=[{smin:.4},{smax:.4}] oob={} tail={:?}",
        sol.converged, sol.iterations, sol.final_update, sol.p_star, sol.out_of_range, tail
    );
    if m >= 200 && !sol.converged {
        // crude cycle period scan over the update history tail
        let w = &h[m - 100..];
        for period in 2..=10 {
            let mut dev = 0.0_f64;
            for i in 0..100 - period {
                dev = dev.max((w[i] - w[i + period]).abs());
            }
            println!("  period {period}: tail dev {dev:.3e}");
        }
        // spatial structure of the oscillation: a few more hand steps
        let grid = &solver.grid;
        let mut s = sol.s.clone();
        let mut p = sol.p.clone();
        for step in 0..4 {
            let ps = solver.pressure_step(&s, &p).unwrap();
            let ss = solver.saturation_step(&s, &ps.p).unwrap();
            let mut worst: Vec<(f64, usize)> = (0..s.len())
                .map(|i| ((ss.s[i] - s[i]).abs() + (ps.p[i] - p[i]).abs(), i))
                .collect();
            worst.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            print!("  step {step}: ");
            for &(d, i) in worst.iter().take(6) {
                let (iy, jz) = grid.node_ij(i);
                print!(
                    "({iy},{jz}) d={d:.2e} s={:.3}->{:.3} p={:.3}->{:.3}  ",
                    s[i], ss.s[i], p[i], ps.p[i]
                );
            }
            println!();
            p = ps.p;
            s = ss.s;
        }
    }
}

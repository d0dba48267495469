use fingerwave::assemble::{assemble_stiffness, Csr};
use fingerwave::constitutive::k_field;
use fingerwave::scheme::{Params, Solver};
use std::time::Instant;

fn main() {
    let cells: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(128);
    let params = Params { nx: cells, nz: cells, ..Params::default() };
    let solver = Solver::new(params).unwrap();
    let (p, s) = solver.initial_state();

    // Warm up and take one full step to get representative fields.
    let ps = solver.pressure_step(&s, &p).unwrap();

    let reps = 10;
    let t = Instant::now();
    for _ in 0..reps {
        let _ = solver.pressure_step(&s, &ps.p).unwrap();
    }
    println!("pressure_step total: {:.1} ms", t.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let _ = solver.saturation_step(&s, &ps.p).unwrap();
    }
    println!("saturation_step total: {:.1} ms", t.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // Components of the pressure step.
    let t = Instant::now();
    for _ in 0..reps {
        let (ks, _) = k_field(solver.laws(), &s).unwrap();
        std::hint::black_box(assemble_stiffness(&solver.grid, &ks).unwrap());
    }
    println!("  assemble stiffness: {:.1} ms", t.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    let (ks, _) = k_field(solver.laws(), &s).unwrap();
    let stiff = assemble_stiffness(&solver.grid, &ks).unwrap();
    let ones = vec![1.0; solver.grid.n_nodes()];
    let mass = fingerwave::assemble::assemble_mass(&solver.grid, &ones).unwrap();
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(Csr::linear_combination(1.0, &stiff, 4.0, &mass).unwrap());
    }
    println!("  linear_combination: {:.1} ms", t.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    let matrix = Csr::linear_combination(1.0, &stiff, 4.0, &mass).unwrap();
    let zeros = vec![0.0; solver.grid.n_nodes()];
    let dir: Vec<(usize, f64)> = solver.grid.bottom_nodes().map(|n| (n, 0.0)).collect();
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(
            fingerwave::system::reduce_system(&matrix, &zeros, &solver.grid, &dir, true, 0.056, true)
                .unwrap(),
        );
    }
    println!("  reduce_system: {:.1} ms", t.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    let sys = fingerwave::system::reduce_system(&matrix, &zeros, &solver.grid, &dir, true, 0.056, true).unwrap();
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(fingerwave::linsolve::factor(&sys.matrix, true).unwrap());
    }
    println!("  band cholesky factor: {:.1} ms", t.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    let f = fingerwave::linsolve::factor(&sys.matrix, true).unwrap();
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(f.solve_vec(&sys.rhs));
    }
    println!("  triangular solves: {:.1} ms", t.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    let x = f.solve_vec(&sys.rhs);
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(sys.matrix.mul_vec(&x));
    }
    println!("  residual matvec: {:.1} ms", t.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}

//! Direct banded solvers for the reduced systems: Cholesky for symmetric
//! positive definite matrices, LU with partial pivoting otherwise. The
//! node ordering keeps the half-bandwidth at one node row, which makes
//! banded elimination the natural exact method; everything is sequential
//! and bitwise reproducible.

use crate::assemble::Csr;
use crate::system::LinearSystem;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    BandCholesky,
    BandLu,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveReport {
    pub method: Method,
    pub n: usize,
    /// (lower, upper) half-bandwidths of the factored matrix.
    pub bandwidth: (usize, usize),
    /// Achieved relative residual |Ax - b| / |b| (absolute when b = 0).
    pub rel_residual: f64,
}

/// Lower/upper half-bandwidths of a CSR matrix.
pub fn bandwidths(m: &Csr) -> (usize, usize) {
    let (mut kl, mut ku) = (0usize, 0usize);
    for i in 0..m.n_rows {
        let (cols, _) = m.row(i);
        if let Some(&j) = cols.first() {
            kl = kl.max(i.saturating_sub(j));
        }
        if let Some(&j) = cols.last() {
            ku = ku.max(j.saturating_sub(i));
        }
    }
    (kl, ku)
}

/// Banded Cholesky factor, lower triangle, row-major band storage:
/// `L[i][j]` lives at `band[i * (kd + 1) + kd - (i - j)]`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    kd: usize,
    band: Vec<f64>,
}

impl BandCholesky {
    fn factor(m: &Csr) -> Result<Self> {
        let n = m.n_rows;
        let (kl, ku) = bandwidths(m);
        let kd = kl.max(ku);
        let w = kd + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    band[i * w + kd - (i - j)] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(kd);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(kd));
                let len = j - klo;
                let dot: f64 = if len == 0 {
                    0.0
                } else {
                    let ai = i * w + kd - i + klo;
                    let bj = j * w + kd - j + klo;
                    band[ai..ai + len]
                        .iter()
                        .zip(&band[bj..bj + len])
                        .map(|(x, y)| x * y)
                        .sum()
                };
                let pos = i * w + kd - (i - j);
                let v = band[pos] - dot;
                if j < i {
                    band[pos] = v / band[j * w + kd];
                } else {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::Solver {
                            message: format!("Cholesky pivot {v:e} at row {i}: matrix not positive definite"),
                            residual: f64::INFINITY,
                        });
                    }
                    band[pos] = v.sqrt();
                }
            }
        }
        Ok(Self { n, kd, band })
    }

    fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let (n, kd, w) = (self.n, self.kd, self.kd + 1);
        let mut x = b.to_vec();
        // L y = b
        for i in 0..n {
            let lo = i.saturating_sub(kd);
            let base = i * w + kd - i;
            let mut acc = x[i];
            for k in lo..i {
                acc -= self.band[base + k] * x[k];
            }
            x[i] = acc / self.band[i * w + kd];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let hi = (i + kd).min(n - 1);
            let mut acc = x[i];
            for k in i + 1..=hi {
                acc -= self.band[k * w + kd - (k - i)] * x[k];
            }
            x[i] = acc / self.band[i * w + kd];
        }
        x
    }
}

/// Banded LU with partial pivoting, LAPACK-style column-major band storage
/// with `kl` extra superdiagonals for pivoting fill: entry (row, col) lives
/// at `ab[col * ldab + kl + ku + row - col]`.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    fn factor(m: &Csr) -> Result<Self> {
        let n = m.n_rows;
        let (kl, ku) = bandwidths(m);
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; n * ldab];
        let idx = |row: usize, col: usize| col * ldab + kl + ku + row - col;
        for i in 0..n {
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                ab[idx(i, j)] = v;
            }
        }
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let rmax = (k + kl).min(n - 1);
            let mut p = k;
            let mut pmax = ab[idx(k, k)].abs();
            for r in k + 1..=rmax {
                let v = ab[idx(r, k)].abs();
                if v > pmax {
                    pmax = v;
                    p = r;
                }
            }
            if pmax == 0.0 || !pmax.is_finite() {
                return Err(Error::Solver {
                    message: format!("singular matrix: no pivot in column {k}"),
                    residual: f64::INFINITY,
                });
            }
            piv[k] = p;
            let cmax = (k + ku + kl).min(n - 1);
            if p != k {
                for c in k..=cmax {
                    ab.swap(idx(k, c), idx(p, c));
                }
            }
            let pivval = ab[idx(k, k)];
            for r in k + 1..=rmax {
                ab[idx(r, k)] /= pivval;
            }
            for c in k + 1..=cmax {
                let ukc = ab[idx(k, c)];
                if ukc == 0.0 {
                    continue;
                }
                // Contiguous in r for fixed c.
                let (rk, rc) = (idx(k + 1, k), idx(k + 1, c));
                for r in 0..rmax - k {
                    ab[rc + r] -= ab[rk + r] * ukc;
                }
            }
        }
        Ok(Self { n, kl, ku, ab, piv })
    }

    fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let ldab = 2 * kl + ku + 1;
        let idx = |row: usize, col: usize| col * ldab + kl + ku + row - col;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let rmax = (k + kl).min(n - 1);
            let xk = x[k];
            if xk != 0.0 {
                for r in k + 1..=rmax {
                    x[r] -= self.ab[idx(r, k)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let xk = x[k] / self.ab[idx(k, k)];
            x[k] = xk;
            if xk != 0.0 {
                let rlo = k.saturating_sub(ku + kl);
                for r in rlo..k {
                    x[r] -= self.ab[idx(r, k)] * xk;
                }
            }
        }
        x
    }
}

#[derive(Debug, Clone)]
pub enum Factorization {
    Cholesky(BandCholesky),
    Lu(BandLu),
}

impl Factorization {
    pub fn method(&self) -> Method {
        match self {
            Factorization::Cholesky(_) => Method::BandCholesky,
            Factorization::Lu(_) => Method::BandLu,
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        match self {
            Factorization::Cholesky(f) => f.solve_vec(b),
            Factorization::Lu(f) => f.solve_vec(b),
        }
    }
}

/// Factors a square CSR matrix; `spd` selects Cholesky, which fails (rather
/// than falling back) if the matrix is not positive definite.
pub fn factor(m: &Csr, spd: bool) -> Result<Factorization> {
    if m.n_rows != m.n_cols {
        return Err(Error::InvalidInput(format!("factor: matrix is {}x{}", m.n_rows, m.n_cols)));
    }
    if m.n_rows == 0 {
        return Err(Error::InvalidInput("factor: empty matrix".into()));
    }
    if spd {
        Ok(Factorization::Cholesky(BandCholesky::factor(m)?))
    } else {
        Ok(Factorization::Lu(BandLu::factor(m)?))
    }
}

fn residual_norms(m: &Csr, x: &[f64], b: &[f64]) -> (f64, f64) {
    let ax = m.mul_vec(x);
    let mut rr = 0.0;
    let mut bb = 0.0;
    for i in 0..b.len() {
        let d = ax[i] - b[i];
        rr += d * d;
        bb += b[i] * b[i];
    }
    (rr.sqrt(), bb.sqrt())
}

/// Solves `matrix * x = rhs` with an existing factorization and verifies the
/// relative residual; returns the raw DOF vector.
pub fn solve_reduced(
    f: &Factorization,
    matrix: &Csr,
    rhs: &[f64],
    rtol: f64,
) -> Result<(Vec<f64>, f64)> {
    let x = f.solve_vec(rhs);
    let (r, bnorm) = residual_norms(matrix, &x, rhs);
    let denom = if bnorm > 0.0 { bnorm } else { 1.0 };
    let rel = r / denom;
    if !rel.is_finite() || rel > rtol {
        return Err(Error::Solver {
            message: format!("residual {rel:e} exceeds tolerance {rtol:e}"),
            residual: rel,
        });
    }
    Ok((x, rel))
}

/// Solves the reduced system with an existing factorization of its matrix
/// and verifies the residual; the solution comes back on the nodes.
pub fn solve_with(f: &Factorization, system: &LinearSystem, rtol: f64) -> Result<(Vec<f64>, SolveReport)> {
    let (x, rel) = solve_reduced(f, &system.matrix, &system.rhs, rtol)?;
    let report = SolveReport {
        method: f.method(),
        n: system.n,
        bandwidth: bandwidths(&system.matrix),
        rel_residual: rel,
    };
    Ok((system.expand(&x), report))
}

/// Factors and solves the reduced system; the solution comes back on the
/// nodes, with Dirichlet values filled in.
pub fn solve(system: &LinearSystem, rtol: f64) -> Result<(Vec<f64>, SolveReport)> {
    let f = factor(&system.matrix, system.spd)?;
    solve_with(&f, system, rtol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::CsrBuilder;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Dense Gaussian elimination with partial pivoting; independent oracle.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
            if a[p][k] == 0.0 {
                return None;
            }
            a.swap(k, p);
            b.swap(k, p);
            for r in k + 1..n {
                let m = a[r][k] / a[k][k];
                if m != 0.0 {
                    for c in k..n {
                        a[r][c] -= m * a[k][c];
                    }
                    b[r] -= m * b[k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let mut acc = b[k];
            for c in k + 1..n {
                acc -= a[k][c] * x[c];
            }
            x[k] = acc / a[k][k];
        }
        Some(x)
    }

    /// Random banded diagonally dominant matrix, returned dense and as CSR.
    fn random_system(n: usize, band: usize, seed: u64, symmetric: bool) -> (Vec<Vec<f64>>, Csr, Vec<f64>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut dense = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(band)..=(i + band).min(n - 1) {
                if j == i {
                    continue;
                }
                if symmetric && j < i {
                    dense[i][j] = dense[j][i];
                } else if rng.gen_bool(0.7) {
                    dense[i][j] = rng.gen_range(-1.0..1.0);
                }
            }
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| dense[i][j].abs()).sum();
            dense[i][i] = off + 1.0 + rng.gen_range(0.0..1.0);
        }
        let mut builder = CsrBuilder::new(n, n);
        for i in 0..n {
            for j in 0..n {
                if dense[i][j] != 0.0 {
                    builder.add(i, j, dense[i][j]);
                }
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        (dense, builder.build(), b)
    }

    #[test]
    fn band_lu_matches_dense_oracle() {
        for seed in 0..5 {
            let (dense, csr, b) = random_system(50, 4, seed, false);
            let f = factor(&csr, false).unwrap();
            assert_eq!(f.method(), Method::BandLu);
            let x = f.solve_vec(&b);
            let y = dense_solve(dense, b).unwrap();
            for i in 0..50 {
                assert!((x[i] - y[i]).abs() <= 1e-10, "seed {seed} row {i}: {} vs {}", x[i], y[i]);
            }
        }
    }

    #[test]
    fn band_cholesky_matches_dense_oracle() {
        for seed in 0..5 {
            let (dense, csr, b) = random_system(50, 5, seed + 100, true);
            let f = factor(&csr, true).unwrap();
            assert_eq!(f.method(), Method::BandCholesky);
            let x = f.solve_vec(&b);
            let y = dense_solve(dense, b).unwrap();
            for i in 0..50 {
                assert!((x[i] - y[i]).abs() <= 1e-10, "seed {seed} row {i}");
            }
        }
    }

    #[test]
    fn pivoting_handles_weak_diagonal() {
        // Not diagonally dominant: leading entry tiny, forcing a row swap.
        let n = 6;
        let mut builder = CsrBuilder::new(n, n);
        let mut dense = vec![vec![0.0; n]; n];
        let entries = [
            (0, 0, 1e-14),
            (0, 1, 1.0),
            (1, 0, 1.0),
            (1, 1, 1.0),
            (1, 2, 0.5),
            (2, 1, 0.3),
            (2, 2, 1.0),
            (2, 3, -0.2),
            (3, 2, 0.4),
            (3, 3, 1.0),
            (3, 4, 0.1),
            (4, 3, -0.6),
            (4, 4, 1.0),
            (4, 5, 0.2),
            (5, 4, 0.7),
            (5, 5, 1.0),
        ];
        for &(i, j, v) in &entries {
            builder.add(i, j, v);
            dense[i][j] = v;
        }
        let csr = builder.build();
        let b = vec![1.0, -1.0, 2.0, 0.5, -0.25, 3.0];
        let f = factor(&csr, false).unwrap();
        let x = f.solve_vec(&b);
        let y = dense_solve(dense, b).unwrap();
        for i in 0..n {
            assert!((x[i] - y[i]).abs() < 1e-9, "row {i}: {} vs {}", x[i], y[i]);
        }
    }

    #[test]
    fn repeated_solves_are_bitwise_identical() {
        let (_, csr, b) = random_system(40, 3, 7, false);
        let x1 = factor(&csr, false).unwrap().solve_vec(&b);
        let x2 = factor(&csr, false).unwrap().solve_vec(&b);
        assert_eq!(
            x1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            x2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut builder = CsrBuilder::new(3, 3);
        // Rank 2: row 2 = row 0.
        for &(i, j, v) in &[(0, 0, 1.0), (0, 1, 2.0), (1, 1, 1.0), (2, 0, 1.0), (2, 1, 2.0)] {
            builder.add(i, j, v);
        }
        let err = factor(&builder.build(), false);
        match err {
            Err(Error::Solver { .. }) => {}
            other => panic!("expected solver failure, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_rejects_indefinite_matrix() {
        let mut builder = CsrBuilder::new(2, 2);
        builder.add(0, 0, 1.0);
        builder.add(1, 1, -1.0);
        assert!(matches!(factor(&builder.build(), true), Err(Error::Solver { .. })));
    }

    #[test]
    fn factorization_is_reusable_across_rhs() {
        let (dense, csr, _) = random_system(30, 4, 11, false);
        let f = factor(&csr, false).unwrap();
        for seed in 0..3 {
            let mut rng = StdRng::seed_from_u64(seed);
            let b: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = f.solve_vec(&b);
            let y = dense_solve(dense.clone(), b).unwrap();
            for i in 0..30 {
                assert!((x[i] - y[i]).abs() < 1e-10);
            }
        }
    }
}

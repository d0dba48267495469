//! Constitutive laws: relative permeability k(s), capillary pressure pc(s),
//! the positive-part nonlinearity, and admissibility checks for the
//! travelling-wave parameter ranges.
//!
//! Iterates may transiently leave [0, 1] (the transport step is not
//! monotone), so the laws are evaluated through total extensions `k_ext` /
//! `pc_ext`; out-of-range evaluations are counted and reported, never
//! projected away.

use crate::{Error, Result};

/// Positive part, `max(x, 0)`. Maps -0.0 to 0.0.
#[inline]
pub fn pos_part(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// A permeability / capillary-pressure pair on the saturation interval [0, 1].
///
/// Implementations must keep `k` positive and nondecreasing and `pc` strictly
/// increasing; `validate_bounds` checks both by sampling and reports
/// violations as warnings.
pub trait ConstitutiveModel {
    /// Relative permeability, `s` in [0, 1].
    fn k(&self, s: f64) -> f64;
    /// Derivative of `k`, `s` in [0, 1].
    fn k_prime(&self, s: f64) -> f64;
    /// Capillary pressure, `s` in [0, 1].
    fn pc(&self, s: f64) -> f64;
    /// Derivative of `pc`, `s` in [0, 1].
    fn pc_prime(&self, s: f64) -> f64;

    /// Inverse of `pc`, clamped to the natural range [0, 1].
    ///
    /// Default: bisection on [0, 1] to an interval of width 1e-12. Laws with
    /// a closed-form inverse should override.
    fn pc_inv(&self, p: f64) -> f64 {
        if !p.is_finite() {
            return f64::NAN;
        }
        if p <= self.pc(0.0) {
            return 0.0;
        }
        if p >= self.pc(1.0) {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if self.pc(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `pc` extended to all of R; iterates can transiently leave [0, 1].
    /// Default: linear continuation with the boundary slope. Laws whose
    /// formula is already total should override with the formula itself.
    fn pc_ext(&self, s: f64) -> f64 {
        if s < 0.0 {
            self.pc(0.0) + self.pc_prime(0.0) * s
        } else if s > 1.0 {
            self.pc(1.0) + self.pc_prime(1.0) * (s - 1.0)
        } else {
            self.pc(s)
        }
    }

    /// `k` extended to all of R. Default: constant continuation (`k(0)`
    /// below, `k(1)` above), which keeps the extension positive for any
    /// admissible law. Laws whose formula is already total should override.
    fn k_ext(&self, s: f64) -> f64 {
        self.k(s.clamp(0.0, 1.0))
    }

    /// Derivative of [`ConstitutiveModel::pc_ext`]. The default matches the
    /// default extension (boundary slope outside [0, 1]); override together
    /// with `pc_ext`.
    fn pc_prime_ext(&self, s: f64) -> f64 {
        self.pc_prime(s.clamp(0.0, 1.0))
    }
}

/// Reference law pair: identity capillary pressure and a permeability that
/// is flat at `kappa` below the kink saturation `a` and grows
/// quadratically above it,
///
/// ```text
///   pc(s) = s,   k(s) = kappa + max(s - a, 0)^2.
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticKinkLaws {
    pub kappa: f64,
    pub a: f64,
}

impl QuadraticKinkLaws {
    pub fn new(kappa: f64, a: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidInput(format!("kappa must be positive, got {kappa}")));
        }
        if !(a.is_finite() && (0.0..=1.0).contains(&a)) {
            return Err(Error::InvalidInput(format!("kink saturation a must lie in [0, 1], got {a}")));
        }
        Ok(Self { kappa, a })
    }
}

impl ConstitutiveModel for QuadraticKinkLaws {
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
    fn pc_inv(&self, p: f64) -> f64 {
        p.clamp(0.0, 1.0)
    }
    fn pc_ext(&self, s: f64) -> f64 {
        s
    }
    fn k_ext(&self, s: f64) -> f64 {
        // The defining formula is total: flat at kappa below the kink,
        // quadratic above it, for any real s.
        self.k(s)
    }
    fn pc_prime_ext(&self, _s: f64) -> f64 {
        1.0
    }
}

fn checked(law_name: &str, s: f64) -> Result<bool> {
    if !s.is_finite() {
        return Err(Error::InvalidInput(format!("{law_name}: saturation must be finite, got {s}")));
    }
    Ok(!(0.0..=1.0).contains(&s))
}

/// `k` through the total extension, with input validation; returns the value
/// and whether `s` lay outside [0, 1].
pub fn eval_k(m: &dyn ConstitutiveModel, s: f64) -> Result<(f64, bool)> {
    let oob = checked("eval_k", s)?;
    Ok((m.k_ext(s), oob))
}

/// `pc` through the total extension, with input validation; returns the
/// value and whether `s` lay outside [0, 1].
pub fn eval_pc(m: &dyn ConstitutiveModel, s: f64) -> Result<(f64, bool)> {
    let oob = checked("eval_pc", s)?;
    Ok((m.pc_ext(s), oob))
}

/// `pc_inv` with input validation. Any finite `p` is accepted; the result is
/// clamped to [0, 1].
pub fn eval_pc_inv(m: &dyn ConstitutiveModel, p: f64) -> Result<f64> {
    if !p.is_finite() {
        return Err(Error::InvalidInput(format!("eval_pc_inv: pressure must be finite, got {p}")));
    }
    Ok(m.pc_inv(p))
}

/// Nodal `k(s)` for a whole field, through the total extension. Returns the
/// values and the count of nodes outside [0, 1].
pub fn k_field(m: &dyn ConstitutiveModel, s: &[f64]) -> Result<(Vec<f64>, u64)> {
    let mut oob = 0;
    let mut out = Vec::with_capacity(s.len());
    for (i, &v) in s.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("k_field: non-finite saturation at node {i}")));
        }
        if !(0.0..=1.0).contains(&v) {
            oob += 1;
        }
        out.push(m.k_ext(v));
    }
    Ok((out, oob))
}

/// Nodal `pc(s)` for a whole field, through the total extension. Returns the
/// values and the count of nodes outside [0, 1].
pub fn pc_field(m: &dyn ConstitutiveModel, s: &[f64]) -> Result<(Vec<f64>, u64)> {
    let mut oob = 0;
    let mut out = Vec::with_capacity(s.len());
    for (i, &v) in s.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("pc_field: non-finite saturation at node {i}")));
        }
        if !(0.0..=1.0).contains(&v) {
            oob += 1;
        }
        out.push(m.pc_ext(v));
    }
    Ok((out, oob))
}

/// Scalar run parameters entering the admissibility bounds.
#[derive(Debug, Clone, Copy)]
pub struct BoundsContext {
    pub g: f64,
    pub l: f64,
    pub tau: f64,
    pub m_damp: f64,
    pub c: f64,
    pub f_inf: f64,
    /// Far-field saturation ahead of the wave.
    pub s_star: f64,
}

/// Admissible parameter ranges for a travelling wave, plus soft warnings.
#[derive(Debug, Clone)]
pub struct BoundsReport {
    /// Lower admissible wave speed, `g k'(s_star)`.
    pub c1: f64,
    /// Upper admissible wave speed, `g (k(1) - k(s_star)) / (1 - s_star)`.
    pub c2: f64,
    /// Lower admissible total flux, `g L (k(s_star) + k'(s_star)(1 - s_star))`.
    pub f_lo: f64,
    /// Upper admissible total flux, `g L k(1)`.
    pub f_hi: f64,
    pub c_in_range: bool,
    pub flux_in_range: bool,
    /// Smallest sampled pc' on [0, 1].
    pub rho_min: f64,
    /// Largest sampled |pc_inv(pc(s)) - s|.
    pub pc_inv_roundtrip_err: f64,
    pub warnings: Vec<String>,
}

/// Checks the wave-speed and flux windows `c1 < c < c2`,
/// `f_lo < F < f_hi`, and samples the structural assumptions on the laws.
/// Assumption violations are warnings, not errors: runs outside the proven
/// ranges are legitimate experiments.
pub fn validate_bounds(m: &dyn ConstitutiveModel, ctx: &BoundsContext) -> Result<BoundsReport> {
    for (name, v) in [
        ("g", ctx.g),
        ("l", ctx.l),
        ("tau", ctx.tau),
        ("m_damp", ctx.m_damp),
        ("c", ctx.c),
        ("f_inf", ctx.f_inf),
        ("s_star", ctx.s_star),
    ] {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("validate_bounds: {name} must be finite, got {v}")));
        }
    }
    if !(0.0..1.0).contains(&ctx.s_star) {
        return Err(Error::InvalidInput(format!(
            "validate_bounds: s_star must lie in [0, 1), got {}",
            ctx.s_star
        )));
    }

    let mut warnings = Vec::new();

    let k_star = m.k(ctx.s_star);
    let kp_star = m.k_prime(ctx.s_star);
    let c1 = ctx.g * kp_star;
    let c2 = ctx.g * (m.k(1.0) - k_star) / (1.0 - ctx.s_star);
    let f_lo = ctx.g * ctx.l * (k_star + kp_star * (1.0 - ctx.s_star));
    let f_hi = ctx.g * ctx.l * m.k(1.0);

    let c_in_range = c1 < ctx.c && ctx.c < c2;
    let flux_in_range = f_lo < ctx.f_inf && ctx.f_inf < f_hi;
    if !c_in_range {
        warnings.push(format!("wave speed c = {} outside the admissible window ({c1}, {c2})", ctx.c));
    }
    if !flux_in_range {
        warnings.push(format!("total flux F = {} outside the admissible window ({f_lo}, {f_hi})", ctx.f_inf));
    }
    if kp_star == 0.0 {
        warnings.push(format!(
            "k'(s_star) = 0 at s_star = {}: the strict lower speed bound degenerates to c > 0",
            ctx.s_star
        ));
    }

    const N_SAMPLES: usize = 1000;
    let mut rho_min = f64::INFINITY;
    let mut roundtrip = 0.0_f64;
    let mut k_prev = f64::NEG_INFINITY;
    let mut k_monotone = true;
    let mut k_positive = true;
    for i in 0..=N_SAMPLES {
        let s = i as f64 / N_SAMPLES as f64;
        rho_min = rho_min.min(m.pc_prime(s));
        roundtrip = roundtrip.max((m.pc_inv(m.pc(s)) - s).abs());
        let k = m.k(s);
        if k <= 0.0 {
            k_positive = false;
        }
        if k < k_prev {
            k_monotone = false;
        }
        k_prev = k;
    }
    if rho_min <= 0.0 {
        warnings.push(format!("pc is not strictly increasing: sampled min pc' = {rho_min}"));
    }
    if roundtrip > 1e-11 {
        warnings.push(format!("pc_inv(pc(s)) deviates from s by up to {roundtrip:e}"));
    }
    if !k_positive {
        warnings.push("k is not positive on [0, 1]".to_string());
    }
    if !k_monotone {
        warnings.push("k is not nondecreasing on [0, 1]".to_string());
    }
    if ctx.m_damp * ctx.tau < 1.0 {
        warnings.push(format!(
            "damping M = {} below 1/tau = {}: the fixed-point iteration may diverge",
            ctx.m_damp,
            1.0 / ctx.tau
        ));
    }

    Ok(BoundsReport {
        c1,
        c2,
        f_lo,
        f_hi,
        c_in_range,
        flux_in_range,
        rho_min,
        pc_inv_roundtrip_err: roundtrip,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> QuadraticKinkLaws {
        QuadraticKinkLaws { kappa: 0.001, a: 0.32 }
    }

    /// Smooth strictly increasing pc without a closed-form inverse; exercises
    /// the bisection default.
    struct SmoothLaws;
    impl ConstitutiveModel for SmoothLaws {
        fn k(&self, s: f64) -> f64 {
            0.01 + s * s
        }
        fn k_prime(&self, s: f64) -> f64 {
            2.0 * s
        }
        fn pc(&self, s: f64) -> f64 {
            2.0 * s + s * s
        }
        fn pc_prime(&self, s: f64) -> f64 {
            2.0 + 2.0 * s
        }
    }

    #[test]
    fn permeability_below_kink_is_flat() {
        let m = reference();
        assert_eq!(m.k(0.1), 0.001);
        assert_eq!(m.k(0.32), 0.001);
        assert_eq!(m.k(0.0), 0.001);
    }

    #[test]
    fn permeability_above_kink_is_quadratic() {
        let m = reference();
        let expect = 0.001 + 0.18_f64 * 0.18;
        assert!((m.k(0.5) - expect).abs() < 1e-16, "k(0.5) = {}", m.k(0.5));
        assert!((m.k(0.5) - 0.0334).abs() < 1e-12);
    }

    #[test]
    fn capillary_pressure_is_identity() {
        let m = reference();
        for s in [0.0, 0.3, 1.0] {
            assert_eq!(m.pc(s), s);
            assert_eq!(m.pc_inv(s), s);
        }
        assert_eq!(m.pc_inv(4.5), 1.0);
        assert_eq!(m.pc_inv(-0.3), 0.0);
    }

    #[test]
    fn eval_extends_and_flags_out_of_range() {
        let m = reference();
        let (v, oob) = eval_k(&m, -0.2).unwrap();
        assert_eq!(v, 0.001);
        assert!(oob);
        // Overshoot keeps the quadratic branch, not the value at 1.
        let (v, oob) = eval_k(&m, 1.5).unwrap();
        assert_eq!(v, 0.001 + 1.18 * 1.18);
        assert!(oob);
        let (v, oob) = eval_pc(&m, 0.4).unwrap();
        assert_eq!(v, 0.4);
        assert!(!oob);
        // Identity pc stays the identity below zero.
        let (v, oob) = eval_pc(&m, -0.3).unwrap();
        assert_eq!(v, -0.3);
        assert!(oob);
        assert!(eval_k(&m, f64::NAN).is_err());
        assert!(eval_pc(&m, f64::INFINITY).is_err());
        assert!(eval_pc_inv(&m, f64::NAN).is_err());
    }

    #[test]
    fn field_eval_counts_out_of_range_nodes() {
        let m = reference();
        let s = vec![-0.1, 0.5, 1.2, 0.32];
        let (k, oob) = k_field(&m, &s).unwrap();
        assert_eq!(oob, 2);
        assert_eq!(k[0], 0.001);
        assert_eq!(k[3], 0.001);
        assert!((k[2] - (0.001 + 0.88 * 0.88)).abs() < 1e-15);
        assert!(k_field(&m, &[0.1, f64::NAN]).is_err());
        let (pc, oob) = pc_field(&m, &s).unwrap();
        assert_eq!(oob, 2);
        assert_eq!(pc[0], -0.1);
        assert_eq!(pc[2], 1.2);
    }

    #[test]
    fn default_extension_is_flat_in_k_linear_in_pc() {
        let m = SmoothLaws;
        assert_eq!(m.k_ext(-0.5), m.k(0.0));
        assert_eq!(m.k_ext(1.5), m.k(1.0));
        assert!((m.pc_ext(-0.5) - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn pos_part_basics() {
        assert_eq!(pos_part(3.0), 3.0);
        assert_eq!(pos_part(-2.0), 0.0);
        assert_eq!(pos_part(0.0), 0.0);
        assert_eq!(pos_part(-0.0), 0.0);
        assert!(pos_part(0.0).is_sign_positive());
    }

    #[test]
    fn bisected_inverse_roundtrips() {
        let m = SmoothLaws;
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            assert!((m.pc_inv(m.pc(s)) - s).abs() <= 1e-12, "s = {s}");
        }
    }

    #[test]
    fn extended_pc_is_linear_outside() {
        let m = SmoothLaws;
        assert!((m.pc_ext(-0.5) - (-1.0)).abs() < 1e-15);
        assert!((m.pc_ext(1.5) - (3.0 + 4.0 * 0.5)).abs() < 1e-15);
        let id = reference();
        assert_eq!(id.pc_ext(4.5), 4.5);
        assert_eq!(id.pc_ext(-1.0), -1.0);
    }

    #[test]
    fn reference_run_bounds() {
        let m = reference();
        let ctx = BoundsContext {
            g: 1.0,
            l: 2.0,
            tau: 2.0,
            m_damp: 4.0,
            c: 0.04,
            f_inf: 0.056,
            s_star: 1e-5,
        };
        let r = validate_bounds(&m, &ctx).unwrap();
        assert_eq!(r.c1, 0.0);
        assert!((r.c2 - 0.4624).abs() < 1e-4, "c2 = {}", r.c2);
        assert_eq!(r.f_lo, 0.002);
        assert!((r.f_hi - 0.9268).abs() < 1e-12, "f_hi = {}", r.f_hi);
        assert!(r.c_in_range);
        assert!(r.flux_in_range);
        assert_eq!(r.rho_min, 1.0);
        // k' vanishes at s_star = 1e-5; that must be surfaced as a warning.
        assert!(r.warnings.iter().any(|w| w.contains("k'(s_star)")));
    }

    #[test]
    fn out_of_range_speed_is_flagged_not_fatal() {
        let m = reference();
        let ctx = BoundsContext {
            g: 1.0,
            l: 2.0,
            tau: 2.0,
            m_damp: 4.0,
            c: 0.6,
            f_inf: 1.5,
            s_star: 1e-5,
        };
        let r = validate_bounds(&m, &ctx).unwrap();
        assert!(!r.c_in_range);
        assert!(!r.flux_in_range);
        assert!(validate_bounds(&m, &BoundsContext { s_star: 1.0, ..ctx }).is_err());
    }

    proptest! {
        #[test]
        fn k_is_nondecreasing(kappa in 1e-4..1.0f64, a in 0.05..0.95f64,
                              s1 in 0.0..1.0f64, s2 in 0.0..1.0f64) {
            let m = QuadraticKinkLaws { kappa, a };
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            prop_assert!(m.k(lo) <= m.k(hi));
            prop_assert!(m.k(lo) > 0.0);
        }

        #[test]
        fn pc_is_strictly_increasing(kappa in 1e-4..1.0f64, a in 0.05..0.95f64,
                                     s1 in 0.0..1.0f64, s2 in 0.0..1.0f64) {
            let m = QuadraticKinkLaws { kappa, a };
            if s1 < s2 {
                prop_assert!(m.pc(s1) < m.pc(s2));
            }
        }

        #[test]
        fn speed_and_flux_windows_are_ordered(kappa in 1e-4..1.0f64,
                                              a in 0.05..0.95f64,
                                              s_star in 0.0..0.999f64,
                                              g in 0.1..10.0f64,
                                              l in 0.1..10.0f64) {
            let m = QuadraticKinkLaws { kappa, a };
            let ctx = BoundsContext { g, l, tau: 2.0, m_damp: 4.0, c: 0.0, f_inf: 0.0, s_star };
            let r = validate_bounds(&m, &ctx).unwrap();
            // Convexity of k makes the secant slope dominate the tangent slope.
            prop_assert!(r.c1 <= r.c2 + 1e-12 * r.c2.abs());
            prop_assert!(r.f_lo <= r.f_hi + 1e-12 * r.f_hi.abs());
        }
    }
}

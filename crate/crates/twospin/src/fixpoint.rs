//! Fixpoints of the tree recursions: the iterated-merge fixpoint, the
//! uniqueness threshold on the regular tree, and the two-cycle of the
//! non-uniqueness regime.
//!
//! All solvers are plain bisection on big floats at a caller-chosen
//! precision; every bracket is established by explicit sign checks, and a
//! solver that cannot establish or shrink a bracket reports failure rather
//! than guessing.

use rug::Float;

use crate::error::{Error, Result};
use crate::params::SpinParams;
use crate::scalar::Scalar;

/// Monotone-merge map on child products: `(1 + gamma*lambda*p) / (beta +
/// lambda*p)`, the effective field of a merge whose children's fields
/// multiply to `p`.
pub fn map_of_product(p: &SpinParams, prod: &Scalar) -> Scalar {
    let u = &p.lambda * prod;
    (&Scalar::one() + &(&p.gamma * &u)) / &(&p.beta + &u)
}

/// Sensitivity weight of a merge at child product `p`:
/// `(1 - beta*gamma) * lambda * p / ((1 + gamma*lambda*p) * (beta + lambda*p))`.
pub fn omega_of_product(p: &SpinParams, prod: &Scalar) -> Scalar {
    let u = &p.lambda * prod;
    let numer = &p.one_minus_bg() * &u;
    let denom = &(&Scalar::one() + &(&p.gamma * &u)) * &(&p.beta + &u);
    &numer / &denom
}

/// The same weight written in terms of the resulting field `R`:
/// `(1 + beta*gamma - beta*R - gamma/R) / (1 - beta*gamma)`.
pub fn omega_at_field(p: &SpinParams, r: &Scalar) -> Scalar {
    let bg = &p.beta * &p.gamma;
    let numer = &(&(&Scalar::one() + &bg) - &(&p.beta * r)) - &(&p.gamma / r);
    &numer / &p.one_minus_bg()
}

pub(crate) struct BisectOutcome {
    pub root: Float,
    pub lo: Float,
    pub hi: Float,
    pub iterations: u32,
}

/// Bisection for a sign change `f(lo) > 0 > f(hi)` (the bracket is
/// checked). Shrinks until the bracket width is below `2^(10-prec)` times
/// the bracket scale, then reports the midpoint with its final bracket.
pub(crate) fn bisect<F: Fn(&Float) -> Float>(
    f: F,
    mut lo: Float,
    mut hi: Float,
    prec: u32,
) -> Result<BisectOutcome> {
    let flo = f(&lo);
    let fhi = f(&hi);
    if !(flo.is_sign_positive() && fhi.is_sign_negative()) {
        return Err(Error::Internal(format!(
            "bisection bracket unsigned: f({lo}) = {flo}, f({hi}) = {fhi}"
        )));
    }
    let tol_shift = prec.saturating_sub(10);
    let max_iter = 4 * prec.max(32);
    let mut iterations = 0;
    let mut done = false;
    for _ in 0..max_iter {
        let mid = Float::with_val(prec, &lo + &hi) / 2u32;
        if mid == lo || mid == hi {
            done = true;
            break;
        }
        iterations += 1;
        if f(&mid).is_sign_positive() {
            lo = mid;
        } else {
            hi = mid;
        }
        let width = Float::with_val(prec, &hi - &lo);
        let scale = Float::with_val(prec, hi.to_f64().abs().max(1.0));
        if width <= scale >> tol_shift {
            done = true;
            break;
        }
    }
    if !done {
        let width = Float::with_val(prec, &hi - &lo);
        return Err(Error::NonConvergence(format!(
            "bisection stalled with bracket width {}",
            width.to_f64()
        )));
    }
    let root = Float::with_val(prec, &lo + &hi) / 2u32;
    Ok(BisectOutcome { root, lo, hi, iterations })
}

/// Grow `hi` by doubling until `f(hi) < 0`; `f(lo)` must already be
/// positive.
fn grow_upper<F: Fn(&Float) -> Float>(f: &F, start: Float, prec: u32) -> Result<Float> {
    let mut hi = start;
    for _ in 0..1024 {
        if f(&hi).is_sign_negative() {
            return Ok(hi);
        }
        hi = Float::with_val(prec, &hi * &Float::with_val(prec, 2));
    }
    Err(Error::NonConvergence("no sign change while growing the upper bracket".into()))
}

/// Result of the iterated-merge fixpoint solve.
#[derive(Clone, Debug, serde::Serialize)]
pub struct OdeFixpoint {
    /// The unique positive solution of `x = (1 + gamma*lambda*x^2) / (beta +
    /// lambda*x^2)`.
    pub x_star: Scalar,
    /// One-argument sensitivity of the pair merge at the fixpoint,
    /// `lambda * x * (1 - beta*gamma) / (beta + lambda*x^2)^2`.
    pub omega_star: Scalar,
}

/// Fixpoint of merging two equal-field children, `x = map(x^2)`.
pub fn ode_fixpoint(p: &SpinParams, prec: u32) -> Result<OdeFixpoint> {
    p.validate()?;
    let beta = p.beta.to_big(prec);
    let gamma = p.gamma.to_big(prec);
    let lambda = p.lambda.to_big(prec);
    // Cubic form: h(x) = (1 + gamma*lambda*x^2) - x*(beta + lambda*x^2),
    // strictly one sign change on (0, inf).
    let h = |x: &Float| -> Float {
        let x2 = Float::with_val(prec, x * x);
        let lhs = Float::with_val(prec, &gamma * &lambda) * &x2 + 1u32;
        let rhs = Float::with_val(prec, &lambda * &x2 + &beta) * x;
        lhs - rhs
    };
    let lo = Float::with_val(prec, 1e-30);
    if !h(&lo).is_sign_positive() {
        return Err(Error::Internal("fixpoint polynomial has wrong sign near zero".into()));
    }
    let hi = grow_upper(&h, Float::with_val(prec, 1), prec)?;
    let x = bisect(h, lo, hi, prec)?.root;
    let x_star = Scalar::Big(x.clone());
    let x2 = Float::with_val(prec, &x * &x);
    let denom = Float::with_val(prec, &lambda * &x2) + &beta;
    let denom2 = Float::with_val(prec, &denom * &denom);
    let omega = Float::with_val(prec, &lambda * &x) * p.one_minus_bg().to_big(prec) / denom2;
    Ok(OdeFixpoint { x_star, omega_star: Scalar::Big(omega) })
}

/// The regular-tree recursion at branching factor `delta - 1`:
/// `f(x) = lambda * ((1 + gamma*x) / (beta + x))^(delta-1)`, decreasing in
/// `x` throughout the antiferromagnetic regime.
fn tree_map(p: &SpinParams, delta: u32, prec: u32) -> impl Fn(&Float) -> Float {
    let beta = p.beta.to_big(prec);
    let gamma = p.gamma.to_big(prec);
    let lambda = p.lambda.to_big(prec);
    let d = delta - 1;
    move |x: &Float| {
        let numer = Float::with_val(prec, &gamma * x) + 1u32;
        let denom = Float::with_val(prec, &beta + x);
        let ratio = numer / denom;
        Float::with_val(prec, rug::ops::Pow::pow(&ratio, d)) * &lambda
    }
}

fn check_delta(delta: u32) -> Result<()> {
    if delta < 3 {
        return Err(Error::Infeasible("degree bound must be at least 3".into()));
    }
    Ok(())
}

/// Certified fixpoint of the regular-tree recursion.
#[derive(Clone, Debug, serde::Serialize)]
pub struct FixpointResult {
    pub x_star: Scalar,
    /// `|f'|` at the fixpoint.
    pub derivative_abs: Scalar,
    /// Final bisection bracket containing the fixpoint.
    pub bracket: (Scalar, Scalar),
    pub iterations: u32,
}

/// Unique fixpoint of the regular-tree recursion at degree bound `delta`,
/// by bisection on `f(x) - x` (one sign change since `f` decreases).
pub fn uniqueness_fixpoint(p: &SpinParams, delta: u32, prec: u32) -> Result<FixpointResult> {
    p.validate()?;
    check_delta(delta)?;
    let f = tree_map(p, delta, prec);
    let h = |x: &Float| -> Float { f(x) - x };
    let mut lo = Float::with_val(prec, 1e-9);
    for _ in 0..200 {
        if h(&lo).is_sign_positive() {
            break;
        }
        lo = Float::with_val(prec, &lo / &Float::with_val(prec, 16));
    }
    if !h(&lo).is_sign_positive() {
        return Err(Error::NonConvergence("no positive sign near zero for the tree map".into()));
    }
    let hi = grow_upper(&h, Float::with_val(prec, &lo * &Float::with_val(prec, 2)), prec)?;
    let out = bisect(h, lo, hi, prec)?;
    let resid = Float::with_val(prec, h(&out.root).abs_ref());
    let scale = out.root.to_f64().abs().max(1.0);
    if resid.to_f64() > scale * 2f64.powi(-((prec / 2).min(900) as i32)) {
        return Err(Error::NonConvergence("fixpoint residual exceeds tolerance".into()));
    }
    let x_star = Scalar::Big(out.root);
    // |f'(x)| = (delta-1) * (1 - beta*gamma) * x / ((1 + gamma*x) * (beta + x)).
    let numer = &(&Scalar::from_int((delta - 1) as i64) * &p.one_minus_bg()) * &x_star;
    let denom = &(&Scalar::one() + &(&p.gamma * &x_star)) * &(&p.beta + &x_star);
    let derivative_abs = &numer / &denom;
    Ok(FixpointResult {
        x_star,
        derivative_abs,
        bracket: (Scalar::Big(out.lo), Scalar::Big(out.hi)),
        iterations: out.iterations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Verdict {
    NonUnique,
    Unique,
    /// `|f'|` at the fixpoint is within the undecided band around 1.
    Boundary,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct UniquenessReport {
    pub x_star: Scalar,
    pub f_prime_abs: Scalar,
    pub verdict: Verdict,
    /// Non-uniqueness holds and the point is not the symmetric model at
    /// unit activity, where the magnetization is trivially zero.
    pub in_star_region: bool,
}

/// Decide whether the parameters lie in the non-uniqueness regime at degree
/// bound `delta`: `|f'| > 1` at the tree-map fixpoint. Values of `|f'|`
/// within `2^(-prec/4)` of 1 are reported as `Boundary` instead of being
/// forced to a side.
pub fn in_nonuniqueness(p: &SpinParams, delta: u32, prec: u32) -> Result<UniquenessReport> {
    let fx = uniqueness_fixpoint(p, delta, prec)?;
    let band = Scalar::from_int(2).pow_i(-((prec / 4) as i32));
    let dist = (&fx.derivative_abs - &Scalar::one()).abs();
    let verdict = if dist <= band {
        Verdict::Boundary
    } else if fx.derivative_abs > Scalar::one() {
        Verdict::NonUnique
    } else {
        Verdict::Unique
    };
    let in_star_region = verdict == Verdict::NonUnique && !(p.beta == p.gamma && p.lambda == Scalar::one());
    Ok(UniquenessReport {
        x_star: fx.x_star,
        f_prime_abs: fx.derivative_abs,
        verdict,
        in_star_region,
    })
}

/// The attracting two-cycle of the tree recursion in the non-uniqueness
/// regime, with the corresponding occupation probabilities.
#[derive(Clone, Debug, serde::Serialize)]
pub struct TwoCycle {
    /// Smaller cycle point (`x < x_star`).
    pub x: Scalar,
    /// Larger cycle point, `y = f(x)`.
    pub y: Scalar,
    /// `x / (1 + x)`.
    pub q_minus: Scalar,
    /// `y / (1 + y)`.
    pub q_plus: Scalar,
}

/// Solve `x = f(y), y = f(x)` with `x < y` by bisecting `f(f(x)) - x`
/// below the unstable fixpoint.
pub fn two_cycle_fixpoints(p: &SpinParams, delta: u32, prec: u32) -> Result<TwoCycle> {
    let report = in_nonuniqueness(p, delta, prec)?;
    if report.verdict != Verdict::NonUnique {
        return Err(Error::Infeasible(
            "no two-cycle: parameters are not inside the non-uniqueness regime".into(),
        ));
    }
    let f = tree_map(p, delta, prec);
    let g = |x: &Float| -> Float { f(&f(x)) - x };
    let xs = report.x_star.to_big(prec);
    // Below the fixpoint g crosses from positive (near 0) to negative (just
    // under x_star, where the slope of f.f exceeds 1).
    let mut hi = None;
    for j in 3..prec.max(16) {
        let cand = Float::with_val(prec, &xs - &(Float::with_val(prec, &xs) >> j));
        if g(&cand).is_sign_negative() {
            hi = Some(cand);
            break;
        }
    }
    let hi = hi.ok_or_else(|| {
        Error::NonConvergence("two-cycle bracket: no negative sign below the fixpoint".into())
    })?;
    let mut lo = None;
    for j in 1..prec.max(16) {
        let cand = Float::with_val(prec, &xs) >> j;
        if cand < hi && g(&cand).is_sign_positive() {
            lo = Some(cand);
            break;
        }
    }
    let lo = lo.ok_or_else(|| {
        Error::NonConvergence("two-cycle bracket: no positive sign near zero".into())
    })?;
    let x = bisect(g, lo, hi, prec)?.root;
    let y = f(&x);
    let resid = Float::with_val(prec, f(&y) - &x);
    let tol = Float::with_val(prec, 1) >> (prec / 2);
    if Float::with_val(prec, resid.abs_ref()) > tol {
        return Err(Error::NonConvergence("two-cycle residual did not close".into()));
    }
    let xq = Scalar::Big(x.clone());
    let yq = Scalar::Big(y.clone());
    let q_minus = &xq / &(&Scalar::one() + &xq);
    let q_plus = &yq / &(&Scalar::one() + &yq);
    Ok(TwoCycle { x: xq, y: yq, q_minus, q_plus })
}

/// Critical vertex activity for the hard-core model at degree bound
/// `delta`: `(delta-1)^(delta-1) / (delta-2)^delta`, exact.
pub fn hardcore_lambda_c(delta: u32) -> Result<Scalar> {
    check_delta(delta)?;
    let d1 = Scalar::from_int((delta - 1) as i64);
    let d2 = Scalar::from_int((delta - 2) as i64);
    Ok(&d1.pow_i((delta - 1) as i32) / &d2.pow_i(delta as i32))
}

/// Critical edge activity of the antiferromagnetic symmetric model at unit
/// vertex activity: `(delta-2)/delta`, exact. Uniqueness holds strictly
/// above it.
pub fn ising_beta_c(delta: u32) -> Result<Scalar> {
    check_delta(delta)?;
    Ok(Scalar::from_ratio((delta - 2) as i64, delta as i64))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PREC: u32 = 256;

    fn hc(l: Scalar) -> SpinParams {
        SpinParams::hard_core(l).unwrap()
    }

    fn r(n: i64, d: i64) -> Scalar {
        Scalar::from_ratio(n, d)
    }

    #[test]
    fn iterated_merge_fixpoint_hard_core() {
        let fx = ode_fixpoint(&hc(Scalar::one()), PREC).unwrap();
        // x^3 + x - 1 = 0 has its real root in (682327/1000000, 682328/1000000);
        // certify the float root with exact rational brackets of the
        // decreasing map c -> map(c^2).
        let p = hc(Scalar::one());
        let lo = r(682327, 1000000);
        let hi = r(682328, 1000000);
        assert!(map_of_product(&p, &(&lo * &lo)) > lo);
        assert!(map_of_product(&p, &(&hi * &hi)) < hi);
        assert!(fx.x_star > lo && fx.x_star < hi);
        // At this point omega_star = 1 - x_star.
        let diff = (&fx.omega_star - &(&Scalar::one() - &fx.x_star)).abs();
        assert!(diff < r(1, 1i64 << 60));
        // And it agrees with the field-form weight at the fixpoint.
        let alt = omega_at_field(&p, &fx.x_star);
        assert!((&alt - &fx.omega_star).abs() < r(1, 1i64 << 60));
    }

    #[test]
    fn iterated_merge_fixpoint_symmetric_point() {
        let p = SpinParams::new(r(1, 2), r(1, 2), Scalar::one()).unwrap();
        let fx = ode_fixpoint(&p, PREC).unwrap();
        assert!((&fx.x_star - &Scalar::one()).abs() < r(1, 1i64 << 60));
        assert!((&fx.omega_star - &r(1, 3)).abs() < r(1, 1i64 << 60));
    }

    #[test]
    fn critical_activity_table() {
        assert_eq!(hardcore_lambda_c(6).unwrap(), r(3125, 4096));
        assert_eq!(hardcore_lambda_c(3).unwrap(), Scalar::from_int(4));
        assert_eq!(hardcore_lambda_c(4).unwrap(), r(27, 16));
        assert!(hardcore_lambda_c(2).is_err());
        assert_eq!(ising_beta_c(3).unwrap(), r(1, 3));
        assert_eq!(ising_beta_c(4).unwrap(), r(1, 2));
        assert_eq!(ising_beta_c(6).unwrap(), r(2, 3));
    }

    #[test]
    fn uniqueness_flip_at_critical_activity() {
        let lc = hardcore_lambda_c(6).unwrap();
        let eps = r(1, 1_000_000);
        let below = in_nonuniqueness(&hc(&lc - &eps), 6, PREC).unwrap();
        let above = in_nonuniqueness(&hc(&lc + &eps), 6, PREC).unwrap();
        assert_eq!(below.verdict, Verdict::Unique);
        assert_eq!(above.verdict, Verdict::NonUnique);
        assert!(!below.in_star_region);
        assert!(above.in_star_region);
    }

    #[test]
    fn degree_five_versus_six_at_unit_activity() {
        let five = in_nonuniqueness(&hc(Scalar::one()), 5, PREC).unwrap();
        let six = in_nonuniqueness(&hc(Scalar::one()), 6, PREC).unwrap();
        assert_eq!(five.verdict, Verdict::Unique);
        assert_eq!(six.verdict, Verdict::NonUnique);
        let f5 = five.f_prime_abs.to_f64();
        let f6 = six.f_prime_abs.to_f64();
        assert!((f5 - 0.98).abs() < 0.01, "{f5}");
        assert!((f6 - 1.11).abs() < 0.01, "{f6}");
    }

    #[test]
    fn fixpoint_result_invariants() {
        let fx = uniqueness_fixpoint(&hc(Scalar::one()), 6, PREC).unwrap();
        let (lo, hi) = &fx.bracket;
        assert!(lo <= &fx.x_star && &fx.x_star <= hi);
        assert!(fx.iterations > 0 && fx.iterations <= 4 * PREC);
        // The reciprocal of the fixpoint solves w = ((w+1)/w)^5 in [1,4].
        let w = fx.x_star.recip();
        assert!(w > Scalar::one() && w < Scalar::from_int(4));
        let rhs = (&(&w + &Scalar::one()) / &w).pow_i(5);
        assert!((&w - &rhs).abs().to_f64() < 1e-60);
    }

    #[test]
    fn symmetric_point_fixpoint_is_one() {
        let p = SpinParams::new(r(3, 10), r(3, 10), Scalar::one()).unwrap();
        let fx = uniqueness_fixpoint(&p, 6, PREC).unwrap();
        assert!((&fx.x_star - &Scalar::one()).abs().to_f64() < 1e-60);
        // Non-unique (beta below the symmetric threshold 2/3) yet outside
        // the star region.
        let rep = in_nonuniqueness(&p, 6, PREC).unwrap();
        assert_eq!(rep.verdict, Verdict::NonUnique);
        assert!(!rep.in_star_region);
    }

    #[test]
    fn two_cycle_hard_core_degree_six() {
        let tc = two_cycle_fixpoints(&hc(Scalar::one()), 6, PREC).unwrap();
        // Attracting cycle reached independently by iterating the map.
        assert!((tc.x.to_f64() - 0.0637700055).abs() < 1e-9, "{}", tc.x.to_f64());
        assert!((tc.y.to_f64() - 0.7341102651).abs() < 1e-9, "{}", tc.y.to_f64());
        assert!((tc.q_minus.to_f64() - 0.0599471739).abs() < 1e-9);
        assert!((tc.q_plus.to_f64() - 0.4233354014).abs() < 1e-9);
        let xs = uniqueness_fixpoint(&hc(Scalar::one()), 6, PREC).unwrap().x_star;
        assert!(tc.x < xs && xs < tc.y);
        // No two-cycle in the uniqueness regime.
        assert!(two_cycle_fixpoints(&hc(r(1, 2)), 6, PREC).is_err());
    }

    #[test]
    fn symmetric_model_critical_edge_activity() {
        // Symmetric antiferromagnetic model at unit activity flips at
        // beta = (delta-2)/delta.
        let eps = r(1, 10_000);
        let b = ising_beta_c(6).unwrap();
        let inside = SpinParams::new(&b - &eps, &b - &eps, Scalar::one()).unwrap();
        let outside = SpinParams::new(&b + &eps, &b + &eps, Scalar::one()).unwrap();
        assert_eq!(in_nonuniqueness(&inside, 6, PREC).unwrap().verdict, Verdict::NonUnique);
        assert_eq!(in_nonuniqueness(&outside, 6, PREC).unwrap().verdict, Verdict::Unique);
    }

    #[test]
    fn boundary_band_reports_boundary() {
        // Exactly at the critical activity |f'| = 1 up to solver error.
        let lc = hardcore_lambda_c(6).unwrap();
        let report = in_nonuniqueness(&hc(lc), 6, PREC).unwrap();
        assert_eq!(report.verdict, Verdict::Boundary);
        assert!(!report.in_star_region);
    }
}

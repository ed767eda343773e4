//! Locating the vertex activity at which two gadgets' effective fields
//! cross, by sign-change bracketing and bisection of their difference.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::gadget::{eval_r_of_lambda, GadgetExpr};
use crate::params::SpinParams;
use crate::scalar::Scalar;

/// A certified field crossing in the vertex activity.
#[derive(Clone, Debug)]
pub struct Crossing {
    /// Midpoint of the final bracket.
    pub lambda_hat: Scalar,
    /// Bracket with a sign change of the field difference at its ends.
    pub bracket: (Scalar, Scalar),
    /// `|R_1 - R_2|` evaluated at `lambda_hat`.
    pub residual: Scalar,
    /// Field derivatives in the activity at `lambda_hat`.
    pub dr1: Scalar,
    pub dr2: Scalar,
}

fn field_difference(
    expr1: &Rc<GadgetExpr>,
    expr2: &Rc<GadgetExpr>,
    beta: &Scalar,
    gamma: &Scalar,
    lambda: &Scalar,
) -> Result<(Scalar, Scalar, Scalar, Scalar, Scalar)> {
    let p = SpinParams::new(beta.clone(), gamma.clone(), lambda.clone())?;
    let (r1, d1) = eval_r_of_lambda(expr1, &p)?;
    let (r2, d2) = eval_r_of_lambda(expr2, &p)?;
    let h = &r1 - &r2;
    Ok((h, r1, r2, d1, d2))
}

/// Find an activity in `[lambda0 - eps, lambda0 + eps]` at which the two
/// gadgets' fields cross.
///
/// The difference of fields is evaluated at the window ends and center;
/// a sign change (or exact zero) among them seeds a bisection that runs
/// to relative width `2^(10 - prec)`. Gadgets containing the triangle are
/// rejected because their field is defined only at one activity, so no
/// window can be scanned.
pub fn find_crossing_lambda(
    expr1: &Rc<GadgetExpr>,
    expr2: &Rc<GadgetExpr>,
    beta: &Scalar,
    gamma: &Scalar,
    lambda0: &Scalar,
    eps: &Scalar,
    prec: u32,
) -> Result<Crossing> {
    if !lambda0.is_positive() || !eps.is_positive() {
        return Err(Error::Infeasible(
            "window center and radius must be positive".into(),
        ));
    }
    let lambda0 = lambda0.to_big(prec);
    let eps = eps.to_big(prec);
    let mut lo = Scalar::Big(lambda0.clone() - eps.clone());
    if !lo.is_positive() {
        lo = Scalar::Big(lambda0.clone() >> 20);
    }
    let mid = Scalar::Big(lambda0.clone());
    let hi = Scalar::Big(lambda0 + eps);
    let mut probes = Vec::with_capacity(3);
    for lam in [&lo, &mid, &hi] {
        let (h, ..) = field_difference(expr1, expr2, beta, gamma, lam)?;
        probes.push((lam.clone(), h));
    }
    let mut bracket = None;
    for w in probes.windows(2) {
        let (la, ha) = &w[0];
        let (lb, hb) = &w[1];
        if ha.is_zero() {
            bracket = Some((la.clone(), la.clone()));
            break;
        }
        if hb.is_zero() {
            bracket = Some((lb.clone(), lb.clone()));
            break;
        }
        if ha.is_positive() != hb.is_positive() {
            bracket = Some((la.clone(), lb.clone()));
            break;
        }
    }
    let (mut a, mut b) = bracket.ok_or_else(|| {
        Error::Infeasible("no field crossing inside the requested activity window".into())
    })?;
    if a != b {
        let mut ha = field_difference(expr1, expr2, beta, gamma, &a)?.0;
        let tol = Scalar::Big(a.to_big(prec) >> (prec - 10).max(1));
        let two = Scalar::from_int(2);
        for _ in 0..(4 * prec) {
            if (&b - &a).abs() <= tol {
                break;
            }
            let m = &(&a + &b) / &two;
            let hm = field_difference(expr1, expr2, beta, gamma, &m)?.0;
            if hm.is_zero() {
                a = m.clone();
                b = m;
                break;
            }
            if hm.is_positive() == ha.is_positive() {
                a = m;
                ha = hm;
            } else {
                b = m;
            }
        }
    }
    let lambda_hat = &(&a + &b) / &Scalar::from_int(2);
    let (h, _, _, d1, d2) = field_difference(expr1, expr2, beta, gamma, &lambda_hat)?;
    Ok(Crossing { lambda_hat, bracket: (a, b), residual: h.abs(), dr1: d1, dr2: d2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gadget::{classic_pair, eval_gadget, merge, single_edge, triangle};

    const PREC: u32 = 256;

    fn r(n: i64, d: i64) -> Scalar {
        Scalar::from_ratio(n, d)
    }

    #[test]
    fn classic_pair_crosses_at_unit_activity() {
        let (e1, e2) = classic_pair();
        let c = find_crossing_lambda(
            &e1,
            &e2,
            &Scalar::one(),
            &Scalar::zero(),
            &r(101, 100),
            &r(3, 100),
            PREC,
        )
        .unwrap();
        assert!((&c.lambda_hat - &Scalar::one()).abs().to_f64() < 1e-70);
        assert!(c.residual.to_f64() < 1e-20);
        assert!(c.bracket.0 <= c.lambda_hat && c.lambda_hat <= c.bracket.1);
    }

    #[test]
    fn derivative_matches_central_difference_and_gap_identity() {
        let (e1, _) = classic_pair();
        let p = SpinParams::hard_core(Scalar::one()).unwrap();
        let pf = p.to_float(PREC);
        let (r0, d0) = eval_r_of_lambda(&e1, &pf).unwrap();
        let h = Scalar::from_f64(1e-6, PREC);
        let up = eval_r_of_lambda(&e1, &pf.with_lambda(&pf.lambda + &h).unwrap()).unwrap().0;
        let dn = eval_r_of_lambda(&e1, &pf.with_lambda(&pf.lambda - &h).unwrap()).unwrap().0;
        let central = &(&up - &dn) / &(&Scalar::from_int(2) * &h);
        let rel = (&(&central - &d0) / &d0).abs();
        assert!(rel.to_f64() < 1e-6, "central-difference mismatch: {}", rel.to_f64());
        // dR/dlambda = R (M - 1) / lambda.
        let ev = eval_gadget(&e1, &pf).unwrap();
        let predicted = &(&r0 * &(&ev.m - &Scalar::one())) / &pf.lambda;
        assert!((&predicted - &d0).abs().to_f64() < 1e-60);
    }

    #[test]
    fn rejects_triangle_gadgets_and_empty_windows() {
        let tri = merge(vec![triangle(), single_edge()]);
        let edge = single_edge();
        assert!(find_crossing_lambda(
            &tri,
            &edge,
            &r(1, 2),
            &r(1, 4),
            &r(2, 3),
            &r(1, 100),
            PREC
        )
        .is_err());
        // Same gadget twice: difference is identically zero... which is an
        // exact crossing everywhere, so instead use two gadgets whose
        // fields never meet near the window.
        let deg = crate::gadget::degenerate();
        assert!(find_crossing_lambda(
            &deg,
            &edge,
            &Scalar::one(),
            &Scalar::zero(),
            &Scalar::one(),
            &r(1, 100),
            PREC
        )
        .is_err());
    }
}

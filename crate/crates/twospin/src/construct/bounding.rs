//! Bounding sequence around the merge fixpoint.
//!
//! Starting from a pair of gadgets whose fields straddle the fixpoint
//! `x*` of `x = map(lambda * x^2)`, each step merges two existing gadgets
//! so that the new pair still straddles `x*` and the bracket contracts.
//! Because the merge map is decreasing in the child product, a product
//! above `(x*)^2` yields a field below `x*` and vice versa; the step picks
//! the merge orientation accordingly.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::fixpoint::{map_of_product, ode_fixpoint};
use crate::gadget::{degenerate, merge, triangle, GadgetExpr};
use crate::params::SpinParams;
use crate::scalar::Scalar;

/// One straddling pair in the iteration, with fields evaluated at working
/// precision.
#[derive(Clone, Debug)]
pub struct BoundingStep {
    pub lower: Rc<GadgetExpr>,
    pub upper: Rc<GadgetExpr>,
    pub r_lower: Scalar,
    pub r_upper: Scalar,
}

/// Full trace of a bounding run.
#[derive(Clone, Debug)]
pub struct BoundingPair {
    pub steps: Vec<BoundingStep>,
    pub x_star: Scalar,
    pub omega_star: Scalar,
    /// First step index where both fields are within `eps1` of `x_star`.
    pub primary: usize,
    /// First step index where the bracket width is below `eps2` times the
    /// width at `primary`.
    pub refined: usize,
}

impl BoundingPair {
    pub fn final_step(&self) -> &BoundingStep {
        self.steps.last().expect("bounding trace is never empty")
    }
}

fn field_of(p: &SpinParams, expr: &Rc<GadgetExpr>) -> Result<Scalar> {
    Ok(crate::gadget::eval_gadget(expr, p)?.r)
}

/// Iteratively tighten a gadget pair whose fields bracket `x*`.
///
/// Stops once both fields are within `eps1` of `x*` and the bracket has
/// subsequently shrunk by another factor `eps2`; the returned trace keeps
/// every intermediate pair. All evaluation runs at `prec`-bit floats; the
/// expressions share structure, so sizes grow exponentially while the
/// expression DAG stays linear in the step count.
pub fn bounding_pair(
    p: &SpinParams,
    eps1: &Scalar,
    eps2: &Scalar,
    prec: u32,
) -> Result<BoundingPair> {
    p.validate()?;
    if p.is_trivial_point() {
        return Err(Error::Infeasible(
            "the symmetric model at unit activity has no nontrivial fields".into(),
        ));
    }
    if !eps1.is_positive() || !eps2.is_positive() {
        return Err(Error::Infeasible("closeness targets must be positive".into()));
    }
    let pf = p.to_float(prec);
    let fx = ode_fixpoint(&pf, prec)?;
    let edge = merge(vec![]);
    let r_edge = field_of(&pf, &edge)?;
    let one = Scalar::one();

    // Initial straddle: the degenerate gadget sits at 1 and the one-edge
    // tree at map(lambda), which lies on the other side of x* whenever
    // x* != 1. At x* = 1 (exactly the triangle activity) the triangle
    // gadget provides the off-fixpoint seed.
    let (mut lower, mut upper, mut r_lower, mut r_upper);
    let at_one = {
        // x* = 1 iff 1 + gamma*lambda == beta + lambda, checked exactly.
        let lhs = &one + &(&p.gamma * &p.lambda);
        let rhs = &p.beta + &p.lambda;
        lhs == rhs
    };
    let xs = if at_one { Scalar::one() } else { fx.x_star.clone() };
    if at_one {
        let tri = triangle();
        let r_tri = field_of(&pf, &tri)?;
        if r_tri == one {
            return Err(Error::Infeasible(
                "triangle field coincides with the fixpoint; no seed available".into(),
            ));
        }
        if r_tri < one {
            lower = tri;
            upper = degenerate();
            r_lower = r_tri;
            r_upper = one.clone();
        } else {
            lower = degenerate();
            upper = tri;
            r_lower = one.clone();
            r_upper = r_tri;
        }
    } else if xs < one {
        lower = edge;
        upper = degenerate();
        r_lower = r_edge;
        r_upper = one.clone();
    } else {
        lower = degenerate();
        upper = edge;
        r_lower = one.clone();
        r_upper = r_edge;
    }
    if !(r_lower <= xs && xs <= r_upper) {
        return Err(Error::Internal("initial pair does not straddle the fixpoint".into()));
    }

    let mut steps = vec![BoundingStep {
        lower: lower.clone(),
        upper: upper.clone(),
        r_lower: r_lower.clone(),
        r_upper: r_upper.clone(),
    }];
    let mut primary: Option<usize> = None;
    let mut primary_width: Option<Scalar> = None;
    let mut refined: Option<usize> = None;
    let xs2 = &xs * &xs;
    let max_steps = 240usize;

    for step in 0..=max_steps {
        let width = &r_upper - &r_lower;
        if primary.is_none()
            && (&r_upper - &xs).abs() <= *eps1
            && (&xs - &r_lower).abs() <= *eps1
        {
            primary = Some(step);
            primary_width = Some(width.clone());
        }
        if let Some(pw) = &primary_width {
            if width <= eps2 * pw {
                refined = Some(step);
                break;
            }
        }
        if step == max_steps {
            break;
        }
        // Orientation: a child product >= (x*)^2 maps below x*.
        // When the fixpoint sits exactly at 1, a product of exactly 1 maps
        // to exactly 1 by the same identity; pinning that case keeps a
        // field resting on the fixpoint from drifting off by rounding.
        let field = |prod: Scalar| {
            if at_one && prod == one {
                one.clone()
            } else {
                map_of_product(&pf, &prod)
            }
        };
        let cross = &r_upper * &r_lower;
        let (new_lower, new_upper) = if cross >= xs2 {
            (merge(vec![upper.clone(), lower.clone()]), merge(vec![lower.clone(), lower.clone()]))
        } else {
            (merge(vec![upper.clone(), upper.clone()]), merge(vec![upper.clone(), lower.clone()]))
        };
        let new_r_lower = field(if cross >= xs2 { cross.clone() } else { &r_upper * &r_upper });
        let new_r_upper = field(if cross >= xs2 { &r_lower * &r_lower } else { cross });
        if !(new_r_lower <= xs && xs <= new_r_upper) {
            return Err(Error::NonConvergence(
                "bounding step lost the straddle (precision exhausted)".into(),
            ));
        }
        lower = new_lower;
        upper = new_upper;
        r_lower = new_r_lower;
        r_upper = new_r_upper;
        steps.push(BoundingStep {
            lower: lower.clone(),
            upper: upper.clone(),
            r_lower: r_lower.clone(),
            r_upper: r_upper.clone(),
        });
    }

    match (primary, refined) {
        (Some(primary), Some(refined)) => Ok(BoundingPair {
            steps,
            x_star: xs,
            omega_star: fx.omega_star,
            primary,
            refined,
        }),
        _ => Err(Error::NonConvergence(format!(
            "bounding pair did not reach targets within {max_steps} steps; final width {}",
            (&r_upper - &r_lower).to_f64()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gadget::eval_gadget;

    const PREC: u32 = 256;

    fn r(n: i64, d: i64) -> Scalar {
        Scalar::from_ratio(n, d)
    }

    #[test]
    fn hard_core_trace_contracts() {
        let p = SpinParams::hard_core(Scalar::one()).unwrap();
        let bp = bounding_pair(&p, &r(1, 1_000_000), &r(1, 10_000), PREC).unwrap();
        // Initial straddle is the one-edge tree against the degenerate.
        assert_eq!(bp.steps[0].r_lower, r(1, 2));
        assert_eq!(bp.steps[0].r_upper, Scalar::one());
        let mut prev_ratio: Option<Scalar> = None;
        for s in &bp.steps {
            assert!(s.r_lower <= bp.x_star && bp.x_star <= s.r_upper);
            let ratio = &s.r_upper / &s.r_lower;
            if let Some(pr) = prev_ratio {
                assert!(ratio < pr, "upper/lower ratio must strictly decrease");
            }
            prev_ratio = Some(ratio);
        }
        let last = bp.final_step();
        let width = (&last.r_upper - &last.r_lower).to_f64();
        assert!(width <= 1e-10, "{width}");
        assert!(bp.refined >= bp.primary);
        // The trace fields must match a from-scratch evaluation.
        let pf = p.to_float(PREC);
        let probe = &bp.steps[3];
        let el = eval_gadget(&probe.lower, &pf).unwrap();
        let eu = eval_gadget(&probe.upper, &pf).unwrap();
        assert!((&el.r - &probe.r_lower).abs().to_f64() < 1e-70);
        assert!((&eu.r - &probe.r_upper).abs().to_f64() < 1e-70);
    }

    #[test]
    fn exact_early_iterates_match_hand_values() {
        // Hard-core at unit activity: [1/2, 1] -> [2/3, 4/5] -> [15/23, 9/13].
        let p = SpinParams::hard_core(Scalar::one()).unwrap();
        let bp = bounding_pair(&p, &r(1, 100), &r(1, 2), PREC).unwrap();
        let s1 = &bp.steps[1];
        assert!((&s1.r_lower - &r(2, 3)).abs().to_f64() < 1e-70);
        assert!((&s1.r_upper - &r(4, 5)).abs().to_f64() < 1e-70);
        let s2 = &bp.steps[2];
        assert!((&s2.r_lower - &r(15, 23)).abs().to_f64() < 1e-70);
        assert!((&s2.r_upper - &r(9, 13)).abs().to_f64() < 1e-70);
    }

    #[test]
    fn rejects_trivial_point() {
        let p = SpinParams::new(r(1, 2), r(1, 2), Scalar::one()).unwrap();
        assert!(bounding_pair(&p, &r(1, 100), &r(1, 2), PREC).is_err());
    }

    #[test]
    fn triangle_seed_at_unit_fixpoint() {
        // beta=1/2, gamma=1/4 at lambda=(1-beta)/(1-gamma)=2/3 puts the
        // fixpoint exactly at 1; the triangle (field 901/874 > 1) seeds the
        // upper side.
        let p = SpinParams::new(r(1, 2), r(1, 4), r(2, 3)).unwrap();
        let bp = bounding_pair(&p, &r(1, 1000), &r(1, 10), PREC).unwrap();
        assert_eq!(bp.steps[0].r_lower, Scalar::one());
        assert!((bp.x_star.to_f64() - 1.0).abs() < 1e-70);
        let last = bp.final_step();
        assert!((&last.r_upper - &last.r_lower).to_f64() < 1e-4);
        for s in &bp.steps {
            assert!(s.r_lower <= bp.x_star && bp.x_star <= s.r_upper);
        }
    }

    #[test]
    fn soft_parameters_converge() {
        let p = SpinParams::new(r(3, 4), r(1, 8), r(5, 4)).unwrap();
        let bp = bounding_pair(&p, &r(1, 100_000), &r(1, 1000), PREC).unwrap();
        let last = bp.final_step();
        // Contract: width(refined) <= eps2 * width(primary) <= 2*eps1*eps2.
        let width = (&last.r_upper - &last.r_lower).to_f64();
        assert!(width <= 2.0 * 1e-5 * 1e-3 * 1.0001, "{width}");
        let wp = (&bp.steps[bp.primary].r_upper - &bp.steps[bp.primary].r_lower).to_f64();
        assert!(wp <= 2.0 * 1e-5 * 1.0001);
    }
}

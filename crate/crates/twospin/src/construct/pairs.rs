//! Construction of gadget pairs: two tree gadgets whose effective fields
//! (nearly) coincide while their magnetization gaps are separated, plus
//! the bootstrap that turns one exact pair into a chain of pairs at
//! pairwise distinct fields.

use std::cmp::Ordering;
use std::rc::Rc;

use crate::construct::family::{
    build_gadget, contraction_data, dense_family, detect_case1, preimage_scale,
    ContractionData, DenseFamily, MapChoiceSeq,
};
use crate::error::{Error, Result};
use crate::fixpoint::{map_of_product, ode_fixpoint};
use crate::gadget::{
    classic_pair, degenerate, eval_gadget, merge, triangle, GadgetEval, GadgetExpr,
};
use crate::params::SpinParams;
use crate::scalar::Scalar;

/// Two gadgets with (nearly) matching fields and separated gaps.
#[derive(Clone, Debug)]
pub struct GadgetPair {
    /// Common field estimate, the mean of the two evaluated fields.
    pub r_hat: Scalar,
    /// Certified lower bound on the magnetization-gap difference.
    pub m_hat: Scalar,
    pub expr1: Rc<GadgetExpr>,
    pub expr2: Rc<GadgetExpr>,
    pub eval1: GadgetEval,
    pub eval2: GadgetEval,
}

/// Tuning knobs for `find_pair`.
#[derive(Clone, Debug)]
pub struct FindPairConfig {
    pub precision: u32,
    /// Family density as a fraction of `omega*`.
    pub delta_factor: Scalar,
    /// Cap on the covered radius of the family.
    pub tau1: Scalar,
    /// Depth of the interval-image separation scan.
    pub case1_depth: u32,
    /// Frontier width of the separation scan.
    pub case1_frontier: usize,
    /// Hard cap on builder steering depth.
    pub max_build_depth: u32,
}

impl Default for FindPairConfig {
    fn default() -> Self {
        FindPairConfig {
            precision: 256,
            delta_factor: Scalar::from_ratio(1, 200),
            tau1: Scalar::from_ratio(1, 10_000),
            case1_depth: 3,
            case1_frontier: 16,
            max_build_depth: 120,
        }
    }
}

fn make_pair(
    expr1: Rc<GadgetExpr>,
    eval1: GadgetEval,
    expr2: Rc<GadgetExpr>,
    eval2: GadgetEval,
    m_hat: Scalar,
) -> GadgetPair {
    let r_hat = (&eval1.r + &eval2.r) / &Scalar::from_int(2);
    GadgetPair { r_hat, m_hat, expr1, expr2, eval1, eval2 }
}

/// Find `k` gadget pairs with pairwise distinct common fields, each with
/// field mismatch at most `2r` and a positive certified gap difference.
///
/// A fast path serves parameter points where the classic exact pair
/// already matches fields exactly; otherwise a dense family is grown and
/// pairs are constructed either from an interval-certified gap separation
/// or by steering builder outputs onto a common composite field.
pub fn find_pair(
    p: &SpinParams,
    r: &Scalar,
    k: usize,
    cfg: &FindPairConfig,
) -> Result<Vec<GadgetPair>> {
    p.validate()?;
    if !r.is_positive() || r.partial_cmp(&Scalar::from_ratio(1, 2)) != Some(Ordering::Less) {
        return Err(Error::Infeasible("field tolerance must lie in (0, 1/2)".into()));
    }
    if p.is_trivial_point() {
        return Err(Error::Infeasible(
            "every tree field is 1 at the symmetric unit-activity point".into(),
        ));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if p.is_rational() {
        let (e1, e2) = classic_pair();
        let v1 = eval_gadget(&e1, p)?;
        let v2 = eval_gadget(&e2, p)?;
        if v1.r == v2.r && v1.m != v2.m {
            let gap = (&v1.m - &v2.m).abs();
            let base = make_pair(e1, v1, e2, v2, gap);
            let mut out = vec![base.clone()];
            if k > 1 {
                out.extend(bootstrap_pairs(&base, p, k - 1, cfg.precision)?);
            }
            out.truncate(k);
            return Ok(out);
        }
    }
    general_pairs(p, r, k, cfg)
}

fn steering_depth(r: &Scalar, spacing: f64, cdata: &ContractionData, cap: u32) -> u32 {
    let cf = cdata.c_max.to_f64().clamp(1e-6, 0.999);
    let per_step = (1.0 / cf).ln();
    let from_r = ((10.0 / r.to_f64().max(1e-300)).ln() / per_step).ceil();
    let from_spacing = ((10.0 / spacing.max(1e-300)).ln() / per_step).ceil();
    let t = from_r.max(from_spacing) as i64 + 2;
    t.clamp(8, cap as i64) as u32
}

/// Realize one builder choice sequence at target field `x`: walk the
/// preimages of `x` backwards to find the required base field, steer a
/// base gadget onto it, then wrap the sequence around the base.
fn realize_sequence(
    p: &SpinParams,
    family: &DenseFamily,
    cdata: &ContractionData,
    seq: &MapChoiceSeq,
    x: &Scalar,
    prec: u32,
) -> Result<(Rc<GadgetExpr>, GadgetEval)> {
    let pf = p.to_float(prec);
    let mut y = x.clone();
    for &i in seq.iter().rev() {
        y = &preimage_scale(&pf, &y) / &family.members[i].r;
    }
    if !cdata.i.contains(&y) {
        return Err(Error::Internal(
            "sequence preimage walk left the steering interval".into(),
        ));
    }
    let (base, _) = build_gadget(p, &y, 48, family, cdata, prec)?;
    let mut expr = base;
    for &i in seq {
        expr = merge(vec![expr, family.members[i].expr.clone()]);
    }
    let eval = eval_gadget(&expr, &pf)?;
    Ok((expr, eval))
}

fn general_pairs(
    p: &SpinParams,
    r: &Scalar,
    k: usize,
    cfg: &FindPairConfig,
) -> Result<Vec<GadgetPair>> {
    let prec = cfg.precision;
    let pf = p.to_float(prec);
    let fx = ode_fixpoint(&pf, prec)?;
    let delta = &fx.omega_star * &cfg.delta_factor;
    let family = dense_family(p, &delta, &cfg.tau1, prec)?;
    let cdata = contraction_data(p, &family, prec)?;
    let two_r = Scalar::from_int(2) * r;
    let mut cands: Vec<GadgetPair> = Vec::new();
    let mut diags: Vec<String> = Vec::new();

    match detect_case1(p, &family, &cdata, cfg.case1_depth, cfg.case1_frontier, prec)? {
        Some(find) => {
            let (e1, v1) = realize_sequence(p, &family, &cdata, &find.seq1, &find.x, prec)?;
            let (e2, v2) = realize_sequence(p, &family, &cdata, &find.seq2, &find.x, prec)?;
            let dr = (&v1.r - &v2.r).abs();
            let measured = (&v1.m - &v2.m).abs();
            if dr <= two_r && measured.is_positive() {
                let m_hat = Scalar::min(find.m_hat.clone(), measured);
                cands.push(make_pair(e1, v1, e2, v2, m_hat));
            } else {
                diags.push("interval-separated pair failed the field tolerance".into());
            }
        }
        None => diags.push("no interval-separated gap pair at scan depth".into()),
    }

    // Composite-field route: steer two builds onto x and one onto the
    // field of their merge, then compare the merged pair against the
    // single build.
    let n_targets = k + 2;
    let w = cdata.i.width();
    let spacing = w.to_f64() / (2.0 * (n_targets as f64 + 1.0));
    let t = steering_depth(r, spacing, &cdata, cfg.max_build_depth);
    for idx in 0..n_targets {
        let num = Scalar::from_int(2 * idx as i64 + 3);
        let den = Scalar::from_int(2 * (n_targets as i64 + 1));
        let x1 = &cdata.i.lo + &(&(&w * &num) / &den);
        let x3 = map_of_product(&pf, &(&x1 * &x1));
        if !cdata.i.contains(&x3) {
            diags.push(format!("merged field left the steering interval at target {idx}"));
            continue;
        }
        let (g, _) = build_gadget(p, &x1, t, &family, &cdata, prec)?;
        let paired = merge(vec![g.clone(), g]);
        let (single, _) = build_gadget(p, &x3, t, &family, &cdata, prec)?;
        let v1 = eval_gadget(&paired, &pf)?;
        let v2 = eval_gadget(&single, &pf)?;
        let dr = (&v1.r - &v2.r).abs();
        let measured = (&v1.m - &v2.m).abs();
        if dr <= two_r && measured.is_positive() {
            cands.push(make_pair(paired, v1, single, v2, measured));
        } else {
            diags.push(format!(
                "target {idx}: field mismatch {} gap {}",
                dr.to_f64(),
                measured.to_f64()
            ));
        }
    }

    cands.sort_by(|a, b| {
        b.m_hat
            .partial_cmp(&a.m_hat)
            .expect("finite gaps")
            .then_with(|| a.r_hat.partial_cmp(&b.r_hat).expect("finite fields"))
    });
    let mut out: Vec<GadgetPair> = Vec::new();
    for c in cands {
        if out.iter().all(|o| o.r_hat != c.r_hat) {
            out.push(c);
        }
        if out.len() == k {
            break;
        }
    }
    if out.len() < k {
        return Err(Error::Infeasible(format!(
            "constructed only {} of {k} requested pairs: {}",
            out.len(),
            diags.join("; ")
        )));
    }
    Ok(out)
}

fn scalars_equal(a: &Scalar, b: &Scalar, prec: u32) -> bool {
    if a.is_rat() && b.is_rat() {
        return a == b;
    }
    let scale = Scalar::max(Scalar::one(), Scalar::max(a.abs(), b.abs()));
    let band = Scalar::from_f64(2f64.powi(-((prec / 2) as i32)), prec);
    (a - b).abs() <= &scale * &band
}

/// Derive `count` further pairs from an exactly field-matched pair by
/// repeatedly wrapping both members the same way. Wrapping with a
/// degenerate gadget moves the common field through the one-child merge
/// map and scales the gap difference by the local merge weight, so
/// equality is preserved while the field walks an orbit of pairwise
/// distinct values. If a wrap would revisit a field, a self-merge (and,
/// at the one-field fixpoint of that map, a triangle merge) is used
/// instead.
pub fn bootstrap_pairs(
    pair: &GadgetPair,
    p: &SpinParams,
    count: usize,
    prec: u32,
) -> Result<Vec<GadgetPair>> {
    p.validate()?;
    if !scalars_equal(&pair.eval1.r, &pair.eval2.r, prec) {
        return Err(Error::Infeasible(
            "bootstrap requires a pair with exactly matching fields".into(),
        ));
    }
    if pair.eval1.m == pair.eval2.m {
        return Err(Error::Infeasible("bootstrap requires separated gaps".into()));
    }
    let eval_params = if p.is_rational() && pair.eval1.r.is_rat() {
        p.clone()
    } else {
        p.to_float(prec)
    };
    let mut used: Vec<Scalar> = vec![pair.eval1.r.clone()];
    let mut cur1 = pair.expr1.clone();
    let mut cur2 = pair.expr2.clone();
    let mut cur_r = pair.eval1.r.clone();
    let mut out = Vec::with_capacity(count);
    for step in 0..count {
        let deg_field = map_of_product(&eval_params, &cur_r);
        let self_field = map_of_product(&eval_params, &(&cur_r * &cur_r));
        let wrap = if used.iter().all(|u| !scalars_equal(u, &deg_field, prec)) {
            |a: &Rc<GadgetExpr>| merge(vec![a.clone(), degenerate()])
        } else if used.iter().all(|u| !scalars_equal(u, &self_field, prec)) {
            |a: &Rc<GadgetExpr>| merge(vec![a.clone(), a.clone()])
        } else if SpinParams::triangle_lambda(&p.beta, &p.gamma)
            .map(|l| l == p.lambda)
            .unwrap_or(false)
        {
            |a: &Rc<GadgetExpr>| merge(vec![a.clone(), triangle()])
        } else {
            return Err(Error::Infeasible(format!(
                "bootstrap field orbit closed after {step} steps"
            )));
        };
        cur1 = wrap(&cur1);
        cur2 = wrap(&cur2);
        let v1 = eval_gadget(&cur1, &eval_params)?;
        let v2 = eval_gadget(&cur2, &eval_params)?;
        if !scalars_equal(&v1.r, &v2.r, prec) {
            return Err(Error::Internal("bootstrap wrap broke field equality".into()));
        }
        if v1.m == v2.m {
            return Err(Error::Infeasible(format!(
                "bootstrap gap vanished after {} steps",
                step + 1
            )));
        }
        cur_r = v1.r.clone();
        used.push(cur_r.clone());
        let gap = (&v1.m - &v2.m).abs();
        out.push(make_pair(cur1.clone(), v1, cur2.clone(), v2, gap));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PREC: u32 = 256;

    fn r(n: i64, d: i64) -> Scalar {
        Scalar::from_ratio(n, d)
    }

    #[test]
    fn fast_path_walks_the_ratio_orbit() {
        let p = SpinParams::hard_core(Scalar::one()).unwrap();
        let pairs = find_pair(&p, &r(1, 10_000), 3, &FindPairConfig::default()).unwrap();
        assert_eq!(pairs.len(), 3);
        let fields = [r(2, 3), r(3, 5), r(5, 8)];
        let gaps = [r(1, 12), r(1, 30), r(1, 80)];
        for (i, pair) in pairs.iter().enumerate() {
            assert_eq!(pair.eval1.r, pair.eval2.r, "fields must match exactly");
            assert_eq!(pair.r_hat, fields[i]);
            assert_eq!(pair.m_hat, gaps[i]);
        }
        // A degenerate wrap glues its single vertex onto the old root, so
        // each step adds exactly one vertex.
        assert_eq!(pairs[0].eval1.size, 3);
        assert_eq!(pairs[0].eval2.size, 8);
        assert_eq!(pairs[2].eval1.size, 5);
        assert_eq!(pairs[2].eval2.size, 10);
    }

    #[test]
    fn bootstrap_chain_stays_exact() {
        let p = SpinParams::hard_core(Scalar::one()).unwrap();
        let (e1, e2) = classic_pair();
        let v1 = eval_gadget(&e1, &p).unwrap();
        let v2 = eval_gadget(&e2, &p).unwrap();
        let gap = (&v1.m - &v2.m).abs();
        let base = make_pair(e1, v1, e2, v2, gap);
        let chain = bootstrap_pairs(&base, &p, 5, PREC).unwrap();
        assert_eq!(chain.len(), 5);
        let expect_fields = [r(3, 5), r(5, 8), r(8, 13), r(13, 21), r(21, 34)];
        for (i, pair) in chain.iter().enumerate() {
            assert!(pair.r_hat.is_rat(), "hard-core chain stays rational");
            assert_eq!(pair.eval1.r, pair.eval2.r);
            assert_eq!(pair.r_hat, expect_fields[i]);
            assert!(pair.eval1.m != pair.eval2.m);
        }
        // All fields pairwise distinct, including the base.
        let mut all = vec![base.r_hat.clone()];
        all.extend(chain.iter().map(|c| c.r_hat.clone()));
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                assert!(all[i] != all[j]);
            }
        }
    }

    #[test]
    fn bootstrap_rejects_mismatched_fields() {
        let p = SpinParams::hard_core(Scalar::one()).unwrap();
        let e1 = crate::gadget::single_edge();
        let e2 = degenerate();
        let v1 = eval_gadget(&e1, &p).unwrap();
        let v2 = eval_gadget(&e2, &p).unwrap();
        let pair = make_pair(e1, v1, e2, v2, Scalar::one());
        assert!(bootstrap_pairs(&pair, &p, 1, PREC).is_err());
    }

    #[test]
    fn rejects_bad_tolerance_and_trivial_point() {
        let p = SpinParams::hard_core(Scalar::one()).unwrap();
        let cfg = FindPairConfig::default();
        assert!(find_pair(&p, &Scalar::zero(), 1, &cfg).is_err());
        assert!(find_pair(&p, &r(1, 2), 1, &cfg).is_err());
        let trivial =
            SpinParams::new(r(1, 2), r(1, 2), Scalar::one()).unwrap();
        assert!(find_pair(&trivial, &r(1, 100), 1, &cfg).is_err());
    }

    #[test]
    fn general_route_builds_pairs_off_the_fast_path() {
        // Hard-core at activity 9/10: the classic pair's fields differ, so
        // the family machinery must produce the pairs.
        let p = SpinParams::hard_core(r(9, 10)).unwrap();
        let (e1, e2) = classic_pair();
        assert!(eval_gadget(&e1, &p).unwrap().r != eval_gadget(&e2, &p).unwrap().r);
        let cfg = FindPairConfig {
            tau1: r(1, 1000),
            case1_depth: 2,
            case1_frontier: 8,
            ..FindPairConfig::default()
        };
        let tol = r(1, 1000);
        let pairs = find_pair(&p, &tol, 2, &cfg).unwrap();
        assert_eq!(pairs.len(), 2);
        let two_tol = &Scalar::from_int(2) * &tol;
        for pair in &pairs {
            assert!((&pair.eval1.r - &pair.eval2.r).abs() <= two_tol);
            assert!(pair.m_hat.is_positive());
            let measured = (&pair.eval1.m - &pair.eval2.m).abs();
            assert!(measured >= pair.m_hat);
        }
        assert!(pairs[0].r_hat != pairs[1].r_hat);
    }
}

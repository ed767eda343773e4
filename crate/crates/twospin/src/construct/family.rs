//! Dense effective-field families around the merge fixpoint, contraction
//! certificates over the working intervals, the target-steered gadget
//! builder, and interval-image analysis of builder choice sequences.
//!
//! A family is grown by a doubling scheme: two seed gadgets very close to
//! the fixpoint `x*` span a fine arithmetic grid after repeated pairwise
//! merging, because merging members with grid offsets `a` and `b` yields
//! offset `-omega* (a+b)` to first order. Levels alternate sides of `x*`,
//! so the last two levels together cover a symmetric interval. All grid
//! claims are re-verified post hoc from the computed fields; nothing is
//! trusted from the linearization.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::rc::Rc;

use crate::construct::bounding::bounding_pair;
use crate::error::{Error, Result};
use crate::fixpoint::{map_of_product, ode_fixpoint, omega_at_field, omega_of_product};
use crate::gadget::{degenerate, eval_gadget, merge, GadgetExpr};
use crate::params::SpinParams;
use crate::scalar::Scalar;

/// Builder choice sequence, innermost application first.
pub type MapChoiceSeq = Vec<usize>;

/// Closed interval with scalar endpoints.
#[derive(Clone, Debug, serde::Serialize)]
pub struct Interval {
    pub lo: Scalar,
    pub hi: Scalar,
}

impl Interval {
    pub fn new(lo: Scalar, hi: Scalar) -> Result<Interval> {
        if lo > hi {
            return Err(Error::Internal("interval endpoints out of order".into()));
        }
        Ok(Interval { lo, hi })
    }

    pub fn width(&self) -> Scalar {
        &self.hi - &self.lo
    }

    pub fn midpoint(&self) -> Scalar {
        (&self.lo + &self.hi) / &Scalar::from_int(2)
    }

    pub fn contains(&self, x: &Scalar) -> bool {
        &self.lo <= x && x <= &self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = if self.lo >= other.lo { self.lo.clone() } else { other.lo.clone() };
        let hi = if self.hi <= other.hi { self.hi.clone() } else { other.hi.clone() };
        if lo <= hi {
            Some(Interval { lo, hi })
        } else {
            None
        }
    }

    pub fn mul(&self, other: &Interval) -> Interval {
        let products = [
            &self.lo * &other.lo,
            &self.lo * &other.hi,
            &self.hi * &other.lo,
            &self.hi * &other.hi,
        ];
        let mut lo = products[0].clone();
        let mut hi = products[0].clone();
        for p in &products[1..] {
            if *p < lo {
                lo = p.clone();
            }
            if *p > hi {
                hi = p.clone();
            }
        }
        Interval { lo, hi }
    }
}

/// One family gadget with its evaluated field and magnetization gap.
#[derive(Clone, Debug)]
pub struct FamilyMember {
    pub expr: Rc<GadgetExpr>,
    pub r: Scalar,
    pub m: Scalar,
}

/// A verified dense family of effective fields around `x*`.
#[derive(Clone, Debug)]
pub struct DenseFamily {
    /// Covered radius: member fields are dense in `[x*-tau, x*+tau]`.
    pub tau: Scalar,
    /// Density parameter: every point of the covered interval lies within
    /// `tau * delta` of some member field.
    pub delta: Scalar,
    /// Members sorted by ascending field.
    pub members: Vec<FamilyMember>,
    pub x_star: Scalar,
    pub omega_star: Scalar,
    /// Doubling depth of the top level.
    pub level: u32,
}

impl DenseFamily {
    /// Re-check the density invariant from the stored fields: the union of
    /// `tau*delta`-balls around member fields must cover `[x*-tau, x*+tau]`.
    pub fn verify_density(&self) -> Result<()> {
        verify_density_of(
            self.members.iter().map(|m| &m.r),
            &self.x_star,
            &self.tau,
            &self.delta,
        )
    }
}

fn verify_density_of<'a, I: Iterator<Item = &'a Scalar>>(
    sorted_fields: I,
    center: &Scalar,
    tau: &Scalar,
    delta: &Scalar,
) -> Result<()> {
    let radius = tau * delta;
    let hi_end = center + tau;
    let mut covered = center - tau;
    if covered >= hi_end {
        return Err(Error::Infeasible("empty coverage interval".into()));
    }
    for r in sorted_fields {
        let reach_lo = r - &radius;
        if reach_lo > covered {
            return Err(Error::Infeasible(format!(
                "density gap of {} starting at {}",
                (&reach_lo - &covered).to_f64(),
                covered.to_f64()
            )));
        }
        let reach_hi = r + &radius;
        if reach_hi > covered {
            covered = reach_hi;
        }
        if covered >= hi_end {
            return Ok(());
        }
    }
    Err(Error::Infeasible(format!(
        "coverage stops at {} short of {}",
        covered.to_f64(),
        hi_end.to_f64()
    )))
}

/// Exact fixpoint shortcut: `x* = 1` iff `1 + gamma*lambda = beta + lambda`.
fn fixpoint_is_one(p: &SpinParams) -> bool {
    &Scalar::one() + &(&p.gamma * &p.lambda) == &p.beta + &p.lambda
}

struct Seed {
    expr: Rc<GadgetExpr>,
    r: Scalar,
    m: Scalar,
}

/// Two gadgets very near `x*`: one essentially on it, one at a small
/// offset that defines the grid unit.
fn level_one_seeds(
    p: &SpinParams,
    pf: &SpinParams,
    xs: &Scalar,
    tau1: &Scalar,
    level: u32,
    omega_f: f64,
    prec: u32,
) -> Result<(Seed, Seed)> {
    let eps1 = Scalar::min(tau1 / &Scalar::from_int(4), Scalar::from_ratio(1, 1000));
    let eps2_f = (omega_f.powi(level as i32 - 1) / 128.0).max(1e-60);
    let eps2 = Scalar::from_f64(eps2_f, prec);
    let bp = bounding_pair(p, &eps1, &eps2, prec)?;
    let prim = &bp.steps[bp.primary];
    let (far_expr, far_r) = if (&prim.r_upper - xs).abs() >= (xs - &prim.r_lower).abs() {
        (prim.upper.clone(), prim.r_upper.clone())
    } else {
        (prim.lower.clone(), prim.r_lower.clone())
    };
    let refd = &bp.steps[bp.refined];
    let (near_expr, near_r) = if (xs - &refd.r_lower).abs() <= (&refd.r_upper - xs).abs() {
        (refd.lower.clone(), refd.r_lower.clone())
    } else {
        (refd.upper.clone(), refd.r_upper.clone())
    };
    let far_m = eval_gadget(&far_expr, pf)?.m;
    let near_m = eval_gadget(&near_expr, pf)?.m;
    Ok((
        Seed { expr: near_expr, r: near_r, m: near_m },
        Seed { expr: far_expr, r: far_r, m: far_m },
    ))
}

fn merge_values(pf: &SpinParams, a: &FamilyMember, b: &FamilyMember) -> FamilyMember {
    let prod = &a.r * &b.r;
    let r = map_of_product(pf, &prod);
    let w = omega_of_product(pf, &prod);
    let m = &Scalar::one() - &(&w * &(&(&a.m + &b.m) - &Scalar::one()));
    FamilyMember { expr: merge(vec![a.expr.clone(), b.expr.clone()]), r, m }
}

/// Grow and verify a dense family of effective fields.
///
/// `delta` is the requested relative density (must be below
/// `omega*/100`); `tau1` caps the covered radius. The doubling depth is
/// calibrated from `delta` and re-verified; on a verification failure the
/// depth is increased and the family rebuilt, up to a hard cap.
pub fn dense_family(
    p: &SpinParams,
    delta: &Scalar,
    tau1: &Scalar,
    prec: u32,
) -> Result<DenseFamily> {
    p.validate()?;
    if p.is_trivial_point() {
        return Err(Error::Infeasible(
            "the symmetric model at unit activity admits no field family".into(),
        ));
    }
    if !delta.is_positive() || !tau1.is_positive() {
        return Err(Error::Infeasible("density and radius must be positive".into()));
    }
    let pf = p.to_float(prec);
    let fx = ode_fixpoint(&pf, prec)?;
    let xs = if fixpoint_is_one(p) { Scalar::one() } else { fx.x_star.clone() };
    let omega = fx.omega_star.clone();
    let density_cap = &omega / &Scalar::from_int(100);
    if delta.partial_cmp(&density_cap) != Some(Ordering::Less) {
        return Err(Error::Infeasible("density parameter must be below omega*/100".into()));
    }
    let omega_f = omega.to_f64().min(0.999);
    let delta_f = delta.to_f64();
    let mut level = 3u32;
    while ((1u64 << (level - 1)) as f64) * delta_f * omega_f < 4.0 && level < 18 {
        level += 1;
    }
    let cap = 18u32;
    let mut last_err = None;
    while level <= cap {
        let (near, far) = level_one_seeds(p, &pf, &xs, tau1, level, omega_f, prec)?;
        let mut lv: Vec<FamilyMember> = vec![
            FamilyMember { expr: near.expr.clone(), r: near.r.clone(), m: near.m.clone() },
            FamilyMember { expr: far.expr.clone(), r: far.r.clone(), m: far.m.clone() },
        ];
        let mut prev: Vec<FamilyMember> = Vec::new();
        for i in 1..level {
            let next_len = (1usize << i) + 1;
            let mut next = Vec::with_capacity(next_len);
            for j in 0..next_len {
                next.push(merge_values(&pf, &lv[j.div_ceil(2)], &lv[j / 2]));
            }
            prev = lv;
            lv = next;
        }
        let mut members: Vec<FamilyMember> = prev;
        members.extend(lv);
        members.sort_by(|a, b| a.r.partial_cmp(&b.r).expect("finite fields"));
        let r_min = members.first().expect("nonempty family").r.clone();
        let r_max = members.last().expect("nonempty family").r.clone();
        if !(r_min < xs && xs < r_max) {
            last_err = Some(Error::NonConvergence(
                "family levels failed to straddle the fixpoint".into(),
            ));
            level += 1;
            continue;
        }
        let mut tau = Scalar::min(&xs - &r_min, &r_max - &xs);
        if &tau > tau1 {
            tau = tau1.clone();
        }
        let fam = DenseFamily {
            tau,
            delta: delta.clone(),
            members,
            x_star: xs.clone(),
            omega_star: omega.clone(),
            level,
        };
        match fam.verify_density() {
            Ok(()) => {
                for mem in &fam.members {
                    let above_gamma = mem.r > p.gamma;
                    let below_inv_beta =
                        p.beta.is_zero() || mem.r < p.beta.recip();
                    if !above_gamma || !below_inv_beta {
                        return Err(Error::Internal(
                            "family field escaped the admissible range".into(),
                        ));
                    }
                }
                return Ok(fam);
            }
            Err(e) => {
                last_err = Some(e);
                level += 1;
            }
        }
    }
    Err(Error::NonConvergence(format!(
        "family density not achieved up to doubling depth {cap}: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Certified contraction data over the working intervals.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ContractionData {
    /// Target interval for the builder.
    pub i: Interval,
    /// Enlarged interval closed under all `phi_i`.
    pub i_prime: Interval,
    /// Magnetization-gap interval `[-T, T]`.
    pub j: Interval,
    pub c_min: Scalar,
    pub c_max: Scalar,
    pub t_bound: Scalar,
    pub max_abs_m: Scalar,
}

/// Derivative magnitude of `phi_i` at field `r`:
/// `lambda * r_i * (1-beta*gamma) / (beta + lambda*r*r_i)^2`, decreasing
/// in `r`.
fn phi_derivative_abs(pf: &SpinParams, r_i: &Scalar, r: &Scalar) -> Scalar {
    let denom = &pf.beta + &(&(&pf.lambda * r) * r_i);
    let numer = &(&pf.lambda * r_i) * &pf.one_minus_bg();
    &numer / &(&denom * &denom)
}

fn apply_phi(pf: &SpinParams, r_i: &Scalar, r: &Scalar) -> Scalar {
    map_of_product(pf, &(r * r_i))
}

/// Image of an interval under the decreasing map `phi_i`.
fn phi_of_interval(pf: &SpinParams, r_i: &Scalar, iv: &Interval) -> Interval {
    Interval { lo: apply_phi(pf, r_i, &iv.hi), hi: apply_phi(pf, r_i, &iv.lo) }
}

/// Range of the merge weight `omega` over an interval: `omega` is concave
/// in the field with its peak at `sqrt(gamma/beta)`, so the extrema are at
/// the endpoints plus possibly that peak.
fn omega_range(pf: &SpinParams, iv: &Interval, prec: u32) -> Interval {
    let a = omega_at_field(pf, &iv.lo);
    let b = omega_at_field(pf, &iv.hi);
    let (mut lo, mut hi) =
        if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
    if pf.beta.is_positive() && pf.gamma.is_positive() {
        let peak = (&pf.gamma / &pf.beta).sqrt_big(prec);
        if iv.contains(&peak) {
            let w = omega_at_field(pf, &peak);
            if w > hi {
                hi = w.clone();
            }
            if w < lo {
                lo = w;
            }
        }
    }
    Interval { lo, hi }
}

/// Gap-propagation interval: `psi_i(R, M) = 1 - omega(phi_i(R)) * (M + M_i - 1)`
/// evaluated over a field interval (already mapped through `phi_i`) and a
/// gap interval.
fn psi_of_intervals(
    pf: &SpinParams,
    f_new: &Interval,
    g: &Interval,
    m_i: &Scalar,
    prec: u32,
) -> Interval {
    let w = omega_range(pf, f_new, prec);
    let shift = Interval {
        lo: &(&g.lo + m_i) - &Scalar::one(),
        hi: &(&g.hi + m_i) - &Scalar::one(),
    };
    let prod = w.mul(&shift);
    Interval { lo: &Scalar::one() - &prod.hi, hi: &Scalar::one() - &prod.lo }
}

/// Compute and certify the contraction constants of the family maps over
/// the working intervals. Fails if the covered radius is too large for the
/// certificates to hold.
pub fn contraction_data(
    p: &SpinParams,
    family: &DenseFamily,
    prec: u32,
) -> Result<ContractionData> {
    let pf = p.to_float(prec);
    let xs = &family.x_star;
    let omega = &family.omega_star;
    let tau = &family.tau;
    let one = Scalar::one();
    let threshold = &(omega * &(&one - omega)) / &Scalar::from_int(100);
    if tau.partial_cmp(&threshold) != Some(Ordering::Less) {
        return Err(Error::Infeasible(
            "covered radius too large for contraction certificates; shrink tau1".into(),
        ));
    }
    let half = &(omega * tau) / &Scalar::from_int(2);
    let i = Interval::new(xs - &half, xs + &half)?;
    let spread = &(&(Scalar::from_int(2) * tau) * omega) / &(&one - omega);
    let i_prime = Interval::new(xs - &spread, xs + &spread)?;
    if !i_prime.contains_interval(&i) {
        return Err(Error::Internal("target interval escapes the enlarged interval".into()));
    }
    let mut c_max: Option<Scalar> = None;
    let mut c_min: Option<Scalar> = None;
    let mut max_abs_m: Option<Scalar> = None;
    for mem in &family.members {
        let hi_d = phi_derivative_abs(&pf, &mem.r, &i_prime.lo);
        let lo_d = phi_derivative_abs(&pf, &mem.r, &i_prime.hi);
        c_max = Some(match c_max {
            Some(c) => Scalar::max(c, hi_d),
            None => hi_d,
        });
        c_min = Some(match c_min {
            Some(c) => Scalar::min(c, lo_d),
            None => lo_d,
        });
        let am = mem.m.abs();
        max_abs_m = Some(match max_abs_m {
            Some(c) => Scalar::max(c, am),
            None => am,
        });
        let image = phi_of_interval(&pf, &mem.r, &i_prime);
        if !i_prime.contains_interval(&image) {
            return Err(Error::Infeasible(
                "family map image escapes the enlarged interval; shrink tau1".into(),
            ));
        }
    }
    let mut c_max = c_max.ok_or_else(|| Error::Internal("empty family".into()))?;
    let c_min = c_min.expect("set alongside c_max");
    let max_abs_m = max_abs_m.expect("set alongside c_max");
    let w_range = omega_range(&pf, &i_prime, prec);
    if w_range.hi > c_max {
        c_max = w_range.hi.clone();
    }
    if !(c_min.is_positive() && c_min <= c_max && c_max < one) {
        return Err(Error::Infeasible(format!(
            "contraction constants out of range: c_min={} c_max={}",
            c_min.to_f64(),
            c_max.to_f64()
        )));
    }
    let t_bound = &(&Scalar::from_int(2) + &max_abs_m) / &(&one - &c_max);
    let j = Interval::new(-t_bound.clone(), t_bound.clone())?;
    Ok(ContractionData { i, i_prime, j, c_min, c_max, t_bound, max_abs_m })
}

/// `phi_i^{-1}(x) = (1 - beta*x) / (lambda * r_i * (x - gamma))`, written
/// as `c(x) / r_i`.
pub(crate) fn preimage_scale(pf: &SpinParams, x: &Scalar) -> Scalar {
    let numer = &Scalar::one() - &(&pf.beta * x);
    let denom = &pf.lambda * &(x - &pf.gamma);
    &numer / &denom
}

/// Contiguous index range of family members whose map can reach `x` from
/// inside the target interval, i.e. `phi_i^{-1}(x)` lands in `I`.
fn admissible_index_range(
    family: &DenseFamily,
    cdata: &ContractionData,
    scale: &Scalar,
) -> (usize, usize) {
    let r_lo = scale / &cdata.i.hi;
    let r_hi = scale / &cdata.i.lo;
    let start = family.members.partition_point(|m| m.r < r_lo);
    let end = family.members.partition_point(|m| m.r <= r_hi);
    (start, end)
}

/// Build a gadget whose field approaches `x` with error contracting
/// geometrically in `t`. At each step the lowest-index admissible family
/// member is merged on, making the construction deterministic; the
/// returned choices are listed innermost application first.
pub fn build_gadget(
    p: &SpinParams,
    x: &Scalar,
    t: u32,
    family: &DenseFamily,
    cdata: &ContractionData,
    prec: u32,
) -> Result<(Rc<GadgetExpr>, MapChoiceSeq)> {
    let pf = p.to_float(prec);
    if !cdata.i.contains(x) {
        return Err(Error::Infeasible("target field outside the steering interval".into()));
    }
    let mut target = x.clone();
    let mut outer_first: Vec<usize> = Vec::with_capacity(t as usize);
    for _ in 0..t {
        let scale = preimage_scale(&pf, &target);
        let (start, end) = admissible_index_range(family, cdata, &scale);
        let mut chosen = None;
        for idx in start.saturating_sub(1)..(end + 1).min(family.members.len()) {
            let y = &scale / &family.members[idx].r;
            if cdata.i.contains(&y) {
                chosen = Some((idx, y));
                break;
            }
        }
        let (idx, y) = chosen.ok_or_else(|| {
            Error::Infeasible(format!(
                "no family member covers a preimage of {}; density failure",
                target.to_f64()
            ))
        })?;
        outer_first.push(idx);
        target = y;
    }
    let mut expr = degenerate();
    for &i in outer_first.iter().rev() {
        expr = merge(vec![expr, family.members[i].expr.clone()]);
    }
    outer_first.reverse();
    Ok((expr, outer_first))
}

/// Interval images of one builder choice sequence: the range of final
/// fields over starting fields in `I`, and the range of final gaps over
/// starting `(field, gap)` in `I' x J`.
#[derive(Clone, Debug)]
pub struct FamilyImage {
    pub choices: MapChoiceSeq,
    pub f_image: Interval,
    pub g_image: Interval,
}

fn propagate_images(
    pf: &SpinParams,
    family: &DenseFamily,
    cdata: &ContractionData,
    choices: &[usize],
    prec: u32,
) -> (Interval, Interval, Interval) {
    let mut f = cdata.i.clone();
    let mut fp = cdata.i_prime.clone();
    let mut g = cdata.j.clone();
    for &i in choices {
        let mem = &family.members[i];
        let fp_new = phi_of_interval(pf, &mem.r, &fp);
        g = psi_of_intervals(pf, &fp_new, &g, &mem.m, prec);
        f = phi_of_interval(pf, &mem.r, &f);
        fp = fp_new;
    }
    (f, fp, g)
}

/// Enumerate every admissible choice sequence of length `t` for target `x`
/// together with its exact interval images. The enumeration is the full
/// preimage tree, so `t` and the produced sequence count are capped.
pub fn family_images(
    p: &SpinParams,
    x: &Scalar,
    t: u32,
    family: &DenseFamily,
    cdata: &ContractionData,
    prec: u32,
    max_sequences: usize,
) -> Result<Vec<FamilyImage>> {
    if t > 8 {
        return Err(Error::Infeasible("enumeration depth capped at 8".into()));
    }
    let pf = p.to_float(prec);
    if !cdata.i.contains(x) {
        return Err(Error::Infeasible("target field outside the steering interval".into()));
    }
    // Backward pass: admissible sequences as preimage walks from x,
    // recorded outermost application first.
    let mut walks: Vec<(Vec<usize>, Scalar)> = vec![(Vec::new(), x.clone())];
    for _ in 0..t {
        let mut next = Vec::new();
        for (seq, y) in &walks {
            let scale = preimage_scale(&pf, y);
            let (start, end) = admissible_index_range(family, cdata, &scale);
            for idx in start.saturating_sub(1)..(end + 1).min(family.members.len()) {
                let pre = &scale / &family.members[idx].r;
                if !cdata.i.contains(&pre) {
                    continue;
                }
                let mut s = seq.clone();
                s.push(idx);
                next.push((s, pre));
                if next.len() > max_sequences {
                    return Err(Error::Infeasible(format!(
                        "sequence budget {max_sequences} exceeded at depth {}",
                        seq.len() + 1
                    )));
                }
            }
        }
        walks = next;
    }
    // Forward pass: interval propagation per sequence.
    let mut out = Vec::with_capacity(walks.len());
    for (mut seq, _) in walks {
        seq.reverse();
        let (f, _, g) = propagate_images(&pf, family, cdata, &seq, prec);
        out.push(FamilyImage { choices: seq, f_image: f, g_image: g });
    }
    Ok(out)
}

/// A detected pair of choice sequences whose field images overlap while
/// their gap images are disjoint.
#[derive(Clone, Debug)]
pub struct Case1Find {
    /// A common reachable field value.
    pub x: Scalar,
    pub seq1: MapChoiceSeq,
    pub seq2: MapChoiceSeq,
    /// Certified distance between the two gap images.
    pub m_hat: Scalar,
    pub f1: Interval,
    pub f2: Interval,
    pub g1: Interval,
    pub g2: Interval,
}

#[derive(Clone)]
struct SearchState {
    choices: Vec<usize>,
    f: Interval,
    fp: Interval,
    g: Interval,
}

/// Insert into a vector kept sorted under `better`, capped at `cap`.
fn keep_best<F: Fn(&SearchState, &SearchState) -> bool>(
    pool: &mut Vec<SearchState>,
    cand: &SearchState,
    cap: usize,
    better: F,
) {
    let pos = pool.partition_point(|s| better(s, cand));
    if pos < cap {
        pool.insert(pos, cand.clone());
        pool.truncate(cap);
    }
}

/// Breadth-first search for a pair of same-depth choice sequences with
/// overlapping field images and disjoint gap images. The frontier keeps
/// only extreme candidates by gap image on both ends, so a `None` result
/// means no detection at this budget, not a proof of absence. A detection
/// is re-verified by evaluating real gadgets inside the reported images.
pub fn detect_case1(
    p: &SpinParams,
    family: &DenseFamily,
    cdata: &ContractionData,
    t_max: u32,
    frontier_cap: usize,
    prec: u32,
) -> Result<Option<Case1Find>> {
    let pf = p.to_float(prec);
    let cap = frontier_cap.max(2);
    let keep = 64usize;
    let mut frontier = vec![SearchState {
        choices: Vec::new(),
        f: cdata.i.clone(),
        fp: cdata.i_prime.clone(),
        g: cdata.j.clone(),
    }];
    for _ in 1..=t_max {
        let mut low_by_ghi: Vec<SearchState> = Vec::new();
        let mut high_by_glo: Vec<SearchState> = Vec::new();
        for state in &frontier {
            for (idx, mem) in family.members.iter().enumerate() {
                let fp_new = phi_of_interval(&pf, &mem.r, &state.fp);
                let g_new = psi_of_intervals(&pf, &fp_new, &state.g, &mem.m, prec);
                let f_new = phi_of_interval(&pf, &mem.r, &state.f);
                let mut choices = state.choices.clone();
                choices.push(idx);
                let cand = SearchState { choices, f: f_new, fp: fp_new, g: g_new };
                keep_best(&mut low_by_ghi, &cand, keep, |a, b| a.g.hi < b.g.hi);
                keep_best(&mut high_by_glo, &cand, keep, |a, b| a.g.lo > b.g.lo);
            }
        }
        // Detection among the extremes.
        let mut best: Option<(Scalar, usize, usize, Interval)> = None;
        for (ai, a) in low_by_ghi.iter().enumerate() {
            for (bi, b) in high_by_glo.iter().enumerate() {
                if b.g.lo <= a.g.hi {
                    continue;
                }
                if let Some(overlap) = a.f.intersect(&b.f) {
                    let gap = &b.g.lo - &a.g.hi;
                    let better = match &best {
                        Some((g, _, _, _)) => &gap > g,
                        None => true,
                    };
                    if better {
                        best = Some((gap, ai, bi, overlap));
                    }
                }
            }
        }
        if let Some((gap, ai, bi, overlap)) = best {
            let a = &low_by_ghi[ai];
            let b = &high_by_glo[bi];
            let x = overlap.midpoint();
            verify_detection(p, family, cdata, &a.choices, &a.f, &a.g, prec)?;
            verify_detection(p, family, cdata, &b.choices, &b.f, &b.g, prec)?;
            return Ok(Some(Case1Find {
                x,
                seq1: a.choices.clone(),
                seq2: b.choices.clone(),
                m_hat: gap,
                f1: a.f.clone(),
                f2: b.f.clone(),
                g1: a.g.clone(),
                g2: b.g.clone(),
            }));
        }
        // Prune to the extreme candidates for the next depth.
        let mut next: Vec<SearchState> = Vec::new();
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        for s in low_by_ghi.into_iter().take(cap / 2).chain(high_by_glo.into_iter().take(cap / 2))
        {
            if seen.insert(s.choices.clone()) {
                next.push(s);
            }
        }
        frontier = next;
    }
    Ok(None)
}

/// Evaluate a real gadget driven through `choices` from a base built near
/// the fixpoint and check that its field and gap land inside the claimed
/// images.
fn verify_detection(
    p: &SpinParams,
    family: &DenseFamily,
    cdata: &ContractionData,
    choices: &[usize],
    f_img: &Interval,
    g_img: &Interval,
    prec: u32,
) -> Result<()> {
    let pf = p.to_float(prec);
    let (base, _) = build_gadget(p, &family.x_star, 48, family, cdata, prec)?;
    let base_eval = eval_gadget(&base, &pf)?;
    if !cdata.i.contains(&base_eval.r) || !cdata.j.contains(&base_eval.m) {
        return Err(Error::Internal("verification base gadget outside working intervals".into()));
    }
    let mut expr = base;
    for &i in choices {
        expr = merge(vec![expr, family.members[i].expr.clone()]);
    }
    let eval = eval_gadget(&expr, &pf)?;
    if !f_img.contains(&eval.r) || !g_img.contains(&eval.m) {
        return Err(Error::Internal(
            "interval propagation failed verification against a real gadget".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    const PREC: u32 = 256;

    fn r(n: i64, d: i64) -> Scalar {
        Scalar::from_ratio(n, d)
    }

    fn hc_family(delta_div: i64) -> (SpinParams, DenseFamily) {
        let p = SpinParams::hard_core(Scalar::one()).unwrap();
        let pf = p.to_float(PREC);
        let omega = ode_fixpoint(&pf, PREC).unwrap().omega_star;
        let delta = &omega / &Scalar::from_int(delta_div);
        let fam = dense_family(&p, &delta, &r(1, 1000), PREC).unwrap();
        (p, fam)
    }

    #[test]
    fn family_is_dense_and_in_range() {
        let (p, fam) = hc_family(200);
        fam.verify_density().unwrap();
        assert!(fam.tau.is_positive());
        let inv_beta = p.beta.recip();
        for mem in &fam.members {
            assert!(mem.r > p.gamma && mem.r < inv_beta);
        }
        // Sorted ascending.
        for w in fam.members.windows(2) {
            assert!(w[0].r <= w[1].r);
        }
        // Values in lockstep with a fresh evaluation on a sample.
        let pf = p.to_float(PREC);
        let step = fam.members.len() / 5 + 1;
        for mem in fam.members.iter().step_by(step) {
            let e = eval_gadget(&mem.expr, &pf).unwrap();
            assert!((&e.r - &mem.r).abs().to_f64() < 1e-65);
            assert!((&e.m - &mem.m).abs().to_f64() < 1e-60);
        }
    }

    #[test]
    fn removing_a_window_breaks_density() {
        let (_, fam) = hc_family(200);
        let mut broken = fam.clone();
        let mid = broken.members.len() / 2;
        // Remove every member within four coverage radii of the median
        // field; the hole must be detected.
        let center = broken.members[mid].r.clone();
        let hole = &(&broken.tau * &broken.delta) * &Scalar::from_int(4);
        broken.members.retain(|m| (&m.r - &center).abs() > hole);
        assert!(broken.verify_density().is_err());
    }

    #[test]
    fn rejects_coarse_density_request() {
        let p = SpinParams::hard_core(Scalar::one()).unwrap();
        // delta must be below omega*/100 and omega* < 1/2 always here.
        assert!(dense_family(&p, &r(1, 2), &r(1, 1000), PREC).is_err());
    }

    #[test]
    fn contraction_certificates_hold() {
        let (p, fam) = hc_family(200);
        let cd = contraction_data(&p, &fam, PREC).unwrap();
        assert!(cd.c_min.is_positive());
        assert!(cd.c_min <= cd.c_max);
        assert!(cd.c_max < Scalar::one());
        assert!(cd.i_prime.contains_interval(&cd.i));
        let expected_t =
            &(&Scalar::from_int(2) + &cd.max_abs_m) / &(&Scalar::one() - &cd.c_max);
        assert!((&cd.t_bound - &expected_t).abs().to_f64() < 1e-60);
        // Gap propagation stays inside J for random inputs.
        let pf = p.to_float(PREC);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let fr: f64 = rng.gen();
            let fm: f64 = rng.gen();
            let rr = &cd.i_prime.lo + &(&cd.i_prime.width() * &Scalar::from_f64(fr, PREC));
            let mm = &cd.j.lo + &(&cd.j.width() * &Scalar::from_f64(fm, PREC));
            let idx = rng.gen_range(0..fam.members.len());
            let mem = &fam.members[idx];
            let r_new = apply_phi(&pf, &mem.r, &rr);
            let w = omega_at_field(&pf, &r_new);
            let psi = &Scalar::one() - &(&w * &(&(&mm + &mem.m) - &Scalar::one()));
            assert!(cd.j.contains(&psi), "gap escaped J");
            assert!(cd.i_prime.contains(&r_new), "field escaped I'");
        }
    }

    #[test]
    fn builder_contracts_geometrically() {
        let (p, fam) = hc_family(200);
        let cd = contraction_data(&p, &fam, PREC).unwrap();
        let pf = p.to_float(PREC);
        let c_plus = &cd.c_max + &r(5, 100);
        let targets = [
            cd.i.midpoint(),
            &cd.i.lo + &(&cd.i.width() / &Scalar::from_int(4)),
            &cd.i.lo + &(&(&cd.i.width() * &Scalar::from_int(3)) / &Scalar::from_int(4)),
        ];
        for x in &targets {
            let mut prev_err: Option<Scalar> = None;
            for t in 1..=16u32 {
                let (expr, choices) = build_gadget(&p, x, t, &fam, &cd, PREC).unwrap();
                assert_eq!(choices.len(), t as usize);
                let e = eval_gadget(&expr, &pf).unwrap();
                let err = (&e.r - x).abs();
                if let Some(pe) = prev_err {
                    assert!(err <= &c_plus * &pe, "error not contracting at t={t}");
                }
                prev_err = Some(err);
            }
        }
        // t = 0 returns the degenerate gadget.
        let (expr, choices) = build_gadget(&p, &targets[0], 0, &fam, &cd, PREC).unwrap();
        assert!(choices.is_empty());
        assert_eq!(eval_gadget(&expr, &pf).unwrap().r, Scalar::one());
        // Determinism.
        let (_, c1) = build_gadget(&p, &targets[1], 9, &fam, &cd, PREC).unwrap();
        let (_, c2) = build_gadget(&p, &targets[1], 9, &fam, &cd, PREC).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn images_cover_reality_and_shrink() {
        let (p, fam) = hc_family(200);
        let cd = contraction_data(&p, &fam, PREC).unwrap();
        let pf = p.to_float(PREC);
        let x = fam.x_star.clone();
        let base = family_images(&p, &x, 0, &fam, &cd, PREC, 10).unwrap();
        assert_eq!(base.len(), 1);
        assert!(base[0].choices.is_empty());
        assert!((&base[0].f_image.lo - &cd.i.lo).abs().to_f64() < 1e-70);
        assert!((&base[0].g_image.hi - &cd.j.hi).abs().to_f64() < 1e-60);
        let depth1 = family_images(&p, &x, 1, &fam, &cd, PREC, 100_000).unwrap();
        assert!(depth1.len() > 5, "expected many admissible one-step sequences");
        let width_cap = &cd.c_max * &cd.i.width();
        for img in &depth1 {
            assert!(cd.j.contains_interval(&img.g_image), "gap image escaped J");
            assert!(cd.i_prime.contains_interval(&img.f_image));
            assert!(img.f_image.width() <= &width_cap * &r(10001, 10000));
        }
        // Reality check: drive a real gadget through a sampled sequence.
        let probe = &depth1[depth1.len() / 2];
        let (b, _) = build_gadget(&p, &x, 40, &fam, &cd, PREC).unwrap();
        let mut expr = b;
        for &i in &probe.choices {
            expr = merge(vec![expr, fam.members[i].expr.clone()]);
        }
        let e = eval_gadget(&expr, &pf).unwrap();
        assert!(probe.f_image.contains(&e.r));
        assert!(probe.g_image.contains(&e.m));
        // Budget enforcement.
        assert!(family_images(&p, &x, 1, &fam, &cd, PREC, 3).is_err());
        assert!(family_images(&p, &x, 9, &fam, &cd, PREC, 10).is_err());
    }

    #[test]
    fn case1_scan_is_sound_at_small_depth() {
        let (p, fam) = hc_family(200);
        let cd = contraction_data(&p, &fam, PREC).unwrap();
        // At this parameter point the gap images remain overlapping at
        // shallow depths; the scan must come back empty rather than
        // fabricate a separation.
        let found = detect_case1(&p, &fam, &cd, 2, 8, PREC).unwrap();
        assert!(found.is_none());
    }
}

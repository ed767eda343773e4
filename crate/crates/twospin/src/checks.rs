//! Named end-to-end checks shared by the `verify` subcommand and the
//! acceptance test suite.
//!
//! Every check is deterministic. Randomized sweeps derive their inputs from
//! the seed in [`CheckContext`], so two runs with the same context exercise
//! the same cases. A check body returns evidence lines on success and a
//! description of the first violated claim otherwise; [`CheckDef::run`]
//! folds both into a [`CheckOutcome`] together with the elapsed time.

use std::path::PathBuf;
use std::process::Command;
use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::construct::{
    bootstrap_pairs, bounding_pair, build_gadget, contraction_data, dense_family,
    find_crossing_lambda, find_pair, FindPairConfig,
};
use crate::error::{Error, Result as LibResult};
use crate::fixpoint::{
    hardcore_lambda_c, in_nonuniqueness, ode_fixpoint, omega_at_field, two_cycle_fixpoints,
    Verdict,
};
use crate::gadget::{
    classic_pair, degenerate, eval_gadget, eval_r_of_lambda, eval_size, materialize, merge,
    single_edge, triangle, GadgetExpr,
};
use crate::graph::Graph;
use crate::oracle::{
    decomposed_evaluate, eval_gadget_oracle, perturbation_gap, tree_eval_oracle, OracleLimits,
};
use crate::params::SpinParams;
use crate::reduction::{
    abc_functions, build_reduction, endpoint_form, maxcut_extract, measure_phase_gadget,
    path_weights, two_copy_composite, PhaseGadgetSpec,
};
use crate::scalar::Scalar;

/// Shared knobs for a check run.
#[derive(Clone, Debug)]
pub struct CheckContext {
    /// Working precision for the float phases of iterative checks.
    pub precision: u32,
    /// Seed for the randomized sweeps.
    pub seed: u64,
    /// Path to the command-line binary; only `cli-determinism` needs it.
    pub binary: Option<PathBuf>,
}

impl Default for CheckContext {
    fn default() -> Self {
        CheckContext { precision: 256, seed: 7, binary: None }
    }
}

/// Result of one named check.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Evidence lines, ending with the elapsed time.
    pub details: Vec<String>,
}

impl CheckOutcome {
    pub fn summary_line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("[{tag}] {}: {}", self.name, self.details.join("; "))
    }
}

type CheckResult = Result<Vec<String>, String>;

/// A named check with a one-line statement of what it asserts.
#[derive(Clone, Copy)]
pub struct CheckDef {
    pub name: &'static str,
    pub summary: &'static str,
    runner: fn(&CheckContext) -> CheckResult,
}

impl CheckDef {
    pub fn run(&self, ctx: &CheckContext) -> CheckOutcome {
        let start = Instant::now();
        let (passed, mut details) = match (self.runner)(ctx) {
            Ok(lines) => (true, lines),
            Err(msg) => (false, vec![msg]),
        };
        details.push(format!("elapsed {:.2}s", start.elapsed().as_secs_f64()));
        CheckOutcome { name: self.name.to_string(), passed, details }
    }
}

const REGISTRY: &[CheckDef] = &[
    CheckDef {
        name: "classic-pair",
        summary: "the classic matched pair has exact fields and gaps, confirmed by enumeration",
        runner: check_classic_pair,
    },
    CheckDef {
        name: "tree-sweep",
        summary: "random tree gadgets match the enumeration oracle exactly",
        runner: check_tree_sweep,
    },
    CheckDef {
        name: "field-range",
        summary: "random tree fields stay inside the open closure interval",
        runner: check_field_range,
    },
    CheckDef {
        name: "symmetric-point",
        summary: "unit-field curve pins tree fields at one; admissible triangles move off one",
        runner: check_symmetric_point,
    },
    CheckDef {
        name: "criticality",
        summary: "hard-core threshold at degree six, verdict flips, and two-cycle residuals",
        runner: check_criticality,
    },
    CheckDef {
        name: "bounding",
        summary: "the bounding iteration brackets the fixpoint with a shrinking ratio",
        runner: check_bounding,
    },
    CheckDef {
        name: "builder-contraction",
        summary: "the steered builder converges geometrically within the certified rate",
        runner: check_builder_contraction,
    },
    CheckDef {
        name: "pair-search",
        summary: "pair search returns distinct verified pairs whose sizes grow at most linearly in the log-tolerance",
        runner: check_pair_search,
    },
    CheckDef {
        name: "bootstrap",
        summary: "bootstrapping preserves exact field matches and gap separation",
        runner: check_bootstrap,
    },
    CheckDef {
        name: "crossing",
        summary: "the activity crossing search pins the equal-field activity",
        runner: check_crossing,
    },
    CheckDef {
        name: "interaction-constants",
        summary: "path interaction constants satisfy the determinant and log-derivative identities",
        runner: check_interaction_constants,
    },
    CheckDef {
        name: "reduction-structure",
        summary: "the composite reduction graph passes the structural validator",
        runner: check_reduction_structure,
    },
    CheckDef {
        name: "composite-cancellation",
        summary: "equal-field composites have identical copy statistics and invertible cut extraction",
        runner: check_composite_cancellation,
    },
    CheckDef {
        name: "perturbation",
        summary: "activity perturbations respect the marginal deviation bound",
        runner: check_perturbation,
    },
    CheckDef {
        name: "cli-determinism",
        summary: "command-line output is byte-identical across worker counts",
        runner: check_cli_determinism,
    },
];

pub fn registry() -> &'static [CheckDef] {
    REGISTRY
}

pub fn check_named(name: &str) -> Option<&'static CheckDef> {
    REGISTRY.iter().find(|d| d.name == name)
}

/// Run the named checks, or all of them when `names` is empty. Unknown
/// names are rejected before anything runs.
pub fn run_named(names: &[String], ctx: &CheckContext) -> LibResult<Vec<CheckOutcome>> {
    let selected: Vec<&CheckDef> = if names.is_empty() {
        REGISTRY.iter().collect()
    } else {
        let mut sel = Vec::with_capacity(names.len());
        for n in names {
            sel.push(
                check_named(n).ok_or_else(|| Error::Parse(format!("unknown check '{n}'")))?,
            );
        }
        sel
    };
    Ok(selected.into_iter().map(|d| d.run(ctx)).collect())
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: LibResult<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn hard_core_unit() -> SpinParams {
    SpinParams::hard_core(Scalar::one()).expect("hard core at unit activity is admissible")
}

/// Parameters where a single edge has effective field exactly 1.
fn unit_field_params() -> SpinParams {
    SpinParams::new(
        Scalar::from_ratio(1, 2),
        Scalar::from_ratio(1, 4),
        Scalar::from_ratio(2, 3),
    )
    .expect("admissible antiferromagnetic triple")
}

fn pow10(exp: i32) -> Scalar {
    Scalar::from_int(10).pow_i(exp)
}

fn random_antiferro_params(rng: &mut ChaCha8Rng) -> SpinParams {
    loop {
        let beta = Scalar::from_ratio(rng.gen_range(0..=6i64), rng.gen_range(1..=6i64));
        let gamma = Scalar::from_ratio(rng.gen_range(0..=6i64), rng.gen_range(1..=6i64));
        let lambda = Scalar::from_ratio(rng.gen_range(1..=9i64), rng.gen_range(1..=9i64));
        if let Ok(p) = SpinParams::new(beta, gamma, lambda) {
            return p;
        }
    }
}

/// A random merge-rooted tree expression with at most `max_vertices`
/// expanded vertices. The root is always a merge so the field lands inside
/// the closure interval for every admissible parameter triple; triangles
/// are left out because they are admissible only on one activity slice.
fn random_expr(rng: &mut ChaCha8Rng, max_vertices: u128) -> Rc<GadgetExpr> {
    loop {
        let expr = merge(random_children(rng, 1));
        if eval_size(&expr).map(|s| s <= max_vertices).unwrap_or(false) {
            return expr;
        }
    }
}

fn random_children(rng: &mut ChaCha8Rng, depth: u32) -> Vec<Rc<GadgetExpr>> {
    let arity = rng.gen_range(0..=3usize);
    (0..arity).map(|_| random_node(rng, depth)).collect()
}

fn random_node(rng: &mut ChaCha8Rng, depth: u32) -> Rc<GadgetExpr> {
    let top = if depth >= 3 { 1 } else { 2 };
    match rng.gen_range(0..=top) {
        0 => degenerate(),
        1 => single_edge(),
        _ => merge(random_children(rng, depth + 1)),
    }
}

fn sweep_inputs(ctx: &CheckContext) -> (Vec<Rc<GadgetExpr>>, Vec<SpinParams>) {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let exprs = (0..200).map(|_| random_expr(&mut rng, 14)).collect();
    let params = (0..10).map(|_| random_antiferro_params(&mut rng)).collect();
    (exprs, params)
}

fn complete_bipartite_minus(half: u32, deleted: &[(u32, u32)]) -> Result<Graph, String> {
    let mut edges = Vec::new();
    for u in 0..half {
        for v in half..2 * half {
            if !deleted.contains(&(u, v)) {
                edges.push((u, v));
            }
        }
    }
    lib(Graph::with_edges(2 * half as usize, &edges))
}

fn measured_spec(
    graph: Graph,
    wp: Vec<u32>,
    wm: Vec<u32>,
    delta: u32,
    p: &SpinParams,
    limits: &OracleLimits,
) -> Result<(PhaseGadgetSpec, Scalar), String> {
    let ports = (wp, wm);
    let (q_plus, q_minus, eps) = lib(measure_phase_gadget(&graph, &ports, p, limits))?;
    let spec = PhaseGadgetSpec {
        graph,
        ports,
        delta,
        q_plus,
        q_minus,
        epsilon_measured: Some(eps.clone()),
    };
    lib(spec.validate())?;
    Ok((spec, eps))
}

fn affine_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    ((sy - slope * sx) / n, slope)
}

// ---------------------------------------------------------------------------
// Check bodies
// ---------------------------------------------------------------------------

fn check_classic_pair(_ctx: &CheckContext) -> CheckResult {
    let start = Instant::now();
    let p = hard_core_unit();
    let limits = OracleLimits::default();
    let (t1, t2) = classic_pair();
    let e1 = lib(eval_gadget(&t1, &p))?;
    let e2 = lib(eval_gadget(&t2, &p))?;
    let two_thirds = Scalar::from_ratio(2, 3);
    ensure(e1.r == two_thirds && e2.r == two_thirds, || {
        format!("fields {} and {} are not both 2/3", e1.r.to_text(), e2.r.to_text())
    })?;
    ensure(e1.m == Scalar::from_ratio(5, 6), || {
        format!("small-tree gap {} is not 5/6", e1.m.to_text())
    })?;
    ensure(e2.m == Scalar::from_ratio(3, 4), || {
        format!("large-tree gap {} is not 3/4", e2.m.to_text())
    })?;
    for (label, expr, eval) in [("small", &t1, &e1), ("large", &t2, &e2)] {
        let o = lib(eval_gadget_oracle(expr, &p, &limits))?;
        ensure(o.r == eval.r && o.m == eval.m && o.a_prime == eval.a_prime, || {
            format!("{label} tree disagrees with the enumeration oracle")
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs:.3}s, the budget is 1s"))?;
    Ok(vec![
        "fields 2/3 = 2/3 with gaps 5/6 vs 3/4, oracle-confirmed".to_string(),
        format!("evaluated in {secs:.3}s"),
    ])
}

fn check_tree_sweep(ctx: &CheckContext) -> CheckResult {
    let start = Instant::now();
    let (exprs, params) = sweep_inputs(ctx);
    let limits = OracleLimits::default();
    let probe = hard_core_unit();
    let mut graphs = Vec::with_capacity(exprs.len());
    for e in &exprs {
        graphs.push(lib(materialize(e, &probe, 14))?);
    }
    let mut expected = Vec::with_capacity(exprs.len() * params.len());
    for e in &exprs {
        for p in &params {
            expected.push(lib(eval_gadget(e, p))?);
        }
    }
    let cases: Vec<(usize, usize)> = (0..graphs.len())
        .flat_map(|gi| (0..params.len()).map(move |pi| (gi, pi)))
        .collect();
    let oracle: Vec<LibResult<_>> = cases
        .par_iter()
        .map(|&(gi, pi)| tree_eval_oracle(&graphs[gi].0, graphs[gi].1, &params[pi], &limits))
        .collect();
    for (k, res) in oracle.iter().enumerate() {
        let o = match res {
            Ok(o) => o,
            Err(e) => return Err(format!("oracle failed on case {k}: {e}")),
        };
        let want = &expected[k];
        if !(o.r == want.r && o.m == want.m && o.a_prime == want.a_prime) {
            return Err(format!(
                "case {k} disagrees: tree values ({}, {}) vs oracle ({}, {})",
                want.r.to_text(),
                want.m.to_text(),
                o.r.to_text(),
                o.m.to_text()
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s, the budget is 60s"))?;
    Ok(vec![
        format!(
            "{} gadgets x {} parameter triples agreed exactly on field, gap, and occupancy",
            exprs.len(),
            params.len()
        ),
        format!("swept in {secs:.1}s"),
    ])
}

fn check_field_range(ctx: &CheckContext) -> CheckResult {
    let (exprs, params) = sweep_inputs(ctx);
    let mut checked = 0usize;
    for e in &exprs {
        for p in &params {
            let eval = lib(eval_gadget(e, p))?;
            let r = &eval.r;
            ensure(r > &p.gamma, || {
                format!("field {} is not above gamma {}", r.to_text(), p.gamma.to_text())
            })?;
            if p.beta.is_positive() {
                ensure((r * &p.beta) < Scalar::one(), || {
                    format!("field {} is not below 1/beta", r.to_text())
                })?;
            }
            let w = omega_at_field(p, r);
            ensure(w.is_positive() && w < Scalar::one(), || {
                format!("contraction ratio {} is outside (0,1)", w.to_text())
            })?;
            checked += 1;
        }
    }
    Ok(vec![format!(
        "{checked} evaluations stayed inside the open closure interval, zero violations"
    )])
}

fn check_symmetric_point(ctx: &CheckContext) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x5144);
    let limits = OracleLimits::default();

    // Wherever lambda = (1-beta)/(1-gamma), every pure tree carries field
    // exactly 1, so no tree can steer the field anywhere. The symmetric
    // model at unit activity sits on this curve and adds spin-flip
    // symmetry: half occupancy overall and per vertex. The gap is pinned
    // by the enumeration semantics instead of vanishing; 1 - omega(1) for
    // a single edge, for instance.
    let mut tree_cases = 0usize;
    let mut curve_points = vec![(
        Scalar::from_ratio(1, 2),
        Scalar::from_ratio(1, 4),
        Scalar::from_ratio(2, 3),
        false,
    )];
    for (num, den) in [(1i64, 2i64), (1, 3), (3, 4), (2, 5)] {
        let b = Scalar::from_ratio(num, den);
        curve_points.push((b.clone(), b, Scalar::one(), true));
    }
    for (beta, gamma, lambda, symmetric) in curve_points {
        let p = lib(SpinParams::new(beta, gamma, lambda))?;
        for _ in 0..10 {
            let e = random_expr(&mut rng, 14);
            let eval = lib(eval_gadget(&e, &p))?;
            ensure(eval.r == Scalar::one(), || {
                format!("pure-tree field {} is not 1 on the unit-field curve", eval.r.to_text())
            })?;
            let o = lib(eval_gadget_oracle(&e, &p, &limits))?;
            ensure(o.r == eval.r && o.m == eval.m, || {
                "tree disagrees with the enumeration oracle on the unit-field curve".to_string()
            })?;
            if symmetric {
                let (g, root) = lib(materialize(&e, &p, 14))?;
                let summary = lib(crate::oracle::gibbs_summary(&g, &p, &[], &[root], &limits))?;
                let occ = lib(summary.expected_occupancy())?;
                ensure(occ == Scalar::from_ratio(g.n as i64, 2), || {
                    format!("occupancy {} is not n/2 under spin-flip symmetry", occ.to_text())
                })?;
                let root_marginal = lib(summary.marginal(0))?;
                ensure(root_marginal == Scalar::from_ratio(1, 2), || {
                    format!("root marginal {} is not 1/2", root_marginal.to_text())
                })?;
            }
            tree_cases += 1;
        }
    }
    let mut triangle_cases = 0usize;
    for (bn, bd, gn, gd) in [(1i64, 2i64, 1i64, 4i64), (1, 3, 2, 3), (3, 4, 1, 2)] {
        let beta = Scalar::from_ratio(bn, bd);
        let gamma = Scalar::from_ratio(gn, gd);
        let lambda = SpinParams::triangle_lambda(&beta, &gamma)
            .ok_or_else(|| format!("no admissible triangle activity at {bn}/{bd}, {gn}/{gd}"))?;
        let p = lib(SpinParams::new(beta.clone(), gamma.clone(), lambda))?;
        let e = lib(eval_gadget(&triangle(), &p))?;
        ensure(e.r != Scalar::one(), || "triangle field stayed at 1".to_string())?;
        ensure(e.r > gamma && (&e.r * &beta) < Scalar::one(), || {
            format!("triangle field {} left the closure interval", e.r.to_text())
        })?;
        let o = lib(eval_gadget_oracle(&triangle(), &p, &limits))?;
        ensure(o.r == e.r && o.m == e.m && o.a_prime == e.a_prime, || {
            "triangle disagrees with the enumeration oracle".to_string()
        })?;
        triangle_cases += 1;
    }
    Ok(vec![
        format!("{tree_cases} pure trees pinned at field 1 on the unit-field curve, oracle-confirmed gaps"),
        format!("{triangle_cases} asymmetric triangles moved the field off 1, oracle-confirmed"),
    ])
}

fn check_criticality(ctx: &CheckContext) -> CheckResult {
    let prec = ctx.precision;
    let lc = lib(hardcore_lambda_c(6))?;
    ensure(lc == Scalar::from_ratio(3125, 4096), || {
        format!("degree-6 hard-core threshold is {}", lc.to_text())
    })?;
    let eps = pow10(-6);
    let below = lib(in_nonuniqueness(&lib(SpinParams::hard_core(&lc - &eps))?, 6, prec))?;
    ensure(below.verdict == Verdict::Unique, || {
        "verdict below the threshold should be unique".to_string()
    })?;
    let above_lambda = &lc + &eps;
    let above =
        lib(in_nonuniqueness(&lib(SpinParams::hard_core(above_lambda.clone()))?, 6, prec))?;
    ensure(above.verdict == Verdict::NonUnique, || {
        "verdict above the threshold should be non-unique".to_string()
    })?;
    let unit = hard_core_unit();
    let deg5 = lib(in_nonuniqueness(&unit, 5, prec))?;
    ensure(deg5.verdict == Verdict::Unique, || {
        "unit activity at degree 5 should be unique".to_string()
    })?;
    let deg6 = lib(in_nonuniqueness(&unit, 6, prec))?;
    ensure(deg6.verdict == Verdict::NonUnique, || {
        "unit activity at degree 6 should be non-unique".to_string()
    })?;

    // Recheck the two-cycle residuals against the iteration map itself.
    let threshold = Scalar::from_int(2).pow_i(-128);
    let mut worst = Scalar::zero();
    for lam in [Scalar::one(), above_lambda] {
        let p = lib(SpinParams::hard_core(lam))?;
        let tc = lib(two_cycle_fixpoints(&p, 6, prec))?;
        ensure(
            tc.q_minus.is_positive() && tc.q_minus <= tc.q_plus && tc.q_plus < Scalar::one(),
            || "phase occupation probabilities left (0,1)".to_string(),
        )?;
        let pf = p.to_float(prec);
        let rx = (&tree_step(&pf, &tc.x, 6) - &tc.y).abs();
        let ry = (&tree_step(&pf, &tc.y, 6) - &tc.x).abs();
        worst = worst.max(rx.max(ry));
    }
    ensure(worst <= threshold, || {
        format!("two-cycle residual {} exceeds 2^-128", worst.to_text())
    })?;
    Ok(vec![
        "lambda_c(6) = 3125/4096; verdicts flip across it and from degree 5 to 6".to_string(),
        format!("worst two-cycle residual {:.2e}", worst.to_f64()),
    ])
}

/// One level of the degree-regular tree recursion at fixed parameters.
fn tree_step(pf: &SpinParams, x: &Scalar, delta: u32) -> Scalar {
    let num = &(&pf.gamma * x) + &Scalar::one();
    let den = &pf.beta + x;
    &pf.lambda * &(&num / &den).pow_i(delta as i32 - 1)
}

fn check_bounding(_ctx: &CheckContext) -> CheckResult {
    let p = hard_core_unit();
    let eps1 = pow10(-10);
    let eps2 = Scalar::from_ratio(1, 2);
    let bp = lib(bounding_pair(&p, &eps1, &eps2, 256))?;
    ensure(bp.steps.len() <= 200, || {
        format!("{} steps, the budget is 200", bp.steps.len())
    })?;
    let mut prev: Option<Scalar> = None;
    for (i, s) in bp.steps.iter().enumerate() {
        ensure(s.r_lower.is_positive(), || format!("step {i} lower field is not positive"))?;
        ensure(s.r_lower <= bp.x_star && bp.x_star <= s.r_upper, || {
            format!("step {i} bracket misses the fixpoint")
        })?;
        let ratio = &s.r_upper / &s.r_lower;
        if let Some(prev_ratio) = &prev {
            ensure(&ratio < prev_ratio, || {
                format!("upper/lower ratio failed to shrink at step {i}")
            })?;
        }
        prev = Some(ratio);
    }
    let last = prev.ok_or_else(|| "the bounding trace is empty".to_string())?;
    let cap = &Scalar::one() + &pow10(-9);
    ensure(last <= cap, || {
        format!("final ratio exceeds 1 + 1e-9 by {:.2e}", (&last - &cap).to_f64())
    })?;
    Ok(vec![format!(
        "{} steps bracketed the fixpoint; final upper/lower ratio is 1 + {:.2e}",
        bp.steps.len(),
        (&last - &Scalar::one()).to_f64()
    )])
}

fn check_builder_contraction(ctx: &CheckContext) -> CheckResult {
    let prec = ctx.precision;
    let p = hard_core_unit();
    let pf = p.to_float(prec);
    let fx = lib(ode_fixpoint(&pf, prec))?;
    let delta = &fx.omega_star / &Scalar::from_int(200);
    let tau1 = Scalar::from_ratio(1, 10_000);
    let family = lib(dense_family(&p, &delta, &tau1, prec))?;
    let cdata = lib(contraction_data(&p, &family, prec))?;
    let rate_cap = cdata.c_max.to_f64() + 0.05;
    let width = &cdata.i.hi - &cdata.i.lo;
    let n_targets = 20i64;
    let mut worst_rate = 0.0f64;
    for j in 0..n_targets {
        let frac = Scalar::from_ratio(j + 1, n_targets + 1);
        let x = &cdata.i.lo + &(&width * &frac);
        let mut errs = Vec::with_capacity(30);
        for t in 1..=30u32 {
            let (expr, _) = lib(build_gadget(&p, &x, t, &family, &cdata, prec))?;
            let eval = lib(eval_gadget(&expr, &pf))?;
            errs.push((&eval.r - &x).abs().to_f64());
        }
        ensure(errs[29] < errs[0], || {
            format!("target {j} error failed to decrease over 30 steps")
        })?;
        if errs[0] <= 0.0 || errs[29] <= 0.0 {
            continue;
        }
        let rate = (errs[29] / errs[0]).powf(1.0 / 29.0);
        ensure(rate <= rate_cap, || {
            format!("target {j} contracted at {rate:.4}, the cap is {rate_cap:.4}")
        })?;
        worst_rate = worst_rate.max(rate);
    }
    Ok(vec![
        format!(
            "{n_targets} targets converged geometrically, worst per-step rate {worst_rate:.4} within {rate_cap:.4}"
        ),
        format!(
            "certified rate interval [{:.4}, {:.4}] over {} family members",
            cdata.c_min.to_f64(),
            cdata.c_max.to_f64(),
            family.members.len()
        ),
    ])
}

fn check_pair_search(_ctx: &CheckContext) -> CheckResult {
    let start = Instant::now();
    let p = hard_core_unit();
    let cfg = FindPairConfig::default();
    let tol = pow10(-4);
    let pairs = lib(find_pair(&p, &tol, 3, &cfg))?;
    ensure(pairs.len() == 3, || format!("expected 3 pairs, got {}", pairs.len()))?;
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            ensure(pairs[i].r_hat != pairs[j].r_hat, || {
                format!("pairs {i} and {j} share the common field")
            })?;
        }
    }
    let two_tol = &Scalar::from_int(2) * &tol;
    for (idx, pair) in pairs.iter().enumerate() {
        let e1 = lib(eval_gadget(&pair.expr1, &p))?;
        let e2 = lib(eval_gadget(&pair.expr2, &p))?;
        ensure((&e1.r - &e2.r).abs() <= two_tol, || {
            format!("pair {idx} fields drift apart beyond twice the tolerance")
        })?;
        ensure(pair.m_hat.is_positive(), || format!("pair {idx} gap floor is not positive"))?;
        ensure((&e1.m - &e2.m).abs() >= pair.m_hat, || {
            format!("pair {idx} gap difference falls below its certified floor")
        })?;
    }

    // Sizes across three tolerance scales stay affine in |log r|.
    let mut sizes = Vec::new();
    let mut logs = Vec::new();
    for exp in [2i32, 4, 6] {
        let r = pow10(-exp);
        let got = lib(find_pair(&p, &r, 1, &cfg))?;
        let first = got.first().ok_or_else(|| "empty pair list".to_string())?;
        let s = lib(eval_size(&first.expr1))? + lib(eval_size(&first.expr2))?;
        sizes.push(s as f64);
        logs.push(f64::from(exp) * std::f64::consts::LN_10);
    }
    let (intercept, slope) = affine_fit(&logs, &sizes);
    let mut worst_rel = 0.0f64;
    for (l, s) in logs.iter().zip(&sizes) {
        let fit = intercept + slope * l;
        worst_rel = worst_rel.max((fit - s).abs() / s.max(1.0));
    }
    ensure(worst_rel < 0.2, || {
        format!("size fit residual {worst_rel:.3} is not below 0.2")
    })?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 600.0, || format!("took {secs:.0}s, the budget is 600s"))?;
    Ok(vec![
        "3 verified pairs with pairwise-distinct fields and positive gap floors".to_string(),
        format!(
            "total sizes {sizes:?} against log-tolerance fit slope {slope:.3}, residual {worst_rel:.3}"
        ),
        format!("searched in {secs:.1}s"),
    ])
}

fn check_bootstrap(_ctx: &CheckContext) -> CheckResult {
    let p = hard_core_unit();
    let cfg = FindPairConfig::default();
    let base = lib(find_pair(&p, &pow10(-4), 1, &cfg))?
        .into_iter()
        .next()
        .ok_or_else(|| "pair search returned nothing".to_string())?;
    let boots = lib(bootstrap_pairs(&base, &p, 5, 256))?;
    ensure(boots.len() == 5, || format!("expected 5 bootstrap stages, got {}", boots.len()))?;
    let mut sequence = vec![base];
    sequence.extend(boots);
    let mut fields = Vec::with_capacity(sequence.len());
    for (j, pair) in sequence.iter().enumerate() {
        let e1 = lib(eval_gadget(&pair.expr1, &p))?;
        let e2 = lib(eval_gadget(&pair.expr2, &p))?;
        ensure(e1.r == e2.r, || format!("stage {j} fields differ"))?;
        ensure(e1.m != e2.m, || format!("stage {j} gaps coincide"))?;
        fields.push(e1.r);
    }
    for i in 0..fields.len() {
        for j in i + 1..fields.len() {
            ensure(fields[i] != fields[j], || {
                format!("stages {i} and {j} share the field {}", fields[i].to_text())
            })?;
        }
    }
    Ok(vec![format!(
        "{} stages kept exact field matches, separated gaps, and pairwise-distinct fields",
        fields.len()
    )])
}

fn check_crossing(ctx: &CheckContext) -> CheckResult {
    let prec = ctx.precision;
    let (t1, t2) = classic_pair();
    let one = Scalar::one();
    let zero = Scalar::zero();
    let window = Scalar::from_ratio(1, 4);
    let cr = lib(find_crossing_lambda(&t1, &t2, &one, &zero, &one, &window, prec))?;
    ensure(cr.residual <= pow10(-20), || {
        format!("field residual {:.2e} exceeds 1e-20", cr.residual.to_f64())
    })?;
    let (blo, bhi) = &cr.bracket;
    ensure(blo <= &cr.lambda_hat && &cr.lambda_hat <= bhi, || {
        "the crossing activity left its bracket".to_string()
    })?;

    let h = pow10(-10);
    let mut worst_rel = 0.0f64;
    for (expr, want) in [(&t1, &cr.dr1), (&t2, &cr.dr2)] {
        ensure(!want.is_zero(), || "reported field derivative is zero".to_string())?;
        let lo = lib(SpinParams::hard_core(&cr.lambda_hat - &h))?;
        let hi = lib(SpinParams::hard_core(&cr.lambda_hat + &h))?;
        let (r_lo, _) = lib(eval_r_of_lambda(expr, &lo))?;
        let (r_hi, _) = lib(eval_r_of_lambda(expr, &hi))?;
        let fd = &(&r_hi - &r_lo) / &(&Scalar::from_int(2) * &h);
        let rel = (&(&fd - want) / want).abs().to_f64();
        ensure(rel <= 1e-6, || format!("field derivative off by {rel:.2e} relative"))?;
        worst_rel = worst_rel.max(rel);
    }
    Ok(vec![
        format!(
            "crossing activity {:.12} with field residual {:.2e}",
            cr.lambda_hat.to_f64(),
            cr.residual.to_f64()
        ),
        format!("derivatives match central differences within {worst_rel:.2e} relative"),
    ])
}

fn check_interaction_constants(ctx: &CheckContext) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0xabc);
    for case in 0..100 {
        let p = random_antiferro_params(&mut rng);
        let x = Scalar::from_ratio(rng.gen_range(1..=24i64), rng.gen_range(1..=8i64));
        let (qp, qm) = random_distinct_marginals(&mut rng);
        let (l, _) = path_weights(&p, &x);
        let f_pm = endpoint_form(&qp, &qm, &l);
        let f_mp = endpoint_form(&qm, &qp, &l);
        let f_pp = endpoint_form(&qp, &qp, &l);
        let f_mm = endpoint_form(&qm, &qm, &l);
        let lhs = &(&f_pm * &f_mp) - &(&f_pp * &f_mm);
        let gap = &qp - &qm;
        let rhs = &(&p.one_minus_bg().pow_i(3) * &x.pow_i(2)) * &gap.pow_i(2);
        ensure(lhs == rhs, || format!("determinant identity failed at case {case}"))?;
    }

    // At zero interior field the cross/like ratio collapses to 1 exactly.
    let mut zero_cases = 0usize;
    while zero_cases < 5 {
        let p = random_antiferro_params(&mut rng);
        if !p.beta.is_positive() {
            continue;
        }
        let (qp, qm) = random_distinct_marginals(&mut rng);
        let (a, _, _, _) = lib(abc_functions(&p, &qp, &qm, &Scalar::zero()))?;
        ensure(a == Scalar::one(), || {
            format!("ratio at zero field is {} instead of 1", a.to_text())
        })?;
        zero_cases += 1;
    }

    // The reported slope equals the log-derivative of the ratio.
    let p = unit_field_params();
    let qp = Scalar::from_ratio(2, 3);
    let qm = Scalar::from_ratio(1, 5);
    let r0 = Scalar::from_ratio(3, 4);
    let h = pow10(-6);
    let (_, _, _, d) = lib(abc_functions(&p, &qp, &qm, &r0))?;
    let (a_hi, _, _, _) = lib(abc_functions(&p, &qp, &qm, &(&r0 + &h)))?;
    let (a_lo, _, _, _) = lib(abc_functions(&p, &qp, &qm, &(&r0 - &h)))?;
    let fd = &(&a_hi.ln_big(256) - &a_lo.ln_big(256)) / &(&Scalar::from_int(2) * &h);
    let rel = (&(&fd - &d) / &d).abs().to_f64();
    ensure(rel <= 1e-8, || format!("slope differs from the log-derivative by {rel:.2e}"))?;
    Ok(vec![
        "determinant identity exact at 100 random rational points; unit ratio at zero field"
            .to_string(),
        format!("slope matches the central-difference log-derivative within {rel:.2e}"),
    ])
}

fn random_distinct_marginals(rng: &mut ChaCha8Rng) -> (Scalar, Scalar) {
    loop {
        let a = Scalar::from_ratio(rng.gen_range(1..=19i64), 20);
        let b = Scalar::from_ratio(rng.gen_range(1..=19i64), 20);
        if a != b {
            return if a > b { (a, b) } else { (b, a) };
        }
    }
}

fn check_reduction_structure(_ctx: &CheckContext) -> CheckResult {
    let p = unit_field_params();
    let limits = OracleLimits::default();
    let graph = complete_bipartite_minus(4, &[(0, 4), (1, 5), (2, 6)])?;
    let (gadget, _) = measured_spec(graph, vec![0, 1, 2], vec![4, 5, 6], 4, &p, &limits)?;
    let h = lib(Graph::with_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]))?;
    let tree = merge(vec![single_edge()]);
    let rg = lib(build_reduction(&h, &gadget, &tree, 1, &p))?;
    ensure(rg.graph.n == 104, || {
        format!("vertex count {} instead of 8*4 + 4*6*3 = 104", rg.graph.n)
    })?;
    lib(rg.validate_structure())?;
    let max_deg = rg.graph.degrees().into_iter().max().unwrap_or(0);
    ensure(max_deg <= 4, || format!("maximum degree {max_deg} exceeds the gadget degree"))?;
    let composed = lib(rg.to_composed())?;
    ensure(composed.copies.len() == 4 && composed.paths.len() == 12, || {
        format!(
            "{} copies and {} paths instead of 4 and 12",
            composed.copies.len(),
            composed.paths.len()
        )
    })?;
    Ok(vec![
        "4 phase copies and 12 three-edge paths over 104 vertices".to_string(),
        "validator passed: exact degrees, every port used once, all path edges present"
            .to_string(),
    ])
}

fn check_composite_cancellation(_ctx: &CheckContext) -> CheckResult {
    let p = unit_field_params();
    let limits = OracleLimits::default();
    let graph = complete_bipartite_minus(4, &[(0, 4)])?;
    let (gadget, eps) = measured_spec(graph, vec![0], vec![4], 4, &p, &limits)?;
    ensure(gadget.q_plus > gadget.q_minus, || {
        "phases fail to separate the port marginals".to_string()
    })?;

    let t1 = single_edge();
    let t2 = merge(vec![single_edge()]);
    let e1 = lib(eval_gadget(&t1, &p))?;
    let e2 = lib(eval_gadget(&t2, &p))?;
    ensure(e1.r == Scalar::one() && e2.r == Scalar::one(), || {
        "both trees must carry unit effective field here".to_string()
    })?;
    ensure(e1.m != e2.m, || "the trees must differ in their gaps".to_string())?;

    let rep1 =
        lib(decomposed_evaluate(&lib(two_copy_composite(&gadget, &t1, 1, &p))?, &p, &limits))?;
    let rep2 =
        lib(decomposed_evaluate(&lib(two_copy_composite(&gadget, &t2, 1, &p))?, &p, &limits))?;
    ensure(rep1.copy_marginals == rep2.copy_marginals, || {
        "equal-field composites disagree on copy marginals".to_string()
    })?;
    let cut1 = rep1.phase_stats.avg_cut(&[(0, 1)]);
    let cut2 = rep2.phase_stats.avg_cut(&[(0, 1)]);
    ensure(cut1 == cut2, || "equal-field composites disagree on the average cut".to_string())?;

    let d_hat = &rep1.occupancy - &rep2.occupancy;
    let (_, _, c, d) = lib(abc_functions(&p, &gadget.q_plus, &gadget.q_minus, &e1.r))?;
    let extracted =
        lib(maxcut_extract(&d_hat, &e1.m, &e2.m, &e1.a_prime, &e2.a_prime, &c, &d, 1, 1))?;
    let radius = &(&Scalar::from_int(8) * &eps) * &(&cut1 + &(&c / &d)).abs();
    let err = (&extracted - &cut1).abs();
    ensure(err <= radius, || {
        format!(
            "extraction missed the oracle cut by {:.3e}, envelope radius {:.3e}",
            err.to_f64(),
            radius.to_f64()
        )
    })?;
    Ok(vec![
        "copy marginals and cut statistics coincide exactly across the equal-field composites"
            .to_string(),
        format!(
            "extracted average cut within {:.3e} of the oracle value, envelope radius {:.3e}",
            err.to_f64(),
            radius.to_f64()
        ),
    ])
}

fn check_perturbation(ctx: &CheckContext) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x9e37);
    let limits = OracleLimits::default();
    struct Case {
        graph: Graph,
        params: SpinParams,
        perturbed: Vec<u32>,
        lambda1: Scalar,
        lambda2: Scalar,
        probe: u32,
    }
    let mut cases = Vec::with_capacity(200);
    for _ in 0..200 {
        let n = rng.gen_range(4..=10usize);
        let mut edges = Vec::new();
        for u in 0..n as u32 {
            for v in u + 1..n as u32 {
                if rng.gen_bool(0.4) {
                    edges.push((u, v));
                }
            }
        }
        let graph = lib(Graph::with_edges(n, &edges))?;
        let params = random_antiferro_params(&mut rng);
        let mut perturbed: Vec<u32> = (0..n as u32).filter(|_| rng.gen_bool(0.35)).collect();
        if perturbed.is_empty() {
            perturbed.push(rng.gen_range(0..n as u32));
        }
        let lambda1 = Scalar::from_ratio(rng.gen_range(1..=8i64), rng.gen_range(1..=8i64));
        let lambda2 = &lambda1 * &Scalar::from_ratio(rng.gen_range(9..=11i64), 10);
        let probe = rng.gen_range(0..n as u32);
        cases.push(Case { graph, params, perturbed, lambda1, lambda2, probe });
    }
    let results: Vec<LibResult<(Scalar, Scalar)>> = cases
        .par_iter()
        .map(|c| {
            perturbation_gap(
                &c.graph,
                &c.params,
                &c.perturbed,
                &c.lambda1,
                &c.lambda2,
                c.probe,
                &limits,
            )
        })
        .collect();
    let mut tightest = f64::INFINITY;
    for (i, res) in results.iter().enumerate() {
        let (measured, bound) = match res {
            Ok(pair) => pair,
            Err(e) => return Err(format!("case {i} failed: {e}")),
        };
        ensure(measured <= bound, || {
            format!(
                "case {i} measured shift {:.3e} exceeds the bound {:.3e}",
                measured.to_f64(),
                bound.to_f64()
            )
        })?;
        if bound.is_positive() {
            tightest = tightest.min((bound - measured).to_f64() / bound.to_f64());
        }
    }
    Ok(vec![
        "200 random perturbed instances stayed within twice the set size times the ratio shift"
            .to_string(),
        format!("smallest relative slack {tightest:.3}"),
    ])
}

fn check_cli_determinism(ctx: &CheckContext) -> CheckResult {
    let bin = ctx
        .binary
        .clone()
        .ok_or_else(|| "no binary path configured for the determinism check".to_string())?;
    if !bin.exists() {
        return Err(format!("binary {} does not exist", bin.display()));
    }

    // An 18-vertex instance forces the multi-block enumeration path.
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0xc11);
    let n = 18usize;
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in u + 1..n as u32 {
            if rng.gen_bool(0.25) {
                edges.push((u, v));
            }
        }
    }
    let graph = lib(Graph::with_edges(n, &edges))?;
    let tmp = std::env::temp_dir().join(format!("twospin-determinism-{}.json", std::process::id()));
    std::fs::write(&tmp, graph.to_json()).map_err(|e| e.to_string())?;
    let tmp_text = tmp.display().to_string();

    let workloads: Vec<Vec<&str>> = vec![
        vec!["critical", "--delta", "6"],
        vec![
            "fixpoint", "--beta", "1", "--gamma", "0", "--lambda", "1", "--delta", "6",
            "--precision", "192",
        ],
        vec![
            "find-pair", "--beta", "1", "--gamma", "0", "--lambda", "1", "--tolerance",
            "1/10000", "--count", "2",
        ],
        vec![
            "oracle", "--graph", &tmp_text, "--op", "summary", "--beta", "1", "--gamma", "0",
            "--lambda", "1",
        ],
    ];
    let run_all = || -> Result<usize, String> {
        let mut compared = 0usize;
        for w in &workloads {
            let out1 = run_cli(&bin, w, "1")?;
            let out8 = run_cli(&bin, w, "8")?;
            ensure(!out1.is_empty(), || format!("{} produced no output", w[0]))?;
            ensure(out1 == out8, || {
                format!("{} differs between --jobs 1 and --jobs 8", w[0])
            })?;
            compared += 1;
        }
        Ok(compared)
    };
    let result = run_all();
    let _ = std::fs::remove_file(&tmp);
    let compared = result?;
    Ok(vec![format!(
        "{compared} subcommand runs byte-identical across --jobs 1 and --jobs 8"
    )])
}

fn run_cli(bin: &PathBuf, args: &[&str], jobs: &str) -> Result<Vec<u8>, String> {
    let output = Command::new(bin)
        .args(args)
        .arg("--jobs")
        .arg(jobs)
        .output()
        .map_err(|e| format!("failed to launch {}: {e}", bin.display()))?;
    if !output.status.success() {
        return Err(format!(
            "{} exited with {:?}: {}",
            args.first().unwrap_or(&"?"),
            output.status.code(),
            String::from_utf8_lossy(&output.stderr).trim()
        ));
    }
    Ok(output.stdout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_complete_and_ordered() {
        let names: Vec<&str> = registry().iter().map(|d| d.name).collect();
        assert_eq!(
            names,
            vec![
                "classic-pair",
                "tree-sweep",
                "field-range",
                "symmetric-point",
                "criticality",
                "bounding",
                "builder-contraction",
                "pair-search",
                "bootstrap",
                "crossing",
                "interaction-constants",
                "reduction-structure",
                "composite-cancellation",
                "perturbation",
                "cli-determinism",
            ]
        );
        for def in registry() {
            assert!(!def.summary.is_empty());
        }
        assert!(check_named("classic-pair").is_some());
        assert!(check_named("no-such-check").is_none());
    }

    #[test]
    fn classic_pair_check_passes() {
        let outcome = check_named("classic-pair").unwrap().run(&CheckContext::default());
        assert!(outcome.passed, "{}", outcome.summary_line());
        assert!(outcome.summary_line().starts_with("[PASS] classic-pair"));
    }

    #[test]
    fn unknown_names_are_rejected_before_running() {
        let err = run_named(
            &["classic-pair".to_string(), "bogus".to_string()],
            &CheckContext::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn failures_fold_into_outcomes() {
        // Without a binary path the determinism check must fail cleanly.
        let outcome = check_named("cli-determinism").unwrap().run(&CheckContext::default());
        assert!(!outcome.passed);
        assert!(outcome.summary_line().starts_with("[FAIL] cli-determinism"));
    }
}

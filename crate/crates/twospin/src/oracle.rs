//! Brute-force Gibbs oracle.
//!
//! Everything in this module works by exhaustive enumeration of spin
//! configurations, with no shared code or formulas from the analytic tree
//! evaluation; it is the independent reference the rest of the crate is
//! tested against.
//!
//! A configuration assigns each vertex occupied (1) or unoccupied (0). Its
//! weight is
//!
//! ```text
//!     beta^{#edges with both ends 0} * gamma^{#edges with both ends 1}
//!         * prod over occupied v of field(v)
//! ```
//!
//! where `field(v)` is the global `lambda` unless the graph overrides it.
//!
//! Enumeration walks configurations in Gray-code order so each step flips a
//! single vertex and updates edge counts incrementally. Large runs split
//! into fixed blocks processed in parallel and folded in block order, so
//! results are identical (to the byte, in float mode) for any worker count.
//! When `gamma == 0` (hard-core) or `beta == 0`, configurations with a
//! forbidden edge are skipped without touching the big-number accumulators.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::SpinParams;
use crate::scalar::Scalar;

/// Budget guards for enumeration and decomposed evaluation.
#[derive(Clone, Debug)]
pub struct OracleLimits {
    /// Cap on free (unpinned) vertices for full enumeration.
    pub max_enum_vertices: usize,
    /// Cap on log2 of any single component table built by
    /// [`decomposed_evaluate`].
    pub max_table_bits: u32,
    /// Cap on log2 of the number of separator-pattern combinations visited
    /// by [`decomposed_evaluate`].
    pub max_combo_log2: u32,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits { max_enum_vertices: 25, max_table_bits: 18, max_combo_log2: 27 }
    }
}

const BLOCK_BITS: u32 = 16;

fn gray(i: u64) -> u64 {
    i ^ (i >> 1)
}

struct Tables {
    powb: Vec<Scalar>,
    powg: Vec<Scalar>,
    powl: Vec<Scalar>,
    beta_zero: bool,
    gamma_zero: bool,
}

impl Tables {
    fn new(g: &Graph, p: &SpinParams) -> Tables {
        let pows = |base: &Scalar, len: usize| {
            let mut v = Vec::with_capacity(len + 1);
            v.push(Scalar::one());
            for k in 1..=len {
                v.push(&v[k - 1] * base);
            }
            v
        };
        Tables {
            powb: pows(&p.beta, g.num_edges()),
            powg: pows(&p.gamma, g.num_edges()),
            powl: pows(&p.lambda, g.n),
            beta_zero: p.beta.is_zero(),
            gamma_zero: p.gamma.is_zero(),
        }
    }
}

struct EnumState<'a> {
    adj: &'a [Vec<u32>],
    fields: &'a BTreeMap<u32, Scalar>,
    tables: &'a Tables,
    spin: Vec<bool>,
    m00: usize,
    m11: usize,
    occ: usize,
    occ_plain: usize,
    field_prod: Scalar,
}

impl<'a> EnumState<'a> {
    fn new(
        g: &'a Graph,
        adj: &'a [Vec<u32>],
        tables: &'a Tables,
        pins: &[(u32, bool)],
        free: &[u32],
        free_mask: u64,
    ) -> EnumState<'a> {
        let mut spin = vec![false; g.n];
        for &(v, s) in pins {
            spin[v as usize] = s;
        }
        for (i, &v) in free.iter().enumerate() {
            spin[v as usize] = free_mask >> i & 1 == 1;
        }
        let mut st = EnumState {
            adj,
            fields: &g.fields,
            tables,
            spin,
            m00: 0,
            m11: 0,
            occ: 0,
            occ_plain: 0,
            field_prod: Scalar::one(),
        };
        for &(u, v) in &g.edges {
            match (st.spin[u as usize], st.spin[v as usize]) {
                (false, false) => st.m00 += 1,
                (true, true) => st.m11 += 1,
                _ => {}
            }
        }
        for v in 0..g.n {
            if st.spin[v] {
                st.occ += 1;
                match st.fields.get(&(v as u32)) {
                    Some(f) => st.field_prod = &st.field_prod * f,
                    None => st.occ_plain += 1,
                }
            }
        }
        st
    }

    fn flip(&mut self, v: u32) {
        let now_occupied = !self.spin[v as usize];
        for &u in &self.adj[v as usize] {
            match (self.spin[u as usize], now_occupied) {
                (false, true) => self.m00 -= 1,
                (false, false) => self.m00 += 1,
                (true, true) => self.m11 += 1,
                (true, false) => self.m11 -= 1,
            }
        }
        self.spin[v as usize] = now_occupied;
        match self.fields.get(&v) {
            Some(f) => {
                self.field_prod =
                    if now_occupied { &self.field_prod * f } else { &self.field_prod / f };
            }
            None => {
                if now_occupied {
                    self.occ_plain += 1;
                } else {
                    self.occ_plain -= 1;
                }
            }
        }
        if now_occupied {
            self.occ += 1;
        } else {
            self.occ -= 1;
        }
    }

    fn weight(&self) -> Option<Scalar> {
        if self.tables.beta_zero && self.m00 > 0 {
            return None;
        }
        if self.tables.gamma_zero && self.m11 > 0 {
            return None;
        }
        let mut w = &self.tables.powb[self.m00] * &self.tables.powg[self.m11];
        w = &w * &self.tables.powl[self.occ_plain];
        if !self.fields.is_empty() {
            w = &w * &self.field_prod;
        }
        Some(w)
    }

    fn phase_mask(&self, regions: &[(Vec<u32>, Vec<u32>)]) -> u32 {
        let mut mask = 0u32;
        for (i, (plus, minus)) in regions.iter().enumerate() {
            let np = plus.iter().filter(|&&v| self.spin[v as usize]).count();
            let nm = minus.iter().filter(|&&v| self.spin[v as usize]).count();
            if np >= nm {
                mask |= 1 << i;
            }
        }
        mask
    }
}

fn check_pins(g: &Graph, pins: &[(u32, bool)]) -> Result<Vec<u32>> {
    let mut pinned = vec![false; g.n];
    for &(v, _) in pins {
        if v as usize >= g.n {
            return Err(Error::Parse(format!("pin at missing vertex {v}")));
        }
        if pinned[v as usize] {
            return Err(Error::Parse(format!("vertex {v} pinned twice")));
        }
        pinned[v as usize] = true;
    }
    Ok((0..g.n as u32).filter(|&v| !pinned[v as usize]).collect())
}

/// Run `f` over every configuration with nonzero weight, sequentially.
/// Table builders use this so their closures can mutate captured state.
fn seq_enumerate<F>(
    g: &Graph,
    p: &SpinParams,
    pins: &[(u32, bool)],
    max_vertices: usize,
    mut f: F,
) -> Result<()>
where
    F: FnMut(&EnumState, Scalar),
{
    p.validate()?;
    let free = check_pins(g, pins)?;
    if free.len() > max_vertices {
        return Err(Error::Infeasible(format!(
            "{} free vertices exceeds the enumeration cap {max_vertices}",
            free.len()
        )));
    }
    let adj = g.adjacency();
    let tables = Tables::new(g, p);
    let total: u64 = 1 << free.len();
    let mut st = EnumState::new(g, &adj, &tables, pins, &free, gray(0));
    if let Some(w) = st.weight() {
        f(&st, w);
    }
    for i in 1..total {
        st.flip(free[i.trailing_zeros() as usize]);
        if let Some(w) = st.weight() {
            f(&st, w);
        }
    }
    Ok(())
}

/// Run `step` over every configuration with nonzero weight, splitting into
/// parallel blocks folded in a fixed order.
fn par_enumerate<A, I, S, M>(
    g: &Graph,
    p: &SpinParams,
    pins: &[(u32, bool)],
    limits: &OracleLimits,
    init: I,
    step: S,
    merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    S: Fn(&mut A, &EnumState, Scalar) + Sync,
    M: Fn(A, A) -> A,
{
    p.validate()?;
    let free = check_pins(g, pins)?;
    if free.len() > limits.max_enum_vertices {
        return Err(Error::Infeasible(format!(
            "{} free vertices exceeds the enumeration cap {}",
            free.len(),
            limits.max_enum_vertices
        )));
    }
    let adj = g.adjacency();
    let tables = Tables::new(g, p);
    let total: u64 = 1 << free.len();

    let run_block = |start: u64, end: u64| -> A {
        let mut acc = init();
        let mut st = EnumState::new(g, &adj, &tables, pins, &free, gray(start));
        if let Some(w) = st.weight() {
            step(&mut acc, &st, w);
        }
        for i in start + 1..end {
            st.flip(free[i.trailing_zeros() as usize]);
            if let Some(w) = st.weight() {
                step(&mut acc, &st, w);
            }
        }
        acc
    };

    if total <= 1 << BLOCK_BITS {
        return Ok(run_block(0, total));
    }
    let block = 1u64 << BLOCK_BITS;
    let nblocks = total >> BLOCK_BITS;
    let parts: Vec<A> = (0..nblocks)
        .into_par_iter()
        .map(|b| run_block(b * block, (b + 1) * block))
        .collect();
    let mut it = parts.into_iter();
    let first = it.next().expect("at least one block");
    Ok(it.fold(first, merge))
}

/// Raw weighted sums over all configurations consistent with `pins`.
#[derive(Clone, Debug)]
pub struct GibbsSummary {
    /// Partition function (total weight).
    pub z: Scalar,
    /// Sum of `weight * |occupied set|`.
    pub occ_weighted: Scalar,
    /// Per query vertex, sum of weight over configurations occupying it;
    /// aligned with the `query` argument.
    pub marginals_weighted: Vec<Scalar>,
}

impl GibbsSummary {
    pub fn expected_occupancy(&self) -> Result<Scalar> {
        if self.z.is_zero() {
            return Err(Error::Infeasible("zero partition function".into()));
        }
        Ok(&self.occ_weighted / &self.z)
    }

    pub fn marginal(&self, idx: usize) -> Result<Scalar> {
        if self.z.is_zero() {
            return Err(Error::Infeasible("zero partition function".into()));
        }
        Ok(&self.marginals_weighted[idx] / &self.z)
    }
}

pub fn gibbs_summary(
    g: &Graph,
    p: &SpinParams,
    pins: &[(u32, bool)],
    query: &[u32],
    limits: &OracleLimits,
) -> Result<GibbsSummary> {
    for &v in query {
        if v as usize >= g.n {
            return Err(Error::Parse(format!("query at missing vertex {v}")));
        }
    }
    par_enumerate(
        g,
        p,
        pins,
        limits,
        || GibbsSummary {
            z: Scalar::zero(),
            occ_weighted: Scalar::zero(),
            marginals_weighted: vec![Scalar::zero(); query.len()],
        },
        |acc, st, w| {
            acc.occ_weighted = &acc.occ_weighted + &(&w * &Scalar::from_int(st.occ as i64));
            for (slot, &v) in acc.marginals_weighted.iter_mut().zip(query) {
                if st.spin[v as usize] {
                    *slot = &*slot + &w;
                }
            }
            acc.z = &acc.z + &w;
        },
        |mut a, b| {
            a.z = &a.z + &b.z;
            a.occ_weighted = &a.occ_weighted + &b.occ_weighted;
            for (x, y) in a.marginals_weighted.iter_mut().zip(&b.marginals_weighted) {
                *x = &*x + y;
            }
            a
        },
    )
}

pub fn partition_function(g: &Graph, p: &SpinParams, limits: &OracleLimits) -> Result<Scalar> {
    Ok(gibbs_summary(g, p, &[], &[], limits)?.z)
}

/// Expected number of occupied vertices.
pub fn magnetization(g: &Graph, p: &SpinParams, limits: &OracleLimits) -> Result<Scalar> {
    gibbs_summary(g, p, &[], &[], limits)?.expected_occupancy()
}

/// Occupation probability of vertex `v`, optionally conditioned on pins.
pub fn marginal(
    g: &Graph,
    p: &SpinParams,
    v: u32,
    pins: &[(u32, bool)],
    limits: &OracleLimits,
) -> Result<Scalar> {
    gibbs_summary(g, p, pins, &[v], limits)?.marginal(0)
}

/// Everything the gadget semantics promise about a rooted tree, measured by
/// enumeration only.
#[derive(Clone, Debug)]
pub struct OracleTreeEval {
    pub zin: Scalar,
    pub zout: Scalar,
    /// `zin / (lambda * zout)`.
    pub r: Scalar,
    /// Expected occupancy with the root occupied minus with it unoccupied.
    pub m: Scalar,
    /// Expected occupancy with the root unoccupied.
    pub a_prime: Scalar,
}

pub fn tree_eval_oracle(
    g: &Graph,
    root: u32,
    p: &SpinParams,
    limits: &OracleLimits,
) -> Result<OracleTreeEval> {
    if root as usize >= g.n {
        return Err(Error::Parse(format!("root {root} out of range")));
    }
    if g.fields.contains_key(&root) {
        return Err(Error::Infeasible("root activity must be the global one".into()));
    }
    let inn = gibbs_summary(g, p, &[(root, true)], &[], limits)?;
    let out = gibbs_summary(g, p, &[(root, false)], &[], limits)?;
    if inn.z.is_zero() || out.z.is_zero() {
        return Err(Error::Infeasible("degenerate tree: one-sided weight vanished".into()));
    }
    let r = &inn.z / &(&p.lambda * &out.z);
    let a_prime = out.expected_occupancy()?;
    let m = inn.expected_occupancy()? - &a_prime;
    Ok(OracleTreeEval { zin: inn.z, zout: out.z, r, m, a_prime })
}

/// Distribution of per-region majority phases.
///
/// Every region is a pair of vertex sets `(plus, minus)`; a configuration is
/// in phase `+` for that region when it occupies at least as many `plus` as
/// `minus` vertices. Masks collect one bit per region, bit `i` set meaning
/// region `i` is in phase `+`.
#[derive(Clone, Debug)]
pub struct PhaseStats {
    pub z: Scalar,
    pub weights: BTreeMap<u32, Scalar>,
}

impl PhaseStats {
    pub fn prob(&self, mask: u32) -> Scalar {
        match self.weights.get(&mask) {
            Some(w) => w / &self.z,
            None => Scalar::zero(),
        }
    }

    /// Expected number of `region_edges` whose endpoint regions disagree in
    /// phase.
    pub fn avg_cut(&self, region_edges: &[(u32, u32)]) -> Scalar {
        let mut acc = Scalar::zero();
        for (mask, w) in &self.weights {
            let cut = region_edges
                .iter()
                .filter(|&&(a, b)| (mask >> a & 1) != (mask >> b & 1))
                .count();
            acc = &acc + &(w * &Scalar::from_int(cut as i64));
        }
        &acc / &self.z
    }
}

pub fn phase_statistics(
    g: &Graph,
    p: &SpinParams,
    regions: &[(Vec<u32>, Vec<u32>)],
    pins: &[(u32, bool)],
    limits: &OracleLimits,
) -> Result<PhaseStats> {
    if regions.len() > 31 {
        return Err(Error::Infeasible("more than 31 regions".into()));
    }
    for (plus, minus) in regions {
        for &v in plus.iter().chain(minus) {
            if v as usize >= g.n {
                return Err(Error::Parse(format!("region vertex {v} out of range")));
            }
        }
    }
    let regions_vec = regions.to_vec();
    let stats = par_enumerate(
        g,
        p,
        pins,
        limits,
        BTreeMap::<u32, Scalar>::new,
        |acc, st, w| {
            let slot = acc.entry(st.phase_mask(&regions_vec)).or_insert_with(Scalar::zero);
            *slot = &*slot + &w;
        },
        |mut a, b| {
            for (mask, w) in b {
                let slot = a.entry(mask).or_insert_with(Scalar::zero);
                *slot = &*slot + &w;
            }
            a
        },
    )?;
    let mut z = Scalar::zero();
    for w in stats.values() {
        z = &z + w;
    }
    if z.is_zero() {
        return Err(Error::Infeasible("zero partition function".into()));
    }
    Ok(PhaseStats { z, weights: stats })
}

/// Upper bound on how much any occupation probability can move when every
/// vertex activity is scaled by at most `ratio` (multiplicatively): twice
/// the number of perturbed vertices times `|ratio - 1|`, valid for
/// `ratio in [1/2, 2]`.
pub fn marginal_perturbation_bound(perturbed_vertices: usize, ratio: &Scalar) -> Scalar {
    let dev = (ratio - &Scalar::one()).abs();
    &Scalar::from_int(2 * perturbed_vertices as i64) * &dev
}

/// Measure how far the marginal at `v` moves when the activity of every
/// vertex in `s` changes from `lambda1` to `lambda2`, next to the a-priori
/// bound. Returns `(measured, bound)`; the measured difference must never
/// exceed the bound.
pub fn perturbation_gap(
    g: &Graph,
    p: &SpinParams,
    s: &[u32],
    lambda1: &Scalar,
    lambda2: &Scalar,
    v: u32,
    limits: &OracleLimits,
) -> Result<(Scalar, Scalar)> {
    if !lambda1.is_positive() || !lambda2.is_positive() {
        return Err(Error::Parse("activities must be positive".into()));
    }
    let set: BTreeMap<u32, ()> = s.iter().map(|&u| (u, ())).collect();
    if let Some((&u, _)) = set.iter().find(|(&u, _)| u as usize >= g.n) {
        return Err(Error::Parse(format!("perturbed vertex {u} out of range")));
    }
    let mut g1 = g.clone();
    let mut g2 = g.clone();
    for &u in set.keys() {
        g1.fields.insert(u, lambda1.clone());
        g2.fields.insert(u, lambda2.clone());
    }
    let m1 = marginal(&g1, p, v, &[], limits)?;
    let m2 = marginal(&g2, p, v, &[], limits)?;
    let bound = marginal_perturbation_bound(set.len(), &(lambda2 / lambda1));
    Ok(((&m2 - &m1).abs(), bound))
}

/// Evaluate a gadget expression by enumeration after expanding it to a
/// concrete tree, for cross-checking the analytic recursion.
pub fn eval_gadget_oracle(
    expr: &std::rc::Rc<crate::gadget::GadgetExpr>,
    p: &SpinParams,
    limits: &OracleLimits,
) -> Result<OracleTreeEval> {
    let (g, root) = crate::gadget::materialize(expr, p, limits.max_enum_vertices as u128)?;
    tree_eval_oracle(&g, root, p, limits)
}

// ---------------------------------------------------------------------------
// Decomposed evaluation
// ---------------------------------------------------------------------------

/// One repeated block of a composed system. `ports` lists, in a fixed
/// order, the local vertices that touch the rest of the system; `plus_side`
/// and `minus_side` define the block's phase regions.
#[derive(Clone, Debug)]
pub struct CopyBlock {
    pub graph: Graph,
    pub ports: Vec<u32>,
    pub plus_side: Vec<u32>,
    pub minus_side: Vec<u32>,
    /// Local vertex id -> vertex id in the flat composite graph.
    pub global_ids: Vec<u32>,
}

/// A connector between two ports of (possibly different) copies. The
/// interior graph carries everything strictly between the ports;
/// `a_attach`/`b_attach` are the interior vertices adjacent to the
/// respective port, and those two cross edges are implicit.
#[derive(Clone, Debug)]
pub struct PathBlock {
    pub ends: ((u32, u32), (u32, u32)),
    pub interior: Graph,
    pub a_attach: u32,
    pub b_attach: u32,
    pub global_ids: Vec<u32>,
}

/// A system made of copies joined by paths, with a block-level edge list
/// for cut statistics.
#[derive(Clone, Debug)]
pub struct ComposedSpec {
    pub copies: Vec<CopyBlock>,
    pub paths: Vec<PathBlock>,
    pub block_edges: Vec<(u32, u32)>,
}

/// Exact totals computed by conditioning on all port spins.
#[derive(Clone, Debug)]
pub struct DecomposedReport {
    pub z: Scalar,
    /// Expected total occupancy.
    pub occupancy: Scalar,
    /// `copy_marginals[c][v]`: occupation probability of local vertex `v`
    /// of copy `c`.
    pub copy_marginals: Vec<Vec<Scalar>>,
    /// Phase distribution over copies (bit `c` set = copy `c` in phase +).
    pub phase_stats: PhaseStats,
}

struct CopyTable {
    /// Nonzero port patterns, each with phase-split totals:
    /// `(pattern, z_plus, z_minus, occ_weighted, marginals_weighted)`.
    entries: Vec<(u32, Scalar, Scalar, Scalar, Vec<Scalar>)>,
}

struct PathTable {
    /// Indexed by `a * 2 + b` over the two port spins:
    /// `(z, occ_weighted)`.
    zs: [(Scalar, Scalar); 4],
}

fn cross_weight(p: &SpinParams, port: bool, inner: bool) -> Scalar {
    match (port, inner) {
        (false, false) => p.beta.clone(),
        (true, true) => p.gamma.clone(),
        _ => Scalar::one(),
    }
}

fn build_copy_table(c: &CopyBlock, p: &SpinParams, limits: &OracleLimits) -> Result<CopyTable> {
    if c.graph.n > limits.max_table_bits as usize {
        return Err(Error::Infeasible(format!(
            "copy with {} vertices exceeds the table cap {}",
            c.graph.n, limits.max_table_bits
        )));
    }
    let nports = c.ports.len();
    let regions = vec![(c.plus_side.clone(), c.minus_side.clone())];
    let mut z_plus = vec![Scalar::zero(); 1 << nports];
    let mut z_minus = vec![Scalar::zero(); 1 << nports];
    let mut occ_w = vec![Scalar::zero(); 1 << nports];
    let mut marg_w = vec![vec![Scalar::zero(); c.graph.n]; 1 << nports];
    seq_enumerate(&c.graph, p, &[], limits.max_table_bits as usize, |st, w| {
        let mut pat = 0u32;
        for (i, &v) in c.ports.iter().enumerate() {
            if st.spin[v as usize] {
                pat |= 1 << i;
            }
        }
        let pat = pat as usize;
        if st.phase_mask(&regions) == 1 {
            z_plus[pat] = &z_plus[pat] + &w;
        } else {
            z_minus[pat] = &z_minus[pat] + &w;
        }
        occ_w[pat] = &occ_w[pat] + &(&w * &Scalar::from_int(st.occ as i64));
        for (m, &s) in marg_w[pat].iter_mut().zip(&st.spin) {
            if s {
                *m = &*m + &w;
            }
        }
    })?;
    let mut entries = Vec::new();
    for pat in 0..1usize << nports {
        let z = &z_plus[pat] + &z_minus[pat];
        if z.is_zero() {
            continue;
        }
        entries.push((
            pat as u32,
            z_plus[pat].clone(),
            z_minus[pat].clone(),
            occ_w[pat].clone(),
            marg_w[pat].clone(),
        ));
    }
    Ok(CopyTable { entries })
}

fn build_path_table(
    path: &PathBlock,
    p: &SpinParams,
    limits: &OracleLimits,
) -> Result<PathTable> {
    if path.interior.n > limits.max_table_bits as usize {
        return Err(Error::Infeasible(format!(
            "path interior with {} vertices exceeds the table cap {}",
            path.interior.n, limits.max_table_bits
        )));
    }
    let mut zs: [(Scalar, Scalar); 4] = std::array::from_fn(|_| (Scalar::zero(), Scalar::zero()));
    seq_enumerate(&path.interior, p, &[], limits.max_table_bits as usize, |st, w| {
        let sa = st.spin[path.a_attach as usize];
        let sb = st.spin[path.b_attach as usize];
        let occ = Scalar::from_int(st.occ as i64);
        for a in 0..2usize {
            for b in 0..2usize {
                let cw = &cross_weight(p, a == 1, sa) * &cross_weight(p, b == 1, sb);
                if cw.is_zero() {
                    continue;
                }
                let w1 = &w * &cw;
                let slot = &mut zs[a * 2 + b];
                slot.1 = &slot.1 + &(&w1 * &occ);
                slot.0 = &slot.0 + &w1;
            }
        }
    })?;
    Ok(PathTable { zs })
}

pub fn decomposed_evaluate(
    spec: &ComposedSpec,
    p: &SpinParams,
    limits: &OracleLimits,
) -> Result<DecomposedReport> {
    p.validate()?;
    if spec.copies.is_empty() {
        return Err(Error::Parse("composed system with no copies".into()));
    }
    if spec.copies.len() > 31 {
        return Err(Error::Infeasible("more than 31 copies".into()));
    }
    for c in &spec.copies {
        for &v in c.ports.iter().chain(&c.plus_side).chain(&c.minus_side) {
            if v as usize >= c.graph.n {
                return Err(Error::Parse(format!("copy vertex {v} out of range")));
            }
        }
        if c.ports.len() > 30 {
            return Err(Error::Infeasible("more than 30 ports in one copy".into()));
        }
    }
    for path in &spec.paths {
        let ((ca, pa), (cb, pb)) = path.ends;
        for (c, pos) in [(ca, pa), (cb, pb)] {
            let copy = spec
                .copies
                .get(c as usize)
                .ok_or_else(|| Error::Parse(format!("path end references copy {c}")))?;
            if pos as usize >= copy.ports.len() {
                return Err(Error::Parse(format!("path end references port {pos} of copy {c}")));
            }
        }
        if path.a_attach as usize >= path.interior.n || path.b_attach as usize >= path.interior.n
        {
            return Err(Error::Parse("path attach vertex out of range".into()));
        }
    }

    let copy_tables: Vec<CopyTable> = spec
        .copies
        .iter()
        .map(|c| build_copy_table(c, p, limits))
        .collect::<Result<_>>()?;
    let path_tables: Vec<PathTable> = spec
        .paths
        .iter()
        .map(|path| build_path_table(path, p, limits))
        .collect::<Result<_>>()?;

    let mut combo_log2 = 0f64;
    for t in &copy_tables {
        if t.entries.is_empty() {
            return Err(Error::Infeasible("a copy has zero total weight".into()));
        }
        combo_log2 += (t.entries.len() as f64).log2();
    }
    if combo_log2 > limits.max_combo_log2 as f64 {
        return Err(Error::Infeasible(format!(
            "separator combinations ~2^{combo_log2:.1} exceed the cap 2^{}",
            limits.max_combo_log2
        )));
    }

    let ncopies = spec.copies.len();
    let mut z_total = Scalar::zero();
    let mut occ_total = Scalar::zero();
    let mut marg_total: Vec<Vec<Scalar>> =
        spec.copies.iter().map(|c| vec![Scalar::zero(); c.graph.n]).collect();
    let mut phase_w: BTreeMap<u32, Scalar> = BTreeMap::new();

    // Odometer over each copy's nonzero port patterns.
    let mut idx = vec![0usize; ncopies];
    loop {
        let picks: Vec<&(u32, Scalar, Scalar, Scalar, Vec<Scalar>)> =
            (0..ncopies).map(|c| &copy_tables[c].entries[idx[c]]).collect();

        // Product over path tables for this port assignment, with the
        // occupancy pushed through the product rule d(xy) = x dy + y dx.
        let mut zp = Scalar::one();
        let mut sp = Scalar::zero();
        let mut feasible = true;
        for (path, table) in spec.paths.iter().zip(&path_tables) {
            let ((ca, pa), (cb, pb)) = path.ends;
            let a = picks[ca as usize].0 >> pa & 1;
            let b = picks[cb as usize].0 >> pb & 1;
            let (z, s) = &table.zs[(a * 2 + b) as usize];
            if z.is_zero() {
                feasible = false;
                break;
            }
            sp = &(&sp * z) + &(&zp * s);
            zp = &zp * z;
        }

        if feasible {
            // Fold the copies in with the same product rule.
            let mut z = zp.clone();
            let mut s = sp.clone();
            for pick in &picks {
                let zc = &pick.1 + &pick.2;
                s = &(&s * &zc) + &(&z * &pick.3);
                z = &z * &zc;
            }
            z_total = &z_total + &z;
            occ_total = &occ_total + &s;

            // Per-copy marginals need the product of everything else.
            let mut prefix = vec![Scalar::one(); ncopies + 1];
            for c in 0..ncopies {
                prefix[c + 1] = &prefix[c] * &(&picks[c].1 + &picks[c].2);
            }
            let mut suffix = vec![Scalar::one(); ncopies + 1];
            for c in (0..ncopies).rev() {
                suffix[c] = &suffix[c + 1] * &(&picks[c].1 + &picks[c].2);
            }
            for c in 0..ncopies {
                let others = &(&prefix[c] * &suffix[c + 1]) * &zp;
                for (slot, mw) in marg_total[c].iter_mut().zip(&picks[c].4) {
                    if !mw.is_zero() {
                        *slot = &*slot + &(mw * &others);
                    }
                }
            }

            // Phase joint over copies.
            let mut acc: Vec<(u32, Scalar)> = vec![(0, zp.clone())];
            for (c, pick) in picks.iter().enumerate() {
                let mut next = Vec::with_capacity(acc.len() * 2);
                for (mask, w) in &acc {
                    if !pick.1.is_zero() {
                        next.push((mask | 1 << c, w * &pick.1));
                    }
                    if !pick.2.is_zero() {
                        next.push((*mask, w * &pick.2));
                    }
                }
                acc = next;
            }
            for (mask, w) in acc {
                let slot = phase_w.entry(mask).or_insert_with(Scalar::zero);
                *slot = &*slot + &w;
            }
        }

        // Advance the odometer.
        let mut c = 0;
        loop {
            if c == ncopies {
                break;
            }
            idx[c] += 1;
            if idx[c] < copy_tables[c].entries.len() {
                break;
            }
            idx[c] = 0;
            c += 1;
        }
        if c == ncopies {
            break;
        }
    }

    if z_total.is_zero() {
        return Err(Error::Infeasible("composed system has zero weight".into()));
    }
    let copy_marginals = marg_total
        .into_iter()
        .map(|row| row.into_iter().map(|w| &w / &z_total).collect())
        .collect();
    Ok(DecomposedReport {
        occupancy: &occ_total / &z_total,
        copy_marginals,
        phase_stats: PhaseStats { z: z_total.clone(), weights: phase_w },
        z: z_total,
    })
}

/// Flatten a composed system into one ordinary graph (for cross-checks on
/// small instances). Vertex ids follow the blocks' `global_ids`, which must
/// form a partition of `0..n`.
pub fn flatten_composed(spec: &ComposedSpec) -> Result<Graph> {
    let mut n = 0usize;
    let mut seen = Vec::new();
    for ids in spec
        .copies
        .iter()
        .map(|c| &c.global_ids)
        .chain(spec.paths.iter().map(|p| &p.global_ids))
    {
        for &gid in ids {
            seen.push(gid);
            n = n.max(gid as usize + 1);
        }
    }
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) || seen.len() != n {
        return Err(Error::Parse("global ids must partition 0..n".into()));
    }
    let mut g = Graph::empty(n);
    let map_edge = |ids: &[u32], u: u32, v: u32| (ids[u as usize], ids[v as usize]);
    for c in &spec.copies {
        if c.global_ids.len() != c.graph.n {
            return Err(Error::Parse("copy global id list has wrong length".into()));
        }
        for &(u, v) in &c.graph.edges {
            let (a, b) = map_edge(&c.global_ids, u, v);
            g.add_edge(a, b)?;
        }
        for (&v, f) in &c.graph.fields {
            g.fields.insert(c.global_ids[v as usize], f.clone());
        }
    }
    for path in &spec.paths {
        if path.global_ids.len() != path.interior.n {
            return Err(Error::Parse("path global id list has wrong length".into()));
        }
        for &(u, v) in &path.interior.edges {
            let (a, b) = map_edge(&path.global_ids, u, v);
            g.add_edge(a, b)?;
        }
        for (&v, f) in &path.interior.fields {
            g.fields.insert(path.global_ids[v as usize], f.clone());
        }
        let ((ca, pa), (cb, pb)) = path.ends;
        let port_a = spec.copies[ca as usize].global_ids
            [spec.copies[ca as usize].ports[pa as usize] as usize];
        let port_b = spec.copies[cb as usize].global_ids
            [spec.copies[cb as usize].ports[pb as usize] as usize];
        g.add_edge(port_a, path.global_ids[path.a_attach as usize])?;
        g.add_edge(port_b, path.global_ids[path.b_attach as usize])?;
    }
    g.canonicalize()?;
    Ok(g)
}

//! Composite graphs that convert magnetization measurements into cut
//! statistics.
//!
//! A near-regular bipartite "phase gadget" concentrates its Gibbs measure
//! on two phases (which side is more occupied). One copy per template
//! vertex, wired along template edges by three-edge paths whose interior
//! vertices root field-gadget copies, yields a graph whose total
//! magnetization is an affine function of the template's average cut
//! size. This module builds those composites deterministically, measures
//! how far a concrete gadget is from the idealized product behaviour, and
//! provides the interaction constants that invert the affine map.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use rayon::prelude::*;

use crate::construct::Interval;
use crate::error::{Error, Result};
use crate::gadget::{materialize, GadgetEval, GadgetExpr};
use crate::graph::Graph;
use crate::oracle::{
    phase_statistics, ComposedSpec, CopyBlock, OracleLimits, PathBlock,
};
use crate::params::SpinParams;
use crate::scalar::Scalar;

/// Hard cap on (graph, deleted-matching) candidates examined by
/// [`phase_gadget_search`] before it reports budget exhaustion.
const CANDIDATE_CAP: usize = 20_000;

/// Largest tree expansion accepted when wiring composites.
const TREE_VERTEX_CAP: u128 = 1 << 20;

/// Marker for the phase-copy occupancy term of a magnetization
/// prediction. It is identical for two composites whose field gadgets
/// have equal effective fields, so it cancels in differences.
const HAT_TERM: &str = "phase-copy occupancy";

// ---------------------------------------------------------------------------
// Phase gadgets
// ---------------------------------------------------------------------------

/// A bipartite block with balanced sides whose vertices all have degree
/// `delta` except the ports, which have degree `delta - 1` and are
/// reserved for wiring. Such a block arises from a `delta`-regular
/// bipartite graph by deleting a matching, one deleted edge per port
/// pair.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct PhaseGadgetSpec {
    /// Vertices `0..n/2` form the plus side, `n/2..n` the minus side.
    pub graph: Graph,
    /// Port vertices (plus side, minus side), each list ascending and of
    /// the same length.
    pub ports: (Vec<u32>, Vec<u32>),
    pub delta: u32,
    /// Aggregate occupation probability of a port conditioned on the
    /// phase agreeing with the port's side.
    pub q_plus: Scalar,
    /// Same, conditioned on the phase opposing the port's side.
    pub q_minus: Scalar,
    /// Worst measured deviation: phase imbalance, and multiplicative
    /// error of the conditional port distribution against the product
    /// model built from `q_plus`/`q_minus`.
    pub epsilon_measured: Option<Scalar>,
}

impl PhaseGadgetSpec {
    pub fn side_size(&self) -> usize {
        self.graph.n / 2
    }

    /// Number of ports per side.
    pub fn ell(&self) -> usize {
        self.ports.0.len()
    }

    pub fn plus_vertices(&self) -> Vec<u32> {
        (0..self.side_size() as u32).collect()
    }

    pub fn minus_vertices(&self) -> Vec<u32> {
        (self.side_size() as u32..self.graph.n as u32).collect()
    }

    /// Structural invariants: balanced bipartition, degree `delta` off
    /// the ports and `delta - 1` on them, and a perfect matching of
    /// non-edges between the port lists whose addition would restore
    /// `delta`-regularity.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n;
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::Parse(format!(
                "phase gadget needs two equal sides, got {n} vertices"
            )));
        }
        let half = n / 2;
        if (self.delta as usize) < 3 || (self.delta as usize) > half {
            return Err(Error::Parse(format!(
                "degree {} is not realizable on sides of {half}",
                self.delta
            )));
        }
        if !self.graph.fields.is_empty() {
            return Err(Error::Parse("phase gadget carries vertex field overrides".into()));
        }
        for &(u, v) in &self.graph.edges {
            if (u as usize) >= half || (v as usize) < half {
                return Err(Error::Parse(format!("edge ({u},{v}) does not cross the sides")));
            }
        }
        let (wp, wm) = &self.ports;
        if wp.len() != wm.len() {
            return Err(Error::Parse("port lists have different lengths".into()));
        }
        for (list, lo, hi) in [(wp, 0, half), (wm, half, n)] {
            if !list.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Parse("port list is not strictly ascending".into()));
            }
            if list.iter().any(|&v| (v as usize) < lo || (v as usize) >= hi) {
                return Err(Error::Parse("port listed on the wrong side".into()));
            }
        }
        let is_port: BTreeSet<u32> = wp.iter().chain(wm.iter()).copied().collect();
        for (v, d) in self.graph.degrees().iter().enumerate() {
            let want = self.delta as usize - usize::from(is_port.contains(&(v as u32)));
            if *d != want {
                return Err(Error::Parse(format!(
                    "vertex {v} has degree {d}, expected {want}"
                )));
            }
        }
        if !self.deleted_matching_exists() {
            return Err(Error::Parse(
                "ports cannot be paired by non-edges, so no deleted matching explains them".into(),
            ));
        }
        Ok(())
    }

    /// Augmenting-path matching between the two port lists over non-edges.
    fn deleted_matching_exists(&self) -> bool {
        let (wp, wm) = &self.ports;
        let ell = wp.len();
        let present: BTreeSet<(u32, u32)> = self.graph.edges.iter().copied().collect();
        let allowed: Vec<Vec<usize>> = wp
            .iter()
            .map(|&a| {
                (0..ell).filter(|&j| !present.contains(&(a, wm[j]))).collect()
            })
            .collect();
        let mut matched_right: Vec<Option<usize>> = vec![None; ell];
        fn augment(
            i: usize,
            allowed: &[Vec<usize>],
            matched_right: &mut [Option<usize>],
            seen: &mut [bool],
        ) -> bool {
            for &j in &allowed[i] {
                if seen[j] {
                    continue;
                }
                seen[j] = true;
                if matched_right[j].is_none()
                    || augment(matched_right[j].unwrap(), allowed, matched_right, seen)
                {
                    matched_right[j] = Some(i);
                    return true;
                }
            }
            false
        }
        (0..ell).all(|i| {
            let mut seen = vec![false; ell];
            augment(i, &allowed, &mut matched_right, &mut seen)
        })
    }
}

/// Measure a candidate block's phase behaviour exactly.
///
/// Returns `(q_plus, q_minus, epsilon)` where the `q`s are the aggregate
/// conditional port marginals and `epsilon` is the larger of the phase
/// imbalance `1 - 2 min(mu_+, mu_-)` and the worst multiplicative
/// deviation of a conditional port pattern from the product model. A
/// pattern the model gives zero weight but the graph does not makes the
/// deviation huge rather than failing.
pub fn measure_phase_gadget(
    graph: &Graph,
    ports: &(Vec<u32>, Vec<u32>),
    p: &SpinParams,
    limits: &OracleLimits,
) -> Result<(Scalar, Scalar, Scalar)> {
    if graph.n == 0 || !graph.n.is_multiple_of(2) {
        return Err(Error::Parse("phase measurement needs two equal sides".into()));
    }
    let half = graph.n / 2;
    let w: Vec<u32> = ports.0.iter().chain(ports.1.iter()).copied().collect();
    let nw = w.len();
    if nw == 0 || nw > 20 {
        return Err(Error::Infeasible(format!("cannot measure {nw} ports")));
    }
    // Region 0 is the phase; region 1+i goes to phase + exactly when port
    // i is unoccupied, which turns one enumeration into the full joint
    // distribution of (phase, port pattern).
    let mut regions: Vec<(Vec<u32>, Vec<u32>)> = Vec::with_capacity(1 + nw);
    regions.push((
        (0..half as u32).collect(),
        (half as u32..graph.n as u32).collect(),
    ));
    for &v in &w {
        regions.push((Vec::new(), vec![v]));
    }
    let stats = phase_statistics(graph, p, &regions, &[], limits)?;

    let mut joint: Vec<[Scalar; 2]> =
        (0..1usize << nw).map(|_| [Scalar::zero(), Scalar::zero()]).collect();
    let mut mu = [Scalar::zero(), Scalar::zero()];
    for (mask, weight) in &stats.weights {
        let phase = (mask & 1) as usize;
        let pat = (!(mask >> 1) as usize) & ((1 << nw) - 1);
        joint[pat][phase] = &joint[pat][phase] + weight;
        mu[phase] = &mu[phase] + weight;
    }
    if mu[0].is_zero() || mu[1].is_zero() {
        // One phase never occurs; report total failure of balance.
        return Ok((Scalar::zero(), Scalar::zero(), Scalar::one()));
    }

    let ell = ports.0.len();
    let side_of = |i: usize| usize::from(i >= ell); // 0 = plus side, 1 = minus side
    let two_ell = Scalar::from_int(2 * ell as i64);
    let mut own_sum = Scalar::zero();
    let mut opp_sum = Scalar::zero();
    for i in 0..nw {
        let own_phase = 1 - side_of(i); // phase bit 1 means phase +
        let mut occ_own = Scalar::zero();
        let mut occ_opp = Scalar::zero();
        for (pat, j) in joint.iter().enumerate() {
            if pat >> i & 1 == 1 {
                occ_own = &occ_own + &j[own_phase];
                occ_opp = &occ_opp + &j[1 - own_phase];
            }
        }
        own_sum = &own_sum + &(&occ_own / &mu[own_phase]);
        opp_sum = &opp_sum + &(&occ_opp / &mu[1 - own_phase]);
    }
    let q_plus = &own_sum / &two_ell;
    let q_minus = &opp_sum / &two_ell;

    let one = Scalar::one();
    let z = &mu[0] + &mu[1];
    let doubled_min = &Scalar::from_int(2) * &mu[0].clone().min(mu[1].clone());
    let mut eps = (&(&z - &doubled_min) / &z).max(Scalar::zero());

    for phase in 0..2usize {
        for (pat, j) in joint.iter().enumerate() {
            let mut model = Scalar::one();
            for i in 0..nw {
                let agrees = side_of(i) == 1 - phase;
                let q = if agrees { &q_plus } else { &q_minus };
                let factor = if pat >> i & 1 == 1 { q.clone() } else { &one - q };
                model = &model * &factor;
            }
            let cond = &j[phase] / &mu[phase];
            let dev = if model.is_zero() {
                if cond.is_zero() {
                    continue;
                }
                Scalar::from_int(1_000_000)
            } else {
                (&(&cond / &model) - &one).abs()
            };
            eps = eps.max(dev);
        }
    }
    Ok((q_plus, q_minus, eps))
}

/// All `delta`-regular bipartite graphs on labeled sides of `half`
/// vertices, as sorted cross edge lists. Fails once more than `cap`
/// graphs are produced.
fn regular_bipartite_graphs(half: usize, delta: usize, cap: usize) -> Result<Vec<Vec<(u32, u32)>>> {
    fn combos(half: usize, delta: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        fn rec(start: usize, half: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if left == 0 {
                out.push(cur.clone());
                return;
            }
            for v in start..=half - left {
                cur.push(v);
                rec(v + 1, half, left - 1, cur, out);
                cur.pop();
            }
        }
        rec(0, half, delta, &mut cur, &mut out);
        out
    }
    let choices = combos(half, delta);
    let mut out = Vec::new();
    let mut residual = vec![delta; half];
    let mut picked: Vec<&Vec<usize>> = Vec::new();
    fn rec<'a>(
        row: usize,
        half: usize,
        choices: &'a [Vec<usize>],
        residual: &mut Vec<usize>,
        picked: &mut Vec<&'a Vec<usize>>,
        out: &mut Vec<Vec<(u32, u32)>>,
        cap: usize,
    ) -> Result<()> {
        if row == half {
            let mut edges = Vec::new();
            for (r, set) in picked.iter().enumerate() {
                for &c in set.iter() {
                    edges.push((r as u32, (half + c) as u32));
                }
            }
            edges.sort_unstable();
            out.push(edges);
            if out.len() > cap {
                return Err(Error::Infeasible(format!(
                    "more than {cap} regular bipartite candidates; shrink the size or degree"
                )));
            }
            return Ok(());
        }
        let rows_after = half - row - 1;
        'next: for set in choices {
            for &c in set {
                if residual[c] == 0 {
                    continue 'next;
                }
            }
            for &c in set {
                residual[c] -= 1;
            }
            // A column whose remaining demand exceeds the remaining rows
            // can never be completed.
            if residual.iter().all(|&r| r <= rows_after) {
                picked.push(set);
                rec(row + 1, half, choices, residual, picked, out, cap)?;
                picked.pop();
            }
            for &c in set {
                residual[c] += 1;
            }
        }
        Ok(())
    }
    rec(0, half, &choices, &mut residual, &mut picked, &mut out, cap)?;
    Ok(out)
}

/// All matchings of exactly `ell` pairwise disjoint edges, in edge-list
/// order.
fn matchings_of_size(edges: &[(u32, u32)], ell: usize, cap: usize) -> Result<Vec<Vec<(u32, u32)>>> {
    let mut out = Vec::new();
    let mut cur: Vec<(u32, u32)> = Vec::new();
    let mut used: BTreeSet<u32> = BTreeSet::new();
    fn rec(
        idx: usize,
        edges: &[(u32, u32)],
        ell: usize,
        cur: &mut Vec<(u32, u32)>,
        used: &mut BTreeSet<u32>,
        out: &mut Vec<Vec<(u32, u32)>>,
        cap: usize,
    ) -> Result<()> {
        if cur.len() == ell {
            out.push(cur.clone());
            if out.len() > cap {
                return Err(Error::Infeasible(format!(
                    "more than {cap} deletable matchings; shrink the budget"
                )));
            }
            return Ok(());
        }
        if edges.len() - idx < ell - cur.len() {
            return Ok(());
        }
        for i in idx..edges.len() {
            let (u, v) = edges[i];
            if used.contains(&u) || used.contains(&v) {
                continue;
            }
            used.insert(u);
            used.insert(v);
            cur.push((u, v));
            rec(i + 1, edges, ell, cur, used, out, cap)?;
            cur.pop();
            used.remove(&u);
            used.remove(&v);
        }
        Ok(())
    }
    rec(0, edges, ell, &mut cur, &mut used, &mut out, cap)?;
    Ok(out)
}

type PortedGraph = (Graph, (Vec<u32>, Vec<u32>));

/// Brute-force scan over blocks obtained from `delta`-regular bipartite
/// graphs by deleting a size-`ell` matching, measuring each with the
/// exact oracle. Returns the first size class whose best candidate meets
/// the `epsilon` target, or the overall best candidate with its measured
/// epsilon when none does, or `None` when the scan saw no candidate.
pub fn phase_gadget_search(
    p: &SpinParams,
    delta: u32,
    ell: usize,
    epsilon: &Scalar,
    n_max: usize,
    limits: &OracleLimits,
) -> Result<Option<PhaseGadgetSpec>> {
    p.validate()?;
    if delta < 3 {
        return Err(Error::Parse("phase gadgets need degree at least 3".into()));
    }
    if ell == 0 {
        return Err(Error::Parse("at least one port pair is required".into()));
    }
    if epsilon.is_negative() {
        return Err(Error::Parse("the accuracy target cannot be negative".into()));
    }
    let n_lo = (delta as usize).max(ell);
    if n_lo > n_max {
        return Ok(None);
    }
    if 2 * n_lo > limits.max_enum_vertices {
        return Err(Error::Infeasible(format!(
            "the smallest candidate has {} vertices, above the enumeration cap {}",
            2 * n_lo,
            limits.max_enum_vertices
        )));
    }

    let mut budget = CANDIDATE_CAP;
    let mut best: Option<(Scalar, PhaseGadgetSpec)> = None;
    for half in n_lo..=n_max {
        if 2 * half > limits.max_enum_vertices {
            break;
        }
        let mut candidates: Vec<PortedGraph> = Vec::new();
        for full_edges in regular_bipartite_graphs(half, delta as usize, budget)? {
            for matching in matchings_of_size(&full_edges, ell, budget)? {
                if budget == 0 {
                    return Err(Error::Infeasible(format!(
                        "candidate budget of {CANDIDATE_CAP} exhausted at size {half}"
                    )));
                }
                budget -= 1;
                let removed: BTreeSet<(u32, u32)> = matching.iter().copied().collect();
                let kept: Vec<(u32, u32)> = full_edges
                    .iter()
                    .copied()
                    .filter(|e| !removed.contains(e))
                    .collect();
                let graph = Graph::with_edges(2 * half, &kept)?;
                let mut wp: Vec<u32> = matching.iter().map(|&(u, _)| u).collect();
                let mut wm: Vec<u32> = matching.iter().map(|&(_, v)| v).collect();
                wp.sort_unstable();
                wm.sort_unstable();
                candidates.push((graph, (wp, wm)));
            }
        }
        let measured: Vec<Result<(Scalar, Scalar, Scalar)>> = candidates
            .par_iter()
            .map(|(graph, ports)| measure_phase_gadget(graph, ports, p, limits))
            .collect();
        for ((graph, ports), m) in candidates.into_iter().zip(measured) {
            let (q_plus, q_minus, eps) = m?;
            let better = match &best {
                None => true,
                Some((best_eps, _)) => eps < *best_eps,
            };
            if better {
                best = Some((
                    eps.clone(),
                    PhaseGadgetSpec {
                        graph,
                        ports,
                        delta,
                        q_plus,
                        q_minus,
                        epsilon_measured: Some(eps),
                    },
                ));
            }
        }
        if let Some((eps, _)) = &best {
            if eps <= epsilon {
                break;
            }
        }
    }
    Ok(best.map(|(_, spec)| spec))
}

// ---------------------------------------------------------------------------
// Composite construction
// ---------------------------------------------------------------------------

/// A fully wired composite: one phase-gadget copy per template vertex,
/// `k` three-edge paths per side per template edge, and a field-gadget
/// copy rooted at every path interior vertex.
#[derive(Clone, Debug)]
pub struct ReductionGraph {
    pub graph: Graph,
    /// Region label per vertex: `g:v`, `port:v:side:idx`,
    /// `path:e:s:i:j`, or `tree:e:s:i:j:local`.
    pub labels: Vec<String>,
    /// The 3-regular template, canonicalized.
    pub h: Graph,
    pub gadget: PhaseGadgetSpec,
    pub tree: Rc<GadgetExpr>,
    /// The field gadget expanded to a concrete tree, root at vertex 0.
    pub tree_graph: Graph,
    pub k: u32,
}

/// Rank of every edge within each endpoint's sorted incident list. Port
/// consumption is keyed off these ranks so construction is deterministic.
fn edge_ranks(h: &Graph) -> Vec<(usize, usize)> {
    let mut counter = vec![0usize; h.n];
    h.edges
        .iter()
        .map(|&(u, v)| {
            let ru = counter[u as usize];
            counter[u as usize] += 1;
            let rv = counter[v as usize];
            counter[v as usize] += 1;
            (ru, rv)
        })
        .collect()
}

fn side_char(s: usize) -> char {
    if s == 0 {
        '+'
    } else {
        '-'
    }
}

impl ReductionGraph {
    pub fn expected_vertex_count(&self) -> usize {
        self.h.n * 2 * self.gadget.side_size()
            + 4 * self.k as usize * self.h.num_edges() * self.tree_graph.n
    }

    /// Checks every structural invariant without any Gibbs computation:
    /// vertex and edge counts, the degree of every label class, the
    /// presence of all path edges, and single use of every port.
    pub fn validate_structure(&self) -> Result<()> {
        let two_n = 2 * self.gadget.side_size();
        let nt = self.tree_graph.n;
        let k = self.k as usize;
        if self.labels.len() != self.graph.n {
            return Err(Error::Internal("label list does not cover the graph".into()));
        }
        if self.graph.n != self.expected_vertex_count() {
            return Err(Error::Internal(format!(
                "vertex count {} differs from the required {}",
                self.graph.n,
                self.expected_vertex_count()
            )));
        }
        let expected_edges = self.h.n * self.gadget.graph.num_edges()
            + self.h.num_edges() * 2 * k * (2 * self.tree_graph.num_edges() + 3);
        if self.graph.num_edges() != expected_edges {
            return Err(Error::Internal(format!(
                "edge count {} differs from the required {expected_edges}",
                self.graph.num_edges()
            )));
        }

        let degrees = self.graph.degrees();
        let tree_deg = self.tree_graph.degrees();
        let delta = self.gadget.delta as usize;
        for (v, &deg) in degrees.iter().enumerate() {
            if deg > delta {
                return Err(Error::Internal(format!(
                    "vertex {v} has degree {deg} above the cap {delta}"
                )));
            }
            let want = if v < self.h.n * two_n {
                // Ports reach delta - 1 inside the copy plus one path
                // edge; the rest sit at delta already.
                delta
            } else {
                let local = (v - self.h.n * two_n) % nt;
                if local == 0 {
                    tree_deg[0] + 2 // tree root carries both path edges
                } else {
                    tree_deg[local]
                }
            };
            if deg != want {
                return Err(Error::Internal(format!(
                    "vertex {v} has degree {deg}, expected {want}"
                )));
            }
        }

        // Every path triple must be present; simple-graph canonical form
        // already guarantees the triples are pairwise edge-disjoint.
        let edge_set: BTreeSet<(u32, u32)> = self.graph.edges.iter().copied().collect();
        let has = |a: u32, b: u32| edge_set.contains(&(a.min(b), a.max(b)));
        let ranks = edge_ranks(&self.h);
        let offset0 = self.h.n * two_n;
        let ell = self.gadget.ell();
        let mut port_uses: BTreeMap<u32, usize> = BTreeMap::new();
        for (ei, &(u, v)) in self.h.edges.iter().enumerate() {
            let (ru, rv) = ranks[ei];
            for s in 0..2usize {
                let side_ports = if s == 0 { &self.gadget.ports.0 } else { &self.gadget.ports.1 };
                for i in 0..k {
                    let block = ((ei * 2 + s) * k + i) * 2;
                    let t0 = (offset0 + block * nt) as u32;
                    let t1 = (offset0 + (block + 1) * nt) as u32;
                    if ru * k + i >= ell || rv * k + i >= ell {
                        return Err(Error::Internal("port rank exceeds the port list".into()));
                    }
                    let pu = u * two_n as u32 + side_ports[ru * k + i];
                    let pv = v * two_n as u32 + side_ports[rv * k + i];
                    if !has(pu, t0) || !has(t0, t1) || !has(t1, pv) {
                        return Err(Error::Internal(format!(
                            "path for template edge {ei} side {s} slot {i} is incomplete"
                        )));
                    }
                    *port_uses.entry(pu).or_insert(0) += 1;
                    *port_uses.entry(pv).or_insert(0) += 1;
                }
            }
        }
        let total_ports = self.h.n * 2 * ell;
        if port_uses.len() != total_ports || port_uses.values().any(|&c| c != 1) {
            return Err(Error::Internal("a port is unused or used more than once".into()));
        }
        Ok(())
    }

    /// Blockwise view of the same composite for exact decomposed
    /// evaluation. The flattened view is checked against the stored
    /// graph before returning.
    pub fn to_composed(&self) -> Result<ComposedSpec> {
        let two_n = 2 * self.gadget.side_size();
        let half = self.gadget.side_size() as u32;
        let nt = self.tree_graph.n;
        let k = self.k as usize;
        let ell = self.gadget.ell();
        let all_ports: Vec<u32> =
            self.gadget.ports.0.iter().chain(self.gadget.ports.1.iter()).copied().collect();

        let copies: Vec<CopyBlock> = (0..self.h.n)
            .map(|v| CopyBlock {
                graph: self.gadget.graph.clone(),
                ports: all_ports.clone(),
                plus_side: (0..half).collect(),
                minus_side: (half..two_n as u32).collect(),
                global_ids: (v * two_n..(v + 1) * two_n).map(|g| g as u32).collect(),
            })
            .collect();

        let mut interior = Graph::empty(2 * nt);
        for &(a, b) in &self.tree_graph.edges {
            interior.add_edge(a, b)?;
            interior.add_edge(a + nt as u32, b + nt as u32)?;
        }
        interior.add_edge(0, nt as u32)?;
        interior.canonicalize()?;
        for (&v, f) in &self.tree_graph.fields {
            interior.fields.insert(v, f.clone());
            interior.fields.insert(v + nt as u32, f.clone());
        }

        let ranks = edge_ranks(&self.h);
        let offset0 = self.h.n * two_n;
        let mut paths = Vec::new();
        for (ei, &(u, v)) in self.h.edges.iter().enumerate() {
            let (ru, rv) = ranks[ei];
            for s in 0..2usize {
                for i in 0..k {
                    let block = ((ei * 2 + s) * k + i) * 2;
                    let base = offset0 + block * nt;
                    paths.push(PathBlock {
                        ends: (
                            (u, (s * ell + ru * k + i) as u32),
                            (v, (s * ell + rv * k + i) as u32),
                        ),
                        interior: interior.clone(),
                        a_attach: 0,
                        b_attach: nt as u32,
                        global_ids: (base..base + 2 * nt).map(|g| g as u32).collect(),
                    });
                }
            }
        }

        let spec = ComposedSpec {
            copies,
            paths,
            block_edges: self.h.edges.clone(),
        };
        let flat = crate::oracle::flatten_composed(&spec)?;
        if flat.to_json() != self.graph.to_json() {
            return Err(Error::Internal(
                "blockwise view disagrees with the flat composite".into(),
            ));
        }
        Ok(spec)
    }

    /// Region labels as a JSON object mapping vertex to label.
    pub fn labels_json(&self) -> String {
        let map: BTreeMap<String, String> = self
            .labels
            .iter()
            .enumerate()
            .map(|(v, l)| (v.to_string(), l.clone()))
            .collect();
        serde_json::to_string(&map).expect("label maps serialize")
    }

    /// Plain edge list: a `n m` header line, then one `u v` line per edge.
    pub fn edge_list_text(&self) -> String {
        let mut out = format!("{} {}\n", self.graph.n, self.graph.num_edges());
        for &(u, v) in &self.graph.edges {
            out.push_str(&format!("{u} {v}\n"));
        }
        out
    }
}

/// Wire one phase-gadget copy per vertex of the 3-regular template `h`,
/// joining every template edge with `k` three-edge paths on each side
/// and rooting a copy of `tree` at every path interior vertex. Port
/// consumption follows the template's sorted edge order, so equal inputs
/// produce identical composites.
pub fn build_reduction(
    h: &Graph,
    gadget: &PhaseGadgetSpec,
    tree: &Rc<GadgetExpr>,
    k: u32,
    p: &SpinParams,
) -> Result<ReductionGraph> {
    gadget.validate()?;
    let mut h = h.clone();
    h.canonicalize()?;
    if !h.fields.is_empty() {
        return Err(Error::Parse("the template must not carry vertex fields".into()));
    }
    if !h.is_regular(3) {
        return Err(Error::Parse("the template must be 3-regular".into()));
    }
    if k == 0 {
        return Err(Error::Parse("at least one path per side is required".into()));
    }
    if gadget.ell() != 3 * k as usize {
        return Err(Error::Parse(format!(
            "{} ports per side cannot serve 3 edges with {k} paths each",
            gadget.ell()
        )));
    }
    let (tree_graph, root) = materialize(tree, p, TREE_VERTEX_CAP)?;
    if root != 0 {
        return Err(Error::Internal("expanded tree root is not vertex 0".into()));
    }

    let two_n = 2 * gadget.side_size();
    let nt = tree_graph.n;
    let k_us = k as usize;
    let copies_total = h.n * two_n;
    let total = copies_total + 4 * k_us * h.num_edges() * nt;
    if total > u32::MAX as usize / 2 {
        return Err(Error::Infeasible(format!("composite with {total} vertices is too large")));
    }

    let mut edges: Vec<(u32, u32)> = Vec::new();
    for v in 0..h.n {
        let off = (v * two_n) as u32;
        for &(a, b) in &gadget.graph.edges {
            edges.push((off + a, off + b));
        }
    }
    let ranks = edge_ranks(&h);
    let mut fields: BTreeMap<u32, Scalar> = BTreeMap::new();
    for (ei, &(u, v)) in h.edges.iter().enumerate() {
        let (ru, rv) = ranks[ei];
        for s in 0..2usize {
            let side_ports = if s == 0 { &gadget.ports.0 } else { &gadget.ports.1 };
            for i in 0..k_us {
                let block = ((ei * 2 + s) * k_us + i) * 2;
                let t0 = (copies_total + block * nt) as u32;
                let t1 = (copies_total + (block + 1) * nt) as u32;
                for &(a, b) in &tree_graph.edges {
                    edges.push((t0 + a, t0 + b));
                    edges.push((t1 + a, t1 + b));
                }
                for (&fv, f) in &tree_graph.fields {
                    fields.insert(t0 + fv, f.clone());
                    fields.insert(t1 + fv, f.clone());
                }
                let pu = u * two_n as u32 + side_ports[ru * k_us + i];
                let pv = v * two_n as u32 + side_ports[rv * k_us + i];
                edges.push((pu, t0));
                edges.push((t0, t1));
                edges.push((t1, pv));
            }
        }
    }
    let mut graph = Graph::with_edges(total, &edges)?;
    graph.fields = fields;

    let mut labels: Vec<String> = Vec::with_capacity(total);
    let mut port_label: BTreeMap<u32, String> = BTreeMap::new();
    for (s, list) in [(0usize, &gadget.ports.0), (1, &gadget.ports.1)] {
        for (idx, &v) in list.iter().enumerate() {
            port_label.insert(v, format!("{}:{idx}", side_char(s)));
        }
    }
    for v in 0..h.n {
        for local in 0..two_n as u32 {
            match port_label.get(&local) {
                Some(tail) => labels.push(format!("port:{v}:{tail}")),
                None => labels.push(format!("g:{v}")),
            }
        }
    }
    for ei in 0..h.num_edges() {
        for s in 0..2usize {
            let sc = side_char(s);
            for i in 0..k_us {
                for j in 0..2usize {
                    labels.push(format!("path:{ei}:{sc}:{i}:{j}"));
                    for local in 1..nt {
                        labels.push(format!("tree:{ei}:{sc}:{i}:{j}:{local}"));
                    }
                }
            }
        }
    }

    let rg = ReductionGraph {
        graph,
        labels,
        h,
        gadget: gadget.clone(),
        tree: tree.clone(),
        tree_graph,
        k,
    };
    rg.validate_structure()?;
    Ok(rg)
}

/// Wire exactly two copies of a phase gadget along a single logical
/// edge: `k` paths on the plus side, `k` on the minus side, each with a
/// field-gadget copy rooted at both interior vertices. Small enough for
/// exact decomposed evaluation, which makes it the workhorse for
/// cancellation checks.
pub fn two_copy_composite(
    gadget: &PhaseGadgetSpec,
    tree: &Rc<GadgetExpr>,
    k: u32,
    p: &SpinParams,
) -> Result<ComposedSpec> {
    gadget.validate()?;
    let k_us = k as usize;
    if k == 0 || k_us > gadget.ell() {
        return Err(Error::Parse(format!(
            "{k} paths per side need at least {k} ports, have {}",
            gadget.ell()
        )));
    }
    let (tree_graph, root) = materialize(tree, p, TREE_VERTEX_CAP)?;
    if root != 0 {
        return Err(Error::Internal("expanded tree root is not vertex 0".into()));
    }
    let two_n = 2 * gadget.side_size();
    let half = gadget.side_size() as u32;
    let nt = tree_graph.n;
    let ell = gadget.ell();
    let all_ports: Vec<u32> =
        gadget.ports.0.iter().chain(gadget.ports.1.iter()).copied().collect();

    let copies: Vec<CopyBlock> = (0..2usize)
        .map(|c| CopyBlock {
            graph: gadget.graph.clone(),
            ports: all_ports.clone(),
            plus_side: (0..half).collect(),
            minus_side: (half..two_n as u32).collect(),
            global_ids: (c * two_n..(c + 1) * two_n).map(|g| g as u32).collect(),
        })
        .collect();

    let mut interior = Graph::empty(2 * nt);
    for &(a, b) in &tree_graph.edges {
        interior.add_edge(a, b)?;
        interior.add_edge(a + nt as u32, b + nt as u32)?;
    }
    interior.add_edge(0, nt as u32)?;
    interior.canonicalize()?;
    for (&v, f) in &tree_graph.fields {
        interior.fields.insert(v, f.clone());
        interior.fields.insert(v + nt as u32, f.clone());
    }

    let offset0 = 2 * two_n;
    let mut paths = Vec::new();
    for s in 0..2usize {
        for i in 0..k_us {
            let block = (s * k_us + i) * 2;
            let base = offset0 + block * nt;
            let port_idx = (s * ell + i) as u32;
            paths.push(PathBlock {
                ends: ((0, port_idx), (1, port_idx)),
                interior: interior.clone(),
                a_attach: 0,
                b_attach: nt as u32,
                global_ids: (base..base + 2 * nt).map(|g| g as u32).collect(),
            });
        }
    }
    Ok(ComposedSpec { copies, paths, block_edges: vec![(0, 1)] })
}

// ---------------------------------------------------------------------------
// Interaction constants
// ---------------------------------------------------------------------------

/// Weight polynomial entries of a three-edge path whose two interior
/// vertices carry activity `x`, indexed by the endpoint spins:
/// `(both out, mixed, both in)`, plus the derivatives in `x`.
pub(crate) fn path_weights(p: &SpinParams, x: &Scalar) -> ([Scalar; 3], [Scalar; 3]) {
    let (b, g) = (&p.beta, &p.gamma);
    let x2 = x * x;
    let l00 = &(&(b * b) * b) + &(&(&Scalar::from_int(2) * &(b * x)) + &(g * &x2));
    let l01 = &(b * b) + &(&(x * &(&Scalar::one() + &(b * g))) + &(&(g * g) * &x2));
    let l11 = b + &(&(&Scalar::from_int(2) * &(g * x)) + &(&(&(g * g) * g) * &x2));
    let d00 = &(&Scalar::from_int(2) * b) + &(&Scalar::from_int(2) * &(g * x));
    let d01 = &(&Scalar::one() + &(b * g)) + &(&Scalar::from_int(2) * &(&(g * g) * x));
    let d11 = &(&Scalar::from_int(2) * g) + &(&Scalar::from_int(2) * &(&(&(g * g) * g) * x));
    ([l00, l01, l11], [d00, d01, d11])
}

/// Quadratic form of the endpoint occupation vector `(1-q, q)` against
/// the path weight entries.
pub(crate) fn endpoint_form(qa: &Scalar, qb: &Scalar, l: &[Scalar; 3]) -> Scalar {
    let one = Scalar::one();
    let (ua, ub) = (&one - qa, &one - qb);
    let mixed = &(&ua * qb) + &(qa * &ub);
    &(&(&ua * &ub) * &l[0]) + &(&(&mixed * &l[1]) + &(&(qa * qb) * &l[2]))
}

/// Interaction constants of a three-edge path between ports with
/// conditional marginals `q_plus`/`q_minus`, whose interior vertices
/// carry a field gadget of effective field `r`.
///
/// `A` is the cross-phase over like-phase weight ratio. `B` and `C` are
/// logarithmic derivatives of the cross-phase and like-phase weights
/// with respect to `r`; the interior activity is `lambda * r`, so each
/// term is `lambda * f'(x)/f(x)` at `x = lambda * r`, and `D = B - C`
/// equals `d/dr log A(r)` identically.
pub fn abc_functions(
    p: &SpinParams,
    q_plus: &Scalar,
    q_minus: &Scalar,
    r: &Scalar,
) -> Result<(Scalar, Scalar, Scalar, Scalar)> {
    p.validate()?;
    if r.is_negative() {
        return Err(Error::Parse("the effective field cannot be negative".into()));
    }
    let one = Scalar::one();
    for q in [q_plus, q_minus] {
        if !q.is_positive() || !(&one - q).is_positive() {
            return Err(Error::Parse("port marginals must lie strictly inside (0,1)".into()));
        }
    }
    if q_plus == q_minus {
        return Err(Error::Parse("equal port marginals carry no phase signal".into()));
    }
    let x = &p.lambda * r;
    let (l, dl) = path_weights(p, &x);
    let f_pm = endpoint_form(q_plus, q_minus, &l);
    let f_mp = endpoint_form(q_minus, q_plus, &l);
    let f_pp = endpoint_form(q_plus, q_plus, &l);
    let f_mm = endpoint_form(q_minus, q_minus, &l);
    for f in [&f_pm, &f_mp, &f_pp, &f_mm] {
        if f.is_zero() {
            return Err(Error::Infeasible("a path weight vanished".into()));
        }
    }
    let a = &(&f_pm * &f_mp) / &(&f_pp * &f_mm);
    let d_pm = endpoint_form(q_plus, q_minus, &dl);
    let d_mp = endpoint_form(q_minus, q_plus, &dl);
    let d_pp = endpoint_form(q_plus, q_plus, &dl);
    let d_mm = endpoint_form(q_minus, q_minus, &dl);
    let b = &p.lambda * &(&(&d_pm / &f_pm) + &(&d_mp / &f_mp));
    let c = &p.lambda * &(&(&d_pp / &f_pp) + &(&d_mm / &f_mm));
    let d = &b - &c;
    Ok((a, b, c, d))
}

/// Average-cut estimate recovered from the magnetization difference of
/// two composites whose field gadgets share the same effective field:
/// `(d_hat - 4k (a1' - a2') |E|) / (k (m1 - m2) d) - (c/d) |E|`.
#[allow(clippy::too_many_arguments)]
pub fn maxcut_extract(
    d_hat: &Scalar,
    m1: &Scalar,
    m2: &Scalar,
    a1_prime: &Scalar,
    a2_prime: &Scalar,
    c: &Scalar,
    d: &Scalar,
    k: u32,
    num_edges: usize,
) -> Result<Scalar> {
    if m1 == m2 {
        return Err(Error::Infeasible(
            "equal magnetization gaps leave nothing to divide by".into(),
        ));
    }
    if d.is_zero() {
        return Err(Error::Infeasible("a zero cut coefficient cannot be inverted".into()));
    }
    if k == 0 {
        return Err(Error::Parse("at least one path per side is required".into()));
    }
    let e = Scalar::from_int(num_edges as i64);
    let k_s = Scalar::from_int(k as i64);
    let tree_shift = &(&Scalar::from_int(4) * &k_s) * &(&(a1_prime - a2_prime) * &e);
    let denom = &(&k_s * &(m1 - m2)) * d;
    let main = &(d_hat - &tree_shift) / &denom;
    Ok(&main - &(&(c / d) * &e))
}

/// Guaranteed ratio between the maximum cut and the Gibbs-average cut of
/// a composite with `k` paths per side: `1 + 6/(k ln a)`. Requires the
/// interaction ratio `a > 1`.
pub fn cut_ratio_bound(a: &Scalar, k: u32, prec: u32) -> Result<Scalar> {
    if a.partial_cmp(&Scalar::one()) != Some(Ordering::Greater) {
        return Err(Error::Infeasible("the interaction ratio must exceed 1".into()));
    }
    if k == 0 {
        return Err(Error::Parse("at least one path per side is required".into()));
    }
    let log_a = a.ln_big(prec);
    Ok(&Scalar::one() + &(&Scalar::from_int(6) / &(&Scalar::from_int(k as i64) * &log_a)))
}

/// Smallest `k` whose guaranteed ratio meets `target`, also satisfying
/// the side condition `k > 1 + 10 / ln a`.
pub fn paths_for_cut_ratio(a: &Scalar, target: &Scalar, prec: u32) -> Result<u64> {
    if a.partial_cmp(&Scalar::one()) != Some(Ordering::Greater) {
        return Err(Error::Infeasible("the interaction ratio must exceed 1".into()));
    }
    if target.partial_cmp(&Scalar::one()) != Some(Ordering::Greater) {
        return Err(Error::Infeasible("no finite k reaches a ratio of 1".into()));
    }
    let log_a = a.ln_big(prec).to_f64();
    let from_target = 6.0 / ((target - &Scalar::one()).to_f64() * log_a);
    let side = 1.0 + 10.0 / log_a;
    let mut k = from_target.ceil().max(side.floor() + 1.0).max(2.0) as u64;
    while (k as f64) <= side {
        k += 1;
    }
    Ok(k)
}

// ---------------------------------------------------------------------------
// Magnetization envelope
// ---------------------------------------------------------------------------

/// Predicted composite magnetization, split into the exactly known
/// field-gadget base, the cut-dependent band, and a symbolic marker for
/// the phase-copy occupancy.
#[derive(Clone, Debug)]
pub struct MagnetizationEnvelope {
    /// `base_term` plus `gap_coeff` times the wiring band.
    pub tree_term: Interval,
    /// `4 k a' |E|`: the unconditioned field-gadget occupancy.
    pub base_term: Scalar,
    /// `k m`: what multiplies the wiring band.
    pub gap_coeff: Scalar,
    /// `(1 +- 8 eps) (d * cut + c * |E|)` over the given cut bounds.
    pub wiring_band: Interval,
    /// Symbolic stand-in for the phase-copy occupancy, which is not
    /// predicted here and cancels between equal-field composites.
    pub hat_term: String,
}

fn shift_scale(base: &Scalar, coeff: &Scalar, band: &Interval) -> Result<Interval> {
    let a = base + &(coeff * &band.lo);
    let b = base + &(coeff * &band.hi);
    if a <= b {
        Interval::new(a, b)
    } else {
        Interval::new(b, a)
    }
}

impl MagnetizationEnvelope {
    /// Difference of two predictions sharing the same wiring band. The
    /// phase-copy terms cancel, and the band enters once, scaled by the
    /// difference of the gap coefficients.
    pub fn difference(&self, other: &MagnetizationEnvelope) -> Result<Interval> {
        if self.hat_term != other.hat_term
            || self.wiring_band.lo != other.wiring_band.lo
            || self.wiring_band.hi != other.wiring_band.hi
        {
            return Err(Error::Infeasible(
                "envelopes over different wiring bands do not cancel".into(),
            ));
        }
        let base = &self.base_term - &other.base_term;
        let coeff = &self.gap_coeff - &other.gap_coeff;
        shift_scale(&base, &coeff, &self.wiring_band)
    }
}

/// Predict the field-gadget contribution to a composite's magnetization:
/// `4 k a' |E|` plus `(1 +- 8 eps) k m (d * cut + c * |E|)` over
/// `cut_bounds`, with the phase-copy occupancy kept symbolic.
pub fn predicted_magnetization_envelope(
    h: &Graph,
    gadget: &PhaseGadgetSpec,
    t_eval: &GadgetEval,
    k: u32,
    epsilon: &Scalar,
    cut_bounds: &Interval,
    p: &SpinParams,
) -> Result<MagnetizationEnvelope> {
    if epsilon.is_negative() {
        return Err(Error::Parse("the accuracy parameter cannot be negative".into()));
    }
    if k == 0 {
        return Err(Error::Parse("at least one path per side is required".into()));
    }
    let (_a, _b, c, d) = abc_functions(p, &gadget.q_plus, &gadget.q_minus, &t_eval.r)?;
    let e = Scalar::from_int(h.num_edges() as i64);
    let k_s = Scalar::from_int(k as i64);

    let c_e = &c * &e;
    let q_lo = &(&d * &cut_bounds.lo) + &c_e;
    let q_hi = &(&d * &cut_bounds.hi) + &c_e;
    let q_band = if q_lo <= q_hi {
        Interval::new(q_lo, q_hi)?
    } else {
        Interval::new(q_hi, q_lo)?
    };
    let eight_eps = &Scalar::from_int(8) * epsilon;
    let slack = Interval::new(&Scalar::one() - &eight_eps, &Scalar::one() + &eight_eps)?;
    let wiring_band = q_band.mul(&slack);

    let base_term = &(&(&Scalar::from_int(4) * &k_s) * &t_eval.a_prime) * &e;
    let gap_coeff = &k_s * &t_eval.m;
    let tree_term = shift_scale(&base_term, &gap_coeff, &wiring_band)?;
    Ok(MagnetizationEnvelope {
        tree_term,
        base_term,
        gap_coeff,
        wiring_band,
        hat_term: HAT_TERM.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gadget::{eval_gadget, merge, single_edge};
    use crate::oracle::{decomposed_evaluate, gibbs_summary};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hard_core() -> SpinParams {
        SpinParams::new(Scalar::from_int(1), Scalar::zero(), Scalar::one()).unwrap()
    }

    /// Parameters where a single edge has effective field exactly 1.
    fn unit_field_params() -> SpinParams {
        SpinParams::new(
            Scalar::from_ratio(1, 2),
            Scalar::from_ratio(1, 4),
            Scalar::from_ratio(2, 3),
        )
        .unwrap()
    }

    fn complete_bipartite_minus(half: u32, deleted: &[(u32, u32)]) -> Graph {
        let removed: BTreeSet<(u32, u32)> = deleted.iter().copied().collect();
        let mut edges = Vec::new();
        for u in 0..half {
            for v in half..2 * half {
                if !removed.contains(&(u, v)) {
                    edges.push((u, v));
                }
            }
        }
        Graph::with_edges(2 * half as usize, &edges).unwrap()
    }

    fn spec_from(graph: Graph, wp: Vec<u32>, wm: Vec<u32>, delta: u32) -> PhaseGadgetSpec {
        PhaseGadgetSpec {
            graph,
            ports: (wp, wm),
            delta,
            q_plus: Scalar::zero(),
            q_minus: Scalar::zero(),
            epsilon_measured: None,
        }
    }

    fn random_antiferro(rng: &mut ChaCha8Rng) -> (Scalar, Scalar) {
        loop {
            let b = Scalar::from_ratio(rng.gen_range(0..8), rng.gen_range(1..8));
            let g = Scalar::from_ratio(rng.gen_range(0..8), rng.gen_range(1..8));
            if (&b * &g) < Scalar::one() && !(b.is_zero() && g.is_zero()) {
                return (b, g);
            }
        }
    }

    #[test]
    fn interaction_identity_pins_the_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (b, g) = random_antiferro(&mut rng);
            let x = Scalar::from_ratio(rng.gen_range(0..30), rng.gen_range(1..12));
            let q_p = Scalar::from_ratio(rng.gen_range(1..9), 10);
            let mut q_m = Scalar::from_ratio(rng.gen_range(1..9), 10);
            if q_m == q_p {
                q_m = &q_p / &Scalar::from_int(2);
            }
            let p = SpinParams::new(b.clone(), g.clone(), Scalar::one()).unwrap();
            let (l, _) = path_weights(&p, &x);
            let f_pm = endpoint_form(&q_p, &q_m, &l);
            let f_mp = endpoint_form(&q_m, &q_p, &l);
            let f_pp = endpoint_form(&q_p, &q_p, &l);
            let f_mm = endpoint_form(&q_m, &q_m, &l);
            let lhs = &(&f_pm * &f_mp) - &(&f_pp * &f_mm);
            let gap = &q_p - &q_m;
            let rhs = &(&p.one_minus_bg().pow_i(3) * &(&x * &x)) * &(&gap * &gap);
            assert_eq!(lhs, rhs, "identity failed at beta={b:?} gamma={g:?} x={x:?}");
        }
    }

    #[test]
    fn abc_values_behave() {
        let p = unit_field_params();
        let q_p = Scalar::from_ratio(3, 5);
        let q_m = Scalar::from_ratio(1, 5);

        let (a0, _, _, _) = abc_functions(&p, &q_p, &q_m, &Scalar::zero()).unwrap();
        assert_eq!(a0, Scalar::one(), "rank-one endpoint weights at field 0");

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let r = Scalar::from_ratio(rng.gen_range(1..40), rng.gen_range(1..12));
            let (a, _, _, _) = abc_functions(&p, &q_p, &q_m, &r).unwrap();
            assert!(a > Scalar::one(), "ratio must exceed 1 at positive fields, got {a:?}");
        }

        // Central difference of log A against the closed form, h = 1e-6.
        let r0 = Scalar::from_ratio(3, 4);
        let h = Scalar::from_ratio(1, 1_000_000);
        let (_, _, _, d) = abc_functions(&p, &q_p, &q_m, &r0).unwrap();
        let (a_hi, _, _, _) = abc_functions(&p, &q_p, &q_m, &(&r0 + &h)).unwrap();
        let (a_lo, _, _, _) = abc_functions(&p, &q_p, &q_m, &(&r0 - &h)).unwrap();
        let diff = &(&a_hi.ln_big(256) - &a_lo.ln_big(256)) / &(&Scalar::from_int(2) * &h);
        let rel = (&(&diff - &d) / &d).abs();
        assert!(
            rel < Scalar::from_ratio(1, 100_000_000),
            "derivative identity off by {rel:?}"
        );

        assert!(abc_functions(&p, &q_p, &q_p, &r0).is_err(), "equal marginals");
        assert!(
            abc_functions(&p, &Scalar::from_int(2), &q_m, &r0).is_err(),
            "marginal outside (0,1)"
        );
    }

    #[test]
    fn extraction_inverts_the_affine_model() {
        let m1 = Scalar::from_ratio(4, 7);
        let m2 = Scalar::from_ratio(37, 49);
        let a1 = Scalar::from_ratio(4, 7);
        let a2 = Scalar::from_ratio(5, 9);
        let c = Scalar::from_ratio(11, 13);
        let d = Scalar::from_ratio(-3, 10);
        let k = 3u32;
        let e = 6usize;
        let x = Scalar::from_ratio(7, 3);

        let q = &(&d * &x) + &(&c * &Scalar::from_int(e as i64));
        let k_s = Scalar::from_int(k as i64);
        let d_hat = &(&(&Scalar::from_int(4) * &k_s) * &(&(&a1 - &a2) * &Scalar::from_int(e as i64)))
            + &(&(&k_s * &(&m1 - &m2)) * &q);
        let got = maxcut_extract(&d_hat, &m1, &m2, &a1, &a2, &c, &d, k, e).unwrap();
        assert_eq!(got, x, "exact inversion");

        assert!(maxcut_extract(&d_hat, &m1, &m1, &a1, &a2, &c, &d, k, e).is_err());
        assert!(maxcut_extract(&d_hat, &m1, &m2, &a1, &a2, &c, &Scalar::zero(), k, e).is_err());
    }

    #[test]
    fn cut_ratio_reporting() {
        let a = Scalar::from_int(4);
        let k9 = cut_ratio_bound(&a, 9, 128).unwrap();
        let k18 = cut_ratio_bound(&a, 18, 128).unwrap();
        assert!(k18 < k9, "more paths tighten the ratio");
        assert!(k9 > Scalar::one());

        let target = Scalar::from_ratio(3, 2);
        let k = paths_for_cut_ratio(&a, &target, 128).unwrap();
        assert!(cut_ratio_bound(&a, k as u32, 128).unwrap() <= target);
        assert!(k as f64 > 1.0 + 10.0 / a.ln_big(128).to_f64());
        assert!(
            cut_ratio_bound(&a, k as u32 - 1, 128).unwrap() > target
                || (k as f64 - 1.0) <= 1.0 + 10.0 / a.ln_big(128).to_f64(),
            "k is minimal"
        );
        assert!(cut_ratio_bound(&Scalar::one(), 5, 128).is_err());
    }

    #[test]
    fn phase_gadget_validation_rejects_malformed() {
        let good = spec_from(
            complete_bipartite_minus(3, &[(0, 3)]),
            vec![0],
            vec![3],
            3,
        );
        good.validate().unwrap();

        // Degree violation: one more deleted edge unbalances vertex 0.
        let bad_degree = spec_from(
            complete_bipartite_minus(3, &[(0, 3), (0, 4)]),
            vec![0],
            vec![3],
            3,
        );
        assert!(bad_degree.validate().is_err());

        // Right degrees but an edge inside one side.
        let mut swapped = complete_bipartite_minus(3, &[(1, 4), (2, 5)]);
        swapped.add_edge(1, 2).unwrap();
        swapped.add_edge(4, 5).unwrap();
        swapped.canonicalize().unwrap();
        let bad_cross = spec_from(swapped, vec![0; 0], vec![], 3);
        assert!(bad_cross.validate().is_err());

        // Port listed on the wrong side.
        let bad_side = spec_from(
            complete_bipartite_minus(3, &[(0, 3)]),
            vec![3],
            vec![0],
            3,
        );
        assert!(bad_side.validate().is_err());

        // Ports that no deleted matching can explain: correct lists but
        // swapped pairing is fine, so break orderliness instead.
        let bad_order = spec_from(
            complete_bipartite_minus(3, &[(0, 3), (1, 4)]),
            vec![1, 0],
            vec![3, 4],
            3,
        );
        assert!(bad_order.validate().is_err());
    }

    #[test]
    fn k66_measurement_is_frozen() {
        let graph = complete_bipartite_minus(6, &[(0, 6), (1, 7), (2, 8)]);
        let spec = spec_from(graph.clone(), vec![0, 1, 2], vec![6, 7, 8], 6);
        spec.validate().unwrap();

        let p = hard_core();
        let limits = OracleLimits::default();
        let stats = phase_statistics(
            &graph,
            &p,
            &[((0..6).collect(), (6..12).collect())],
            &[],
            &limits,
        )
        .unwrap();
        assert_eq!(stats.z, Scalar::from_int(130));
        assert_eq!(stats.prob(1), Scalar::from_ratio(67, 130));

        let (q_p, q_m, eps) = measure_phase_gadget(&graph, &spec.ports, &p, &limits).unwrap();
        assert_eq!(q_p, Scalar::from_ratio(4223, 8442));
        assert_eq!(q_m, Scalar::from_ratio(1, 134));
        assert!(
            eps > Scalar::one(),
            "this block is far from product behaviour, measured {eps:?}"
        );
    }

    #[test]
    fn search_scans_the_smallest_family() {
        let p = hard_core();
        let limits = OracleLimits::default();
        let target = Scalar::from_ratio(1, 1000);
        let found = phase_gadget_search(&p, 3, 1, &target, 3, &limits)
            .unwrap()
            .expect("nine candidates exist");
        found.validate().unwrap();
        let eps = found.epsilon_measured.clone().unwrap();
        assert!(eps > target, "tiny blocks cannot meet a 1e-3 target");

        let again = phase_gadget_search(&p, 3, 1, &target, 3, &limits).unwrap().unwrap();
        assert_eq!(found.graph.to_json(), again.graph.to_json());
        assert_eq!(found.ports, again.ports);
        assert_eq!(found.q_plus, again.q_plus);
        assert_eq!(found.q_minus, again.q_minus);
        assert_eq!(eps, again.epsilon_measured.unwrap());

        assert!(phase_gadget_search(&p, 3, 1, &target, 2, &limits).unwrap().is_none());
    }

    #[test]
    fn build_reduction_shape() {
        let h = Graph::with_edges(
            4,
            &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
        )
        .unwrap();
        let gadget = spec_from(
            complete_bipartite_minus(6, &[(0, 6), (1, 7), (2, 8)]),
            vec![0, 1, 2],
            vec![6, 7, 8],
            6,
        );
        let tree = merge(vec![single_edge()]);
        let p = hard_core();

        let rg = build_reduction(&h, &gadget, &tree, 1, &p).unwrap();
        assert_eq!(rg.graph.n, 8 * 6 + 72, "4 copies of 12 plus 24 trees of 3");
        assert_eq!(rg.tree_graph.n, 3);
        rg.validate_structure().unwrap();

        let census = |prefix: &str| rg.labels.iter().filter(|l| l.starts_with(prefix)).count();
        assert_eq!(census("g:"), 4 * 6);
        assert_eq!(census("port:"), 4 * 6);
        assert_eq!(census("path:"), 6 * 2 * 2);
        assert_eq!(census("tree:"), 6 * 2 * 2 * 2);

        let again = build_reduction(&h, &gadget, &tree, 1, &p).unwrap();
        assert_eq!(rg.graph.to_json(), again.graph.to_json());
        assert_eq!(rg.labels_json(), again.labels_json());
        assert!(rg.edge_list_text().starts_with("120 "));

        let composed = rg.to_composed().unwrap();
        assert_eq!(composed.copies.len(), 4);
        assert_eq!(composed.paths.len(), 6 * 2);
        assert_eq!(composed.block_edges, rg.h.edges);

        // A 4-cycle is 2-regular and must be rejected.
        let square = Graph::with_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        assert!(build_reduction(&square, &gadget, &tree, 1, &p).is_err());
        // Three ports per side cannot serve two paths per edge side.
        assert!(build_reduction(&h, &gadget, &tree, 2, &p).is_err());
    }

    #[test]
    fn mini_composite_cancellation() {
        let p = unit_field_params();
        let limits = OracleLimits::default();

        let graph = complete_bipartite_minus(4, &[(0, 4)]);
        let mut gadget = spec_from(graph, vec![0], vec![4], 4);
        gadget.validate().unwrap();
        let (q_p, q_m, eps) =
            measure_phase_gadget(&gadget.graph, &gadget.ports, &p, &limits).unwrap();
        gadget.q_plus = q_p.clone();
        gadget.q_minus = q_m.clone();
        gadget.epsilon_measured = Some(eps.clone());
        assert!(q_p > q_m, "phases must separate the port marginals");

        let t1 = single_edge();
        let t2 = merge(vec![single_edge()]);
        let e1 = eval_gadget(&t1, &p).unwrap();
        let e2 = eval_gadget(&t2, &p).unwrap();
        assert_eq!(e1.r, Scalar::one(), "a single edge has unit field here");
        assert_eq!(e2.r, Scalar::one(), "wrapping preserves the unit field");
        assert_eq!(e1.m, Scalar::from_ratio(4, 7));
        assert_eq!(e2.m, Scalar::from_ratio(37, 49));

        // The tree-DP occupancy matches the enumeration oracle.
        let (tg1, root1) = materialize(&t1, &p, 64).unwrap();
        let oracle_a1 = gibbs_summary(&tg1, &p, &[(root1, false)], &[], &limits)
            .unwrap()
            .expected_occupancy()
            .unwrap();
        assert_eq!(e1.a_prime, oracle_a1);

        let rep1 = decomposed_evaluate(&two_copy_composite(&gadget, &t1, 1, &p).unwrap(), &p, &limits)
            .unwrap();
        let rep2 = decomposed_evaluate(&two_copy_composite(&gadget, &t2, 1, &p).unwrap(), &p, &limits)
            .unwrap();

        // Equal effective fields make the phase-copy statistics of the
        // two composites identical, exactly.
        assert_eq!(rep1.copy_marginals, rep2.copy_marginals);
        let cut1 = rep1.phase_stats.avg_cut(&[(0, 1)]);
        let cut2 = rep2.phase_stats.avg_cut(&[(0, 1)]);
        assert_eq!(cut1, cut2);

        let d_hat = &rep1.occupancy - &rep2.occupancy;
        let (_a, _b, c, d) = abc_functions(&p, &q_p, &q_m, &e1.r).unwrap();
        let extracted =
            maxcut_extract(&d_hat, &e1.m, &e2.m, &e1.a_prime, &e2.a_prime, &c, &d, 1, 1).unwrap();

        let envelope_radius = &(&Scalar::from_int(8) * &eps) * &(&cut1 + &(&c / &d)).abs();
        let err = (&extracted - &cut1).abs();
        assert!(
            err <= envelope_radius,
            "extraction missed: cut {cut1:?}, got {extracted:?}, radius {envelope_radius:?}"
        );

        // The same bound through the envelope interface, in difference mode.
        let h_edge = Graph::with_edges(2, &[(0, 1)]).unwrap();
        let cut_point = Interval::new(cut1.clone(), cut1.clone()).unwrap();
        let env1 =
            predicted_magnetization_envelope(&h_edge, &gadget, &e1, 1, &eps, &cut_point, &p)
                .unwrap();
        let env2 =
            predicted_magnetization_envelope(&h_edge, &gadget, &e2, 1, &eps, &cut_point, &p)
                .unwrap();
        let band = env1.difference(&env2).unwrap();
        assert!(
            band.contains(&d_hat),
            "difference envelope {band:?} misses the oracle value {d_hat:?}"
        );
    }

    #[test]
    fn envelope_modes() {
        let p = unit_field_params();
        let gadget = {
            let graph = complete_bipartite_minus(4, &[(0, 4)]);
            let mut s = spec_from(graph, vec![0], vec![4], 4);
            s.q_plus = Scalar::from_ratio(3, 5);
            s.q_minus = Scalar::from_ratio(1, 5);
            s
        };
        let h = Graph::with_edges(2, &[(0, 1)]).unwrap();
        let t = eval_gadget(&single_edge(), &p).unwrap();
        let cut = Interval::new(Scalar::from_ratio(1, 2), Scalar::from_ratio(1, 2)).unwrap();

        let exact =
            predicted_magnetization_envelope(&h, &gadget, &t, 1, &Scalar::zero(), &cut, &p)
                .unwrap();
        assert_eq!(exact.tree_term.lo, exact.tree_term.hi, "no slack at epsilon 0");

        let eps = Scalar::from_ratio(1, 100);
        let wide = predicted_magnetization_envelope(&h, &gadget, &t, 1, &eps, &cut, &p).unwrap();
        assert!(wide.tree_term.lo < wide.tree_term.hi);
        assert!(wide.tree_term.contains(&exact.tree_term.lo));

        let d_self = wide.difference(&wide.clone()).unwrap();
        assert!(d_self.contains(&Scalar::zero()));

        let other_cut = Interval::new(Scalar::zero(), Scalar::one()).unwrap();
        let moved =
            predicted_magnetization_envelope(&h, &gadget, &t, 1, &eps, &other_cut, &p).unwrap();
        assert!(wide.difference(&moved).is_err(), "bands must match to cancel");
    }
}

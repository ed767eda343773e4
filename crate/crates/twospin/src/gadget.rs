//! Field gadgets: rooted trees whose root has degree one, evaluated
//! analytically.
//!
//! A gadget is described by a [`GadgetExpr`]:
//!
//! * `Degenerate` is the single-vertex tree (the root itself);
//! * `Merge(children)` creates a new root and one new vertex below it, then
//!   identifies every child gadget's root with that new vertex;
//!   `Merge([])` is the one-edge tree;
//! * `Triangle` is a 3-cycle with a pendant root, admissible only at the
//!   vertex activity `(1 - beta) / (1 - gamma)`.
//!
//! Children are `Rc`-shared so iterated constructions reuse subtrees;
//! evaluation memoizes on node identity and runs in time linear in the
//! number of distinct nodes, while `size` reports the vertex count of the
//! fully expanded tree (which can be astronomically larger).
//!
//! For a gadget `T` with partition functions `zin` (root occupied,
//! including the root's activity) and `zout` (root unoccupied), the
//! effective field is `R = zin / (lambda * zout)` and the magnetization gap
//! is `M = E[|occupied| given root in] - E[|occupied| given root out]`.
//!
//! JSON form: `{"t":"deg"}`, `{"t":"tri"}`, `{"t":"merge","c":[...]}`.

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::SpinParams;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t")]
pub enum GadgetExpr {
    #[serde(rename = "deg")]
    Degenerate,
    #[serde(rename = "tri")]
    Triangle,
    #[serde(rename = "merge")]
    Merge { c: Vec<Rc<GadgetExpr>> },
}

pub fn degenerate() -> Rc<GadgetExpr> {
    Rc::new(GadgetExpr::Degenerate)
}

pub fn triangle() -> Rc<GadgetExpr> {
    Rc::new(GadgetExpr::Triangle)
}

pub fn merge(children: Vec<Rc<GadgetExpr>>) -> Rc<GadgetExpr> {
    Rc::new(GadgetExpr::Merge { c: children })
}

/// The one-edge tree, `Merge([])`.
pub fn single_edge() -> Rc<GadgetExpr> {
    merge(vec![])
}

impl GadgetExpr {
    pub fn from_json(json: &str) -> Result<Rc<GadgetExpr>> {
        let e: GadgetExpr =
            serde_json::from_str(json).map_err(|e| Error::Parse(format!("gadget JSON: {e}")))?;
        Ok(Rc::new(e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("gadget serialization cannot fail")
    }

    /// Number of distinct nodes in the expression DAG.
    pub fn node_count(self: &Rc<Self>) -> usize {
        let mut seen = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if seen.insert(Rc::as_ptr(&e), ()).is_some() {
                continue;
            }
            if let GadgetExpr::Merge { c } = &*e {
                stack.extend(c.iter().cloned());
            }
        }
        seen.len()
    }
}

/// Everything the analytic evaluation knows about a gadget at fixed
/// parameters.
///
/// `r`, `m`, and `a_prime` come from a normalized recursion and stay finite
/// for trees of any size. `zin`/`zout` are the raw partition sums; they are
/// exact in rational mode, but for astronomically large shared trees in
/// float mode they can overflow to infinity without affecting the
/// normalized quantities.
#[derive(Clone, Debug, Serialize)]
pub struct GadgetEval {
    /// Effective field `zin / (lambda * zout)`.
    pub r: Scalar,
    /// Magnetization gap between the root-occupied and root-unoccupied
    /// conditional expectations of the occupied-set size.
    pub m: Scalar,
    pub zin: Scalar,
    pub zout: Scalar,
    /// Vertex count of the expanded tree.
    pub size: u128,
    /// Expected occupancy conditioned on the root being unoccupied.
    pub a_prime: Scalar,
}

/// Normalized quantities of a subtree whose root is about to be identified
/// with a merge vertex, plus the raw root-unoccupied sum.
#[derive(Clone, Debug)]
struct Part {
    r: Scalar,
    m: Scalar,
    a: Scalar,
    zout: Scalar,
    size: u128,
}

fn part_to_eval(p: &SpinParams, part: &Part) -> GadgetEval {
    GadgetEval {
        r: part.r.clone(),
        m: part.m.clone(),
        zin: &(&p.lambda * &part.r) * &part.zout,
        zout: part.zout.clone(),
        size: part.size,
        a_prime: part.a.clone(),
    }
}

/// The cycle unit of the triangle gadget: partition and occupancy sums of
/// the 3-cycle as seen from its attachment vertex, by direct summation of
/// its eight configurations.
fn triangle_unit(p: &SpinParams) -> Part {
    let (b, g, l) = (&p.beta, &p.gamma, &p.lambda);
    let l2 = l * l;
    let l3 = &l2 * l;
    let g3 = &(g * g) * g;
    let b3 = &(b * b) * b;
    let two = Scalar::from_int(2);
    let three = Scalar::from_int(3);
    let four = Scalar::from_int(4);
    // Attachment vertex occupied: the other two cycle vertices range over
    // {00, 10, 01, 11} with weights l*b, l^2*g, l^2*g, l^3*g^3.
    let zin = &(l * b) + &(&(&two * &l2) * g) + &(&l3 * &g3);
    let sin = &(l * b) + &(&(&four * &l2) * g) + &(&(&three * &l3) * &g3);
    // Attachment vertex unoccupied: weights b^3, l*b, l*b, l^2*g.
    let zout = &b3 + &(&(&two * l) * b) + &(&l2 * g);
    let sout = &(&(&two * l) * b) + &(&(&two * &l2) * g);
    Part {
        r: &zin / &(l * &zout),
        m: &sin / &zin - &sout / &zout,
        a: &sout / &zout,
        zout,
        size: 3,
    }
}

fn merge_parts(p: &SpinParams, children: &[Part]) -> Part {
    let (b, g, l) = (&p.beta, &p.gamma, &p.lambda);
    let k = children.len() as i64;
    let one = Scalar::one();
    let mut prod_r = Scalar::one();
    let mut prod_zout = Scalar::one();
    let mut sum_m = Scalar::from_int(1 - k);
    let mut sum_a = Scalar::zero();
    let mut size: u128 = 2;
    for c in children {
        prod_r = &prod_r * &c.r;
        prod_zout = &prod_zout * &c.zout;
        sum_m = &sum_m + &c.m;
        sum_a = &sum_a + &c.a;
        size += c.size - 1;
    }
    // With u = lambda * prod(r_i):
    //   R     = (1 + gamma*u) / (beta + u)
    //   omega = (1 - beta*gamma) * u / ((beta + u) * (1 + gamma*u))
    //   M     = 1 - omega * (1 + sum(M_i - 1))
    //   A'    = sum(A'_i) + (1 + sum(M_i - 1)) * u / (beta + u)
    //   Zout  = (beta + u) * prod(Zout_i)
    let u = l * &prod_r;
    let denom = b + &u;
    let numer = &one + &(g * &u);
    let r = &numer / &denom;
    let omega = &(&(&one - &(b * g)) * &u) / &(&denom * &numer);
    let m = &one - &(&omega * &sum_m);
    let a = &sum_a + &(&sum_m * &(&u / &denom));
    Part { r, m, a, zout: &denom * &prod_zout, size }
}

fn degenerate_part() -> Part {
    Part {
        r: Scalar::one(),
        m: Scalar::one(),
        a: Scalar::zero(),
        zout: Scalar::one(),
        size: 1,
    }
}

fn triangle_admissible(p: &SpinParams) -> Result<()> {
    match SpinParams::triangle_lambda(&p.beta, &p.gamma) {
        Some(l) if l == p.lambda => Ok(()),
        _ => Err(Error::Infeasible(
            "triangle gadget requires lambda = (1-beta)/(1-gamma)".into(),
        )),
    }
}

/// Evaluate a gadget expression at fixed parameters. Exact when the
/// parameters are rational; big-float at the parameter precision otherwise.
pub fn eval_gadget(expr: &Rc<GadgetExpr>, p: &SpinParams) -> Result<GadgetEval> {
    p.validate()?;
    let part = eval_part(expr, p)?;
    Ok(part_to_eval(p, &part))
}

fn eval_part(expr: &Rc<GadgetExpr>, p: &SpinParams) -> Result<Part> {
    let mut memo: HashMap<*const GadgetExpr, Part> = HashMap::new();
    // Iterative post-order over the DAG; children of a node are evaluated
    // before the node itself, each distinct node exactly once.
    let mut stack: Vec<(Rc<GadgetExpr>, bool)> = vec![(expr.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        let key = Rc::as_ptr(&node);
        if memo.contains_key(&key) {
            continue;
        }
        match &*node {
            GadgetExpr::Degenerate => {
                memo.insert(key, degenerate_part());
            }
            GadgetExpr::Triangle => {
                triangle_admissible(p)?;
                let unit = triangle_unit(p);
                memo.insert(key, merge_parts(p, &[unit]));
            }
            GadgetExpr::Merge { c } => {
                if expanded {
                    let parts: Vec<Part> = c
                        .iter()
                        .map(|ch| {
                            memo.get(&Rc::as_ptr(ch)).cloned().ok_or_else(|| {
                                Error::Internal("post-order missed a child".into())
                            })
                        })
                        .collect::<Result<_>>()?;
                    memo.insert(key, merge_parts(p, &parts));
                } else {
                    stack.push((node.clone(), true));
                    for ch in c {
                        stack.push((ch.clone(), false));
                    }
                }
            }
        }
    }
    memo.remove(&Rc::as_ptr(expr)).ok_or_else(|| Error::Internal("evaluation lost root".into()))
}

/// Effective field and its derivative in the vertex activity, by the same
/// recursion differentiated term by term. Rejects triangle nodes (they only
/// exist at one activity, so the derivative is meaningless).
pub fn eval_r_of_lambda(expr: &Rc<GadgetExpr>, p: &SpinParams) -> Result<(Scalar, Scalar)> {
    p.validate()?;
    let mut memo: HashMap<*const GadgetExpr, (Scalar, Scalar)> = HashMap::new();
    let mut stack: Vec<(Rc<GadgetExpr>, bool)> = vec![(expr.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        let key = Rc::as_ptr(&node);
        if memo.contains_key(&key) {
            continue;
        }
        match &*node {
            GadgetExpr::Degenerate => {
                memo.insert(key, (Scalar::one(), Scalar::zero()));
            }
            GadgetExpr::Triangle => {
                return Err(Error::Infeasible(
                    "effective-field derivative is undefined for triangle gadgets".into(),
                ));
            }
            GadgetExpr::Merge { c } => {
                if expanded {
                    let mut prod = Scalar::one();
                    let mut dlog = Scalar::zero();
                    for ch in c {
                        let (r, dr) = memo
                            .get(&Rc::as_ptr(ch))
                            .cloned()
                            .ok_or_else(|| Error::Internal("post-order missed a child".into()))?;
                        dlog = &dlog + &(&dr / &r);
                        prod = &prod * &r;
                    }
                    let dprod = &prod * &dlog;
                    // R = (1 + gamma*u) / (beta + u) with u = lambda * prod.
                    let u = &p.lambda * &prod;
                    let du = &prod + &(&p.lambda * &dprod);
                    let denom = &p.beta + &u;
                    let r = (&Scalar::one() + &(&p.gamma * &u)) / &denom;
                    let dr = &(&du * &(&(&p.beta * &p.gamma) - &Scalar::one())) / &(&denom * &denom);
                    memo.insert(key, (r, dr));
                } else {
                    stack.push((node.clone(), true));
                    for ch in c {
                        stack.push((ch.clone(), false));
                    }
                }
            }
        }
    }
    memo.remove(&Rc::as_ptr(expr)).ok_or_else(|| Error::Internal("evaluation lost root".into()))
}

/// Expand a gadget expression into an explicit tree graph. Returns the
/// graph and its root vertex (always 0). `max_vertices` guards against
/// shared expressions whose expansion explodes.
pub fn materialize(expr: &Rc<GadgetExpr>, p: &SpinParams, max_vertices: u128) -> Result<(Graph, u32)> {
    let size = eval_size(expr)?;
    if size > max_vertices {
        return Err(Error::Infeasible(format!(
            "expanded tree has {size} vertices, cap is {max_vertices}"
        )));
    }
    p.validate()?;
    if contains_triangle(expr) {
        triangle_admissible(p)?;
    }
    let mut g = Graph::empty(1);
    emit(expr, &mut g, 0, 0)?;
    g.canonicalize()?;
    Ok((g, 0))
}

fn contains_triangle(expr: &Rc<GadgetExpr>) -> bool {
    let mut seen = HashMap::new();
    let mut stack = vec![expr.clone()];
    while let Some(e) = stack.pop() {
        if seen.insert(Rc::as_ptr(&e), ()).is_some() {
            continue;
        }
        match &*e {
            GadgetExpr::Triangle => return true,
            GadgetExpr::Merge { c } => stack.extend(c.iter().cloned()),
            GadgetExpr::Degenerate => {}
        }
    }
    false
}

/// Vertex count of the expanded tree, without evaluating weights.
pub fn eval_size(expr: &Rc<GadgetExpr>) -> Result<u128> {
    let mut memo: HashMap<*const GadgetExpr, u128> = HashMap::new();
    let mut stack: Vec<(Rc<GadgetExpr>, bool)> = vec![(expr.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        let key = Rc::as_ptr(&node);
        if memo.contains_key(&key) {
            continue;
        }
        match &*node {
            GadgetExpr::Degenerate => {
                memo.insert(key, 1);
            }
            GadgetExpr::Triangle => {
                memo.insert(key, 4);
            }
            GadgetExpr::Merge { c } => {
                if expanded {
                    let mut size: u128 = 2;
                    for ch in c {
                        let s = memo
                            .get(&Rc::as_ptr(ch))
                            .ok_or_else(|| Error::Internal("post-order missed a child".into()))?;
                        size = size
                            .checked_add(s - 1)
                            .ok_or_else(|| Error::Infeasible("tree size overflows u128".into()))?;
                    }
                    memo.insert(key, size);
                } else {
                    stack.push((node.clone(), true));
                    for ch in c {
                        stack.push((ch.clone(), false));
                    }
                }
            }
        }
    }
    memo.remove(&Rc::as_ptr(expr)).ok_or_else(|| Error::Internal("evaluation lost root".into()))
}

fn emit(expr: &Rc<GadgetExpr>, g: &mut Graph, at: u32, depth: u32) -> Result<()> {
    if depth > 100_000 {
        return Err(Error::Infeasible("expression nesting too deep to expand".into()));
    }
    match &**expr {
        GadgetExpr::Degenerate => Ok(()),
        GadgetExpr::Triangle => {
            let v = g.n as u32;
            g.n += 3;
            g.add_edge(at, v)?;
            g.add_edge(v, v + 1)?;
            g.add_edge(v, v + 2)?;
            g.add_edge(v + 1, v + 2)?;
            Ok(())
        }
        GadgetExpr::Merge { c } => {
            let u = g.n as u32;
            g.n += 1;
            g.add_edge(at, u)?;
            for ch in c {
                emit(ch, g, u, depth + 1)?;
            }
            Ok(())
        }
    }
}

/// The classic exactly-matched pair: a 3-vertex path and an 8-vertex tree.
/// At the hard-core point with unit activity both have effective field 2/3
/// while their magnetization gaps differ (5/6 versus 3/4).
pub fn classic_pair() -> (Rc<GadgetExpr>, Rc<GadgetExpr>) {
    let t1 = merge(vec![single_edge()]);
    let ta = merge(vec![single_edge()]);
    let tb = merge(vec![single_edge(), merge(vec![single_edge()])]);
    let t2 = merge(vec![ta, tb]);
    (t1, t2)
}

/// Random pure-tree expression (no triangles) with at most `max_vertices`
/// expanded vertices; used by randomized cross-checks.
pub fn random_tree_expr<R: rand::Rng>(rng: &mut R, max_vertices: usize) -> Rc<GadgetExpr> {
    assert!(max_vertices >= 1);
    fn gen<R: rand::Rng>(rng: &mut R, budget: usize) -> (Rc<GadgetExpr>, usize) {
        // budget >= 1 vertices available for this subtree (its root counted
        // by the caller's merge vertex except at the top).
        if budget < 2 || rng.gen_bool(0.2) {
            return (degenerate(), 1);
        }
        let mut used = 2;
        let mut children = Vec::new();
        while used < budget && rng.gen_bool(0.55) && children.len() < 4 {
            let (ch, s) = gen(rng, budget - used + 1);
            used += s - 1;
            children.push(ch);
        }
        (merge(children), used)
    }
    gen(rng, max_vertices).0
}

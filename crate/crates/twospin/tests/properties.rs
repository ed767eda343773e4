//! Randomized invariants over the core library types: gadget evaluation
//! stays in the antiferromagnetic closure interval, wire formats round
//! trip, and the structural size law holds for arbitrary merge trees.

use std::rc::Rc;

use proptest::prelude::*;

use twospin::fixpoint::omega_at_field;
use twospin::gadget::{degenerate, eval_gadget, eval_r_of_lambda, eval_size, merge, GadgetExpr};
use twospin::graph::Graph;
use twospin::params::SpinParams;
use twospin::scalar::Scalar;

fn params() -> impl Strategy<Value = SpinParams> {
    (0i64..=6, 1i64..=6, 0i64..=6, 1i64..=6, 1i64..=9, 1i64..=9).prop_filter_map(
        "parameters must be antiferromagnetic",
        |(bn, bd, gn, gd, ln, ld)| {
            SpinParams::new(
                Scalar::from_ratio(bn, bd),
                Scalar::from_ratio(gn, gd),
                Scalar::from_ratio(ln, ld),
            )
            .ok()
        },
    )
}

fn tree_expr() -> impl Strategy<Value = Rc<GadgetExpr>> {
    Just(degenerate()).prop_recursive(3, 16, 3, |inner| {
        proptest::collection::vec(inner, 0..=3).prop_map(merge)
    })
}

// A bare degenerate root is a single vertex whose field is 1 regardless
// of the parameters; the closure interval only constrains gadgets whose
// root carries at least one edge.
fn rooted_expr() -> impl Strategy<Value = Rc<GadgetExpr>> {
    proptest::collection::vec(tree_expr(), 0..=3).prop_map(merge)
}

fn small_graph() -> impl Strategy<Value = Graph> {
    (1usize..=9).prop_flat_map(|n| {
        let pairs: Vec<(u32, u32)> =
            (0..n as u32).flat_map(|u| (u + 1..n as u32).map(move |v| (u, v))).collect();
        let len = pairs.len();
        proptest::collection::vec(any::<bool>(), len).prop_map(move |mask| {
            let chosen: Vec<(u32, u32)> = pairs
                .iter()
                .zip(&mask)
                .filter_map(|(&e, &keep)| keep.then_some(e))
                .collect();
            Graph::with_edges(n, &chosen).expect("distinct pairs below n form a valid graph")
        })
    })
}

proptest! {
    #[test]
    fn evaluation_stays_in_closure(p in params(), e in rooted_expr()) {
        let eval = eval_gadget(&e, &p).unwrap();
        prop_assert!(eval.r > p.gamma);
        if p.beta > Scalar::zero() {
            prop_assert!(&eval.r * &p.beta < Scalar::one());
        }
        prop_assert!(eval.zin > Scalar::zero());
        prop_assert!(eval.zout > Scalar::zero());
        let omega = omega_at_field(&p, &eval.r);
        prop_assert!(omega > Scalar::zero());
        prop_assert!(omega < Scalar::one());
    }

    #[test]
    fn field_matches_activity_parametrization(p in params(), e in rooted_expr()) {
        let eval = eval_gadget(&e, &p).unwrap();
        let (r, _slope) = eval_r_of_lambda(&e, &p).unwrap();
        prop_assert_eq!(eval.r, r);
    }

    #[test]
    fn merge_size_law(children in proptest::collection::vec(tree_expr(), 0..=4)) {
        let sum: u128 =
            children.iter().map(|c| eval_size(c).unwrap() - 1).sum();
        let merged = merge(children);
        prop_assert_eq!(eval_size(&merged).unwrap(), 2 + sum);
    }

    #[test]
    fn gadget_json_round_trips(e in tree_expr()) {
        let json = e.to_json();
        let back = GadgetExpr::from_json(&json).unwrap();
        prop_assert_eq!(&e, &back);
    }

    #[test]
    fn graph_json_round_trips(g in small_graph()) {
        let json = serde_json::to_string(&g).unwrap();
        let back: Graph = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    #[test]
    fn rational_text_round_trips(num in -1000i64..=1000, den in 1i64..=1000) {
        let x = Scalar::from_ratio(num, den);
        let back = Scalar::parse(&x.to_text()).unwrap();
        prop_assert_eq!(x, back);
    }
}

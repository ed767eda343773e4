//! End-to-end acceptance gate. Each test runs one named check from the
//! shared registry, prints its pass/fail summary line, and fails the
//! build if the check fails. Tolerances live inside the checks
//! themselves; nothing here is adjustable.

use std::path::PathBuf;

use twospin::checks::{check_named, CheckContext};

fn run(name: &str) {
    let def = check_named(name).unwrap_or_else(|| panic!("no check named {name}"));
    let ctx = CheckContext {
        binary: Some(PathBuf::from(env!("CARGO_BIN_EXE_twospin"))),
        ..CheckContext::default()
    };
    let outcome = def.run(&ctx);
    println!("{}", outcome.summary_line());
    assert!(outcome.passed, "{}", outcome.summary_line());
}

#[test]
fn classic_pair_exact_values() {
    run("classic-pair");
}

#[test]
fn random_gadgets_match_enumeration() {
    run("tree-sweep");
}

#[test]
fn fields_stay_in_closure_interval() {
    run("field-range");
}

#[test]
fn unit_field_curve_degeneracy_and_triangle_escape() {
    run("symmetric-point");
}

#[test]
fn critical_activity_and_verdict_flips() {
    run("criticality");
}

#[test]
fn bounding_sequence_brackets_fixpoint() {
    run("bounding");
}

#[test]
fn builder_contracts_geometrically() {
    run("builder-contraction");
}

#[test]
fn pair_search_returns_verified_pairs() {
    run("pair-search");
}

#[test]
fn bootstrap_extends_pair_family() {
    run("bootstrap");
}

#[test]
fn crossing_activity_with_derivatives() {
    run("crossing");
}

#[test]
fn interaction_constants_satisfy_identities() {
    run("interaction-constants");
}

#[test]
fn reduction_graph_structure_validates() {
    run("reduction-structure");
}

#[test]
fn composite_marginals_cancel() {
    run("composite-cancellation");
}

#[test]
fn perturbation_bound_holds() {
    run("perturbation");
}

#[test]
fn cli_output_independent_of_thread_count() {
    run("cli-determinism");
}

//! Command-line front end: exact gadget evaluation, enumeration oracles,
//! fixpoint diagnostics, pair construction, crossings, reduction assembly,
//! and the named self-checks.
//!
//! All numeric output is serialized as canonical text ("p/q" for rationals,
//! "digits@bits" for floats) inside compact JSON with sorted keys, so any
//! invocation is byte-reproducible regardless of the worker count.

use std::rc::Rc;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use twospin::checks::{check_named, registry, CheckContext, CheckDef};
use twospin::construct::{
    build_gadget, contraction_data, dense_family, find_crossing_lambda, find_pair,
    FindPairConfig,
};
use twospin::error::{Error, Result};
use twospin::fixpoint::{
    hardcore_lambda_c, in_nonuniqueness, ising_beta_c, ode_fixpoint, two_cycle_fixpoints,
    Verdict,
};
use twospin::gadget::{eval_gadget, GadgetExpr};
use twospin::graph::Graph;
use twospin::oracle::{magnetization, marginal, partition_function, OracleLimits};
use twospin::params::SpinParams;
use twospin::reduction::{build_reduction, PhaseGadgetSpec};
use twospin::scalar::Scalar;

#[derive(Parser)]
#[command(
    name = "twospin",
    version,
    about = "Tree field gadgets, uniqueness thresholds, matched pairs, and cut reductions for antiferromagnetic two-spin systems"
)]
struct Cli {
    /// Edge weight for two unoccupied endpoints, as `p/q` or an integer.
    #[arg(long, global = true, default_value = "1", value_name = "P/Q")]
    beta: String,
    /// Edge weight for two occupied endpoints.
    #[arg(long, global = true, default_value = "0", value_name = "P/Q")]
    gamma: String,
    /// Vertex activity.
    #[arg(long, global = true, default_value = "1", value_name = "P/Q")]
    lambda: String,
    /// Regular-tree degree for fixpoint and threshold queries.
    #[arg(long, global = true, default_value_t = 6)]
    delta: u32,
    /// Working precision in bits for float phases.
    #[arg(long, global = true, default_value_t = 256)]
    precision: u32,
    /// Worker threads; 0 keeps the library default. Output is identical
    /// for every value.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Seed for randomized sweeps inside `verify`.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate a gadget expression: effective field and magnetization gap.
    Eval {
        /// Gadget JSON file, or `-` for stdin.
        #[arg(long, value_name = "FILE")]
        gadget: String,
    },
    /// Exact Gibbs statistics of a graph by enumeration.
    Oracle {
        /// Graph JSON file, or `-` for stdin.
        #[arg(long, value_name = "FILE")]
        graph: String,
        /// One of `summary`, `z`, `magnetization`, `marginal`, `marginals`.
        #[arg(long, default_value = "summary")]
        op: String,
        /// Vertex for `marginal`.
        #[arg(long)]
        vertex: Option<u32>,
        /// Pin a vertex, `V=0` or `V=1`; repeatable. Turns any statistic
        /// into a conditional one.
        #[arg(long = "pin", value_name = "V=S")]
        pins: Vec<String>,
    },
    /// Tree-recursion fixpoint and the uniqueness verdict at the degree.
    Fixpoint,
    /// Critical activity and interaction strength at the degree.
    Critical,
    /// Build a gadget steered toward a target effective field.
    Build {
        /// Target field, as `p/q`.
        #[arg(long, value_name = "P/Q")]
        target: String,
        /// Steering steps; the error contracts geometrically in this count.
        #[arg(long, default_value_t = 12)]
        steps: u32,
    },
    /// Search for gadget pairs with matched fields and separated gaps.
    FindPair {
        /// Field tolerance in (0, 1/2), as `p/q`.
        #[arg(long, value_name = "P/Q")]
        tolerance: String,
        /// Number of pairs with pairwise-distinct fields.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Find the activity at which two gadgets carry equal fields.
    Crossing {
        #[arg(long, value_name = "FILE")]
        gadget1: String,
        #[arg(long, value_name = "FILE")]
        gadget2: String,
        /// Center of the search window, as `p/q`.
        #[arg(long, value_name = "P/Q")]
        lambda0: String,
        /// Window radius around the center.
        #[arg(long, value_name = "P/Q", default_value = "1/4")]
        window: String,
    },
    /// Assemble the composite graph that turns magnetization into cuts.
    Reduce {
        /// Cubic instance graph JSON file.
        #[arg(long, value_name = "FILE")]
        h: String,
        /// Phase gadget JSON file.
        #[arg(long, value_name = "FILE")]
        gadget: String,
        /// Tree gadget JSON file.
        #[arg(long, value_name = "FILE")]
        tree: String,
        /// Connection paths per side of each instance edge.
        #[arg(long, default_value_t = 1)]
        paths: u32,
    },
    /// Run named self-checks; all of them when none are named.
    Verify {
        /// Check name; repeatable. See `--list`.
        #[arg(long = "check", value_name = "NAME")]
        checks: Vec<String>,
        /// List the available checks instead of running them.
        #[arg(long)]
        list: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok((value, code)) => {
            match serde_json::to_string(&value) {
                Ok(text) => println!("{text}"),
                Err(e) => {
                    eprintln!("internal error: cannot serialize output: {e}");
                    std::process::exit(5);
                }
            }
            std::process::exit(code);
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<(Value, i32)> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| Error::Internal(format!("cannot size the worker pool: {e}")))?;
    }
    let params = SpinParams::new(
        Scalar::parse(&cli.beta)?,
        Scalar::parse(&cli.gamma)?,
        Scalar::parse(&cli.lambda)?,
    )?;
    let prec = cli.precision;

    let value = match &cli.cmd {
        Cmd::Eval { gadget } => {
            let expr = read_gadget(gadget)?;
            let eval = eval_gadget(&expr, &params)?;
            json!({ "R": eval.r.to_text(), "M": eval.m.to_text() })
        }
        Cmd::Oracle { graph, op, vertex, pins } => {
            let g = Graph::from_json(&read_input(graph)?)?;
            let pins = parse_pins(pins)?;
            let limits = OracleLimits::default();
            let configs = config_count(&g, &pins);
            let mut out = match op.as_str() {
                "z" => {
                    let z = conditioned(&g, &params, &pins, &limits)?.0;
                    json!({ "Z": z.to_text() })
                }
                "magnetization" => {
                    let occ = conditioned(&g, &params, &pins, &limits)?.1;
                    json!({ "magnetization": occ.to_text() })
                }
                "marginal" => {
                    let v = vertex
                        .ok_or_else(|| Error::Parse("marginal needs --vertex".into()))?;
                    let m = marginal(&g, &params, v, &pins, &limits)?;
                    json!({ "marginal": m.to_text(), "vertex": v })
                }
                "marginals" => {
                    let mut all = Vec::with_capacity(g.n);
                    for v in 0..g.n as u32 {
                        all.push(Value::String(
                            marginal(&g, &params, v, &pins, &limits)?.to_text(),
                        ));
                    }
                    json!({ "marginals": all })
                }
                "summary" => {
                    let (z, occ) = conditioned(&g, &params, &pins, &limits)?;
                    json!({ "Z": z.to_text(), "magnetization": occ.to_text() })
                }
                other => {
                    return Err(Error::Parse(format!("unknown oracle op '{other}'")));
                }
            };
            let obj = out.as_object_mut().expect("oracle output is an object");
            obj.insert("method".into(), Value::String("enumeration".into()));
            obj.insert("configurations".into(), Value::String(configs.to_string()));
            out
        }
        Cmd::Fixpoint => {
            let report = in_nonuniqueness(&params, cli.delta, prec)?;
            let fx = ode_fixpoint(&params.to_float(prec), prec)?;
            let mut out = json!({
                "delta": cli.delta,
                "x_star": report.x_star.to_text(),
                "f_prime_abs": report.f_prime_abs.to_text(),
                "omega_star": fx.omega_star.to_text(),
                "verdict": verdict_text(report.verdict),
            });
            if report.verdict == Verdict::NonUnique {
                let tc = two_cycle_fixpoints(&params, cli.delta, prec)?;
                let obj = out.as_object_mut().expect("fixpoint output is an object");
                obj.insert("q_plus".into(), Value::String(tc.q_plus.to_text()));
                obj.insert("q_minus".into(), Value::String(tc.q_minus.to_text()));
            }
            out
        }
        Cmd::Critical => {
            let lc = hardcore_lambda_c(cli.delta)?;
            let bc = ising_beta_c(cli.delta)?;
            json!({
                "delta": cli.delta,
                "lambda_c": lc.to_text(),
                "beta_c": bc.to_text(),
            })
        }
        Cmd::Build { target, steps } => {
            let x = Scalar::parse(target)?;
            let pf = params.to_float(prec);
            let fx = ode_fixpoint(&pf, prec)?;
            let density = &fx.omega_star / &Scalar::from_int(200);
            let tau1 = Scalar::from_ratio(1, 10_000);
            let family = dense_family(&params, &density, &tau1, prec)?;
            let cdata = contraction_data(&params, &family, prec)?;
            let (expr, _) = build_gadget(&params, &x, *steps, &family, &cdata, prec)?;
            let eval = eval_gadget(&expr, &pf)?;
            json!({
                "target": x.to_text(),
                "steps": steps,
                "R_achieved": eval.r.to_text(),
                "error": (&eval.r - &x).abs().to_text(),
                "size": eval.size.to_string(),
                "gadget": gadget_value(&expr)?,
            })
        }
        Cmd::FindPair { tolerance, count } => {
            let r = Scalar::parse(tolerance)?;
            let cfg = FindPairConfig { precision: prec, ..FindPairConfig::default() };
            let pairs = find_pair(&params, &r, *count, &cfg)?;
            let mut items = Vec::with_capacity(pairs.len());
            for pair in &pairs {
                items.push(json!({
                    "R_hat": pair.r_hat.to_text(),
                    "M_hat": pair.m_hat.to_text(),
                    "R1": pair.eval1.r.to_text(),
                    "R2": pair.eval2.r.to_text(),
                    "M1": pair.eval1.m.to_text(),
                    "M2": pair.eval2.m.to_text(),
                    "size1": pair.eval1.size.to_string(),
                    "size2": pair.eval2.size.to_string(),
                    "gadget1": gadget_value(&pair.expr1)?,
                    "gadget2": gadget_value(&pair.expr2)?,
                }));
            }
            json!({ "pairs": items })
        }
        Cmd::Crossing { gadget1, gadget2, lambda0, window } => {
            let e1 = read_gadget(gadget1)?;
            let e2 = read_gadget(gadget2)?;
            let center = Scalar::parse(lambda0)?;
            let radius = Scalar::parse(window)?;
            let cr = find_crossing_lambda(
                &e1,
                &e2,
                &params.beta,
                &params.gamma,
                &center,
                &radius,
                prec,
            )?;
            json!({
                "lambda_hat": cr.lambda_hat.to_text(),
                "bracket_lo": cr.bracket.0.to_text(),
                "bracket_hi": cr.bracket.1.to_text(),
                "residual": cr.residual.to_text(),
                "dR1": cr.dr1.to_text(),
                "dR2": cr.dr2.to_text(),
            })
        }
        Cmd::Reduce { h, gadget, tree, paths } => {
            let h_graph = Graph::from_json(&read_input(h)?)?;
            let spec: PhaseGadgetSpec = serde_json::from_str(&read_input(gadget)?)
                .map_err(|e| Error::Parse(format!("bad phase gadget: {e}")))?;
            let tree_expr = read_gadget(tree)?;
            let rg = build_reduction(&h_graph, &spec, &tree_expr, *paths, &params)?;
            let graph_value: Value = serde_json::from_str(&rg.graph.to_json())
                .map_err(|e| Error::Internal(format!("graph serialization: {e}")))?;
            let labels_value: Value = serde_json::from_str(&rg.labels_json())
                .map_err(|e| Error::Internal(format!("label serialization: {e}")))?;
            json!({
                "n": rg.graph.n,
                "edges": rg.graph.num_edges(),
                "graph": graph_value,
                "labels": labels_value,
            })
        }
        Cmd::Verify { checks, list } => {
            if *list {
                let entries: Vec<Value> = registry()
                    .iter()
                    .map(|d| json!({ "name": d.name, "summary": d.summary }))
                    .collect();
                return Ok((json!({ "checks": entries }), 0));
            }
            let defs: Vec<&CheckDef> = if checks.is_empty() {
                registry().iter().collect()
            } else {
                let mut sel = Vec::with_capacity(checks.len());
                for name in checks {
                    sel.push(
                        check_named(name)
                            .ok_or_else(|| Error::Parse(format!("unknown check '{name}'")))?,
                    );
                }
                sel
            };
            let ctx = CheckContext {
                precision: prec,
                seed: cli.seed,
                binary: std::env::current_exe().ok(),
            };
            let mut outcomes = Vec::with_capacity(defs.len());
            for def in defs {
                let outcome = def.run(&ctx);
                eprintln!("{}", outcome.summary_line());
                outcomes.push(outcome);
            }
            let all_passed = outcomes.iter().all(|o| o.passed);
            let value = serde_json::to_value(json!({ "checks": outcomes }))
                .map_err(|e| Error::Internal(format!("outcome serialization: {e}")))?;
            return Ok((value, if all_passed { 0 } else { 1 }));
        }
    };
    Ok((value, 0))
}

fn verdict_text(v: Verdict) -> &'static str {
    match v {
        Verdict::Unique => "unique",
        Verdict::NonUnique => "non-unique",
        Verdict::Boundary => "boundary",
    }
}

fn read_input(path: &str) -> Result<String> {
    if path == "-" {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut text)
            .map_err(|e| Error::Parse(format!("cannot read stdin: {e}")))?;
        Ok(text)
    } else {
        std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read {path}: {e}")))
    }
}

fn read_gadget(path: &str) -> Result<Rc<GadgetExpr>> {
    serde_json::from_str(&read_input(path)?)
        .map_err(|e| Error::Parse(format!("bad gadget expression: {e}")))
}

fn gadget_value(expr: &Rc<GadgetExpr>) -> Result<Value> {
    serde_json::to_value(expr)
        .map_err(|e| Error::Internal(format!("gadget serialization: {e}")))
}

fn parse_pins(texts: &[String]) -> Result<Vec<(u32, bool)>> {
    let mut pins = Vec::with_capacity(texts.len());
    for t in texts {
        let (v, s) = t
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("pin '{t}' is not of the form V=0 or V=1")))?;
        let vertex: u32 = v
            .parse()
            .map_err(|_| Error::Parse(format!("pin vertex '{v}' is not an integer")))?;
        let state = match s {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse(format!("pin state '{other}' is neither 0 nor 1")));
            }
        };
        pins.push((vertex, state));
    }
    Ok(pins)
}

/// Partition function and expected occupancy under the pins.
fn conditioned(
    g: &Graph,
    p: &SpinParams,
    pins: &[(u32, bool)],
    limits: &OracleLimits,
) -> Result<(Scalar, Scalar)> {
    if pins.is_empty() {
        Ok((partition_function(g, p, limits)?, magnetization(g, p, limits)?))
    } else {
        let summary = twospin::oracle::gibbs_summary(g, p, pins, &[], limits)?;
        let occ = summary.expected_occupancy()?;
        Ok((summary.z, occ))
    }
}

fn config_count(g: &Graph, pins: &[(u32, bool)]) -> u128 {
    let pinned: std::collections::BTreeSet<u32> = pins.iter().map(|&(v, _)| v).collect();
    let free = g.n.saturating_sub(pinned.len());
    1u128 << free.min(127)
}

//! A small imperative language and its compilation into probabilistic
//! automata by bounded symbolic execution.
//!
//! Programs are written in a structured syntax:
//!
//! ```text
//! program dialog
//! var focus
//! call newA()
//! call setTitle()
//! if (focus == 1) { call setItems() } else if (focus == 2) { call setItems() }
//! call show()
//! #accept done
//! ```
//!
//! `var` introduces symbolic inputs, `choose { .. } or { .. }` is a uniform
//! nondeterministic choice, and `#accept LABEL` marks a location of interest.

mod ast;
mod cfg;
mod exec;
mod parser;

pub use ast::{BinOp, Expr, Stmt};
pub use cfg::{lower, AcceptPoint, Cfg, Edge, Operation, Program};
pub use exec::{evaluate, feasibility, symbolic_execute, ExecOptions, Feasibility, Store, SymState, Value};
pub use parser::{parse_source, SourceProgram};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SymexecError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("undeclared variable `{name}` at {line}:{col}")]
    UndeclaredVariable { name: String, line: usize, col: usize },
    #[error("no accepting state reachable at location {location}")]
    NoAcceptingState { location: usize },
    #[error("unroll bound must be at least 1")]
    UnrollBoundZero,
    #[error("symbolic execution exceeded {limit} states")]
    StateLimitExceeded { limit: usize },
    #[error("no `#accept` location labelled `{0}`")]
    UnknownAcceptLabel(String),
}

/// Parses and lowers program text in one step.
pub fn parse_program(text: &str) -> Result<Program, SymexecError> {
    Ok(lower(&parse_source(text)?))
}

impl Program {
    pub fn accept_location(&self, label: &str) -> Result<usize, SymexecError> {
        self.accepts
            .iter()
            .find(|a| a.label == label)
            .map(|a| a.location)
            .ok_or_else(|| SymexecError::UnknownAcceptLabel(label.to_string()))
    }

    /// Compiles the program for its first location of interest.
    pub fn compile<P: crate::num::Probability>(
        &self,
        alphabet: &crate::gpa::Alphabet,
        opts: &ExecOptions,
    ) -> Result<crate::gpa::Automaton<P>, SymexecError> {
        symbolic_execute(&self.cfg, alphabet, self.accepts[0].location, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpa::{enumerate_behaviors, Semantics};
    use crate::gpa::{Alphabet, Automaton};
    use crate::num::rational;
    use num_rational::BigRational;
    use proptest::prelude::*;

    pub(crate) const DIALOG: &str = "program dialog
var focus
call newA()
call setTitle()
if (focus == 1) {
  call setItems()
} else if (focus == 2) {
  call setItems()
}
call show()
#accept done
";

    fn alphabet(names: &[&str]) -> Alphabet {
        Alphabet::new(names.iter().copied()).unwrap()
    }

    fn compile_exact(src: &str, names: &[&str]) -> Automaton<BigRational> {
        parse_program(src).unwrap().compile(&alphabet(names), &ExecOptions::default()).unwrap()
    }

    #[test]
    fn straight_line_lowering_has_three_locations() {
        let p = parse_program("x := 1; call show()").unwrap();
        assert_eq!(p.cfg.n_locations(), 3);
        assert!(matches!(p.cfg.edges()[0].op, Operation::Assign(..)));
        assert!(matches!(p.cfg.edges()[1].op, Operation::Call(..)));
        assert!(p.cfg.check().is_empty());
    }

    #[test]
    fn if_else_lowers_to_complementary_assume_pair() {
        let p = parse_program("var c; if (c) { call a() } else { call b() }").unwrap();
        let fan: Vec<_> = p.cfg.outgoing(0).collect();
        assert_eq!(fan.len(), 2);
        match (&fan[0].op, &fan[1].op) {
            (Operation::Assume(x), Operation::Assume(y)) => assert_eq!(*y, Expr::not(x.clone())),
            other => panic!("{other:?}"),
        }
        assert!(p.cfg.check().is_empty());
    }

    #[test]
    fn dialog_program_reproduces_worked_example_distribution() {
        let names = ["newA", "setTitle", "setItems", "show"];
        let a = compile_exact(DIALOG, &names);
        assert!(a.validate().is_empty(), "{:?}", a.validate());
        let d = enumerate_behaviors(&a, &Semantics::default()).unwrap();
        let alpha = alphabet(&names);
        let theta1 = alpha.behavior(&names).unwrap();
        let theta2 = alpha.behavior(&["newA", "setTitle", "show"]).unwrap();
        assert_eq!(d.prob(&theta1), rational(2, 3));
        assert_eq!(d.prob(&theta2), rational(1, 3));
        assert_eq!(d.accepting_runs(), 3);
        // branches rejoin in one symbolic state, so the three runs share it
        assert_eq!(a.accepting().len(), 1);
    }

    #[test]
    fn straight_line_calls_become_chain() {
        let a = compile_exact("call a(); call b()", &["a", "b"]);
        assert_eq!(a.n_states(), 3);
        assert_eq!(a.transitions().len(), 2);
        assert!(a.transitions().iter().all(|t| t.prob == rational(1, 1)));
    }

    #[test]
    fn infeasible_branch_is_excluded() {
        let a = compile_exact("if (1 > 2) { call a() } else { call b() }", &["a", "b"]);
        let d = enumerate_behaviors(&a, &Semantics::default()).unwrap();
        assert_eq!(d.support_len(), 1);
        assert!(a.transitions().iter().all(|t| t.prob == rational(1, 1)));
    }

    #[test]
    fn opaque_branch_splits_evenly() {
        let a = compile_exact("var c; if (c > 0) { call a() } else { call b() }", &["a", "b"]);
        let halves = a.transitions().iter().filter(|t| t.prob == rational(1, 2)).count();
        assert_eq!(halves, 2);
    }

    #[test]
    fn calls_outside_alphabet_are_silent() {
        let a = compile_exact("call a(); call log(); call b()", &["a", "b"]);
        let d = enumerate_behaviors(&a, &Semantics::default()).unwrap();
        let ab = alphabet(&["a", "b"]).behavior(&["a", "b"]).unwrap();
        assert_eq!(d.prob(&ab), rational(1, 1));
    }

    #[test]
    fn loops_unroll_up_to_bound() {
        let src = "var n; i := 0; while (i < n) { call step(); i := i + 1 } call done()";
        let p = parse_program(src).unwrap();
        let alpha = alphabet(&["step", "done"]);
        for bound in 1..=4u32 {
            let opts = ExecOptions { unroll_bound: bound, ..Default::default() };
            let a: Automaton<BigRational> = p.compile(&alpha, &opts).unwrap();
            assert!(a.validate().is_empty());
            let d = enumerate_behaviors(&a, &Semantics::default()).unwrap();
            // zero through `bound` iterations
            assert_eq!(d.support_len(), bound as usize + 1);
        }
    }

    #[test]
    fn constant_loop_runs_exactly() {
        let src = "i := 0; while (i < 2) { call step(); i := i + 1 } call done()";
        let a = compile_exact(src, &["step", "done"]);
        let d = enumerate_behaviors(&a, &Semantics::default()).unwrap();
        let b = alphabet(&["step", "done"]).behavior(&["step", "step", "done"]).unwrap();
        assert_eq!(d.prob(&b), rational(1, 1));
    }

    #[test]
    fn unroll_bound_zero_is_rejected() {
        let p = parse_program("call a()").unwrap();
        let opts = ExecOptions { unroll_bound: 0, ..Default::default() };
        let r: Result<Automaton<f64>, _> = p.compile(&alphabet(&["a"]), &opts);
        assert_eq!(r.unwrap_err(), SymexecError::UnrollBoundZero);
    }

    #[test]
    fn unreachable_accept_location_is_an_error() {
        let p = parse_program("if (false) { call a()\n#accept never\n } call b()").unwrap();
        let r: Result<Automaton<f64>, _> = p.compile(&alphabet(&["a", "b"]), &ExecOptions::default());
        assert!(matches!(r, Err(SymexecError::NoAcceptingState { .. })));
    }

    #[test]
    fn dead_branch_mass_moves_to_live_siblings() {
        // the middle arm dead-ends on an unsatisfiable assume
        let src = "var c; choose { call a() } or { assume(false); call b() } or { call c() }";
        let a = compile_exact(src, &["a", "b", "c"]);
        assert!(a.validate().is_empty());
        let d = enumerate_behaviors(&a, &Semantics::default()).unwrap();
        assert_eq!(d.support_len(), 2);
        assert_eq!(*d.normalizer(), rational(1, 1));
    }

    #[test]
    fn accept_labels_resolve() {
        let p = parse_program("call a()\n#accept mid\ncall b()\n#accept end\n").unwrap();
        assert_eq!(p.accepts.len(), 2);
        assert!(p.accept_location("end").is_ok());
        assert_eq!(p.accept_location("nope").unwrap_err(), SymexecError::UnknownAcceptLabel("nope".into()));
        let alpha = alphabet(&["a", "b"]);
        let mid: Automaton<BigRational> =
            symbolic_execute(&p.cfg, &alpha, p.accept_location("mid").unwrap(), &ExecOptions::default()).unwrap();
        let d = enumerate_behaviors(&mid, &Semantics::default()).unwrap();
        assert_eq!(d.prob(&alpha.behavior(&["a"]).unwrap()), rational(1, 1));
    }

    #[test]
    fn state_limit_is_enforced() {
        let src = "var n; i := 0; while (i < n) { i := i + 1 }";
        let p = parse_program(src).unwrap();
        let opts = ExecOptions { unroll_bound: 50, max_states: 20 };
        let r: Result<Automaton<f64>, _> = p.compile(&alphabet(&["a"]), &opts);
        assert_eq!(r.unwrap_err(), SymexecError::StateLimitExceeded { limit: 20 });
    }

    /// Counts feasible CFG paths from the start to `target` by direct
    /// depth-first traversal with the same constant-folding store.
    fn count_paths(cfg: &Cfg, loc: usize, store: &Store, target: usize) -> u64 {
        let mut total = u64::from(loc == target);
        for e in cfg.outgoing(loc) {
            let mut s = store.clone();
            match &e.op {
                Operation::Assign(x, ex) => {
                    s.insert(x.clone(), evaluate(ex, store));
                }
                Operation::Assume(c) if feasibility(c, store) == Feasibility::FalseOnly => continue,
                _ => {}
            }
            total += count_paths(cfg, e.to, &s, target);
        }
        total
    }

    fn arb_stmt() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            "[abc]".prop_map(|m| format!("call {m}();")),
            (0i64..3).prop_map(|k| format!("x := {k};")),
            Just("x := x + 1;".to_string()),
        ];
        leaf.prop_recursive(3, 16, 3, |inner| {
            let block = prop::collection::vec(inner, 0..3).prop_map(|v| v.join(" "));
            prop_oneof![
                (block.clone(), block.clone(), 0i64..3)
                    .prop_map(|(a, b, k)| format!("if (x == {k}) {{ {a} }} else {{ {b} }}")),
                (block.clone(), block.clone()).prop_map(|(a, b)| format!("if (y) {{ {a} }} else {{ {b} }}")),
                (block.clone(), block).prop_map(|(a, b)| format!("choose {{ {a} }} or {{ {b} }}")),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn loop_free_runs_match_feasible_paths(body in prop::collection::vec(arb_stmt(), 1..5)) {
            let src = format!("var y; x := 0; {}", body.join(" "));
            let p = parse_program(&src).unwrap();
            let alpha = alphabet(&["a", "b", "c"]);
            let a: Automaton<BigRational> = p.compile(&alpha, &ExecOptions::default()).unwrap();
            prop_assert!(a.validate().is_empty());
            let d = enumerate_behaviors(&a, &Semantics::default()).unwrap();
            let expected = count_paths(&p.cfg, 0, &Store::new(), p.cfg.terminal());
            prop_assert_eq!(d.accepting_runs(), expected);
            // emitted symbols are in-alphabet call targets only
            let features = crate::gpa::extract_features(&a);
            for s in features.iter() {
                prop_assert!(p.calls.contains(alpha.name(s).unwrap()));
            }
            // compilation is deterministic
            let again: Automaton<BigRational> = p.compile(&alpha, &ExecOptions::default()).unwrap();
            prop_assert_eq!(a, again);
        }
    }
}

//! Generative probabilistic automata: the program abstraction every other
//! module consumes.
//!
//! An [`Automaton`] emits a [`Symbol`] (possibly [`Symbol::EPSILON`]) on each
//! transition. Accepting runs induce a distribution over [`Behavior`]s, which
//! [`enumerate_behaviors`] computes exactly and [`sample_accepting_run`]
//! draws from by rejection sampling.

mod io;
mod semantics;

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Probability;

pub use io::{automaton_from_json, automaton_to_json, AutomatonDoc, TransitionDoc, AUTOMATON_FORMAT_VERSION};
pub use semantics::{
    enumerate_behaviors, sample_accepting_run, BehaviorDistribution, Semantics, DEFAULT_HALT_PROB,
    DEFAULT_MAX_LEN, DEFAULT_MAX_TRUNCATED_MASS, DEFAULT_REJECTION_BUDGET,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpaError {
    #[error("duplicate symbol name `{0}`")]
    DuplicateSymbol(String),
    #[error("symbol name `{0}` is reserved")]
    ReservedSymbol(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("symbol index {index} outside alphabet of size {size}")]
    SymbolOutOfRange { index: usize, size: usize },
    #[error("behaviors cannot contain the empty symbol")]
    EpsilonInBehavior,
    #[error("no accepting run of length <= {max_len}")]
    NoAcceptingRun { max_len: usize },
    #[error("truncated probability mass {mass:e} exceeds limit {limit:e}; raise max_len")]
    TruncatedMass { mass: f64, limit: f64 },
    #[error("rejection sampling gave up after {budget} consecutive rejections")]
    SamplingBudgetExceeded { budget: u64 },
    #[error("invalid automaton document: {0}")]
    Format(String),
}

/// Index of an observable symbol, or the empty symbol.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Symbol(u32);

impl Symbol {
    /// The empty symbol. Never part of a [`Behavior`] or [`FeatureSet`].
    pub const EPSILON: Symbol = Symbol(u32::MAX);

    pub fn new(index: usize) -> Self {
        assert!(index < u32::MAX as usize, "symbol index overflow");
        Symbol(index as u32)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_epsilon(self) -> bool {
        self == Self::EPSILON
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_epsilon() {
            f.write_str("ε")
        } else {
            write!(f, "#{}", self.0)
        }
    }
}

/// Ordered, duplicate-free list of symbol names.
///
/// The sequence model appends two sentinel positions after the last real
/// symbol: [`Alphabet::start_index`] and [`Alphabet::end_index`]. Their names
/// are reserved so a program can never emit them.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Alphabet {
    names: Vec<String>,
    index: HashMap<String, Symbol>,
}

impl Alphabet {
    pub const START: &'static str = "<start>";
    pub const END: &'static str = "<end>";

    pub fn new<I, S>(names: I) -> Result<Self, GpaError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut alphabet = Alphabet::default();
        for name in names {
            alphabet.push(name.into())?;
        }
        Ok(alphabet)
    }

    fn push(&mut self, name: String) -> Result<Symbol, GpaError> {
        if name == Self::START || name == Self::END || name.is_empty() {
            return Err(GpaError::ReservedSymbol(name));
        }
        if self.index.contains_key(&name) {
            return Err(GpaError::DuplicateSymbol(name));
        }
        let sym = Symbol::new(self.names.len());
        self.index.insert(name.clone(), sym);
        self.names.push(name);
        Ok(sym)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn symbol(&self, name: &str) -> Option<Symbol> {
        self.index.get(name).copied()
    }

    pub fn name(&self, sym: Symbol) -> Option<&str> {
        self.names.get(sym.index()).map(String::as_str)
    }

    pub fn contains(&self, sym: Symbol) -> bool {
        !sym.is_epsilon() && sym.index() < self.names.len()
    }

    pub fn symbols(&self) -> impl Iterator<Item = Symbol> + '_ {
        (0..self.names.len()).map(Symbol::new)
    }

    /// Sequence-model vocabulary size: real symbols plus START and END.
    pub fn vocab_size(&self) -> usize {
        self.names.len() + 2
    }

    pub fn start_index(&self) -> usize {
        self.names.len()
    }

    pub fn end_index(&self) -> usize {
        self.names.len() + 1
    }

    pub fn behavior<S: AsRef<str>>(&self, names: &[S]) -> Result<Behavior, GpaError> {
        names
            .iter()
            .map(|n| {
                self.symbol(n.as_ref())
                    .ok_or_else(|| GpaError::UnknownSymbol(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Behavior)
    }

    pub fn behavior_names(&self, behavior: &Behavior) -> Vec<String> {
        behavior
            .symbols()
            .iter()
            .map(|&s| self.name(s).unwrap_or("?").to_string())
            .collect()
    }
}

/// A finite word over the observable symbols.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Behavior(Vec<Symbol>);

impl Behavior {
    pub fn new(symbols: Vec<Symbol>) -> Result<Self, GpaError> {
        if symbols.iter().any(|s| s.is_epsilon()) {
            return Err(GpaError::EpsilonInBehavior);
        }
        Ok(Behavior(symbols))
    }

    /// Builds a behavior from raw emissions, dropping ε.
    pub fn from_emissions<I: IntoIterator<Item = Symbol>>(emissions: I) -> Self {
        Behavior(emissions.into_iter().filter(|s| !s.is_epsilon()).collect())
    }

    pub fn empty() -> Self {
        Behavior(Vec::new())
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn pushed(&self, sym: Symbol) -> Behavior {
        if sym.is_epsilon() {
            return self.clone();
        }
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.extend_from_slice(&self.0);
        v.push(sym);
        Behavior(v)
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("⟨")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{s}")?;
        }
        f.write_str("⟩")
    }
}

/// Set of observable symbols an automaton can emit.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct FeatureSet(BTreeSet<Symbol>);

impl FeatureSet {
    pub fn new<I: IntoIterator<Item = Symbol>>(symbols: I) -> Self {
        FeatureSet(symbols.into_iter().filter(|s| !s.is_epsilon()).collect())
    }

    pub fn contains(&self, sym: Symbol) -> bool {
        self.0.contains(&sym)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Symbol> + '_ {
        self.0.iter().copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition<P> {
    pub from: usize,
    pub symbol: Symbol,
    pub prob: P,
    pub to: usize,
}

impl<P> Transition<P> {
    pub fn new(from: usize, symbol: Symbol, prob: P, to: usize) -> Self {
        Transition { from, symbol, prob, to }
    }
}

/// A generative probabilistic automaton over states `0..n_states`.
///
/// Construction never fails; use [`Automaton::validate`] to list invariant
/// violations. Sampling and enumeration assume a valid automaton.
#[derive(Clone, Debug, PartialEq)]
pub struct Automaton<P> {
    n_states: usize,
    initial: usize,
    accepting: BTreeSet<usize>,
    transitions: Vec<Transition<P>>,
    outgoing: Vec<Vec<usize>>,
}

impl<P: Probability> Automaton<P> {
    pub fn new<I>(n_states: usize, initial: usize, accepting: I, transitions: Vec<Transition<P>>) -> Self
    where
        I: IntoIterator<Item = usize>,
    {
        let mut outgoing = vec![Vec::new(); n_states];
        for (i, t) in transitions.iter().enumerate() {
            if t.from < n_states {
                outgoing[t.from].push(i);
            }
        }
        Automaton {
            n_states,
            initial,
            accepting: accepting.into_iter().collect(),
            transitions,
            outgoing,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn accepting(&self) -> &BTreeSet<usize> {
        &self.accepting
    }

    pub fn is_accepting(&self, state: usize) -> bool {
        self.accepting.contains(&state)
    }

    pub fn transitions(&self) -> &[Transition<P>] {
        &self.transitions
    }

    /// Indices into [`Automaton::transitions`] leaving `state`.
    pub fn outgoing(&self, state: usize) -> &[usize] {
        self.outgoing.get(state).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Same structure with every probability converted by `f`.
    pub fn map_probs<Q: Probability>(&self, mut f: impl FnMut(&P) -> Q) -> Automaton<Q> {
        let transitions = self
            .transitions
            .iter()
            .map(|t| Transition::new(t.from, t.symbol, f(&t.prob), t.to))
            .collect();
        Automaton::new(self.n_states, self.initial, self.accepting.iter().copied(), transitions)
    }

    /// Copy with the given transition relabelled to emit `symbol`.
    pub fn with_symbol(&self, transition: usize, symbol: Symbol) -> Self {
        let mut out = self.clone();
        out.transitions[transition].symbol = symbol;
        out
    }

    /// Copy with `states` made infeasible: every incident transition is
    /// dropped and the states stop accepting. State ids are preserved.
    pub fn without_states(&self, states: &[usize]) -> Self {
        let dead: BTreeSet<usize> = states.iter().copied().collect();
        let transitions = self
            .transitions
            .iter()
            .filter(|t| !dead.contains(&t.from) && !dead.contains(&t.to))
            .cloned()
            .collect();
        let accepting = self.accepting.iter().copied().filter(|q| !dead.contains(q));
        Automaton::new(self.n_states, self.initial, accepting, transitions)
    }

    /// States reachable from the initial state.
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.n_states];
        if self.initial >= self.n_states {
            return seen;
        }
        let mut queue = VecDeque::from([self.initial]);
        seen[self.initial] = true;
        while let Some(q) = queue.pop_front() {
            for &ti in self.outgoing(q) {
                let to = self.transitions[ti].to;
                if to < self.n_states && !seen[to] {
                    seen[to] = true;
                    queue.push_back(to);
                }
            }
        }
        seen
    }

    /// Every invariant violation; empty for a valid automaton.
    ///
    /// Unreachable accepting states are reported with [`Severity::Warning`].
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.initial >= self.n_states {
            out.push(Violation::InitialOutOfRange { initial: self.initial, n_states: self.n_states });
        }
        for &q in &self.accepting {
            if q >= self.n_states {
                out.push(Violation::AcceptingOutOfRange { state: q });
            }
        }
        let zero = P::zero();
        let one = P::one();
        for (i, t) in self.transitions.iter().enumerate() {
            if t.from >= self.n_states || t.to >= self.n_states {
                out.push(Violation::EndpointOutOfRange { transition: i });
            }
            if !(t.prob > zero && t.prob <= one) {
                out.push(Violation::ProbabilityOutOfRange { transition: i, prob: t.prob.approx_f64() });
            }
        }
        for q in 0..self.n_states {
            let outs = self.outgoing(q);
            if outs.is_empty() {
                continue;
            }
            let sum = outs
                .iter()
                .fold(P::zero(), |acc, &ti| acc + self.transitions[ti].prob.clone());
            if !Probability::is_one(&sum) {
                out.push(Violation::OutgoingSumNotOne { state: q, sum: sum.approx_f64() });
            }
        }
        let reach = self.reachable();
        for &q in &self.accepting {
            if q < self.n_states && !reach[q] {
                out.push(Violation::UnreachableAccepting { state: q });
            }
        }
        out
    }

    /// `true` when [`Automaton::validate`] reports no errors (warnings allowed).
    pub fn is_valid(&self) -> bool {
        self.validate().iter().all(|v| v.severity() == Severity::Warning)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    InitialOutOfRange { initial: usize, n_states: usize },
    AcceptingOutOfRange { state: usize },
    EndpointOutOfRange { transition: usize },
    ProbabilityOutOfRange { transition: usize, prob: f64 },
    OutgoingSumNotOne { state: usize, sum: f64 },
    UnreachableAccepting { state: usize },
}

impl Violation {
    pub fn severity(&self) -> Severity {
        match self {
            Violation::UnreachableAccepting { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InitialOutOfRange { initial, n_states } => {
                write!(f, "initial state {initial} is not among the {n_states} states")
            }
            Violation::AcceptingOutOfRange { state } => {
                write!(f, "accepting state {state} is not a state of the automaton")
            }
            Violation::EndpointOutOfRange { transition } => {
                write!(f, "transition {transition} references a missing state")
            }
            Violation::ProbabilityOutOfRange { transition, prob } => write!(
                f,
                "transition probability must be in (0,1] (transition {transition} has {prob})"
            ),
            Violation::OutgoingSumNotOne { state, sum } => {
                write!(f, "outgoing probabilities do not sum to 1 (state {state} sums to {sum})")
            }
            Violation::UnreachableAccepting { state } => {
                write!(f, "warning: accepting state {state} is unreachable")
            }
        }
    }
}

/// A finite sequence of chained transitions starting at the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Run<P> {
    pub steps: Vec<Transition<P>>,
    /// Product of the transition probabilities.
    pub prob: P,
}

impl<P: Probability> Run<P> {
    pub fn end_state(&self, initial: usize) -> usize {
        self.steps.last().map(|t| t.to).unwrap_or(initial)
    }
}

/// The behavior generated by a run: its emissions with ε removed.
pub fn behavior_of<P>(run: &Run<P>) -> Behavior {
    Behavior::from_emissions(run.steps.iter().map(|t| t.symbol))
}

/// All non-ε symbols appearing on any transition.
pub fn extract_features<P>(a: &Automaton<P>) -> FeatureSet {
    FeatureSet::new(a.transitions.iter().map(|t| t.symbol))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use num_rational::BigRational;

    use crate::num::rational;

    pub const DIALOG_EXAMPLE_NAMES: [&str; 4] = ["newA", "setTitle", "setItems", "show"];

    /// The dialog-box automaton: a 3-way uniform focus test after
    /// `setTitle`, two arms adding items, one falling through to `show`.
    /// State 9 is the only state on the run that produces the short behavior.
    pub fn dialog_example() -> (Alphabet, Automaton<BigRational>) {
        let alphabet = Alphabet::new(DIALOG_EXAMPLE_NAMES).unwrap();
        let s = |n: &str| alphabet.symbol(n).unwrap();
        let third = rational(1, 3);
        let one = rational(1, 1);
        let t = vec![
            Transition::new(0, s("newA"), one.clone(), 1),
            Transition::new(1, s("setTitle"), third.clone(), 2),
            Transition::new(1, s("setTitle"), third.clone(), 3),
            Transition::new(1, s("setTitle"), third, 4),
            Transition::new(2, s("setItems"), one.clone(), 5),
            Transition::new(3, s("setItems"), one.clone(), 6),
            Transition::new(5, s("show"), one.clone(), 7),
            Transition::new(6, s("show"), one.clone(), 8),
            Transition::new(4, s("show"), one, 9),
        ];
        let a = Automaton::new(10, 0, [7, 8, 9], t);
        (alphabet, a)
    }

    pub const DIALOG_EXAMPLE_THETA2_STATE: usize = 9;

    pub fn single_path(names: &[&str]) -> (Alphabet, Automaton<f64>) {
        let alphabet = Alphabet::new(names.iter().copied()).unwrap();
        let t = (0..names.len())
            .map(|i| Transition::new(i, Symbol::new(i), 1.0, i + 1))
            .collect();
        let a = Automaton::new(names.len() + 1, 0, [names.len()], t);
        (alphabet, a)
    }
}

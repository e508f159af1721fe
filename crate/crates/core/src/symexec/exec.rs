use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use super::ast::{BinOp, Expr};
use super::cfg::{Cfg, Operation};
use super::SymexecError;
use crate::gpa::{Alphabet, Automaton, Symbol, Transition};
use crate::num::Probability;

/// Abstract value of a program variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(i64),
    Bool(bool),
    /// Opaque symbolic input or anything constant folding cannot resolve.
    Unknown,
}

/// Variable store; absent variables read as [`Value::Unknown`].
pub type Store = BTreeMap<String, Value>;

/// Outcome of constant-folding a branch condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feasibility {
    TrueOnly,
    FalseOnly,
    Unknown,
}

pub fn evaluate(expr: &Expr, store: &Store) -> Value {
    use Value::*;
    match expr {
        Expr::Int(n) => Int(*n),
        Expr::Bool(b) => Bool(*b),
        Expr::Var(v) => store.get(v).cloned().unwrap_or(Unknown),
        Expr::Neg(e) => match evaluate(e, store) {
            Int(n) => n.checked_neg().map_or(Unknown, Int),
            _ => Unknown,
        },
        Expr::Not(e) => match evaluate(e, store) {
            Bool(b) => Bool(!b),
            _ => Unknown,
        },
        Expr::Bin(op, a, b) => {
            let (x, y) = (evaluate(a, store), evaluate(b, store));
            match (op, x, y) {
                // short-circuit on a known operand even if the other is unknown
                (BinOp::And, Bool(false), _) | (BinOp::And, _, Bool(false)) => Bool(false),
                (BinOp::Or, Bool(true), _) | (BinOp::Or, _, Bool(true)) => Bool(true),
                (BinOp::And, Bool(p), Bool(q)) => Bool(p && q),
                (BinOp::Or, Bool(p), Bool(q)) => Bool(p || q),
                (BinOp::Add, Int(p), Int(q)) => p.checked_add(q).map_or(Unknown, Int),
                (BinOp::Sub, Int(p), Int(q)) => p.checked_sub(q).map_or(Unknown, Int),
                (BinOp::Eq, Int(p), Int(q)) => Bool(p == q),
                (BinOp::Ne, Int(p), Int(q)) => Bool(p != q),
                (BinOp::Eq, Bool(p), Bool(q)) => Bool(p == q),
                (BinOp::Ne, Bool(p), Bool(q)) => Bool(p != q),
                (BinOp::Lt, Int(p), Int(q)) => Bool(p < q),
                (BinOp::Le, Int(p), Int(q)) => Bool(p <= q),
                (BinOp::Gt, Int(p), Int(q)) => Bool(p > q),
                (BinOp::Ge, Int(p), Int(q)) => Bool(p >= q),
                _ => Unknown,
            }
        }
    }
}

/// Decides a condition by constant folding under `store`.
///
/// There is no theory reasoning: `x > 0 && x < 0` with `x` unknown stays
/// [`Feasibility::Unknown`].
pub fn feasibility(cond: &Expr, store: &Store) -> Feasibility {
    match evaluate(cond, store) {
        Value::Bool(true) => Feasibility::TrueOnly,
        Value::Bool(false) => Feasibility::FalseOnly,
        _ => Feasibility::Unknown,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecOptions {
    /// Maximum number of times any loop head may be re-entered along a path.
    pub unroll_bound: u32,
    /// Abort when more symbolic states than this are discovered.
    pub max_states: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions { unroll_bound: 3, max_states: 200_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SymState {
    pub location: usize,
    pub store: Store,
    pub unroll_counts: BTreeMap<usize, u32>,
}

struct Step {
    symbol: Symbol,
    to: usize,
}

/// Compiles `cfg` into an automaton whose accepting states are the
/// symbolic states at `accept_at`.
///
/// Symbolic states that cannot reach an accepting state are removed and
/// the surviving branches of each assume fan share probability uniformly.
pub fn symbolic_execute<P: Probability>(
    cfg: &Cfg,
    alphabet: &Alphabet,
    accept_at: usize,
    opts: &ExecOptions,
) -> Result<Automaton<P>, SymexecError> {
    if opts.unroll_bound == 0 {
        return Err(SymexecError::UnrollBoundZero);
    }
    if accept_at >= cfg.n_locations() {
        return Err(SymexecError::NoAcceptingState { location: accept_at });
    }
    let back: BTreeSet<usize> = cfg.back_edges();
    let back_targets: Vec<Option<usize>> = {
        let mut v = vec![None; cfg.edges().len()];
        for &i in &back {
            v[i] = Some(cfg.edges()[i].to);
        }
        v
    };

    let mut states: Vec<SymState> = Vec::new();
    let mut ids: HashMap<SymState, usize> = HashMap::new();
    let mut succ: Vec<Vec<Step>> = Vec::new();
    let mut is_fan: Vec<bool> = Vec::new();
    let mut queue = VecDeque::new();

    let init = SymState { location: cfg.initial(), store: Store::new(), unroll_counts: BTreeMap::new() };
    ids.insert(init.clone(), 0);
    states.push(init);
    succ.push(Vec::new());
    is_fan.push(false);
    queue.push_back(0usize);

    while let Some(id) = queue.pop_front() {
        let state = states[id].clone();
        let mut steps = Vec::new();
        let mut fan = false;
        for (ei, edge) in cfg.outgoing_indexed(state.location) {
            let mut next = SymState { location: edge.to, ..state.clone() };
            let symbol = match &edge.op {
                Operation::Assign(x, e) => {
                    next.store.insert(x.clone(), evaluate(e, &state.store));
                    Symbol::EPSILON
                }
                Operation::Call(m, _) => alphabet.symbol(m).unwrap_or(Symbol::EPSILON),
                Operation::Assume(c) => {
                    fan = true;
                    if feasibility(c, &state.store) == Feasibility::FalseOnly {
                        continue;
                    }
                    Symbol::EPSILON
                }
            };
            if let Some(head) = back_targets[ei] {
                let count = next.unroll_counts.entry(head).or_insert(0);
                *count += 1;
                if *count > opts.unroll_bound {
                    continue;
                }
            }
            let to = match ids.get(&next) {
                Some(&t) => t,
                None => {
                    let t = states.len();
                    if t >= opts.max_states {
                        return Err(SymexecError::StateLimitExceeded { limit: opts.max_states });
                    }
                    ids.insert(next.clone(), t);
                    states.push(next);
                    succ.push(Vec::new());
                    is_fan.push(false);
                    queue.push_back(t);
                    t
                }
            };
            steps.push(Step { symbol, to });
        }
        succ[id] = steps;
        is_fan[id] = fan;
    }

    // co-reachability from accepting states
    let n = states.len();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (from, steps) in succ.iter().enumerate() {
        for s in steps {
            preds[s.to].push(from);
        }
    }
    let mut live = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&i| states[i].location == accept_at).collect();
    for &i in &stack {
        live[i] = true;
    }
    while let Some(i) = stack.pop() {
        for &p in &preds[i] {
            if !live[p] {
                live[p] = true;
                stack.push(p);
            }
        }
    }
    if !live[0] {
        return Err(SymexecError::NoAcceptingState { location: accept_at });
    }

    // renumber surviving states breadth-first from the initial state
    let mut new_id = vec![usize::MAX; n];
    let mut order = Vec::new();
    let mut q = VecDeque::from([0usize]);
    new_id[0] = 0;
    while let Some(i) = q.pop_front() {
        order.push(i);
        for s in &succ[i] {
            if live[s.to] && new_id[s.to] == usize::MAX {
                new_id[s.to] = order.len() + q.len();
                q.push_back(s.to);
            }
        }
    }

    let mut transitions = Vec::new();
    for &i in &order {
        let kept: Vec<&Step> = succ[i].iter().filter(|s| live[s.to]).collect();
        for s in &kept {
            let prob = if is_fan[i] { P::reciprocal_of(kept.len()) } else { P::one() };
            transitions.push(Transition::new(new_id[i], s.symbol, prob, new_id[s.to]));
        }
    }
    let accepting = order.iter().filter(|&&i| states[i].location == accept_at).map(|&i| new_id[i]);
    Ok(Automaton::new(order.len(), 0, accepting.collect::<Vec<_>>(), transitions))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(pairs: &[(&str, Value)]) -> Store {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn gt0() -> Expr {
        Expr::Bin(BinOp::Gt, Box::new(Expr::Var("x".into())), Box::new(Expr::Int(0)))
    }

    #[test]
    fn feasibility_folds_constants() {
        assert_eq!(feasibility(&gt0(), &store(&[("x", Value::Int(5))])), Feasibility::TrueOnly);
        assert_eq!(feasibility(&gt0(), &store(&[("x", Value::Int(-1))])), Feasibility::FalseOnly);
        assert_eq!(feasibility(&gt0(), &store(&[("x", Value::Unknown)])), Feasibility::Unknown);
        let lt0 = Expr::Bin(BinOp::Lt, Box::new(Expr::Var("x".into())), Box::new(Expr::Int(0)));
        let contradiction = Expr::and(gt0(), lt0);
        assert_eq!(feasibility(&contradiction, &store(&[("x", Value::Unknown)])), Feasibility::Unknown);
    }

    #[test]
    fn known_conjunct_decides_mixed_condition() {
        let e = Expr::and(Expr::Bool(false), gt0());
        assert_eq!(feasibility(&e, &Store::new()), Feasibility::FalseOnly);
        let overflow = Expr::Bin(BinOp::Add, Box::new(Expr::Int(i64::MAX)), Box::new(Expr::Int(1)));
        assert_eq!(evaluate(&overflow, &Store::new()), Value::Unknown);
    }
}

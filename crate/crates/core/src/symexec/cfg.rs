use std::collections::{BTreeMap, BTreeSet};

use super::ast::{Expr, Stmt};
use super::parser::SourceProgram;

/// Basic operation labelling a CFG edge.
#[derive(Clone, Debug, PartialEq)]
pub enum Operation {
    Assign(String, Expr),
    Assume(Expr),
    Call(String, Vec<Expr>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub op: Operation,
    pub to: usize,
}

/// Control-flow graph over locations `0..n_locations`.
///
/// Location 0 is the initial location. Every location has either no
/// outgoing edges, exactly one assignment or call edge, or a fan of
/// assume edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Cfg {
    n_locations: usize,
    terminal: usize,
    edges: Vec<Edge>,
    outgoing: Vec<Vec<usize>>,
}

impl Cfg {
    pub fn new(n_locations: usize, terminal: usize, edges: Vec<Edge>) -> Self {
        let mut outgoing = vec![Vec::new(); n_locations];
        for (i, e) in edges.iter().enumerate() {
            outgoing[e.from].push(i);
        }
        Cfg { n_locations, terminal, edges, outgoing }
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn initial(&self) -> usize {
        0
    }

    pub fn terminal(&self) -> usize {
        self.terminal
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn outgoing(&self, loc: usize) -> impl Iterator<Item = &Edge> {
        self.outgoing[loc].iter().map(move |&i| &self.edges[i])
    }

    /// Like [`Cfg::outgoing`] but paired with each edge's index.
    pub fn outgoing_indexed(&self, loc: usize) -> impl Iterator<Item = (usize, &Edge)> {
        self.outgoing[loc].iter().map(move |&i| (i, &self.edges[i]))
    }

    /// Edge indices that close a cycle in a depth-first traversal from the
    /// initial location. Their targets are the loop heads.
    pub fn back_edges(&self) -> BTreeSet<usize> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let mut mark = vec![Mark::New; self.n_locations];
        let mut back = BTreeSet::new();
        // explicit stack of (location, next outgoing position)
        let mut stack = vec![(0usize, 0usize)];
        mark[0] = Mark::Active;
        while let Some(&mut (loc, ref mut pos)) = stack.last_mut() {
            if let Some(&ei) = self.outgoing[loc].get(*pos) {
                *pos += 1;
                let to = self.edges[ei].to;
                match mark[to] {
                    Mark::New => {
                        mark[to] = Mark::Active;
                        stack.push((to, 0));
                    }
                    Mark::Active => {
                        back.insert(ei);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[loc] = Mark::Done;
                stack.pop();
            }
        }
        back
    }

    /// Structural problems: incoming edges at the initial location, outgoing
    /// edges at the terminal, unreachable locations, mixed edge kinds.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.edges.iter().any(|e| e.to == 0) {
            out.push("initial location has incoming edges".to_string());
        }
        if !self.outgoing[self.terminal].is_empty() {
            out.push("terminal location has outgoing edges".to_string());
        }
        let mut seen = vec![false; self.n_locations];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(l) = stack.pop() {
            for e in self.outgoing(l) {
                if !seen[e.to] {
                    seen[e.to] = true;
                    stack.push(e.to);
                }
            }
        }
        for (l, s) in seen.iter().enumerate() {
            if !s {
                out.push(format!("location {l} is unreachable"));
            }
        }
        for l in 0..self.n_locations {
            let kinds: Vec<_> = self.outgoing(l).collect();
            let fan = kinds.iter().all(|e| matches!(e.op, Operation::Assume(_)));
            if kinds.len() > 1 && !fan {
                out.push(format!("location {l} mixes edge kinds"));
            }
        }
        out
    }
}

/// A labelled location of interest marked with `#accept`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AcceptPoint {
    pub label: String,
    pub location: usize,
}

/// A lowered program ready for symbolic execution.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub name: Option<String>,
    pub cfg: Cfg,
    /// Locations of interest; the terminal location when the source has no
    /// `#accept` annotation.
    pub accepts: Vec<AcceptPoint>,
    /// Every method name called anywhere in the program.
    pub calls: BTreeSet<String>,
}

struct Lowering {
    n: usize,
    edges: Vec<Edge>,
    accepts: BTreeMap<usize, String>,
    accept_order: Vec<usize>,
    calls: BTreeSet<String>,
}

impl Lowering {
    fn fresh(&mut self) -> usize {
        self.n += 1;
        self.n - 1
    }

    fn edge(&mut self, from: usize, op: Operation) -> usize {
        let to = self.fresh();
        self.edges.push(Edge { from, op, to });
        to
    }

    fn link(&mut self, from: usize, op: Operation, to: usize) {
        self.edges.push(Edge { from, op, to });
    }

    fn block(&mut self, stmts: &[Stmt], mut cur: usize) -> usize {
        for s in stmts {
            cur = self.stmt(s, cur);
        }
        cur
    }

    /// Fan of assume edges from `cur`, one per (condition, body); all bodies
    /// rejoin at a fresh location.
    fn fan(&mut self, cur: usize, arms: Vec<(Expr, &[Stmt])>) -> usize {
        let exits: Vec<usize> = arms
            .into_iter()
            .map(|(cond, body)| {
                let entry = self.edge(cur, Operation::Assume(cond));
                self.block(body, entry)
            })
            .collect();
        let join = self.fresh();
        for e in exits {
            self.link(e, Operation::Assume(Expr::Bool(true)), join);
        }
        join
    }

    fn stmt(&mut self, s: &Stmt, cur: usize) -> usize {
        match s {
            Stmt::Declare(_) => cur,
            Stmt::Assign(x, e) => self.edge(cur, Operation::Assign(x.clone(), e.clone())),
            Stmt::Call(m, args) => {
                self.calls.insert(m.clone());
                self.edge(cur, Operation::Call(m.clone(), args.clone()))
            }
            Stmt::Assume(c) => self.edge(cur, Operation::Assume(c.clone())),
            Stmt::If { arms, otherwise } => {
                // else-if chains flatten into one fan with mutually exclusive guards
                let mut guards = Vec::new();
                let mut negated = Vec::new();
                for (c, body) in arms {
                    let mut g = negated.clone();
                    g.push(c.clone());
                    guards.push((Expr::all(g), body.as_slice()));
                    negated.push(Expr::not(c.clone()));
                }
                guards.push((Expr::all(negated), otherwise.as_slice()));
                self.fan(cur, guards)
            }
            Stmt::While(c, body) => {
                let head = self.edge(cur, Operation::Assume(Expr::Bool(true)));
                let entry = self.edge(head, Operation::Assume(c.clone()));
                let exit = self.edge(head, Operation::Assume(Expr::not(c.clone())));
                let end = self.block(body, entry);
                self.link(end, Operation::Assume(Expr::Bool(true)), head);
                exit
            }
            Stmt::Choose(blocks) => {
                let arms = blocks.iter().map(|b| (Expr::Bool(true), b.as_slice())).collect();
                self.fan(cur, arms)
            }
            Stmt::Accept(label) => {
                let label = label.clone().unwrap_or_else(|| format!("accept{}", self.accept_order.len()));
                if !self.accepts.contains_key(&cur) {
                    self.accept_order.push(cur);
                }
                self.accepts.insert(cur, label);
                cur
            }
        }
    }
}

/// Lowers parsed statements into a [`Program`].
pub fn lower(src: &SourceProgram) -> Program {
    let mut l = Lowering {
        n: 1,
        edges: Vec::new(),
        accepts: BTreeMap::new(),
        accept_order: Vec::new(),
        calls: BTreeSet::new(),
    };
    let terminal = l.block(&src.body, 0);
    let mut accepts: Vec<AcceptPoint> = l
        .accept_order
        .iter()
        .map(|&loc| AcceptPoint { label: l.accepts[&loc].clone(), location: loc })
        .collect();
    if accepts.is_empty() {
        accepts.push(AcceptPoint { label: "end".to_string(), location: terminal });
    }
    Program { name: src.name.clone(), cfg: Cfg::new(l.n, terminal, l.edges), accepts, calls: l.calls }
}

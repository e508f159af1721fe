//! Synthetic program corpora with planted usage patterns, extraction of
//! training data, and mutation injection.
//!
//! A pattern is a TOML document:
//!
//! ```toml
//! name = "dialog-int"
//! weight = 1.0
//! symbols = ["newA", "setTitle", "setItems", "show"]
//!
//! [[template]]
//! text = """
//! call newA()
//! ? call setTitle()
//! | call setItems() | call setMessage()
//! ~ call setCancelable()
//! call show()
//! """
//! ```
//!
//! Template lines are program statements with optional prefixes, applied
//! left to right: `?` keeps the rest of the line with probability 1/2,
//! `~` wraps it in a branch on a fresh opaque input with probability 1/2,
//! and `| a | b` picks one alternative uniformly.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpa::{
    behavior_of, extract_features, sample_accepting_run, Alphabet, Automaton, GpaError, Semantics, Symbol, Transition,
};
use crate::num::Probability;
use crate::symexec::{parse_program, symbolic_execute, ExecOptions, Program, SymexecError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("pattern {pattern}: {message}")]
    TemplateParse { pattern: String, message: String },
    #[error("no patterns given")]
    NoPatterns,
    #[error("pattern {0} has a non-positive weight")]
    BadWeight(String),
    #[error("program {program}: {source}")]
    Symexec { program: String, source: SymexecError },
    #[error("program {program}: {source}")]
    Gpa { program: String, source: GpaError },
    #[error("automaton emits no symbols that could be mutated")]
    NoMutableCall,
    #[error("training data: {0}")]
    Format(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub text: String,
}

/// A planted usage pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub name: String,
    #[serde(default = "default_weight")]
    pub weight: f64,
    /// The pattern's slice of the corpus alphabet.
    pub symbols: Vec<String>,
    #[serde(rename = "template")]
    pub templates: Vec<Template>,
}

fn default_weight() -> f64 {
    1.0
}

impl PatternSpec {
    pub fn from_toml(text: &str) -> Result<Self, CorpusError> {
        let spec: PatternSpec = toml::from_str(text)
            .map_err(|e| CorpusError::TemplateParse { pattern: "<unnamed>".into(), message: e.to_string() })?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CorpusError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text).map_err(|e| match e {
            CorpusError::TemplateParse { pattern, message } if pattern == "<unnamed>" => {
                CorpusError::TemplateParse { pattern: path.display().to_string(), message }
            }
            other => other,
        })
    }

    /// Weight positivity and parseability of every template, checked on the
    /// expansion with every optional line kept and every branch wrapped.
    fn check(&self) -> Result<(), CorpusError> {
        if !(self.weight > 0.0) {
            return Err(CorpusError::BadWeight(self.name.clone()));
        }
        if self.templates.is_empty() {
            return Err(CorpusError::TemplateParse { pattern: self.name.clone(), message: "no templates".into() });
        }
        for t in &self.templates {
            let alternatives = t.text.lines().map(|l| l.split('|').count()).max().unwrap_or(1);
            for pick in 0..alternatives {
                let text = program_text("check", &expand::<ChaCha8Rng>(&t.text, &mut Expansion::Maximal { pick }));
                parse_program(&text)
                    .map_err(|e| CorpusError::TemplateParse { pattern: self.name.clone(), message: e.to_string() })?;
            }
        }
        Ok(())
    }
}

/// Loads every `*.toml` file in `dir`, sorted by file name.
pub fn load_patterns(dir: &Path) -> Result<Vec<PatternSpec>, CorpusError> {
    let io = |e: std::io::Error| CorpusError::Io { path: dir.display().to_string(), message: e.to_string() };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(|p| PatternSpec::load(p)).collect()
}

/// Union of the pattern alphabets in order of first appearance.
pub fn corpus_alphabet(specs: &[PatternSpec]) -> Alphabet {
    let mut seen = BTreeSet::new();
    let names: Vec<&String> = specs.iter().flat_map(|s| &s.symbols).filter(|n| seen.insert(n.as_str())).collect();
    Alphabet::new(names).expect("deduplicated names form an alphabet")
}

enum Expansion<'r, R> {
    Random { rng: &'r mut R, opaque: usize },
    Maximal { pick: usize },
}

fn expand<R: Rng>(text: &str, mode: &mut Expansion<'_, R>) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        if let Some(stmt) = expand_line(line.trim(), mode) {
            out.push(stmt);
        }
    }
    out
}

fn expand_line<R: Rng>(line: &str, mode: &mut Expansion<'_, R>) -> Option<String> {
    if let Some(rest) = line.strip_prefix('?') {
        let keep = match mode {
            Expansion::Random { rng, .. } => rng.random_bool(0.5),
            Expansion::Maximal { .. } => true,
        };
        return if keep { expand_line(rest.trim(), mode) } else { None };
    }
    if let Some(rest) = line.strip_prefix('~') {
        let inner = expand_line(rest.trim(), mode)?;
        return Some(match mode {
            Expansion::Random { rng, opaque } => {
                if rng.random_bool(0.5) {
                    *opaque += 1;
                    format!("if (opq{} > 0) {{ {inner} }}", *opaque)
                } else {
                    inner
                }
            }
            Expansion::Maximal { .. } => format!("if (opq1 > 0) {{ {inner} }}"),
        });
    }
    if let Some(rest) = line.strip_prefix('|') {
        let alts: Vec<&str> = rest.split('|').map(str::trim).collect();
        let chosen = match mode {
            Expansion::Random { rng, .. } => *alts.choose(*rng).expect("split yields at least one piece"),
            Expansion::Maximal { pick } => alts[*pick % alts.len()],
        };
        return expand_line(chosen, mode);
    }
    Some(line.to_string())
}

fn program_text(id: &str, body: &[String]) -> String {
    let opaque: BTreeSet<&str> = body
        .iter()
        .flat_map(|l| l.match_indices("opq").map(move |(i, _)| &l[i..]))
        .map(|s| s.split(|c: char| !c.is_ascii_alphanumeric()).next().unwrap_or(s))
        .collect();
    let mut text = format!("program {id}\n");
    if !opaque.is_empty() {
        text.push_str(&format!("var {}\n", opaque.into_iter().collect::<Vec<_>>().join(", ")));
    }
    for l in body {
        text.push_str(l);
        text.push('\n');
    }
    text
}

/// One generated program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedProgram {
    pub id: String,
    pub pattern: String,
    pub text: String,
}

/// Instantiates `n` programs, each from a pattern chosen by weight and one
/// of its templates chosen uniformly.
pub fn generate_corpus<R: Rng>(specs: &[PatternSpec], n: usize, rng: &mut R) -> Result<Vec<GeneratedProgram>, CorpusError> {
    generate_corpus_with_prefix(specs, n, "p", rng)
}

pub fn generate_corpus_with_prefix<R: Rng>(
    specs: &[PatternSpec],
    n: usize,
    prefix: &str,
    rng: &mut R,
) -> Result<Vec<GeneratedProgram>, CorpusError> {
    if specs.is_empty() {
        return Err(CorpusError::NoPatterns);
    }
    for s in specs {
        s.check()?;
    }
    let total: f64 = specs.iter().map(|s| s.weight).sum();
    let width = n.to_string().len().max(4);
    (0..n)
        .map(|i| {
            let mut u = rng.random::<f64>() * total;
            let spec = specs
                .iter()
                .find(|s| {
                    u -= s.weight;
                    u < 0.0
                })
                .unwrap_or(specs.last().unwrap());
            let template = spec.templates.choose(rng).expect("checked nonempty");
            let id = format!("{prefix}{i:0width$}");
            let body = expand(&template.text, &mut Expansion::Random { rng, opaque: 0 });
            let text = program_text(&id, &body);
            parse_program(&text).map_err(|e| CorpusError::TemplateParse { pattern: spec.name.clone(), message: e.to_string() })?;
            Ok(GeneratedProgram { id, pattern: spec.name.clone(), text })
        })
        .collect()
}

/// Per-(program, location) training evidence: the feature set and sampled
/// behaviors, all as symbol names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub program_id: String,
    #[serde(default = "default_location")]
    pub location: String,
    pub features: Vec<String>,
    pub behaviors: Vec<Vec<String>>,
}

fn default_location() -> String {
    "end".into()
}

/// Training records serialized as JSON lines.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainingSet {
    pub records: Vec<TrainingRecord>,
}

impl TrainingSet {
    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, CorpusError> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| CorpusError::Format(format!("line {}: {e}", i + 1))))
            .collect::<Result<_, _>>()?;
        Ok(TrainingSet { records })
    }

    pub fn behavior_count(&self) -> usize {
        self.records.iter().map(|r| r.behaviors.len()).sum()
    }

    /// Every symbol name that appears in a feature set or a behavior.
    pub fn symbol_names(&self) -> BTreeSet<String> {
        self.records
            .iter()
            .flat_map(|r| r.features.iter().chain(r.behaviors.iter().flatten()))
            .cloned()
            .collect()
    }
}

/// A program compiled for one location of interest.
#[derive(Clone, Debug)]
pub struct CompiledProgram<P> {
    pub program_id: String,
    pub location: String,
    pub automaton: Automaton<P>,
}

/// Compiles a program once per `#accept` location.
pub fn compile_all_locations<P: Probability>(
    program_id: &str,
    program: &Program,
    alphabet: &Alphabet,
    opts: &ExecOptions,
) -> Result<Vec<CompiledProgram<P>>, CorpusError> {
    program
        .accepts
        .iter()
        .map(|acc| {
            let automaton = symbolic_execute(&program.cfg, alphabet, acc.location, opts)
                .map_err(|source| CorpusError::Symexec { program: program_id.to_string(), source })?;
            Ok(CompiledProgram { program_id: program_id.to_string(), location: acc.label.clone(), automaton })
        })
        .collect()
}

/// Deterministic per-item random stream derived from a run seed.
pub fn item_rng(seed: u64, item: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(item as u64 + 1);
    rng
}

/// Samples `samples_per_program` behaviors from every compiled program.
/// Work is spread over threads; program `i` uses stream `i` of `seed`.
pub fn extract_training_data<P: Probability>(
    programs: &[CompiledProgram<P>],
    alphabet: &Alphabet,
    samples_per_program: usize,
    sem: &Semantics,
    seed: u64,
) -> Result<TrainingSet, CorpusError> {
    let records = programs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = item_rng(seed, i);
            let a = p.automaton.map_probs(Probability::approx_f64);
            let features = extract_features(&a).iter().map(|s| alphabet.name(s).unwrap().to_string()).collect();
            let behaviors = (0..samples_per_program)
                .map(|_| {
                    sample_accepting_run(&a, sem, &mut rng)
                        .map(|r| alphabet.behavior_names(&behavior_of(&r)))
                        .map_err(|source| CorpusError::Gpa { program: p.program_id.clone(), source })
                })
                .collect::<Result<_, _>>()?;
            Ok(TrainingRecord { program_id: p.program_id.clone(), location: p.location.clone(), features, behaviors })
        })
        .collect::<Result<_, _>>()?;
    Ok(TrainingSet { records })
}

/// Transitions emitting the last observable symbol before acceptance: non-ε
/// transitions from whose target an accepting state is reachable through
/// ε-transitions only.
pub fn mutation_sites<P: Probability>(a: &Automaton<P>) -> Vec<usize> {
    let n = a.n_states();
    let mut silent_to_accept = vec![false; n];
    for &s in a.accepting() {
        silent_to_accept[s] = true;
    }
    // fixpoint over ε-edges (automata are small)
    let mut changed = true;
    while changed {
        changed = false;
        for t in a.transitions() {
            if t.symbol.is_epsilon() && silent_to_accept[t.to] && !silent_to_accept[t.from] {
                silent_to_accept[t.from] = true;
                changed = true;
            }
        }
    }
    a.transitions()
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.symbol.is_epsilon() && silent_to_accept[t.to])
        .map(|(i, _)| i)
        .collect()
}

/// An automaton with one transition symbol replaced.
#[derive(Clone, Debug, PartialEq)]
pub struct Mutant<P> {
    pub automaton: Automaton<P>,
    pub transition: usize,
    pub original: Symbol,
    pub replacement: Symbol,
}

impl<P> Mutant<P> {
    pub fn is_identity(&self) -> bool {
        self.original == self.replacement
    }

    pub fn describe(&self, alphabet: &Alphabet) -> String {
        let name = |s| alphabet.name(s).unwrap_or("?").to_string();
        format!("transition {}: {} -> {}", self.transition, name(self.original), name(self.replacement))
    }
}

/// One mutant per mutation site, each replacing that site's symbol by a
/// uniformly drawn symbol of the alphabet (possibly the same one).
pub fn mutate_program<P: Probability, R: Rng + ?Sized>(
    a: &Automaton<P>,
    alphabet: &Alphabet,
    rng: &mut R,
) -> Result<Vec<Mutant<P>>, CorpusError> {
    let sites = mutation_sites(a);
    if sites.is_empty() || alphabet.is_empty() {
        return Err(CorpusError::NoMutableCall);
    }
    Ok(sites
        .into_iter()
        .map(|ti| {
            let replacement = Symbol::new(rng.random_range(0..alphabet.len()));
            Mutant { automaton: a.with_symbol(ti, replacement), transition: ti, original: a.transitions()[ti].symbol, replacement }
        })
        .collect())
}

/// A random acyclic automaton for property tests and oracle experiments.
///
/// Every non-final state gets one to three outgoing transitions with
/// random probabilities, about a fifth of them silent, and every state
/// without successors accepts.
pub fn random_automaton<R: Rng + ?Sized>(alphabet_len: usize, n_states: usize, rng: &mut R) -> Automaton<f64> {
    let n_states = n_states.max(2);
    let mut transitions = Vec::new();
    for from in 0..n_states - 1 {
        let fanout = rng.random_range(1..=3usize).min(n_states - 1 - from);
        let weights: Vec<f64> = (0..fanout).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut targets = BTreeSet::new();
        while targets.len() < fanout {
            targets.insert(rng.random_range(from + 1..n_states));
        }
        for (to, w) in targets.into_iter().zip(weights) {
            let symbol = if rng.random_bool(0.2) { Symbol::EPSILON } else { Symbol::new(rng.random_range(0..alphabet_len)) };
            transitions.push(Transition::new(from, symbol, w / total, to));
        }
    }
    let mut has_out = vec![false; n_states];
    for t in &transitions {
        has_out[t.from] = true;
    }
    let accepting: Vec<usize> = (0..n_states).filter(|&s| !has_out[s]).collect();
    Automaton::new(n_states, 0, accepting, transitions)
}

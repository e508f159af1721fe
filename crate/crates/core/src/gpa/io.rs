use serde::{Deserialize, Serialize};

use super::{Alphabet, Automaton, Behavior, GpaError, Symbol, Transition};
use crate::num::Probability;

pub const AUTOMATON_FORMAT_VERSION: u32 = 1;

/// On-disk form of an automaton. Symbols are alphabet indices; `null` is ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutomatonDoc {
    pub version: u32,
    pub alphabet: Vec<String>,
    pub states: usize,
    pub initial: usize,
    pub accepting: Vec<usize>,
    pub transitions: Vec<TransitionDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionDoc {
    pub from: usize,
    pub sym: Option<usize>,
    pub prob: f64,
    pub to: usize,
}

impl AutomatonDoc {
    pub fn from_automaton<P: Probability>(alphabet: &Alphabet, a: &Automaton<P>) -> Self {
        AutomatonDoc {
            version: AUTOMATON_FORMAT_VERSION,
            alphabet: alphabet.names().to_vec(),
            states: a.n_states(),
            initial: a.initial(),
            accepting: a.accepting().iter().copied().collect(),
            transitions: a
                .transitions()
                .iter()
                .map(|t| TransitionDoc {
                    from: t.from,
                    sym: (!t.symbol.is_epsilon()).then(|| t.symbol.index()),
                    prob: t.prob.approx_f64(),
                    to: t.to,
                })
                .collect(),
        }
    }

    pub fn into_automaton(self) -> Result<(Alphabet, Automaton<f64>), GpaError> {
        if self.version != AUTOMATON_FORMAT_VERSION {
            return Err(GpaError::Format(format!("unsupported version {}", self.version)));
        }
        let alphabet = Alphabet::new(self.alphabet)?;
        let transitions = self
            .transitions
            .into_iter()
            .map(|t| {
                let symbol = match t.sym {
                    None => Symbol::EPSILON,
                    Some(i) if i < alphabet.len() => Symbol::new(i),
                    Some(i) => return Err(GpaError::SymbolOutOfRange { index: i, size: alphabet.len() }),
                };
                Ok(Transition::new(t.from, symbol, t.prob, t.to))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((alphabet, Automaton::new(self.states, self.initial, self.accepting, transitions)))
    }
}

pub fn automaton_to_json<P: Probability>(alphabet: &Alphabet, a: &Automaton<P>) -> String {
    serde_json::to_string_pretty(&AutomatonDoc::from_automaton(alphabet, a)).expect("automaton serializes")
}

pub fn automaton_from_json(text: &str) -> Result<(Alphabet, Automaton<f64>), GpaError> {
    let doc: AutomatonDoc = serde_json::from_str(text).map_err(|e| GpaError::Format(e.to_string()))?;
    doc.into_automaton()
}

impl Alphabet {
    /// Behavior as a JSON array of symbol names.
    pub fn behavior_to_json(&self, b: &Behavior) -> serde_json::Value {
        serde_json::Value::from(self.behavior_names(b))
    }
}

//! Bayesian specification learning for API usage.
//!
//! Programs are abstracted as generative probabilistic automata ([`gpa`]),
//! usually produced by symbolic execution of a small imperative language
//! ([`symexec`]). A topic model ([`topics`]) captures which usage pattern a
//! program follows and a topic-conditioned recurrent network ([`seqmodel`])
//! scores call sequences under that pattern. [`scorer`] turns the two into a
//! KL-divergence anomaly score. [`corpus`] and [`pipeline`] generate
//! synthetic corpora and run the end-to-end experiments.
//!
//! The numeric core is generic over the scalar type; the aliases below fix
//! the common choices.

pub mod corpus;
pub mod gpa;
pub mod num;
pub mod pipeline;
pub mod scorer;
pub mod seqmodel;
pub mod symexec;
pub mod topics;

pub use num::{Probability, Real};

/// Automaton with floating-point transition probabilities.
pub type Automaton64 = gpa::Automaton<f64>;
/// Automaton with exact rational probabilities.
pub type ExactAutomaton = gpa::Automaton<num_rational::BigRational>;
pub type LdaModel64 = topics::LdaModel<f64>;
pub type SequenceModel64 = seqmodel::SequenceModel<f64>;
pub type SequenceModel32 = seqmodel::SequenceModel<f32>;
pub type TopicVector64 = topics::TopicVector<f64>;
pub type ModelBundle64 = scorer::ModelBundle<f64>;

use std::collections::BTreeMap;

use rand::Rng;

use super::{Automaton, Behavior, GpaError, Run};
use crate::num::Probability;

pub const DEFAULT_MAX_LEN: usize = 64;
pub const DEFAULT_HALT_PROB: f64 = 0.5;
pub const DEFAULT_MAX_TRUNCATED_MASS: f64 = 1e-6;
pub const DEFAULT_REJECTION_BUDGET: u64 = 1_000_000;

/// Generative stopping rule and length budget shared by enumeration and
/// sampling, so the two always describe the same distribution.
///
/// A walk in an accepting state with no outgoing transitions stops. A walk in
/// an accepting state that does have outgoing transitions stops with
/// probability `halt_prob` and otherwise continues. Walks longer than
/// `max_len` transitions, or stuck in a non-accepting state, are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct Semantics {
    pub max_len: usize,
    pub halt_prob: f64,
    /// Enumeration fails if more than this much mass is cut off by
    /// `max_len`. `None` disables the check.
    pub max_truncated_mass: Option<f64>,
    /// Consecutive rejections tolerated by the sampler.
    pub rejection_budget: u64,
}

impl Default for Semantics {
    fn default() -> Self {
        Semantics {
            max_len: DEFAULT_MAX_LEN,
            halt_prob: DEFAULT_HALT_PROB,
            max_truncated_mass: Some(DEFAULT_MAX_TRUNCATED_MASS),
            rejection_budget: DEFAULT_REJECTION_BUDGET,
        }
    }
}

impl Semantics {
    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    fn stop_weight<P: Probability>(&self, a: &Automaton<P>, state: usize) -> Option<P> {
        if !a.is_accepting(state) {
            None
        } else if a.outgoing(state).is_empty() {
            Some(P::one())
        } else {
            Some(P::from_f64(self.halt_prob).expect("halt probability representable"))
        }
    }
}

/// Exact behavior distribution of an automaton under [`Semantics`].
#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorDistribution<P> {
    entries: BTreeMap<Behavior, P>,
    normalizer: P,
    truncated_mass: P,
    accepting_runs: u64,
}

impl<P: Probability> BehaviorDistribution<P> {
    /// Probability of `theta`; zero outside the support.
    pub fn prob(&self, theta: &Behavior) -> P {
        self.entries.get(theta).cloned().unwrap_or_else(P::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Behavior, &P)> {
        self.entries.iter()
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    /// Total accepted weight `Z` before normalization.
    pub fn normalizer(&self) -> &P {
        &self.normalizer
    }

    /// Probability mass of walks still running after `max_len` transitions.
    pub fn truncated_mass(&self) -> &P {
        &self.truncated_mass
    }

    /// Number of distinct accepting runs within the length budget.
    pub fn accepting_runs(&self) -> u64 {
        self.accepting_runs
    }

    pub fn total(&self) -> P {
        self.entries.values().fold(P::zero(), |acc, p| acc + p.clone())
    }

    /// Probabilities as `f64`, in behavior order.
    pub fn to_f64(&self) -> BehaviorDistribution<f64> {
        BehaviorDistribution {
            entries: self.entries.iter().map(|(b, p)| (b.clone(), p.approx_f64())).collect(),
            normalizer: self.normalizer.approx_f64(),
            truncated_mass: self.truncated_mass.approx_f64(),
            accepting_runs: self.accepting_runs,
        }
    }
}

/// Exact `P_F(θ) = (1/Z) Σ_{π ∈ Π_F(θ)} P(π)` over accepting runs of at most
/// `sem.max_len` transitions.
///
/// Runs are tracked as a frontier keyed by (state, behavior so far), so runs
/// that agree on both are merged without losing their multiplicity.
pub fn enumerate_behaviors<P: Probability>(
    a: &Automaton<P>,
    sem: &Semantics,
) -> Result<BehaviorDistribution<P>, GpaError> {
    let mut accepted: BTreeMap<Behavior, P> = BTreeMap::new();
    let mut accepting_runs = 0u64;
    let mut truncated = P::zero();
    let mut frontier: BTreeMap<(usize, Behavior), (P, u64)> = BTreeMap::new();
    frontier.insert((a.initial(), Behavior::empty()), (P::one(), 1));

    for step in 0..=sem.max_len {
        if frontier.is_empty() {
            break;
        }
        let mut next: BTreeMap<(usize, Behavior), (P, u64)> = BTreeMap::new();
        for ((state, behavior), (weight, runs)) in frontier {
            let mut cont = weight.clone();
            if let Some(stop) = sem.stop_weight(a, state) {
                let e = accepted.entry(behavior.clone()).or_insert_with(P::zero);
                *e = e.clone() + weight.clone() * stop.clone();
                accepting_runs += runs;
                cont = weight * (P::one() - stop);
            }
            let outs = a.outgoing(state);
            if outs.is_empty() || cont == P::zero() {
                continue;
            }
            if step == sem.max_len {
                truncated = truncated + cont;
                continue;
            }
            for &ti in outs {
                let t = &a.transitions()[ti];
                let key = (t.to, behavior.pushed(t.symbol));
                let w = cont.clone() * t.prob.clone();
                let e = next.entry(key).or_insert_with(|| (P::zero(), 0));
                e.0 = e.0.clone() + w;
                e.1 += runs;
            }
        }
        frontier = next;
    }

    let z = accepted.values().fold(P::zero(), |acc, p| acc + p.clone());
    if z == P::zero() {
        return Err(GpaError::NoAcceptingRun { max_len: sem.max_len });
    }
    if let Some(limit) = sem.max_truncated_mass {
        let mass = truncated.approx_f64();
        if mass > limit {
            return Err(GpaError::TruncatedMass { mass, limit });
        }
    }
    let entries = accepted
        .into_iter()
        .filter(|(_, p)| *p > P::zero())
        .map(|(b, p)| (b, p / z.clone()))
        .collect();
    Ok(BehaviorDistribution { entries, normalizer: z, truncated_mass: truncated, accepting_runs })
}

/// Draws an accepting run with probability proportional to its weight under
/// [`Semantics`], restarting rejected walks.
pub fn sample_accepting_run<P, R>(a: &Automaton<P>, sem: &Semantics, rng: &mut R) -> Result<Run<P>, GpaError>
where
    P: Probability,
    R: Rng + ?Sized,
{
    let mut rejections = 0u64;
    loop {
        if let Some(run) = walk(a, sem, rng) {
            return Ok(run);
        }
        rejections += 1;
        if rejections >= sem.rejection_budget {
            return Err(GpaError::SamplingBudgetExceeded { budget: sem.rejection_budget });
        }
    }
}

fn walk<P, R>(a: &Automaton<P>, sem: &Semantics, rng: &mut R) -> Option<Run<P>>
where
    P: Probability,
    R: Rng + ?Sized,
{
    let mut state = a.initial();
    let mut steps = Vec::new();
    loop {
        let outs = a.outgoing(state);
        if a.is_accepting(state) && (outs.is_empty() || rng.random::<f64>() < sem.halt_prob) {
            let prob = steps.iter().fold(P::one(), |acc, t: &super::Transition<P>| acc * t.prob.clone());
            return Some(Run { steps, prob });
        }
        if outs.is_empty() || steps.len() == sem.max_len {
            return None;
        }
        let total: f64 = outs.iter().map(|&ti| a.transitions()[ti].prob.approx_f64()).sum();
        let mut u = rng.random::<f64>() * total;
        let mut chosen = *outs.last().unwrap();
        for &ti in outs {
            let p = a.transitions()[ti].prob.approx_f64();
            if u < p {
                chosen = ti;
                break;
            }
            u -= p;
        }
        let t = a.transitions()[chosen].clone();
        state = t.to;
        steps.push(t);
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use num_rational::BigRational;
    use num_traits::{One, Zero};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gpa::fixtures::*;
    use crate::gpa::{behavior_of, extract_features, Symbol, Transition};
    use crate::num::rational;

    #[test]
    fn dialog_example_distribution_is_two_thirds_one_third() {
        let (alphabet, a) = dialog_example();
        let d = enumerate_behaviors(&a, &Semantics::default()).unwrap();
        let t1 = alphabet.behavior(&["newA", "setTitle", "setItems", "show"]).unwrap();
        let t2 = alphabet.behavior(&["newA", "setTitle", "show"]).unwrap();
        assert_eq!(d.support_len(), 2);
        assert_eq!(d.prob(&t1), rational(2, 3));
        assert_eq!(d.prob(&t2), rational(1, 3));
        assert_eq!(*d.normalizer(), BigRational::one());
        assert_eq!(d.accepting_runs(), 3);
        assert!(d.truncated_mass().is_zero());
    }

    #[test]
    fn removing_theta2_state_leaves_theta1_alone() {
        let (alphabet, a) = dialog_example();
        let b = a.without_states(&[DIALOG_EXAMPLE_THETA2_STATE]);
        let d = enumerate_behaviors(&b, &Semantics::default()).unwrap();
        let t1 = alphabet.behavior(&["newA", "setTitle", "setItems", "show"]).unwrap();
        assert_eq!(d.support_len(), 1);
        assert_eq!(d.prob(&t1), BigRational::one());
        assert_eq!(*d.normalizer(), rational(2, 3));
        // monotonicity: θ1 strictly gains mass
        let before = enumerate_behaviors(&a, &Semantics::default()).unwrap().prob(&t1);
        assert!(d.prob(&t1) > before);
    }

    #[test]
    fn single_path_is_certain() {
        let (alphabet, a) = single_path(&["s"]);
        let d = enumerate_behaviors(&a, &Semantics::default()).unwrap();
        assert_eq!(d.prob(&alphabet.behavior(&["s"]).unwrap()), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let r = sample_accepting_run(&a, &Semantics::default(), &mut rng).unwrap();
            assert_eq!(r.steps.len(), 1);
            assert_eq!(r.prob, 1.0);
        }
    }

    #[test]
    fn no_accepting_run_is_an_error() {
        let a = Automaton::new(3, 0, [2], vec![Transition::new(0, Symbol::new(0), 1.0, 1)]);
        assert_eq!(
            enumerate_behaviors(&a, &Semantics::default()),
            Err(GpaError::NoAcceptingRun { max_len: DEFAULT_MAX_LEN })
        );
        let sem = Semantics { rejection_budget: 1000, ..Semantics::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_accepting_run(&a, &sem, &mut rng),
            Err(GpaError::SamplingBudgetExceeded { budget: 1000 })
        );
    }

    fn looping() -> Automaton<f64> {
        // 0 -a-> 0 (0.9), 0 -b-> 1 (0.1), 1 accepting
        Automaton::new(
            2,
            0,
            [1],
            vec![
                Transition::new(0, Symbol::new(0), 0.9, 0),
                Transition::new(0, Symbol::new(1), 0.1, 1),
            ],
        )
    }

    #[test]
    fn truncation_is_reported_and_enforced() {
        let a = looping();
        let err = enumerate_behaviors(&a, &Semantics::default().with_max_len(10)).unwrap_err();
        assert!(matches!(err, GpaError::TruncatedMass { .. }));

        let sem = Semantics { max_truncated_mass: None, ..Semantics::default().with_max_len(10) };
        let d = enumerate_behaviors(&a, &sem).unwrap();
        let expected = 0.9f64.powi(10);
        assert!((d.truncated_mass() - expected).abs() < 1e-12);
        assert!((d.total() - 1.0).abs() < 1e-12);
        assert!((d.normalizer() - (1.0 - expected)).abs() < 1e-12);
    }

    #[test]
    fn accepting_state_with_outgoing_edges_uses_halt_probability() {
        // 0 -a-> 1 (accepting) -b-> 2 (accepting, terminal)
        let a = Automaton::new(
            3,
            0,
            [1, 2],
            vec![
                Transition::new(0, Symbol::new(0), 1.0, 1),
                Transition::new(1, Symbol::new(1), 1.0, 2),
            ],
        );
        let sem = Semantics { halt_prob: 0.25, ..Semantics::default() };
        let d: BehaviorDistribution<f64> = enumerate_behaviors(&a, &sem).unwrap();
        let ab = Behavior::new(vec![Symbol::new(0), Symbol::new(1)]).unwrap();
        let just_a = Behavior::new(vec![Symbol::new(0)]).unwrap();
        assert!((d.prob(&just_a) - 0.25).abs() < 1e-12);
        assert!((d.prob(&ab) - 0.75).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40_000;
        let hits = (0..n)
            .filter(|_| behavior_of(&sample_accepting_run(&a, &sem, &mut rng).unwrap()) == just_a)
            .count();
        assert!((hits as f64 / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn sampler_matches_enumeration_on_dialog_example() {
        let (_, a) = dialog_example();
        let exact = enumerate_behaviors(&a, &Semantics::default()).unwrap().to_f64();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts: HashMap<Behavior, usize> = HashMap::new();
        for _ in 0..n {
            let run = sample_accepting_run(&a, &Semantics::default(), &mut rng).unwrap();
            *counts.entry(behavior_of(&run)).or_default() += 1;
        }
        let tv: f64 = exact
            .iter()
            .map(|(b, p)| (p - *counts.get(b).unwrap_or(&0) as f64 / n as f64).abs())
            .sum::<f64>()
            / 2.0;
        let bound = 3.0 * (exact.support_len() as f64 / n as f64).sqrt();
        assert!(tv <= bound, "tv {tv} > {bound}");
    }

    #[test]
    fn sampled_run_probability_is_product_of_steps() {
        let (_, a) = dialog_example();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = sample_accepting_run(&a, &Semantics::default(), &mut rng).unwrap();
        assert_eq!(r.prob, rational(1, 3));
        assert_eq!(r.steps[0].from, a.initial());
        for w in r.steps.windows(2) {
            assert_eq!(w[0].to, w[1].from);
        }
        let feats = extract_features(&a);
        assert!(behavior_of(&r).symbols().iter().all(|s| feats.contains(*s)));
    }
}

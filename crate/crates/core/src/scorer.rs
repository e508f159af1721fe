//! Anomaly scores: KL divergence from a program's own behavior distribution
//! to the distribution the learned model expects given its features.
//!
//! [`estimate_anomaly_score`] is the sampling estimator with Taylor-series
//! bias correction and bootstrap error bars. [`exact_anomaly_score`]
//! enumerates behaviors and serves as ground truth. [`knn_score`] is the
//! nearest-neighbour baseline that compares against corpus programs
//! directly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::gpa::{
    behavior_of, enumerate_behaviors, extract_features, sample_accepting_run, Automaton, Behavior, BehaviorDistribution,
    FeatureSet, GpaError, Semantics,
};
use crate::num::{log_mean_exp, Probability, Real};
use crate::seqmodel::{ScoringMode, SeqError, SequenceModel};
use crate::topics::{infer_topic_posterior, LdaModel, PosteriorConfig, TopicVector, TopicsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Gpa(#[from] GpaError),
    #[error(transparent)]
    Topics(#[from] TopicsError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error("degenerate estimate: observed mean {0} is not positive")]
    DegenerateEstimate(f64),
    #[error("program has no features")]
    EmptyFeatures,
    #[error("k-NN corpus is empty")]
    EmptyCorpus,
    #[error("invalid scorer configuration: {0}")]
    InvalidConfig(String),
    #[error("model bundle is inconsistent: {0}")]
    InconsistentBundle(String),
}

/// Anything that can supply topic-vector samples for a feature set and
/// score a behavior under one topic vector.
pub trait ScoringModel<T: Real>: Sync {
    fn sample_psis(&self, features: &FeatureSet, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TopicVector<T>>, ScoreError>;

    fn log_prob(&self, psi: &TopicVector<T>, theta: &Behavior) -> Result<T, ScoreError>;

    /// `true` when [`ScoringModel::sample_psis`] returns the same vectors on
    /// every call, so the second log term carries no sampling noise.
    fn psis_are_fixed(&self) -> bool {
        false
    }
}

/// A trained topic model and sequence model sharing one alphabet.
///
/// An unconditioned sequence model needs no topic model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T> {
    pub lda: Option<LdaModel<T>>,
    pub seq: SequenceModel<T>,
    pub mode: ScoringMode,
    pub posterior: PosteriorConfig,
}

impl<T: Real> ModelBundle<T> {
    pub fn new(lda: Option<LdaModel<T>>, seq: SequenceModel<T>) -> Result<Self, ScoreError> {
        match (&lda, seq.topics()) {
            (Some(l), Some(k)) if l.k() != k => {
                return Err(ScoreError::InconsistentBundle(format!("topic model has {} topics, sequence model {k}", l.k())))
            }
            (Some(l), _) if l.alphabet != *seq.alphabet() => {
                return Err(ScoreError::InconsistentBundle("alphabets differ".into()))
            }
            (None, Some(_)) => return Err(ScoreError::InconsistentBundle("conditioned model needs a topic model".into())),
            _ => {}
        }
        Ok(ModelBundle { lda, seq, mode: ScoringMode::default(), posterior: PosteriorConfig::default() })
    }
}

impl<T: Real> ScoringModel<T> for ModelBundle<T> {
    fn sample_psis(&self, features: &FeatureSet, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TopicVector<T>>, ScoreError> {
        match (&self.lda, self.seq.is_conditioned()) {
            (Some(lda), true) => {
                let cfg = self.posterior.clone().with_samples(n);
                Ok(infer_topic_posterior(lda, features, &cfg, rng)?)
            }
            _ => Ok(vec![TopicVector::uniform(1)]),
        }
    }

    fn log_prob(&self, psi: &TopicVector<T>, theta: &Behavior) -> Result<T, ScoreError> {
        Ok(self.seq.sequence_log_prob(psi.weights(), theta, self.mode)?)
    }
}

/// A model that assigns fixed probabilities to behaviors regardless of the
/// topic vector; behaviors not listed get `default`.
#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorTable {
    pub probs: BTreeMap<Behavior, f64>,
    pub default: f64,
}

impl BehaviorTable {
    pub fn new(probs: impl IntoIterator<Item = (Behavior, f64)>, default: f64) -> Self {
        BehaviorTable { probs: probs.into_iter().collect(), default }
    }
}

impl ScoringModel<f64> for BehaviorTable {
    fn sample_psis(&self, _: &FeatureSet, _: usize, _: &mut ChaCha8Rng) -> Result<Vec<TopicVector<f64>>, ScoreError> {
        Ok(vec![TopicVector::uniform(1)])
    }

    fn log_prob(&self, _: &TopicVector<f64>, theta: &Behavior) -> Result<f64, ScoreError> {
        Ok(self.probs.get(theta).copied().unwrap_or(self.default).ln())
    }

    fn psis_are_fixed(&self) -> bool {
        true
    }
}

/// Wraps a model so that every request for topic vectors returns the same
/// pre-drawn set.
pub struct SharedPsis<'a, T, M> {
    pub inner: &'a M,
    pub psis: Vec<TopicVector<T>>,
}

impl<T: Real, M: ScoringModel<T>> ScoringModel<T> for SharedPsis<'_, T, M> {
    fn sample_psis(&self, _: &FeatureSet, _: usize, _: &mut ChaCha8Rng) -> Result<Vec<TopicVector<T>>, ScoreError> {
        Ok(self.psis.clone())
    }

    fn log_prob(&self, psi: &TopicVector<T>, theta: &Behavior) -> Result<T, ScoreError> {
        self.inner.log_prob(psi, theta)
    }

    fn psis_are_fixed(&self) -> bool {
        true
    }
}

/// `log( (1/|psis|) Σ_psi P(theta | psi) )`.
pub fn posterior_behavior_log_prob<T: Real, M: ScoringModel<T> + ?Sized>(
    model: &M,
    theta: &Behavior,
    psis: &[TopicVector<T>],
) -> Result<T, ScoreError> {
    let lps = psis.iter().map(|p| model.log_prob(p, theta)).collect::<Result<Vec<T>, _>>()?;
    Ok(log_mean_exp(&lps))
}

/// Expected error `E[log X̄] - log E[X]` of the log of a sample mean,
/// given the variance of the mean and the observed mean.
///
/// This is the series `-r/2 - 3r²/4 - 15r³/6 - 105r⁴/8` in
/// `r = var / mean²`. The series is asymptotic, so it is cut before the
/// first term that is larger than its predecessor; for `r < 0.19` all four
/// terms are used.
pub fn log_mean_bias_from_variance(variance: f64, mean: f64) -> Result<f64, ScoreError> {
    if !(mean > 0.0) {
        return Err(ScoreError::DegenerateEstimate(mean));
    }
    let r = variance / (mean * mean);
    let terms = [r / 2.0, 3.0 * r.powi(2) / 4.0, 15.0 * r.powi(3) / 6.0, 105.0 * r.powi(4) / 8.0];
    let mut bias = 0.0;
    let mut prev = f64::INFINITY;
    for t in terms {
        if t > prev {
            break;
        }
        bias -= t;
        prev = t;
    }
    Ok(bias)
}

/// Bootstrap variance of the mean of `samples` over `resamples` resamples.
pub fn bootstrap_variance_of_mean<R: Rng + ?Sized>(samples: &[f64], resamples: usize, rng: &mut R) -> f64 {
    let n = samples.len();
    if n < 2 || resamples < 2 {
        return 0.0;
    }
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    crate::num::sample_variance(&means)
}

/// Bias of `log(observed_mean)` with the variance of the mean estimated by
/// bootstrap resampling of `samples`.
pub fn log_mean_bias<R: Rng + ?Sized>(samples: &[f64], observed_mean: f64, resamples: usize, rng: &mut R) -> Result<f64, ScoreError> {
    if samples.is_empty() {
        return Err(ScoreError::InvalidConfig("no samples for bias estimate".into()));
    }
    if !(observed_mean > 0.0) {
        return Err(ScoreError::DegenerateEstimate(observed_mean));
    }
    if samples.iter().all(|&s| s == samples[0]) {
        return Ok(0.0);
    }
    log_mean_bias_from_variance(bootstrap_variance_of_mean(samples, resamples, rng), observed_mean)
}

/// How the first log term estimates `P_F(theta)` from the run sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunFrequency {
    /// `count / |runs|` over all runs, generating run included.
    Inclusive,
    /// `count / |runs|` over the runs drawn after the generating run; the
    /// inclusive estimate is used when none of them produces theta.
    #[default]
    LeaveOneOut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    /// Size of the run sample per triple, generating run included.
    pub runs_per_triple: usize,
    pub psis_per_triple: usize,
    pub min_triples: usize,
    pub max_triples: usize,
    pub target_se: f64,
    pub bootstrap_resamples: usize,
    /// Triples generated between stopping checks.
    pub batch: usize,
    pub run_frequency: RunFrequency,
    pub max_len: usize,
    pub halt_prob: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            runs_per_triple: 64,
            psis_per_triple: 32,
            min_triples: 64,
            max_triples: 2000,
            target_se: 0.05,
            bootstrap_resamples: 200,
            batch: 64,
            run_frequency: RunFrequency::default(),
            max_len: crate::gpa::DEFAULT_MAX_LEN,
            halt_prob: crate::gpa::DEFAULT_HALT_PROB,
        }
    }
}

impl ScorerConfig {
    pub fn semantics(&self) -> Semantics {
        Semantics { max_len: self.max_len, halt_prob: self.halt_prob, ..Semantics::default() }
    }

    fn validate(&self) -> Result<(), ScoreError> {
        if self.runs_per_triple < 2 || self.psis_per_triple == 0 || self.max_triples == 0 || self.batch == 0 {
            return Err(ScoreError::InvalidConfig(
                "runs_per_triple must be at least 2; psis_per_triple, max_triples and batch at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub score: f64,
    pub std_err: f64,
    /// Mean over triples of the subtracted bias difference.
    pub bias_total: f64,
    pub uncorrected_score: f64,
    pub uncorrected_std_err: f64,
    pub n_triples: usize,
    pub seed: u64,
    pub config: ScorerConfig,
}

/// Per-triple estimator terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripleTerms {
    pub first: f64,
    pub second: f64,
    pub bias_first: f64,
    pub bias_second: f64,
}

impl TripleTerms {
    pub fn corrected(&self) -> f64 {
        self.first - self.second - (self.bias_first - self.bias_second)
    }

    pub fn uncorrected(&self) -> f64 {
        self.first - self.second
    }
}

fn triple_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn one_triple<T: Real, M: ScoringModel<T> + ?Sized>(
    a: &Automaton<f64>,
    features: &FeatureSet,
    model: &M,
    cfg: &ScorerConfig,
    sem: &Semantics,
    rng: &mut ChaCha8Rng,
) -> Result<TripleTerms, ScoreError> {
    let theta = behavior_of(&sample_accepting_run(a, sem, rng)?);
    let mut hits = Vec::with_capacity(cfg.runs_per_triple - 1);
    for _ in 1..cfg.runs_per_triple {
        let b = behavior_of(&sample_accepting_run(a, sem, rng)?);
        hits.push(if b == theta { 1.0 } else { 0.0 });
    }
    let independent: f64 = hits.iter().sum();
    let use_inclusive = cfg.run_frequency == RunFrequency::Inclusive || independent == 0.0;
    if use_inclusive {
        hits.push(1.0);
    }
    let p_hat = hits.iter().sum::<f64>() / hits.len() as f64;
    let first = p_hat.ln();
    let bias_first = log_mean_bias(&hits, p_hat, cfg.bootstrap_resamples, rng)?;

    let psis = model.sample_psis(features, cfg.psis_per_triple, rng)?;
    let lps: Vec<f64> = psis.iter().map(|p| model.log_prob(p, &theta).map(Real::as_f64)).collect::<Result<_, _>>()?;
    let second = log_mean_exp(&lps);
    let bias_second = if model.psis_are_fixed() {
        0.0
    } else {
        // contributions rescaled by the largest one; the bias only depends on var / mean²
        let max = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let contrib: Vec<f64> = lps.iter().map(|l| (l - max).exp()).collect();
        let mean = contrib.iter().sum::<f64>() / contrib.len() as f64;
        log_mean_bias(&contrib, mean, cfg.bootstrap_resamples, rng)?
    };
    Ok(TripleTerms { first, second, bias_first, bias_second })
}

/// Bootstrap standard error of the mean of `values`.
pub fn bootstrap_std_err<R: Rng + ?Sized>(values: &[f64], resamples: usize, rng: &mut R) -> f64 {
    bootstrap_variance_of_mean(values, resamples, rng).sqrt()
}

/// Triples for one program, generated in parallel with per-triple random
/// streams derived from `seed`.
pub fn sample_triples<P: Probability, T: Real, M: ScoringModel<T> + ?Sized>(
    a: &Automaton<P>,
    model: &M,
    cfg: &ScorerConfig,
    seed: u64,
    range: std::ops::Range<usize>,
) -> Result<Vec<TripleTerms>, ScoreError> {
    cfg.validate()?;
    let a = a.map_probs(Probability::approx_f64);
    let features = extract_features(&a);
    if features.is_empty() {
        return Err(ScoreError::EmptyFeatures);
    }
    let sem = cfg.semantics();
    range
        .into_par_iter()
        .map(|i| one_triple(&a, &features, model, cfg, &sem, &mut triple_rng(seed, i as u64)))
        .collect()
}

/// Sampled, bias-corrected anomaly score.
///
/// Triples are drawn in batches until the bootstrap standard error falls
/// to `target_se` (after at least `min_triples`) or `max_triples` is
/// reached. The result depends only on `seed`, not on the thread count.
pub fn estimate_anomaly_score<P: Probability, T: Real, M: ScoringModel<T> + ?Sized>(
    a: &Automaton<P>,
    model: &M,
    cfg: &ScorerConfig,
    seed: u64,
) -> Result<AnomalyReport, ScoreError> {
    cfg.validate()?;
    let mut triples: Vec<TripleTerms> = Vec::new();
    let mut boot = triple_rng(seed, u64::MAX);
    let mut std_err = f64::INFINITY;
    while triples.len() < cfg.max_triples {
        let end = (triples.len() + cfg.batch).min(cfg.max_triples);
        triples.extend(sample_triples(a, model, cfg, seed, triples.len()..end)?);
        let corrected: Vec<f64> = triples.iter().map(TripleTerms::corrected).collect();
        std_err = bootstrap_std_err(&corrected, cfg.bootstrap_resamples, &mut boot);
        if triples.len() >= cfg.min_triples && std_err <= cfg.target_se {
            break;
        }
    }
    let n = triples.len() as f64;
    let corrected: Vec<f64> = triples.iter().map(TripleTerms::corrected).collect();
    let uncorrected: Vec<f64> = triples.iter().map(TripleTerms::uncorrected).collect();
    Ok(AnomalyReport {
        score: corrected.iter().sum::<f64>() / n,
        std_err,
        bias_total: triples.iter().map(|t| t.bias_first - t.bias_second).sum::<f64>() / n,
        uncorrected_score: uncorrected.iter().sum::<f64>() / n,
        uncorrected_std_err: bootstrap_std_err(&uncorrected, cfg.bootstrap_resamples, &mut boot),
        n_triples: triples.len(),
        seed,
        config: cfg.clone(),
    })
}

/// `Σ_theta P_F(theta) log(P_F(theta) / P(theta | X_F))` over the enumerated
/// support, with the posterior approximated by the mean over `psis`.
pub fn exact_anomaly_score<P: Probability, T: Real, M: ScoringModel<T> + ?Sized>(
    a: &Automaton<P>,
    model: &M,
    psis: &[TopicVector<T>],
    sem: &Semantics,
) -> Result<f64, ScoreError> {
    let dist = enumerate_behaviors(a, sem)?.to_f64();
    exact_score_of_distribution(&dist, model, psis)
}

pub fn exact_score_of_distribution<T: Real, M: ScoringModel<T> + ?Sized>(
    dist: &BehaviorDistribution<f64>,
    model: &M,
    psis: &[TopicVector<T>],
) -> Result<f64, ScoreError> {
    let mut total = 0.0;
    for (theta, &p) in dist.iter() {
        let q = posterior_behavior_log_prob(model, theta, psis)?.as_f64();
        total += p * (p.ln() - q);
    }
    Ok(total)
}

/// A score that may be infinite, serialized as a number or `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScoreValue {
    Finite(f64),
    Infinite,
}

impl ScoreValue {
    pub fn is_infinite(&self) -> bool {
        matches!(self, ScoreValue::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            ScoreValue::Finite(x) => Some(*x),
            ScoreValue::Infinite => None,
        }
    }
}

impl Serialize for ScoreValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ScoreValue::Finite(x) => s.serialize_f64(*x),
            ScoreValue::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ScoreValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(ScoreValue::Finite(x)),
            Raw::Str(s) if s == "inf" => Ok(ScoreValue::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

/// `KL(p ‖ q)` between enumerated behavior distributions.
pub fn kl_divergence(p: &BehaviorDistribution<f64>, q: &BehaviorDistribution<f64>) -> ScoreValue {
    let mut total = 0.0;
    for (theta, &pp) in p.iter() {
        let qq = q.prob(theta);
        if qq <= 0.0 {
            return ScoreValue::Infinite;
        }
        total += pp * (pp / qq).ln();
    }
    ScoreValue::Finite(total)
}

/// Corpus distributions enumerated once for repeated nearest-neighbour
/// queries.
pub struct KnnIndex {
    corpus: Vec<BehaviorDistribution<f64>>,
}

impl KnnIndex {
    pub fn new<P: Probability>(corpus: &[Automaton<P>], sem: &Semantics) -> Result<Self, ScoreError> {
        if corpus.is_empty() {
            return Err(ScoreError::EmptyCorpus);
        }
        let corpus = corpus
            .par_iter()
            .map(|a| enumerate_behaviors(a, sem).map(|d| d.to_f64()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(KnnIndex { corpus })
    }

    pub fn from_distributions(corpus: Vec<BehaviorDistribution<f64>>) -> Result<Self, ScoreError> {
        if corpus.is_empty() {
            return Err(ScoreError::EmptyCorpus);
        }
        Ok(KnnIndex { corpus })
    }

    pub fn len(&self) -> usize {
        self.corpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corpus.is_empty()
    }

    /// Mean of the `k` smallest divergences from `dist` to corpus members;
    /// infinite if fewer than `k` of them are finite.
    pub fn score(&self, dist: &BehaviorDistribution<f64>, k: usize) -> ScoreValue {
        let mut finite: Vec<f64> = self.corpus.iter().filter_map(|q| kl_divergence(dist, q).finite()).collect();
        let k = k.max(1);
        if finite.len() < k {
            return ScoreValue::Infinite;
        }
        finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ScoreValue::Finite(finite[..k].iter().sum::<f64>() / k as f64)
    }
}

/// Nearest-neighbour divergence of `a` to `corpus`.
pub fn knn_score<P: Probability>(a: &Automaton<P>, corpus: &[Automaton<P>], k: usize, sem: &Semantics) -> Result<ScoreValue, ScoreError> {
    let index = KnnIndex::new(corpus, sem)?;
    Ok(index.score(&enumerate_behaviors(a, sem)?.to_f64(), k))
}

/// One line of the score output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub program_id: String,
    pub location: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<ScoreValue>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bias_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_triples: Option<usize>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl ScoreRecord {
    pub fn from_report(program_id: &str, location: &str, r: &AnomalyReport) -> Self {
        ScoreRecord {
            program_id: program_id.to_string(),
            location: location.to_string(),
            score: Some(ScoreValue::Finite(r.score)),
            std_err: Some(r.std_err),
            bias_total: Some(r.bias_total),
            n_triples: Some(r.n_triples),
            seed: r.seed,
            error: None,
        }
    }

    pub fn failed(program_id: &str, location: &str, seed: u64, error: impl ToString) -> Self {
        ScoreRecord {
            program_id: program_id.to_string(),
            location: location.to_string(),
            score: None,
            std_err: None,
            bias_total: None,
            n_triples: None,
            seed,
            error: Some(error.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpa::fixtures::{dialog_example, single_path, DIALOG_EXAMPLE_THETA2_STATE};
    use crate::gpa::{Alphabet, Symbol, Transition};
    use num_rational::BigRational;
    use proptest::prelude::*;

    fn dialog_example_table(alpha: &Alphabet) -> BehaviorTable {
        let t1 = alpha.behavior(&["newA", "setTitle", "setItems", "show"]).unwrap();
        let t2 = alpha.behavior(&["newA", "setTitle", "show"]).unwrap();
        BehaviorTable::new([(t1, 0.99), (t2, 1e-5)], 1e-5)
    }

    fn unit_psi() -> Vec<TopicVector<f64>> {
        vec![TopicVector::uniform(1)]
    }

    #[test]
    fn worked_example_exact_value() {
        let (alpha, a) = dialog_example();
        let table = dialog_example_table(&alpha);
        let s = exact_anomaly_score(&a, &table, &unit_psi(), &Semantics::default()).unwrap();
        let expected = (2.0f64 / 3.0) * ((2.0 / 3.0) / 0.99f64).ln() + (1.0f64 / 3.0) * ((1.0 / 3.0) / 1e-5f64).ln();
        assert!((s - expected).abs() < 1e-12);
        let only_theta1 = a.without_states(&[DIALOG_EXAMPLE_THETA2_STATE]);
        let s1 = exact_anomaly_score(&only_theta1, &table, &unit_psi(), &Semantics::default()).unwrap();
        assert!((s1 - (1.0f64 / 0.99).ln()).abs() < 1e-12);
    }

    #[test]
    fn sampled_estimate_matches_worked_example() {
        let (alpha, a) = dialog_example();
        let table = dialog_example_table(&alpha);
        let exact = exact_anomaly_score(&a, &table, &unit_psi(), &Semantics::default()).unwrap();
        let r = estimate_anomaly_score(&a, &table, &ScorerConfig::default(), 17).unwrap();
        assert!((r.score - exact).abs() <= 3.0 * r.std_err, "{} vs {exact} (se {})", r.score, r.std_err);
    }

    #[test]
    fn single_behavior_score_is_log_inverse_q() {
        let (alpha, a) = single_path(&["a", "b"]);
        let theta = alpha.behavior(&["a", "b"]).unwrap();
        for q in [0.99, 0.5] {
            let table = BehaviorTable::new([(theta.clone(), q)], 1e-9);
            let exact = exact_anomaly_score(&a, &table, &unit_psi(), &Semantics::default()).unwrap();
            assert!((exact - (1.0 / q).ln()).abs() < 1e-12);
            let r = estimate_anomaly_score(&a, &table, &ScorerConfig::default(), 1).unwrap();
            assert!((r.score - (1.0 / q).ln()).abs() < 1e-12);
            assert!(r.std_err < 1e-12);
            assert_eq!(r.n_triples, ScorerConfig::default().min_triples);
        }
    }

    #[test]
    fn matching_model_scores_zero() {
        let (alpha, a) = dialog_example();
        let t1 = alpha.behavior(&["newA", "setTitle", "setItems", "show"]).unwrap();
        let t2 = alpha.behavior(&["newA", "setTitle", "show"]).unwrap();
        let table = BehaviorTable::new([(t1, 2.0 / 3.0), (t2, 1.0 / 3.0)], 1e-9);
        let exact = exact_anomaly_score(&a, &table, &unit_psi(), &Semantics::default()).unwrap();
        assert!(exact.abs() < 1e-12);
        let r = estimate_anomaly_score(&a, &table, &ScorerConfig::default(), 3).unwrap();
        assert!(r.score.abs() <= 3.0 * r.std_err.max(1e-3), "{r:?}");
    }

    #[test]
    fn posterior_log_prob_is_log_mean() {
        let (alpha, _) = single_path(&["a"]);
        let theta = alpha.behavior(&["a"]).unwrap();
        struct ByWeight;
        impl ScoringModel<f64> for ByWeight {
            fn sample_psis(&self, _: &FeatureSet, _: usize, _: &mut ChaCha8Rng) -> Result<Vec<TopicVector<f64>>, ScoreError> {
                unreachable!()
            }
            fn log_prob(&self, psi: &TopicVector<f64>, _: &Behavior) -> Result<f64, ScoreError> {
                Ok(psi.weights()[0].ln())
            }
        }
        let psis = vec![TopicVector::new(vec![0.2, 0.8]).unwrap(), TopicVector::new(vec![0.6, 0.4]).unwrap()];
        let v = posterior_behavior_log_prob(&ByWeight, &theta, &psis).unwrap();
        assert!((v - 0.4f64.ln()).abs() < 1e-12);
        let single = posterior_behavior_log_prob(&ByWeight, &theta, &psis[..1]).unwrap();
        assert!((single - 0.2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bias_series_values() {
        assert_eq!(log_mean_bias_from_variance(0.0, 0.5).unwrap(), 0.0);
        let b = log_mean_bias_from_variance(0.01, 1.0).unwrap();
        let expected = -(0.005 + 0.000075 + 15.0 * 1e-6 / 6.0 + 105.0 * 1e-8 / 8.0);
        assert!((b - expected).abs() < 1e-15);
        assert!(matches!(log_mean_bias_from_variance(0.1, 0.0), Err(ScoreError::DegenerateEstimate(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(log_mean_bias(&[0.3; 10], 0.3, 200, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn bias_series_truncates_before_growing_terms() {
        // r = 1: terms 0.5, 0.75, ... grow immediately
        assert_eq!(log_mean_bias_from_variance(1.0, 1.0).unwrap(), -0.5);
        // r = 0.25: first three terms shrink, the fourth would grow
        let r: f64 = 0.25;
        let b = log_mean_bias_from_variance(r, 1.0).unwrap();
        assert!((b + (r / 2.0 + 0.75 * r * r + 2.5 * r.powi(3))).abs() < 1e-15);
    }

    #[test]
    fn monotone_in_dominant_probability() {
        let (alpha, a) = dialog_example();
        let t1 = alpha.behavior(&["newA", "setTitle", "setItems", "show"]).unwrap();
        let t2 = alpha.behavior(&["newA", "setTitle", "show"]).unwrap();
        let mut last = f64::NEG_INFINITY;
        for q1 in [0.9, 0.5, 0.2, 0.05] {
            let table = BehaviorTable::new([(t1.clone(), q1), (t2.clone(), 0.05)], 1e-9);
            let s = exact_anomaly_score(&a, &table, &unit_psi(), &Semantics::default()).unwrap();
            assert!(s > last);
            last = s;
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (alpha, a) = dialog_example();
        let table = dialog_example_table(&alpha);
        let cfg = ScorerConfig { max_triples: 200, ..Default::default() };
        let x = estimate_anomaly_score(&a, &table, &cfg, 5).unwrap();
        let y = estimate_anomaly_score(&a, &table, &cfg, 5).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn std_err_shrinks_with_more_triples() {
        let (alpha, a) = dialog_example();
        let table = dialog_example_table(&alpha);
        let se = |n: usize| {
            let mut v: Vec<f64> = (0..9)
                .map(|seed| {
                    let cfg = ScorerConfig { min_triples: n, max_triples: n, batch: n, ..Default::default() };
                    estimate_anomaly_score(&a, &table, &cfg, seed).unwrap().std_err
                })
                .collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[4]
        };
        assert!(se(200) < se(100));
    }

    #[test]
    fn knn_examples() {
        let sem = Semantics::default();
        let (alpha, a) = dialog_example();
        let a = a.map_probs(|p: &BigRational| p.approx_f64());
        assert_eq!(knn_score(&a, std::slice::from_ref(&a), 1, &sem).unwrap(), ScoreValue::Finite(0.0));

        // a single-path automaton emitting a behavior nobody else has
        let novel = Automaton::new(2, 0, [1], vec![Transition::new(0, Symbol::new(3), 1.0, 1)]);
        assert_eq!(knn_score(&novel, std::slice::from_ref(&a), 1, &sem).unwrap(), ScoreValue::Infinite);

        // P_a = {theta: 1}, P_G = {theta: 0.5, theta': 0.5}
        let g = Automaton::new(
            3,
            0,
            [1, 2],
            vec![Transition::new(0, Symbol::new(0), 0.5, 1), Transition::new(0, Symbol::new(1), 0.5, 2)],
        );
        let p = Automaton::new(2, 0, [1], vec![Transition::new(0, Symbol::new(0), 1.0, 1)]);
        match knn_score(&p, &[g], 1, &sem).unwrap() {
            ScoreValue::Finite(x) => assert!((x - 2f64.ln()).abs() < 1e-12),
            v => panic!("{v:?}"),
        }
        let _ = alpha;
    }

    #[test]
    fn score_records_serialize_infinity_as_string() {
        let rec = ScoreRecord {
            score: Some(ScoreValue::Infinite),
            ..ScoreRecord::failed("p1", "end", 3, "x")
        };
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"score\":\"inf\""), "{json}");
        let back: ScoreRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn bundle_rejects_mismatched_topic_counts() {
        use crate::seqmodel::SequenceModel;
        let alpha = Alphabet::new(["a"]).unwrap();
        let lda = LdaModel::<f64> { alphabet: alpha.clone(), alpha: vec![0.1; 2], eta: 0.1, beta: vec![vec![1.0]; 2], doc_topics: vec![] };
        let seq = SequenceModel::<f64>::zeros(&alpha, 2, Some(3));
        assert!(matches!(ModelBundle::new(Some(lda), seq), Err(ScoreError::InconsistentBundle(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn first_term_is_always_finite(seed in 0u64..1000) {
            let (alpha, a) = dialog_example();
            let table = dialog_example_table(&alpha);
            for freq in [RunFrequency::Inclusive, RunFrequency::LeaveOneOut] {
                let cfg = ScorerConfig { runs_per_triple: 2, run_frequency: freq, ..Default::default() };
                for t in sample_triples(&a, &table, &cfg, seed, 0..16).unwrap() {
                    prop_assert!(t.first.is_finite() && t.first <= 0.0);
                }
            }
        }
    }
}

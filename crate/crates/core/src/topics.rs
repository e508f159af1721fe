//! Latent Dirichlet allocation over program feature sets.
//!
//! Training uses collapsed Gibbs sampling. At inference time the topic
//! vector of a new program is sampled by alternating per-word topic draws
//! with a Dirichlet redraw of the topic vector.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpa::{Alphabet, FeatureSet, Symbol};
use crate::num::Real;

pub const LDA_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopicsError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training document {index} is empty")]
    EmptyDocument { index: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("none of the program's features are in the model alphabet")]
    UnknownFeatures,
    #[error("topic {topic} out of range for a {k}-topic model")]
    TopicOutOfRange { topic: usize, k: usize },
    #[error("vector is not on the simplex: {0}")]
    NotOnSimplex(String),
    #[error("model format: {0}")]
    Format(String),
}

/// A point on the probability simplex over topics.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicVector<T>(Vec<T>);

impl<T: Real> TopicVector<T> {
    pub fn new(weights: Vec<T>) -> Result<Self, TopicsError> {
        if weights.is_empty() {
            return Err(TopicsError::NotOnSimplex("no components".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(TopicsError::NotOnSimplex("negative or non-finite component".into()));
        }
        let sum: T = weights.iter().copied().sum();
        if (sum - T::one()).abs() > T::simplex_tolerance() {
            return Err(TopicsError::NotOnSimplex(format!("components sum to {sum}")));
        }
        Ok(TopicVector(weights))
    }

    /// Normalizes non-negative weights with a positive sum.
    pub fn normalized(weights: Vec<T>) -> Result<Self, TopicsError> {
        let sum: T = weights.iter().copied().sum();
        if !(sum > T::zero()) || !sum.is_finite() {
            return Err(TopicsError::NotOnSimplex("weights have no positive mass".into()));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn uniform(k: usize) -> Self {
        TopicVector(vec![T::one() / T::from_usize(k).unwrap(); k])
    }

    pub fn one_hot(k: usize, topic: usize) -> Self {
        let mut v = vec![T::zero(); k];
        v[topic] = T::one();
        TopicVector(v)
    }

    pub fn weights(&self) -> &[T] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn argmax(&self) -> usize {
        (0..self.0.len()).fold(0, |best, i| if self.0[i] > self.0[best] { i } else { best })
    }

    pub fn cast<U: Real>(&self) -> TopicVector<U> {
        TopicVector(self.0.iter().map(|w| U::lit(w.as_f64())).collect())
    }
}

/// Draws from `Dir(concentration)`.
///
/// Gamma variates are combined in log space so that tiny concentrations
/// (e.g. 0.1 with no counts) do not underflow to an all-zero vector.
pub fn sample_dirichlet<T: Real, R: Rng + ?Sized>(concentration: &[T], rng: &mut R) -> TopicVector<T> {
    let logs: Vec<T> = concentration
        .iter()
        .map(|&a| {
            if a >= T::one() {
                T::sample_gamma(a, rng).ln()
            } else {
                // G(a) = G(a + 1) * U^(1/a)
                let u = T::one() - T::sample_unit(rng);
                T::sample_gamma(a + T::one(), rng).ln() + u.ln() / a
            }
        })
        .collect();
    let max = logs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logs.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    TopicVector(exps.into_iter().map(|e| e / sum).collect())
}

/// Draws an index with probability proportional to `weights`.
fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// A bag of feature symbols.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Document {
    pub words: Vec<Symbol>,
}

impl Document {
    pub fn new(words: Vec<Symbol>) -> Self {
        Document { words }
    }

    pub fn from_features(features: &FeatureSet) -> Self {
        Document { words: features.iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LdaConfig {
    pub topics: usize,
    /// Symmetric document-topic prior.
    pub alpha: f64,
    /// Topic-word prior; `None` means `1 / |alphabet|`.
    pub eta: Option<f64>,
    pub iterations: usize,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig { topics: 15, alpha: 0.1, eta: None, iterations: 500 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LdaModel<T> {
    pub alphabet: Alphabet,
    pub alpha: Vec<T>,
    pub eta: T,
    /// One distribution over the alphabet per topic.
    pub beta: Vec<Vec<T>>,
    /// Topic mixture of each training document.
    pub doc_topics: Vec<TopicVector<T>>,
}

impl<T: Real> LdaModel<T> {
    pub fn k(&self) -> usize {
        self.beta.len()
    }

    pub fn vocab_len(&self) -> usize {
        self.alphabet.len()
    }

    /// Topic responsibilities for one occurrence of `word` under the current
    /// topic vector: proportional to `beta_k(word) * psi_k`.
    pub fn word_topic_weights(&self, word: Symbol, psi: &TopicVector<T>) -> Vec<T> {
        let raw: Vec<T> = (0..self.k()).map(|k| self.beta[k][word.index()] * psi.weights()[k]).collect();
        let sum: T = raw.iter().copied().sum();
        raw.into_iter().map(|w| w / sum).collect()
    }

    pub fn cast<U: Real>(&self) -> LdaModel<U> {
        let conv = |x: &T| U::lit(x.as_f64());
        LdaModel {
            alphabet: self.alphabet.clone(),
            alpha: self.alpha.iter().map(conv).collect(),
            eta: conv(&self.eta),
            beta: self.beta.iter().map(|r| r.iter().map(conv).collect()).collect(),
            doc_topics: self.doc_topics.iter().map(TopicVector::cast).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = LdaDoc {
            version: LDA_FORMAT_VERSION,
            k: self.k(),
            alpha: self.alpha.iter().map(|a| a.as_f64()).collect(),
            eta: self.eta.as_f64(),
            alphabet: self.alphabet.names().to_vec(),
            beta: self.beta.iter().map(|r| r.iter().map(|b| b.as_f64()).collect()).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TopicsError> {
        let doc: LdaDoc = serde_json::from_str(text).map_err(|e| TopicsError::Format(e.to_string()))?;
        if doc.version != LDA_FORMAT_VERSION {
            return Err(TopicsError::Format(format!("unsupported version {}", doc.version)));
        }
        let alphabet = Alphabet::new(doc.alphabet).map_err(|e| TopicsError::Format(e.to_string()))?;
        if doc.alpha.len() != doc.k || doc.beta.len() != doc.k {
            return Err(TopicsError::Format("alpha/beta length does not match K".into()));
        }
        if doc.beta.iter().any(|r| r.len() != alphabet.len()) {
            return Err(TopicsError::Format("beta row length does not match alphabet".into()));
        }
        Ok(LdaModel {
            alphabet,
            alpha: doc.alpha.into_iter().map(T::lit).collect(),
            eta: T::lit(doc.eta),
            beta: doc.beta.into_iter().map(|r| r.into_iter().map(T::lit).collect()).collect(),
            doc_topics: Vec::new(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct LdaDoc {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    alpha: Vec<f64>,
    eta: f64,
    alphabet: Vec<String>,
    beta: Vec<Vec<f64>>,
}

/// Fits an LDA model by collapsed Gibbs sampling.
pub fn train_lda<T: Real, R: Rng + ?Sized>(
    docs: &[Document],
    alphabet: &Alphabet,
    cfg: &LdaConfig,
    rng: &mut R,
) -> Result<LdaModel<T>, TopicsError> {
    let k = cfg.topics;
    let v = alphabet.len();
    let eta = cfg.eta.unwrap_or(1.0 / v.max(1) as f64);
    if k == 0 {
        return Err(TopicsError::InvalidHyperparameter("topic count must be at least 1".into()));
    }
    if !(cfg.alpha > 0.0) || !(eta > 0.0) {
        return Err(TopicsError::InvalidHyperparameter("alpha and eta must be positive".into()));
    }
    if cfg.iterations == 0 {
        return Err(TopicsError::InvalidHyperparameter("iterations must be at least 1".into()));
    }
    if docs.is_empty() {
        return Err(TopicsError::EmptyCorpus);
    }
    if let Some(index) = docs.iter().position(Document::is_empty) {
        return Err(TopicsError::EmptyDocument { index });
    }
    if let Some(w) = docs.iter().flat_map(|d| &d.words).find(|w| w.index() >= v) {
        return Err(TopicsError::Format(format!("word {} outside alphabet of size {v}", w.index())));
    }

    let mut doc_topic = vec![vec![0u32; k]; docs.len()];
    let mut topic_word = vec![vec![0u32; v]; k];
    let mut topic_total = vec![0u32; k];
    let mut assignment: Vec<Vec<usize>> = docs
        .iter()
        .enumerate()
        .map(|(d, doc)| {
            doc.words
                .iter()
                .map(|w| {
                    let z = rng.random_range(0..k);
                    doc_topic[d][z] += 1;
                    topic_word[z][w.index()] += 1;
                    topic_total[z] += 1;
                    z
                })
                .collect()
        })
        .collect();

    let v_eta = v as f64 * eta;
    let mut weights = vec![0.0; k];
    for _ in 0..cfg.iterations {
        for (d, doc) in docs.iter().enumerate() {
            for (i, w) in doc.words.iter().enumerate() {
                let w = w.index();
                let old = assignment[d][i];
                doc_topic[d][old] -= 1;
                topic_word[old][w] -= 1;
                topic_total[old] -= 1;
                for (t, wt) in weights.iter_mut().enumerate() {
                    *wt = (doc_topic[d][t] as f64 + cfg.alpha) * (topic_word[t][w] as f64 + eta)
                        / (topic_total[t] as f64 + v_eta);
                }
                let new = sample_index(&weights, rng);
                assignment[d][i] = new;
                doc_topic[d][new] += 1;
                topic_word[new][w] += 1;
                topic_total[new] += 1;
            }
        }
    }

    let beta = (0..k)
        .map(|t| {
            let denom = topic_total[t] as f64 + v_eta;
            (0..v).map(|w| T::lit((topic_word[t][w] as f64 + eta) / denom)).collect()
        })
        .collect();
    let alpha_sum = cfg.alpha * k as f64;
    let doc_topics = docs
        .iter()
        .enumerate()
        .map(|(d, doc)| {
            let denom = doc.len() as f64 + alpha_sum;
            TopicVector((0..k).map(|t| T::lit((doc_topic[d][t] as f64 + cfg.alpha) / denom)).collect())
        })
        .collect();
    Ok(LdaModel {
        alphabet: alphabet.clone(),
        alpha: vec![T::lit(cfg.alpha); k],
        eta: T::lit(eta),
        beta,
        doc_topics,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorConfig {
    pub samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Dirichlet concentration for the initial draw and the redraws;
    /// `None` reuses the model's alpha.
    pub prior: Option<Vec<f64>>,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        PosteriorConfig { samples: 32, burn_in: 100, thin: 5, prior: None }
    }
}

impl PosteriorConfig {
    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }
}

/// Samples topic vectors from the posterior given a program's features.
pub fn infer_topic_posterior<T: Real, R: Rng + ?Sized>(
    model: &LdaModel<T>,
    features: &FeatureSet,
    cfg: &PosteriorConfig,
    rng: &mut R,
) -> Result<Vec<TopicVector<T>>, TopicsError> {
    let words: Vec<Symbol> = features.iter().filter(|w| w.index() < model.vocab_len()).collect();
    infer_from_words(model, &words, cfg, rng)
}

/// Same as [`infer_topic_posterior`] for a multiset of words.
pub fn infer_from_words<T: Real, R: Rng + ?Sized>(
    model: &LdaModel<T>,
    words: &[Symbol],
    cfg: &PosteriorConfig,
    rng: &mut R,
) -> Result<Vec<TopicVector<T>>, TopicsError> {
    let k = model.k();
    if cfg.samples == 0 || cfg.thin == 0 {
        return Err(TopicsError::InvalidHyperparameter("samples and thin must be at least 1".into()));
    }
    let words: Vec<Symbol> = words.iter().copied().filter(|w| w.index() < model.vocab_len()).collect();
    if words.is_empty() {
        return Err(TopicsError::UnknownFeatures);
    }
    let prior: Vec<T> = match &cfg.prior {
        Some(d) if d.len() != k => {
            return Err(TopicsError::InvalidHyperparameter(format!("prior has {} entries, model has {k} topics", d.len())))
        }
        Some(d) if d.iter().any(|x| !(*x > 0.0)) => {
            return Err(TopicsError::InvalidHyperparameter("prior entries must be positive".into()))
        }
        Some(d) => d.iter().map(|&x| T::lit(x)).collect(),
        None => model.alpha.clone(),
    };
    if k == 1 {
        return Ok(vec![TopicVector::one_hot(1, 0); cfg.samples]);
    }

    let mut psi = sample_dirichlet(&prior, rng);
    let mut out = Vec::with_capacity(cfg.samples);
    let mut step = 0usize;
    let mut weights = vec![0.0f64; k];
    while out.len() < cfg.samples {
        let mut counts = vec![T::zero(); k];
        for w in &words {
            for (t, wt) in weights.iter_mut().enumerate() {
                *wt = (model.beta[t][w.index()] * psi.weights()[t]).as_f64();
            }
            let z = if weights.iter().sum::<f64>() > 0.0 { sample_index(&weights, rng) } else { rng.random_range(0..k) };
            counts[z] = counts[z] + T::one();
        }
        let conc: Vec<T> = prior.iter().zip(&counts).map(|(&d, &n)| d + n).collect();
        psi = sample_dirichlet(&conc, rng);
        step += 1;
        if step > cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0 {
            out.push(psi.clone());
        }
    }
    Ok(out)
}

/// The `n` most probable words of a topic, in decreasing probability with
/// ties broken by symbol index.
pub fn topic_top_words<T: Real>(model: &LdaModel<T>, topic: usize, n: usize) -> Result<Vec<(Symbol, T)>, TopicsError> {
    let row = model.beta.get(topic).ok_or(TopicsError::TopicOutOfRange { topic, k: model.k() })?;
    let mut ranked: Vec<(Symbol, T)> = row.iter().enumerate().map(|(i, &p)| (Symbol::new(i), p)).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    ranked.truncate(n);
    Ok(ranked)
}

//! Topic-conditioned recurrent sequence model over behaviors.
//!
//! The hidden state evolves as `h_t = tanh(W h_{t-1} + V psi + U x_t + b_h)`
//! and the next-symbol distribution is `softmax(T h_t + b_y)`, with `x_t`
//! the one-hot encoding of the current symbol. The vocabulary is the
//! alphabet plus START and END sentinels.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpa::{Alphabet, Behavior};
use crate::num::Real;
use crate::topics::TopicVector;

pub const SEQ_FORMAT_VERSION: u32 = 1;

/// Lower bound applied to every per-token log-probability when scoring.
pub const LOG_PROB_FLOOR: f64 = -40.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeqError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("symbol index {index} outside vocabulary of size {vocab}")]
    SymbolOutOfVocab { index: usize, vocab: usize },
    #[error("behavior must be nonempty in paper mode")]
    EmptyBehavior,
    #[error("training data is empty")]
    EmptyTrainingSet,
    #[error("loss became non-finite at epoch {epoch}, example {example}")]
    NonFiniteLoss { epoch: usize, example: usize },
    #[error("model format: {0}")]
    Format(String),
}

/// How a behavior is turned into (input, target) token pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMode {
    /// Inputs `START s1..sn`, targets `s1..sn END`: a proper distribution
    /// over finite behaviors.
    #[default]
    Normalized,
    /// Inputs `s1..s(n-1)`, targets `s2..sn`: the first symbol and
    /// termination are not scored.
    Paper,
}

impl std::str::FromStr for ScoringMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "normalized" => Ok(ScoringMode::Normalized),
            "paper" => Ok(ScoringMode::Paper),
            other => Err(format!("unknown scoring mode `{other}` (expected normalized or paper)")),
        }
    }
}

/// All trainable tensors, stored row-major. `v` is absent for an
/// unconditioned model.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub w: Vec<T>,
    pub v: Option<Vec<T>>,
    pub u: Vec<T>,
    pub t: Vec<T>,
    pub b_h: Vec<T>,
    pub b_y: Vec<T>,
}

impl<T: Real> Weights<T> {
    fn zeros(h: usize, vocab: usize, topics: Option<usize>) -> Self {
        Weights {
            w: vec![T::zero(); h * h],
            v: topics.map(|k| vec![T::zero(); h * k]),
            u: vec![T::zero(); h * vocab],
            t: vec![T::zero(); vocab * h],
            b_h: vec![T::zero(); h],
            b_y: vec![T::zero(); vocab],
        }
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[T])> {
        let mut out = vec![("W", self.w.as_slice())];
        if let Some(v) = &self.v {
            out.push(("V", v.as_slice()));
        }
        out.extend([("U", self.u.as_slice()), ("T", self.t.as_slice()), ("b_h", self.b_h.as_slice()), ("b_y", self.b_y.as_slice())]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Vec<T>)> {
        let mut out = vec![("W", &mut self.w)];
        if let Some(v) = &mut self.v {
            out.push(("V", v));
        }
        out.extend([("U", &mut self.u), ("T", &mut self.t), ("b_h", &mut self.b_h), ("b_y", &mut self.b_y)]);
        out
    }

    fn norm(&self) -> T {
        self.tensors().iter().flat_map(|(_, x)| x.iter()).map(|&x| x * x).sum::<T>().sqrt()
    }

    fn scale(&mut self, s: T) {
        for (_, x) in self.tensors_mut() {
            x.iter_mut().for_each(|e| *e = *e * s);
        }
    }

    fn axpy(&mut self, a: T, other: &Self) {
        for ((_, x), (_, y)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (xi, &yi) in x.iter_mut().zip(y) {
                *xi = *xi + a * yi;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, x)| x.iter().all(|e| e.is_finite()))
    }
}

/// `out = M x` for an `rows x cols` row-major `M`, accumulated into `out`.
fn matvec_acc<T: Real>(m: &[T], cols: usize, x: &[T], out: &mut [T]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        *o = *o + row.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>();
    }
}

/// `out += M^T y` for an `rows x cols` row-major `M`.
fn matvec_t_acc<T: Real>(m: &[T], cols: usize, y: &[T], out: &mut [T]) {
    for (r, &yr) in y.iter().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        for (o, &a) in out.iter_mut().zip(row) {
            *o = *o + a * yr;
        }
    }
}

/// `M += y x^T`.
fn outer_acc<T: Real>(m: &mut [T], cols: usize, y: &[T], x: &[T]) {
    for (r, &yr) in y.iter().enumerate() {
        for (e, &xc) in m[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *e = *e + yr * xc;
        }
    }
}

fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cached activations of one forward pass.
struct Trace<T> {
    /// `hidden[0]` is the zero initial state; `hidden[t + 1]` follows input `t`.
    hidden: Vec<Vec<T>>,
    outputs: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModel<T> {
    alphabet: Alphabet,
    hidden: usize,
    topics: Option<usize>,
    pub weights: Weights<T>,
}

/// One training pair: a behavior and the topic vector it is conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample<T> {
    pub psi: TopicVector<T>,
    pub behavior: Behavior,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub mode: ScoringMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, lr: 0.05, clip_norm: 5.0, mode: ScoringMode::Normalized }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-token cross-entropy of each epoch, measured before each update.
    pub loss_history: Vec<f64>,
}

impl<T: Real> SequenceModel<T> {
    /// A model with every weight drawn uniformly from `[-init, init]`.
    /// `topics = None` builds the unconditioned variant.
    pub fn new<R: Rng + ?Sized>(alphabet: &Alphabet, hidden: usize, topics: Option<usize>, init: f64, rng: &mut R) -> Self {
        let mut m = Self::zeros(alphabet, hidden, topics);
        let scale = T::lit(2.0 * init);
        let offset = T::lit(init);
        for (_, x) in m.weights.tensors_mut() {
            x.iter_mut().for_each(|e| *e = T::sample_unit(rng) * scale - offset);
        }
        m
    }

    pub fn zeros(alphabet: &Alphabet, hidden: usize, topics: Option<usize>) -> Self {
        SequenceModel {
            alphabet: alphabet.clone(),
            hidden,
            topics,
            weights: Weights::zeros(hidden, alphabet.vocab_size(), topics),
        }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn vocab_size(&self) -> usize {
        self.alphabet.vocab_size()
    }

    /// Topic count for a conditioned model, `None` when unconditioned.
    pub fn topics(&self) -> Option<usize> {
        self.topics
    }

    pub fn is_conditioned(&self) -> bool {
        self.topics.is_some()
    }

    pub fn cast<U: Real>(&self) -> SequenceModel<U> {
        let c = |x: &Vec<T>| x.iter().map(|e| U::lit(e.as_f64())).collect::<Vec<U>>();
        let w = &self.weights;
        SequenceModel {
            alphabet: self.alphabet.clone(),
            hidden: self.hidden,
            topics: self.topics,
            weights: Weights { w: c(&w.w), v: w.v.as_ref().map(c), u: c(&w.u), t: c(&w.t), b_h: c(&w.b_h), b_y: c(&w.b_y) },
        }
    }

    fn check_psi(&self, psi: &[T]) -> Result<(), SeqError> {
        match self.topics {
            Some(k) if psi.len() != k => {
                Err(SeqError::DimensionMismatch(format!("topic vector has {} entries, model expects {k}", psi.len())))
            }
            _ => Ok(()),
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), SeqError> {
        let vocab = self.vocab_size();
        match tokens.iter().find(|&&t| t >= vocab) {
            Some(&index) => Err(SeqError::SymbolOutOfVocab { index, vocab }),
            None => Ok(()),
        }
    }

    /// Input and target token sequences for a behavior.
    pub fn tokens(&self, theta: &Behavior, mode: ScoringMode) -> Result<(Vec<usize>, Vec<usize>), SeqError> {
        let syms: Vec<usize> = theta.symbols().iter().map(|s| s.index()).collect();
        self.check_tokens(&syms)?;
        Ok(match mode {
            ScoringMode::Normalized => {
                let mut input = vec![self.alphabet.start_index()];
                input.extend(&syms);
                let mut target = syms;
                target.push(self.alphabet.end_index());
                (input, target)
            }
            ScoringMode::Paper => {
                if syms.is_empty() {
                    return Err(SeqError::EmptyBehavior);
                }
                (syms[..syms.len() - 1].to_vec(), syms[1..].to_vec())
            }
        })
    }

    fn conditioning(&self, psi: &[T]) -> Vec<T> {
        let mut c = self.weights.b_h.clone();
        if let (Some(v), Some(k)) = (&self.weights.v, self.topics) {
            matvec_acc(v, k, psi, &mut c);
        }
        c
    }

    fn run(&self, psi: &[T], inputs: &[usize]) -> Trace<T> {
        let h = self.hidden;
        let vocab = self.vocab_size();
        let base = self.conditioning(psi);
        let mut hidden = vec![vec![T::zero(); h]];
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let prev = hidden.last().unwrap();
            let mut pre = base.clone();
            matvec_acc(&self.weights.w, h, prev, &mut pre);
            for (r, p) in pre.iter_mut().enumerate() {
                *p = *p + self.weights.u[r * vocab + x];
            }
            let next: Vec<T> = pre.into_iter().map(T::tanh).collect();
            let mut logits = self.weights.b_y.clone();
            matvec_acc(&self.weights.t, h, &next, &mut logits);
            outputs.push(softmax(&logits));
            hidden.push(next);
        }
        Trace { hidden, outputs }
    }

    /// Output distributions `y_1..y_n` for the input symbols `inputs`
    /// (vocabulary indices, sentinels allowed).
    pub fn forward(&self, psi: &[T], inputs: &[usize]) -> Result<Vec<Vec<T>>, SeqError> {
        self.check_psi(psi)?;
        self.check_tokens(inputs)?;
        Ok(self.run(psi, inputs).outputs)
    }

    /// `log P(theta | psi)` with each token's log-probability floored at
    /// [`LOG_PROB_FLOOR`].
    pub fn sequence_log_prob(&self, psi: &[T], theta: &Behavior, mode: ScoringMode) -> Result<T, SeqError> {
        self.check_psi(psi)?;
        let (inputs, targets) = self.tokens(theta, mode)?;
        let trace = self.run(psi, &inputs);
        let floor = T::lit(LOG_PROB_FLOOR);
        Ok(trace.outputs.iter().zip(&targets).map(|(y, &t)| y[t].ln().max(floor)).sum())
    }

    /// Unfloored cross-entropy (sum over tokens) and its gradient.
    fn loss_and_grad(&self, psi: &[T], inputs: &[usize], targets: &[usize]) -> (T, Weights<T>) {
        let h = self.hidden;
        let vocab = self.vocab_size();
        let trace = self.run(psi, inputs);
        let mut g = Weights::zeros(h, vocab, self.topics);
        let mut loss = T::zero();
        let mut dh_next = vec![T::zero(); h];
        for step in (0..inputs.len()).rev() {
            let y = &trace.outputs[step];
            let h_t = &trace.hidden[step + 1];
            let h_prev = &trace.hidden[step];
            loss = loss - y[targets[step]].ln();
            let mut dlogits = y.clone();
            dlogits[targets[step]] = dlogits[targets[step]] - T::one();
            outer_acc(&mut g.t, h, &dlogits, h_t);
            for (b, d) in g.b_y.iter_mut().zip(&dlogits) {
                *b = *b + *d;
            }
            let mut dh = dh_next.clone();
            matvec_t_acc(&self.weights.t, h, &dlogits, &mut dh);
            let dz: Vec<T> = dh.iter().zip(h_t).map(|(&d, &a)| d * (T::one() - a * a)).collect();
            outer_acc(&mut g.w, h, &dz, h_prev);
            if let (Some(gv), Some(k)) = (&mut g.v, self.topics) {
                outer_acc(gv, k, &dz, psi);
            }
            for (r, &d) in dz.iter().enumerate() {
                g.u[r * vocab + inputs[step]] = g.u[r * vocab + inputs[step]] + d;
                g.b_h[r] = g.b_h[r] + d;
            }
            dh_next = vec![T::zero(); h];
            matvec_t_acc(&self.weights.w, h, &dz, &mut dh_next);
        }
        (loss, g)
    }

    /// Analytic gradient of the unfloored negative log-likelihood.
    pub fn gradient(&self, example: &TrainingExample<T>, mode: ScoringMode) -> Result<(T, Weights<T>), SeqError> {
        self.check_psi(example.psi.weights())?;
        let (inputs, targets) = self.tokens(&example.behavior, mode)?;
        Ok(self.loss_and_grad(example.psi.weights(), &inputs, &targets))
    }

    /// Trains on examples with fixed topic vectors.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        data: &[TrainingExample<T>],
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<TrainReport, SeqError> {
        let behaviors: Vec<Behavior> = data.iter().map(|e| e.behavior.clone()).collect();
        self.train_with(&behaviors, |i, _| data[i].psi.clone(), cfg, rng)
    }

    /// Trains on behaviors whose topic vector is chosen per example and per
    /// epoch by `psi_for(example_index, rng)`.
    pub fn train_with<R, F>(&mut self, behaviors: &[Behavior], mut psi_for: F, cfg: &TrainConfig, rng: &mut R) -> Result<TrainReport, SeqError>
    where
        R: Rng + ?Sized,
        F: FnMut(usize, &mut R) -> TopicVector<T>,
    {
        if behaviors.is_empty() {
            return Err(SeqError::EmptyTrainingSet);
        }
        let tokenized = behaviors.iter().map(|b| self.tokens(b, cfg.mode)).collect::<Result<Vec<_>, _>>()?;
        let lr = T::lit(cfg.lr);
        let clip = T::lit(cfg.clip_norm);
        let mut order: Vec<usize> = (0..behaviors.len()).collect();
        let mut report = TrainReport::default();
        for epoch in 0..cfg.epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut tokens = 0usize;
            for &i in &order {
                let psi = psi_for(i, rng);
                self.check_psi(psi.weights())?;
                let (inputs, targets) = &tokenized[i];
                if inputs.is_empty() {
                    continue;
                }
                let (loss, mut grad) = self.loss_and_grad(psi.weights(), inputs, targets);
                if !loss.is_finite() || !grad.all_finite() {
                    return Err(SeqError::NonFiniteLoss { epoch, example: i });
                }
                total += loss.as_f64();
                tokens += inputs.len();
                let norm = grad.norm();
                if norm > clip {
                    grad.scale(clip / norm);
                }
                self.weights.axpy(-lr, &grad);
            }
            report.loss_history.push(if tokens == 0 { 0.0 } else { total / tokens as f64 });
        }
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        let enc = |x: &[T]| {
            let bytes: Vec<u8> = x.iter().flat_map(|e| e.as_f64().to_le_bytes()).collect();
            B64.encode(bytes)
        };
        let w = &self.weights;
        let doc = SeqDoc {
            version: SEQ_FORMAT_VERSION,
            hidden: self.hidden,
            vocab: self.vocab_size(),
            topics: self.topics,
            conditioned: self.is_conditioned(),
            alphabet: self.alphabet.names().to_vec(),
            weights: WeightDoc {
                w: enc(&w.w),
                v: w.v.as_deref().map(enc),
                u: enc(&w.u),
                t: enc(&w.t),
                b_h: enc(&w.b_h),
                b_y: enc(&w.b_y),
            },
        };
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SeqError> {
        let doc: SeqDoc = serde_json::from_str(text).map_err(|e| SeqError::Format(e.to_string()))?;
        if doc.version != SEQ_FORMAT_VERSION {
            return Err(SeqError::Format(format!("unsupported version {}", doc.version)));
        }
        let alphabet = Alphabet::new(doc.alphabet).map_err(|e| SeqError::Format(e.to_string()))?;
        if alphabet.vocab_size() != doc.vocab || doc.conditioned != doc.topics.is_some() {
            return Err(SeqError::Format("header is inconsistent".into()));
        }
        let (h, vocab) = (doc.hidden, doc.vocab);
        let dec = |s: &str, len: usize, name: &str| -> Result<Vec<T>, SeqError> {
            let bytes = B64.decode(s).map_err(|e| SeqError::Format(format!("{name}: {e}")))?;
            if bytes.len() != len * 8 {
                return Err(SeqError::Format(format!("{name}: expected {len} values")));
            }
            Ok(bytes.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap()))).collect())
        };
        let v = match (doc.topics, &doc.weights.v) {
            (Some(k), Some(s)) => Some(dec(s, h * k, "V")?),
            (None, None) => None,
            _ => return Err(SeqError::Format("V presence does not match conditioning".into())),
        };
        let weights = Weights {
            w: dec(&doc.weights.w, h * h, "W")?,
            v,
            u: dec(&doc.weights.u, h * vocab, "U")?,
            t: dec(&doc.weights.t, vocab * h, "T")?,
            b_h: dec(&doc.weights.b_h, h, "b_h")?,
            b_y: dec(&doc.weights.b_y, vocab, "b_y")?,
        };
        if !weights.all_finite() {
            return Err(SeqError::Format("non-finite weight".into()));
        }
        Ok(SequenceModel { alphabet, hidden: h, topics: doc.topics, weights })
    }
}

#[derive(Serialize, Deserialize)]
struct SeqDoc {
    version: u32,
    hidden: usize,
    vocab: usize,
    topics: Option<usize>,
    conditioned: bool,
    alphabet: Vec<String>,
    weights: WeightDoc,
}

#[derive(Serialize, Deserialize)]
struct WeightDoc {
    #[serde(rename = "W")]
    w: String,
    #[serde(rename = "V", skip_serializing_if = "Option::is_none", default)]
    v: Option<String>,
    #[serde(rename = "U")]
    u: String,
    #[serde(rename = "T")]
    t: String,
    b_h: String,
    b_y: String,
}

/// Largest relative discrepancy between the analytic gradient and central
/// finite differences with step `epsilon`.
///
/// Every entry is checked for models with at most 5000 parameters; larger
/// models are checked on 500 random entries drawn from `rng`.
pub fn gradient_check<T: Real, R: Rng + ?Sized>(
    model: &SequenceModel<T>,
    example: &TrainingExample<T>,
    mode: ScoringMode,
    epsilon: f64,
    rng: &mut R,
) -> Result<GradientCheck, SeqError> {
    let (_, analytic) = model.gradient(example, mode)?;
    let (inputs, targets) = model.tokens(&example.behavior, mode)?;
    let psi = example.psi.weights();
    let eps = T::lit(epsilon);

    let names: Vec<&'static str> = analytic.tensors().iter().map(|(n, _)| *n).collect();
    let sizes: Vec<usize> = analytic.tensors().iter().map(|(_, x)| x.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut entries: Vec<(usize, usize)> = sizes.iter().enumerate().flat_map(|(t, &n)| (0..n).map(move |i| (t, i))).collect();
    if total > 5000 {
        entries.shuffle(rng);
        entries.truncate(500);
    }

    let mut probe = model.clone();
    let mut max_rel = 0.0f64;
    for &(t, i) in &entries {
        let original = probe.weights.tensors()[t].1[i];
        probe.weights.tensors_mut()[t].1[i] = original + eps;
        let (plus, _) = probe.loss_and_grad(psi, &inputs, &targets);
        probe.weights.tensors_mut()[t].1[i] = original - eps;
        let (minus, _) = probe.loss_and_grad(psi, &inputs, &targets);
        probe.weights.tensors_mut()[t].1[i] = original;
        let numeric = ((plus - minus) / (eps + eps)).as_f64();
        let a = analytic.tensors()[t].1[i].as_f64();
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(GradientCheck { max_relative_error: max_rel, checked: entries.len(), tensors: names })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Names of the tensors that were checked.
    pub tensors: Vec<&'static str>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpa::Symbol;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn alphabet(n: usize) -> Alphabet {
        Alphabet::new((0..n).map(|i| format!("s{i}"))).unwrap()
    }

    fn behavior(ix: &[usize]) -> Behavior {
        Behavior::new(ix.iter().map(|&i| Symbol::new(i)).collect()).unwrap()
    }

    fn psi(w: &[f64]) -> TopicVector<f64> {
        TopicVector::new(w.to_vec()).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let a = alphabet(6);
        let m = SequenceModel::<f64>::zeros(&a, 4, Some(2));
        let ys = m.forward(&[0.5, 0.5], &[a.start_index(), 0, 1]).unwrap();
        for y in ys {
            assert!(y.iter().all(|p| (p - 1.0 / 8.0).abs() < 1e-15));
        }
        let lp = m.sequence_log_prob(&[0.5, 0.5], &behavior(&[0, 1, 2]), ScoringMode::Normalized).unwrap();
        assert!((lp - 4.0 * (1.0f64 / 8.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn paper_mode_single_symbol_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = SequenceModel::<f64>::new(&alphabet(3), 4, Some(2), 0.08, &mut rng);
        assert_eq!(m.sequence_log_prob(&[1.0, 0.0], &behavior(&[2]), ScoringMode::Paper).unwrap(), 0.0);
        assert_eq!(m.sequence_log_prob(&[1.0, 0.0], &Behavior::empty(), ScoringMode::Paper).unwrap_err(), SeqError::EmptyBehavior);
    }

    #[test]
    fn unconditioned_model_ignores_psi() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = SequenceModel::<f64>::new(&alphabet(3), 5, None, 0.5, &mut rng);
        let b = behavior(&[0, 2, 1]);
        let x = m.sequence_log_prob(&[1.0, 0.0], &b, ScoringMode::Normalized).unwrap();
        let y = m.sequence_log_prob(&[0.0, 1.0, 0.0], &b, ScoringMode::Normalized).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn errors_on_bad_inputs() {
        let m = SequenceModel::<f64>::zeros(&alphabet(3), 2, Some(2));
        assert!(matches!(m.forward(&[1.0], &[0]), Err(SeqError::DimensionMismatch(_))));
        assert_eq!(m.forward(&[1.0, 0.0], &[9]).unwrap_err(), SeqError::SymbolOutOfVocab { index: 9, vocab: 5 });
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = alphabet(8);
        for mode in [ScoringMode::Normalized, ScoringMode::Paper] {
            let m = SequenceModel::<f64>::new(&a, 8, Some(3), 0.5, &mut rng);
            let ex = TrainingExample { psi: psi(&[0.2, 0.5, 0.3]), behavior: behavior(&[1, 4, 4, 7, 0]) };
            let gc = gradient_check(&m, &ex, mode, 1e-5, &mut rng).unwrap();
            assert!(gc.max_relative_error <= 1e-4, "{mode:?}: {}", gc.max_relative_error);
            assert!(gc.tensors.contains(&"V"));
        }
    }

    #[test]
    fn gradient_check_on_empty_behavior_and_unconditioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = alphabet(8);
        let m = SequenceModel::<f64>::new(&a, 8, Some(3), 0.5, &mut rng);
        let ex = TrainingExample { psi: psi(&[0.2, 0.5, 0.3]), behavior: Behavior::empty() };
        let gc = gradient_check(&m, &ex, ScoringMode::Normalized, 1e-5, &mut rng).unwrap();
        assert!(gc.max_relative_error <= 1e-4);
        let u = SequenceModel::<f64>::new(&a, 8, None, 0.5, &mut rng);
        let ex = TrainingExample { psi: psi(&[1.0]), behavior: behavior(&[3, 2]) };
        let gc = gradient_check(&u, &ex, ScoringMode::Normalized, 1e-5, &mut rng).unwrap();
        assert!(!gc.tensors.contains(&"V"));
        assert!(gc.max_relative_error <= 1e-4);
    }

    #[test]
    fn memorizes_single_behavior() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = alphabet(5);
        let mut m = SequenceModel::<f64>::new(&a, 16, Some(2), 0.08, &mut rng);
        let data = vec![TrainingExample { psi: psi(&[1.0, 0.0]), behavior: behavior(&[0, 3, 1, 4]) }; 20];
        let cfg = TrainConfig { epochs: 40, lr: 0.1, ..Default::default() };
        let report = m.train(&data, &cfg, &mut rng).unwrap();
        let final_loss = *report.loss_history.last().unwrap();
        assert!(final_loss.exp() <= 1.05, "perplexity {}", final_loss.exp());
        assert!(report.loss_history[0] > final_loss);
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = alphabet(4);
        let mut m = SequenceModel::<f64>::new(&a, 6, Some(2), 0.08, &mut rng);
        let before = m.clone();
        let data = vec![
            TrainingExample { psi: psi(&[1.0, 0.0]), behavior: behavior(&[0, 1]) },
            TrainingExample { psi: psi(&[0.0, 1.0]), behavior: behavior(&[2, 3, 3]) },
        ];
        let cfg = TrainConfig { epochs: 3, lr: 0.0, ..Default::default() };
        let r = m.train(&data, &cfg, &mut rng).unwrap();
        assert_eq!(m, before);
        assert!(r.loss_history.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    }

    /// Two patterns over the same first symbol whose continuation depends
    /// only on the topic.
    fn segregated() -> Vec<TrainingExample<f64>> {
        (0..40)
            .map(|i| {
                if i % 2 == 0 {
                    TrainingExample { psi: psi(&[1.0, 0.0]), behavior: behavior(&[0, 1, 2]) }
                } else {
                    TrainingExample { psi: psi(&[0.0, 1.0]), behavior: behavior(&[0, 3, 4]) }
                }
            })
            .collect()
    }

    fn mean_ce<T: Real>(m: &SequenceModel<T>, data: &[TrainingExample<T>]) -> f64 {
        let mut total = 0.0;
        let mut n = 0;
        for ex in data {
            let lp = m.sequence_log_prob(ex.psi.weights(), &ex.behavior, ScoringMode::Normalized).unwrap();
            total -= lp.as_f64();
            n += ex.behavior.len() + 1;
        }
        total / n as f64
    }

    #[test]
    fn conditioning_beats_unconditioned_and_is_live() {
        let a = alphabet(5);
        let data = segregated();
        let cfg = TrainConfig { epochs: 60, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut cond = SequenceModel::<f64>::new(&a, 16, Some(2), 0.08, &mut rng);
        cond.train(&data, &cfg, &mut rng).unwrap();
        let mut plain = SequenceModel::<f64>::new(&a, 16, None, 0.08, &mut rng);
        plain.train(&data, &cfg, &mut rng).unwrap();
        let held_out = segregated();
        assert!(mean_ce(&cond, &held_out) < mean_ce(&plain, &held_out));

        let prefix = [a.start_index(), 0];
        let argmax = |p: &[f64]| {
            let y = cond.forward(p, &prefix).unwrap().pop().unwrap();
            (0..y.len()).max_by(|&i, &j| y[i].partial_cmp(&y[j]).unwrap()).unwrap()
        };
        assert_ne!(argmax(&[1.0, 0.0]), argmax(&[0.0, 1.0]));
    }

    #[test]
    fn training_is_deterministic() {
        let a = alphabet(5);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut m = SequenceModel::<f64>::new(&a, 8, Some(2), 0.08, &mut rng);
            m.train(&segregated(), &TrainConfig { epochs: 2, ..Default::default() }, &mut rng).unwrap();
            m
        };
        assert_eq!(run().to_json(), run().to_json());
    }

    #[test]
    fn json_round_trip_preserves_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = alphabet(4);
        for topics in [Some(3), None] {
            let m = SequenceModel::<f64>::new(&a, 5, topics, 0.08, &mut rng);
            let back = SequenceModel::<f64>::from_json(&m.to_json()).unwrap();
            assert_eq!(back, m);
        }
        let m32 = SequenceModel::<f32>::new(&a, 5, Some(2), 0.08, &mut rng);
        let back = SequenceModel::<f32>::from_json(&m32.to_json()).unwrap();
        assert_eq!(back, m32);
    }

    #[test]
    fn f32_model_agrees_with_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = alphabet(4);
        let m = SequenceModel::<f64>::new(&a, 6, Some(2), 0.3, &mut rng);
        let m32: SequenceModel<f32> = m.cast();
        let b = behavior(&[0, 1, 3]);
        let x = m.sequence_log_prob(&[0.3, 0.7], &b, ScoringMode::Normalized).unwrap();
        let y = m32.sequence_log_prob(&[0.3, 0.7], &b, ScoringMode::Normalized).unwrap();
        assert!((x - y as f64).abs() < 1e-4);
    }

    /// Every behavior over `alphabet_len` symbols of length at most `max_len`.
    fn all_behaviors(alphabet_len: usize, max_len: usize) -> Vec<Behavior> {
        let mut out = vec![Behavior::empty()];
        let mut frontier = vec![Vec::<usize>::new()];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for p in &frontier {
                for s in 0..alphabet_len {
                    let mut q = p.clone();
                    q.push(s);
                    out.push(behavior(&q));
                    next.push(q);
                }
            }
            frontier = next;
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn softmax_outputs_are_distributions(seed in 0u64..10_000, inputs in prop::collection::vec(0usize..6, 0..10)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = SequenceModel::<f64>::new(&alphabet(4), 7, Some(3), 2.0, &mut rng);
            for y in m.forward(&[0.1, 0.6, 0.3], &inputs).unwrap() {
                prop_assert!(y.iter().all(|&p| p >= 0.0));
                prop_assert!((y.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }

        #[test]
        fn normalized_mode_is_sub_distribution(seed in 0u64..10_000, scale in 0.05f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = SequenceModel::<f64>::new(&alphabet(2), 4, Some(2), scale, &mut rng);
            let total: f64 = all_behaviors(2, 5)
                .iter()
                .map(|b| m.sequence_log_prob(&[0.4, 0.6], b, ScoringMode::Normalized).unwrap().exp())
                .sum();
            prop_assert!(total <= 1.0 + 1e-6, "total {}", total);
        }
    }
}

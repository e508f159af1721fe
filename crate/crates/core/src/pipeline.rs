//! End-to-end orchestration: run configuration, staged training, model
//! bundles on disk, batch scoring and the three evaluations (mutation
//! injection, corpus heterogeneity, nearest-neighbour baseline).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{compile_all_locations, item_rng, mutate_program, CompiledProgram, CorpusError, TrainingSet};
use crate::gpa::{enumerate_behaviors, extract_features, Alphabet, Automaton, Behavior, GpaError, Semantics};
use crate::scorer::{
    estimate_anomaly_score, exact_anomaly_score, KnnIndex, ModelBundle, ScoreError, ScoreRecord, ScoreValue, ScorerConfig,
    ScoringModel,
};
use crate::seqmodel::{ScoringMode, SeqError, SequenceModel, TrainConfig};
use crate::symexec::{parse_program, ExecOptions, SymexecError};
use crate::topics::{infer_topic_posterior, train_lda, Document, LdaConfig, LdaModel, PosteriorConfig, TopicVector, TopicsError};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("program {program} calls methods outside the alphabet: {}", calls.join(", "))]
    UnknownCalls { program: String, calls: Vec<String> },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{unit}: {message}")]
    Unit { unit: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Symexec(#[from] SymexecError),
    #[error(transparent)]
    Gpa(#[from] GpaError),
    #[error(transparent)]
    Topics(#[from] TopicsError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Broad failure classes, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Internal,
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Config(_) => ErrorClass::Config,
            PipelineError::Score(ScoreError::InvalidConfig(_)) => ErrorClass::Config,
            PipelineError::Topics(TopicsError::InvalidHyperparameter(_)) => ErrorClass::Config,
            PipelineError::Symexec(SymexecError::UnrollBoundZero) => ErrorClass::Config,
            PipelineError::Corpus(CorpusError::NoPatterns | CorpusError::BadWeight(_)) => ErrorClass::Config,
            PipelineError::Seq(SeqError::NonFiniteLoss { .. }) => ErrorClass::Internal,
            _ => ErrorClass::Data,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

pub fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Every tunable of a run. Echoed into each output artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Vec<String>,
    pub unroll_bound: u32,
    pub max_states: usize,
    pub samples_per_program: usize,
    pub topics: usize,
    pub alpha: f64,
    pub eta: Option<f64>,
    pub lda_iterations: usize,
    pub hidden: usize,
    pub init_scale: f64,
    pub epochs: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub mode: ScoringMode,
    /// Posterior topic vectors drawn per training record; one of them is
    /// picked at random for every example in every epoch.
    pub psi_pool: usize,
    pub posterior_burn_in: usize,
    pub posterior_thin: usize,
    pub scorer: ScorerConfig,
    /// Posterior samples used by exact scoring.
    pub exact_psis: usize,
    pub knn_k: usize,
    pub allow_unknown_calls: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let posterior = PosteriorConfig::default();
        RunConfig {
            seed: 0,
            paths: Vec::new(),
            unroll_bound: ExecOptions::default().unroll_bound,
            max_states: ExecOptions::default().max_states,
            samples_per_program: 50,
            topics: 6,
            alpha: 0.1,
            eta: None,
            lda_iterations: 500,
            hidden: 64,
            init_scale: 0.08,
            epochs: 30,
            lr: 0.05,
            clip_norm: 5.0,
            mode: ScoringMode::Normalized,
            psi_pool: 8,
            posterior_burn_in: posterior.burn_in,
            posterior_thin: posterior.thin,
            scorer: ScorerConfig::default(),
            exact_psis: 32,
            knn_k: 1,
            allow_unknown_calls: false,
        }
    }
}

impl RunConfig {
    pub fn exec_options(&self) -> ExecOptions {
        ExecOptions { unroll_bound: self.unroll_bound, max_states: self.max_states }
    }

    pub fn lda_config(&self) -> LdaConfig {
        LdaConfig { topics: self.topics, alpha: self.alpha, eta: self.eta, iterations: self.lda_iterations }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { epochs: self.epochs, lr: self.lr, clip_norm: self.clip_norm, mode: self.mode }
    }

    pub fn posterior_config(&self, samples: usize) -> PosteriorConfig {
        PosteriorConfig { samples, burn_in: self.posterior_burn_in, thin: self.posterior_thin, prior: None }
    }

    pub fn semantics(&self) -> Semantics {
        self.scorer.semantics()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.unroll_bound == 0 {
            return bad("unroll bound must be at least 1");
        }
        if self.topics == 0 || self.hidden == 0 {
            return bad("topics and hidden size must be at least 1");
        }
        if !(self.alpha > 0.0) || self.eta.is_some_and(|e| !(e > 0.0)) {
            return bad("alpha and eta must be positive");
        }
        if !(self.lr >= 0.0) || !(self.clip_norm > 0.0) || !(self.init_scale >= 0.0) {
            return bad("learning rate and init scale must be non-negative and clip norm positive");
        }
        if self.psi_pool == 0 || self.exact_psis == 0 || self.posterior_thin == 0 || self.knn_k == 0 {
            return bad("psi pool, exact psis, posterior thinning and k must be at least 1");
        }
        Ok(())
    }
}

/// Independent random stream `stage` of a run seed.
pub fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995_u64.wrapping_mul(stage + 1));
    rng.set_stream(stage);
    rng
}

/// A source program read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceFile {
    pub id: String,
    pub text: String,
}

/// Reads `*.dsl` files from `dir`, or from `dir/programs` when present,
/// ordered by file name. The id is the file stem.
pub fn read_programs(dir: &Path) -> Result<Vec<SourceFile>, PipelineError> {
    let nested = dir.join("programs");
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "dsl"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(SourceFile { id, text: read_text(p)? })
        })
        .collect()
}

/// Outcome of compiling one program: its locations, or the reason it
/// could not be compiled.
pub type CompileOutcome = Result<Vec<CompiledProgram<f64>>, (String, PipelineError)>;

/// Parses and symbolically executes every program in parallel, keeping
/// input order.
pub fn compile_sources(sources: &[SourceFile], alphabet: &Alphabet, cfg: &RunConfig) -> Vec<CompileOutcome> {
    let opts = cfg.exec_options();
    sources
        .par_iter()
        .map(|s| {
            let run = || -> Result<Vec<CompiledProgram<f64>>, PipelineError> {
                let program = parse_program(&s.text)?;
                if !cfg.allow_unknown_calls {
                    let unknown: Vec<String> = program.calls.iter().filter(|c| alphabet.symbol(c).is_none()).cloned().collect();
                    if !unknown.is_empty() {
                        return Err(PipelineError::UnknownCalls { program: s.id.clone(), calls: unknown });
                    }
                }
                Ok(compile_all_locations(&s.id, &program, alphabet, &opts)?)
            };
            run().map_err(|e| (s.id.clone(), e))
        })
        .collect()
}

/// Splits compile outcomes into compiled units and failures.
pub fn partition_compiled(outcomes: Vec<CompileOutcome>) -> (Vec<CompiledProgram<f64>>, Vec<(String, PipelineError)>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o {
            Ok(units) => ok.extend(units),
            Err(f) => failed.push(f),
        }
    }
    (ok, failed)
}

/// Alphabet of the symbols in a training set, sorted by name.
pub fn alphabet_of(ts: &TrainingSet) -> Result<Alphabet, PipelineError> {
    Ok(Alphabet::new(ts.symbol_names())?)
}

/// Models produced by [`train_models`].
#[derive(Clone, Debug)]
pub struct TrainedModels {
    pub model: ModelBundle<f64>,
    pub loss_history: Vec<f64>,
    /// Unconditioned network trained on the same behaviors.
    pub baseline: Option<SequenceModel<f64>>,
    pub baseline_loss_history: Vec<f64>,
}

fn behaviors_of(ts: &TrainingSet, alphabet: &Alphabet) -> Result<(Vec<Behavior>, Vec<usize>), PipelineError> {
    let mut behaviors = Vec::new();
    let mut owner = Vec::new();
    for (i, r) in ts.records.iter().enumerate() {
        for b in &r.behaviors {
            behaviors.push(alphabet.behavior(b)?);
            owner.push(i);
        }
    }
    Ok((behaviors, owner))
}

/// Staged training: LDA on the feature sets, then the recurrent network on
/// the behaviors. Each behavior is paired in every epoch with a topic
/// vector drawn from its program's posterior pool.
pub fn train_models(
    ts: &TrainingSet,
    alphabet: &Alphabet,
    cfg: &RunConfig,
    conditioned: bool,
    with_baseline: bool,
) -> Result<TrainedModels, PipelineError> {
    cfg.validate()?;
    let (behaviors, owner) = behaviors_of(ts, alphabet)?;
    if behaviors.is_empty() {
        return Err(PipelineError::EmptyTrainingSet);
    }
    let train_cfg = cfg.train_config();

    let (lda, seq, loss_history) = if conditioned {
        let features: Vec<Vec<crate::gpa::Symbol>> = ts
            .records
            .iter()
            .map(|r| r.features.iter().map(|f| alphabet.symbol(f).ok_or_else(|| GpaError::UnknownSymbol(f.clone()))).collect())
            .collect::<Result<_, _>>()?;
        let docs: Vec<Document> = features.iter().filter(|f| !f.is_empty()).map(|f| Document::new(f.clone())).collect();
        let lda: LdaModel<f64> = train_lda(&docs, alphabet, &cfg.lda_config(), &mut stage_rng(cfg.seed, 0))?;
        let post = cfg.posterior_config(cfg.psi_pool);
        let pools: Vec<Vec<TopicVector<f64>>> = ts
            .records
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                if r.features.is_empty() {
                    return Ok(vec![TopicVector::uniform(lda.k())]);
                }
                let fs = crate::gpa::FeatureSet::new(features[i].iter().copied());
                infer_topic_posterior(&lda, &fs, &post, &mut item_rng(cfg.seed ^ 0x7073_6970, i))
            })
            .collect::<Result<_, TopicsError>>()?;
        let mut rng = stage_rng(cfg.seed, 1);
        let mut seq = SequenceModel::new(alphabet, cfg.hidden, Some(cfg.topics), cfg.init_scale, &mut rng);
        let report = seq.train_with(
            &behaviors,
            |i, rng: &mut ChaCha8Rng| {
                let pool = &pools[owner[i]];
                pool[rng.random_range(0..pool.len())].clone()
            },
            &train_cfg,
            &mut rng,
        )?;
        (Some(lda), seq, report.loss_history)
    } else {
        let (seq, loss) = train_unconditioned(&behaviors, alphabet, cfg, &train_cfg)?;
        (None, seq, loss)
    };

    let (baseline, baseline_loss_history) = if with_baseline && conditioned {
        let (b, l) = train_unconditioned(&behaviors, alphabet, cfg, &train_cfg)?;
        (Some(b), l)
    } else {
        (None, Vec::new())
    };

    let mut model = ModelBundle::new(lda, seq)?;
    model.mode = cfg.mode;
    model.posterior = cfg.posterior_config(cfg.exact_psis);
    Ok(TrainedModels { model, loss_history, baseline, baseline_loss_history })
}

fn train_unconditioned(
    behaviors: &[Behavior],
    alphabet: &Alphabet,
    cfg: &RunConfig,
    train_cfg: &TrainConfig,
) -> Result<(SequenceModel<f64>, Vec<f64>), PipelineError> {
    let mut rng = stage_rng(cfg.seed, 2);
    let mut seq = SequenceModel::new(alphabet, cfg.hidden, None, cfg.init_scale, &mut rng);
    let unit = TopicVector::uniform(1);
    let report = seq.train_with(behaviors, |_, _: &mut ChaCha8Rng| unit.clone(), train_cfg, &mut rng)?;
    Ok((seq, report.loss_history))
}

/// Metadata stored next to the model files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format_version: u32,
    pub seed: u64,
    pub conditioned: bool,
    pub has_baseline: bool,
    pub training_procedure: String,
    pub n_records: usize,
    pub n_behaviors: usize,
    pub loss_history: Vec<f64>,
    pub baseline_loss_history: Vec<f64>,
    pub run_config: RunConfig,
}

const TRAINING_PROCEDURE: &str = "staged: collapsed-Gibbs LDA on per-program feature sets, then SGD with \
BPTT on (behavior, topic vector) pairs with topic vectors redrawn every epoch from a pool of posterior samples; \
approximates joint maximum likelihood with the topic vector integrated out";

/// A model bundle as loaded from disk.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub model: ModelBundle<f64>,
    pub baseline: Option<ModelBundle<f64>>,
    pub meta: BundleMeta,
}

/// Writes `lda.json` (conditioned models only), `rnn.json`, `baseline.json`
/// (when present) and `meta.json` into `dir`.
pub fn save_bundle(dir: &Path, trained: &TrainedModels, ts: &TrainingSet, cfg: &RunConfig) -> Result<BundleMeta, PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    if let Some(lda) = &trained.model.lda {
        write_text(&dir.join("lda.json"), &lda.to_json())?;
    }
    write_text(&dir.join("rnn.json"), &trained.model.seq.to_json())?;
    if let Some(b) = &trained.baseline {
        write_text(&dir.join("baseline.json"), &b.to_json())?;
    }
    let meta = BundleMeta {
        format_version: BUNDLE_FORMAT_VERSION,
        seed: cfg.seed,
        conditioned: trained.model.lda.is_some(),
        has_baseline: trained.baseline.is_some(),
        training_procedure: TRAINING_PROCEDURE.into(),
        n_records: ts.records.len(),
        n_behaviors: ts.behavior_count(),
        loss_history: trained.loss_history.clone(),
        baseline_loss_history: trained.baseline_loss_history.clone(),
        run_config: cfg.clone(),
    };
    write_text(&dir.join("meta.json"), &to_pretty_json(&meta))?;
    Ok(meta)
}

pub fn to_pretty_json<S: Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

pub fn load_bundle(dir: &Path) -> Result<Bundle, PipelineError> {
    let fmt = |p: &Path, e: &dyn std::fmt::Display| PipelineError::Format { path: p.display().to_string(), message: e.to_string() };
    let meta_path = dir.join("meta.json");
    let meta: BundleMeta = serde_json::from_str(&read_text(&meta_path)?).map_err(|e| fmt(&meta_path, &e))?;
    if meta.format_version != BUNDLE_FORMAT_VERSION {
        return Err(fmt(&meta_path, &format!("unsupported bundle format {}", meta.format_version)));
    }
    let rnn_path = dir.join("rnn.json");
    let seq = SequenceModel::from_json(&read_text(&rnn_path)?).map_err(|e| fmt(&rnn_path, &e))?;
    let lda = if meta.conditioned {
        let p = dir.join("lda.json");
        Some(LdaModel::from_json(&read_text(&p)?).map_err(|e| fmt(&p, &e))?)
    } else {
        None
    };
    let cfg = &meta.run_config;
    let mut model = ModelBundle::new(lda, seq)?;
    model.mode = cfg.mode;
    model.posterior = cfg.posterior_config(cfg.exact_psis);
    let baseline = if meta.has_baseline {
        let p = dir.join("baseline.json");
        let seq = SequenceModel::from_json(&read_text(&p)?).map_err(|e| fmt(&p, &e))?;
        let mut b = ModelBundle::new(None, seq)?;
        b.mode = cfg.mode;
        Some(b)
    } else {
        None
    };
    Ok(Bundle { model, baseline, meta })
}

/// How a single automaton is scored.
#[derive(Clone, Debug, PartialEq)]
pub enum ScoreMethod {
    /// The sampled, bias-corrected estimator.
    Sampled(ScorerConfig),
    /// Exact enumeration of the program's behaviors against the posterior
    /// mixture over `psis` sampled topic vectors.
    Exact { psis: usize, semantics: Semantics },
}

impl ScoreMethod {
    pub fn exact(cfg: &RunConfig) -> Self {
        ScoreMethod::Exact { psis: cfg.exact_psis, semantics: cfg.semantics() }
    }

    pub fn sampled(cfg: &RunConfig) -> Self {
        ScoreMethod::Sampled(cfg.scorer.clone())
    }
}

/// Derives the seed for work item `item` from a run seed.
pub fn item_seed(seed: u64, item: usize) -> u64 {
    item_rng(seed, item).random()
}

/// Scores one automaton.
pub fn score_automaton<M: ScoringModel<f64> + ?Sized>(
    unit: &CompiledProgram<f64>,
    model: &M,
    method: &ScoreMethod,
    seed: u64,
) -> ScoreRecord {
    let result = match method {
        ScoreMethod::Sampled(cfg) => estimate_anomaly_score(&unit.automaton, model, cfg, seed)
            .map(|r| ScoreRecord::from_report(&unit.program_id, &unit.location, &r)),
        ScoreMethod::Exact { psis, semantics } => exact_score(&unit.automaton, model, *psis, semantics, seed).map(|s| {
            let mut r = ScoreRecord::failed(&unit.program_id, &unit.location, seed, "");
            r.score = Some(ScoreValue::Finite(s));
            r.error = None;
            r
        }),
    };
    result.unwrap_or_else(|e| ScoreRecord::failed(&unit.program_id, &unit.location, seed, e))
}

/// Exact score of `a` with posterior samples drawn from its own features.
pub fn exact_score<M: ScoringModel<f64> + ?Sized>(
    a: &Automaton<f64>,
    model: &M,
    psis: usize,
    sem: &Semantics,
    seed: u64,
) -> Result<f64, ScoreError> {
    let features = extract_features(a);
    if features.is_empty() {
        return Err(ScoreError::EmptyFeatures);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psis = model.sample_psis(&features, psis, &mut rng)?;
    exact_anomaly_score(a, model, &psis, sem)
}

/// Scores every unit in parallel; unit `i` uses seed `item_seed(seed, i)`.
pub fn score_units<M: ScoringModel<f64> + ?Sized>(
    units: &[CompiledProgram<f64>],
    model: &M,
    method: &ScoreMethod,
    seed: u64,
) -> Vec<ScoreRecord> {
    units.par_iter().enumerate().map(|(i, u)| score_automaton(u, model, method, item_seed(seed, i))).collect()
}

/// Distribution summary of a batch of scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub n_scored: usize,
    pub n_failed: usize,
    pub n_infinite: usize,
    /// Cutoffs at the 10th, 20th, …, 90th percentiles of the finite scores.
    pub decile_cutoffs: Vec<f64>,
    /// Histogram over the decile bins (ten counts), infinite scores in the last bin.
    pub decile_counts: Vec<usize>,
    /// Scores at or above this value are in the top 10%.
    pub top10_threshold: Option<f64>,
    /// `program_id@location` of every record in the top 10%.
    pub top10: Vec<String>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(records: &[ScoreRecord]) -> ScoreSummary {
    let mut finite: Vec<f64> = records.iter().filter_map(|r| r.score.and_then(|s| s.finite())).collect();
    finite.sort_by(|a, b| a.total_cmp(b));
    let n_infinite = records.iter().filter(|r| r.score.is_some_and(|s| s.is_infinite())).count();
    let n_failed = records.iter().filter(|r| r.score.is_none()).count();
    let decile_cutoffs: Vec<f64> =
        if finite.is_empty() { Vec::new() } else { (1..10).map(|d| quantile(&finite, d as f64 / 10.0)).collect() };
    let mut decile_counts = vec![0usize; 10];
    if !decile_cutoffs.is_empty() {
        for &s in &finite {
            decile_counts[decile_cutoffs.iter().filter(|&&c| s > c).count()] += 1;
        }
        decile_counts[9] += n_infinite;
    }
    let top10_threshold = decile_cutoffs.last().copied();
    let top10 = records
        .iter()
        .filter(|r| match (r.score, top10_threshold) {
            (Some(ScoreValue::Infinite), _) => true,
            (Some(ScoreValue::Finite(s)), Some(t)) => s >= t,
            _ => false,
        })
        .map(|r| format!("{}@{}", r.program_id, r.location))
        .collect();
    ScoreSummary { n_scored: finite.len() + n_infinite, n_failed, n_infinite, decile_cutoffs, decile_counts, top10_threshold, top10 }
}

/// Before/after scores of one mutated unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationRow {
    pub program_id: String,
    pub location: String,
    pub before: f64,
    /// Highest score among the non-identity mutants; `None` when every
    /// drawn replacement was the original symbol.
    pub after: Option<f64>,
    pub mutation: String,
    pub identity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationEval {
    pub rows: Vec<MutationRow>,
    /// Mean score after mutation over mean score before, non-identity rows only.
    pub mean_relative_increase: f64,
    /// Mean of the per-row ratios `after / max(before, ratio_floor)`.
    pub mean_per_program_ratio: f64,
    pub ratio_floor: f64,
    pub identity_count: usize,
    pub skipped: Vec<String>,
}

pub const DEFAULT_RATIO_FLOOR: f64 = 0.05;

/// Mutates the last emission before acceptance in each unit and compares
/// scores. Every mutation site is mutated in its own copy and the highest
/// resulting score is kept. Before and after scores of a unit share a seed.
pub fn evaluate_mutations<M: ScoringModel<f64> + ?Sized>(
    units: &[CompiledProgram<f64>],
    alphabet: &Alphabet,
    model: &M,
    method: &ScoreMethod,
    seed: u64,
) -> Result<MutationEval, PipelineError> {
    let results: Vec<Result<Option<MutationRow>, PipelineError>> = units
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mut rng = item_rng(seed ^ 0x6d75_7461, i);
            let mutants = match mutate_program(&u.automaton, alphabet, &mut rng) {
                Ok(m) => m,
                Err(CorpusError::NoMutableCall) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let s = item_seed(seed, i);
            let score = |unit: &CompiledProgram<f64>| -> Result<f64, PipelineError> {
                let r = score_automaton(unit, model, method, s);
                match (r.score, r.error) {
                    (Some(ScoreValue::Finite(x)), _) => Ok(x),
                    (_, Some(message)) => {
                        Err(PipelineError::Unit { unit: format!("{}@{}", unit.program_id, unit.location), message })
                    }
                    _ => Ok(f64::INFINITY),
                }
            };
            let before = score(u)?;
            let mut best: Option<(f64, String)> = None;
            for m in mutants.iter().filter(|m| !m.is_identity()) {
                let unit = CompiledProgram { automaton: m.automaton.clone(), ..u.clone() };
                let after = score(&unit)?;
                if best.as_ref().is_none_or(|(b, _)| after > *b) {
                    best = Some((after, m.describe(alphabet)));
                }
            }
            let identity = best.is_none();
            let (after, mutation) = match best {
                Some((a, d)) => (Some(a), d),
                None => (None, mutants[0].describe(alphabet)),
            };
            Ok(Some(MutationRow { program_id: u.program_id.clone(), location: u.location.clone(), before, after, mutation, identity }))
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (r, u) in results.into_iter().zip(units) {
        match r? {
            Some(row) => rows.push(row),
            None => skipped.push(format!("{}@{}", u.program_id, u.location)),
        }
    }
    let live: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.after.map(|a| (r.before, a))).collect();
    let n = live.len() as f64;
    let mean_before = live.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_after = live.iter().map(|p| p.1).sum::<f64>() / n;
    Ok(MutationEval {
        mean_relative_increase: mean_after / mean_before,
        mean_per_program_ratio: live.iter().map(|(b, a)| a / b.max(DEFAULT_RATIO_FLOOR)).sum::<f64>() / n,
        ratio_floor: DEFAULT_RATIO_FLOOR,
        identity_count: rows.iter().filter(|r| r.identity).count(),
        rows,
        skipped,
    })
}

/// Relative-increase curves over corpus-growth steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeteroEval {
    /// Mean score per step.
    pub bayes_mean_scores: Vec<f64>,
    pub baseline_mean_scores: Vec<f64>,
    /// Mean score at each step over the mean score at the first step.
    pub bayes_relative: Vec<f64>,
    pub baseline_relative: Vec<f64>,
    pub n_programs: usize,
    pub n_failed: usize,
}

impl HeteroEval {
    /// Mean relative increase of the Bayesian model over the growth steps
    /// after the first.
    pub fn bayes_mean_increase(&self) -> f64 {
        crate::num::mean(&self.bayes_relative[1..])
    }

    pub fn baseline_mean_increase(&self) -> f64 {
        crate::num::mean(&self.baseline_relative[1..])
    }
}

/// Scores the same units under a Bayesian and a baseline model per corpus
/// growth step. Units that fail under any model are left out of every step.
pub fn evaluate_heterogeneity(
    steps: &[(&dyn ScoringModel<f64>, &dyn ScoringModel<f64>)],
    units: &[CompiledProgram<f64>],
    method: &ScoreMethod,
    seed: u64,
) -> Result<HeteroEval, PipelineError> {
    if steps.len() < 2 {
        return Err(PipelineError::Config("heterogeneity evaluation needs at least two corpus steps".into()));
    }
    let scores = |m: &dyn ScoringModel<f64>| -> Vec<Option<f64>> {
        score_units(units, m, method, seed).iter().map(|r| r.score.and_then(|s| s.finite())).collect()
    };
    let bayes: Vec<Vec<Option<f64>>> = steps.iter().map(|(b, _)| scores(*b)).collect();
    let base: Vec<Vec<Option<f64>>> = steps.iter().map(|(_, u)| scores(*u)).collect();
    let keep: Vec<usize> =
        (0..units.len()).filter(|&j| bayes.iter().chain(&base).all(|s| s[j].is_some())).collect();
    if keep.is_empty() {
        return Err(PipelineError::Config("no test program could be scored under every model".into()));
    }
    let means = |all: &[Vec<Option<f64>>]| -> Vec<f64> {
        all.iter().map(|s| keep.iter().map(|&j| s[j].unwrap()).sum::<f64>() / keep.len() as f64).collect()
    };
    let bayes_mean_scores = means(&bayes);
    let baseline_mean_scores = means(&base);
    let rel = |m: &[f64]| m.iter().map(|x| x / m[0]).collect::<Vec<_>>();
    Ok(HeteroEval {
        bayes_relative: rel(&bayes_mean_scores),
        baseline_relative: rel(&baseline_mean_scores),
        bayes_mean_scores,
        baseline_mean_scores,
        n_programs: keep.len(),
        n_failed: units.len() - keep.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnRow {
    pub program_id: String,
    pub location: String,
    pub knn: ScoreValue,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bayes: Option<f64>,
    /// Behaviors of this unit absent from every corpus program.
    pub novel_behaviors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnEval {
    pub k: usize,
    pub rows: Vec<KnnRow>,
    pub fraction_infinite: f64,
}

/// Nearest-neighbour divergence of each test unit to the corpus, alongside
/// its Bayesian score when a model is given.
pub fn evaluate_knn(
    corpus: &[CompiledProgram<f64>],
    tests: &[CompiledProgram<f64>],
    k: usize,
    sem: &Semantics,
    bayes: Option<(&dyn ScoringModel<f64>, &ScoreMethod)>,
    seed: u64,
) -> Result<KnnEval, PipelineError> {
    let dists = corpus
        .par_iter()
        .map(|u| enumerate_behaviors(&u.automaton, sem).map(|d| d.to_f64()))
        .collect::<Result<Vec<_>, _>>()?;
    let seen: BTreeSet<Behavior> = dists.iter().flat_map(|d| d.iter().map(|(b, _)| b.clone())).collect();
    let index = KnnIndex::from_distributions(dists)?;
    let rows = tests
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let d = enumerate_behaviors(&u.automaton, sem)?.to_f64();
            let bayes = bayes.and_then(|(m, method)| score_automaton(u, m, method, item_seed(seed, i)).score.and_then(|s| s.finite()));
            Ok(KnnRow {
                program_id: u.program_id.clone(),
                location: u.location.clone(),
                knn: index.score(&d, k),
                bayes,
                novel_behaviors: d.iter().filter(|(b, _)| !seen.contains(*b)).count(),
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let fraction_infinite =
        if rows.is_empty() { 0.0 } else { rows.iter().filter(|r| r.knn.is_infinite()).count() as f64 / rows.len() as f64 };
    Ok(KnnEval { k, rows, fraction_infinite })
}

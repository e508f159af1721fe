use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bayespec::corpus::{
    corpus_alphabet, extract_training_data, generate_corpus_with_prefix, load_patterns, CompiledProgram, PatternSpec,
    TrainingSet,
};
use bayespec::gpa::{automaton_to_json, Alphabet, Automaton};
use bayespec::pipeline::{
    self, compile_sources, evaluate_heterogeneity, evaluate_knn, evaluate_mutations, load_bundle, partition_compiled,
    read_programs, read_text, save_bundle, score_units, stage_rng, summarize, to_pretty_json, train_models, write_text,
    Bundle, ErrorClass, PipelineError, RunConfig, ScoreMethod,
};
use bayespec::scorer::{ScoreRecord, ScoringModel};
use bayespec::seqmodel::ScoringMode;
use bayespec::symexec::{parse_program, symbolic_execute};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "bayespec", version, about = "Bayesian API-usage anomaly detection over a toy imperative language")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from pattern files.
    GenCorpus {
        /// Pattern files or directories of `*.toml` patterns.
        #[arg(long, required = true, num_args = 1..)]
        patterns: Vec<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Prefix of generated program ids.
        #[arg(long, default_value = "p")]
        prefix: String,
    },
    /// Compile every program and sample training behaviors.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        /// Output file (default: CORPUS/training.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Train the topic model and sequence model.
    Train {
        /// Corpus directory holding training.jsonl, or the training file itself.
        #[arg(long)]
        corpus: PathBuf,
        /// Output bundle directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        model: ModelArgs,
        /// Train only an unconditioned sequence model.
        #[arg(long)]
        unconditioned: bool,
        /// Also train an unconditioned baseline next to the conditioned model.
        #[arg(long, conflicts_with = "unconditioned")]
        baseline: bool,
    },
    /// Score programs with a trained bundle.
    Score {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        programs: PathBuf,
        /// JSON-lines output; the summary goes to OUT.summary.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exact enumeration instead of the sampled estimator.
        #[arg(long)]
        exact: bool,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Mutation-injection evaluation.
    EvalMutation {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        programs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Relative score increase over bundles trained on growing corpora.
    EvalHetero {
        /// Bundles in corpus-growth order; each needs a baseline model.
        #[arg(long = "bundle", required = true)]
        bundles: Vec<PathBuf>,
        #[arg(long)]
        programs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Nearest-neighbour baseline against a corpus.
    EvalKnn {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        programs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Also report Bayesian scores from this bundle.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Print the automaton of one program as JSON.
    Compile {
        #[arg(long)]
        program: PathBuf,
        /// Accept label to compile for (default: the first).
        #[arg(long)]
        location: Option<String>,
        #[command(flatten)]
        exec: ExecArgs,
    },
}

#[derive(Args, Clone)]
struct ExecArgs {
    #[arg(long)]
    unroll_bound: Option<u32>,
    /// Treat calls outside the alphabet as silent instead of failing.
    #[arg(long)]
    allow_unknown_calls: bool,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lda_iters: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// normalized or paper.
    #[arg(long)]
    mode: Option<ScoringMode>,
}

#[derive(Args, Clone)]
struct ScoringArgs {
    #[command(flatten)]
    exec: ExecArgs,
    /// Topic-vector samples for exact scoring.
    #[arg(long)]
    psis: Option<usize>,
    /// Target standard error of the sampled estimator.
    #[arg(long)]
    target_se: Option<f64>,
    #[arg(long)]
    max_triples: Option<usize>,
}

struct Failure {
    class: ErrorClass,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure { class: e.class(), message: e.to_string() }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure { class: ErrorClass::Config, message: message.into() }
}

fn data_error(message: impl Into<String>) -> Failure {
    Failure { class: ErrorClass::Data, message: message.into() }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(match f.class {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Internal => 4,
            })
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::GenCorpus { patterns, n, out, seed, prefix } => gen_corpus(&patterns, n, &out, seed, &prefix),
        Command::Extract { corpus, out, samples, seed, exec } => extract(&corpus, out, samples, seed, &exec),
        Command::Train { corpus, out, seed, model, unconditioned, baseline } => {
            train(&corpus, &out, seed, &model, unconditioned, baseline)
        }
        Command::Score { bundle, programs, out, seed, exact, scoring } => score(&bundle, &programs, &out, seed, exact, &scoring),
        Command::EvalMutation { bundle, programs, out, seed, scoring } => eval_mutation(&bundle, &programs, &out, seed, &scoring),
        Command::EvalHetero { bundles, programs, out, seed, scoring } => eval_hetero(&bundles, &programs, &out, seed, &scoring),
        Command::EvalKnn { corpus, programs, out, seed, bundle, k, scoring } => {
            eval_knn(&corpus, &programs, &out, seed, bundle.as_deref(), k, &scoring)
        }
        Command::Compile { program, location, exec } => compile(&program, location.as_deref(), &exec),
    }
}

fn apply_exec(cfg: &mut RunConfig, exec: &ExecArgs) {
    if let Some(u) = exec.unroll_bound {
        cfg.unroll_bound = u;
    }
    cfg.allow_unknown_calls |= exec.allow_unknown_calls;
}

fn apply_scoring(cfg: &mut RunConfig, s: &ScoringArgs) {
    apply_exec(cfg, &s.exec);
    if let Some(p) = s.psis {
        cfg.exact_psis = p;
    }
    if let Some(t) = s.target_se {
        cfg.scorer.target_se = t;
    }
    if let Some(m) = s.max_triples {
        cfg.scorer.max_triples = m;
    }
}

fn path_strings(paths: &[&Path]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

#[derive(Serialize)]
struct CorpusManifest<'a> {
    run_config: &'a RunConfig,
    patterns: Vec<String>,
    programs: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestEntry {
    id: String,
    pattern: String,
}

fn gen_corpus(pattern_paths: &[PathBuf], n: usize, out: &Path, seed: u64, prefix: &str) -> CliResult {
    if n == 0 {
        return Err(config_error("--n must be at least 1"));
    }
    let mut specs: Vec<(PatternSpec, String)> = Vec::new();
    for p in pattern_files(pattern_paths)? {
        let spec = PatternSpec::load(&p).map_err(PipelineError::from)?;
        specs.push((spec, read_text(&p)?));
    }
    if specs.is_empty() {
        return Err(config_error("no pattern files found"));
    }
    let only: Vec<PatternSpec> = specs.iter().map(|(s, _)| s.clone()).collect();
    let programs = generate_corpus_with_prefix(&only, n, prefix, &mut stage_rng(seed, 0)).map_err(PipelineError::from)?;
    for prog in &programs {
        write_text(&out.join("programs").join(format!("{}.dsl", prog.id)), &prog.text)?;
    }
    for (s, text) in &specs {
        write_text(&out.join("patterns").join(format!("{}.toml", s.name)), text)?;
    }
    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    cfg.paths = path_strings(&pattern_paths.iter().map(PathBuf::as_path).chain([out]).collect::<Vec<_>>());
    let manifest = CorpusManifest {
        run_config: &cfg,
        patterns: only.iter().map(|s| s.name.clone()).collect(),
        programs: programs.iter().map(|p| ManifestEntry { id: p.id.clone(), pattern: p.pattern.clone() }).collect(),
    };
    write_text(&out.join("corpus.json"), &to_pretty_json(&manifest))?;
    eprintln!("wrote {} programs to {}", programs.len(), out.join("programs").display());
    Ok(())
}

/// Expands directories into their `*.toml` files, sorted by name.
fn pattern_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|e| data_error(format!("{}: {e}", p.display())))?;
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "toml"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// The alphabet of a corpus: from its pattern files when present,
/// otherwise every call that appears in its programs, sorted.
fn corpus_alphabet_of(corpus: &Path) -> Result<Alphabet, Failure> {
    let patterns = corpus.join("patterns");
    if patterns.is_dir() {
        let specs = load_patterns(&patterns).map_err(PipelineError::from)?;
        if !specs.is_empty() {
            return Ok(corpus_alphabet(&specs));
        }
    }
    let mut names = std::collections::BTreeSet::new();
    for s in read_programs(corpus)? {
        if let Ok(p) = parse_program(&s.text) {
            names.extend(p.calls);
        }
    }
    Alphabet::new(names).map_err(|e| data_error(e.to_string()))
}

#[derive(Serialize)]
struct ExtractMeta<'a> {
    run_config: &'a RunConfig,
    alphabet: Vec<String>,
    n_records: usize,
    n_behaviors: usize,
    failed: Vec<FailedProgram>,
}

#[derive(Serialize)]
struct FailedProgram {
    program_id: String,
    error: String,
}

fn extract(corpus: &Path, out: Option<PathBuf>, samples: usize, seed: u64, exec: &ExecArgs) -> CliResult {
    if samples == 0 {
        return Err(config_error("--samples must be at least 1"));
    }
    let mut cfg = RunConfig { seed, samples_per_program: samples, ..RunConfig::default() };
    apply_exec(&mut cfg, exec);
    cfg.validate()?;
    let out = out.unwrap_or_else(|| corpus.join("training.jsonl"));
    cfg.paths = path_strings(&[corpus, &out]);
    let alphabet = corpus_alphabet_of(corpus)?;
    let sources = read_programs(corpus)?;
    if sources.is_empty() {
        return Err(data_error(format!("no .dsl programs in {}", corpus.display())));
    }
    let (units, failed) = partition_compiled(compile_sources(&sources, &alphabet, &cfg));
    for (id, e) in &failed {
        eprintln!("warning: skipping {id}: {e}");
    }
    let ts = extract_training_data(&units, &alphabet, samples, &cfg.semantics(), seed).map_err(PipelineError::from)?;
    write_text(&out, &ts.to_jsonl())?;
    let meta = ExtractMeta {
        run_config: &cfg,
        alphabet: alphabet.names().to_vec(),
        n_records: ts.records.len(),
        n_behaviors: ts.behavior_count(),
        failed: failed.into_iter().map(|(program_id, e)| FailedProgram { program_id, error: e.to_string() }).collect(),
    };
    write_text(&sidecar(&out, "meta.json"), &to_pretty_json(&meta))?;
    eprintln!("wrote {} records ({} behaviors) to {}", meta.n_records, meta.n_behaviors, out.display());
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(serde::Deserialize)]
struct ExtractMetaIn {
    alphabet: Vec<String>,
}

fn train(corpus: &Path, out: &Path, seed: u64, m: &ModelArgs, unconditioned: bool, baseline: bool) -> CliResult {
    let training = if corpus.is_dir() { corpus.join("training.jsonl") } else { corpus.to_path_buf() };
    let ts = TrainingSet::from_jsonl(&read_text(&training)?).map_err(PipelineError::from)?;
    if ts.behavior_count() == 0 {
        return Err(PipelineError::EmptyTrainingSet.into());
    }
    let meta_path = sidecar(&training, "meta.json");
    let alphabet = match std::fs::read_to_string(&meta_path) {
        Ok(text) => {
            let meta: ExtractMetaIn = serde_json::from_str(&text).map_err(|e| data_error(format!("{}: {e}", meta_path.display())))?;
            Alphabet::new(meta.alphabet).map_err(|e| data_error(e.to_string()))?
        }
        Err(_) => pipeline::alphabet_of(&ts)?,
    };
    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    cfg.paths = path_strings(&[&training, out]);
    if let Some(v) = m.topics {
        cfg.topics = v;
    }
    if let Some(v) = m.alpha {
        cfg.alpha = v;
    }
    cfg.eta = m.eta.or(cfg.eta);
    if let Some(v) = m.lda_iters {
        cfg.lda_iterations = v;
    }
    if let Some(v) = m.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = m.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = m.lr {
        cfg.lr = v;
    }
    if let Some(v) = m.mode {
        cfg.mode = v;
    }
    let trained = train_models(&ts, &alphabet, &cfg, !unconditioned, baseline)?;
    save_bundle(out, &trained, &ts, &cfg)?;
    let last = trained.loss_history.last().copied().unwrap_or(f64::NAN);
    eprintln!("trained on {} behaviors; final loss {last:.4}; bundle at {}", ts.behavior_count(), out.display());
    Ok(())
}

fn load(bundle: &Path, seed: u64, scoring: &ScoringArgs, extra_paths: &[&Path]) -> Result<(Bundle, RunConfig), Failure> {
    let b = load_bundle(bundle)?;
    let mut cfg = b.meta.run_config.clone();
    cfg.seed = seed;
    cfg.allow_unknown_calls = false;
    apply_scoring(&mut cfg, scoring);
    cfg.validate()?;
    let mut paths = vec![bundle];
    paths.extend_from_slice(extra_paths);
    cfg.paths = path_strings(&paths);
    Ok((b, cfg))
}

/// Compiles a program directory, turning failures into error records.
fn compile_dir(
    dir: &Path,
    alphabet: &Alphabet,
    cfg: &RunConfig,
) -> Result<(Vec<CompiledProgram<f64>>, Vec<ScoreRecord>), Failure> {
    let sources = read_programs(dir)?;
    if sources.is_empty() {
        return Err(data_error(format!("no .dsl programs in {}", dir.display())));
    }
    let (units, failed) = partition_compiled(compile_sources(&sources, alphabet, cfg));
    let errors = failed.into_iter().map(|(id, e)| ScoreRecord::failed(&id, "-", cfg.seed, e)).collect();
    Ok((units, errors))
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    run_config: &'a RunConfig,
    method: &'static str,
    summary: pipeline::ScoreSummary,
}

fn score(bundle: &Path, programs: &Path, out: &Path, seed: u64, exact: bool, scoring: &ScoringArgs) -> CliResult {
    let (b, cfg) = load(bundle, seed, scoring, &[programs, out])?;
    let (units, mut records) = compile_dir(programs, b.model.seq.alphabet(), &cfg)?;
    let method = if exact { ScoreMethod::exact(&cfg) } else { ScoreMethod::sampled(&cfg) };
    records.extend(score_units(&units, &b.model, &method, seed));
    records.sort_by(|a, b| (&a.program_id, &a.location).cmp(&(&b.program_id, &b.location)));
    let lines: String = records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect();
    write_text(out, &lines)?;
    let summary = summarize(&records);
    eprintln!(
        "scored {} units ({} failed); top-10% threshold {}",
        summary.n_scored,
        summary.n_failed,
        summary.top10_threshold.map_or("n/a".into(), |t| format!("{t:.4}"))
    );
    let file = SummaryFile { run_config: &cfg, method: if exact { "exact" } else { "sampled" }, summary };
    write_text(&sidecar(out, "summary.json"), &to_pretty_json(&file))?;
    Ok(())
}

#[derive(Serialize)]
struct EvalFile<'a, T> {
    run_config: &'a RunConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    compile_errors: Vec<ScoreRecord>,
    result: T,
}

fn eval_mutation(bundle: &Path, programs: &Path, out: &Path, seed: u64, scoring: &ScoringArgs) -> CliResult {
    let (b, cfg) = load(bundle, seed, scoring, &[programs, out])?;
    let alphabet = b.model.seq.alphabet().clone();
    let (units, compile_errors) = compile_dir(programs, &alphabet, &cfg)?;
    let eval = evaluate_mutations(&units, &alphabet, &b.model, &ScoreMethod::exact(&cfg), seed)?;
    println!("{:<16} {:<10} {:>10} {:>10}  mutation", "program", "location", "before", "after");
    for r in &eval.rows {
        let after = r.after.map_or("identity".into(), |a| format!("{a:.4}"));
        println!("{:<16} {:<10} {:>10.4} {:>10}  {}", r.program_id, r.location, r.before, after, r.mutation);
    }
    println!(
        "mean relative increase {:.3}x (per-program mean {:.3}x); {} identity mutations excluded",
        eval.mean_relative_increase, eval.mean_per_program_ratio, eval.identity_count
    );
    write_text(out, &to_pretty_json(&EvalFile { run_config: &cfg, compile_errors, result: eval }))?;
    Ok(())
}

fn eval_hetero(bundles: &[PathBuf], programs: &Path, out: &Path, seed: u64, scoring: &ScoringArgs) -> CliResult {
    if bundles.len() < 2 {
        return Err(config_error("eval-hetero needs bundles for at least two corpus steps"));
    }
    let mut loaded = Vec::new();
    for p in bundles {
        let b = load_bundle(p)?;
        let Some(baseline) = b.baseline.clone() else {
            return Err(config_error(format!("{} has no baseline model; train it with --baseline", p.display())));
        };
        loaded.push((b.model, baseline, b.meta.run_config));
    }
    let mut cfg = loaded[0].2.clone();
    cfg.seed = seed;
    apply_scoring(&mut cfg, scoring);
    cfg.validate()?;
    cfg.paths = path_strings(&bundles.iter().map(PathBuf::as_path).chain([programs, out]).collect::<Vec<_>>());
    let alphabet = loaded.last().unwrap().0.seq.alphabet().clone();
    let (units, compile_errors) = compile_dir(programs, &alphabet, &cfg)?;
    let steps: Vec<(&dyn ScoringModel<f64>, &dyn ScoringModel<f64>)> =
        loaded.iter().map(|(m, u, _)| (m as &dyn ScoringModel<f64>, u as &dyn ScoringModel<f64>)).collect();
    let eval = evaluate_heterogeneity(&steps, &units, &ScoreMethod::exact(&cfg), seed)?;
    println!("{:<6} {:>12} {:>12}", "step", "bayesian", "baseline");
    for (i, (b, u)) in eval.bayes_relative.iter().zip(&eval.baseline_relative).enumerate() {
        println!("{:<6} {:>12.3} {:>12.3}", i + 1, b, u);
    }
    println!("mean increase after step 1: bayesian {:.3}, baseline {:.3}", eval.bayes_mean_increase(), eval.baseline_mean_increase());
    write_text(out, &to_pretty_json(&EvalFile { run_config: &cfg, compile_errors, result: eval }))?;
    Ok(())
}

fn eval_knn(
    corpus: &Path,
    programs: &Path,
    out: &Path,
    seed: u64,
    bundle: Option<&Path>,
    k: usize,
    scoring: &ScoringArgs,
) -> CliResult {
    let (model, mut cfg) = match bundle {
        Some(b) => {
            let (b, cfg) = load(b, seed, scoring, &[corpus, programs, out])?;
            (Some(b.model), cfg)
        }
        None => {
            let mut cfg = RunConfig { seed, ..RunConfig::default() };
            apply_scoring(&mut cfg, scoring);
            cfg.paths = path_strings(&[corpus, programs, out]);
            (None, cfg)
        }
    };
    cfg.knn_k = k;
    cfg.validate()?;
    let alphabet = match &model {
        Some(m) => m.seq.alphabet().clone(),
        None => corpus_alphabet_of(corpus)?,
    };
    let (corpus_units, _) = compile_dir(corpus, &alphabet, &cfg)?;
    let (tests, compile_errors) = compile_dir(programs, &alphabet, &cfg)?;
    let method = ScoreMethod::exact(&cfg);
    let bayes = model.as_ref().map(|m| (m as &dyn ScoringModel<f64>, &method));
    let eval = evaluate_knn(&corpus_units, &tests, k, &cfg.semantics(), bayes, seed)?;
    let infinite = eval.rows.iter().filter(|r| r.knn.is_infinite()).count();
    println!("{infinite} of {} test units have infinite {k}-NN distance (fraction {:.3})", eval.rows.len(), eval.fraction_infinite);
    write_text(out, &to_pretty_json(&EvalFile { run_config: &cfg, compile_errors, result: eval }))?;
    Ok(())
}

fn compile(program: &Path, location: Option<&str>, exec: &ExecArgs) -> CliResult {
    let mut cfg = RunConfig::default();
    apply_exec(&mut cfg, exec);
    cfg.validate()?;
    let text = read_text(program)?;
    let parsed = parse_program(&text).map_err(PipelineError::from)?;
    let alphabet = Alphabet::new(parsed.calls.iter().cloned()).map_err(|e| data_error(e.to_string()))?;
    let loc = match location {
        Some(l) => parsed.accept_location(l).map_err(PipelineError::from)?,
        None => parsed.accepts[0].location,
    };
    let a: Automaton<f64> = symbolic_execute(&parsed.cfg, &alphabet, loc, &cfg.exec_options()).map_err(PipelineError::from)?;
    println!("{}", automaton_to_json(&alphabet, &a));
    Ok(())
}

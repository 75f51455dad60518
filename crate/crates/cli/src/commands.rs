use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use cdr_core::eval::{write_reports, EvalReport, SpanMatch};
use cdr_core::harness::synth::files;
use cdr_core::harness::{
    decode_corpus, evaluate_hypotheses, read_hypotheses, run_sweep, write_hypotheses, write_synth, ExperimentConfig,
    LmScope, Models, SweepRow, SweepSpec, SynthSpec,
};
use cdr_core::lm::{read_arpa, train_ngram, write_arpa, LanguageModel, Smoothing, TrainConfig};
use cdr_core::names::{insert_tags, NameList, Perturbation, PerturbationSpec, Provenance, DEFAULT_ADVERSARIAL_COUNT};
use cdr_core::scorers::{FusionMode, TabularE2E};
use cdr_core::{Corpus, LoadOptions, Vocab};

use crate::manifest::Manifest;

/// Bad input detected by the CLI itself rather than by the core library.
#[derive(Debug)]
pub struct DataError(pub String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

macro_rules! data_bail {
    ($($t:tt)*) => { return Err(DataError(format!($($t)*)).into()) };
}

#[derive(Parser, Debug)]
#[command(name = "cdr", version, about = "Contextual density-ratio biasing toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus, name pool, in-domain LM and evidence table.
    Synth(SynthArgs),
    /// Train an n-gram LM on whitespace-tokenized text and write ARPA.
    TrainLm(TrainLmArgs),
    /// Insert <ne> tags around name-list matches in untagged text.
    Tag(TagArgs),
    /// Decode a corpus and write one hypothesis per utterance.
    Decode(DecodeArgs),
    /// Score hypothesis files against a reference corpus.
    Eval(EvalArgs),
    /// Run a grid of decode+eval cells.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON synthesis spec; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "CDR_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    conversations: Option<usize>,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    fraction_with_names: Option<f64>,
    /// Probability that a word position is ambiguous.
    #[arg(long)]
    noise: Option<f64>,
    /// Name pool file (one name per line); generated when omitted.
    #[arg(long)]
    pool: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainLmArgs {
    /// One sentence per line, tokens separated by spaces.
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// witten-bell | mle | add-k:<k>
    #[arg(long, default_value = "witten-bell")]
    smoothing: Smoothing,
}

#[derive(Args, Debug)]
struct TagArgs {
    /// Untagged text, one sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// Name list, one name per line.
    #[arg(long)]
    names: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Input files; `--data` points at a `cdr synth` output directory and
/// supplies defaults for the rest.
#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Per-conversation name lists (JSONL).
    #[arg(long)]
    names: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// In-domain LM (ARPA).
    #[arg(long)]
    id_lm: Option<PathBuf>,
    /// Evidence table (JSON).
    #[arg(long)]
    e2e: Option<PathBuf>,
    /// Name pool for distractor and adversarial names.
    #[arg(long)]
    pool: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<FusionMode>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// per-utterance-oracle | per-conversation | global
    #[arg(long)]
    scope: Option<LmScope>,
    /// Weight of the name model inside the NE LM.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    ne_order: Option<usize>,
    /// Add this many random distractor names per list.
    #[arg(long, conflicts_with = "adversarial")]
    distractors: Option<usize>,
    /// Add adversarial names at this Levenshtein distance.
    #[arg(long)]
    adversarial: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ADVERSARIAL_COUNT)]
    adversarial_count: usize,
    #[arg(long, env = "CDR_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Hypotheses output (JSONL); the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Hypothesis files as `path` or `system=path`.
    #[arg(long = "hyp", required = true)]
    hyps: Vec<String>,
    /// Report TSV; counts go to `<out>.counts.json`. Printed to stdout when
    /// omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Require exact tag boundaries for span matches.
    #[arg(long)]
    exact_spans: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// JSON sweep spec, e.g. {"kind":"distractors"}.
    #[arg(long)]
    sweep: Option<PathBuf>,
    /// Shorthand grid: distractors | adversarial | modes | scopes.
    #[arg(long, conflicts_with = "sweep")]
    grid: Option<String>,
    /// Output directory for sweep.tsv, curve.tsv and manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::TrainLm(a) => train_lm(a),
        Command::Tag(a) => tag(a),
        Command::Decode(a) => decode(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.conversations {
        spec.n_conversations = n;
    }
    if let Some(n) = a.utterances {
        spec.utterances_per_conversation = n;
    }
    if let Some(f) = a.fraction_with_names {
        spec.fraction_with_names = f;
    }
    if let Some(r) = a.noise {
        spec.noise = r;
    }
    if a.pool.is_some() {
        spec.name_pool = a.pool;
    }
    let s = write_synth(&spec, &a.out)?;
    println!(
        "wrote {}: vocab {}, train {} utterances, test {} utterances ({} with names)",
        s.dir.display(),
        s.vocab_size,
        s.train_utterances,
        s.test_utterances,
        s.test_utterances_with_names
    );
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(String::from).collect())
}

fn train_lm(a: TrainLmArgs) -> Result<()> {
    let vocab = Vocab::load(&a.vocab)?;
    let sequences = read_lines(&a.text)?
        .iter()
        .enumerate()
        .map(|(i, l)| vocab.encode_str(l, false).with_context(|| format!("{}:{}", a.text.display(), i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let lm = train_ngram(&sequences, &vocab, TrainConfig::new(a.order, a.smoothing))?;
    write_arpa(&lm, &vocab, &a.out)?;
    Ok(())
}

fn tag(a: TagArgs) -> Result<()> {
    let vocab = Vocab::load(&a.vocab)?;
    let names = NameList::load(&a.names, Provenance::True)?.encode(&vocab)?;
    let mut out = String::new();
    for (i, line) in read_lines(&a.input)?.iter().enumerate() {
        let ids = vocab.encode_str(line, false).with_context(|| format!("{}:{}", a.input.display(), i + 1))?;
        out.push_str(&vocab.join(&insert_tags(&ids, &names, &vocab)?));
        out.push('\n');
    }
    write_atomic(&a.out, out.as_bytes())
}

struct Resolved {
    corpus: PathBuf,
    names: Option<PathBuf>,
    vocab: PathBuf,
    id_lm: PathBuf,
    e2e: PathBuf,
    pool: Option<PathBuf>,
}

fn pick(explicit: &Option<PathBuf>, data: &Option<PathBuf>, default: &str, what: &str) -> Result<PathBuf> {
    match (explicit, data) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(d)) => Ok(d.join(default)),
        (None, None) => bail!("--{what} (or --data) is required"),
    }
}

fn optional(explicit: &Option<PathBuf>, data: &Option<PathBuf>, default: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| data.as_ref().map(|d| d.join(default)).filter(|p| p.exists()))
}

impl ModelArgs {
    fn resolve(&self) -> Result<Resolved> {
        Ok(Resolved {
            corpus: pick(&self.corpus, &self.data, files::TEST, "corpus")?,
            names: optional(&self.names, &self.data, files::TEST_NAMES),
            vocab: pick(&self.vocab, &self.data, files::VOCAB, "vocab")?,
            id_lm: pick(&self.id_lm, &self.data, files::ID_LM, "id-lm")?,
            e2e: pick(&self.e2e, &self.data, files::E2E, "e2e")?,
            pool: optional(&self.pool, &self.data, files::POOL),
        })
    }
}

impl Resolved {
    fn load(&self) -> Result<(Corpus, Models)> {
        let vocab = Vocab::load(&self.vocab)?;
        let corpus = Corpus::load(&self.corpus, self.names.as_deref(), &vocab, LoadOptions::default())?;
        let id_lm: Arc<dyn LanguageModel> = Arc::new(read_arpa(&self.id_lm, &vocab)?);
        let e2e = Arc::new(TabularE2E::load(&self.e2e, &vocab)?);
        let pool = match &self.pool {
            Some(p) => Some(NameList::load(p, Provenance::Distractor)?),
            None => None,
        };
        Ok((corpus, Models::new(vocab, id_lm, e2e, pool)))
    }

    fn record(&self, m: &mut Manifest<ExperimentConfig>) -> Result<()> {
        m.input("corpus", &self.corpus)?;
        if let Some(n) = &self.names {
            m.input("names", n)?;
        }
        m.input("vocab", &self.vocab)?;
        m.input("id_lm", &self.id_lm)?;
        m.input("e2e", &self.e2e)?;
        let lm_ref = transition_ref(&self.e2e)?;
        m.input("e2e_transition_lm", &lm_ref)?;
        if let Some(p) = &self.pool {
            m.input("pool", p)?;
        }
        Ok(())
    }
}

fn transition_ref(e2e: &Path) -> Result<PathBuf> {
    #[derive(serde::Deserialize)]
    struct Head {
        transition_lm: String,
    }
    let head: Head = read_json(e2e)?;
    Ok(e2e.parent().unwrap_or(Path::new(".")).join(head.transition_lm))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c: ExperimentConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if let Some(v) = self.beam_width {
            c.beam_width = v;
        }
        if let Some(v) = self.max_len {
            c.max_len = v;
        }
        if let Some(v) = self.scope {
            c.lm_scope = v;
        }
        if let Some(v) = self.mu {
            c.ne_mu = v;
        }
        if let Some(v) = self.ne_order {
            c.ne_order = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        let kind = match (self.distractors, self.adversarial) {
            (Some(count), _) => Some(Perturbation::Distractor { count }),
            (None, Some(distance)) => Some(Perturbation::Adversarial { count: self.adversarial_count, distance }),
            (None, None) => None,
        };
        if let Some(kind) = kind {
            c.perturbation = Some(PerturbationSpec { kind, seed: c.seed });
        }
        c.validate()?;
        Ok(c)
    }
}

fn decode(a: DecodeArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let files = a.models.resolve()?;
    let (corpus, models) = files.load()?;
    let hyps = decode_corpus(&corpus, &models, &config)?;
    write_hypotheses(&a.out, &hyps)?;
    let mut manifest = Manifest::new("decode", config);
    files.record(&mut manifest)?;
    manifest.write(&sidecar(&a.out, ".manifest.json"))?;
    eprintln!("decoded {} utterances into {}", hyps.len(), a.out.display());
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn eval(a: EvalArgs) -> Result<()> {
    let vocab = Vocab::load(pick(&a.vocab, &a.data, files::VOCAB, "vocab")?)?;
    let corpus_path = pick(&a.corpus, &a.data, files::TEST, "corpus")?;
    let corpus = Corpus::load(&corpus_path, None, &vocab, LoadOptions::default())?;
    let criterion = if a.exact_spans { SpanMatch::Exact } else { SpanMatch::Overlap };
    let mut reports = Vec::new();
    for spec in &a.hyps {
        let (system, path) = match spec.split_once('=') {
            Some((s, p)) => (s.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.clone());
                (stem, p)
            }
        };
        if system.is_empty() || system.contains('\t') {
            data_bail!("invalid system name {system:?}");
        }
        let hyps = read_hypotheses(&path)?;
        let counts = evaluate_hypotheses(&corpus, &hyps, &vocab, criterion).with_context(|| format!("evaluating {}", path.display()))?;
        reports.push(EvalReport::from_counts(system, counts));
    }
    match &a.out {
        Some(out) => write_reports(&reports, out)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{}", EvalReport::TSV_HEADER)?;
            for r in &reports {
                writeln!(stdout, "{}", r.tsv_row())?;
            }
        }
    }
    Ok(())
}

fn sweep_spec(a: &SweepArgs) -> Result<SweepSpec> {
    if let Some(p) = &a.sweep {
        return read_json(p);
    }
    let spec = match a.grid.as_deref() {
        Some("distractors") | None => SweepSpec::Distractors { counts: cdr_core::harness::default_distractor_counts() },
        Some("adversarial") => SweepSpec::Adversarial { distances: vec![1, 2, 4], count: a.config.adversarial_count },
        Some("modes") => SweepSpec::Modes {
            modes: vec![FusionMode::Plain, FusionMode::Csf, FusionMode::Cdr],
        },
        Some("scopes") => SweepSpec::Scopes {
            scopes: vec![LmScope::PerUtteranceOracle, LmScope::PerConversation, LmScope::Global],
        },
        Some(other) => bail!("unknown grid {other:?} (distractors | adversarial | modes | scopes)"),
    };
    Ok(spec)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let base = a.config.resolve()?;
    let spec = sweep_spec(&a)?;
    let files = a.models.resolve()?;
    let (corpus, models) = files.load()?;

    let mut manifest = Manifest::new("sweep", base.clone());
    files.record(&mut manifest)?;
    manifest.extra.insert("sweep", serde_json::to_value(&spec)?);
    manifest.write(&a.out_dir.join("manifest.json"))?;

    let table_path = a.out_dir.join("sweep.tsv");
    let curve_path = a.out_dir.join("curve.tsv");
    let mut table = format!("{}\n", SweepRow::TSV_HEADER);
    let mut curve = String::from("x\tWERT\n");
    run_sweep(&corpus, &models, &base, &spec, |row| {
        table.push_str(&row.tsv_row());
        table.push('\n');
        curve.push_str(&row.curve_point());
        curve.push('\n');
        eprintln!("{}", row.tsv_row());
        write_atomic(&table_path, table.as_bytes())
            .and_then(|_| write_atomic(&curve_path, curve.as_bytes()))
            .map_err(|e| cdr_core::Error::Internal(format!("{e:#}")))
    })?;
    Ok(())
}

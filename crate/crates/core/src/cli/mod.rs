//! Command-line front end.

mod config;

pub use config::{Paths, RunConfig, ToySection};

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use crate::dataio::{
    clean_tokens, gen_toy_corpus, load_corpus, read_corpus_entries, CorpusShape, EmbeddingTable, StoryRecord,
};
use crate::decoder::{Checkpoint, ModelDims, ModelParameters};
use crate::error::Error;
use crate::inference::{generate_record, StoryOutput};
use crate::metrics::{bleu, cider, nearest_neighbors, Query};
use crate::training::{gradcheck, train, CHECKPOINT_FILE, LOSS_LOG_FILE};

/// Gradient checks fail above this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "hstory", version, about = "Hierarchical attention-LSTM story generator")]
pub struct Cli {
    /// JSON file overriding the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Start from the published model's dimensions and hyperparameters.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with features and embeddings.
    GenToy(GenToyArgs),
    /// Train a model; writes a checkpoint and a loss log.
    Train(TrainArgs),
    /// Generate stories as JSON lines.
    Generate(GenerateArgs),
    /// Score generated stories against the corpus.
    Evaluate(EvaluateArgs),
    /// Compare backprop gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Nearest neighbours in an embedding table.
    Nn(NnArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub features_dir: Option<PathBuf>,
    #[arg(long)]
    pub word_emb: Option<PathBuf>,
    #[arg(long)]
    pub sent_emb: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenToyArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub stories: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory for the checkpoint and loss log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub freeze_embeddings: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub beam: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Reference corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output of `generate`.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check on the first story of this corpus instead of a synthetic one.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct NnArgs {
    #[arg(long, conflicts_with = "sent_emb")]
    pub word_emb: Option<PathBuf>,
    #[arg(long)]
    pub sent_emb: Option<PathBuf>,
    /// Token to look up.
    #[arg(long, conflicts_with = "vector", required_unless_present = "vector")]
    pub query: Option<String>,
    /// Comma-separated query vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub vector: Option<Vec<f64>>,
    #[arg(short, long, default_value_t = 5)]
    pub k: usize,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(e.into())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

/// Parses `args` and runs the command; returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(mut cli: Cli) -> Outcome<i32> {
    let mut cfg = RunConfig::load(cli.paper_scale, cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(cmd) = cli.command.as_ref() {
        apply_flags(&mut cfg, cmd);
    }
    validate(&cfg)?;
    if cli.dump_config {
        println!("{}", serde_json::to_string_pretty(&cfg).map_err(Error::from)?);
        return Ok(0);
    }
    let Some(cmd) = cli.command.take() else {
        return Err(Failure::Usage("a subcommand is required (see --help)".into()));
    };
    match cmd {
        Command::GenToy(_) => gen_toy(&cfg).map(|_| 0),
        Command::Train(_) => train_cmd(&cfg).map(|_| 0),
        Command::Generate(_) => generate(&cfg).map(|_| 0),
        Command::Evaluate(a) => evaluate(&cfg, &a.candidates).map(|_| 0),
        Command::Gradcheck(a) => gradcheck_cmd(&cfg, a.samples),
        Command::Nn(a) => nn(&a).map(|_| 0),
    }
}

fn apply_data(paths: &mut Paths, d: &DataArgs) {
    let pairs = [
        (&mut paths.corpus, &d.corpus),
        (&mut paths.features_dir, &d.features_dir),
        (&mut paths.word_emb, &d.word_emb),
        (&mut paths.sent_emb, &d.sent_emb),
    ];
    for (slot, flag) in pairs {
        if let Some(p) = flag {
            *slot = Some(p.clone());
        }
    }
}

fn apply_flags(cfg: &mut RunConfig, cmd: &Command) {
    match cmd {
        Command::GenToy(a) => {
            set(&mut cfg.paths.out, a.out.clone());
            set_val(&mut cfg.toy.stories, a.stories);
            set_val(&mut cfg.toy.vocab_size, a.vocab);
            set_val(&mut cfg.toy.topics, a.topics);
            set_val(&mut cfg.toy.noise, a.noise);
        }
        Command::Train(a) => {
            apply_data(&mut cfg.paths, &a.data);
            set(&mut cfg.paths.out, a.out.clone());
            set_val(&mut cfg.model.epochs, a.epochs);
            set_val(&mut cfg.model.batch_size, a.batch);
            set_val(&mut cfg.model.learning_rate, a.lr);
            set_val(&mut cfg.model.dropout_p, a.dropout);
            set_val(&mut cfg.model.grad_clip_norm, a.clip);
            cfg.model.freeze_embeddings |= a.freeze_embeddings;
        }
        Command::Generate(a) => {
            apply_data(&mut cfg.paths, &a.data);
            set(&mut cfg.paths.ckpt, a.ckpt.clone());
            set(&mut cfg.paths.out, a.out.clone());
            set_val(&mut cfg.beam, a.beam);
        }
        Command::Evaluate(a) => {
            set(&mut cfg.paths.corpus, a.corpus.clone());
            set(&mut cfg.paths.out, a.out.clone());
        }
        Command::Gradcheck(a) => apply_data(&mut cfg.paths, &a.data),
        Command::Nn(_) => {}
    }
}

fn set<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn set_val<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn validate(cfg: &RunConfig) -> Outcome {
    cfg.train_config().validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if cfg.jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    if cfg.beam == 0 {
        return Err(Failure::Usage("--beam must be at least 1".into()));
    }
    Ok(())
}

fn require<'c>(path: &'c Option<PathBuf>, flag: &str) -> Outcome<&'c Path> {
    path.as_deref().ok_or_else(|| Failure::Usage(format!("--{flag} is required")))
}

fn shape(cfg: &RunConfig) -> CorpusShape {
    CorpusShape {
        images_per_story: cfg.model.images_per_story,
        sentence_len: cfg.model.sentence_len,
    }
}

fn pool(jobs: usize) -> Outcome<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Run(Error::Config(format!("worker pool: {e}"))))
}

fn gen_toy(cfg: &RunConfig) -> Outcome {
    let out = require(&cfg.paths.out, "out")?;
    let toy = gen_toy_corpus(&cfg.toy_config())?;
    toy.write_to(out)?;
    println!("wrote {} stories to {}", toy.entries.len(), out.display());
    Ok(())
}

fn check_records(records: &[StoryRecord], cfg: &RunConfig) -> Outcome {
    let want = [cfg.model.locations, cfg.model.raw_dim];
    for r in records {
        for grid in &r.features {
            if grid.values.shape() != want {
                return Err(Error::Config(format!(
                    "story {} has {:?} feature grids, configuration expects {:?}",
                    r.story_id,
                    grid.values.shape(),
                    want
                ))
                .into());
            }
        }
    }
    Ok(())
}

fn train_cmd(cfg: &RunConfig) -> Outcome {
    let corpus = require(&cfg.paths.corpus, "corpus")?;
    let word_emb = require(&cfg.paths.word_emb, "word-emb")?;
    let sent_emb = require(&cfg.paths.sent_emb, "sent-emb")?;
    let out = require(&cfg.paths.out, "out")?;
    let words = EmbeddingTable::read(word_emb)?;
    let sentences = EmbeddingTable::read(sent_emb)?;
    let records = load_corpus(corpus, cfg.paths.features_dir.as_deref(), &words, Some(&sentences), shape(cfg))?;
    check_records(&records, cfg)?;
    if words.dim() != cfg.model.hidden {
        return Err(Error::Config(format!(
            "word embeddings have dim {}, configured hidden size is {}",
            words.dim(),
            cfg.model.hidden
        ))
        .into());
    }
    info!("training on {} stories", records.len());
    let params = ModelParameters::init(ModelDims::new(cfg.model.raw_dim, cfg.model.hidden), words, sentences, cfg.seed)?;
    let outcome = train(&records, params, &cfg.train_config(), cfg.jobs, Some(out))?;
    match outcome.log.last() {
        Some(s) => println!(
            "epoch {}: mean loss {:.6}, token accuracy {:.4}",
            s.epoch, s.mean_loss, s.token_accuracy
        ),
        None => println!("no epochs run"),
    }
    println!(
        "checkpoint {}, loss log {}",
        out.join(CHECKPOINT_FILE).display(),
        out.join(LOSS_LOG_FILE).display()
    );
    Ok(())
}

/// Loads a checkpoint with the token lists of the given embedding files.
pub fn load_model(ckpt: &Path, word_emb: &Path, sent_emb: Option<&Path>) -> crate::Result<ModelParameters> {
    let words = EmbeddingTable::read(word_emb)?;
    let sentence_tokens = match sent_emb {
        Some(p) => Some(EmbeddingTable::read(p)?.tokens().to_vec()),
        None => None,
    };
    ModelParameters::from_checkpoint(&Checkpoint::read(ckpt)?, words.tokens().to_vec(), sentence_tokens)
}

fn generate(cfg: &RunConfig) -> Outcome {
    let corpus = require(&cfg.paths.corpus, "corpus")?;
    let word_emb = require(&cfg.paths.word_emb, "word-emb")?;
    let ckpt = require(&cfg.paths.ckpt, "ckpt")?;
    let params = load_model(ckpt, word_emb, cfg.paths.sent_emb.as_deref())?;
    let records = load_corpus(corpus, cfg.paths.features_dir.as_deref(), &params.word_table, None, shape(cfg))?;
    check_records(&records, cfg)?;
    let (beam, len) = (cfg.beam, cfg.model.sentence_len);
    let stories: Vec<StoryOutput> = pool(cfg.jobs)?.install(|| {
        records
            .par_iter()
            .map(|r| generate_record(r, &params, beam, len))
            .collect::<crate::Result<_>>()
    })?;
    let mut w: Box<dyn Write> = match &cfg.paths.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    for s in &stories {
        writeln!(w, "{}", serde_json::to_string(s).map_err(Error::from)?)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, serde::Serialize)]
struct Scores {
    bleu: f64,
    cider: f64,
    items: usize,
}

fn evaluate(cfg: &RunConfig, candidates: &Path) -> Outcome {
    let corpus = require(&cfg.paths.corpus, "corpus")?;
    let mut refs = HashMap::new();
    for e in read_corpus_entries(corpus)? {
        let words: Vec<String> = e.sentences.iter().flat_map(|s| clean_tokens(s)).collect();
        refs.insert(e.story_id, words);
    }
    let mut cands = Vec::new();
    let mut references = Vec::new();
    let reader = BufReader::new(File::open(candidates)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let story: StoryOutput = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: candidates.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let Some(reference) = refs.get(&story.story_id) else {
            return Err(Error::Malformed {
                path: candidates.to_path_buf(),
                line: i + 1,
                msg: format!("story {:?} is not in the reference corpus", story.story_id),
            }
            .into());
        };
        cands.push(story.sentences.iter().flat_map(|s| clean_tokens(s)).collect());
        references.push(vec![reference.clone()]);
    }
    if cands.len() < refs.len() {
        warn!("{} corpus stories have no candidate", refs.len() - cands.len());
    }
    let scores = Scores {
        bleu: bleu(&cands, &references)?,
        cider: cider(&cands, &references)?,
        items: cands.len(),
    };
    let text = serde_json::to_string(&scores).map_err(Error::from)?;
    match &cfg.paths.out {
        Some(p) => std::fs::write(p, format!("{text}\n"))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn gradcheck_cmd(cfg: &RunConfig, samples: usize) -> Outcome<i32> {
    let (record, params) = match (&cfg.paths.corpus, &cfg.paths.word_emb, &cfg.paths.sent_emb) {
        (Some(corpus), Some(w), Some(s)) => {
            let words = EmbeddingTable::read(w)?;
            let sentences = EmbeddingTable::read(s)?;
            let records = load_corpus(corpus, cfg.paths.features_dir.as_deref(), &words, Some(&sentences), shape(cfg))?;
            check_records(&records, cfg)?;
            let record = records.into_iter().next().ok_or(Error::EmptyInput("gradcheck corpus"))?;
            let dims = ModelDims::new(cfg.model.raw_dim, words.dim());
            (record, ModelParameters::init(dims, words, sentences, cfg.seed)?)
        }
        (None, None, None) => {
            let toy = gen_toy_corpus(&crate::dataio::ToyConfig {
                stories: 1,
                ..cfg.toy_config()
            })?;
            let record = toy.records(cfg.model.sentence_len)?.into_iter().next().ok_or(Error::EmptyInput("toy story"))?;
            let dims = ModelDims::new(cfg.model.raw_dim, cfg.model.hidden);
            (record, ModelParameters::init(dims, toy.word_table, toy.sentence_table, cfg.seed)?)
        }
        _ => {
            return Err(Failure::Usage(
                "gradcheck on a corpus needs --corpus, --word-emb and --sent-emb together".into(),
            ))
        }
    };
    let report = gradcheck(&record, &params, samples, cfg.seed, GRADCHECK_STEP, cfg.model.learn_stop)?;
    let mut per_group: Vec<(&str, f64)> = Vec::new();
    for group in report.groups() {
        let worst = report
            .entries
            .iter()
            .filter(|e| e.tensor.starts_with(group))
            .map(|e| e.rel_error)
            .fold(0.0, f64::max);
        per_group.push((group.trim_end_matches('.'), worst));
    }
    for (group, worst) in per_group {
        println!("{group:<16} {worst:.3e}");
    }
    let max = report.max_rel_error();
    println!("max relative error: {max:.6e} over {} samples", report.entries.len());
    Ok(if max > GRADCHECK_TOLERANCE { 1 } else { 0 })
}

fn nn(a: &NnArgs) -> Outcome {
    let path = match (&a.word_emb, &a.sent_emb) {
        (Some(p), None) | (None, Some(p)) => p,
        _ => return Err(Failure::Usage("exactly one of --word-emb and --sent-emb is required".into())),
    };
    let table = EmbeddingTable::read(path)?;
    let query = match (&a.query, &a.vector) {
        (Some(t), _) => Query::Token(t),
        (None, Some(v)) => Query::Vector(v),
        (None, None) => return Err(Failure::Usage("--query or --vector is required".into())),
    };
    let hits = nearest_neighbors(query, &table, a.k)?;
    let width = hits.iter().map(|(t, _)| t.len()).max().unwrap_or(0).max(5);
    println!("rank  {:<width$}  cosine", "token");
    for (i, (token, cos)) in hits.iter().enumerate() {
        println!("{:<4}  {token:<width$}  {cos:.6}", i + 1);
    }
    Ok(())
}

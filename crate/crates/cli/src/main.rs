//! `emoseq`: corpus aggregation, agreement, splitting, training,
//! evaluation and attention export from one binary.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emoseq::{Architecture, OovPolicy, Partition};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "emoseq",
    version,
    about = "Emotion detection on multiparty dialogue",
    args_override_self = true
)]
pub struct Cli {
    /// JSON config file, or any artifact that embeds one. Flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run seed; falls back to the config file, then EMOSEQ_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resolve four crowd labels per utterance into gold labels.
    Aggregate(AggregateArgs),
    /// Kappa and partial agreement for 2, 3 and 4 annotators.
    Agreement(AgreementArgs),
    /// Episode-preserving train/dev/test split.
    Split(SplitArgs),
    /// Train a model and write a checkpoint and log.
    Train(TrainArgs),
    /// Score a checkpoint on one partition.
    Eval(EvalArgs),
    /// Export h×A attention rows of one scene (scnn-ca only).
    Attend(AttendArgs),
    /// Generate a synthetic corpus and embeddings.
    Synth(SynthArgs),
    /// Split, sweep context sizes for every model, and report dev and test tables.
    Protocol(ProtocolArgs),
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// CSV with header utterance_id,annotator_id,label.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Directory for gold.csv and report.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Transcript JSON.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Gold label CSV (utterance_id,label,...) applied over the transcript.
    #[arg(long)]
    gold: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbeddingArgs {
    /// word2vec text file.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Out-of-vocabulary vectors: `zero` or `random`.
    #[arg(long, value_parser = ["zero", "random"])]
    oov: Option<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Episode counts as TRAIN,DEV,TEST; default scales 77/11/9.
    #[arg(long, value_parser = parse_targets)]
    targets: Option<(usize, usize, usize)>,
    /// Manifest file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// cnn, scnn-c, scnn-v, scnn-ca or scnn-va.
    #[arg(long = "model")]
    architecture: Option<Architecture>,
    /// Previous utterances in the window.
    #[arg(long)]
    context: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Largest token region size r.
    #[arg(long)]
    regions: Option<usize>,
    /// Filters per token region f.
    #[arg(long)]
    filters: Option<usize>,
    /// Largest sequence region size b.
    #[arg(long)]
    seq_regions: Option<usize>,
    /// Filters per sequence region d.
    #[arg(long)]
    seq_filters: Option<usize>,
    /// Fusion receptive field F.
    #[arg(long)]
    field: Option<usize>,
    /// Fusion stride S.
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs without dev macro-F1 gain before stopping; 0 disables.
    #[arg(long)]
    patience: Option<usize>,
    /// Utterances per update (only 1 is supported).
    #[arg(long)]
    batch: Option<usize>,
    /// Dropout rate (only 0 is supported).
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    /// Split manifest; computed from the seed when omitted.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_parser = parse_targets)]
    targets: Option<(usize, usize, usize)>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Directory for model.ckpt, train_log.ndjson and run.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    /// Split manifest; the one stored in the checkpoint when omitted.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    partition: Option<Partition>,
    /// Metrics file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttendArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    /// Scene as EPISODE/SCENE; first scene of --partition when omitted.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    partition: Option<Partition>,
    /// CSV file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Total scenes.
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    scenes_per_episode: Option<usize>,
    /// Probability of keeping the previous emotion.
    #[arg(long)]
    persistence: Option<f64>,
    /// Probability that an utterance has a cue word.
    #[arg(long)]
    signal_rate: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Directory for corpus.json, embeddings.txt, gold.csv and run.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    #[arg(long, value_parser = parse_targets)]
    targets: Option<(usize, usize, usize)>,
    /// Context sizes to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    contexts: Option<Vec<usize>>,
    /// Architectures to run, comma separated.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<Architecture>>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Directory for report.json and report.md.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_targets(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| format!("`{p}` is not a count"))
        })
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err("expected TRAIN,DEV,TEST".into()),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, v: &Option<PathBuf>) {
    if v.is_some() {
        slot.clone_from(v);
    }
}

impl CorpusArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set_path(&mut cfg.paths.corpus, &self.corpus);
        set_path(&mut cfg.paths.gold, &self.gold);
    }
}

impl EmbeddingArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set_path(&mut cfg.paths.embeddings, &self.embeddings);
        match self.oov.as_deref() {
            Some("zero") => cfg.oov = OovPolicy::Zero,
            Some(_) => cfg.oov = OovPolicy::SeededRandom { seed: cfg.seed },
            None => {}
        }
    }
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let m = &mut cfg.model;
        set(&mut m.architecture, self.architecture);
        if let Some(c) = self.context {
            m.window = c + 1;
        }
        set(&mut m.max_tokens, self.max_tokens);
        set(&mut m.max_region, self.regions);
        set(&mut m.filters, self.filters);
        set(&mut m.seq_max_region, self.seq_regions);
        set(&mut m.seq_filters, self.seq_filters);
        set(&mut m.fusion_field, self.field);
        set(&mut m.fusion_stride, self.stride);
    }
}

impl OptimArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        set(&mut t.epochs, self.epochs);
        set(&mut t.learning_rate, self.lr);
        if let Some(p) = self.patience {
            t.patience = (p > 0).then_some(p);
        }
        set(&mut t.batch, self.batch);
        set(&mut t.dropout, self.dropout);
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Aggregate(_) => "aggregate",
            Command::Agreement(_) => "agreement",
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Attend(_) => "attend",
            Command::Synth(_) => "synth",
            Command::Protocol(_) => "protocol",
        }
    }

    /// Writes this subcommand's flags over `cfg`.
    fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Command::Aggregate(a) => {
                set_path(&mut cfg.paths.annotations, &a.annotations);
                set_path(&mut cfg.paths.out, &a.out_dir);
            }
            Command::Agreement(a) => {
                set_path(&mut cfg.paths.annotations, &a.annotations);
                set_path(&mut cfg.paths.out, &a.out);
            }
            Command::Split(a) => {
                a.corpus.apply(cfg);
                if a.targets.is_some() {
                    cfg.split_targets = a.targets;
                }
                set_path(&mut cfg.paths.out, &a.out);
            }
            Command::Train(a) => {
                a.corpus.apply(cfg);
                a.embeddings.apply(cfg);
                set_path(&mut cfg.paths.split, &a.split);
                if a.targets.is_some() {
                    cfg.split_targets = a.targets;
                }
                a.model.apply(cfg);
                a.optim.apply(cfg);
                set_path(&mut cfg.paths.out, &a.out_dir);
            }
            Command::Eval(a) => {
                set_path(&mut cfg.paths.checkpoint, &a.checkpoint);
                a.corpus.apply(cfg);
                a.embeddings.apply(cfg);
                set_path(&mut cfg.paths.split, &a.split);
                set(&mut cfg.partition, a.partition);
                set_path(&mut cfg.paths.out, &a.out);
            }
            Command::Attend(a) => {
                set_path(&mut cfg.paths.checkpoint, &a.checkpoint);
                a.corpus.apply(cfg);
                a.embeddings.apply(cfg);
                if a.scene.is_some() {
                    cfg.scene.clone_from(&a.scene);
                }
                set(&mut cfg.partition, a.partition);
                set_path(&mut cfg.paths.out, &a.out);
            }
            Command::Synth(a) => {
                let s = &mut cfg.synth;
                if a.scenes.is_some() {
                    s.total_scenes = a.scenes;
                }
                set(&mut s.episodes, a.episodes);
                set(&mut s.scenes_per_episode, a.scenes_per_episode);
                set(&mut s.persistence, a.persistence);
                set(&mut s.signal_rate, a.signal_rate);
                set(&mut s.embedding_dim, a.dim);
                set_path(&mut cfg.paths.out, &a.out_dir);
            }
            Command::Protocol(a) => {
                a.corpus.apply(cfg);
                a.embeddings.apply(cfg);
                if a.targets.is_some() {
                    cfg.split_targets = a.targets;
                }
                set(&mut cfg.contexts, a.contexts.clone());
                set(&mut cfg.architectures, a.models.clone());
                a.model.apply(cfg);
                a.optim.apply(cfg);
                set_path(&mut cfg.paths.out, &a.out_dir);
            }
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, error::CliError> {
    let (mut cfg, file_seed) = match &cli.config {
        Some(path) => {
            let (cfg, has_seed) = config::load(path)?;
            let seed = has_seed.then_some(cfg.seed);
            (cfg, seed)
        }
        None => (RunConfig::default(), None),
    };
    if cfg.command != cli.command.name() {
        // Output locations belong to the command that wrote the artifact.
        cfg.paths.out = None;
        cfg.command = cli.command.name().to_string();
    }
    cfg.seed = config::resolve_seed(cli.seed, file_seed)?;
    cfg.propagate_seed();
    cli.command.apply(&mut cfg);
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = resolve(&cli).and_then(|cfg| commands::run(&cfg));
    match result {
        Ok(commands::Status::Clean) => ExitCode::SUCCESS,
        Ok(commands::Status::Warnings(n)) => {
            eprintln!("warning: {n} data-quality issue(s); see the report");
            ExitCode::from(error::EXIT_DATA)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

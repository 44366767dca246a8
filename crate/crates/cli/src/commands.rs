use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use emoseq::agreement::{assign_gold, read_annotations, write_gold_csv, AgreementReport};
use emoseq::corpus::{
    label_distribution, load_transcripts, split_corpus, Corpus, DataSplit, Partition,
};
use emoseq::models::{CheckpointMeta, Model};
use emoseq::pipeline::{
    check_embeddings, evaluate, export_attention, load_checkpoint, proportional_targets,
    run_protocol, save_checkpoint, train, Dataset, ProtocolConfig,
};
use emoseq::synth::generate;
use emoseq::{EmbeddingTable, EmotionLabel};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

/// Successful completion, possibly with data-quality issues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    Warnings(usize),
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cfg: &RunConfig) -> Result<Status> {
    log::debug!("resolved config: {}", cfg.to_value());
    match cfg.command.as_str() {
        "aggregate" => aggregate(cfg),
        "agreement" => agreement(cfg),
        "split" => split(cfg),
        "train" => train_cmd(cfg),
        "eval" => eval(cfg),
        "attend" => attend(cfg),
        "synth" => synth(cfg),
        "protocol" => protocol(cfg),
        other => Err(CliError::Usage(format!("unknown command `{other}`"))),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

/// Writes to `path`, or stdout when it is `None`.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

/// Formats without an embedded config (CSV, transcripts, vectors) get a
/// `<file>.run.json` next to them.
fn write_sidecar(path: &Path, cfg: &RunConfig) -> Result<()> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    let side = path.with_file_name(name);
    write_bytes(
        &side,
        pretty(
            &json!({ "config": cfg, "artifact": path.file_name().map(|n| n.to_string_lossy()) }),
        )
        .as_bytes(),
    )
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn load_items(cfg: &RunConfig) -> Result<Vec<emoseq::AnnotationItem>> {
    let path = cfg.require(&cfg.paths.annotations, "annotations")?;
    let text = read_text(&path)?;
    if text.trim().is_empty() {
        return Err(CliError::Usage(format!("{} is empty", path.display())));
    }
    Ok(read_annotations(&text)?)
}

fn aggregate(cfg: &RunConfig) -> Result<Status> {
    let items = load_items(cfg)?;
    let assignment = assign_gold(&items)?;
    let report = AgreementReport::build(&items, &assignment)?;
    let dir = out_dir(cfg)?;

    let gold_path = dir.join("gold.csv");
    let mut buf = Vec::new();
    write_gold_csv(&mut buf, &assignment).map_err(io_err(&gold_path))?;
    write_bytes(&gold_path, &buf)?;
    write_sidecar(&gold_path, cfg)?;

    let doc = json!({ "config": cfg, "report": report, "annotators": assignment.annotators });
    write_bytes(&dir.join("report.json"), pretty(&doc).as_bytes())?;

    let unresolved = report.unresolved.len();
    for id in &report.unresolved {
        log::warn!(
            "utterance `{id}` has no scored annotator; gold falls back to its first annotation"
        );
    }
    Ok(if unresolved > 0 {
        Status::Warnings(unresolved)
    } else {
        Status::Clean
    })
}

fn agreement(cfg: &RunConfig) -> Result<Status> {
    let items = load_items(cfg)?;
    let assignment = assign_gold(&items)?;
    let report = AgreementReport::build(&items, &assignment)?;
    let doc = json!({ "config": cfg, "seed": cfg.seed, "report": report });
    emit(cfg.paths.out.as_deref(), &pretty(&doc))?;
    Ok(Status::Clean)
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let path = cfg.require(&cfg.paths.corpus, "corpus")?;
    let mut corpus = load_transcripts(&path)?;
    if let Some(gold) = &cfg.paths.gold {
        let n = corpus.apply_gold_csv(&read_text(gold)?)?;
        log::info!("applied {n} gold labels from {}", gold.display());
    }
    Ok(corpus)
}

fn load_embeddings(cfg: &RunConfig) -> Result<EmbeddingTable> {
    let path = cfg.require(&cfg.paths.embeddings, "embeddings")?;
    Ok(EmbeddingTable::load_word2vec_text(&path, cfg.oov)?)
}

fn compute_split(cfg: &RunConfig, corpus: &Corpus) -> Result<DataSplit> {
    let targets = match cfg.split_targets {
        Some(t) => t,
        None => proportional_targets(corpus.episodes.len()).map_err(CliError::from)?,
    };
    Ok(split_corpus(corpus, cfg.seed, targets)?)
}

fn read_split(path: &Path, corpus: &Corpus) -> Result<DataSplit> {
    let split: DataSplit = serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Usage(format!("{}: not a split manifest: {e}", path.display())))?;
    split.validate(corpus)?;
    Ok(split)
}

fn split(cfg: &RunConfig) -> Result<Status> {
    let corpus = load_corpus(cfg)?;
    let split = compute_split(cfg, &corpus)?;
    let mut distribution = serde_json::Map::new();
    for p in Partition::ALL {
        let d = label_distribution(&corpus, Some(split.episodes(p)))?;
        let counts: serde_json::Map<String, Value> = EmotionLabel::ALL
            .iter()
            .map(|&l| (l.name().to_string(), d.count(l).into()))
            .collect();
        distribution.insert(
            p.name().into(),
            json!({ "total": d.total(), "counts": counts }),
        );
    }
    let mut doc = serde_json::to_value(&split).expect("split serialises");
    doc["distribution"] = Value::Object(distribution);
    doc["config"] = cfg.to_value();
    emit(cfg.paths.out.as_deref(), &pretty(&doc))?;
    let unlabeled = corpus.unlabeled().len();
    if unlabeled > 0 {
        log::warn!("{unlabeled} utterances have no gold label and were ignored for balancing");
        return Ok(Status::Warnings(unlabeled));
    }
    Ok(Status::Clean)
}

fn datasets(
    corpus: &Corpus,
    split: &DataSplit,
    table: &EmbeddingTable,
    t: usize,
    parts: &[Partition],
) -> Result<Vec<Dataset>> {
    parts
        .iter()
        .map(|&p| Dataset::from_partition(corpus, split, p, table, t).map_err(CliError::from))
        .collect()
}

fn train_cmd(cfg: &RunConfig) -> Result<Status> {
    let corpus = load_corpus(cfg)?;
    let table = load_embeddings(cfg)?;
    let mut cfg = cfg.clone();
    cfg.model.embedding_dim = table.dim();
    let split = match &cfg.paths.split {
        Some(p) => read_split(p, &corpus)?,
        None => compute_split(&cfg, &corpus)?,
    };
    let data = datasets(
        &corpus,
        &split,
        &table,
        cfg.model.max_tokens,
        &[Partition::Train, Partition::Dev],
    )?;
    let mut model = Model::new(cfg.model.clone())?;
    log::info!(
        "training {} with {} weights",
        cfg.model.architecture,
        model.params().num_weights()
    );
    let log = train(&mut model, &data[0], &data[1], &cfg.train, cfg.to_value())?;

    let dir = out_dir(&cfg)?;
    let provenance = json!({ "config": cfg, "split": split });
    save_checkpoint(&dir.join("model.ckpt"), &model, &table, provenance)?;
    write_bytes(&dir.join("train_log.ndjson"), log.to_ndjson().as_bytes())?;
    let best = &log.epochs[log.best_epoch - 1];
    let summary = json!({
        "config": cfg,
        "seed": cfg.seed,
        "split": split,
        "best_epoch": log.best_epoch,
        "epochs_run": log.epochs.len(),
        "stopped_early": log.stopped_early,
        "dev": { "acc7": best.dev_acc7, "acc3": best.dev_acc3, "f1_7": best.dev_f1_7, "f1_3": best.dev_f1_3 },
    });
    write_bytes(&dir.join("run.json"), pretty(&summary).as_bytes())?;
    Ok(Status::Clean)
}

fn stored_split(meta: &CheckpointMeta) -> Option<DataSplit> {
    serde_json::from_value(meta.provenance.get("split")?.clone()).ok()
}

fn checkpoint_inputs(cfg: &RunConfig) -> Result<(Model, CheckpointMeta, Corpus, EmbeddingTable)> {
    let ck = cfg.require(&cfg.paths.checkpoint, "checkpoint")?;
    let (model, meta) = load_checkpoint(&ck)?;
    let corpus = load_corpus(cfg)?;
    let table = load_embeddings(cfg)?;
    check_embeddings(&meta, &table)?;
    Ok((model, meta, corpus, table))
}

fn partition_split(cfg: &RunConfig, meta: &CheckpointMeta, corpus: &Corpus) -> Result<DataSplit> {
    match &cfg.paths.split {
        Some(p) => read_split(p, corpus),
        None => stored_split(meta)
            .ok_or_else(|| CliError::Usage("checkpoint stores no split; pass --split".into()))
            .and_then(|s| {
                s.validate(corpus)?;
                Ok(s)
            }),
    }
}

fn eval(cfg: &RunConfig) -> Result<Status> {
    let (model, meta, corpus, table) = checkpoint_inputs(cfg)?;
    let split = partition_split(cfg, &meta, &corpus)?;
    let data = datasets(
        &corpus,
        &split,
        &table,
        meta.model.max_tokens,
        &[cfg.partition],
    )?;
    let metrics = evaluate(&model, &data[0])?;
    let mut doc = serde_json::to_value(&metrics).expect("metrics serialise");
    doc["labels"] = json!(EmotionLabel::ALL
        .iter()
        .map(|l| l.name())
        .collect::<Vec<_>>());
    doc["partition"] = cfg.partition.name().into();
    doc["model"] = serde_json::to_value(&meta.model).expect("model config");
    doc["seed"] = cfg.seed.into();
    doc["config"] = cfg.to_value();
    emit(cfg.paths.out.as_deref(), &pretty(&doc))?;
    Ok(Status::Clean)
}

fn attend(cfg: &RunConfig) -> Result<Status> {
    let (model, meta, corpus, table) = checkpoint_inputs(cfg)?;
    let episodes: Vec<String> = match partition_split(cfg, &meta, &corpus) {
        Ok(split) => split.episodes(cfg.partition).to_vec(),
        Err(_) => corpus.episodes.iter().map(|e| e.id.clone()).collect(),
    };
    let scene = match &cfg.scene {
        Some(id) => {
            let (ep, sc) = id
                .split_once('/')
                .ok_or_else(|| CliError::Usage(format!("scene `{id}` is not EPISODE/SCENE")))?;
            corpus
                .episode(ep)
                .and_then(|e| e.scenes.iter().find(|s| s.id == sc))
                .ok_or_else(|| CliError::Usage(format!("no scene `{id}` in the corpus")))?
        }
        None => corpus
            .scenes_of(&episodes)
            .next()
            .ok_or_else(|| CliError::Usage("no scene to export".into()))?,
    };
    let data = Dataset::from_scenes([scene], &table, meta.model.max_tokens);
    let map = export_attention(&model, &data.scenes[0])?;
    let mut buf = Vec::new();
    map.write_csv(&mut buf)
        .map_err(io_err(Path::new("<csv>")))?;
    emit(
        cfg.paths.out.as_deref(),
        &String::from_utf8(buf).expect("utf-8"),
    )?;
    if let Some(p) = &cfg.paths.out {
        write_sidecar(p, cfg)?;
    }
    Ok(Status::Clean)
}

fn synth(cfg: &RunConfig) -> Result<Status> {
    let out = generate(&cfg.synth).map_err(CliError::Usage)?;
    let dir = out_dir(cfg)?;
    let corpus_path = dir.join("corpus.json");
    out.corpus.save(&corpus_path)?;
    let emb_path = dir.join("embeddings.txt");
    let mut buf = Vec::new();
    out.embeddings
        .write_word2vec_text(&mut buf)
        .map_err(io_err(&emb_path))?;
    write_bytes(&emb_path, &buf)?;

    let gold_path = dir.join("gold.csv");
    let mut gold = String::from("utterance_id,label\n");
    for u in out.corpus.utterances() {
        gold.push_str(&format!(
            "{},{}\n",
            u.id,
            u.gold.expect("synthetic labels").name()
        ));
    }
    write_bytes(&gold_path, gold.as_bytes())?;
    let counts = out.corpus.counts();
    let doc = json!({
        "config": cfg,
        "seed": cfg.seed,
        "episodes": counts.episodes,
        "scenes": counts.scenes,
        "utterances": counts.utterances,
        "files": ["corpus.json", "embeddings.txt", "gold.csv"],
    });
    write_bytes(&dir.join("run.json"), pretty(&doc).as_bytes())?;
    Ok(Status::Clean)
}

fn protocol(cfg: &RunConfig) -> Result<Status> {
    let corpus = load_corpus(cfg)?;
    let table = load_embeddings(cfg)?;
    let mut cfg = cfg.clone();
    cfg.model.embedding_dim = table.dim();
    let proto = ProtocolConfig {
        split_seed: cfg.seed,
        targets: cfg.split_targets,
        contexts: cfg.contexts.clone(),
        architectures: cfg.architectures.clone(),
    };
    let report = run_protocol(&corpus, &table, &cfg.model, &cfg.train, &proto)?;
    let dir = out_dir(&cfg)?;
    write_bytes(
        &dir.join("report.json"),
        pretty(&json!({ "config": cfg, "seed": cfg.seed, "report": report })).as_bytes(),
    )?;
    let md = format!(
        "{}\n<!-- config: {} -->\n",
        report.to_markdown(),
        cfg.to_value()
    );
    write_bytes(&dir.join("report.md"), md.as_bytes())?;
    Ok(Status::Clean)
}

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tk_core::checkpoint;
use tk_core::config::Settings;
use tk_core::eval::{MetricReport, Qrels, RunList};
use tk_core::model::TkModel;
use tk_core::pipeline::{self, Mode};
use tk_core::retrieval::{tune_rerank_depth, InvertedIndex, DOCUMENT_DEPTH_PRESETS, PASSAGE_DEPTH};
use tk_core::text::{load_embeddings, EmbeddingTable, Vocabulary};
use tk_core::train::{encode_triples, train, ValidationSet};
use tk_core::tsv::{read_records, read_triples, TextRecord};

#[derive(Parser)]
#[command(name = "tk", version, about = "Transformer-Kernel neural re-ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a `doc_id<TAB>text` collection.
    Index {
        #[arg(long)]
        collection: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Retrieve BM25 candidates for every query into a TREC run file.
    Search {
        #[command(flatten)]
        settings: SettingsArgs,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Candidates per query.
        #[arg(long, default_value_t = 1000)]
        k: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a TK model on triples with early stopping on validation MRR@10.
    Train(TrainArgs),
    /// Re-rank candidates with a trained model.
    Rerank(RerankArgs),
    /// Compute MRR@k, MAP, nDCG and P@k of a run.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value_t = 10)]
        cutoff: usize,
        /// Minimum grade counted as relevant.
        #[arg(long, default_value_t = 1)]
        threshold: u32,
        /// Also write the report here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Choose the re-ranking depth with the best validation MRR@10.
    TuneDepth(TuneArgs),
    /// Side-by-side kernel report of two documents for one query.
    Explain(ExplainArgs),
    /// Average the scores of several run files.
    Ensemble {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "ensemble")]
        tag: String,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct SettingsArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one configuration key, e.g. `--set d_emb=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    depth: Option<usize>,
}

impl SettingsArgs {
    fn resolve(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::read(path)?,
            None => Settings::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("override {o:?} is not KEY=VALUE"))?;
            s.set(k.trim(), v)?;
        }
        if let Some(seed) = self.seed {
            s.train.seed = seed;
        }
        if let Some(depth) = self.depth {
            s.depth = depth;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    settings: SettingsArgs,
    /// Collection the vocabulary is built from.
    #[arg(long)]
    collection: PathBuf,
    /// `query<TAB>positive<TAB>negative` training triples.
    #[arg(long)]
    triples: PathBuf,
    /// Validation queries.
    #[arg(long)]
    queries: PathBuf,
    /// Validation candidates as a TREC run.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Whitespace-separated word vectors; random vectors otherwise.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Training log (`step<TAB>value` lines).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct RerankArgs {
    #[command(flatten)]
    settings: SettingsArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "rerank")]
    mode: Mode,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    collection: PathBuf,
    /// BM25 index (full mode).
    #[arg(long)]
    index: Option<PathBuf>,
    /// Candidate run (rerank mode).
    #[arg(long)]
    run: Option<PathBuf>,
    /// BM25 candidates per query in full mode.
    #[arg(long, default_value_t = 1000)]
    candidates_k: usize,
    #[arg(long, default_value = "tk")]
    tag: String,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    settings: SettingsArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    collection: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Comma-separated candidate depths.
    #[arg(long, value_delimiter = ',', conflicts_with = "preset")]
    depths: Vec<usize>,
    /// `documents` (29, 60, 31) or `passages` (1000).
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    collection: PathBuf,
    /// Run whose ranks are shown next to the documents.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    query_id: String,
    /// The two document ids, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    docs: Vec<String>,
    /// Kernel centers whose words are marked.
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.7], allow_negative_numbers = true)]
    highlight: Vec<f64>,
    #[arg(long)]
    html: bool,
    /// Write here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index { collection, output } => {
            let records = read_records(&collection)?;
            let index = InvertedIndex::build(&records)?;
            index.save(&output)?;
            log::info!("indexed {} documents", index.num_docs());
        }
        Command::Search {
            settings,
            index,
            queries,
            k,
            output,
        } => {
            let s = settings.resolve()?;
            let index = InvertedIndex::load(&index)?;
            let queries = read_records(&queries)?;
            pipeline::bm25_run(&index, &queries, k, s.bm25, "bm25")?.write(&output)?;
        }
        Command::Train(args) => run_train(args)?,
        Command::Rerank(args) => run_rerank(args)?,
        Command::Evaluate {
            run,
            qrels,
            cutoff,
            threshold,
            output,
        } => {
            let run = RunList::read(&run)?;
            let mut qrels = Qrels::read(&qrels)?;
            qrels.threshold = threshold;
            let report = MetricReport::compute(&run, &qrels, cutoff)?.to_tsv();
            print!("{report}");
            if let Some(path) = output {
                write(&path, &report)?;
            }
        }
        Command::TuneDepth(args) => run_tune(args)?,
        Command::Explain(args) => run_explain(args)?,
        Command::Ensemble { runs, tag, output } => {
            let runs = runs
                .iter()
                .map(|p| RunList::read(p))
                .collect::<tk_core::Result<Vec<_>>>()?;
            pipeline::ensemble_runs(&runs, &tag)?.write(&output)?;
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn texts(path: &Path) -> Result<HashMap<String, String>> {
    Ok(pipeline::text_map(read_records(path)?))
}

fn run_train(args: TrainArgs) -> Result<()> {
    let s = args.settings.resolve()?;
    let collection = read_records(&args.collection)?;
    let vocab = Vocabulary::build(collection.iter().map(|r| r.text.as_str()), s.min_occurrence)?;
    log::info!("vocabulary of {} terms", vocab.len());
    let mut rng = ChaCha8Rng::seed_from_u64(s.train.seed);
    let embeddings = match &args.embeddings {
        Some(path) => load_embeddings(path, &vocab, s.model.d_emb, &mut rng)?,
        None => EmbeddingTable::random(vocab.len(), s.model.d_emb, &mut rng),
    };
    let model = TkModel::new(s.model.clone(), s.window(), vocab, embeddings, &mut rng)?;
    let triples = encode_triples(&model, &read_triples(&args.triples)?)?;
    let documents = pipeline::text_map(collection);
    let validation = ValidationSet::build(
        &model,
        &read_records(&args.queries)?,
        &documents,
        &RunList::read(&args.candidates)?,
        Qrels::read(&args.qrels)?,
    )?;
    let outcome = train(model, &triples, &validation, &s.train)?;
    checkpoint::save(&outcome.model, &args.output)?;
    if let Some(path) = &args.log {
        outcome.log.write(path)?;
    }
    eprintln!(
        "best validation MRR@10 {:.4} at step {} of {}{}",
        outcome.best_mrr,
        outcome.best_step,
        outcome.steps,
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        }
    );
    Ok(())
}

fn load_model(path: &Path, settings: &SettingsArgs) -> Result<(TkModel, Settings)> {
    let s = settings.resolve()?;
    let model = checkpoint::load(path)?;
    if settings.config.is_some() {
        checkpoint::check_config(&model, &s.model, s.window().as_ref())?;
    }
    Ok((model, s))
}

fn run_rerank(args: RerankArgs) -> Result<()> {
    let (model, s) = load_model(&args.checkpoint, &args.settings)?;
    let documents = texts(&args.collection)?;
    let queries = read_records(&args.queries)?;
    let run = match args.mode {
        Mode::Full => {
            let Some(index) = &args.index else {
                bail!("full mode needs --index");
            };
            let index = InvertedIndex::load(index)?;
            pipeline::full_ranking(
                &model,
                &index,
                s.bm25,
                &queries,
                &documents,
                args.candidates_k,
                s.depth,
                &args.tag,
            )?
        }
        Mode::Rerank => {
            let Some(run) = &args.run else {
                bail!("rerank mode needs --run");
            };
            let candidates = RunList::read(run)?;
            let depth = args.settings.depth;
            let queries = pipeline::text_map(queries);
            pipeline::rerank(&model, &queries, &documents, &candidates, depth, &args.tag)?
        }
    };
    run.write(&args.output)?;
    Ok(())
}

fn run_tune(args: TuneArgs) -> Result<()> {
    let (model, _) = load_model(&args.checkpoint, &args.settings)?;
    let depths = match args.preset.as_deref() {
        Some("documents") => DOCUMENT_DEPTH_PRESETS.to_vec(),
        Some("passages") => vec![PASSAGE_DEPTH],
        Some(other) => bail!("unknown preset {other:?}; use `documents` or `passages`"),
        None if args.depths.is_empty() => bail!("give --depths or --preset"),
        None => args.depths,
    };
    let documents = texts(&args.collection)?;
    let queries = texts(&args.queries)?;
    let candidates = RunList::read(&args.run)?;
    let qrels = Qrels::read(&args.qrels)?;
    let tuning = tune_rerank_depth(&candidates, &qrels, &depths, |qid, prefix| {
        let text = queries
            .get(qid)
            .ok_or_else(|| tk_core::Error::UnknownId(format!("query {qid}")))?;
        pipeline::score_candidates(&model, text, prefix, &documents)
    })?;
    println!("depth\tmrr@10");
    for (depth, mrr) in &tuning.per_depth {
        println!("{depth}\t{mrr:.6}");
    }
    println!("best\t{}", tuning.best_depth);
    Ok(())
}

fn run_explain(args: ExplainArgs) -> Result<()> {
    let [left, right] = args.docs.as_slice() else {
        bail!(
            "--docs takes exactly two document ids, got {}",
            args.docs.len()
        );
    };
    let model = checkpoint::load(&args.checkpoint)?;
    let documents = texts(&args.collection)?;
    let queries: Vec<TextRecord> = read_records(&args.queries)?;
    let query = queries
        .iter()
        .find(|q| q.id == args.query_id)
        .with_context(|| format!("query {} not in {}", args.query_id, args.queries.display()))?;
    let run = args.run.as_deref().map(RunList::read).transpose()?;
    let comparison = pipeline::compare_documents(
        &model,
        &query.id,
        &query.text,
        [left, right],
        &documents,
        run.as_ref(),
        &args.highlight,
    )?;
    let text = if args.html {
        comparison.render_html()
    } else {
        comparison.render_text()
    };
    match &args.output {
        Some(path) => write(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

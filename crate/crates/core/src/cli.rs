//! Pipeline orchestration: subcommands over one TOML run configuration.
//!
//! Every command reads and writes fixed file names under the configured
//! output directory, logs a machine-readable manifest, and is idempotent for
//! a fixed seed. Exit codes: 0 ok, 2 config error, 3 missing input, 4
//! runtime failure.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};

use crate::abae::{train_abae, AbaeModel, AspectDistribution};
use crate::aspects::{
    aspect_prevalence, AspectLabel, AspectLabeling, AspectModel, CoherenceReport, MethodTag,
};
use crate::baselines::{kmeans_fit, lda_fit, KMeansModel, LdaModel};
use crate::config::RunConfig;
use crate::corpus::{
    encode_corpus, read_reviews, split_datasets, EncodeOptions, EncodedCorpus, Splits, Vocabulary,
};
use crate::embeddings::{train_embeddings, EmbeddingTable};
use crate::profiles::{
    aggregate_bor, aggregate_bos, aggregate_max_softmax, build_ranking_universe,
    pairwise_experiment, rank_objects, Aggregation, GuestProfile, ObjectKind,
};
use crate::summarize::{
    build_evaluation_sheets, extract_top_sentences, fleiss_kappa, precision_at_k, read_judgments,
    write_sheet, ExtractedSentence,
};

/// Errors classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Environment variable controlling the rayon pool size.
pub const THREADS_ENV: &str = "REVIEW_ASPECTS_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "review-aspects",
    about = "Aspect extraction, summarization, and profile reranking over review corpora",
    version
)]
pub struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed override; stage seeds derive from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Method override for the analysis stages: abae, kmeans, or lda.
    #[arg(long, global = true)]
    pub method: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment, tokenize, encode the corpus, and write dataset splits.
    Preprocess {
        /// Raw review file override.
        #[arg(long)]
        reviews: Option<PathBuf>,
        /// Vocabulary cap override.
        #[arg(long)]
        vocab_size: Option<usize>,
    },
    /// Train skip-gram word embeddings on the training split.
    TrainEmbeddings {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        dimension: Option<usize>,
    },
    /// Fit k-means over the trained word embeddings.
    FitKmeans {
        #[arg(long)]
        clusters: Option<usize>,
    },
    /// Fit LDA by collapsed Gibbs sampling on the training split.
    FitLda {
        #[arg(long)]
        topics: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train the aspect autoencoder from the k-means initialization.
    TrainAbae {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        aspects: Option<usize>,
    },
    /// Coherence report over the summarize-validation sentences.
    Coherence,
    /// Write per-cluster top words and a labeling template.
    LabelAspects {
        /// Words listed per cluster.
        #[arg(long, default_value_t = 10)]
        words: usize,
    },
    /// Extract top sentences per (listing, aspect) and build blind sheets.
    Summarize {
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Score filled judgment sheets: precision@k and Fleiss' kappa.
    EvalJudgments {
        /// Judgment file (defaults to <out_dir>/judgments.tsv).
        #[arg(long)]
        judgments: Option<PathBuf>,
    },
    /// Build guest aspect profiles for the ranking-validation guests.
    Profile {
        #[arg(long)]
        aggregation: Option<String>,
    },
    /// Pairwise profile-distance vs rank-correlation experiment.
    RerankEval,
    /// Aggregate the artifacts of earlier stages into one report.
    Report,
}

impl Command {
    #[cfg(test)]
    fn name(&self) -> &'static str {
        match self {
            Command::Preprocess { .. } => "preprocess",
            Command::TrainEmbeddings { .. } => "train-embeddings",
            Command::FitKmeans { .. } => "fit-kmeans",
            Command::FitLda { .. } => "fit-lda",
            Command::TrainAbae { .. } => "train-abae",
            Command::Coherence => "coherence",
            Command::LabelAspects { .. } => "label-aspects",
            Command::Summarize { .. } => "summarize",
            Command::EvalJudgments { .. } => "eval-judgments",
            Command::Profile { .. } => "profile",
            Command::RerankEval => "rerank-eval",
            Command::Report => "report",
        }
    }
}

/// Resolved paths of every artifact under the output directory.
struct Artifacts {
    out_dir: PathBuf,
}

impl Artifacts {
    fn vocab(&self) -> PathBuf {
        self.out_dir.join("vocab.tsv")
    }
    fn corpus(&self) -> PathBuf {
        self.out_dir.join("corpus.tsv")
    }
    fn split(&self, name: &str) -> PathBuf {
        self.out_dir.join("splits").join(format!("{name}.tsv"))
    }
    fn embeddings(&self) -> PathBuf {
        self.out_dir.join("embeddings.txt")
    }
    fn kmeans(&self) -> PathBuf {
        self.out_dir.join("kmeans.txt")
    }
    fn lda(&self) -> PathBuf {
        self.out_dir.join("lda.txt")
    }
    fn abae(&self) -> PathBuf {
        self.out_dir.join("abae.ckpt")
    }
    fn coherence(&self, method: MethodTag) -> PathBuf {
        self.out_dir.join(format!("coherence_{method}.tsv"))
    }
    fn top_words(&self, method: MethodTag) -> PathBuf {
        self.out_dir.join(format!("top_words_{method}.tsv"))
    }
    fn labels(&self, method: MethodTag) -> PathBuf {
        self.out_dir.join(format!("labels_{method}.tsv"))
    }
    fn extractions(&self, method: MethodTag) -> PathBuf {
        self.out_dir.join(format!("extractions_{method}.tsv"))
    }
    fn sheet(&self, annotator: usize) -> PathBuf {
        self.out_dir
            .join("sheets")
            .join(format!("annotator_{annotator:02}.tsv"))
    }
    fn precision(&self) -> PathBuf {
        self.out_dir.join("precision.tsv")
    }
    fn profiles(&self, method: MethodTag) -> PathBuf {
        self.out_dir.join(format!("profiles_{method}.tsv"))
    }
    fn rerank_scatter(&self, method: MethodTag, kind: ObjectKind) -> PathBuf {
        self.out_dir.join(format!("rerank_{method}_{kind}.tsv"))
    }
    fn rerank_summary(&self, method: MethodTag) -> PathBuf {
        self.out_dir.join(format!("rerank_{method}_summary.tsv"))
    }
    fn rankings(&self, method: MethodTag) -> PathBuf {
        self.out_dir.join(format!("rankings_{method}.tsv"))
    }
    fn report(&self) -> PathBuf {
        self.out_dir.join("report.txt")
    }
    fn manifest(&self, command: &str) -> PathBuf {
        self.out_dir.join("manifest").join(format!("{command}.json"))
    }
}

fn open_reader(path: &Path, produced_by: &str) -> CliResult<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::MissingInput(format!(
            "{} not found; run `{produced_by}` first",
            path.display()
        ))),
        Err(e) => Err(CliError::Runtime(format!("{}: {e}", path.display()))),
    }
}

fn create_writer(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[derive(serde::Serialize)]
struct Manifest<'a> {
    command: &'a str,
    method: Option<String>,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

fn write_manifest(
    artifacts: &Artifacts,
    command: &str,
    method: Option<MethodTag>,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&Path],
) -> CliResult<()> {
    let rel = |p: &Path| -> String {
        p.strip_prefix(&artifacts.out_dir)
            .map(|r| r.to_string_lossy().into_owned())
            .unwrap_or_else(|_| {
                p.file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_default()
            })
    };
    let manifest = Manifest {
        command,
        method: method.map(|m| m.to_string()),
        seed,
        inputs: inputs.iter().map(|p| rel(p)).collect(),
        outputs: outputs.iter().map(|p| rel(p)).collect(),
    };
    let mut w = create_writer(&artifacts.manifest(command))?;
    serde_json::to_writer_pretty(&mut w, &manifest)
        .map_err(|e| CliError::Runtime(format!("manifest: {e}")))?;
    writeln!(w).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

/// Loads the configuration and applies global flag overrides.
fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            crate::Error::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingInput(format!("config file {}", path.display()))
            }
            other => CliError::Config(other.to_string()),
        })?,
        None => RunConfig::from_toml("").map_err(|e| CliError::Config(e.to_string()))?,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out_dir) = &cli.out_dir {
        config.paths.out_dir = out_dir.clone();
    }
    if let Some(method) = &cli.method {
        config.method = method.clone();
    }
    MethodTag::from_str(&config.method).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

fn method_tag(config: &RunConfig) -> CliResult<MethodTag> {
    MethodTag::from_str(&config.method).map_err(|e| CliError::Config(e.to_string()))
}

/// Owned model state from which a borrowed [`AspectModel`] is built.
enum OwnedModel {
    Abae {
        table: EmbeddingTable,
        model: AbaeModel,
    },
    KMeans {
        table: EmbeddingTable,
        model: KMeansModel,
    },
    Lda {
        vocab: Vocabulary,
        model: LdaModel,
        infer_iterations: usize,
    },
}

impl OwnedModel {
    fn aspect_model(&self) -> AspectModel<'_> {
        match self {
            OwnedModel::Abae { table, model } => AspectModel::Abae {
                model,
                embeddings: table,
            },
            OwnedModel::KMeans { table, model } => AspectModel::KMeans {
                model,
                embeddings: table,
            },
            OwnedModel::Lda {
                vocab,
                model,
                infer_iterations,
            } => AspectModel::Lda {
                model,
                vocab,
                infer_iterations: *infer_iterations,
            },
        }
    }
}

fn load_embeddings(artifacts: &Artifacts) -> CliResult<EmbeddingTable> {
    let reader = open_reader(&artifacts.embeddings(), "train-embeddings")?;
    Ok(EmbeddingTable::load_text(reader)?)
}

fn load_corpus(artifacts: &Artifacts) -> CliResult<EncodedCorpus> {
    let reader = open_reader(&artifacts.corpus(), "preprocess")?;
    Ok(EncodedCorpus::load(reader)?)
}

fn load_vocab(artifacts: &Artifacts, cap: usize) -> CliResult<Vocabulary> {
    let reader = open_reader(&artifacts.vocab(), "preprocess")?;
    Ok(Vocabulary::load(reader, cap)?)
}

fn load_model(config: &RunConfig, artifacts: &Artifacts) -> CliResult<OwnedModel> {
    match method_tag(config)? {
        MethodTag::Abae => {
            let table = load_embeddings(artifacts)?;
            let mut reader = open_reader(&artifacts.abae(), "train-abae")?;
            let model = AbaeModel::load_checkpoint(&mut reader, &table)?;
            Ok(OwnedModel::Abae { table, model })
        }
        MethodTag::KMeans => {
            let table = load_embeddings(artifacts)?;
            let reader = open_reader(&artifacts.kmeans(), "fit-kmeans")?;
            let model = KMeansModel::load(reader)?;
            Ok(OwnedModel::KMeans { table, model })
        }
        MethodTag::Lda => {
            let vocab = load_vocab(artifacts, config.corpus.vocab_size)?;
            let reader = open_reader(&artifacts.lda(), "fit-lda")?;
            let model = LdaModel::load(reader)?;
            Ok(OwnedModel::Lda {
                vocab,
                model,
                infer_iterations: config.lda.infer_iterations,
            })
        }
    }
}

fn load_id_split(artifacts: &Artifacts, name: &str) -> CliResult<Vec<String>> {
    let reader = open_reader(&artifacts.split(name), "preprocess")?;
    Ok(Splits::load_id_manifest(reader)?)
}

fn load_train_split(artifacts: &Artifacts, corpus: &EncodedCorpus) -> CliResult<Vec<usize>> {
    let reader = open_reader(&artifacts.split("train"), "preprocess")?;
    Ok(Splits::load_train_manifest(reader, corpus)?)
}

/// Entry point used by the binary.
pub fn run(cli: &Cli) -> CliResult<()> {
    let config = resolve_config(cli)?;
    let artifacts = Artifacts {
        out_dir: config.paths.out_dir.clone(),
    };
    match &cli.command {
        Command::Preprocess {
            reviews,
            vocab_size,
        } => preprocess(&config, &artifacts, reviews.as_deref(), *vocab_size),
        Command::TrainEmbeddings { epochs, dimension } => {
            train_embeddings_cmd(&config, &artifacts, *epochs, *dimension)
        }
        Command::FitKmeans { clusters } => fit_kmeans_cmd(&config, &artifacts, *clusters),
        Command::FitLda { topics, iterations } => {
            fit_lda_cmd(&config, &artifacts, *topics, *iterations)
        }
        Command::TrainAbae { epochs, aspects } => {
            train_abae_cmd(&config, &artifacts, *epochs, *aspects)
        }
        Command::Coherence => coherence_cmd(&config, &artifacts),
        Command::LabelAspects { words } => label_aspects_cmd(&config, &artifacts, *words),
        Command::Summarize { top_k } => summarize_cmd(&config, &artifacts, *top_k),
        Command::EvalJudgments { judgments } => {
            eval_judgments_cmd(&config, &artifacts, judgments.as_deref())
        }
        Command::Profile { aggregation } => profile_cmd(&config, &artifacts, aggregation.as_deref()),
        Command::RerankEval => rerank_eval_cmd(&config, &artifacts),
        Command::Report => report_cmd(&config, &artifacts),
    }
}

fn preprocess(
    config: &RunConfig,
    artifacts: &Artifacts,
    reviews_override: Option<&Path>,
    vocab_size_override: Option<usize>,
) -> CliResult<()> {
    let reviews_path = reviews_override.unwrap_or(&config.paths.reviews);
    let vocab_size = vocab_size_override.unwrap_or(config.corpus.vocab_size);
    if vocab_size == 0 {
        return Err(CliError::Config("vocab_size must be at least 1".into()));
    }
    let reader = match File::open(reviews_path) {
        Ok(f) => BufReader::new(f),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingInput(format!(
                "review file {}",
                reviews_path.display()
            )))
        }
        Err(e) => return Err(CliError::Runtime(format!("{}: {e}", reviews_path.display()))),
    };
    let reviews = read_reviews(reader)?;

    let stopwords = crate::corpus::default_stopwords();
    let token_lists: Vec<Vec<String>> = reviews
        .iter()
        .flat_map(|r| crate::corpus::segment_sentences(&r.text))
        .map(|s| crate::corpus::tokenize_and_filter(&s, stopwords))
        .collect();
    let vocab = Vocabulary::build(
        token_lists.iter().map(|t| t.iter().map(|w| w.as_str())),
        vocab_size,
    )?;
    let options = EncodeOptions {
        min_ascii_ratio: config.corpus.min_ascii_ratio,
    };
    let corpus = encode_corpus(&reviews, &vocab, &options);
    let mut rules = config.split.clone();
    rules.seed = config.stage_seed("split");
    let splits = split_datasets(&corpus, &rules)?;

    let mut w = create_writer(&artifacts.vocab())?;
    vocab.save(&mut w)?;
    let mut w = create_writer(&artifacts.corpus())?;
    corpus.save(&mut w)?;
    let split_names = [
        "train",
        "summarize_val",
        "summarize_test",
        "rank_val",
        "rank_test",
    ];
    for name in split_names {
        let mut w = create_writer(&artifacts.split(name))?;
        splits.save_manifest(&mut w, name, &corpus)?;
    }
    println!(
        "preprocess: {} reviews, {} sentences, vocabulary {} words, train {} sentences",
        reviews.len(),
        corpus.len(),
        vocab.len(),
        splits.train.len()
    );
    let outputs: Vec<PathBuf> = [artifacts.vocab(), artifacts.corpus()]
        .into_iter()
        .chain(split_names.iter().map(|n| artifacts.split(n)))
        .collect();
    write_manifest(
        artifacts,
        "preprocess",
        None,
        config.seed,
        &[reviews_path],
        &outputs.iter().map(|p| p.as_path()).collect::<Vec<_>>(),
    )
}

fn train_embeddings_cmd(
    config: &RunConfig,
    artifacts: &Artifacts,
    epochs: Option<usize>,
    dimension: Option<usize>,
) -> CliResult<()> {
    let corpus = load_corpus(artifacts)?;
    let vocab = load_vocab(artifacts, config.corpus.vocab_size)?;
    let train = load_train_split(artifacts, &corpus)?;
    let mut sgns = config.sgns.clone();
    sgns.seed = config.stage_seed("sgns");
    if let Some(e) = epochs {
        sgns.epochs = e;
    }
    if let Some(d) = dimension {
        sgns.dimension = d;
    }
    let subset = corpus.subset(&train);
    let (table, report) = train_embeddings(&subset, &vocab, &sgns)?;
    let mut w = create_writer(&artifacts.embeddings())?;
    table.save_text(&mut w)?;
    let losses: Vec<String> = report.epoch_loss.iter().map(|l| format!("{l:.4}")).collect();
    println!(
        "train-embeddings: {} words x {} dims, epoch loss [{}]",
        vocab.len(),
        sgns.dimension,
        losses.join(", ")
    );
    write_manifest(
        artifacts,
        "train-embeddings",
        None,
        config.seed,
        &[&artifacts.corpus(), &artifacts.vocab(), &artifacts.split("train")],
        &[&artifacts.embeddings()],
    )
}

fn fit_kmeans_cmd(
    config: &RunConfig,
    artifacts: &Artifacts,
    clusters: Option<usize>,
) -> CliResult<()> {
    let table = load_embeddings(artifacts)?;
    let mut kmeans = config.kmeans.clone();
    kmeans.seed = config.stage_seed("kmeans");
    if let Some(k) = clusters {
        kmeans.clusters = k;
    }
    let model = kmeans_fit(&table.input, &kmeans)?;
    let mut w = create_writer(&artifacts.kmeans())?;
    model.save(&mut w)?;
    println!(
        "fit-kmeans: {} clusters over {} word vectors, final inertia {:.4}",
        kmeans.clusters,
        table.vocab().len(),
        model.inertia_history.last().copied().unwrap_or(f64::NAN)
    );
    write_manifest(
        artifacts,
        "fit-kmeans",
        None,
        config.seed,
        &[&artifacts.embeddings()],
        &[&artifacts.kmeans()],
    )
}

fn fit_lda_cmd(
    config: &RunConfig,
    artifacts: &Artifacts,
    topics: Option<usize>,
    iterations: Option<usize>,
) -> CliResult<()> {
    let corpus = load_corpus(artifacts)?;
    let vocab = load_vocab(artifacts, config.corpus.vocab_size)?;
    let train = load_train_split(artifacts, &corpus)?;
    let mut lda = config.lda.clone();
    lda.seed = config.stage_seed("lda");
    if let Some(t) = topics {
        lda.topics = t;
    }
    if let Some(i) = iterations {
        lda.iterations = i;
    }
    let documents: Vec<Vec<u32>> = train
        .iter()
        .map(|&i| corpus.sentences[i].token_ids.clone())
        .collect();
    let model = lda_fit(&documents, vocab.len(), &lda)?;
    let mut w = create_writer(&artifacts.lda())?;
    model.save(&mut w)?;
    println!(
        "fit-lda: {} topics over {} documents ({} sweeps)",
        lda.topics,
        documents.len(),
        lda.iterations
    );
    write_manifest(
        artifacts,
        "fit-lda",
        None,
        config.seed,
        &[&artifacts.corpus(), &artifacts.vocab(), &artifacts.split("train")],
        &[&artifacts.lda()],
    )
}

fn train_abae_cmd(
    config: &RunConfig,
    artifacts: &Artifacts,
    epochs: Option<usize>,
    aspects: Option<usize>,
) -> CliResult<()> {
    let corpus = load_corpus(artifacts)?;
    let table = load_embeddings(artifacts)?;
    let train = load_train_split(artifacts, &corpus)?;
    let reader = open_reader(&artifacts.kmeans(), "fit-kmeans")?;
    let init = KMeansModel::load(reader)?;
    let mut abae = config.abae.clone();
    abae.seed = config.stage_seed("abae");
    if let Some(e) = epochs {
        abae.epochs = e;
    }
    if let Some(a) = aspects {
        abae.aspects = a;
    }
    let (model, report) = train_abae(&corpus, &train, &table, &abae, &init)?;
    let mut w = create_writer(&artifacts.abae())?;
    model.save_checkpoint(&mut w)?;
    let objectives: Vec<String> = report
        .epoch_objective
        .iter()
        .map(|l| format!("{l:.4}"))
        .collect();
    println!(
        "train-abae: {} aspects, epoch objective [{}]",
        abae.aspects,
        objectives.join(", ")
    );
    write_manifest(
        artifacts,
        "train-abae",
        None,
        config.seed,
        &[
            &artifacts.corpus(),
            &artifacts.embeddings(),
            &artifacts.kmeans(),
            &artifacts.split("train"),
        ],
        &[&artifacts.abae()],
    )
}

/// Sentence indices of the summarize-validation listings.
fn validation_sentences(
    artifacts: &Artifacts,
    corpus: &EncodedCorpus,
) -> CliResult<Vec<usize>> {
    let listings = load_id_split(artifacts, "summarize_val")?;
    let mut out = Vec::new();
    for lid in &listings {
        out.extend_from_slice(corpus.sentences_of_listing(lid));
    }
    if out.is_empty() {
        return Err(CliError::Runtime(
            "summarize_val listings have no sentences".into(),
        ));
    }
    Ok(out)
}

fn coherence_cmd(config: &RunConfig, artifacts: &Artifacts) -> CliResult<()> {
    let corpus = load_corpus(artifacts)?;
    let owned = load_model(config, artifacts)?;
    let model = owned.aspect_model();
    let method = model.method();
    let val = validation_sentences(artifacts, &corpus)?;
    let docs: Vec<&[u32]> = val
        .iter()
        .map(|&i| corpus.sentences[i].token_ids.as_slice())
        .collect();
    let vocab = match &owned {
        OwnedModel::Abae { table, .. } | OwnedModel::KMeans { table, .. } => table.vocab(),
        OwnedModel::Lda { vocab, .. } => vocab,
    };
    let report = CoherenceReport::compute(&model, &docs, vocab, &config.coherence.word_counts)?;
    let mut w = create_writer(&artifacts.coherence(method))?;
    report.save(&mut w)?;
    let sums: Vec<String> = report.sums.iter().map(|s| format!("{s:.1}")).collect();
    println!(
        "coherence ({method}): {} aspects x {:?} words, sums [{}]",
        report.per_aspect.len(),
        report.word_counts,
        sums.join(", ")
    );
    write_manifest(
        artifacts,
        "coherence",
        Some(method),
        config.seed,
        &[&artifacts.corpus()],
        &[&artifacts.coherence(method)],
    )
}

fn label_aspects_cmd(config: &RunConfig, artifacts: &Artifacts, words: usize) -> CliResult<()> {
    let owned = load_model(config, artifacts)?;
    let model = owned.aspect_model();
    let method = model.method();
    let mut w = create_writer(&artifacts.top_words(method))?;
    for cluster in 0..model.cluster_count() {
        let list = model.top_words(cluster, words.min(model.cluster_count().max(words)))?;
        writeln!(w, "{cluster}\t{}", list.join(" "))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    drop(w);
    // The labeling file is human-edited: only seed it when absent.
    let labels_path = artifacts.labels(method);
    if !labels_path.exists() {
        let mut w = create_writer(&labels_path)?;
        for cluster in 0..model.cluster_count() {
            writeln!(w, "{cluster}\tother").map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        println!(
            "label-aspects ({method}): wrote top words and a template mapping; edit {} to assign labels",
            labels_path.display()
        );
    } else {
        println!(
            "label-aspects ({method}): wrote top words; kept existing {}",
            labels_path.display()
        );
    }
    write_manifest(
        artifacts,
        "label-aspects",
        Some(method),
        config.seed,
        &[],
        &[&artifacts.top_words(method), &labels_path],
    )
}

fn load_labeling(
    artifacts: &Artifacts,
    method: MethodTag,
    clusters: usize,
) -> CliResult<AspectLabeling> {
    let reader = open_reader(&artifacts.labels(method), "label-aspects")?;
    Ok(AspectLabeling::load(reader, method, clusters)?)
}

const EXTRACTION_HEADER: &str =
    "method\tlisting_id\taspect\trank\tsentence_index\tscore\tshort_list\ttext";

fn write_extractions(path: &Path, items: &[ExtractedSentence]) -> CliResult<()> {
    let mut w = create_writer(path)?;
    writeln!(w, "{EXTRACTION_HEADER}").map_err(|e| CliError::Runtime(e.to_string()))?;
    for e in items {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.method,
            e.listing_id,
            e.aspect,
            e.rank,
            e.sentence_index,
            e.score,
            u8::from(e.short_list),
            e.text
        )
        .map_err(|err| CliError::Runtime(err.to_string()))?;
    }
    Ok(())
}

fn read_extractions(path: &Path) -> CliResult<Vec<ExtractedSentence>> {
    let reader = open_reader(path, "summarize")?;
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Runtime(e.to_string()))?;
        if line.is_empty() || line == EXTRACTION_HEADER {
            continue;
        }
        let fields: Vec<&str> = line.splitn(8, '\t').collect();
        if fields.len() != 8 {
            return Err(CliError::Runtime(format!(
                "{}: line {} has {} fields",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            CliError::Runtime(format!("{}: line {}: bad {what}", path.display(), lineno + 1))
        };
        out.push(ExtractedSentence {
            method: fields[0].parse().map_err(|_| parse_err("method"))?,
            listing_id: fields[1].to_string(),
            aspect: fields[2].parse().map_err(|_| parse_err("aspect"))?,
            rank: fields[3].parse().map_err(|_| parse_err("rank"))?,
            sentence_index: fields[4].parse().map_err(|_| parse_err("sentence index"))?,
            score: fields[5].parse().map_err(|_| parse_err("score"))?,
            short_list: fields[6] == "1",
            text: fields[7].to_string(),
        });
    }
    Ok(out)
}

/// Extractions of every method that has been summarized so far, in a stable
/// order; the index of each item is its example id.
fn pooled_examples(artifacts: &Artifacts) -> CliResult<Vec<ExtractedSentence>> {
    let mut pool = Vec::new();
    let mut found = false;
    for method in [MethodTag::Abae, MethodTag::KMeans, MethodTag::Lda] {
        let path = artifacts.extractions(method);
        if path.exists() {
            pool.extend(read_extractions(&path)?);
            found = true;
        }
    }
    if !found {
        return Err(CliError::MissingInput(
            "no extraction files found; run `summarize` first".into(),
        ));
    }
    pool.sort_by(|a, b| {
        (a.method, &a.listing_id, a.aspect, a.rank).cmp(&(b.method, &b.listing_id, b.aspect, b.rank))
    });
    Ok(pool)
}

fn summarize_cmd(config: &RunConfig, artifacts: &Artifacts, top_k: Option<usize>) -> CliResult<()> {
    let corpus = load_corpus(artifacts)?;
    let owned = load_model(config, artifacts)?;
    let model = owned.aspect_model();
    let method = model.method();
    let labeling = load_labeling(artifacts, method, model.cluster_count())?;
    let listings = load_id_split(artifacts, "summarize_test")?;
    let k = top_k.unwrap_or(config.summarize.top_k);
    if k == 0 {
        return Err(CliError::Config("top_k must be at least 1".into()));
    }
    let seed = config.stage_seed("summarize");

    let labels: Vec<AspectLabel> = AspectLabel::ALL
        .iter()
        .copied()
        .filter(|&l| l != AspectLabel::Other && !labeling.clusters_for(l).is_empty())
        .collect();
    if labels.is_empty() {
        return Err(CliError::Runtime(format!(
            "labeling {} maps no cluster to a named aspect; edit it before summarizing",
            artifacts.labels(method).display()
        )));
    }

    let mut extracted = Vec::new();
    let mut short_listings = 0usize;
    for lid in &listings {
        let candidates = corpus.sentences_of_listing(lid);
        if candidates.is_empty() {
            continue;
        }
        for &label in &labels {
            let items = extract_top_sentences(
                &corpus, candidates, lid, label, &labeling, &model, k, seed,
            )?;
            if items.iter().any(|e| e.short_list) {
                short_listings += 1;
            }
            extracted.extend(items);
        }
    }
    write_extractions(&artifacts.extractions(method), &extracted)?;

    // Rebuild the blind sheets over every summarized method.
    let pool = pooled_examples(artifacts)?;
    let sheets = build_evaluation_sheets(
        &pool,
        config.summarize.annotators,
        config.summarize.holdout_fraction,
        config.stage_seed("sheets"),
    )?;
    let mut sheet_paths = Vec::new();
    for (i, rows) in sheets.iter().enumerate() {
        let path = artifacts.sheet(i);
        let mut w = create_writer(&path)?;
        write_sheet(&mut w, &format!("annotator_{i:02}"), rows)?;
        sheet_paths.push(path);
    }
    if short_listings > 0 {
        eprintln!(
            "warning: {short_listings} (listing, aspect) groups had fewer than {k} candidate sentences"
        );
    }
    println!(
        "summarize ({method}): {} extractions over {} listings x {} aspects; {} sheet(s) over {} pooled examples",
        extracted.len(),
        listings.len(),
        labels.len(),
        sheets.len(),
        pool.len()
    );
    let mut outputs: Vec<&Path> = vec![];
    let extraction_path = artifacts.extractions(method);
    outputs.push(&extraction_path);
    let sheet_refs: Vec<&Path> = sheet_paths.iter().map(|p| p.as_path()).collect();
    outputs.extend(sheet_refs);
    write_manifest(
        artifacts,
        "summarize",
        Some(method),
        config.seed,
        &[
            &artifacts.corpus(),
            &artifacts.labels(method),
            &artifacts.split("summarize_test"),
        ],
        &outputs,
    )
}

fn eval_judgments_cmd(
    config: &RunConfig,
    artifacts: &Artifacts,
    judgments_path: Option<&Path>,
) -> CliResult<()> {
    let default_path = artifacts.out_dir.join("judgments.tsv");
    let path = judgments_path.unwrap_or(&default_path);
    let reader = match File::open(path) {
        Ok(f) => BufReader::new(f),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingInput(format!(
                "judgment file {} (fill in the sheets from `summarize`)",
                path.display()
            )))
        }
        Err(e) => return Err(CliError::Runtime(format!("{}: {e}", path.display()))),
    };
    let judgments = read_judgments(reader)?;
    if judgments.is_empty() {
        return Err(CliError::Runtime("judgment file has no verdicts".into()));
    }
    let pool = pooled_examples(artifacts)?;

    // Majority verdict per example (ties count as negative).
    let mut votes: Vec<Vec<u8>> = vec![Vec::new(); pool.len()];
    for j in &judgments {
        if j.example_id >= pool.len() {
            return Err(CliError::Runtime(format!(
                "judgment references unknown example {}",
                j.example_id
            )));
        }
        votes[j.example_id].push(j.verdict);
    }
    let majority: Vec<Option<u8>> = votes
        .iter()
        .map(|v| {
            if v.is_empty() {
                None
            } else {
                let ones = v.iter().filter(|&&x| x == 1).count();
                Some(u8::from(ones * 2 > v.len()))
            }
        })
        .collect();

    // Group verdicts by (method, aspect, listing), ordered by rank.
    let mut groups: HashMap<(MethodTag, AspectLabel), HashMap<&str, Vec<(u32, u8)>>> =
        HashMap::new();
    for (id, item) in pool.iter().enumerate() {
        if item.short_list {
            continue;
        }
        let Some(v) = majority[id] else {
            return Err(CliError::Runtime(format!(
                "example {id} ({} / {} / {} rank {}) has no verdict",
                item.method, item.listing_id, item.aspect, item.rank
            )));
        };
        groups
            .entry((item.method, item.aspect))
            .or_default()
            .entry(item.listing_id.as_str())
            .or_default()
            .push((item.rank, v));
    }

    let k = config.summarize.top_k;
    let mut rows: Vec<(MethodTag, AspectLabel, f64, f64, usize)> = Vec::new();
    for ((method, aspect), listings) in &groups {
        let mut verdict_groups: Vec<Vec<u8>> = Vec::new();
        for ranked in listings.values() {
            let mut ranked = ranked.clone();
            ranked.sort_by_key(|(rank, _)| *rank);
            verdict_groups.push(ranked.into_iter().map(|(_, v)| v).collect());
        }
        let p1 = precision_at_k(&verdict_groups, 1)?;
        let pk = precision_at_k(&verdict_groups, k)?;
        rows.push((*method, *aspect, p1, pk, verdict_groups.len()));
    }
    rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    // Fleiss' kappa over examples rated by every annotator.
    let annotators: std::collections::BTreeSet<&str> =
        judgments.iter().map(|j| j.annotator.as_str()).collect();
    let n_annotators = annotators.len();
    let kappa_items: Vec<Vec<u32>> = votes
        .iter()
        .filter(|v| v.len() == n_annotators && n_annotators >= 2)
        .map(|v| {
            let ones = v.iter().filter(|&&x| x == 1).count() as u32;
            vec![v.len() as u32 - ones, ones]
        })
        .collect();
    let kappa = if kappa_items.is_empty() {
        None
    } else {
        Some(fleiss_kappa(&kappa_items)?)
    };

    let mut w = create_writer(&artifacts.precision())?;
    writeln!(w, "method\taspect\tp_at_1\tp_at_{k}\tgroups")
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for (method, aspect, p1, pk, n) in &rows {
        writeln!(w, "{method}\t{aspect}\t{p1:.4}\t{pk:.4}\t{n}")
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match kappa {
        Some(kappa) => writeln!(
            w,
            "# fleiss_kappa\t{kappa:.4}\titems\t{}\traters\t{n_annotators}",
            kappa_items.len()
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?,
        None => writeln!(w, "# fleiss_kappa\tn/a (no fully-overlapping items)")
            .map_err(|e| CliError::Runtime(e.to_string()))?,
    }
    drop(w);
    println!(
        "eval-judgments: {} (method, aspect) rows from {} verdicts{}",
        rows.len(),
        judgments.len(),
        kappa
            .map(|k| format!(", fleiss kappa {k:.4}"))
            .unwrap_or_default()
    );
    write_manifest(
        artifacts,
        "eval-judgments",
        None,
        config.seed,
        &[path],
        &[&artifacts.precision()],
    )
}

/// Aspect distributions for the given sentence indices, keyed by index.
fn sentence_distributions(
    corpus: &EncodedCorpus,
    model: &AspectModel,
    indices: &[usize],
    seed: u64,
) -> CliResult<HashMap<usize, AspectDistribution>> {
    let mut out = HashMap::with_capacity(indices.len());
    for &i in indices {
        let dist = model.aspect_distribution(
            &corpus.sentences[i].token_ids,
            crate::config::derive_seed(seed, &format!("sentence{i}")),
        )?;
        out.insert(i, dist);
    }
    Ok(out)
}

fn profile_cmd(
    config: &RunConfig,
    artifacts: &Artifacts,
    aggregation_override: Option<&str>,
) -> CliResult<()> {
    let corpus = load_corpus(artifacts)?;
    let owned = load_model(config, artifacts)?;
    let model = owned.aspect_model();
    let method = model.method();
    let guests = load_id_split(artifacts, "rank_val")?;
    let aggregation: Aggregation = aggregation_override
        .unwrap_or(&config.profiles.aggregation)
        .parse()
        .map_err(|e: crate::Error| CliError::Config(e.to_string()))?;
    let seed = config.stage_seed("profile");

    let mut profiles = Vec::new();
    for gid in &guests {
        let indices: Vec<usize> = corpus.sentences_of_guest(gid).to_vec();
        if indices.is_empty() {
            eprintln!("warning: guest {gid} has no sentences; skipped");
            continue;
        }
        let dists = sentence_distributions(&corpus, &model, &indices, seed)?;
        let profile = match aggregation {
            Aggregation::BagOfSentences => {
                let list: Vec<AspectDistribution> =
                    indices.iter().map(|i| dists[i].clone()).collect();
                aggregate_bos(gid, &list)?
            }
            Aggregation::BagOfReviews => {
                let mut by_review: Vec<(String, Vec<AspectDistribution>)> = Vec::new();
                for &i in &indices {
                    let rid = corpus.sentences[i].review_id.clone();
                    match by_review.iter_mut().find(|(r, _)| *r == rid) {
                        Some((_, list)) => list.push(dists[&i].clone()),
                        None => by_review.push((rid, vec![dists[&i].clone()])),
                    }
                }
                let reviews: Vec<Vec<AspectDistribution>> =
                    by_review.into_iter().map(|(_, list)| list).collect();
                aggregate_bor(gid, &reviews)?
            }
            Aggregation::MaxSoftmax => {
                let list: Vec<AspectDistribution> =
                    indices.iter().map(|i| dists[i].clone()).collect();
                aggregate_max_softmax(gid, &list)?
            }
        };
        profiles.push(profile);
    }
    if profiles.is_empty() {
        return Err(CliError::Runtime(
            "no ranking-validation guest has sentences".into(),
        ));
    }

    let mut w = create_writer(&artifacts.profiles(method))?;
    writeln!(w, "guest_id\taggregation\tsentences\tdistribution")
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for p in &profiles {
        let probs: Vec<String> = p.distribution.probs().iter().map(|x| x.to_string()).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            p.guest_id,
            p.aggregation,
            p.sentence_count,
            probs.join(" ")
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    drop(w);
    println!(
        "profile ({method}): {} guest profiles ({aggregation})",
        profiles.len()
    );
    write_manifest(
        artifacts,
        "profile",
        Some(method),
        config.seed,
        &[&artifacts.corpus(), &artifacts.split("rank_val")],
        &[&artifacts.profiles(method)],
    )
}

fn read_profiles(path: &Path) -> CliResult<Vec<GuestProfile>> {
    let reader = open_reader(path, "profile")?;
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Runtime(e.to_string()))?;
        if line.is_empty() || line.starts_with("guest_id\t") {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CliError::Runtime(format!(
                "{}: line {} has {} fields",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let aggregation: Aggregation = fields[1]
            .parse()
            .map_err(|e: crate::Error| CliError::Runtime(e.to_string()))?;
        let sentence_count: usize = fields[2]
            .parse()
            .map_err(|_| CliError::Runtime(format!("bad sentence count on line {}", lineno + 1)))?;
        let probs: Vec<f64> = fields[3]
            .split(' ')
            .map(|x| {
                x.parse()
                    .map_err(|_| CliError::Runtime(format!("bad probability on line {}", lineno + 1)))
            })
            .collect::<CliResult<_>>()?;
        out.push(GuestProfile {
            guest_id: fields[0].to_string(),
            distribution: AspectDistribution::new(probs)?,
            aggregation,
            sentence_count,
        });
    }
    Ok(out)
}

fn rerank_eval_cmd(config: &RunConfig, artifacts: &Artifacts) -> CliResult<()> {
    let corpus = load_corpus(artifacts)?;
    let owned = load_model(config, artifacts)?;
    let model = owned.aspect_model();
    let method = model.method();
    let profiles = read_profiles(&artifacts.profiles(method))?;
    let listings = load_id_split(artifacts, "rank_test")?;
    let seed = config.stage_seed("rerank");

    let mut indices = Vec::new();
    for lid in &listings {
        indices.extend_from_slice(corpus.sentences_of_listing(lid));
    }
    let dists = sentence_distributions(&corpus, &model, &indices, seed)?;
    let universe = build_ranking_universe(&corpus, &listings, &dists)?;
    for lid in &universe.skipped {
        eprintln!("warning: listing {lid} has no scored sentences; skipped");
    }

    let mut summary_rows = Vec::new();
    let mut scatter_paths = Vec::new();
    for kind in [ObjectKind::Listing, ObjectKind::Review, ObjectKind::Sentence] {
        let (points, fit) = pairwise_experiment(&profiles, &universe, kind)?;
        let path = artifacts.rerank_scatter(method, kind);
        let mut w = create_writer(&path)?;
        writeln!(w, "guest_a\tguest_b\tx_kl\ty_tau\tkind\tmethod")
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        for p in &points {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{kind}\t{method}",
                p.guest_a, p.guest_b, p.profile_distance, p.rank_correlation
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        println!(
            "rerank-eval ({method}, {kind}): {} pairs, slope {:.4}, R^2 {:.4}",
            points.len(),
            fit.slope,
            fit.r_squared
        );
        summary_rows.push((kind, fit));
        scatter_paths.push(path);
    }

    let mut w = create_writer(&artifacts.rerank_summary(method))?;
    writeln!(w, "kind\tintercept\tslope\tr_squared")
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for (kind, fit) in &summary_rows {
        writeln!(
            w,
            "{kind}\t{:.6}\t{:.6}\t{:.6}",
            fit.intercept, fit.slope, fit.r_squared
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    drop(w);

    // Full ranked listing lists per profile, Table-5 style.
    let mut w = create_writer(&artifacts.rankings(method))?;
    writeln!(w, "profile_id\tobject_id\trank\tscore")
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for profile in &profiles {
        let ranked = rank_objects(profile, &universe.listings, ObjectKind::Listing)?;
        for (rank, (object_id, score)) in ranked.entries.iter().enumerate() {
            writeln!(w, "{}\t{object_id}\t{}\t{score}", profile.guest_id, rank + 1)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    drop(w);

    let mut outputs: Vec<&Path> = scatter_paths.iter().map(|p| p.as_path()).collect();
    let summary_path = artifacts.rerank_summary(method);
    let rankings_path = artifacts.rankings(method);
    outputs.push(&summary_path);
    outputs.push(&rankings_path);
    write_manifest(
        artifacts,
        "rerank-eval",
        Some(method),
        config.seed,
        &[
            &artifacts.corpus(),
            &artifacts.profiles(method),
            &artifacts.split("rank_test"),
        ],
        &outputs,
    )
}

fn report_cmd(config: &RunConfig, artifacts: &Artifacts) -> CliResult<()> {
    let method = method_tag(config)?;
    let corpus = load_corpus(artifacts)?;
    let owned = load_model(config, artifacts)?;
    let model = owned.aspect_model();

    let mut sections: Vec<String> = Vec::new();
    sections.push(format!("# review-aspects report (method: {method})\n"));

    // Coherence: required.
    let coherence_path = artifacts.coherence(method);
    let coherence_text = fs::read_to_string(&coherence_path).map_err(|_| {
        CliError::MissingInput(format!(
            "{} not found; run `coherence` first",
            coherence_path.display()
        ))
    })?;
    sections.push(format!("## coherence ({method})\n{coherence_text}"));

    // Prevalence: requires the labeling.
    let labeling = load_labeling(artifacts, method, model.cluster_count())?;
    let val = validation_sentences(artifacts, &corpus)?;
    let docs: Vec<&[u32]> = val
        .iter()
        .map(|&i| corpus.sentences[i].token_ids.as_slice())
        .collect();
    let prevalence = aspect_prevalence(&docs, &labeling, &model, config.stage_seed("prevalence"))?;
    let mut prevalence_text = String::from("label\tfraction\n");
    for (label, fraction) in &prevalence {
        prevalence_text.push_str(&format!("{label}\t{fraction:.4}\n"));
    }
    sections.push(format!(
        "## aspect prevalence over validation sentences ({method})\n{prevalence_text}"
    ));

    // Reranking summary: required.
    let summary_path = artifacts.rerank_summary(method);
    let summary_text = fs::read_to_string(&summary_path).map_err(|_| {
        CliError::MissingInput(format!(
            "{} not found; run `rerank-eval` first",
            summary_path.display()
        ))
    })?;
    sections.push(format!("## reranking correlation ({method})\n{summary_text}"));

    // Precision: optional (needs human judgments).
    match fs::read_to_string(artifacts.precision()) {
        Ok(text) => sections.push(format!("## extraction precision\n{text}")),
        Err(_) => sections.push(
            "## extraction precision\nnot available; run `summarize`, collect judgments, then `eval-judgments`\n"
                .to_string(),
        ),
    }

    let mut w = create_writer(&artifacts.report())?;
    write!(w, "{}", sections.join("\n")).map_err(|e| CliError::Runtime(e.to_string()))?;
    drop(w);
    println!("report: wrote {}", artifacts.report().display());
    write_manifest(
        artifacts,
        "report",
        Some(method),
        config.seed,
        &[&coherence_path, &summary_path],
        &[&artifacts.report()],
    )
}

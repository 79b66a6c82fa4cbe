//! Corpus loading, the train/dev/test protocol, Adam training with early
//! stopping, accuracy evaluation, the ablation grid, and corpus statistics.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_examples, CommandKind, DatasetError, Example, Split};
use crate::grounder::{GroundError, Grounder};
use crate::models::{
    example_loss, predict, target_position, AlignmentConfig, AlignmentModel, EmbeddingConfig, EmbeddingModel,
    LoadedModel, ModelError, ModelKind, NeuralGrounder, Vocabularies,
};
use crate::numerics::{adam_step, AdamConfig, Gradients, NumericsError, ParamStore};
use crate::prediction::Prediction;
use crate::retrieval::{build_df, RetrievalConfig, RetrievalError};
use crate::snapshot::{load_snapshot, validate_corpus, CorpusIssueKind, CorpusReport, PageSnapshot, SnapshotError};
use crate::text::{is_stopword, stem, tokenize_natural, Token};
use crate::vocab::{Glove, GloveError};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Snapshot { path: PathBuf, source: SnapshotError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("page {0:?} appears in more than one snapshot")]
    DuplicatePage(String),
    #[error("corrupt corpus: page {page_id:?} is used by both {first} and {second}")]
    SplitOverlap { page_id: String, first: Split, second: Split },
}

/// One dataset line joined to its page.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusExample {
    /// Position in the dataset file, used as the example id.
    pub index: usize,
    pub example: Example,
    /// Index into [`Corpus::pages`], when the page exists.
    pub page: Option<usize>,
    /// Why the example cannot be answered correctly, if it cannot.
    pub issue: Option<CorpusIssueKind>,
}

impl CorpusExample {
    pub fn is_valid(&self) -> bool {
        self.issue.is_none()
    }
}

/// Validated pages and examples with split-disjoint pages.
#[derive(Debug, Clone)]
pub struct Corpus {
    pages: Vec<PageSnapshot>,
    page_index: HashMap<String, usize>,
    examples: Vec<CorpusExample>,
    report: CorpusReport,
}

impl Corpus {
    /// Joins examples to pages. Invalid examples (missing page, missing or
    /// invisible target) are kept but flagged; a page used by two splits is
    /// a fatal error.
    pub fn from_parts(pages: Vec<PageSnapshot>, examples: Vec<Example>) -> Result<Self, CorpusError> {
        let mut page_index = HashMap::with_capacity(pages.len());
        for (i, p) in pages.iter().enumerate() {
            if page_index.insert(p.page_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicatePage(p.page_id.clone()));
            }
        }
        let mut split_of: HashMap<&str, Split> = HashMap::new();
        for ex in &examples {
            match split_of.get(ex.page_id.as_str()) {
                Some(&first) if first != ex.split => {
                    return Err(CorpusError::SplitOverlap {
                        page_id: ex.page_id.clone(),
                        first,
                        second: ex.split,
                    })
                }
                _ => {
                    split_of.insert(&ex.page_id, ex.split);
                }
            }
        }
        let report = validate_corpus(&pages, &examples);
        let mut issues: HashMap<usize, CorpusIssueKind> = HashMap::new();
        for issue in &report.issues {
            issues.insert(issue.example, issue.kind);
        }
        let examples = examples
            .into_iter()
            .enumerate()
            .map(|(index, example)| CorpusExample {
                index,
                page: page_index.get(&example.page_id).copied(),
                issue: issues.get(&index).copied(),
                example,
            })
            .collect();
        Ok(Self {
            pages,
            page_index,
            examples,
            report,
        })
    }

    pub fn pages(&self) -> &[PageSnapshot] {
        &self.pages
    }

    pub fn page(&self, page_id: &str) -> Option<&PageSnapshot> {
        self.page_index.get(page_id).map(|&i| &self.pages[i])
    }

    /// Every example, valid or not, in dataset order.
    pub fn examples(&self) -> &[CorpusExample] {
        &self.examples
    }

    /// All examples of one split, valid or not.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusExample> {
        self.examples.iter().filter(move |e| e.example.split == split)
    }

    /// Examples of one split that a model can answer correctly.
    pub fn valid(&self, split: Split) -> impl Iterator<Item = &CorpusExample> {
        self.split(split).filter(|e| e.is_valid())
    }

    pub fn report(&self) -> &CorpusReport {
        &self.report
    }

    pub fn invalid_count(&self) -> usize {
        self.report.issues.len()
    }

    /// Pages used by at least one example of `split`, in corpus order.
    pub fn split_pages(&self, split: Split) -> Vec<&PageSnapshot> {
        let used: BTreeSet<usize> = self.split(split).filter_map(|e| e.page).collect();
        used.into_iter().map(|i| &self.pages[i]).collect()
    }
}

/// Reads a JSON-lines dataset and every `*.json` snapshot in `snapshot_dir`
/// (in file-name order), then builds a [`Corpus`].
pub fn load_dataset(dataset: &Path, snapshot_dir: &Path) -> Result<Corpus, CorpusError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    let file = fs::File::open(dataset).map_err(io_err(dataset))?;
    let examples = read_examples(BufReader::new(file))?;

    let pages = load_snapshot_dir(snapshot_dir)?;
    Corpus::from_parts(pages, examples)
}

/// Reads every `*.json` snapshot in a directory, in file-name order.
pub fn load_snapshot_dir(dir: &Path) -> Result<Vec<PageSnapshot>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err)?;
    files.retain(|p| p.extension().is_some_and(|e| e == "json"));
    files.sort();
    files
        .into_iter()
        .map(|path| {
            let bytes = fs::read(&path).map_err(|source| CorpusError::Io {
                path: path.clone(),
                source,
            })?;
            load_snapshot(&bytes).map_err(|source| CorpusError::Snapshot { path, source })
        })
        .collect()
}

/// Training run settings. Missing JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub no_texts: bool,
    pub no_attributes: bool,
    pub no_spatial_context: bool,
    /// Split whose accuracy drives early stopping and checkpoint choice.
    pub monitor: Split,
    /// Stop as soon as the monitored accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Optional GloVe-format file with `token_dim`-dimensional vectors.
    pub pretrained_embeddings: Option<PathBuf>,
    pub retrieval: RetrievalConfig,
    pub embedding: EmbeddingConfig,
    pub alignment: AlignmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Embedding,
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            no_texts: false,
            no_attributes: false,
            no_spatial_context: false,
            monitor: Split::Dev,
            target_accuracy: None,
            pretrained_embeddings: None,
            retrieval: RetrievalConfig::default(),
            embedding: EmbeddingConfig::default(),
            alignment: AlignmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        let ablated = self.no_texts || self.no_attributes || self.no_spatial_context;
        if self.model == ModelKind::Retrieval && ablated {
            return bad("ablation flags apply to the neural models only");
        }
        Ok(())
    }

    /// Model settings with the ablation flags applied.
    pub fn embedding_config(&self) -> EmbeddingConfig {
        let mut c = self.embedding.clone();
        c.ablate_text |= self.no_texts;
        c.ablate_attributes |= self.no_attributes;
        c.use_spatial_context &= !self.no_spatial_context;
        c
    }

    pub fn alignment_config(&self) -> AlignmentConfig {
        let mut c = self.alignment.clone();
        c.ablate_text |= self.no_texts;
        c.ablate_attributes |= self.no_attributes;
        c.use_spatial_context &= !self.no_spatial_context;
        c
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("bad training config: {0}")]
    Config(String),
    #[error("the {0} split has no valid examples")]
    EmptySplit(Split),
    #[error("non-finite loss on example {index} (page {page_id:?}, command {command:?})")]
    NonFiniteLoss { index: usize, page_id: String, command: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("pretrained embeddings: {0}")]
    Embeddings(#[from] GloveError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Patience-based early stopping on a metric where larger is better.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    waited: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    /// No improvement for this many epochs in a row; keep going.
    Waiting(usize),
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        Self {
            patience,
            best: None,
            waited: 0,
        }
    }

    /// Only a strict improvement resets the patience counter.
    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> Progress {
        match self.best {
            Some((_, best)) if accuracy <= best => {
                self.waited += 1;
                if self.waited >= self.patience {
                    Progress::Stop
                } else {
                    Progress::Waiting(self.waited)
                }
            }
            _ => {
                self.best = Some((epoch, accuracy));
                self.waited = 0;
                Progress::Improved
            }
        }
    }

    /// `(epoch, accuracy)` of the best epoch so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// One line of the JSON-lines training log. Contains nothing that varies
/// between identical runs; wall times go to [`EpochTiming`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub model: ModelKind,
    pub seed: u64,
    pub epoch: usize,
    /// Mean training loss over the epoch; absent for retrieval.
    pub mean_loss: Option<f64>,
    pub monitor: Split,
    pub accuracy: f64,
    pub best_epoch: usize,
    pub best_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTiming {
    pub epoch: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The model from the best monitored epoch.
    pub grounder: Grounder,
    pub log: Vec<EpochRecord>,
    pub timings: Vec<EpochTiming>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub seed: u64,
}

fn write_jsonl<W: Write, S: Serialize>(mut out: W, rows: &[S]) -> io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

impl TrainOutcome {
    pub fn write_log<W: Write>(&self, out: W) -> io::Result<()> {
        write_jsonl(out, &self.log)
    }

    pub fn write_timings<W: Write>(&self, out: W) -> io::Result<()> {
        write_jsonl(out, &self.timings)
    }

    pub fn write_model<W: Write>(&self, out: W) -> Result<(), NumericsError> {
        self.grounder.write(out, self.seed)
    }
}

/// Trains the configured model on the train split.
///
/// Retrieval "training" builds the DF table from the training pages. Neural
/// models run seeded shuffled mini-batch epochs with Adam; after each epoch
/// the monitored split is evaluated, the best parameters are kept, and
/// training stops once accuracy has not improved for `patience` epochs.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if corpus.valid(Split::Train).next().is_none() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    match config.model {
        ModelKind::Retrieval => train_retrieval(corpus, config),
        ModelKind::Embedding => {
            let model = EmbeddingModel::new(config.embedding_config(), training_vocabularies(corpus));
            let glove = read_pretrained(config, model.config.token_dim, &model.vocabs)?;
            let init = model.init_params_with(config.seed, glove.as_ref());
            let run = train_neural(&model, init, corpus, config)?;
            Ok(run.finish(LoadedModel::Embedding(model, run.best_params.clone()), config.seed))
        }
        ModelKind::Alignment => {
            let model = AlignmentModel::new(config.alignment_config(), training_vocabularies(corpus));
            let glove = read_pretrained(config, model.config.token_dim, &model.vocabs)?;
            let init = model.init_params_with(config.seed, glove.as_ref());
            let run = train_neural(&model, init, corpus, config)?;
            Ok(run.finish(LoadedModel::Alignment(model, run.best_params.clone()), config.seed))
        }
    }
}

/// Vocabularies over every page of the corpus (pages are unlabeled model
/// inputs) and the training commands. Rows for words never seen in training
/// keep their initial values, much like pretrained vectors would.
fn training_vocabularies(corpus: &Corpus) -> Vocabularies {
    let pages = &corpus.pages;
    let commands: Vec<&str> = corpus.split(Split::Train).map(|e| e.example.command.as_str()).collect();
    Vocabularies::build(pages, commands)
}

fn read_pretrained(config: &TrainConfig, dim: usize, vocabs: &Vocabularies) -> Result<Option<Glove>, TrainError> {
    let Some(path) = &config.pretrained_embeddings else {
        return Ok(None);
    };
    let file = io::BufReader::new(fs::File::open(path)?);
    Ok(Some(Glove::read(file, dim, |t| vocabs.tokens.contains(t))?))
}

fn train_retrieval(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let start = Instant::now();
    let pages: Vec<PageSnapshot> = corpus.split_pages(Split::Train).into_iter().cloned().collect();
    let df = build_df(&pages, config.retrieval.alpha)?;
    let grounder = Grounder::Retrieval {
        df,
        config: config.retrieval,
    };
    let eval = evaluate(corpus, config.monitor, &grounder)?;
    let log = vec![EpochRecord {
        model: ModelKind::Retrieval,
        seed: config.seed,
        epoch: 1,
        mean_loss: None,
        monitor: config.monitor,
        accuracy: eval.accuracy,
        best_epoch: 1,
        best_accuracy: eval.accuracy,
    }];
    Ok(TrainOutcome {
        grounder,
        log,
        timings: vec![EpochTiming {
            epoch: 1,
            wall_seconds: start.elapsed().as_secs_f64(),
        }],
        best_epoch: 1,
        best_accuracy: eval.accuracy,
        seed: config.seed,
    })
}

struct NeuralRun {
    best_params: ParamStore<f32>,
    log: Vec<EpochRecord>,
    timings: Vec<EpochTiming>,
    best_epoch: usize,
    best_accuracy: f64,
}

impl NeuralRun {
    fn finish(&self, model: LoadedModel, seed: u64) -> TrainOutcome {
        TrainOutcome {
            grounder: Grounder::Neural(model),
            log: self.log.clone(),
            timings: self.timings.clone(),
            best_epoch: self.best_epoch,
            best_accuracy: self.best_accuracy,
            seed,
        }
    }
}

struct TrainItem<'c> {
    ex: &'c CorpusExample,
    page: usize,
    target: usize,
}

fn train_neural<M: NeuralGrounder + Sync>(
    model: &M,
    mut params: ParamStore<f32>,
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<NeuralRun, TrainError>
where
    M::PageFeatures: Sync,
{
    if corpus.split(config.monitor).next().is_none() {
        return Err(TrainError::EmptySplit(config.monitor));
    }
    let wanted: BTreeSet<usize> = corpus
        .split(Split::Train)
        .chain(corpus.split(config.monitor))
        .filter_map(|e| e.page)
        .collect();
    let features: Vec<Option<M::PageFeatures>> = (0..corpus.pages.len())
        .map(|i| wanted.contains(&i).then(|| model.page_features(&corpus.pages[i])))
        .collect();
    let feats = |page: usize| features[page].as_ref().expect("features of every used page");

    let mut items = Vec::new();
    for ex in corpus.valid(Split::Train) {
        let page = ex.page.expect("valid examples have a page");
        let target = target_position(model, &corpus.pages[page], feats(page), &ex.example.target_id)?;
        items.push(TrainItem { ex, page, target });
    }

    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut stopping = EarlyStopping::new(config.patience);
    let mut best_params = params.clone();
    let mut log = Vec::new();
    let mut timings = Vec::new();

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total_loss = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::zeros_like(&params);
            for &k in batch {
                let it = &items[k];
                let (loss, g) = example_loss(model, &params, feats(it.page), &it.ex.example.command, it.target)
                    .map_err(|e| match e {
                        ModelError::Numerics(NumericsError::NonFiniteLoss(_)) => TrainError::NonFiniteLoss {
                            index: it.ex.index,
                            page_id: it.ex.example.page_id.clone(),
                            command: it.ex.example.command.clone(),
                        },
                        other => other.into(),
                    })?;
                total_loss += f64::from(loss);
                grads.accumulate(&g);
            }
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut params, &grads, &adam)?;
        }

        let eval = evaluate_indexed(corpus, config.monitor, |page, command| {
            predict(model, &params, &corpus.pages[page], feats(page), command).map_err(GroundError::from)
        })?;
        let progress = stopping.observe(epoch, eval.accuracy);
        if progress == Progress::Improved {
            best_params = params.clone();
        }
        let (best_epoch, best_accuracy) = stopping.best().expect("observed at least once");
        log.push(EpochRecord {
            model: model.kind(),
            seed: config.seed,
            epoch,
            mean_loss: Some(total_loss / items.len() as f64),
            monitor: config.monitor,
            accuracy: eval.accuracy,
            best_epoch,
            best_accuracy,
        });
        timings.push(EpochTiming {
            epoch,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        let reached = config.target_accuracy.is_some_and(|t| best_accuracy >= t);
        if progress == Progress::Stop || reached {
            break;
        }
    }
    let (best_epoch, best_accuracy) = stopping.best().expect("at least one epoch");
    Ok(NeuralRun {
        best_params,
        log,
        timings,
        best_epoch,
        best_accuracy,
    })
}

/// Outcome of one example at evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub index: usize,
    pub page_id: String,
    pub command: String,
    pub target_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<CommandKind>,
    /// 1-based rank of the target; absent when the target is not a candidate.
    pub rank: Option<usize>,
    pub correct: bool,
    pub top5: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub split: Split,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub records: Vec<EvalRecord>,
}

impl Evaluation {
    /// Accuracy over the records that pass `keep`, with the count; 0 when none do.
    pub fn accuracy_where(&self, keep: impl Fn(&EvalRecord) -> bool) -> (f64, usize) {
        let (n, c) = self
            .records
            .iter()
            .filter(|r| keep(r))
            .fold((0usize, 0usize), |(n, c), r| (n + 1, c + usize::from(r.correct)));
        (if n == 0 { 0.0 } else { c as f64 / n as f64 }, n)
    }

    pub fn accuracy_for(&self, kind: CommandKind) -> (f64, usize) {
        self.accuracy_where(|r| r.kind == Some(kind))
    }
}

/// Top-1 accuracy of `grounder` over every example of `split`. Examples
/// whose target cannot be selected count as errors.
pub fn evaluate(corpus: &Corpus, split: Split, grounder: &Grounder) -> Result<Evaluation, GroundError> {
    evaluate_indexed(corpus, split, |page, command| grounder.predict(&corpus.pages[page], command))
}

/// [`evaluate`] with an arbitrary predictor.
pub fn evaluate_with<F>(corpus: &Corpus, split: Split, predictor: F) -> Result<Evaluation, GroundError>
where
    F: Fn(&PageSnapshot, &str) -> Result<Prediction, GroundError> + Sync,
{
    evaluate_indexed(corpus, split, |page, command| predictor(&corpus.pages[page], command))
}

fn evaluate_indexed<F>(corpus: &Corpus, split: Split, predictor: F) -> Result<Evaluation, GroundError>
where
    F: Fn(usize, &str) -> Result<Prediction, GroundError> + Sync,
{
    let examples: Vec<&CorpusExample> = corpus.split(split).collect();
    let one = |ex: &CorpusExample| -> Result<EvalRecord, GroundError> {
        let e = &ex.example;
        let (rank, top5) = match (ex.is_valid(), ex.page) {
            (true, Some(page)) => {
                let p = predictor(page, &e.command)?;
                let top5 = p.ranked.iter().take(5).map(|r| r.element_id.clone()).collect();
                (p.rank_of(&e.target_id).map(|r| r + 1), top5)
            }
            _ => (None, Vec::new()),
        };
        Ok(EvalRecord {
            index: ex.index,
            page_id: e.page_id.clone(),
            command: e.command.clone(),
            target_id: e.target_id.clone(),
            kind: e.kind,
            rank,
            correct: rank == Some(1),
            top5,
        })
    };

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(examples.len().max(1));
    let records: Vec<EvalRecord> = if workers <= 1 {
        examples.iter().map(|ex| one(ex)).collect::<Result<_, _>>()?
    } else {
        let chunk = examples.len().div_ceil(workers);
        let parts: Vec<Result<Vec<EvalRecord>, GroundError>> = std::thread::scope(|s| {
            let handles: Vec<_> = examples
                .chunks(chunk)
                .map(|part| s.spawn(|| part.iter().map(|ex| one(ex)).collect::<Result<Vec<_>, _>>()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(examples.len());
        for part in parts {
            all.extend(part?);
        }
        all
    };

    let correct = records.iter().filter(|r| r.correct).count();
    let total = records.len();
    Ok(Evaluation {
        split,
        total,
        correct,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoTexts,
    NoAttributes,
    NoSpatialContext,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoTexts, Variant::NoAttributes, Variant::NoSpatialContext];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoTexts => "no texts",
            Variant::NoAttributes => "no attributes",
            Variant::NoSpatialContext => "no spatial context",
        }
    }

    /// `base` with exactly this variant's input family removed.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            no_texts: self == Variant::NoTexts,
            no_attributes: self == Variant::NoAttributes,
            no_spatial_context: self == Variant::NoSpatialContext,
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub accuracy: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub model: ModelKind,
    pub split: Split,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Plain-text table: the model row, then indented variants, accuracy in percent.
    pub fn to_text(&self) -> String {
        let name_width = self
            .rows
            .iter()
            .map(|r| r.variant.label().len() + 2)
            .chain([self.model.as_str().len(), "model".len()])
            .max()
            .unwrap_or(0);
        let mut out = format!("{:<name_width$}  {:>8}\n", "model", format!("{} acc", self.split));
        for r in &self.rows {
            let name = match r.variant {
                Variant::Full => self.model.as_str().to_string(),
                v => format!("  {}", v.label()),
            };
            out.push_str(&format!("{name:<name_width$}  {:>8.2}\n", 100.0 * r.accuracy));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,variant,split,accuracy,best_epoch\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6},{}\n",
                self.model,
                serde_json::to_value(r.variant).expect("variant").as_str().expect("string"),
                self.split,
                r.accuracy,
                r.best_epoch
            ));
        }
        out
    }
}

/// Trains and evaluates the four input-ablation variants of a neural model.
pub fn ablation_grid(corpus: &Corpus, base: &TrainConfig, split: Split) -> Result<AblationTable, TrainError> {
    if base.model == ModelKind::Retrieval {
        return Err(TrainError::Config("the ablation grid needs a neural model".into()));
    }
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let outcome = train(corpus, &variant.apply(base))?;
        let eval = evaluate(corpus, split, &outcome.grounder)?;
        rows.push(AblationRow {
            variant,
            accuracy: eval.accuracy,
            best_epoch: outcome.best_epoch,
        });
    }
    Ok(AblationTable {
        model: base.model,
        split,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub pages: usize,
    pub commands: usize,
    pub mean_elements: f64,
    pub mean_command_tokens: f64,
    /// Mean number of leaf elements whose own text shares a non-stop-word
    /// stem with the command.
    pub mean_overlapping_leaves: f64,
}

fn content_stems(text: &str) -> BTreeSet<Token> {
    tokenize_natural(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .map(|t| stem(&t))
        .collect()
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    let element_sum: usize = corpus.pages.iter().map(PageSnapshot::len).sum();
    let token_sum: usize = corpus
        .examples
        .iter()
        .map(|e| tokenize_natural(&e.example.command).len())
        .sum();

    let leaf_stems: Vec<Vec<BTreeSet<Token>>> = corpus
        .pages
        .iter()
        .map(|p| p.elements.iter().filter(|e| e.is_leaf).map(|e| content_stems(&e.text)).collect())
        .collect();
    let mut overlap_sum = 0usize;
    let mut with_page = 0usize;
    for ex in &corpus.examples {
        let Some(page) = ex.page else { continue };
        let command = content_stems(&ex.example.command);
        overlap_sum += leaf_stems[page].iter().filter(|s| !s.is_disjoint(&command)).count();
        with_page += 1;
    }

    CorpusStats {
        pages: corpus.pages.len(),
        commands: corpus.examples.len(),
        mean_elements: mean(element_sum as f64, corpus.pages.len()),
        mean_command_tokens: mean(token_sum as f64, corpus.examples.len()),
        mean_overlapping_leaves: mean(overlap_sum as f64, with_page),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_trace() {
        let mut s = EarlyStopping::new(2);
        let got: Vec<Progress> = [0.5, 0.6, 0.6, 0.6]
            .iter()
            .enumerate()
            .map(|(i, &a)| s.observe(i + 1, a))
            .collect();
        assert_eq!(got, [Progress::Improved, Progress::Improved, Progress::Waiting(1), Progress::Stop]);
        assert_eq!(s.best(), Some((2, 0.6)));
    }

    #[test]
    fn config_rules() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(TrainError::Config(_))));
        let c = TrainConfig {
            model: ModelKind::Retrieval,
            no_texts: true,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"model":"alignment","no_spatial_context":true}"#).unwrap();
        assert_eq!(parsed.lr, 1e-3);
        assert_eq!(parsed.batch_size, 32);
        assert!(!parsed.alignment_config().use_spatial_context);
    }
}

//! End-to-end orchestration: ingest captions → triplet extraction →
//! lexicon alignment → None-filter → per-pair predicate selection →
//! dataset emission.
//!
//! Extraction and alignment are concurrent up to the configured worker
//! count; filtering and selection are deterministic sequential folds, so a
//! run's outputs are byte-stable for a fixed configuration and cache.
//! Chain-1 results and alignment tables can be checkpointed so Chain-2 can
//! resume without re-running extraction.

use std::collections::{HashMap, HashSet};
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align_triplets, AlignError, AlignLane, AlignStats, AlignmentTable};
use crate::baseline::{kb_align, rule_parse, BaselineError, SynonymKB};
use crate::config::{BackendChoice, ResolvedConfig};
use crate::corpus::{Corpus, CorpusError};
use crate::llm::{estimate_cost, CompletionClient, CostBreakdown, CostModel, LlmError, StepTokens};
use crate::parse::parse_triplets;
use crate::prompt::{
    default_combined_template, render_extraction_prompt, PromptError, PromptTemplate, TemplateSet,
};
use crate::stats::display_density;
use crate::types::{
    AlignedTriplet, CaptionRecord, GenerationMetadata, Lexicon, RawTriplet, TripletDataset,
    TripletSource, TypeError,
};

pub const STEP_EXTRACT_ORIGINAL: &str = "extract_original";
pub const STEP_EXTRACT_PARAPHRASE: &str = "extract_paraphrase";
pub const STEP_EXTRACT_COMBINED: &str = "extract_combined";
pub const STEP_ALIGN_ENTITY: &str = "align_entity";
pub const STEP_ALIGN_PREDICATE: &str = "align_predicate";

const CHAIN1_CHECKPOINT: &str = "chain1.json";
const ENTITY_TABLE: &str = "entity_table.jsonl";
const PREDICATE_TABLE: &str = "predicate_table.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Types(#[from] TypeError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// True when the failure means the completion backend cannot serve the
    /// run (as opposed to bad configuration).
    pub fn is_backend_failure(&self) -> bool {
        match self {
            PipelineError::Llm(e) => e.is_backend_failure(),
            PipelineError::Align(AlignError::Llm(e)) => e.is_backend_failure(),
            _ => false,
        }
    }
}

/// Chain-1 output: raw triplets plus extraction accounting. Serializable so
/// it doubles as the stage checkpoint.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub triplets: Vec<RawTriplet>,
    pub malformed_spans: usize,
    pub skipped_captions: usize,
    pub steps: Vec<StepTokens>,
}

/// Runs the extraction prompts over every caption: always the original
/// prompt, plus the paraphrase prompt when `use_paraphrase` is set. Output
/// preserves corpus order (original-chain triplets before paraphrase-chain
/// triplets per caption). Per-caption render failures are logged and
/// skipped; backend failures abort the run.
pub fn extract_all(
    corpus: &[CaptionRecord],
    client: &CompletionClient,
    templates: &TemplateSet,
    use_paraphrase: bool,
    workers: usize,
) -> Result<ExtractionResult, PipelineError> {
    struct PerCaption {
        triplets: Vec<RawTriplet>,
        malformed: usize,
        skipped: bool,
        original_tokens: (u64, u64),
        paraphrase_tokens: (u64, u64),
    }

    let results: Vec<Mutex<Option<PerCaption>>> =
        (0..corpus.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<PipelineError>> = Mutex::new(None);
    let workers = workers.max(1).min(corpus.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= corpus.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                let caption = &corpus[i];
                let mut cell = PerCaption {
                    triplets: Vec::new(),
                    malformed: 0,
                    skipped: false,
                    original_tokens: (0, 0),
                    paraphrase_tokens: (0, 0),
                };
                let mut chains = vec![(&templates.extract_original, TripletSource::LlmOriginal)];
                if use_paraphrase {
                    chains.push((&templates.extract_paraphrase, TripletSource::LlmParaphrased));
                }
                for (template, source) in chains {
                    let prompt = match render_extraction_prompt(template, caption) {
                        Ok(p) => p,
                        Err(e) => {
                            log::warn!(
                                "skipping caption ({}, {}): {e}",
                                caption.image_id,
                                caption.caption_id
                            );
                            cell.skipped = true;
                            break;
                        }
                    };
                    let outcome = match client.complete(&prompt) {
                        Ok(o) => o,
                        Err(e) => {
                            failure.lock().unwrap().get_or_insert(PipelineError::Llm(e));
                            return;
                        }
                    };
                    let tokens = (outcome.record.input_tokens, outcome.record.output_tokens);
                    match source {
                        TripletSource::LlmOriginal => cell.original_tokens = tokens,
                        _ => cell.paraphrase_tokens = tokens,
                    }
                    let parsed = parse_triplets(&outcome.record.response, caption, source);
                    cell.malformed += parsed.malformed;
                    cell.triplets.extend(parsed.triplets);
                }
                *results[i].lock().unwrap() = Some(cell);
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }

    let mut out = ExtractionResult::default();
    let mut original = StepTokens::new(STEP_EXTRACT_ORIGINAL);
    let mut paraphrase = StepTokens::new(STEP_EXTRACT_PARAPHRASE);
    for cell in results {
        let Some(cell) = cell.into_inner().unwrap() else {
            continue;
        };
        out.triplets.extend(cell.triplets);
        out.malformed_spans += cell.malformed;
        if cell.skipped {
            out.skipped_captions += 1;
        }
        original.input_tokens += cell.original_tokens.0;
        original.output_tokens += cell.original_tokens.1;
        paraphrase.input_tokens += cell.paraphrase_tokens.0;
        paraphrase.output_tokens += cell.paraphrase_tokens.1;
    }
    out.steps.push(original);
    if use_paraphrase {
        out.steps.push(paraphrase);
    }
    Ok(out)
}

/// Single-prompt variant: one combined request per caption whose final
/// triplet list is already phrased in lexicon classes. Components resolve
/// by exact lexicon match afterwards.
pub fn extract_all_combined(
    corpus: &[CaptionRecord],
    client: &CompletionClient,
    combined: &PromptTemplate,
    workers: usize,
) -> Result<ExtractionResult, PipelineError> {
    struct PerCaption {
        triplets: Vec<RawTriplet>,
        malformed: usize,
        skipped: bool,
        tokens: (u64, u64),
    }
    let results: Vec<Mutex<Option<PerCaption>>> =
        (0..corpus.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<PipelineError>> = Mutex::new(None);
    let workers = workers.max(1).min(corpus.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= corpus.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                let caption = &corpus[i];
                let prompt = match render_extraction_prompt(combined, caption) {
                    Ok(p) => p,
                    Err(e) => {
                        log::warn!(
                            "skipping caption ({}, {}): {e}",
                            caption.image_id,
                            caption.caption_id
                        );
                        *results[i].lock().unwrap() = Some(PerCaption {
                            triplets: Vec::new(),
                            malformed: 0,
                            skipped: true,
                            tokens: (0, 0),
                        });
                        continue;
                    }
                };
                let outcome = match client.complete(&prompt) {
                    Ok(o) => o,
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(PipelineError::Llm(e));
                        return;
                    }
                };
                let parsed = parse_triplets(
                    &outcome.record.response,
                    caption,
                    TripletSource::LlmParaphrased,
                );
                *results[i].lock().unwrap() = Some(PerCaption {
                    triplets: parsed.triplets,
                    malformed: parsed.malformed,
                    skipped: false,
                    tokens: (outcome.record.input_tokens, outcome.record.output_tokens),
                });
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }

    let mut out = ExtractionResult::default();
    let mut step = StepTokens::new(STEP_EXTRACT_COMBINED);
    for cell in results {
        let Some(cell) = cell.into_inner().unwrap() else {
            continue;
        };
        out.triplets.extend(cell.triplets);
        out.malformed_spans += cell.malformed;
        if cell.skipped {
            out.skipped_captions += 1;
        }
        step.input_tokens += cell.tokens.0;
        step.output_tokens += cell.tokens.1;
    }
    out.steps.push(step);
    Ok(out)
}

/// Discard accounting for the None-filter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardReport {
    pub input: usize,
    pub kept: usize,
    pub discarded: usize,
    pub subject_none: usize,
    pub predicate_none: usize,
    pub object_none: usize,
}

/// Keeps exactly the triplets with all three indices present. A triplet
/// with several `None` components counts once per missing component.
pub fn filter_none(triplets: Vec<AlignedTriplet>) -> (Vec<AlignedTriplet>, DiscardReport) {
    let mut report = DiscardReport {
        input: triplets.len(),
        ..DiscardReport::default()
    };
    let mut kept = Vec::with_capacity(triplets.len());
    for t in triplets {
        if t.is_fully_aligned() {
            kept.push(t);
        } else {
            report.discarded += 1;
            if t.subject_class.is_none() {
                report.subject_none += 1;
            }
            if t.predicate_class.is_none() {
                report.predicate_none += 1;
            }
            if t.object_class.is_none() {
                report.object_none += 1;
            }
        }
    }
    report.kept = kept.len();
    (kept, report)
}

/// Selection accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub input: usize,
    pub kept: usize,
    pub duplicates_dropped: usize,
    pub self_loops_dropped: usize,
    pub groups_collapsed: usize,
}

/// Keeps, per (image, subject class, object class) pair, the triplet whose
/// predicate is rarest over the whole input — the most fine-grained one.
///
/// Two passes: per-image exact duplicates and self-loops are dropped first,
/// then global predicate frequencies are computed over what remains, and
/// finally each group keeps the minimum-frequency predicate (ties break by
/// lexicographic class name, then first occurrence). Output preserves the
/// input order of the winners. All triplets must be fully aligned.
pub fn select_predicates(
    triplets: Vec<AlignedTriplet>,
    predicates: &Lexicon,
) -> (Vec<AlignedTriplet>, SelectionReport) {
    let mut report = SelectionReport {
        input: triplets.len(),
        ..SelectionReport::default()
    };

    let mut deduped: Vec<AlignedTriplet> = Vec::with_capacity(triplets.len());
    let mut seen: HashSet<(String, usize, usize, usize)> = HashSet::new();
    for t in triplets {
        debug_assert!(t.is_fully_aligned());
        let (s, p, o) = (
            t.subject_class.unwrap_or(0),
            t.predicate_class.unwrap_or(0),
            t.object_class.unwrap_or(0),
        );
        if s == o && t.raw.subject == t.raw.object {
            report.self_loops_dropped += 1;
            continue;
        }
        if !seen.insert((t.raw.image_id.clone(), s, p, o)) {
            report.duplicates_dropped += 1;
            continue;
        }
        deduped.push(t);
    }

    let mut frequency: HashMap<usize, u64> = HashMap::new();
    for t in &deduped {
        *frequency.entry(t.predicate_class.unwrap_or(0)).or_insert(0) += 1;
    }

    // winner per (image, subject class, object class), judged by
    // (global frequency, class name, position).
    let mut winners: HashMap<(String, usize, usize), usize> = HashMap::new();
    for (pos, t) in deduped.iter().enumerate() {
        let key = (
            t.raw.image_id.clone(),
            t.subject_class.unwrap_or(0),
            t.object_class.unwrap_or(0),
        );
        match winners.entry(key) {
            std::collections::hash_map::Entry::Vacant(v) => {
                v.insert(pos);
            }
            std::collections::hash_map::Entry::Occupied(mut o) => {
                let cur = &deduped[*o.get()];
                let challenger_rank = predicate_rank(t, &frequency, predicates);
                let incumbent_rank = predicate_rank(cur, &frequency, predicates);
                if challenger_rank < incumbent_rank {
                    o.insert(pos);
                }
            }
        }
    }

    let winner_set: HashSet<usize> = winners.into_values().collect();
    report.groups_collapsed = deduped
        .iter()
        .map(|t| {
            (
                t.raw.image_id.clone(),
                t.subject_class.unwrap_or(0),
                t.object_class.unwrap_or(0),
            )
        })
        .fold(HashMap::<_, usize>::new(), |mut acc, k| {
            *acc.entry(k).or_insert(0) += 1;
            acc
        })
        .values()
        .filter(|&&n| n > 1)
        .count();

    let kept: Vec<AlignedTriplet> = deduped
        .into_iter()
        .enumerate()
        .filter(|(pos, _)| winner_set.contains(pos))
        .map(|(_, t)| t)
        .collect();
    report.kept = kept.len();
    (kept, report)
}

fn predicate_rank<'a>(
    t: &'a AlignedTriplet,
    frequency: &HashMap<usize, u64>,
    predicates: &'a Lexicon,
) -> (u64, &'a str) {
    let class = t.predicate_class.unwrap_or(0);
    (
        frequency.get(&class).copied().unwrap_or(0),
        predicates.class(class).unwrap_or(""),
    )
}

/// One output row of the dataset JSONL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRow {
    pub image_id: String,
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub subject_idx: usize,
    pub predicate_idx: usize,
    pub object_idx: usize,
    pub source: TripletSource,
}

pub fn dataset_rows(
    dataset: &TripletDataset,
    entities: &Lexicon,
    predicates: &Lexicon,
) -> Vec<DatasetRow> {
    dataset
        .triplets
        .iter()
        .map(|t| {
            let s = t.subject_class.unwrap_or(0);
            let p = t.predicate_class.unwrap_or(0);
            let o = t.object_class.unwrap_or(0);
            DatasetRow {
                image_id: t.raw.image_id.clone(),
                subject: entities.class(s).unwrap_or_default().to_string(),
                predicate: predicates.class(p).unwrap_or_default().to_string(),
                object: entities.class(o).unwrap_or_default().to_string(),
                subject_idx: s,
                predicate_idx: p,
                object_idx: o,
                source: t.raw.source,
            }
        })
        .collect()
}

pub fn write_dataset_jsonl(rows: &[DatasetRow], path: &Path) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| PipelineError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        }
    }
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("dataset row serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_dataset_jsonl(path: &Path) -> Result<Vec<DatasetRow>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: DatasetRow = serde_json::from_str(line).map_err(|e| {
            PipelineError::Config(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Stage-by-stage accounting for one run. Everything in here is a pure
/// function of (configuration, completion responses), so reports are
/// byte-reproducible across cache-warm re-runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub metadata: GenerationMetadata,
    pub captions: usize,
    pub images: usize,
    pub extraction: ExtractionCounts,
    pub alignment: AlignStats,
    pub filter: DiscardReport,
    pub selection: SelectionReport,
    pub dataset: DatasetCounts,
    pub tokens: Vec<StepTokens>,
    pub cost: CostBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionCounts {
    pub total: usize,
    pub llm_original: usize,
    pub llm_paraphrased: usize,
    pub baseline_parser: usize,
    pub malformed_spans: usize,
    pub skipped_captions: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub triplets: usize,
    pub images_with_triplets: usize,
    pub density: f64,
    pub density_display: f64,
}

impl RunReport {
    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Everything `run` produces.
#[derive(Debug)]
pub struct RunOutcome {
    pub dataset: TripletDataset,
    pub report: RunReport,
    pub rows: Vec<DatasetRow>,
}

/// Executes the full pipeline for a resolved configuration. Configuration
/// errors surface before any backend call.
pub fn run(config: &ResolvedConfig) -> Result<RunOutcome, PipelineError> {
    let corpus = Corpus::from_path(&config.corpus)?;
    let entities = Lexicon::from_path(&config.entity_lexicon, crate::types::LexiconKind::Entity)?;
    let predicates = Lexicon::from_path(
        &config.predicate_lexicon,
        crate::types::LexiconKind::Predicate,
    )?;
    if entities.kind() != crate::types::LexiconKind::Entity {
        return Err(PipelineError::Config(
            "entity lexicon has predicate kind".into(),
        ));
    }
    if predicates.kind() != crate::types::LexiconKind::Predicate {
        return Err(PipelineError::Config(
            "predicate lexicon has entity kind".into(),
        ));
    }
    let templates = config.load_templates()?;

    let metadata = GenerationMetadata {
        backend: config.namespace(),
        model: config.model.clone(),
        entity_lexicon: entities.name().to_string(),
        predicate_lexicon: predicates.name().to_string(),
        use_paraphrase: config.use_paraphrase,
        combined_prompt: config.combined,
    };

    // Fresh (non-resume) runs must not inherit stale checkpoints.
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        if !config.resume {
            for file in [CHAIN1_CHECKPOINT, ENTITY_TABLE, PREDICATE_TABLE] {
                let path = dir.join(file);
                if path.exists() {
                    std::fs::remove_file(&path).map_err(|e| PipelineError::Io {
                        path: path.display().to_string(),
                        source: e,
                    })?;
                }
            }
        }
    }

    if corpus.captions.is_empty() {
        let dataset = TripletDataset {
            triplets: Vec::new(),
            image_count: corpus.image_count,
            metadata: metadata.clone(),
        };
        let report = assemble_report(
            &config.cost_model(),
            metadata,
            &corpus,
            ExtractionResult::default(),
            AlignStats::default(),
            DiscardReport::default(),
            SelectionReport::default(),
            &dataset,
        );
        let rows = dataset_rows(&dataset, &entities, &predicates);
        emit(config, &rows, &report)?;
        return Ok(RunOutcome {
            dataset,
            report,
            rows,
        });
    }

    let (extraction, align_stats, aligned) = if config.backend == BackendChoice::Baseline {
        run_baseline(config, &corpus, &entities, &predicates)?
    } else {
        run_llm(config, &corpus, &entities, &predicates, &templates)?
    };

    let (kept, filter_report) = filter_none(aligned);
    let (selected, selection_report) = select_predicates(kept, &predicates);

    let dataset = TripletDataset {
        triplets: selected,
        image_count: corpus.image_count,
        metadata: metadata.clone(),
    };
    let report = assemble_report(
        &config.cost_model(),
        metadata,
        &corpus,
        extraction,
        align_stats,
        filter_report,
        selection_report,
        &dataset,
    );
    let rows = dataset_rows(&dataset, &entities, &predicates);
    emit(config, &rows, &report)?;
    Ok(RunOutcome {
        dataset,
        report,
        rows,
    })
}

fn run_llm(
    config: &ResolvedConfig,
    corpus: &Corpus,
    entities: &Lexicon,
    predicates: &Lexicon,
    templates: &TemplateSet,
) -> Result<(ExtractionResult, AlignStats, Vec<AlignedTriplet>), PipelineError> {
    let client = config.build_client()?;

    let checkpoint_path = config
        .checkpoint_dir
        .as_ref()
        .map(|d| d.join(CHAIN1_CHECKPOINT));
    let extraction = match &checkpoint_path {
        Some(path) if config.resume && path.exists() => {
            let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            serde_json::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("bad chain-1 checkpoint: {e}")))?
        }
        _ => {
            let extraction = if config.combined {
                let combined = default_combined_template(entities, predicates)?
                    .with_max_tokens(config.max_prompt_tokens);
                extract_all_combined(&corpus.captions, &client, &combined, config.concurrency)?
            } else {
                extract_all(
                    &corpus.captions,
                    &client,
                    templates,
                    config.use_paraphrase,
                    config.concurrency,
                )?
            };
            if let Some(path) = &checkpoint_path {
                let json = serde_json::to_string(&extraction).expect("checkpoint serializes");
                std::fs::write(path, json).map_err(|e| PipelineError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
            }
            extraction
        }
    };

    let (entity_table, predicate_table) = match &config.checkpoint_dir {
        Some(dir) => (
            AlignmentTable::open(entities.name(), &dir.join(ENTITY_TABLE))?,
            AlignmentTable::open(predicates.name(), &dir.join(PREDICATE_TABLE))?,
        ),
        None => (
            AlignmentTable::new(entities.name()),
            AlignmentTable::new(predicates.name()),
        ),
    };

    let (aligned, mut align_stats, align_steps) = if config.combined {
        // Components are already lexicon classes; resolve by exact match.
        let aligned: Vec<AlignedTriplet> = extraction
            .triplets
            .iter()
            .map(|t| AlignedTriplet {
                subject_class: entities.index_of(&t.subject),
                predicate_class: predicates.index_of(&t.predicate),
                object_class: entities.index_of(&t.object),
                raw: t.clone(),
            })
            .collect();
        (aligned, AlignStats::default(), Vec::new())
    } else {
        let entity_tokens = Mutex::new(StepTokens::new(STEP_ALIGN_ENTITY));
        let predicate_tokens = Mutex::new(StepTokens::new(STEP_ALIGN_PREDICATE));
        let (aligned, stats) = align_triplets(
            &extraction.triplets,
            &AlignLane {
                lexicon: entities,
                template: &templates.align_entity,
                table: &entity_table,
                tokens: Some(&entity_tokens),
            },
            &AlignLane {
                lexicon: predicates,
                template: &templates.align_predicate,
                table: &predicate_table,
                tokens: Some(&predicate_tokens),
            },
            &client,
            config.concurrency,
        )?;
        (
            aligned,
            stats,
            vec![
                entity_tokens.into_inner().unwrap(),
                predicate_tokens.into_inner().unwrap(),
            ],
        )
    };

    let mut extraction = extraction;
    extraction.steps.extend(align_steps);
    align_stats.entity_none = aligned
        .iter()
        .flat_map(|t| [t.subject_class, t.object_class])
        .filter(Option::is_none)
        .count();
    align_stats.predicate_none = aligned
        .iter()
        .filter(|t| t.predicate_class.is_none())
        .count();
    Ok((extraction, align_stats, aligned))
}

fn run_baseline(
    config: &ResolvedConfig,
    corpus: &Corpus,
    entities: &Lexicon,
    predicates: &Lexicon,
) -> Result<(ExtractionResult, AlignStats, Vec<AlignedTriplet>), PipelineError> {
    let kb = match &config.kb {
        Some(path) => SynonymKB::from_file(path)?,
        None => SynonymKB::default(),
    };
    let mut extraction = ExtractionResult::default();
    for caption in &corpus.captions {
        extraction.triplets.extend(rule_parse(caption));
    }

    let mut distinct_e: HashSet<&str> = HashSet::new();
    let mut distinct_p: HashSet<&str> = HashSet::new();
    let aligned: Vec<AlignedTriplet> = extraction
        .triplets
        .iter()
        .map(|t| {
            distinct_e.insert(&t.subject);
            distinct_e.insert(&t.object);
            distinct_p.insert(&t.predicate);
            AlignedTriplet {
                subject_class: kb_align(&t.subject, entities, &kb),
                predicate_class: kb_align(&t.predicate, predicates, &kb),
                object_class: kb_align(&t.object, entities, &kb),
                raw: t.clone(),
            }
        })
        .collect();

    let mut stats = AlignStats {
        distinct_entity_lexemes: distinct_e.len(),
        distinct_predicate_lexemes: distinct_p.len(),
        ..AlignStats::default()
    };
    stats.entity_none = aligned
        .iter()
        .flat_map(|t| [t.subject_class, t.object_class])
        .filter(Option::is_none)
        .count();
    stats.predicate_none = aligned
        .iter()
        .filter(|t| t.predicate_class.is_none())
        .count();
    Ok((extraction, stats, aligned))
}

#[allow(clippy::too_many_arguments)]
fn assemble_report(
    cost_model: &CostModel,
    metadata: GenerationMetadata,
    corpus: &Corpus,
    extraction: ExtractionResult,
    alignment: AlignStats,
    filter: DiscardReport,
    selection: SelectionReport,
    dataset: &TripletDataset,
) -> RunReport {
    let mut counts = ExtractionCounts {
        total: extraction.triplets.len(),
        malformed_spans: extraction.malformed_spans,
        skipped_captions: extraction.skipped_captions,
        ..ExtractionCounts::default()
    };
    for t in &extraction.triplets {
        match t.source {
            TripletSource::LlmOriginal => counts.llm_original += 1,
            TripletSource::LlmParaphrased => counts.llm_paraphrased += 1,
            TripletSource::BaselineParser => counts.baseline_parser += 1,
        }
    }
    let density = if dataset.image_count == 0 {
        0.0
    } else {
        dataset.triplets.len() as f64 / dataset.image_count as f64
    };
    let cost = estimate_cost(&extraction.steps, cost_model);
    RunReport {
        metadata,
        captions: corpus.captions.len(),
        images: corpus.image_count,
        extraction: counts,
        alignment,
        filter,
        selection,
        dataset: DatasetCounts {
            triplets: dataset.triplets.len(),
            images_with_triplets: dataset.distinct_triplet_images(),
            density,
            density_display: display_density(density),
        },
        tokens: extraction.steps,
        cost,
    }
}

fn emit(
    config: &ResolvedConfig,
    rows: &[DatasetRow],
    report: &RunReport,
) -> Result<(), PipelineError> {
    write_dataset_jsonl(rows, &config.out)?;
    let report_json = report.to_pretty_json();
    if let Some(parent) = config.report.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).ok();
        }
    }
    let mut file = std::fs::File::create(&config.report).map_err(|e| PipelineError::Io {
        path: config.report.display().to_string(),
        source: e,
    })?;
    file.write_all(report_json.as_bytes())
        .map_err(|e| PipelineError::Io {
            path: config.report.display().to_string(),
            source: e,
        })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CompletionCache, MockBackend};
    use crate::types::LexiconKind;
    use std::sync::Arc;

    fn vg_predicates() -> Lexicon {
        Lexicon::from_text(
            LexiconKind::Predicate,
            "vg_predicates",
            include_str!("../fixtures/vg_predicates.txt"),
        )
        .unwrap()
    }

    fn aligned(
        image: &str,
        s: usize,
        p: usize,
        o: usize,
        raw_s: &str,
        raw_o: &str,
    ) -> AlignedTriplet {
        AlignedTriplet {
            subject_class: Some(s),
            predicate_class: Some(p),
            object_class: Some(o),
            raw: RawTriplet {
                subject: raw_s.into(),
                predicate: "p".into(),
                object: raw_o.into(),
                source: TripletSource::LlmOriginal,
                image_id: image.into(),
                caption_id: format!("{image}-c"),
            },
        }
    }

    fn partial(s: Option<usize>, p: Option<usize>, o: Option<usize>) -> AlignedTriplet {
        AlignedTriplet {
            subject_class: s,
            predicate_class: p,
            object_class: o,
            raw: RawTriplet {
                subject: "s".into(),
                predicate: "p".into(),
                object: "o".into(),
                source: TripletSource::LlmOriginal,
                image_id: "img".into(),
                caption_id: "c".into(),
            },
        }
    }

    #[test]
    fn filter_keeps_only_fully_aligned() {
        let (kept, report) = filter_none(vec![
            partial(None, Some(31), Some(126)),
            partial(Some(1), Some(2), Some(3)),
            partial(Some(1), None, None),
        ]);
        assert_eq!(kept.len(), 1);
        assert_eq!(report.input, 3);
        assert_eq!(report.kept, 1);
        assert_eq!(report.discarded, 2);
        assert_eq!(report.subject_none, 1);
        assert_eq!(report.predicate_none, 1);
        assert_eq!(report.object_none, 1);
    }

    #[test]
    fn filter_empty_is_empty_with_zero_counts() {
        let (kept, report) = filter_none(Vec::new());
        assert!(kept.is_empty());
        assert_eq!(report, DiscardReport::default());
    }

    #[test]
    fn selection_prefers_rarest_predicate() {
        let preds = vg_predicates();
        // Global frequencies: on=3, walking on=1.
        let triplets = vec![
            aligned("img1", 78, 31, 7, "man", "beach"),
            aligned("img1", 78, 46, 7, "man", "beach"),
            aligned("img2", 78, 31, 124, "man", "street"),
            aligned("img3", 64, 31, 124, "horse", "street"),
        ];
        let (kept, report) = select_predicates(triplets, &preds);
        assert_eq!(report.groups_collapsed, 1);
        let img1: Vec<_> = kept.iter().filter(|t| t.raw.image_id == "img1").collect();
        assert_eq!(img1.len(), 1);
        assert_eq!(img1[0].predicate_class, Some(46));
        assert_eq!(kept.len(), 3);
    }

    #[test]
    fn selection_breaks_frequency_ties_lexicographically() {
        let preds = vg_predicates();
        // covered in (12) and covering (13) both occur twice overall.
        let triplets = vec![
            aligned("img1", 1, 12, 2, "a", "b"),
            aligned("img1", 1, 13, 2, "a", "b"),
            aligned("img2", 3, 13, 4, "c", "d"),
            aligned("img2", 3, 12, 4, "c", "d"),
        ];
        let (kept, _) = select_predicates(triplets, &preds);
        assert_eq!(kept.len(), 2);
        for t in kept {
            assert_eq!(t.predicate_class, Some(12), "covered in beats covering");
        }
    }

    #[test]
    fn selection_passes_singletons_through() {
        let preds = vg_predicates();
        let triplets = vec![aligned("img1", 1, 31, 2, "a", "b")];
        let (kept, report) = select_predicates(triplets.clone(), &preds);
        assert_eq!(kept, triplets);
        assert_eq!(report.groups_collapsed, 0);
    }

    #[test]
    fn selection_drops_duplicates_and_self_loops() {
        let preds = vg_predicates();
        let triplets = vec![
            aligned("img1", 78, 31, 7, "man", "beach"),
            aligned("img1", 78, 31, 7, "man", "beach"),
            aligned("img1", 78, 29, 78, "man", "man"),
            // Same classes, different raw lexemes: genuine relation, kept.
            aligned("img1", 78, 29, 78, "man", "guy"),
        ];
        let (kept, report) = select_predicates(triplets, &preds);
        assert_eq!(report.duplicates_dropped, 1);
        assert_eq!(report.self_loops_dropped, 1);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn extract_all_concatenates_both_chains() {
        let templates = crate::prompt::TemplateSet::bundled();
        let backend = MockBackend::from_pairs(&[
            (
                "represented without the tense",
                "Meaningful triplets are <dog, sitting on, mat>, and <dog, near, door>.",
            ),
            (
                "Step 1: Paraphrase the sentence.",
                "Step 1: ... Step 2: ... The meaningful triplets are <dog, lying on, mat>, <dog, looking at, door>, and <mat, on, floor>.",
            ),
        ]);
        let client = CompletionClient::new(
            Arc::new(backend),
            CompletionCache::in_memory(),
            "test-model",
        );
        let corpus = vec![CaptionRecord::new("i", "c", "a dog on a mat").unwrap()];
        let result = extract_all(&corpus, &client, &templates, true, 2).unwrap();
        assert_eq!(result.triplets.len(), 5);
        assert_eq!(
            result
                .triplets
                .iter()
                .filter(|t| t.source == TripletSource::LlmOriginal)
                .count(),
            2
        );
        assert_eq!(
            result
                .triplets
                .iter()
                .filter(|t| t.source == TripletSource::LlmParaphrased)
                .count(),
            3
        );
        assert_eq!(result.steps.len(), 2);
        assert!(result.steps[0].input_tokens > 0);
    }

    #[test]
    fn extract_all_without_paraphrase_only_runs_original() {
        let templates = crate::prompt::TemplateSet::bundled();
        let backend = MockBackend::from_pairs(&[(
            "represented without the tense",
            "Meaningful triplets are <dog, sitting on, mat>.",
        )]);
        let client = CompletionClient::new(
            Arc::new(backend),
            CompletionCache::in_memory(),
            "test-model",
        );
        let corpus = vec![CaptionRecord::new("i", "c", "a dog on a mat").unwrap()];
        let result = extract_all(&corpus, &client, &templates, false, 2).unwrap();
        assert!(result
            .triplets
            .iter()
            .all(|t| t.source == TripletSource::LlmOriginal));
        assert_eq!(result.steps.len(), 1);
        assert_eq!(client.backend_calls(), 1);
    }

    #[test]
    fn extract_all_aborts_on_backend_failure() {
        let templates = crate::prompt::TemplateSet::bundled();
        let client = CompletionClient::new(
            Arc::new(MockBackend::from_pairs(&[])),
            CompletionCache::in_memory(),
            "test-model",
        );
        let corpus = vec![CaptionRecord::new("i", "c", "a dog").unwrap()];
        let err = extract_all(&corpus, &client, &templates, false, 1).unwrap_err();
        assert!(err.is_backend_failure());
    }
}

//! Chain-2 orchestration: aligning raw lexemes to a target lexicon.
//!
//! Alignment is a pure lexeme → class function, so results are memoized per
//! distinct lexeme in an [`AlignmentTable`]. Exact lexicon members
//! self-align without a backend call. Lexicons too large for one prompt go
//! through [`align_hierarchical`], which partitions the lexicon into
//! sub-groups, collects per-group candidates, and asks once more over the
//! candidate union.

use std::collections::HashMap;
use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{CompletionClient, LlmError, StepTokens};
use crate::parse::parse_alignment;
use crate::prompt::{render_alignment_prompt, PromptError, PromptTemplate};
use crate::types::{AlignedTriplet, Lexicon, LexiconKind, RawTriplet};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("alignment table {path}: {reason}")]
    Table { path: String, reason: String },
    #[error("group size must be at least 1")]
    BadGroupSize,
}

/// How a table entry was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignProvenance {
    Llm,
    KbBaseline,
    ExactMatch,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableEntry {
    pub index: Option<usize>,
    pub provenance: AlignProvenance,
}

#[derive(Serialize, Deserialize)]
struct TableRow<'a> {
    lexeme: &'a str,
    index: Option<usize>,
    provenance: AlignProvenance,
}

struct TableInner {
    entries: HashMap<String, TableEntry>,
    in_flight: HashSet<String>,
    appender: Option<std::fs::File>,
}

/// Memoized lexeme → class alignments for one lexicon. Entries are written
/// once per run; concurrent requests for one lexeme coalesce so the backend
/// is invoked at most once per distinct lexeme.
pub struct AlignmentTable {
    lexicon_id: String,
    inner: Mutex<TableInner>,
    cv: Condvar,
    unparseable: AtomicU64,
}

impl AlignmentTable {
    pub fn new(lexicon_id: impl Into<String>) -> Self {
        Self {
            lexicon_id: lexicon_id.into(),
            inner: Mutex::new(TableInner {
                entries: HashMap::new(),
                in_flight: HashSet::new(),
                appender: None,
            }),
            cv: Condvar::new(),
            unparseable: AtomicU64::new(0),
        }
    }

    /// Opens a JSONL-persisted table, seeding entries from previous runs.
    pub fn open(lexicon_id: impl Into<String>, path: &Path) -> Result<Self, AlignError> {
        let table = Self::new(lexicon_id);
        {
            let mut inner = table.inner.lock().unwrap();
            if path.exists() {
                let file = std::fs::File::open(path).map_err(|e| AlignError::Table {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                for (lineno, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(|e| AlignError::Table {
                        path: path.display().to_string(),
                        reason: e.to_string(),
                    })?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    #[derive(Deserialize)]
                    struct OwnedRow {
                        lexeme: String,
                        index: Option<usize>,
                        provenance: AlignProvenance,
                    }
                    let row: OwnedRow =
                        serde_json::from_str(&line).map_err(|e| AlignError::Table {
                            path: path.display().to_string(),
                            reason: format!("line {}: {e}", lineno + 1),
                        })?;
                    inner.entries.insert(
                        row.lexeme,
                        TableEntry {
                            index: row.index,
                            provenance: row.provenance,
                        },
                    );
                }
            } else if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| AlignError::Table {
                        path: path.display().to_string(),
                        reason: e.to_string(),
                    })?;
                }
            }
            let appender = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| AlignError::Table {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
            inner.appender = Some(appender);
        }
        Ok(table)
    }

    pub fn lexicon_id(&self) -> &str {
        &self.lexicon_id
    }

    pub fn get(&self, lexeme: &str) -> Option<TableEntry> {
        self.inner.lock().unwrap().entries.get(lexeme).copied()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Count of answers that could not be resolved to an index or a `None`.
    pub fn unparseable(&self) -> u64 {
        self.unparseable.load(Ordering::SeqCst)
    }

    pub fn insert(&self, lexeme: &str, entry: TableEntry) {
        let mut inner = self.inner.lock().unwrap();
        if inner.entries.contains_key(lexeme) {
            return;
        }
        Self::append_row(&mut inner, lexeme, &entry);
        inner.entries.insert(lexeme.to_string(), entry);
    }

    fn append_row(inner: &mut TableInner, lexeme: &str, entry: &TableEntry) {
        if let Some(file) = inner.appender.as_mut() {
            let row = TableRow {
                lexeme,
                index: entry.index,
                provenance: entry.provenance,
            };
            if let Ok(line) = serde_json::to_string(&row) {
                let _ = writeln!(file, "{line}");
                let _ = file.flush();
            }
        }
    }

    /// Memoized computation with coalescing: the closure runs at most once
    /// per lexeme even under concurrent callers.
    fn get_or_compute(
        &self,
        lexeme: &str,
        compute: impl FnOnce() -> Result<TableEntry, AlignError>,
    ) -> Result<TableEntry, AlignError> {
        loop {
            let mut inner = self.inner.lock().unwrap();
            if let Some(entry) = inner.entries.get(lexeme) {
                return Ok(*entry);
            }
            if inner.in_flight.insert(lexeme.to_string()) {
                break;
            }
            let _unused = self.cv.wait(inner).unwrap();
        }
        let result = compute();
        let mut inner = self.inner.lock().unwrap();
        inner.in_flight.remove(lexeme);
        self.cv.notify_all();
        match result {
            Ok(entry) => {
                if let Some(existing) = inner.entries.get(lexeme) {
                    return Ok(*existing);
                }
                Self::append_row(&mut inner, lexeme, &entry);
                inner.entries.insert(lexeme.to_string(), entry);
                Ok(entry)
            }
            Err(e) => Err(e),
        }
    }

    /// Deterministic snapshot, sorted by lexeme.
    pub fn snapshot(&self) -> Vec<(String, TableEntry)> {
        let inner = self.inner.lock().unwrap();
        let mut rows: Vec<(String, TableEntry)> =
            inner.entries.iter().map(|(k, v)| (k.clone(), *v)).collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        rows
    }
}

/// Aligns one normalized lexeme against a lexicon: table hit, then exact
/// self-alignment, then one LLM round-trip.
pub fn align_lexeme(
    lexeme: &str,
    lexicon: &Lexicon,
    template: &PromptTemplate,
    client: &CompletionClient,
    table: &AlignmentTable,
) -> Result<Option<usize>, AlignError> {
    align_lexeme_counted(lexeme, lexicon, template, client, table, None)
}

/// [`align_lexeme`] that also accrues the tokens of any backend call it
/// makes into `tokens`. Memoization guarantees at most one accrual per
/// distinct lexeme.
pub fn align_lexeme_counted(
    lexeme: &str,
    lexicon: &Lexicon,
    template: &PromptTemplate,
    client: &CompletionClient,
    table: &AlignmentTable,
    tokens: Option<&Mutex<StepTokens>>,
) -> Result<Option<usize>, AlignError> {
    let entry = table.get_or_compute(lexeme, || {
        if let Some(index) = lexicon.index_of(lexeme) {
            return Ok(TableEntry {
                index: Some(index),
                provenance: AlignProvenance::ExactMatch,
            });
        }
        let prompt = render_alignment_prompt(template, lexeme, lexicon)?;
        let outcome = client.complete(&prompt)?;
        if let Some(tokens) = tokens {
            tokens.lock().unwrap().add_record(&outcome.record);
        }
        let answer = parse_alignment(&outcome.record.response, lexicon);
        if answer.is_unparseable() {
            table.unparseable.fetch_add(1, Ordering::SeqCst);
        }
        Ok(TableEntry {
            index: answer.index(),
            provenance: AlignProvenance::Llm,
        })
    })?;
    Ok(entry.index)
}

/// Splits a lexicon into index-ordered sub-lexicons of at most
/// `group_size` classes. The groups are disjoint and cover the lexicon.
pub fn partition_groups(lexicon: &Lexicon, group_size: usize) -> Result<Vec<Lexicon>, AlignError> {
    if group_size == 0 {
        return Err(AlignError::BadGroupSize);
    }
    let mut groups = Vec::new();
    for (g, chunk) in lexicon.classes().chunks(group_size).enumerate() {
        let group = Lexicon::new(
            lexicon.kind(),
            format!("{}#g{}", lexicon.name(), g + 1),
            chunk.to_vec(),
        )
        .expect("sub-group of a valid lexicon is valid");
        groups.push(group);
    }
    Ok(groups)
}

/// Alignment against a lexicon too large for one prompt: every sub-group is
/// asked independently, non-`None` candidates are pooled in first-seen
/// order, and a final round over the candidates picks the answer. Results
/// map back to indices of the original lexicon.
pub fn align_hierarchical(
    lexeme: &str,
    lexicon: &Lexicon,
    template: &PromptTemplate,
    group_size: usize,
    client: &CompletionClient,
) -> Result<Option<usize>, AlignError> {
    if let Some(index) = lexicon.index_of(lexeme) {
        return Ok(Some(index));
    }
    let groups = partition_groups(lexicon, group_size)?;
    let mut candidates: Vec<String> = Vec::new();
    for group in &groups {
        let prompt = render_alignment_prompt(template, lexeme, group)?;
        let outcome = client.complete(&prompt)?;
        if let Some(i) = parse_alignment(&outcome.record.response, group).index() {
            let name = group
                .class(i)
                .expect("parse returns valid index")
                .to_string();
            if !candidates.contains(&name) {
                candidates.push(name);
            }
        }
    }
    let winner = match candidates.len() {
        0 => return Ok(None),
        1 => candidates.into_iter().next().unwrap(),
        _ => {
            let pool = Lexicon::new(
                lexicon.kind(),
                format!("{}#candidates", lexicon.name()),
                candidates,
            )
            .expect("candidate names are distinct lexicon classes");
            let prompt = render_alignment_prompt(template, lexeme, &pool)?;
            let outcome = client.complete(&prompt)?;
            match parse_alignment(&outcome.record.response, &pool).index() {
                Some(i) => pool.class(i).expect("valid index").to_string(),
                None => return Ok(None),
            }
        }
    };
    // A well-formed candidate is always an original class; anything else
    // degrades to None.
    Ok(lexicon.index_of(&winner))
}

/// One lexicon's alignment machinery, bundled for [`align_triplets`].
pub struct AlignLane<'a> {
    pub lexicon: &'a Lexicon,
    pub template: &'a PromptTemplate,
    pub table: &'a AlignmentTable,
    /// When set, tokens of fresh backend calls accrue here.
    pub tokens: Option<&'a Mutex<StepTokens>>,
}

/// Counters describing one alignment pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignStats {
    pub distinct_entity_lexemes: usize,
    pub distinct_predicate_lexemes: usize,
    /// Subject/object slots left unaligned (counted per slot).
    pub entity_none: usize,
    /// Predicate slots left unaligned.
    pub predicate_none: usize,
    pub unparseable_answers: u64,
}

/// Annotates every triplet with lexicon indices, preserving input order.
/// Distinct lexemes are aligned concurrently up to `workers`; the table
/// guarantees at most one backend call per lexeme.
pub fn align_triplets(
    raw: &[RawTriplet],
    entities: &AlignLane<'_>,
    predicates: &AlignLane<'_>,
    client: &CompletionClient,
    workers: usize,
) -> Result<(Vec<AlignedTriplet>, AlignStats), AlignError> {
    debug_assert_eq!(entities.lexicon.kind(), LexiconKind::Entity);
    debug_assert_eq!(predicates.lexicon.kind(), LexiconKind::Predicate);

    let mut entity_lexemes: Vec<&str> = Vec::new();
    let mut predicate_lexemes: Vec<&str> = Vec::new();
    let mut seen_e = HashSet::new();
    let mut seen_p = HashSet::new();
    for t in raw {
        for lexeme in [t.subject.as_str(), t.object.as_str()] {
            if seen_e.insert(lexeme) {
                entity_lexemes.push(lexeme);
            }
        }
        if seen_p.insert(t.predicate.as_str()) {
            predicate_lexemes.push(t.predicate.as_str());
        }
    }

    // (lane kind, lexeme) work items; the shared index dishes them out.
    let jobs: Vec<(bool, &str)> = entity_lexemes
        .iter()
        .map(|l| (true, *l))
        .chain(predicate_lexemes.iter().map(|l| (false, *l)))
        .collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let failure: Mutex<Option<AlignError>> = Mutex::new(None);
    let workers = workers.max(1).min(jobs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                let (is_entity, lexeme) = jobs[i];
                let lane = if is_entity { entities } else { predicates };
                if let Err(e) = align_lexeme_counted(
                    lexeme,
                    lane.lexicon,
                    lane.template,
                    client,
                    lane.table,
                    lane.tokens,
                ) {
                    failure.lock().unwrap().get_or_insert(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }

    let aligned = raw
        .iter()
        .map(|t| AlignedTriplet {
            subject_class: entities.table.get(&t.subject).and_then(|e| e.index),
            predicate_class: predicates.table.get(&t.predicate).and_then(|e| e.index),
            object_class: entities.table.get(&t.object).and_then(|e| e.index),
            raw: t.clone(),
        })
        .collect();

    let stats = AlignStats {
        distinct_entity_lexemes: entity_lexemes.len(),
        distinct_predicate_lexemes: predicate_lexemes.len(),
        unparseable_answers: entities.table.unparseable() + predicates.table.unparseable(),
        ..AlignStats::default()
    };
    Ok((aligned, stats))
}

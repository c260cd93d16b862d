//! Core domain types: lexicons, captions, triplets, and dataset containers.
//!
//! Lexicon indices are 1-based throughout; index 0 is reserved for the
//! `None` sentinel answer, so a parsed `"0.None"` maps directly onto the
//! index space without translation.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TypeError {
    #[error("lexicon `{name}`: {reason}")]
    InvalidLexicon { name: String, reason: String },
    #[error("caption ({image_id}, {caption_id}): {reason}")]
    InvalidCaption {
        image_id: String,
        caption_id: String,
        reason: String,
    },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed lexicon json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Whether a lexicon holds entity classes or predicate classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexiconKind {
    Entity,
    Predicate,
}

impl fmt::Display for LexiconKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LexiconKind::Entity => write!(f, "entity"),
            LexiconKind::Predicate => write!(f, "predicate"),
        }
    }
}

/// An ordered, indexed set of target classes.
///
/// Class names are unique, non-empty, lowercase, and trimmed. Lookup by
/// name returns the 1-based index used in prompts and alignments.
#[derive(Debug, Clone, Serialize)]
pub struct Lexicon {
    kind: LexiconKind,
    name: String,
    classes: Vec<String>,
    #[serde(skip)]
    by_name: HashMap<String, usize>,
}

impl Lexicon {
    pub fn new(
        kind: LexiconKind,
        name: impl Into<String>,
        classes: Vec<String>,
    ) -> Result<Self, TypeError> {
        let name = name.into();
        let mut normalized = Vec::with_capacity(classes.len());
        let mut by_name = HashMap::with_capacity(classes.len());
        for (i, raw) in classes.into_iter().enumerate() {
            let class = raw.trim().to_lowercase();
            if class.is_empty() {
                return Err(TypeError::InvalidLexicon {
                    name,
                    reason: format!("class at position {} is empty", i + 1),
                });
            }
            if by_name.insert(class.clone(), i + 1).is_some() {
                return Err(TypeError::InvalidLexicon {
                    name,
                    reason: format!("duplicate class `{class}`"),
                });
            }
            normalized.push(class);
        }
        if normalized.is_empty() {
            return Err(TypeError::InvalidLexicon {
                name,
                reason: "lexicon has no classes".into(),
            });
        }
        Ok(Self {
            kind,
            name,
            classes: normalized,
            by_name,
        })
    }

    /// Plain-text form: one class per line, line number = index.
    pub fn from_text(
        kind: LexiconKind,
        name: impl Into<String>,
        text: &str,
    ) -> Result<Self, TypeError> {
        let classes = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Self::new(kind, name, classes)
    }

    /// Loads either the one-class-per-line text form or the JSON form
    /// `{"kind": ..., "name": ..., "classes": [...]}`. JSON is detected by a
    /// leading `{`.
    pub fn from_path(path: &Path, default_kind: LexiconKind) -> Result<Self, TypeError> {
        let text = std::fs::read_to_string(path).map_err(|source| TypeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "lexicon".into());
        if text.trim_start().starts_with('{') {
            #[derive(Deserialize)]
            struct LexiconFile {
                kind: LexiconKind,
                name: String,
                classes: Vec<String>,
            }
            let file: LexiconFile =
                serde_json::from_str(&text).map_err(|source| TypeError::Json {
                    path: path.display().to_string(),
                    source,
                })?;
            Self::new(file.kind, file.name, file.classes)
        } else {
            Self::from_text(default_kind, name, &text)
        }
    }

    pub fn kind(&self) -> LexiconKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// 1-based lookup. `class(0)` is always `None` (the sentinel slot).
    pub fn class(&self, index: usize) -> Option<&str> {
        if index == 0 {
            return None;
        }
        self.classes.get(index - 1).map(String::as_str)
    }

    /// 1-based index of an exact class name.
    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.by_name.get(class).copied()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "kind": self.kind,
            "name": self.name,
            "classes": self.classes,
        })
        .to_string()
    }
}

impl<'de> Deserialize<'de> for Lexicon {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            kind: LexiconKind,
            name: String,
            classes: Vec<String>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Lexicon::new(raw.kind, raw.name, raw.classes).map_err(serde::de::Error::custom)
    }
}

/// One caption attached to one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption_id: String,
    pub text: String,
}

impl CaptionRecord {
    pub fn new(
        image_id: impl Into<String>,
        caption_id: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<Self, TypeError> {
        let image_id = image_id.into();
        let caption_id = caption_id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TypeError::InvalidCaption {
                image_id,
                caption_id,
                reason: "caption text is empty".into(),
            });
        }
        Ok(Self {
            image_id,
            caption_id,
            text,
        })
    }
}

/// Where a raw triplet came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletSource {
    LlmOriginal,
    LlmParaphrased,
    BaselineParser,
}

impl fmt::Display for TripletSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TripletSource::LlmOriginal => write!(f, "llm_original"),
            TripletSource::LlmParaphrased => write!(f, "llm_paraphrased"),
            TripletSource::BaselineParser => write!(f, "baseline_parser"),
        }
    }
}

/// A free-text ⟨subject, predicate, object⟩ with provenance. All three
/// lexemes are non-empty, lowercase, whitespace-normalized.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawTriplet {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub source: TripletSource,
    pub image_id: String,
    pub caption_id: String,
}

impl RawTriplet {
    /// Angle-bracket rendering, the same shape the extraction prompts teach.
    pub fn display_form(&self) -> String {
        format!("<{}, {}, {}>", self.subject, self.predicate, self.object)
    }
}

/// A raw triplet annotated with lexicon indices. `None` components survive
/// until the pipeline's filter stage discards them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedTriplet {
    pub subject_class: Option<usize>,
    pub predicate_class: Option<usize>,
    pub object_class: Option<usize>,
    pub raw: RawTriplet,
}

impl AlignedTriplet {
    pub fn is_fully_aligned(&self) -> bool {
        self.subject_class.is_some()
            && self.predicate_class.is_some()
            && self.object_class.is_some()
    }
}

/// Snapshot of the configuration that produced a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationMetadata {
    pub backend: String,
    pub model: String,
    pub entity_lexicon: String,
    pub predicate_lexicon: String,
    pub use_paraphrase: bool,
    pub combined_prompt: bool,
}

/// The final dataset: fully aligned triplets over a caption corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripletDataset {
    pub triplets: Vec<AlignedTriplet>,
    /// Count of distinct images in the source corpus, not just the images
    /// that survived with at least one triplet.
    pub image_count: usize,
    pub metadata: GenerationMetadata,
}

impl TripletDataset {
    pub fn distinct_triplet_images(&self) -> usize {
        let mut ids: Vec<&str> = self
            .triplets
            .iter()
            .map(|t| t.raw.image_id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

const LEADING_ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Normalizes a lexeme: lowercase, whitespace collapsed, surrounding
/// punctuation stripped, leading articles dropped. Returns an empty string
/// for inputs that normalize to nothing; callers must reject those.
pub fn normalize_lexeme(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let mut words: Vec<&str> = lowered
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect();
    while let Some(first) = words.first() {
        if LEADING_ARTICLES.contains(first) {
            words.remove(0);
        } else {
            break;
        }
    }
    words.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_lexicon() -> Lexicon {
        Lexicon::new(
            LexiconKind::Entity,
            "test",
            vec!["bird".into(), "surfboard".into(), "park bench".into()],
        )
        .unwrap()
    }

    #[test]
    fn normalize_strips_articles_and_case() {
        assert_eq!(normalize_lexeme("A beautiful Woman "), "beautiful woman");
        assert_eq!(normalize_lexeme("sour cream"), "sour cream");
        assert_eq!(normalize_lexeme("the floor,"), "floor");
    }

    #[test]
    fn normalize_handles_degenerate_inputs() {
        assert_eq!(normalize_lexeme(""), "");
        assert_eq!(normalize_lexeme("the"), "");
        assert_eq!(normalize_lexeme("a an the"), "");
        assert_eq!(normalize_lexeme("  ,,  "), "");
        assert_eq!(normalize_lexeme("woman's feet"), "woman's feet");
    }

    #[test]
    fn normalize_is_idempotent() {
        for raw in [
            "A beautiful Woman ",
            "the floor,",
            "\"The Bus,\"",
            "next to",
        ] {
            let once = normalize_lexeme(raw);
            assert_eq!(normalize_lexeme(&once), once);
        }
    }

    #[test]
    fn lexicon_indexing_is_one_based() {
        let lex = small_lexicon();
        assert_eq!(lex.class(0), None);
        assert_eq!(lex.class(1), Some("bird"));
        assert_eq!(lex.class(3), Some("park bench"));
        assert_eq!(lex.class(4), None);
        assert_eq!(lex.index_of("surfboard"), Some(2));
        assert_eq!(lex.index_of("missing"), None);
    }

    #[test]
    fn lexicon_lookup_is_bijective_over_own_classes() {
        let lex = small_lexicon();
        for (i, class) in lex.classes().iter().enumerate() {
            let idx = lex.index_of(&normalize_lexeme(class)).unwrap();
            assert_eq!(idx, i + 1);
            assert_eq!(lex.class(idx), Some(class.as_str()));
        }
    }

    #[test]
    fn lexicon_rejects_duplicates_and_empties() {
        assert!(Lexicon::new(
            LexiconKind::Entity,
            "dup",
            vec!["bird".into(), "Bird ".into()]
        )
        .is_err());
        assert!(Lexicon::new(LexiconKind::Entity, "empty", vec!["".into()]).is_err());
        assert!(Lexicon::new(LexiconKind::Entity, "none", vec![]).is_err());
    }

    #[test]
    fn lexicon_json_round_trip_preserves_order() {
        let lex = small_lexicon();
        let json = lex.to_json();
        let back: Lexicon = serde_json::from_str(&json).unwrap();
        assert_eq!(back.classes(), lex.classes());
        assert_eq!(back.kind(), lex.kind());
        assert_eq!(back.name(), lex.name());
    }

    #[test]
    fn caption_rejects_blank_text() {
        assert!(CaptionRecord::new("i", "c", "  ").is_err());
        assert!(CaptionRecord::new("i", "c", "a dog").is_ok());
    }

    #[test]
    fn triplet_serde_round_trip() {
        let raw = RawTriplet {
            subject: "clock".into(),
            predicate: "sitting on".into(),
            object: "floor".into(),
            source: TripletSource::LlmOriginal,
            image_id: "img01".into(),
            caption_id: "c01".into(),
        };
        let aligned = AlignedTriplet {
            subject_class: Some(30),
            predicate_class: Some(40),
            object_class: None,
            raw,
        };
        let json = serde_json::to_string(&aligned).unwrap();
        let back: AlignedTriplet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, aligned);
        assert!(!back.is_fully_aligned());
    }
}

//! Caption corpus ingestion.
//!
//! Two on-disk forms are accepted: COCO-caption-style JSON
//! (`{"images": [{"id": ...}], "annotations": [{"image_id", "id", "caption"}]}`)
//! and a plain JSONL form with one `CaptionRecord` object per line. The
//! corpus remembers the total image count from the source, which may exceed
//! the number of images that end up with triplets.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::types::{CaptionRecord, TypeError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("duplicate caption ({image_id}, {caption_id}) in {path}")]
    DuplicateCaption {
        path: String,
        image_id: String,
        caption_id: String,
    },
    #[error(transparent)]
    Caption(#[from] TypeError),
}

/// A loaded caption corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub captions: Vec<CaptionRecord>,
    pub image_count: usize,
}

impl Corpus {
    pub fn new(captions: Vec<CaptionRecord>) -> Result<Self, CorpusError> {
        check_unique(&captions, "<memory>")?;
        let image_count = distinct_images(&captions);
        Ok(Self {
            captions,
            image_count,
        })
    }

    /// Loads a corpus file, sniffing the format: a document that parses as
    /// one JSON object with `images`/`annotations` keys is COCO-style;
    /// everything else is line-delimited caption records.
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&text) {
            if map.contains_key("images") && map.contains_key("annotations") {
                return Self::from_coco_json(&text, path);
            }
        }
        Self::from_jsonl(&text, path)
    }

    fn from_coco_json(text: &str, path: &Path) -> Result<Self, CorpusError> {
        #[derive(Deserialize)]
        struct CocoImage {
            id: Value,
        }
        #[derive(Deserialize)]
        struct CocoAnnotation {
            image_id: Value,
            id: Value,
            caption: String,
        }
        #[derive(Deserialize)]
        struct CocoFile {
            images: Vec<CocoImage>,
            annotations: Vec<CocoAnnotation>,
        }

        let file: CocoFile = serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut image_ids = HashSet::new();
        for img in &file.images {
            image_ids.insert(id_string(&img.id));
        }
        let mut captions = Vec::with_capacity(file.annotations.len());
        for ann in file.annotations {
            let image_id = id_string(&ann.image_id);
            if !image_ids.contains(&image_id) {
                return Err(CorpusError::Malformed {
                    path: path.display().to_string(),
                    reason: format!("annotation references unknown image `{image_id}`"),
                });
            }
            captions.push(CaptionRecord::new(
                image_id,
                id_string(&ann.id),
                ann.caption,
            )?);
        }
        check_unique(&captions, &path.display().to_string())?;
        Ok(Self {
            captions,
            image_count: image_ids.len(),
        })
    }

    fn from_jsonl(text: &str, path: &Path) -> Result<Self, CorpusError> {
        let mut captions = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let rec: CaptionRecord =
                serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                    path: path.display().to_string(),
                    reason: format!("line {}: {e}", lineno + 1),
                })?;
            captions.push(CaptionRecord::new(rec.image_id, rec.caption_id, rec.text)?);
        }
        check_unique(&captions, &path.display().to_string())?;
        let image_count = distinct_images(&captions);
        Ok(Self {
            captions,
            image_count,
        })
    }
}

fn id_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn distinct_images(captions: &[CaptionRecord]) -> usize {
    captions
        .iter()
        .map(|c| c.image_id.as_str())
        .collect::<HashSet<_>>()
        .len()
}

fn check_unique(captions: &[CaptionRecord], path: &str) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for c in captions {
        if !seen.insert((c.image_id.as_str(), c.caption_id.as_str())) {
            return Err(CorpusError::DuplicateCaption {
                path: path.to_string(),
                image_id: c.image_id.clone(),
                caption_id: c.caption_id.clone(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn coco_json_counts_captionless_images() {
        let json = r#"{
            "images": [{"id": 1}, {"id": 2}, {"id": 3}],
            "annotations": [
                {"image_id": 1, "id": 10, "caption": "a dog on a beach"},
                {"image_id": 1, "id": 11, "caption": "a dog running"},
                {"image_id": 2, "id": 12, "caption": "a cat"}
            ]
        }"#;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(json.as_bytes()).unwrap();
        let corpus = Corpus::from_path(f.path()).unwrap();
        assert_eq!(corpus.captions.len(), 3);
        assert_eq!(corpus.image_count, 3);
        assert_eq!(corpus.captions[0].image_id, "1");
        assert_eq!(corpus.captions[0].caption_id, "10");
    }

    #[test]
    fn jsonl_round_trip() {
        let jsonl = concat!(
            r#"{"image_id":"img01","caption_id":"c01","text":"an elephant lying on the beach"}"#,
            "\n",
            r#"{"image_id":"img02","caption_id":"c02","text":"a bus parked on the street"}"#,
            "\n",
        );
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(jsonl.as_bytes()).unwrap();
        let corpus = Corpus::from_path(f.path()).unwrap();
        assert_eq!(corpus.captions.len(), 2);
        assert_eq!(corpus.image_count, 2);
    }

    #[test]
    fn duplicate_caption_ids_rejected() {
        let jsonl = concat!(
            r#"{"image_id":"i","caption_id":"c","text":"one"}"#,
            "\n",
            r#"{"image_id":"i","caption_id":"c","text":"two"}"#,
            "\n",
        );
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(jsonl.as_bytes()).unwrap();
        assert!(matches!(
            Corpus::from_path(f.path()),
            Err(CorpusError::DuplicateCaption { .. })
        ));
    }

    #[test]
    fn empty_caption_text_rejected() {
        let jsonl = r#"{"image_id":"i","caption_id":"c","text":"   "}"#;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(jsonl.as_bytes()).unwrap();
        assert!(Corpus::from_path(f.path()).is_err());
    }
}

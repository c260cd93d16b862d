//! The conventional-approach comparator: a heuristic rule-based caption
//! parser plus one-hop knowledge-base alignment.
//!
//! The parser is a deliberate simplification of the classic scene-parser
//! recipe, built to exhibit the same failure mode it is compared against:
//! when a verb is followed by a preposition, the participle is dropped and
//! the bare preposition becomes the predicate ("lying on" degrades to
//! "on"). Every emitted predicate is a single token by construction.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::types::{normalize_lexeme, CaptionRecord, Lexicon, RawTriplet, TripletSource};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("knowledge base {path}: {reason}")]
    Kb { path: String, reason: String },
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "his", "her", "its", "their", "some",
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "several",
    "many", "few", "both",
];

const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do", "does",
];

const CONJUNCTIONS: &[&str] = &["and", "while", "when", "as", "but", "or"];

const PREPOSITIONS: &[&str] = &[
    "on",
    "in",
    "at",
    "of",
    "with",
    "near",
    "above",
    "under",
    "underneath",
    "behind",
    "beside",
    "between",
    "against",
    "along",
    "across",
    "over",
    "from",
    "to",
    "by",
    "for",
    "off",
    "onto",
    "upon",
    "into",
    "next",
    "inside",
    "outside",
    "below",
    "beneath",
    "around",
    "atop",
];

const VERB_STEMS: &[&str] = &[
    "sit", "stand", "talk", "wear", "ride", "walk", "rest", "eat", "look", "play", "fly", "lie",
    "hold", "carry", "graze", "watch", "use", "run", "jump", "lean", "hang", "park",
];

fn is_determiner(token: &str) -> bool {
    DETERMINERS.contains(&token)
}

fn is_preposition(token: &str) -> bool {
    PREPOSITIONS.contains(&token)
}

fn is_auxiliary(token: &str) -> bool {
    AUXILIARIES.contains(&token)
}

fn is_verb(token: &str) -> bool {
    if VERB_STEMS.contains(&token) {
        return true;
    }
    if token.len() > 4 && token.ends_with("ing") {
        return true;
    }
    if token.len() > 4 && token.ends_with("ed") {
        return true;
    }
    // Third-person -s forms of the known stems.
    token
        .strip_suffix('s')
        .map(|stem| VERB_STEMS.contains(&stem))
        .unwrap_or(false)
}

/// Drops third-person `-s` from known stems; participles stay as-is.
fn untense(token: &str) -> String {
    if let Some(stem) = token.strip_suffix('s') {
        if VERB_STEMS.contains(&stem) {
            return stem.to_string();
        }
    }
    token.to_string()
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|w| {
            let w = w.trim_matches(|c: char| !c.is_alphanumeric());
            w.strip_suffix("'s").unwrap_or(w).to_string()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Scans a noun phrase starting at `i`: stops at prepositions always, and at
/// verb-shaped tokens unless they directly follow a determiner (participial
/// adjectives like "a striped shirt" stay inside the phrase). Returns the
/// head (last non-determiner token) and the index just past the phrase.
fn noun_phrase_head(tokens: &[String], mut i: usize) -> (Option<String>, usize) {
    let mut head: Option<String> = None;
    let mut prev_was_determiner = true;
    while i < tokens.len() {
        let tok = tokens[i].as_str();
        if is_auxiliary(tok) {
            break;
        }
        if is_preposition(tok) {
            break;
        }
        if is_verb(tok) && !prev_was_determiner {
            break;
        }
        if !is_determiner(tok) && !is_verb(tok) {
            head = Some(tok.to_string());
        } else if is_verb(tok) && prev_was_determiner {
            // Participial adjective; not the head, but part of the phrase.
        }
        prev_was_determiner = is_determiner(tok);
        i += 1;
    }
    (head, i)
}

/// Extracts subject–verb–object patterns from one caption. Conjunctions and
/// commas split clauses; within a clause, a verb followed by a preposition
/// contributes only the preposition as predicate, and successive
/// prepositional phrases chain off the previous object.
pub fn rule_parse(caption: &CaptionRecord) -> Vec<RawTriplet> {
    let mut out = Vec::new();
    for clause_text in caption.text.split([',', ';']) {
        let tokens = tokenize(clause_text);
        for clause in split_on_conjunctions(&tokens) {
            parse_clause(&clause, caption, &mut out);
        }
    }
    out
}

fn split_on_conjunctions(tokens: &[String]) -> Vec<Vec<String>> {
    let mut clauses = Vec::new();
    let mut current = Vec::new();
    for tok in tokens {
        if CONJUNCTIONS.contains(&tok.as_str()) {
            if !current.is_empty() {
                clauses.push(std::mem::take(&mut current));
            }
        } else {
            current.push(tok.clone());
        }
    }
    if !current.is_empty() {
        clauses.push(current);
    }
    clauses
}

fn parse_clause(tokens: &[String], caption: &CaptionRecord, out: &mut Vec<RawTriplet>) {
    let (subject, mut i) = noun_phrase_head(tokens, 0);
    let Some(mut subject) = subject else {
        return;
    };
    while i < tokens.len() {
        let tok = tokens[i].as_str();
        if is_auxiliary(tok) {
            i += 1;
            continue;
        }
        let predicate = if is_preposition(tok) {
            let pred = tok.to_string();
            i += 1;
            // Consecutive prepositions collapse onto the first.
            while i < tokens.len() && is_preposition(tokens[i].as_str()) {
                i += 1;
            }
            pred
        } else if is_verb(tok) {
            let verb = untense(tok);
            i += 1;
            while i < tokens.len() && is_auxiliary(tokens[i].as_str()) {
                i += 1;
            }
            if i < tokens.len() && is_preposition(tokens[i].as_str()) {
                // The over-simplification: the participle is lost and the
                // bare preposition survives as the predicate.
                let pred = tokens[i].clone();
                i += 1;
                while i < tokens.len() && is_preposition(tokens[i].as_str()) {
                    i += 1;
                }
                pred
            } else {
                verb
            }
        } else {
            i += 1;
            continue;
        };
        let (object, next) = noun_phrase_head(tokens, i);
        i = next;
        let Some(object) = object else {
            continue;
        };
        let (s, p, o) = (
            normalize_lexeme(&subject),
            normalize_lexeme(&predicate),
            normalize_lexeme(&object),
        );
        if !s.is_empty() && !p.is_empty() && !o.is_empty() {
            out.push(RawTriplet {
                subject: s,
                predicate: p,
                object: o.clone(),
                source: TripletSource::BaselineParser,
                image_id: caption.image_id.clone(),
                caption_id: caption.caption_id.clone(),
            });
        }
        subject = object;
    }
}

/// Flattened synonym/hypernym/hyponym relations keyed by lexeme.
#[derive(Debug, Clone, Default)]
pub struct SynonymKB {
    entries: HashMap<String, Vec<String>>,
    source: String,
}

impl SynonymKB {
    pub fn new(entries: HashMap<String, Vec<String>>, source: impl Into<String>) -> Self {
        let entries = entries
            .into_iter()
            .map(|(k, v)| {
                let key = normalize_lexeme(&k);
                let rels = v
                    .into_iter()
                    .map(|r| normalize_lexeme(&r))
                    .filter(|r| !r.is_empty() && *r != key)
                    .collect();
                (key, rels)
            })
            .filter(|(k, _)| !k.is_empty())
            .collect();
        Self {
            entries,
            source: source.into(),
        }
    }

    /// Loads the flat-file form: `lexeme<TAB>rel1,rel2,...` per line.
    /// Blank lines and `#` comments are skipped.
    pub fn from_file(path: &Path) -> Result<Self, BaselineError> {
        let text = std::fs::read_to_string(path).map_err(|e| BaselineError::Kb {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut entries = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lexeme, rels) = line.split_once('\t').ok_or_else(|| BaselineError::Kb {
                path: path.display().to_string(),
                reason: format!("line {}: expected `lexeme<TAB>rel1,rel2,...`", lineno + 1),
            })?;
            let rels: Vec<String> = rels.split(',').map(str::to_string).collect();
            entries.insert(lexeme.to_string(), rels);
        }
        Ok(Self::new(entries, path.display().to_string()))
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn related(&self, lexeme: &str) -> &[String] {
        self.entries.get(lexeme).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One-hop KB alignment: exact lexicon match first, then the first related
/// lexeme that is a lexicon class. No deeper traversal.
pub fn kb_align(lexeme: &str, lexicon: &Lexicon, kb: &SynonymKB) -> Option<usize> {
    if let Some(index) = lexicon.index_of(lexeme) {
        return Some(index);
    }
    kb.related(lexeme)
        .iter()
        .find_map(|rel| lexicon.index_of(rel))
}

/// True when every emitted predicate is a single token — the invariant the
/// parser is built around.
pub fn predicates_are_single_tokens(triplets: &[RawTriplet]) -> bool {
    triplets
        .iter()
        .all(|t| !t.predicate.contains(char::is_whitespace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LexiconKind;
    use proptest::prelude::*;

    fn caption(text: &str) -> CaptionRecord {
        CaptionRecord {
            image_id: "img".into(),
            caption_id: "cap".into(),
            text: text.into(),
        }
    }

    fn vg_entities() -> Lexicon {
        Lexicon::from_text(
            LexiconKind::Entity,
            "vg_entities",
            include_str!("../fixtures/vg_entities.txt"),
        )
        .unwrap()
    }

    fn spo(t: &RawTriplet) -> (String, String, String) {
        (t.subject.clone(), t.predicate.clone(), t.object.clone())
    }

    #[test]
    fn participle_plus_preposition_oversimplifies() {
        let triplets = rule_parse(&caption("an elephant lying on the beach"));
        assert_eq!(triplets.len(), 1);
        assert_eq!(
            spo(&triplets[0]),
            ("elephant".into(), "on".into(), "beach".into())
        );
    }

    #[test]
    fn empty_caption_parses_to_nothing() {
        let rec = caption("   ");
        assert!(rule_parse(&rec).is_empty());
    }

    #[test]
    fn plain_svo_keeps_the_verb() {
        let triplets = rule_parse(&caption("a man riding a horse"));
        assert_eq!(triplets.len(), 1);
        assert_eq!(
            spo(&triplets[0]),
            ("man".into(), "riding".into(), "horse".into())
        );
    }

    #[test]
    fn participial_adjectives_stay_in_the_phrase() {
        let triplets = rule_parse(&caption("a baseball player wearing a striped shirt"));
        assert_eq!(triplets.len(), 1);
        assert_eq!(
            spo(&triplets[0]),
            ("player".into(), "wearing".into(), "shirt".into())
        );
    }

    #[test]
    fn prepositional_phrases_chain_off_the_object() {
        let triplets = rule_parse(&caption("a man riding a horse on a dirt road"));
        assert_eq!(triplets.len(), 2);
        assert_eq!(
            spo(&triplets[0]),
            ("man".into(), "riding".into(), "horse".into())
        );
        assert_eq!(
            spo(&triplets[1]),
            ("horse".into(), "on".into(), "road".into())
        );
    }

    #[test]
    fn auxiliaries_are_dropped() {
        let triplets = rule_parse(&caption("the elephant is carrying a wooden log"));
        assert_eq!(triplets.len(), 1);
        assert_eq!(
            spo(&triplets[0]),
            ("elephant".into(), "carrying".into(), "log".into())
        );
    }

    #[test]
    fn third_person_verbs_untense() {
        let triplets = rule_parse(&caption("a man talks a lot"));
        assert_eq!(triplets.len(), 1);
        assert_eq!(triplets[0].predicate, "talk");
    }

    #[test]
    fn conjunctions_split_clauses() {
        let triplets = rule_parse(&caption(
            "a bus parked on the street and a woman holding an umbrella",
        ));
        let got: Vec<_> = triplets.iter().map(spo).collect();
        assert!(got.contains(&("bus".into(), "on".into(), "street".into())));
        assert!(got.contains(&("woman".into(), "holding".into(), "umbrella".into())));
    }

    #[test]
    fn verbless_prepositional_clause_emits() {
        let triplets = rule_parse(&caption("a child near a park bench"));
        assert_eq!(triplets.len(), 1);
        assert_eq!(
            spo(&triplets[0]),
            ("child".into(), "near".into(), "bench".into())
        );
    }

    #[test]
    fn kb_align_exact_match_ignores_kb() {
        let lex = vg_entities();
        let kb = SynonymKB::new(
            HashMap::from([("elephant".to_string(), vec!["animal".to_string()])]),
            "test",
        );
        assert_eq!(kb_align("elephant", &lex, &kb), Some(41));
    }

    #[test]
    fn kb_align_one_hop_bridge() {
        let lex = vg_entities();
        let kb = SynonymKB::new(
            HashMap::from([("pup".to_string(), vec!["dog".to_string()])]),
            "test",
        );
        assert_eq!(kb_align("pup", &lex, &kb), Some(37));
    }

    #[test]
    fn kb_align_missing_bridge_is_none() {
        let lex = vg_entities();
        let kb = SynonymKB::new(HashMap::new(), "test");
        assert_eq!(kb_align("log", &lex, &kb), None);
    }

    #[test]
    fn kb_is_one_hop_only() {
        let lex = vg_entities();
        // pup -> puppy -> dog would need two hops; one hop fails.
        let kb = SynonymKB::new(
            HashMap::from([
                ("pup".to_string(), vec!["puppy".to_string()]),
                ("puppy".to_string(), vec!["dog".to_string()]),
            ]),
            "test",
        );
        assert_eq!(kb_align("pup", &lex, &kb), None);
    }

    #[test]
    fn kb_excludes_self_relations() {
        let kb = SynonymKB::new(
            HashMap::from([(
                "dog".to_string(),
                vec!["dog".to_string(), "puppy".to_string()],
            )]),
            "test",
        );
        assert_eq!(kb.related("dog"), &["puppy".to_string()]);
    }

    #[test]
    fn kb_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.tsv");
        std::fs::write(&path, "# comment\npup\tdog,puppy\nroad\tstreet\n").unwrap();
        let kb = SynonymKB::from_file(&path).unwrap();
        assert_eq!(kb.len(), 2);
        assert_eq!(kb.related("road"), &["street".to_string()]);
    }

    proptest! {
        #[test]
        fn emitted_predicates_are_always_single_tokens(text in ".{0,80}") {
            let rec = CaptionRecord {
                image_id: "i".into(),
                caption_id: "c".into(),
                text,
            };
            let triplets = rule_parse(&rec);
            prop_assert!(predicates_are_single_tokens(&triplets));
            for t in &triplets {
                prop_assert!(!t.subject.is_empty());
                prop_assert!(!t.predicate.is_empty());
                prop_assert!(!t.object.is_empty());
            }
        }
    }
}

//! Tolerant parsing of completion answers.
//!
//! Parsing is total: no input raises. Degraded inputs (wrong-arity spans,
//! unresolvable alignment answers) are counted rather than thrown so a
//! pipeline can report how lossy a run was.

use crate::types::{normalize_lexeme, CaptionRecord, Lexicon, RawTriplet, TripletSource};

/// The authoritative triplet list in an answer comes after the last
/// occurrence of this marker; Step-1 paraphrase text before it is skipped.
const FINAL_LIST_MARKER: &str = "meaningful triplets are";

/// Result of scanning one response for triplet spans.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletParse {
    pub triplets: Vec<RawTriplet>,
    /// Angle-bracket spans skipped for wrong arity or empty components.
    pub malformed: usize,
}

/// Extracts every well-formed `<subject, predicate, object>` span (Unicode
/// `⟨…⟩` or ASCII `<…>`) from a response. Spans must have exactly two
/// commas; components are normalized and must be non-empty. Duplicate
/// triplets within one response are dropped.
pub fn parse_triplets(
    response: &str,
    caption: &CaptionRecord,
    source: TripletSource,
) -> TripletParse {
    let lower = response.to_lowercase();
    let scan_from = lower
        .rfind(FINAL_LIST_MARKER)
        .map(|pos| pos + FINAL_LIST_MARKER.len())
        .unwrap_or(0);
    let region = &response[scan_from..];

    let mut out = TripletParse::default();
    let mut seen: Vec<(String, String, String)> = Vec::new();
    let chars: Vec<char> = region.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let closer = match chars[i] {
            '<' => '>',
            '⟨' => '⟩',
            _ => {
                i += 1;
                continue;
            }
        };
        let start = i + 1;
        let mut j = start;
        let mut nested = false;
        let mut end = None;
        while j < chars.len() {
            let c = chars[j];
            if c == closer {
                end = Some(j);
                break;
            }
            if c == '<' || c == '⟨' {
                nested = true;
                break;
            }
            j += 1;
        }
        if nested {
            // Unterminated outer span; restart the scan at the inner opener.
            out.malformed += 1;
            i = j;
            continue;
        }
        let Some(end) = end else {
            out.malformed += 1;
            break;
        };
        let content: String = chars[start..end].iter().collect();
        let parts: Vec<String> = content.split(',').map(normalize_lexeme).collect();
        if parts.len() == 3 && parts.iter().all(|p| !p.is_empty()) {
            let key = (parts[0].clone(), parts[1].clone(), parts[2].clone());
            if !seen.contains(&key) {
                seen.push(key);
                out.triplets.push(RawTriplet {
                    subject: parts[0].clone(),
                    predicate: parts[1].clone(),
                    object: parts[2].clone(),
                    source,
                    image_id: caption.image_id.clone(),
                    caption_id: caption.caption_id.clone(),
                });
            }
        } else {
            out.malformed += 1;
        }
        i = end + 1;
    }
    out
}

/// Outcome of parsing one Chain-2 answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentAnswer {
    /// A valid 1-based index into the lexicon.
    Index(usize),
    /// The `0.None` abstention: nothing in the lexicon is relevant.
    NoneOfThem,
    /// The answer could not be resolved; callers count these.
    Unparseable,
}

impl AlignmentAnswer {
    pub fn index(self) -> Option<usize> {
        match self {
            AlignmentAnswer::Index(i) => Some(i),
            _ => None,
        }
    }

    pub fn is_unparseable(self) -> bool {
        matches!(self, AlignmentAnswer::Unparseable)
    }
}

/// Resolves an alignment answer of the form `N.name` (or a bare class
/// name) against a lexicon.
///
/// Resolution order: any `N=0` answer is the abstention; an agreeing index
/// and name return the index; on disagreement the exact name match wins
/// over the numeric index, the index applies when only it is valid, and
/// anything else is unparseable. Bare names resolve by exact lookup.
pub fn parse_alignment(response: &str, lexicon: &Lexicon) -> AlignmentAnswer {
    if let Some((index, name_part)) = first_numbered_token(response) {
        if index == 0 {
            return AlignmentAnswer::NoneOfThem;
        }
        let name = normalize_lexeme(&name_part);
        if let Some(class) = lexicon.class(index) {
            if name == class {
                return AlignmentAnswer::Index(index);
            }
        }
        if let Some(by_name) = lexicon.index_of(&name) {
            return AlignmentAnswer::Index(by_name);
        }
        if index <= lexicon.len() {
            return AlignmentAnswer::Index(index);
        }
        return AlignmentAnswer::Unparseable;
    }

    // No numbered token; try the first line as a bare name.
    let first_line = response.lines().next().unwrap_or("");
    let stripped = first_line
        .trim()
        .trim_start_matches("Answer:")
        .trim_start_matches("answer:");
    let name = normalize_lexeme(stripped);
    if name == "none" {
        return AlignmentAnswer::NoneOfThem;
    }
    if let Some(idx) = lexicon.index_of(&name) {
        return AlignmentAnswer::Index(idx);
    }
    AlignmentAnswer::Unparseable
}

/// Finds the first `digits.` token and returns the number plus the name
/// text that follows it (up to punctuation or end of line).
fn first_numbered_token(response: &str) -> Option<(usize, String)> {
    let bytes = response.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            let mut j = i;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'.' {
                if let Ok(index) = response[start..j].parse::<usize>() {
                    let tail = &response[j + 1..];
                    let name: String = tail
                        .chars()
                        .take_while(|c| !matches!(c, '.' | ',' | ';' | '\n' | '<' | '>'))
                        .collect();
                    return Some((index, name));
                }
            }
            i = j;
        } else {
            i += 1;
        }
    }
    None
}

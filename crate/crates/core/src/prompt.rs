//! Prompt construction for both chains.
//!
//! Every prompt follows the same three-part structure: a task description,
//! ordered in-context question/answer examples, and the actual question with
//! one insertion slot. Templates are data: they can be loaded from files in
//! a small sectioned format, and the stock templates for triplet extraction
//! (original and paraphrase) and entity/predicate alignment ship embedded in
//! the binary.
//!
//! Rendering is pure and byte-deterministic. A configurable token budget
//! (approximated as ceil(chars / 4)) is enforced at render time; an overlong
//! prompt is an error rather than a silent truncation, since a truncated
//! lexicon enumeration would corrupt alignment answers.

use std::path::Path;

use thiserror::Error;

use crate::types::{CaptionRecord, Lexicon, LexiconKind};

/// Default render budget, matching the 4096-token completion window the
/// stock pipeline assumes.
pub const DEFAULT_MAX_PROMPT_TOKENS: usize = 4096;

/// Placeholder for the caption or lexeme inserted into the actual question.
pub const INPUT_SLOT: &str = "{INPUT}";
/// Placeholders expanded from the target lexicon in alignment task text.
pub const LEXICON_SLOT: &str = "{LEXICON}";
pub const COUNT_SLOT: &str = "{COUNT}";

const EXTRACT_ORIGINAL_TMPL: &str = include_str!("../templates/extract_original.tmpl");
const EXTRACT_PARAPHRASE_TMPL: &str = include_str!("../templates/extract_paraphrase.tmpl");
const ALIGN_ENTITY_TMPL: &str = include_str!("../templates/align_entity.tmpl");
const ALIGN_PREDICATE_TMPL: &str = include_str!("../templates/align_predicate.tmpl");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {0}: {1}")]
    Malformed(String, String),
    #[error("chain {chain:?} cannot render {what}")]
    ChainMismatch { chain: Chain, what: &'static str },
    #[error("lexicon kind {lexicon} does not match chain {chain:?}")]
    KindMismatch { chain: Chain, lexicon: LexiconKind },
    #[error("empty {0} given to renderer")]
    EmptyInput(&'static str),
    #[error("prompt of ~{tokens} tokens exceeds the budget of {budget}")]
    OverBudget { tokens: usize, budget: usize },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which stage of the pipeline a template serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Chain {
    ExtractOriginal,
    ExtractParaphrase,
    AlignEntity,
    AlignPredicate,
    Combined,
}

impl Chain {
    pub fn is_extraction(self) -> bool {
        matches!(
            self,
            Chain::ExtractOriginal | Chain::ExtractParaphrase | Chain::Combined
        )
    }

    pub fn alignment_kind(self) -> Option<LexiconKind> {
        match self {
            Chain::AlignEntity => Some(LexiconKind::Entity),
            Chain::AlignPredicate => Some(LexiconKind::Predicate),
            _ => None,
        }
    }
}

/// A three-part prompt template.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    chain: Chain,
    task: String,
    examples: Vec<(String, String)>,
    question: String,
    max_tokens: usize,
}

impl PromptTemplate {
    pub fn new(
        chain: Chain,
        task: impl Into<String>,
        examples: Vec<(String, String)>,
        question: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let task = task.into();
        let question = question.into();
        if question.matches(INPUT_SLOT).count() != 1 {
            return Err(PromptError::Malformed(
                format!("{chain:?}"),
                format!("question must contain exactly one {INPUT_SLOT} slot"),
            ));
        }
        Ok(Self {
            chain,
            task,
            examples,
            question,
            max_tokens: DEFAULT_MAX_PROMPT_TOKENS,
        })
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn chain(&self) -> Chain {
        self.chain
    }

    pub fn examples(&self) -> &[(String, String)] {
        &self.examples
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    /// Parses the sectioned template file format: `[TASK]`, repeated
    /// `[EXAMPLE.q]` / `[EXAMPLE.a]` pairs, and `[QUESTION]` holding the
    /// literal `{INPUT}` placeholder.
    pub fn parse(chain: Chain, text: &str, label: &str) -> Result<Self, PromptError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Task,
            ExampleQ,
            ExampleA,
            Question,
        }
        let mut task = String::new();
        let mut question = String::new();
        let mut examples: Vec<(String, String)> = Vec::new();
        let mut pending_q: Option<String> = None;
        let mut current = Section::None;
        let mut buf = String::new();

        let flush = |section: &Section,
                     buf: &mut String,
                     task: &mut String,
                     question: &mut String,
                     examples: &mut Vec<(String, String)>,
                     pending_q: &mut Option<String>|
         -> Result<(), PromptError> {
            let content = buf.trim_end_matches('\n').to_string();
            match section {
                Section::None => {}
                Section::Task => *task = content,
                Section::Question => *question = content,
                Section::ExampleQ => {
                    if pending_q.replace(content).is_some() {
                        return Err(PromptError::Malformed(
                            label.to_string(),
                            "two [EXAMPLE.q] sections without an [EXAMPLE.a]".into(),
                        ));
                    }
                }
                Section::ExampleA => {
                    let q = pending_q.take().ok_or_else(|| {
                        PromptError::Malformed(
                            label.to_string(),
                            "[EXAMPLE.a] without a preceding [EXAMPLE.q]".into(),
                        )
                    })?;
                    examples.push((q, content));
                }
            }
            buf.clear();
            Ok(())
        };

        for line in text.lines() {
            let next = match line.trim() {
                "[TASK]" => Some(Section::Task),
                "[EXAMPLE.q]" => Some(Section::ExampleQ),
                "[EXAMPLE.a]" => Some(Section::ExampleA),
                "[QUESTION]" => Some(Section::Question),
                _ => None,
            };
            if let Some(next) = next {
                flush(
                    &current,
                    &mut buf,
                    &mut task,
                    &mut question,
                    &mut examples,
                    &mut pending_q,
                )?;
                current = next;
            } else {
                if current == Section::None && !line.trim().is_empty() {
                    return Err(PromptError::Malformed(
                        label.to_string(),
                        "content before the first section header".into(),
                    ));
                }
                buf.push_str(line);
                buf.push('\n');
            }
        }
        flush(
            &current,
            &mut buf,
            &mut task,
            &mut question,
            &mut examples,
            &mut pending_q,
        )?;
        if pending_q.is_some() {
            return Err(PromptError::Malformed(
                label.to_string(),
                "[EXAMPLE.q] without a matching [EXAMPLE.a]".into(),
            ));
        }
        if task.is_empty() {
            return Err(PromptError::Malformed(
                label.to_string(),
                "missing [TASK]".into(),
            ));
        }
        if question.is_empty() {
            return Err(PromptError::Malformed(
                label.to_string(),
                "missing [QUESTION]".into(),
            ));
        }
        Self::new(chain, task, examples, question)
    }

    pub fn from_file(chain: Chain, path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(chain, &text, &path.display().to_string())
    }

    /// Full prompt text with `{INPUT}` left in place. For alignment chains
    /// the lexicon enumeration is substituted into the task description.
    pub fn skeleton(&self, lexicon: Option<&Lexicon>) -> Result<String, PromptError> {
        let mut task = self.task.clone();
        if let Some(lex) = lexicon {
            task = task
                .replace(COUNT_SLOT, &lex.len().to_string())
                .replace(LEXICON_SLOT, &enumerate_lexicon(lex));
        }
        let mut out = task;
        for (q, a) in &self.examples {
            out.push_str("\n\nQuestion: ");
            out.push_str(q);
            out.push_str("\nAnswer: ");
            out.push_str(a);
        }
        out.push_str("\n\nQuestion: ");
        out.push_str(&self.question);
        out.push_str(" Answer:");
        Ok(out)
    }

    fn render(&self, lexicon: Option<&Lexicon>, input: &str) -> Result<String, PromptError> {
        let prompt = self.skeleton(lexicon)?.replace(INPUT_SLOT, input);
        let tokens = approx_tokens(&prompt);
        if tokens > self.max_tokens {
            return Err(PromptError::OverBudget {
                tokens,
                budget: self.max_tokens,
            });
        }
        Ok(prompt)
    }
}

/// Crude token estimate used for the render budget and by the mock backend.
pub fn approx_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Space-separated `1.name 2.name ...` enumeration in lexicon order.
pub fn enumerate_lexicon(lexicon: &Lexicon) -> String {
    let mut out = String::new();
    for (i, class) in lexicon.classes().iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{}.{}", i + 1, class));
    }
    out
}

/// Re-parses an enumeration produced by [`enumerate_lexicon`]. Entries are
/// recognized at whitespace followed by `digits.`, so class names may
/// themselves contain spaces. Numbering must be contiguous from 1.
pub fn parse_enumeration(
    text: &str,
    kind: LexiconKind,
    name: &str,
) -> Result<Lexicon, PromptError> {
    let text = text.trim();
    let mut entries: Vec<(usize, String)> = Vec::new();
    let mut rest = text;
    loop {
        let dot = match rest.find('.') {
            Some(d) if d > 0 && rest[..d].chars().all(|c| c.is_ascii_digit()) => d,
            _ => {
                return Err(PromptError::Malformed(
                    name.to_string(),
                    format!("expected `N.name` at `{}`", truncate(rest)),
                ))
            }
        };
        let index: usize = rest[..dot].parse().map_err(|_| {
            PromptError::Malformed(
                name.to_string(),
                format!("bad index at `{}`", truncate(rest)),
            )
        })?;
        let tail = &rest[dot + 1..];
        // The next entry starts at whitespace followed by digits and a dot.
        let mut split_at = tail.len();
        let bytes = tail.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i].is_ascii_whitespace() {
                let mut j = i + 1;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j > i + 1 && j < bytes.len() && bytes[j] == b'.' {
                    split_at = i;
                    break;
                }
            }
            i += 1;
        }
        let class = tail[..split_at].trim();
        entries.push((index, class.to_string()));
        if split_at == tail.len() {
            break;
        }
        rest = tail[split_at..].trim_start();
    }
    for (pos, (index, _)) in entries.iter().enumerate() {
        if *index != pos + 1 {
            return Err(PromptError::Malformed(
                name.to_string(),
                format!(
                    "non-contiguous numbering: expected {}, found {}",
                    pos + 1,
                    index
                ),
            ));
        }
    }
    let classes = entries.into_iter().map(|(_, c)| c).collect();
    Lexicon::new(kind, name, classes)
        .map_err(|e| PromptError::Malformed(name.to_string(), e.to_string()))
}

fn truncate(s: &str) -> String {
    s.chars().take(24).collect()
}

/// Renders a Chain-1 (or combined) prompt around a caption.
pub fn render_extraction_prompt(
    template: &PromptTemplate,
    caption: &CaptionRecord,
) -> Result<String, PromptError> {
    if !template.chain.is_extraction() {
        return Err(PromptError::ChainMismatch {
            chain: template.chain,
            what: "an extraction prompt",
        });
    }
    let text = caption.text.trim();
    if text.is_empty() {
        return Err(PromptError::EmptyInput("caption"));
    }
    template.render(None, text)
}

/// Renders a Chain-2 prompt asking to align one lexeme against a lexicon.
pub fn render_alignment_prompt(
    template: &PromptTemplate,
    lexeme: &str,
    lexicon: &Lexicon,
) -> Result<String, PromptError> {
    let expected = template
        .chain
        .alignment_kind()
        .ok_or(PromptError::ChainMismatch {
            chain: template.chain,
            what: "an alignment prompt",
        })?;
    if lexicon.kind() != expected {
        return Err(PromptError::KindMismatch {
            chain: template.chain,
            lexicon: lexicon.kind(),
        });
    }
    let lexeme = lexeme.trim();
    if lexeme.is_empty() {
        return Err(PromptError::EmptyInput("lexeme"));
    }
    template.render(Some(lexicon), lexeme)
}

/// The stock templates, embedded at compile time.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub extract_original: PromptTemplate,
    pub extract_paraphrase: PromptTemplate,
    pub align_entity: PromptTemplate,
    pub align_predicate: PromptTemplate,
}

impl TemplateSet {
    pub fn bundled() -> Self {
        // The embedded templates are validated by tests; parse cannot fail here.
        Self {
            extract_original: PromptTemplate::parse(
                Chain::ExtractOriginal,
                EXTRACT_ORIGINAL_TMPL,
                "bundled extract_original",
            )
            .expect("bundled extract_original template is well-formed"),
            extract_paraphrase: PromptTemplate::parse(
                Chain::ExtractParaphrase,
                EXTRACT_PARAPHRASE_TMPL,
                "bundled extract_paraphrase",
            )
            .expect("bundled extract_paraphrase template is well-formed"),
            align_entity: PromptTemplate::parse(
                Chain::AlignEntity,
                ALIGN_ENTITY_TMPL,
                "bundled align_entity",
            )
            .expect("bundled align_entity template is well-formed"),
            align_predicate: PromptTemplate::parse(
                Chain::AlignPredicate,
                ALIGN_PREDICATE_TMPL,
                "bundled align_predicate",
            )
            .expect("bundled align_predicate template is well-formed"),
        }
    }

    /// Loads overrides from a directory holding any of the four
    /// `<chain>.tmpl` files; missing files fall back to the bundled text.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::bundled();
        let overrides = [
            ("extract_original.tmpl", Chain::ExtractOriginal),
            ("extract_paraphrase.tmpl", Chain::ExtractParaphrase),
            ("align_entity.tmpl", Chain::AlignEntity),
            ("align_predicate.tmpl", Chain::AlignPredicate),
        ];
        for (file, chain) in overrides {
            let path = dir.join(file);
            if path.exists() {
                let tmpl = PromptTemplate::from_file(chain, &path)?;
                match chain {
                    Chain::ExtractOriginal => set.extract_original = tmpl,
                    Chain::ExtractParaphrase => set.extract_paraphrase = tmpl,
                    Chain::AlignEntity => set.align_entity = tmpl,
                    Chain::AlignPredicate => set.align_predicate = tmpl,
                    Chain::Combined => unreachable!(),
                }
            }
        }
        Ok(set)
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.extract_original = self.extract_original.with_max_tokens(max_tokens);
        self.extract_paraphrase = self.extract_paraphrase.with_max_tokens(max_tokens);
        self.align_entity = self.align_entity.with_max_tokens(max_tokens);
        self.align_predicate = self.align_predicate.with_max_tokens(max_tokens);
        self
    }
}

/// Builds the optional single-prompt variant that folds paraphrasing,
/// extraction, and both alignments into one four-step request. The lexicon
/// enumerations are baked into the task text, so the result renders like any
/// extraction template. Off by default in the pipeline.
pub fn default_combined_template(
    entities: &Lexicon,
    predicates: &Lexicon,
) -> Result<PromptTemplate, PromptError> {
    let task = format!(
        "From the given sentence, the task is to extract meaningful triplets formed as <subject, predicate, object> whose subject, predicate and object are aligned with the predefined entity and predicate lexicons.\n\
         To extract meaningful triplets from the sentence, please follow the following four steps.\n\
         Step 1: Paraphrase the sentence.\n\
         Step 2: From the paraphrased sentence obtained in the Step 1, extract meaningful triplets formed as <subject, predicate, object>.\n\
         Step 3: For the subject and object of each triplet obtained in the Step 2, find semantically relevant lexeme in the predefined entity lexicon. However, if there is no semantically relevant lexeme in the predefined entity lexicon, answer 0.None.\n\
         Step 4: For the predicate of each triplet obtained in the Step 3, find semantically relevant lexeme in the predefined predicate lexicon. However, if there is no semantically relevant lexeme in the predefined predicate lexicon, answer 0.None.\n\
         A triplet with any component answered 0.None is dropped from the final answer.\n\
         The predefined entity lexicon containing {} lexemes is numbered as follows: {}.\n\
         The predefined predicate lexicon containing {} lexemes is numbered as follows: {}.\n\
         Let's take a few examples to understand how to extract meaningful triplets.",
        entities.len(),
        enumerate_lexicon(entities),
        predicates.len(),
        enumerate_lexicon(predicates),
    );
    let examples = vec![
        (
            "Given the sentence \"A beautiful woman walking a dog on top of a beach,\" extract meaningful triplets.".to_string(),
            "Step 1: The sentence can be paraphrased as:\n\
             A lovely woman strolling with a dog on the beach.\n\
             Step 2: Meaningful triplets extracted from the paraphrased sentence are:\n\
             <woman, strolling with, dog>, <woman, on, beach>, <dog, on, beach>.\n\
             Step 3: The subjects and objects aligned with the entity lexicon are 149.woman, 37.dog, and 7.beach.\n\
             Step 4: The predicates aligned with the predicate lexicon are 50.with and 31.on.\n\
             The meaningful triplets are <woman, with, dog>, <woman, on, beach>, and <dog, on, beach>.".to_string(),
        ),
        (
            "Given the sentence \"Two men sit on a bench near the sidewalk and one of them talks on a cell phone,\" extract meaningful triplets.".to_string(),
            "Step 1: The sentence can be paraphrased as:\n\
             Two guys are seated on a bench near the road, and one of them talks on a mobile phone.\n\
             Step 2: Meaningful triplets extracted from the paraphrased sentence are:\n\
             <guys, seated on, bench>, <bench, near, road>, <guy, talks on, phone>.\n\
             Step 3: The subjects and objects aligned with the entity lexicon are 56.guy, 10.bench, 124.street, and 92.phone.\n\
             Step 4: The predicates aligned with the predicate lexicon are 40.sitting on, 29.near, and 0.None.\n\
             The meaningful triplets are <guy, sitting on, bench> and <bench, near, street>.".to_string(),
        ),
        (
            "Given the sentence \"One person sits in a chair looking at her phone while another rests on the couch,\" extract meaningful triplets.".to_string(),
            "Step 1: The sentence can be paraphrased as:\n\
             A person is seated in a chair, using their phone, while someone else is relaxing on the couch.\n\
             Step 2: Meaningful triplets extracted from the paraphrased sentence are:\n\
             <person, seated in, chair>, <person, using, phone>, <person, relaxing on, couch>.\n\
             Step 3: The subjects and objects aligned with the entity lexicon are 91.person, 28.chair, 92.phone, and 0.None.\n\
             Step 4: The predicates aligned with the predicate lexicon are 40.sitting on, 44.using, and 26.lying on.\n\
             The meaningful triplets are <person, sitting on, chair> and <person, using, phone>.".to_string(),
        ),
        (
            "Given the sentence \"A lady and a child near a park bench with kites and ducks flying in the sky and on the ground,\" extract meaningful triplets.".to_string(),
            "Step 1: The sentence can be paraphrased as:\n\
             A woman and a child are close to a park bench, while kites soar through the sky and ducks move around on the ground.\n\
             Step 2: Meaningful triplets extracted from the paraphrased sentence are:\n\
             <woman, close to, park bench>, <child, close to, park bench>, <kites, soar through, sky>, <ducks, move around, ground>.\n\
             Step 3: The subjects and objects aligned with the entity lexicon are 149.woman, 10.bench, 29.child, 69.kite, 0.None, 12.bird, and 0.None.\n\
             Step 4: The predicates aligned with the predicate lexicon are 29.near, 15.flying in, and 0.None.\n\
             The meaningful triplets are <woman, near, bench> and <child, near, bench>.".to_string(),
        ),
    ];
    PromptTemplate::new(
        Chain::Combined,
        task,
        examples,
        "Given the sentence \"{INPUT},\" extract meaningful triplets.",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::normalize_lexeme;
    use proptest::prelude::*;

    fn vg_entities() -> Lexicon {
        Lexicon::from_text(
            LexiconKind::Entity,
            "vg_entities",
            include_str!("../fixtures/vg_entities.txt"),
        )
        .unwrap()
    }

    fn vg_predicates() -> Lexicon {
        Lexicon::from_text(
            LexiconKind::Predicate,
            "vg_predicates",
            include_str!("../fixtures/vg_predicates.txt"),
        )
        .unwrap()
    }

    fn caption(text: &str) -> CaptionRecord {
        CaptionRecord::new("img", "cap", text).unwrap()
    }

    #[test]
    fn bundled_templates_parse() {
        let set = TemplateSet::bundled();
        assert_eq!(set.extract_original.examples().len(), 6);
        assert_eq!(set.extract_paraphrase.examples().len(), 6);
        assert_eq!(set.align_entity.examples().len(), 15);
        assert_eq!(set.align_predicate.examples().len(), 14);
    }

    #[test]
    fn paraphrase_prompt_carries_clock_example() {
        let set = TemplateSet::bundled();
        let prompt = render_extraction_prompt(
            &set.extract_paraphrase,
            &caption("Four clocks sitting on a floor next to a woman's feet"),
        )
        .unwrap();
        assert!(prompt.contains("<clocks, placed on, floor>"));
        assert!(prompt.contains("<clocks, beside, feet>"));
        assert!(prompt.contains("Step 1: Paraphrase the sentence."));
        assert!(prompt.ends_with(
            "Question: Given the sentence \"Four clocks sitting on a floor next to a woman's feet,\" extract meaningful triplets. Answer:"
        ));
    }

    #[test]
    fn original_prompt_carries_clock_example() {
        let set = TemplateSet::bundled();
        let prompt = render_extraction_prompt(
            &set.extract_original,
            &caption("Four clocks sitting on a floor next to a woman's feet"),
        )
        .unwrap();
        assert!(prompt.contains("<clock, sitting on, floor>"));
        assert!(prompt.contains("<clock, next to, feet>"));
    }

    #[test]
    fn extraction_prompt_embeds_caption_verbatim() {
        let set = TemplateSet::bundled();
        let prompt = render_extraction_prompt(&set.extract_original, &caption("x")).unwrap();
        assert!(prompt.ends_with("Given the sentence \"x,\" extract meaningful triplets. Answer:"));
        let again = render_extraction_prompt(&set.extract_original, &caption("x")).unwrap();
        assert_eq!(prompt, again);
    }

    #[test]
    fn extraction_rejects_empty_caption() {
        let set = TemplateSet::bundled();
        let cap = CaptionRecord {
            image_id: "i".into(),
            caption_id: "c".into(),
            text: " ".into(),
        };
        assert!(matches!(
            render_extraction_prompt(&set.extract_original, &cap),
            Err(PromptError::EmptyInput("caption"))
        ));
    }

    #[test]
    fn alignment_prompt_enumerates_lexicon_and_examples() {
        let set = TemplateSet::bundled();
        let prompt = render_alignment_prompt(&set.align_entity, "pigeon", &vg_entities()).unwrap();
        assert!(prompt.contains("1.airplane 2.animal"));
        assert!(prompt.contains("150.zebra."));
        assert!(prompt.contains("please answer 0.None"));
        assert!(prompt.contains("Given the lexeme \"pigeon,\" find semantically relevant lexeme in the predefined entity lexicon.\nAnswer: 12.bird"));

        let pred =
            render_alignment_prompt(&set.align_predicate, "next to", &vg_predicates()).unwrap();
        assert!(pred.contains("Answer: 29.near"));
        assert!(pred.contains("50.with."));
    }

    #[test]
    fn alignment_rejects_kind_mismatch_and_empty_lexeme() {
        let set = TemplateSet::bundled();
        assert!(matches!(
            render_alignment_prompt(&set.align_entity, "pigeon", &vg_predicates()),
            Err(PromptError::KindMismatch { .. })
        ));
        assert!(matches!(
            render_alignment_prompt(&set.align_entity, "", &vg_entities()),
            Err(PromptError::EmptyInput("lexeme"))
        ));
    }

    #[test]
    fn over_budget_prompt_is_an_error() {
        let set = TemplateSet::bundled().with_max_tokens(64);
        let err = render_extraction_prompt(&set.extract_original, &caption("a dog"));
        assert!(matches!(err, Err(PromptError::OverBudget { .. })));
    }

    #[test]
    fn enumeration_round_trips_vg_lexicons() {
        for lex in [vg_entities(), vg_predicates()] {
            let text = enumerate_lexicon(&lex);
            let back = parse_enumeration(&text, lex.kind(), lex.name()).unwrap();
            assert_eq!(back.classes(), lex.classes());
        }
    }

    #[test]
    fn combined_template_renders_both_lexicons() {
        let tmpl = default_combined_template(&vg_entities(), &vg_predicates()).unwrap();
        let prompt =
            render_extraction_prompt(&tmpl, &caption("a bus parked on the street")).unwrap();
        assert!(prompt.contains("150.zebra"));
        assert!(prompt.contains("50.with"));
        assert!(prompt.contains("Step 4"));
    }

    #[test]
    fn template_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extract_original.tmpl");
        std::fs::write(&path, include_str!("../templates/extract_original.tmpl")).unwrap();
        let set = TemplateSet::from_dir(dir.path()).unwrap();
        assert_eq!(
            set.extract_original.skeleton(None).unwrap(),
            TemplateSet::bundled()
                .extract_original
                .skeleton(None)
                .unwrap()
        );
    }

    #[test]
    fn malformed_template_files_rejected() {
        assert!(PromptTemplate::parse(Chain::ExtractOriginal, "no sections at all", "t").is_err());
        assert!(PromptTemplate::parse(
            Chain::ExtractOriginal,
            "[TASK]\nt\n[QUESTION]\nno slot here",
            "t"
        )
        .is_err());
        assert!(PromptTemplate::parse(
            Chain::ExtractOriginal,
            "[TASK]\nt\n[EXAMPLE.q]\nq\n[QUESTION]\n{INPUT}",
            "t"
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn enumeration_round_trip_holds_for_random_lexicons(
            classes in proptest::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,2}", 1..40)
        ) {
            let mut unique: Vec<String> = Vec::new();
            for c in classes {
                let norm = normalize_lexeme(&c);
                if !norm.is_empty() && !unique.contains(&norm) {
                    unique.push(norm);
                }
            }
            prop_assume!(!unique.is_empty());
            let lex = Lexicon::new(LexiconKind::Entity, "random", unique).unwrap();
            let text = enumerate_lexicon(&lex);
            let back = parse_enumeration(&text, LexiconKind::Entity, "random").unwrap();
            prop_assert_eq!(back.classes(), lex.classes());
        }
    }
}

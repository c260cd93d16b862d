//! Command-line front end: `run`, `align`, `stats`, and `cost`.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 backend
//! failure, 4 run completed with skipped captions.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::align::{align_hierarchical, align_lexeme, AlignmentTable};
use crate::config::{BackendChoice, Overrides, RunConfig};
#[cfg(feature = "http")]
use crate::llm::HttpBackend;
use crate::llm::{
    estimate_cost, format_dollars, CompletionCache, CompletionClient, CostModel, MockBackend,
    ReplayBackend, StepTokens,
};
use crate::pipeline::{self, read_dataset_jsonl, RunReport};
use crate::stats::{compare_stats, compute_stats};
use crate::types::{
    normalize_lexeme, AlignedTriplet, GenerationMetadata, Lexicon, LexiconKind, RawTriplet,
    TripletDataset,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Parser)]
#[command(
    name = "graphcap",
    version,
    about = "Builds unlocalized scene-graph triplet datasets from image captions"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the full pipeline described by a config file.
    Run(RunArgs),
    /// Align a single lexeme against a lexicon.
    Align(AlignArgs),
    /// Compute or compare dataset statistics.
    Stats(StatsArgs),
    /// Estimate completion costs from token counts or a run report.
    Cost(CostArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML). Every field can be overridden below.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured backend.
    #[arg(long)]
    backend: Option<BackendChoice>,
    /// Skip the paraphrase extraction chain.
    #[arg(long)]
    no_paraphrase: bool,
    /// Use the single combined prompt instead of the two chains.
    #[arg(long)]
    combined: bool,
    /// Override the output dataset path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the run report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Override the completion cache path.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Override the mock fixture path.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Override the knowledge-base file for baseline runs.
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Override the checkpoint directory.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Override the template directory.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Override the model id.
    #[arg(long)]
    model: Option<String>,
    /// Override the HTTP endpoint base URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Override the environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Resume from checkpoints in the configured checkpoint dir.
    #[arg(long)]
    resume: bool,
    /// Worker and in-flight request bound.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Override the prompt token budget.
    #[arg(long)]
    max_prompt_tokens: Option<usize>,
    /// Override the hierarchical sub-group size.
    #[arg(long)]
    group_size: Option<usize>,
    /// Override the sampling temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Override prices per 1K tokens as INPUT,OUTPUT.
    #[arg(long)]
    prices: Option<String>,
}

#[derive(Args)]
struct AlignArgs {
    /// The lexeme to align.
    #[arg(long)]
    lexeme: String,
    /// Lexicon file (text, one class per line, or JSON).
    #[arg(long)]
    lexicon: PathBuf,
    /// Lexicon kind for plain-text files; file names containing "pred"
    /// default to predicate.
    #[arg(long)]
    kind: Option<String>,
    /// Use the sub-group scheme for lexicons too large for one prompt.
    #[arg(long)]
    hierarchical: bool,
    /// Sub-group size for --hierarchical.
    #[arg(long, default_value_t = 200)]
    group_size: usize,
    /// Completion backend.
    #[arg(long, default_value = "mock")]
    backend: String,
    /// Mock fixture (JSONL) for --backend mock.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Completion cache path.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Model id (cache key component).
    #[arg(long, default_value = "gpt-3.5-turbo")]
    model: String,
    /// Endpoint base URL for --backend http.
    #[arg(long, default_value = "https://api.openai.com/v1")]
    endpoint: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    /// Template directory override.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Dataset JSONL to analyze.
    #[arg(long, required_unless_present = "compare")]
    dataset: Option<PathBuf>,
    /// Predicate lexicon.
    #[arg(long)]
    lexicon: PathBuf,
    /// Override the image count (defaults to distinct image ids).
    #[arg(long)]
    images: Option<usize>,
    /// Write the histogram CSV (lexicon order) here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the frequency-sorted histogram CSV here.
    #[arg(long)]
    csv_sorted: Option<PathBuf>,
    /// Compare two datasets (A B); emits a delta CSV.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    compare: Option<Vec<PathBuf>>,
    /// Write the comparison CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    /// Recompute costs recorded in a run report.
    #[arg(long, conflicts_with = "tokens")]
    report: Option<PathBuf>,
    /// Per-step token counts as IN,OUT (K suffix allowed), repeatable.
    #[arg(long)]
    tokens: Vec<String>,
    /// Prices per 1K tokens as INPUT,OUTPUT.
    #[arg(long, default_value = "0.0005,0.0015")]
    prices: String,
}

pub fn main_with(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Align(args) => cmd_align(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Cost(args) => cmd_cost(args),
    }
}

fn cmd_run(args: RunArgs) -> i32 {
    let config = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let prices = match args.prices.as_deref().map(parse_prices).transpose() {
        Ok(p) => p.map(|m| (m.input_price_per_1k, m.output_price_per_1k)),
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let overrides = Overrides {
        backend: args.backend,
        out: args.out,
        report: args.report,
        cache: args.cache,
        mock_fixture: args.fixture,
        kb: args.kb,
        checkpoint_dir: args.checkpoint_dir,
        templates_dir: args.templates,
        model: args.model,
        endpoint: args.endpoint,
        api_key_env: args.api_key_env,
        no_paraphrase: args.no_paraphrase,
        combined: args.combined,
        resume: args.resume,
        concurrency: args.concurrency,
        max_prompt_tokens: args.max_prompt_tokens,
        group_size: args.group_size,
        temperature: args.temperature,
        prices,
    };
    let resolved = match config.resolve(&args.config, &overrides) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match pipeline::run(&resolved) {
        Ok(outcome) => {
            println!(
                "wrote {} triplets over {} images (density {:.1}) to {}",
                outcome.report.dataset.triplets,
                outcome.report.images,
                outcome.report.dataset.density_display,
                resolved.out.display()
            );
            println!("report: {}", resolved.report.display());
            println!("cost: {}", format_dollars(outcome.report.cost.total));
            if outcome.report.extraction.skipped_captions > 0 {
                eprintln!(
                    "warning: {} captions skipped",
                    outcome.report.extraction.skipped_captions
                );
                EXIT_PARTIAL
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_backend_failure() {
                EXIT_BACKEND
            } else {
                EXIT_CONFIG
            }
        }
    }
}

fn lexicon_kind_for(args_kind: Option<&str>, path: &Path) -> Result<LexiconKind, String> {
    match args_kind {
        Some("entity") => Ok(LexiconKind::Entity),
        Some("predicate") => Ok(LexiconKind::Predicate),
        Some(other) => Err(format!(
            "unknown kind `{other}` (expected entity|predicate)"
        )),
        None => {
            let name = path
                .file_name()
                .map(|s| s.to_string_lossy().to_lowercase())
                .unwrap_or_default();
            if name.contains("pred") {
                Ok(LexiconKind::Predicate)
            } else {
                Ok(LexiconKind::Entity)
            }
        }
    }
}

fn cmd_align(args: AlignArgs) -> i32 {
    let kind = match lexicon_kind_for(args.kind.as_deref(), &args.lexicon) {
        Ok(k) => k,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let lexicon = match Lexicon::from_path(&args.lexicon, kind) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let lexeme = normalize_lexeme(&args.lexeme);
    if lexeme.is_empty() {
        eprintln!("error: lexeme normalizes to nothing");
        return EXIT_CONFIG;
    }
    let templates = match args.templates.as_deref() {
        Some(dir) => match crate::prompt::TemplateSet::from_dir(dir) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        },
        None => crate::prompt::TemplateSet::bundled(),
    };
    let template = match lexicon.kind() {
        LexiconKind::Entity => &templates.align_entity,
        LexiconKind::Predicate => &templates.align_predicate,
    };

    let cache = match args.cache.as_deref() {
        Some(path) => match CompletionCache::open(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        },
        None => CompletionCache::in_memory(),
    };
    let (backend, namespace): (Arc<dyn crate::llm::CompletionBackend>, &str) =
        match args.backend.as_str() {
            // Without --fixture the mock backend is empty; self-alignments
            // still resolve locally.
            "mock" => match args.fixture.as_deref() {
                Some(fixture) => match MockBackend::from_fixture(fixture) {
                    Ok(b) => (Arc::new(b), "mock"),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return EXIT_CONFIG;
                    }
                },
                None => (Arc::new(MockBackend::default()), "mock"),
            },
            // Replay reads entries a mock run wrote; keys share its namespace.
            "replay" => (Arc::new(ReplayBackend), "mock"),
            #[cfg(feature = "http")]
            "http" => match HttpBackend::new(&args.endpoint, &args.model, &args.api_key_env) {
                Ok(b) => (Arc::new(b), "http"),
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_BACKEND;
                }
            },
            #[cfg(not(feature = "http"))]
            "http" => {
                eprintln!("error: this build has no http backend (enable the `http` feature)");
                return EXIT_CONFIG;
            }
            other => {
                eprintln!("error: unknown backend `{other}`");
                return EXIT_CONFIG;
            }
        };
    let client = CompletionClient::with_namespace(backend, cache, &args.model, namespace);

    let result = if args.hierarchical {
        align_hierarchical(&lexeme, &lexicon, template, args.group_size, &client)
    } else {
        let table = AlignmentTable::new(lexicon.name());
        align_lexeme(&lexeme, &lexicon, template, &client, &table)
    };
    match result {
        Ok(Some(index)) => {
            println!("{index}.{}", lexicon.class(index).unwrap_or_default());
            EXIT_OK
        }
        Ok(None) => {
            println!("0.None");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_BACKEND
        }
    }
}

/// Rebuilds an in-memory dataset from emitted rows so the stats tooling can
/// run on bare JSONL files.
fn dataset_from_rows(
    rows: &[pipeline::DatasetRow],
    images_override: Option<usize>,
) -> TripletDataset {
    let triplets: Vec<AlignedTriplet> = rows
        .iter()
        .map(|r| AlignedTriplet {
            subject_class: Some(r.subject_idx),
            predicate_class: Some(r.predicate_idx),
            object_class: Some(r.object_idx),
            raw: RawTriplet {
                subject: r.subject.clone(),
                predicate: r.predicate.clone(),
                object: r.object.clone(),
                source: r.source,
                image_id: r.image_id.clone(),
                caption_id: String::new(),
            },
        })
        .collect();
    let mut dataset = TripletDataset {
        triplets,
        image_count: 0,
        metadata: GenerationMetadata {
            backend: "file".into(),
            model: String::new(),
            entity_lexicon: String::new(),
            predicate_lexicon: String::new(),
            use_paraphrase: false,
            combined_prompt: false,
        },
    };
    dataset.image_count = images_override.unwrap_or_else(|| dataset.distinct_triplet_images());
    dataset
}

fn load_dataset(path: &Path, images: Option<usize>) -> Result<TripletDataset, (String, i32)> {
    let rows = read_dataset_jsonl(path).map_err(|e| (e.to_string(), EXIT_CONFIG))?;
    if rows.is_empty() {
        return Err((format!("dataset {} is empty", path.display()), EXIT_CONFIG));
    }
    Ok(dataset_from_rows(&rows, images))
}

fn cmd_stats(args: StatsArgs) -> i32 {
    let predicates = match Lexicon::from_path(&args.lexicon, LexiconKind::Predicate) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };

    if let Some(pair) = &args.compare {
        let (a, b) = (&pair[0], &pair[1]);
        let stats = (|| -> Result<_, (String, i32)> {
            let da = load_dataset(a, None)?;
            let db = load_dataset(b, None)?;
            let sa = compute_stats(&da, &predicates).map_err(|e| (e.to_string(), EXIT_CONFIG))?;
            let sb = compute_stats(&db, &predicates).map_err(|e| (e.to_string(), EXIT_CONFIG))?;
            compare_stats(&sa, &sb, &predicates).map_err(|e| (e.to_string(), EXIT_CONFIG))
        })();
        return match stats {
            Ok(cmp) => {
                let csv = cmp.to_csv();
                if let Some(out) = &args.out {
                    if let Err(e) = std::fs::write(out, &csv) {
                        eprintln!("error: {e}");
                        return EXIT_CONFIG;
                    }
                } else {
                    print!("{csv}");
                }
                eprintln!(
                    "density delta {:+.4}, zero-frequency delta {:+}",
                    cmp.density_delta, cmp.zero_frequency_delta
                );
                EXIT_OK
            }
            Err((msg, code)) => {
                eprintln!("error: {msg}");
                code
            }
        };
    }

    let dataset = match load_dataset(args.dataset.as_ref().expect("clap enforces"), args.images) {
        Ok(d) => d,
        Err((msg, code)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    let stats = match compute_stats(&dataset, &predicates) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&stats).expect("stats serialize")
    );
    if let Some(path) = &args.csv {
        if let Err(e) = std::fs::write(path, stats.histogram_csv(&predicates)) {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    }
    if let Some(path) = &args.csv_sorted {
        if let Err(e) = std::fs::write(path, stats.frequency_sorted_csv(&predicates)) {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    }
    EXIT_OK
}

fn parse_token_pair(s: &str) -> Result<(u64, u64), String> {
    let (input, output) = s
        .split_once(',')
        .ok_or_else(|| format!("expected IN,OUT: `{s}`"))?;
    Ok((parse_tokens(input)?, parse_tokens(output)?))
}

fn parse_tokens(s: &str) -> Result<u64, String> {
    let s = s.trim();
    if let Some(thousands) = s.strip_suffix(['K', 'k']) {
        let value: f64 = thousands
            .parse()
            .map_err(|_| format!("bad token count `{s}`"))?;
        if value < 0.0 {
            return Err(format!("negative token count `{s}`"));
        }
        Ok((value * 1000.0).round() as u64)
    } else {
        s.parse().map_err(|_| format!("bad token count `{s}`"))
    }
}

fn cmd_cost(args: CostArgs) -> i32 {
    if let Some(report_path) = &args.report {
        let report: RunReport = match std::fs::read_to_string(report_path)
            .map_err(|e| e.to_string())
            .and_then(|text| serde_json::from_str(&text).map_err(|e| e.to_string()))
        {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        };
        for (step, cost) in &report.cost.per_step {
            println!("{step}: {}", format_dollars(*cost));
        }
        println!("total: {}", format_dollars(report.cost.total));
        return EXIT_OK;
    }

    if args.tokens.is_empty() {
        eprintln!("error: provide --report or at least one --tokens IN,OUT");
        return EXIT_CONFIG;
    }
    let prices = match parse_prices(&args.prices) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let mut steps = Vec::new();
    for (i, spec) in args.tokens.iter().enumerate() {
        match parse_token_pair(spec) {
            Ok((input_tokens, output_tokens)) => steps.push(StepTokens {
                step: format!("step {}", i + 1),
                input_tokens,
                output_tokens,
            }),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        }
    }
    let breakdown = estimate_cost(&steps, &prices);
    for (step, cost) in &breakdown.per_step {
        println!("{step}: {}", format_dollars(*cost));
    }
    println!("total: {}", format_dollars(breakdown.total));
    EXIT_OK
}

fn parse_prices(s: &str) -> Result<CostModel, String> {
    let (input, output) = s
        .split_once(',')
        .ok_or_else(|| format!("expected INPUT,OUTPUT prices: `{s}`"))?;
    let input: f64 = input
        .trim()
        .parse()
        .map_err(|_| format!("bad price `{input}`"))?;
    let output: f64 = output
        .trim()
        .parse()
        .map_err(|_| format!("bad price `{output}`"))?;
    if input < 0.0 || output < 0.0 {
        return Err("prices must be non-negative".into());
    }
    Ok(CostModel::new(input, output))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_specs_parse_with_and_without_k() {
        assert_eq!(parse_tokens("0.52K").unwrap(), 520);
        assert_eq!(parse_tokens("0.16k").unwrap(), 160);
        assert_eq!(parse_tokens("520").unwrap(), 520);
        assert!(parse_tokens("x").is_err());
        assert_eq!(parse_token_pair("0.89K,0.48K").unwrap(), (890, 480));
    }

    #[test]
    fn prices_parse() {
        let model = parse_prices("0.0005,0.0015").unwrap();
        assert_eq!(model.input_price_per_1k, 0.0005);
        assert_eq!(model.output_price_per_1k, 0.0015);
        assert!(parse_prices("1").is_err());
        assert!(parse_prices("-1,0").is_err());
    }

    #[test]
    fn kind_inference_prefers_flag_then_filename() {
        let pred_path = PathBuf::from("vg_predicates.txt");
        let ent_path = PathBuf::from("vg_entities.txt");
        assert_eq!(
            lexicon_kind_for(None, &pred_path).unwrap(),
            LexiconKind::Predicate
        );
        assert_eq!(
            lexicon_kind_for(None, &ent_path).unwrap(),
            LexiconKind::Entity
        );
        assert_eq!(
            lexicon_kind_for(Some("entity"), &pred_path).unwrap(),
            LexiconKind::Entity
        );
        assert!(lexicon_kind_for(Some("bogus"), &ent_path).is_err());
    }
}

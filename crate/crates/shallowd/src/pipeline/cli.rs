//! Command-line interface: `train`, `parse`, `score`, and `inspect`.
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::corpus::{self, Document, Relation};
use crate::explicit::{self, ArgType};
use crate::pipeline::{self, ModelBundle, PipelineConfig, PipelineError};
use crate::scorer::{self, MatchMode};

#[derive(Parser)]
#[command(
    name = "shallowd",
    about = "Shallow discourse parser: train, parse, score, inspect",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train all six models and write a bundle directory.
    Train {
        /// Parses file (JSON keyed by document id)
        #[arg(long)]
        parses: PathBuf,
        /// Gold relations file (NDJSON)
        #[arg(long)]
        relations: PathBuf,
        /// Directory of raw text files named by document id
        #[arg(long)]
        raw_dir: Option<PathBuf>,
        /// Pipeline configuration (TOML); defaults apply when absent
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the model bundle
        #[arg(long)]
        out_dir: PathBuf,
        /// Run seed (overrides the config; SHALLOWD_SEED overrides both)
        #[arg(long)]
        seed: Option<u64>,
        /// Embedding file (overrides the config)
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Parse a corpus with a trained bundle and write NDJSON relations.
    Parse {
        #[arg(long)]
        parses: PathBuf,
        #[arg(long)]
        raw_dir: Option<PathBuf>,
        /// Model bundle directory written by `train`
        #[arg(long)]
        models: PathBuf,
        /// Output relations file
        #[arg(long)]
        out: PathBuf,
        /// Also consider sentence pairs across paragraph boundaries
        #[arg(long)]
        cross_paragraph: bool,
    },
    /// Score predicted relations against gold.
    Score {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Use the 70% partial-match rule instead of exact spans
        #[arg(long)]
        partial: bool,
        /// Emit the report as JSON instead of the table
        #[arg(long)]
        json: bool,
    },
    /// Dump the extracted features for one gold relation.
    Inspect {
        #[arg(long)]
        parses: PathBuf,
        #[arg(long)]
        raw_dir: Option<PathBuf>,
        #[arg(long)]
        relations: PathBuf,
        /// Document id
        #[arg(long)]
        doc: String,
        /// Relation id within the document
        #[arg(long)]
        relation: u64,
    },
}

/// Runs the CLI and returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let usage_ok = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if usage_ok { 0 } else { 1 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("SHALLOWD_SEED").ok()?.parse().ok()
}

fn load_corpus(parses: &Path, raw_dir: &Option<PathBuf>) -> Result<Vec<Document>, PipelineError> {
    Ok(corpus::load_corpus(parses, raw_dir.as_deref())?)
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Train {
            parses,
            relations,
            raw_dir,
            config,
            out_dir,
            seed,
            embeddings,
        } => {
            let mut cfg = match config {
                Some(path) => PipelineConfig::load(&path)?,
                None => PipelineConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(seed) = env_seed() {
                cfg.seed = seed;
            }
            if let Some(path) = embeddings {
                cfg.embeddings = Some(path);
            }
            let docs = load_corpus(&parses, &raw_dir)?;
            let gold = corpus::load_relations(&relations)?;
            let bundle = pipeline::train_all(&docs, &gold, &cfg)?;
            bundle.save(&out_dir)?;
            eprintln!(
                "trained on {} documents / {} relations; bundle written to {}",
                docs.len(),
                gold.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Parse {
            parses,
            raw_dir,
            models,
            out,
            cross_paragraph,
        } => {
            let mut bundle = ModelBundle::load(&models)?;
            if cross_paragraph {
                bundle.config.cross_paragraph = true;
            }
            let docs = load_corpus(&parses, &raw_dir)?;
            let relations = pipeline::parse(&docs, &bundle)?;
            let mut sink = std::fs::File::create(&out)?;
            corpus::emit_relations(&relations, &mut sink)?;
            eprintln!("{} relations written to {}", relations.len(), out.display());
            Ok(())
        }
        Command::Score {
            gold,
            pred,
            partial,
            json,
        } => {
            let gold = corpus::load_relations(&gold)?;
            let pred = corpus::load_relations(&pred)?;
            let mode = if partial {
                MatchMode::Partial
            } else {
                MatchMode::Exact
            };
            let report = scorer::score(&gold, &pred, mode);
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("serializable report")
                );
            } else {
                print!("{}", scorer::format_report(&report));
            }
            Ok(())
        }
        Command::Inspect {
            parses,
            raw_dir,
            relations,
            doc,
            relation,
        } => {
            let docs = load_corpus(&parses, &raw_dir)?;
            let all = corpus::load_relations(&relations)?;
            inspect(&docs, &all, &doc, relation)
        }
    }
}

fn inspect(
    docs: &[Document],
    relations: &[Relation],
    doc_id: &str,
    relation_id: u64,
) -> Result<(), PipelineError> {
    let doc = docs
        .iter()
        .find(|d| d.doc_id == doc_id)
        .ok_or_else(|| PipelineError::Data(format!("unknown document {doc_id:?}")))?;
    let relation = relations
        .iter()
        .find(|r| r.doc_id == doc_id && r.relation_id == relation_id)
        .ok_or_else(|| {
            PipelineError::Data(format!("no relation {relation_id} in document {doc_id:?}"))
        })?;

    println!("relation {relation_id} in {doc_id}: {}", relation.rel_type);
    println!("  senses: {}", relation.senses.join(", "));
    println!("  arg1: {:?}", corpus::span_text(doc, &relation.arg1)?);
    println!("  arg2: {:?}", corpus::span_text(doc, &relation.arg2)?);

    if relation.connective.is_empty() {
        println!("  (non-explicit: net input is the two argument token lists)");
        return Ok(());
    }
    println!(
        "  connective: {:?}",
        corpus::span_text(doc, &relation.connective)?
    );

    let sent_index = relation.connective.refs()[0].sent_index;
    let sentence = &doc.sentences[sent_index];
    let cand = explicit::ConnectiveCandidate {
        span: relation.connective.clone(),
        pattern: corpus::span_text(doc, &relation.connective)?.to_lowercase(),
        discontinuous: relation
            .connective
            .refs()
            .windows(2)
            .any(|w| w[1].tok_index != w[0].tok_index + 1),
        sent_index,
    };
    let features = explicit::extract_connective_features(&cand, sentence);
    println!("  connective features:");
    for (name, value) in features.to_feature_map() {
        println!("    {name} = {value:?}");
    }

    let rules = crate::syntax::HeadRules::bundled();
    if let Some((nodes, seq)) = explicit::segment_sequence(&cand, sentence, &rules) {
        println!("  candidate constituents ({}):", nodes.len());
        for (node, bag) in nodes.iter().zip(seq.bags()) {
            let (first, last) = sentence.tree.span(*node);
            println!(
                "    {} [{}..{}]: {}",
                sentence.tree.label(*node),
                first,
                last,
                bag.join(" ")
            );
        }
    } else {
        println!("  no candidate constituents (SelfCat is the root)");
    }

    for (span, arg_type) in [
        (&relation.arg1, ArgType::Arg1),
        (&relation.arg2, ArgType::Arg2),
    ] {
        println!("  trim features for {}:", arg_type.as_str());
        for (unit, map) in explicit::trim_instances(span, arg_type, doc, &rules) {
            let what = match unit {
                explicit::TrimUnit::Constituent { node, sent_index } => format!(
                    "constituent {} in sentence {sent_index}",
                    doc.sentences[sent_index].tree.label(node)
                ),
                explicit::TrimUnit::Token { doc_tok_index } => {
                    format!(
                        "token {:?}",
                        doc.token(doc_tok_index)
                            .map(|t| t.surface.as_str())
                            .unwrap_or("?")
                    )
                }
            };
            let fields: Vec<String> = map
                .iter()
                .map(|(k, v)| match v {
                    crate::dtree::FeatureValue::Cat(s) => format!("{k}={s}"),
                    crate::dtree::FeatureValue::Int(i) => format!("{k}={i}"),
                })
                .collect();
            println!("    {what}: {}", fields.join(" "));
        }
    }
    Ok(())
}

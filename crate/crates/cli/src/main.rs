use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use corefmrc::bias::{word_cluster_ids, CorefArray};
use corefmrc::checkpoint;
use corefmrc::coref::{rule_resolve, CorefClusters};
use corefmrc::harness::data::{load_dataset, write_dataset, QaExample};
use corefmrc::harness::synthetic::{generate_split, generate_synthetic, SyntheticConfig};
use corefmrc::harness::train::{dump_attention, evaluate_checkpoint, featurize_all, predict_all};
use corefmrc::harness::{train, ResolverChoice, RunConfig};
use corefmrc::rgcn::{build_graph, Topology};
use corefmrc::tokenize::{word_tokenize, Word};

#[derive(Parser)]
#[command(
    name = "corefmrc",
    version,
    about = "Coreference-aware extractive reading comprehension"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on a dataset and print the metrics report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "file")]
        resolver: Resolver,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write predicted answers as a JSON map from question id to answers.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "file")]
        resolver: Resolver,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print clusters and the word-level coreference array.
    Resolve {
        #[command(flatten)]
        input: TextInput,
    },
    /// Print the coreference graph edge list over words plus the global node.
    BuildGraph {
        #[command(flatten)]
        input: TextInput,
        #[arg(long, value_enum, default_value = "star")]
        topology: TopologyArg,
    },
    /// Write per-head and head-averaged attention for one question.
    DumpAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        question_id: String,
        #[arg(long, value_enum, default_value = "file")]
        resolver: Resolver,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic pronoun-resolution corpus.
    GenSynthetic {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write a dev split of this many questions, drawn after the train set.
        #[arg(long, requires = "dev_out")]
        dev_size: Option<usize>,
        #[arg(long)]
        dev_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        control_fraction: f64,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TextInput {
    /// Raw text; clusters come from the rule resolver.
    #[arg(long)]
    text: Option<String>,
    /// Dataset file; one result per paragraph.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Resolver {
    File,
    Rule,
}

impl From<Resolver> for ResolverChoice {
    fn from(r: Resolver) -> Self {
        match r {
            Resolver::File => ResolverChoice::File,
            Resolver::Rule => ResolverChoice::Rule,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Star,
    Clique,
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

/// Paragraph texts with their clusters (file clusters when present, else rule-based).
fn paragraphs(input: &TextInput) -> Result<Vec<(Option<String>, String, CorefClusters)>> {
    if let Some(text) = &input.text {
        let words = word_tokenize(text);
        return Ok(vec![(
            None,
            text.clone(),
            rule_resolve(&words).with_texts(&words),
        )]);
    }
    let path = input.data.as_ref().expect("clap enforces one input");
    let examples = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for ex in examples {
        if seen.insert(ex.context.clone(), ()).is_some() {
            continue;
        }
        let words = word_tokenize(&ex.context);
        let clusters = ex
            .clusters
            .unwrap_or_else(|| rule_resolve(&words).with_texts(&words));
        out.push((Some(ex.id), ex.context, clusters));
    }
    Ok(out)
}

fn word_array(words: &[Word], clusters: &CorefClusters) -> Result<CorefArray> {
    Ok(CorefArray {
        ids: word_cluster_ids(words.len(), clusters)?,
    }
    .compacted())
}

fn find_question<'a>(examples: &'a [QaExample], id: &str) -> Result<&'a QaExample> {
    match examples.iter().find(|e| e.id == id) {
        Some(e) => Ok(e),
        None => bail!("question id {id:?} not found in dataset"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            let outcome = train(&cfg)?;
            for entry in &outcome.log {
                eprintln!("{}", serde_json::to_string(entry)?);
            }
            emit(
                &json!({
                    "variant": cfg.variant.name(),
                    "best_epoch": outcome.best_epoch,
                    "best_dev": outcome.best_dev,
                    "skipped_training_questions": outcome.skipped,
                    "payload_sha256": outcome.manifest.payload_sha256,
                    "checkpoint": cfg.checkpoint_path,
                }),
                None,
            )
        }
        Command::Eval {
            checkpoint: ck,
            data,
            resolver,
            out,
        } => {
            let ck = checkpoint::load(&ck)
                .with_context(|| format!("loading checkpoint {}", ck.display()))?;
            let examples = load_dataset(&data)?;
            let report = evaluate_checkpoint(&ck, &examples, resolver.into())?;
            emit(&serde_json::to_value(report)?, out.as_deref())
        }
        Command::Predict {
            checkpoint: ck,
            data,
            resolver,
            out,
        } => {
            let ck = checkpoint::load(&ck)
                .with_context(|| format!("loading checkpoint {}", ck.display()))?;
            let examples = load_dataset(&data)?;
            let features = featurize_all(
                &examples,
                &ck.vocab,
                ck.model.config.backbone.max_len,
                resolver.into(),
            )?;
            let preds = predict_all(&ck.model, &examples, &features)?;
            emit(&serde_json::to_value(preds)?, out.as_deref())
        }
        Command::Resolve { input } => {
            let mut results = Vec::new();
            for (id, text, clusters) in paragraphs(&input)? {
                let words = word_tokenize(&text);
                let array = word_array(&words, &clusters)?;
                results.push(json!({
                    "question_id": id,
                    "words": words.iter().map(|w| &w.text).collect::<Vec<_>>(),
                    "clusters": clusters.clusters,
                    "coref_array": array.ids,
                }));
            }
            emit(&serde_json::Value::Array(results), None)
        }
        Command::BuildGraph { input, topology } => {
            let topology = match topology {
                TopologyArg::Star => Topology::Star,
                TopologyArg::Clique => Topology::Clique,
            };
            let mut results = Vec::new();
            for (id, text, clusters) in paragraphs(&input)? {
                let words = word_tokenize(&text);
                let graph = build_graph(&word_array(&words, &clusters)?, topology);
                results.push(json!({
                    "question_id": id,
                    "node_count": graph.node_count,
                    "global_node": graph.global_node(),
                    "edges": graph.edges,
                }));
            }
            emit(&serde_json::Value::Array(results), None)
        }
        Command::DumpAttention {
            checkpoint: ck,
            data,
            question_id,
            resolver,
            out,
        } => {
            let ck = checkpoint::load(&ck)
                .with_context(|| format!("loading checkpoint {}", ck.display()))?;
            let examples = load_dataset(&data)?;
            let ex = find_question(&examples, &question_id)?;
            let dump = dump_attention(&ck.model, &ck.vocab, ex, resolver.into())?;
            emit(&serde_json::to_value(dump)?, out.as_deref())
        }
        Command::GenSynthetic {
            seed,
            size,
            out,
            dev_size,
            dev_out,
            control_fraction,
        } => {
            if size == 0 {
                bail!("--size must be at least 1");
            }
            if !(0.0..=1.0).contains(&control_fraction) {
                bail!("--control-fraction must lie in [0, 1]");
            }
            let cfg = SyntheticConfig {
                seed,
                size,
                control_fraction,
            };
            match (dev_size, dev_out) {
                (Some(n), Some(dev_path)) => {
                    let (train_file, dev_file) = generate_split(&cfg, n);
                    write_dataset(&out, &train_file)?;
                    write_dataset(&dev_path, &dev_file)?;
                }
                _ => write_dataset(&out, &generate_synthetic(&cfg))?,
            }
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

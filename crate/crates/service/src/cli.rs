//! The `batchline` command line.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use batchline::ingest::write_skip_log;
use batchline::planner::{Evaluator, MatchReport};
use batchline::reasoner::materialize;
use batchline::review::{read_records, ReviewStatus};
use batchline::synth::{self, SynthConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::pipeline::{open_session, read_data, read_rules, read_schema, Inputs, RuleFileError, RuleRejection};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "batchline", version, about = "Rule-based comparison of seized drug samples over a knowledge base")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load data into a graph and report ingest statistics.
    Load {
        #[command(flatten)]
        data: DataArgs,
        /// Write the loaded graph as canonical triples.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write skipped values as JSON lines.
        #[arg(long)]
        skip_log: Option<PathBuf>,
    },
    /// Load data, materialize the schema's entailments and print the counts.
    Enrich {
        #[command(flatten)]
        data: DataArgs,
        /// Write the enriched graph as canonical triples.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the analysis rules over every candidate pair.
    Evaluate {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Print only the summary counts.
        #[arg(long)]
        summary: bool,
    },
    /// Re-render a JSON report written by `evaluate`.
    Report {
        /// Report file, as written by `evaluate --format json`.
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        /// Print only the summary counts.
        #[arg(long)]
        summary: bool,
    },
    /// Serve the review API.
    Serve {
        #[command(flatten)]
        eval: EvalArgs,
        /// Decision log; existing records are replayed at startup.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, env = "BATCHLINE_ADDR", default_value = DEFAULT_ADDR)]
        addr: SocketAddr,
    },
    /// Rebuild review state from a decision log and print the result.
    Replay {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        log: PathBuf,
    },
    /// Write a synthetic dataset (tables, mappings and a manifest).
    GenerateSynthetic {
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    schema: PathBuf,
    /// `.triples`/`.nt` graph, `.json` manifest, or `.csv`/`.jsonl` table.
    #[arg(long)]
    data: PathBuf,
    /// Column mapping, required for a single table.
    #[arg(long)]
    mapping: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Rule file; may be repeated.
    #[arg(long, required = true)]
    rules: Vec<PathBuf>,
    /// Only pair samples of the same drug type.
    #[arg(long)]
    block_by_drugtype: bool,
}

impl EvalArgs {
    fn inputs(&self) -> Inputs {
        Inputs {
            schema: self.data.schema.clone(),
            rules: self.rules.clone(),
            data: self.data.data.clone(),
            mapping: self.data.mapping.clone(),
            block_by_drug_type: self.block_by_drugtype,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Tsv,
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 when a command fails, 2 on usage errors.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e, err);
            1
        }
    }
}

fn report_error(e: &anyhow::Error, err: &mut dyn Write) {
    if let Some(RuleRejection(diags)) = e.downcast_ref::<RuleRejection>() {
        for d in diags {
            let _ = writeln!(err, "{}", serde_json::to_string(d).unwrap_or_default());
        }
    } else if let Some(RuleFileError { path, error }) = e.downcast_ref::<RuleFileError>() {
        let mut value = serde_json::to_value(error).unwrap_or_default();
        value["file"] = json!(path);
        let _ = writeln!(err, "{value}");
    }
    let _ = writeln!(err, "error: {e:#}");
}

fn print_json(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_graph(path: &Path, graph: &batchline::graph::Graph) -> Result<()> {
    fs::write(path, graph.to_canonical_text()).with_context(|| format!("writing {}", path.display()))
}

fn render_report(report: &MatchReport, format: Format, summary: bool, out: &mut dyn Write) -> Result<()> {
    match (format, summary) {
        (Format::Json, false) => print_json(out, report),
        (Format::Json, true) => print_json(out, &report.summary),
        (Format::Tsv, false) => {
            out.write_all(report.to_tsv().as_bytes())?;
            Ok(())
        }
        (Format::Tsv, true) => {
            writeln!(out, "rule\tmatch\tno_match\tinapplicable")?;
            for (rule, c) in &report.summary.by_rule {
                writeln!(out, "{rule}\t{}\t{}\t{}", c.matches, c.no_match, c.inapplicable)?;
            }
            Ok(())
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Load { data, out: dest, skip_log } => {
            let schema = read_schema(&data.schema)?;
            let (graph, stats) = read_data(&schema, &data.data, data.mapping.as_deref())?;
            if let Some(path) = skip_log {
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_skip_log(&stats.skips, file)?;
            }
            if let Some(path) = dest {
                write_graph(&path, &graph)?;
            }
            print_json(
                out,
                &json!({
                    "rowsRead": stats.rows_read,
                    "instancesCreated": stats.instances_created,
                    "triplesAdded": stats.triples_added,
                    "valuesSkipped": stats.values_skipped,
                    "graphSize": graph.len(),
                    "contentHash": graph.content_hash(),
                }),
            )
        }
        Command::Enrich { data, out: dest } => {
            let schema = read_schema(&data.schema)?;
            let (mut graph, _) = read_data(&schema, &data.data, data.mapping.as_deref())?;
            let stats = materialize(&mut graph, &schema)?;
            if let Some(path) = dest {
                write_graph(&path, &graph)?;
            }
            print_json(out, &stats)
        }
        Command::Evaluate { eval, format, summary } => {
            let inputs = eval.inputs();
            let schema = read_schema(&inputs.schema)?;
            let rules = read_rules(&inputs.rules, &schema)?;
            let (mut graph, _) = read_data(&schema, &inputs.data, inputs.mapping.as_deref())?;
            materialize(&mut graph, &schema)?;
            let evaluator = Evaluator::new(&rules, &schema, &graph, inputs.options()).map_err(RuleRejection)?;
            let report = evaluator.report(&graph);
            render_report(&report, format, summary, out)
        }
        Command::Report { input, format, summary } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let report: MatchReport =
                serde_json::from_str(&text).with_context(|| format!("{} is not a report", input.display()))?;
            render_report(&report, format, summary, out)
        }
        Command::Serve { eval, log, addr } => {
            let inputs = eval.inputs();
            let session = open_session(&inputs, log.as_deref())?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::serve(session, addr))
        }
        Command::Replay { eval, log } => {
            let inputs = eval.inputs();
            let mut session = open_session(&inputs, None)?;
            let file = File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let records = read_records(BufReader::new(file))?;
            let applied = session.replay_records(records)?;
            let mut counts = [0usize; 3];
            for p in &session.report().pairs {
                counts[match session.status(&p.s1, &p.s2) {
                    ReviewStatus::Pending => 0,
                    ReviewStatus::Accepted => 1,
                    ReviewStatus::Rejected => 2,
                }] += 1;
            }
            print_json(
                out,
                &json!({
                    "decisions": applied,
                    "pending": counts[0],
                    "accepted": counts[1],
                    "rejected": counts[2],
                    "batches": session.batches(),
                    "graphSize": session.graph().len(),
                    "contentHash": session.graph().content_hash(),
                }),
            )
        }
        Command::GenerateSynthetic { samples, seed, out: dir } => {
            if samples == 0 {
                bail!("--samples must be positive");
            }
            let summary = synth::generate(SynthConfig { samples, seed }, &dir)
                .with_context(|| format!("writing {}", dir.display()))?;
            print_json(out, &summary)
        }
    }
}

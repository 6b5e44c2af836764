//! The `hrg` binary: grammar validation, normalization into the weak
//! Greibach normal form, bounded language enumeration and comparison.
//!
//! Human-readable messages go to standard error; grammars, statistics,
//! and JSON go to standard output. Output is deterministic except for the
//! report timestamp, which `--no-timestamp` suppresses.
//!
//! Exit codes: 0 success (property holds, languages agree); 1 property
//! fails or languages differ; 2 parse, semantic, usage, or I/O error;
//! 3 the grammar is not isolated-node bounded; 4 a configured cap was
//! exceeded; 5 the (bounded) language is empty.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use hrg_core::hypergraph::HypergraphError;
use hrg_core::normalize::{pipeline_trace, NormalizeConfig, NormalizeError, PipelineStage};
use hrg_core::oracle::{
    enumerate_language, is_wgnf, languages_equal, EnumerationBounds, LanguageSample, OracleError,
};
use serde_json::json;
use thiserror::Error;

use hrg_cli::format::{graph_literal, parse_file, serialize_grammar, GrammarFile, ParseError};

#[derive(Parser)]
#[command(name = "hrg", version, about = "Hyperedge replacement grammar toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a grammar file and check every well-formedness invariant.
    Validate { file: PathBuf },
    /// Run the normalization pipeline and print the resulting grammar.
    Normalize {
        file: PathBuf,
        /// Stop after this stage: useless, edgeless, chain, norec,
        /// compose, or wgnf (the default, full pipeline).
        #[arg(long)]
        stage: Option<String>,
        /// Write the resulting grammar here instead of standard output.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Write a JSON report with per-stage statistics.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
        /// Omit the timestamp and stage times from the report, making it
        /// byte-reproducible.
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Check whether every production has exactly one terminal edge.
    CheckWgnf { file: PathBuf },
    /// List all generated graphs within the given size bounds.
    Enumerate {
        file: PathBuf,
        #[arg(long)]
        max_edges: usize,
        #[arg(long)]
        max_nodes: usize,
        /// Emit the sample as JSON on standard output.
        #[arg(long)]
        json: bool,
    },
    /// Compare the bounded languages of two grammars.
    Equiv {
        file1: PathBuf,
        file2: PathBuf,
        #[arg(long)]
        max_edges: usize,
        #[arg(long)]
        max_nodes: usize,
    },
    /// Print size statistics for a grammar.
    Stats { file: PathBuf },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("cannot {op} `{path}`: {source}")]
    Io {
        op: &'static str,
        path: PathBuf,
        source: io::Error,
    },
    #[error("{path}:{source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Parse { .. } | CliError::Usage(_) => 2,
            CliError::Normalize(e) => match e {
                NormalizeError::NotIsolatedNodeBounded { .. } => 3,
                NormalizeError::CapExceeded { .. } => 4,
                NormalizeError::EmptyLanguage => 5,
                _ => 2,
            },
            CliError::Oracle(e) => match e {
                OracleError::Graph(HypergraphError::CanonCapExceeded { .. }) => 4,
                _ => 2,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_errors = matches!(&cli.cmd, Cmd::Enumerate { json: true, .. });
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            if json_errors {
                println!(
                    "{}",
                    json!({ "error": e.to_string(), "exitCode": e.exit_code() })
                );
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Cmd) -> Result<u8, CliError> {
    match cmd {
        Cmd::Validate { file } => {
            let f = load(&file)?;
            eprintln!(
                "grammar `{}` is valid: {} labels, {} productions, start `{}`",
                f.name,
                f.grammar.labels.len(),
                f.grammar.productions.len(),
                f.grammar.start
            );
            Ok(0)
        }
        Cmd::Normalize {
            file,
            stage,
            out,
            report,
            no_timestamp,
        } => normalize_cmd(&file, stage.as_deref(), out, report, no_timestamp),
        Cmd::CheckWgnf { file } => {
            let f = load(&file)?;
            let rep = is_wgnf(&f.grammar);
            if rep.ok {
                eprintln!("grammar `{}` is in the weak Greibach normal form", f.name);
                Ok(0)
            } else {
                for (id, n) in &rep.violations {
                    eprintln!("production `{id}`: {n} terminal edges (exactly 1 required)");
                }
                Ok(1)
            }
        }
        Cmd::Enumerate {
            file,
            max_edges,
            max_nodes,
            json,
        } => {
            let f = load(&file)?;
            let bounds = EnumerationBounds {
                max_edges,
                max_nodes,
            };
            let sample = enumerate_language(&f.grammar, bounds)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&sample_json(&sample)).expect("serializable")
                );
            } else {
                for h in sample.graphs.values() {
                    println!("{}", graph_literal(h));
                }
            }
            eprintln!(
                "{} graphs within {max_edges} edges, {max_nodes} nodes",
                sample.len()
            );
            // An empty bounded language is reported but is not an error.
            Ok(if sample.is_empty() { 5 } else { 0 })
        }
        Cmd::Equiv {
            file1,
            file2,
            max_edges,
            max_nodes,
        } => {
            let f1 = load(&file1)?;
            let f2 = load(&file2)?;
            let bounds = EnumerationBounds {
                max_edges,
                max_nodes,
            };
            let a = enumerate_language(&f1.grammar, bounds)?;
            let b = enumerate_language(&f2.grammar, bounds)?;
            let rep = languages_equal(&a, &b)?;
            if rep.equal {
                eprintln!(
                    "languages agree within {max_edges} edges, {max_nodes} nodes ({} graphs)",
                    a.len()
                );
                Ok(0)
            } else {
                eprintln!("languages differ within {max_edges} edges, {max_nodes} nodes:");
                report_difference(&rep.only_left, &file1, &a);
                report_difference(&rep.only_right, &file2, &b);
                Ok(1)
            }
        }
        Cmd::Stats { file } => {
            let f = load(&file)?;
            print!("{}", stats_text(&f));
            Ok(0)
        }
    }
}

fn load(path: &Path) -> Result<GrammarFile, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        op: "read",
        path: path.to_path_buf(),
        source,
    })?;
    parse_file(&text).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        op: "write",
        path: path.to_path_buf(),
        source,
    })
}

fn normalize_cmd(
    file: &Path,
    stage: Option<&str>,
    out: Option<PathBuf>,
    report: Option<PathBuf>,
    no_timestamp: bool,
) -> Result<u8, CliError> {
    let f = load(file)?;
    let upto = match stage {
        None => PipelineStage::Wgnf,
        Some(s) => PipelineStage::parse(s).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown stage `{s}` (expected useless, edgeless, chain, norec, compose, or wgnf)"
            ))
        })?,
    };
    let cfg = NormalizeConfig::default();
    let (trace, rep) = pipeline_trace(&f.grammar, upto, &cfg)?;
    for s in &rep.stages {
        eprintln!("stage {}: {} -> {} productions", s.stage, s.before, s.after);
        for w in &s.warnings {
            eprintln!("  warning: {w}");
        }
    }
    let result = trace
        .last()
        .map(|(_, g)| g.clone())
        .unwrap_or_else(|| f.grammar.clone());
    let text = serialize_grammar(&f.name, &result);
    match &out {
        Some(path) => write(path, &text)?,
        None => print!("{text}"),
    }
    if let Some(path) = &report {
        let rep = if no_timestamp { rep.without_times() } else { rep };
        let mut obj = serde_json::Map::new();
        obj.insert("grammar".to_string(), json!(f.name));
        if !no_timestamp {
            obj.insert("timestamp".to_string(), json!(epoch_millis()));
        }
        obj.insert(
            "stages".to_string(),
            serde_json::to_value(&rep.stages).expect("serializable"),
        );
        let json_text = serde_json::to_string_pretty(&serde_json::Value::Object(obj))
            .expect("serializable");
        write(path, &format!("{json_text}\n"))?;
    }
    Ok(0)
}

fn report_difference(
    only: &[hrg_core::hypergraph::CanonicalCode],
    path: &Path,
    sample: &LanguageSample,
) {
    if only.is_empty() {
        return;
    }
    eprintln!("  {} graphs only from `{}`:", only.len(), path.display());
    for code in only.iter().take(3) {
        let h = &sample.graphs[code];
        eprintln!("    {}", graph_literal(h));
    }
    if only.len() > 3 {
        eprintln!("    … and {} more", only.len() - 3);
    }
}

fn sample_json(sample: &LanguageSample) -> serde_json::Value {
    json!({
        "bounds": sample.bounds,
        "count": sample.len(),
        "graphs": sample
            .graphs
            .iter()
            .map(|(code, h)| json!({ "code": code, "graph": graph_literal(h) }))
            .collect::<Vec<_>>(),
    })
}

fn stats_text(f: &GrammarFile) -> String {
    let g = &f.grammar;
    let recursive = g.productions.iter().filter(|p| p.is_recursive()).count();
    let mut out = String::new();
    out.push_str(&format!("grammar {}\n", f.name));
    out.push_str(&format!(
        "labels: {} nonterminals, {} terminals\n",
        g.labels.nonterminals().count(),
        g.labels.terminals().count()
    ));
    out.push_str(&format!(
        "start: {}/{}\n",
        g.start,
        g.labels.arity(&g.start).unwrap_or(0)
    ));
    out.push_str(&format!(
        "productions: {} ({} recursive)\n",
        g.productions.len(),
        recursive
    ));
    out.push_str(&format!("wgnf: {}\n", if is_wgnf(g).ok { "yes" } else { "no" }));
    out.push('\n');
    for p in &g.productions {
        let arity = g.labels.arity(&p.lhs).unwrap_or(0);
        out.push_str(&format!(
            "{}: {}/{} nodes={} isolated={} edges={}",
            p.id,
            p.lhs,
            arity,
            p.rhs.nodes().count(),
            p.rhs.isize(),
            p.rhs.esize()
        ));
        if let Some(d) = &p.delta {
            out.push_str(&format!(" delta={d}"));
        }
        if p.is_recursive() {
            out.push_str(" recursive");
        }
        out.push('\n');
    }
    out
}

fn epoch_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

//! `refine` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use super::{
    cost_report, demo_corpus, load_corpus, read_transcripts, run_corpus, write_transcripts,
    write_transcripts_to, PriceSheet, RunConfig,
};
use crate::backend::{BackendScript, ChatBackend, HttpBackend, HttpConfig, ScriptedBackend};
use crate::domain::{Query, RefinementMode, StopReason};
use crate::engine::{Engine, EngineConfig, SessionEvent};
use crate::prompts;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, Parser)]
#[command(
    name = "refine",
    version,
    about = "Let a chat model critique, improve and judge its own answers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendKind {
    Http,
    Scripted,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, clap::Args)]
struct BackendArgs {
    /// Where completions come from.
    #[arg(long, value_enum, default_value = "http")]
    backend: BackendKind,
    /// Script file for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Refine the answer to one question and print the final answer.
    Ask {
        #[arg(long)]
        question: String,
        #[arg(long = "max-iters", default_value_t = 3)]
        max_iters: u32,
        #[arg(long, default_value = "full", value_parser = parse_mode)]
        mode: RefinementMode,
        #[command(flatten)]
        backend: BackendArgs,
        /// Print every prompt, reply and vote to stderr.
        #[arg(long)]
        verbose: bool,
        /// Also append the session transcript to this file.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Run a question corpus through one or more modes.
    Corpus {
        /// Line-delimited corpus; defaults to the bundled demo questions.
        #[arg(long)]
        file: Option<PathBuf>,
        /// Comma-separated modes.
        #[arg(long, default_value = "full", value_delimiter = ',', value_parser = parse_mode)]
        modes: Vec<RefinementMode>,
        /// Transcript output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "max-iters", default_value_t = 3)]
        max_iters: u32,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Summarise token use and cost of a transcript file.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Price sheet JSON; without it only token columns are shown.
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
    },
    /// Print the prompt templates.
    Templates,
}

fn parse_mode(s: &str) -> Result<RefinementMode, String> {
    s.parse()
        .map_err(|e: crate::domain::DomainError| e.to_string())
}

enum CliError {
    Usage(String),
    Runtime(String),
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn build_backend(args: &BackendArgs) -> Result<Arc<dyn ChatBackend>, CliError> {
    match args.backend {
        BackendKind::Scripted => {
            let path = args
                .script
                .as_ref()
                .ok_or_else(|| CliError::Usage("--backend scripted requires --script".into()))?;
            let script = BackendScript::load(path)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            Ok(Arc::new(ScriptedBackend::new(script)))
        }
        BackendKind::Http => {
            let config = HttpConfig::from_env().ok_or_else(|| {
                CliError::Runtime("no API key: set REFINE_API_KEY or OPENAI_API_KEY".into())
            })?;
            Ok(Arc::new(HttpBackend::new(config).map_err(runtime)?))
        }
    }
}

fn tokio_runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime)
}

fn print_templates(out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "initial:\n  <the question, sent verbatim>\n")?;
    for kind in crate::domain::PromptKind::ALL {
        if let Some(t) = prompts::template_for(kind) {
            writeln!(out, "{kind}:\n  {t}\n")?;
        }
    }
    Ok(())
}

fn execute(
    command: Command,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<(), CliError> {
    match command {
        Command::Templates => print_templates(out).map_err(runtime),
        Command::Ask {
            question,
            max_iters,
            mode,
            backend,
            verbose,
            transcript,
        } => {
            let query = Query::new("ask", question.trim(), max_iters)
                .map_err(|e| CliError::Usage(format!("--question: {e}")))?;
            let chat = build_backend(&backend)?;
            let engine = Engine::new(chat, EngineConfig::new(backend.model.clone()));
            let rt = tokio_runtime()?;
            let result = {
                let mut observer = |ev: &SessionEvent<'_>| {
                    if !verbose {
                        return;
                    }
                    let _ = match ev {
                        SessionEvent::Call {
                            kind,
                            round,
                            prompt,
                            reply,
                        } => writeln!(err, "[round {round}] {kind}\n  > {prompt}\n  < {reply}"),
                        SessionEvent::Decision {
                            round,
                            vote,
                            accepted,
                        } => writeln!(
                            err,
                            "[round {round}] vote={} accepted={accepted}",
                            vote.map_or("-".to_string(), |v| v.label().to_string())
                        ),
                    };
                };
                rt.block_on(engine.run_session_observed(&query, mode, &mut observer))
            };
            if verbose {
                let _ = writeln!(
                    err,
                    "stop: {:?} after {} round(s), {} call(s)",
                    result.stop_reason,
                    result.records.len(),
                    result.call_count()
                );
            }
            if let Some(path) = transcript {
                let mut all = if path.exists() {
                    read_transcripts(&path).map_err(runtime)?
                } else {
                    Vec::new()
                };
                all.push(result.clone());
                write_transcripts(&all, &path).map_err(runtime)?;
            }
            if !result.final_answer.text.is_empty() {
                writeln!(out, "{}", result.final_answer.text).map_err(runtime)?;
            }
            if result.stop_reason == StopReason::BackendError {
                return Err(CliError::Runtime(
                    result.error.unwrap_or_else(|| "backend error".into()),
                ));
            }
            Ok(())
        }
        Command::Corpus {
            file,
            modes,
            out: out_path,
            max_iters,
            concurrency,
            backend,
        } => {
            let corpus = match &file {
                Some(path) => load_corpus(path).map_err(runtime)?,
                None => demo_corpus(),
            };
            let mut config = RunConfig::new(backend.model.clone());
            config.modes = modes;
            config.max_iterations = max_iters;
            config.concurrency = concurrency;
            config
                .validate()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let chat = build_backend(&backend)?;
            let rt = tokio_runtime()?;
            let transcripts = rt
                .block_on(run_corpus(&corpus, &config, chat))
                .map_err(runtime)?;
            let failed = transcripts
                .iter()
                .filter(|t| t.stop_reason == StopReason::BackendError)
                .count();
            match out_path {
                Some(path) => write_transcripts(&transcripts, &path).map_err(runtime)?,
                None => write_transcripts_to(&transcripts, &mut *out).map_err(runtime)?,
            }
            let _ = writeln!(
                err,
                "{} transcript(s), {} ended with a backend error",
                transcripts.len(),
                failed
            );
            Ok(())
        }
        Command::Report {
            input,
            prices,
            format,
        } => {
            let transcripts = read_transcripts(&input).map_err(runtime)?;
            let sheet = prices
                .as_deref()
                .map(PriceSheet::load)
                .transpose()
                .map_err(runtime)?;
            let report = cost_report(&transcripts, sheet.as_ref());
            match format {
                ReportFormat::Text => write!(out, "{report}").map_err(runtime),
                ReportFormat::Json => {
                    let json = serde_json::to_string_pretty(&report).map_err(runtime)?;
                    writeln!(out, "{json}").map_err(runtime)
                }
            }
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn cli_main<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_RUNTIME
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use qda_core::coding::SegmentStatus;
use qda_core::pipeline::{self, parse_override, Pipeline, StageState};
use qda_core::review::{ActionKind, ReviewAction};
use qda_core::service::{serve, Service};
use qda_core::store::Project;
use qda_core::synth::{write_inputs, SynthOptions};
use qda_core::{Error, Result};

#[derive(Parser)]
#[command(name = "qda", version, about = "Semi-automated qualitative data analysis pipeline")]
struct Cli {
    /// Project directory.
    #[arg(long, short = 'p', env = "QDA_PROJECT", default_value = ".", global = true)]
    project: PathBuf,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a project skeleton with a default qda.toml.
    Init,
    /// Write the seeded synthetic corpus into the project inputs.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also write validated_segments.csv.
        #[arg(long)]
        validated: bool,
    },
    /// Run one stage or `all`.
    Run {
        stage: String,
        /// Recompute even when outputs are fresh.
        #[arg(long)]
        force: bool,
    },
    /// Show the state of every stage.
    Status,
    /// Build the report bundle under report/.
    Report {
        #[arg(long)]
        force: bool,
    },
    /// Inspect or edit the lemma dictionary.
    Dict {
        #[command(subcommand)]
        command: DictCommand,
    },
    /// Record a review decision on a coded segment.
    Review {
        /// `<set>:<document>:<sentence>`
        segment: String,
        /// accept, reject or reassign
        action: String,
        #[arg(long = "category")]
        categories: Vec<String>,
        #[arg(long)]
        note: Option<String>,
        #[arg(long)]
        base_version: Option<usize>,
    },
    /// Serve the review API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
    },
}

#[derive(Subcommand)]
enum DictCommand {
    Get { key: String },
    Set {
        key: String,
        lemma: String,
        #[arg(long)]
        base_version: Option<u64>,
    },
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String)>> {
    cli.overrides.iter().map(|s| parse_override(s)).collect()
}

fn execute(cli: &Cli) -> Result<(Value, String)> {
    let root = &cli.project;
    match &cli.command {
        Command::Init => {
            Pipeline::init(root)?;
            Ok((json!({"initialised": root}), format!("initialised {}", root.display())))
        }
        Command::Synth { seed, validated } => {
            let out = write_inputs(root, SynthOptions { seed: *seed, validated: *validated })?;
            Ok((json!({"files": out.files}), format!("wrote {} files", out.files.len())))
        }
        Command::Run { stage, force } => {
            let mut p = Pipeline::open(root, &overrides(cli)?)?;
            let _lock = p.project.lock()?;
            let summary = if stage == "all" {
                p.run_all(*force)?
            } else {
                pipeline::RunSummary {
                    stages: vec![p.run_stage(stage.parse()?, *force)?],
                }
            };
            let mut text = String::new();
            for s in &summary.stages {
                text.push_str(&format!("{:<13} {}\n", s.stage.as_str(), s.result));
                for w in &s.warnings {
                    text.push_str(&format!("  warning: {w}\n"));
                }
            }
            Ok((serde_json::to_value(&summary)?, text.trim_end().to_string()))
        }
        Command::Status => {
            let mut p = Pipeline::open(root, &overrides(cli)?)?;
            {
                let _lock = p.project.lock()?;
                p.sync_sources()?;
            }
            let status = p.status();
            let text = status
                .iter()
                .map(|s| {
                    let state = match s.state {
                        StageState::Fresh => "fresh",
                        StageState::Stale => "stale",
                        StageState::Missing => "missing",
                    };
                    format!("{:<13} {state}", s.stage.as_str())
                })
                .collect::<Vec<_>>()
                .join("\n");
            Ok((serde_json::to_value(&status)?, text))
        }
        Command::Report { force } => {
            let mut p = Pipeline::open(root, &overrides(cli)?)?;
            let _lock = p.project.lock()?;
            p.run_stage(pipeline::Stage::Report, *force)?;
            let summary: Value = serde_json::from_slice(&p.project.load_artifact("report_summary.json", false)?)?;
            let dir = p.project.root().join(pipeline::REPORT_DIR);
            Ok((summary, format!("report written to {}", dir.display())))
        }
        Command::Dict { command } => match command {
            DictCommand::Get { key } => {
                let project = Project::open(root)?;
                let dict = pipeline::load_dictionary(&project, true)?;
                let e = dict.get(key).ok_or_else(|| Error::NotFound(format!("dictionary key `{key}`")))?;
                let v = json!({"key": e.key, "lemma": e.lemma, "provenance": e.provenance.as_str(), "version": dict.version()});
                Ok((v, format!("{} -> {} ({})", e.key, e.lemma, e.provenance.as_str())))
            }
            DictCommand::Set { key, lemma, base_version } => {
                let mut project = Project::open(root)?;
                let _lock = project.lock()?;
                let edit = pipeline::edit_dictionary(&mut project, key, lemma, *base_version)?;
                let stale = project.stale_artifacts();
                let text = if edit.changed {
                    format!("{key} -> {lemma}, dictionary version {}; {} artifacts stale", edit.version, stale.len())
                } else {
                    format!("{key} already maps to {lemma}; version {} unchanged", edit.version)
                };
                Ok((json!({"edit": edit, "stale": stale}), text))
            }
        },
        Command::Review {
            segment,
            action,
            categories,
            note,
            base_version,
        } => {
            let mut project = Project::open(root)?;
            let _lock = project.lock()?;
            let action = ReviewAction {
                segment: segment.parse()?,
                action: action.parse::<ActionKind>()?,
                categories: categories.clone(),
                note: note.clone(),
                timestamp: qda_core::lexicon::now_stamp(),
            };
            let seg = pipeline::apply_review(&mut project, action, *base_version)?;
            let status: SegmentStatus = seg.status;
            Ok((json!({"segment": seg}), format!("{segment}: {}", status.as_str())))
        }
        Command::Serve { addr } => {
            let service = Service::new(root, overrides(cli)?)?;
            let handle = serve(service, addr)?;
            eprintln!("serving {} on http://{}", root.display(), handle.addr);
            handle.wait();
            Ok((Value::Null, String::new()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok((value, text)) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&value).expect("json"));
            } else if !text.is_empty() {
                println!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.json {
                let mut err = json!({"code": e.code(), "message": e.to_string()});
                if let Error::Dependency { rerun, .. } = &e {
                    err["rerun"] = json!(rerun);
                }
                println!("{}", json!({ "error": err }));
            }
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

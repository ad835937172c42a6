use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use tutee_core::dialogue_taxonomy::{read_annotated, Classifier, PromptedClassifier};
use tutee_core::llm_gateway::{Backend, BackendChoice, Gateway, RecordingBackend, RequestDefaults, TemplateRegistry};
use tutee_eval::matrix::ScoreMatrix;
use tutee_eval::mcq::load_bank;
use tutee_eval::scenario::{load_scripts, Scenario};
use tutee_eval::{estimate_cost, DataDir, Evaluator, DEFAULT_REPEATS};

#[derive(Debug, Parser)]
#[command(name = "tutee-eval", about = "Score the tutee on multiple-choice questions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendKind {
    Live,
    Replay,
    Scripted,
}

#[derive(Debug, Args)]
struct Common {
    /// Root of the shipped data files.
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendKind,
    /// Cassette read by the replay backend.
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Record every completion to this cassette.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Write machine-readable rows here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Scoring {
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    repeats: usize,
    /// Questions solved concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score one seed state.
    Solve {
        #[arg(long)]
        topic: String,
        #[arg(long)]
        seed_state: String,
        #[command(flatten)]
        scoring: Scoring,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario: blocks of scripted tutoring with checkpoints between.
    Scenario {
        #[arg(long)]
        scenario_file: PathBuf,
        /// Overrides the scenario's topic.
        #[arg(long)]
        topic: Option<String>,
        /// Overrides the scenario's seed state.
        #[arg(long)]
        seed_state: Option<String>,
        #[command(flatten)]
        scoring: Scoring,
        #[command(flatten)]
        common: Common,
    },
    /// Render saved score rows.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Label an annotated transcript with the prompted classifier and report agreement.
    Classify {
        #[arg(long)]
        fixture: PathBuf,
        #[arg(long, default_value_t = 3)]
        context_window: usize,
        #[command(flatten)]
        common: Common,
    },
}

type Error = Box<dyn std::error::Error>;

struct Setup {
    gateway: Gateway,
    recorder: Option<(Arc<RecordingBackend>, PathBuf)>,
    live: bool,
}

fn setup(common: &Common) -> Result<Setup, Error> {
    let choice = match common.backend {
        BackendKind::Live => BackendChoice::Live,
        BackendKind::Scripted => BackendChoice::Scripted,
        BackendKind::Replay => BackendChoice::parse("replay", common.cassette.clone())?,
    };
    let mut backend: Arc<dyn Backend> = choice.build()?;
    let recorder = match &common.record {
        Some(path) => {
            let r = Arc::new(RecordingBackend::new(backend, format!("{:?}", common.backend).to_lowercase()));
            backend = r.clone();
            Some((r, path.clone()))
        }
        None => None,
    };
    let data = DataDir(common.data.clone());
    let registry = TemplateRegistry::load_dir(data.templates())?;
    let defaults = RequestDefaults {
        temperature: common.temperature,
        ..RequestDefaults::default()
    };
    Ok(Setup {
        gateway: Gateway::new(registry, backend).with_defaults(defaults),
        recorder,
        live: matches!(common.backend, BackendKind::Live),
    })
}

fn finish(setup: &Setup, matrix: Option<&ScoreMatrix>, out: Option<&Path>) -> Result<(), Error> {
    if let Some((recorder, path)) = &setup.recorder {
        recorder.save(path)?;
        eprintln!("recorded completions to {}", path.display());
    }
    if let (Some(m), Some(out)) = (matrix, out) {
        std::fs::write(out, m.to_jsonl())?;
        eprintln!("wrote rows to {}", out.display());
    }
    Ok(())
}

fn announce_cost(setup: &Setup, bank: &[tutee_eval::mcq::Mcq], repeats: usize, checkpoints: usize, messages: usize) {
    if setup.live {
        let c = estimate_cost(&setup.gateway, bank, repeats, checkpoints, messages);
        eprintln!(
            "live run: about {} completions and {} prompt tokens (upper bound, before re-prompts)",
            c.completions, c.prompt_tokens
        );
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Solve {
            topic,
            seed_state,
            scoring,
            common,
        } => {
            let data = DataDir(common.data.clone());
            let setup = setup(&common)?;
            let bank = load_bank(data.mcq(&topic))?;
            let seed = data.load_seed(&topic, &seed_state)?;
            announce_cost(&setup, &bank, scoring.repeats, 1, 0);
            let eval = Evaluator::new(setup.gateway.clone(), scoring.repeats)?.with_jobs(scoring.jobs);
            let checkpoint = eval.checkpoint(&seed_state, &seed, &bank)?;
            let matrix = ScoreMatrix {
                scenario: format!("solve {seed_state}"),
                topic,
                repeats: scoring.repeats,
                checkpoints: vec![checkpoint],
                error: None,
            };
            print!("{}", matrix.render());
            finish(&setup, Some(&matrix), common.out.as_deref())?;
            Ok(true)
        }
        Command::Scenario {
            scenario_file,
            topic,
            seed_state,
            scoring,
            common,
        } => {
            let data = DataDir(common.data.clone());
            let setup = setup(&common)?;
            let mut scenario = Scenario::load(&scenario_file)?;
            if let Some(t) = topic {
                scenario.topic = t;
            }
            if let Some(s) = seed_state {
                scenario.seed_state = s;
            }
            let bank = load_bank(data.mcq(&scenario.topic))?;
            let scripts = load_scripts(data.scripts(&scenario.topic))?;
            let seed = data.load_seed(&scenario.topic, &scenario.seed_state)?;
            let messages = scenario
                .blocks
                .iter()
                .filter_map(|b| scripts.get(b))
                .map(|s| s.messages.len())
                .sum();
            announce_cost(&setup, &bank, scoring.repeats, scenario.blocks.len() + 1, messages);
            let eval = Evaluator::new(setup.gateway.clone(), scoring.repeats)?.with_jobs(scoring.jobs);
            let matrix = eval.run_scenario(&scenario, seed, &scripts, &bank);
            print!("{}", matrix.render());
            finish(&setup, Some(&matrix), common.out.as_deref())?;
            Ok(!matrix.is_partial())
        }
        Command::Report { input } => {
            let matrix = ScoreMatrix::from_jsonl(&std::fs::read_to_string(&input)?)?;
            print!("{}", matrix.render());
            Ok(true)
        }
        Command::Classify {
            fixture,
            context_window,
            common,
        } => {
            let setup = setup(&common)?;
            let labeled = read_annotated(&fixture)?;
            let classifier = PromptedClassifier::new(setup.gateway.clone()).with_context_window(context_window);
            let messages: Vec<_> = labeled
                .iter()
                .map(|m| tutee_core::conversation::ChatMessage {
                    role: m.role,
                    text: m.text.clone(),
                })
                .collect();
            let mut agree = 0;
            for (i, m) in labeled.iter().enumerate() {
                let got = classifier.classify(&messages[i], &messages[..i]);
                if got.message_type == m.message_type {
                    agree += 1;
                } else {
                    println!("#{:<3} expected {:<28} got {}", m.index, m.message_type.label(), got.message_type.label());
                }
            }
            println!(
                "agreement {agree}/{} = {:.1}%",
                labeled.len(),
                100.0 * agree as f64 / labeled.len().max(1) as f64
            );
            finish(&setup, None, None)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

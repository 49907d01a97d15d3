use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use agdl_core::pipeline::{evaluate, learn, DesignModel, LearnerConfig};
use agdl_core::report::{jump_table, model_fsm_dot, rooms_dot, write_level_corpus};
use agdl_core::toysim::{
    parse_input_script, probe_gravity, probe_player_identity, random_walk_inputs, sprite_signature, GroundTruthDesign,
    SimState, Simulator,
};
use agdl_core::trace::{read_trace, write_trace, Trace};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

/// Learns game designs from play traces of 2D tile-based games.
#[derive(Debug, Parser)]
#[command(name = "agdl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the toy platformer and write a trace.
    Simulate {
        #[arg(long)]
        design: PathBuf,
        /// `script:<file>` or `random:<seed>:<frames>`.
        #[arg(long)]
        inputs: InputSpec,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the final simulator state, for probes.
        #[arg(long)]
        save_state: Option<PathBuf>,
    },
    /// Learn a design model from one or more traces.
    Learn {
        #[arg(long = "trace", required = true, num_args = 1..)]
        traces: Vec<PathBuf>,
        /// JSON learner configuration; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        min_precision: Option<f64>,
        #[arg(long)]
        min_support: Option<u32>,
        #[arg(long)]
        window: Option<u64>,
        #[arg(long)]
        penalty: Option<f64>,
        #[arg(long)]
        jump_tiles: Option<f64>,
    },
    /// Run an active experiment from a saved simulator state.
    Probe {
        kind: ProbeKind,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        state: PathBuf,
        /// Entity signature for the gravity probe; defaults to the player.
        #[arg(long)]
        entity: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a learned model against the design that generated its traces.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Contacts a tile needs before it counts as touched.
        #[arg(long, default_value_t = 2)]
        min_support: u32,
    },
    /// Write DOT graphs, the level corpus or a jump-metric table.
    Export {
        /// `dot-fsm:<class>`, `dot-rooms`, `corpus` or `jump-table`.
        what: ExportKind,
        #[arg(long = "model", required = true, num_args = 1..)]
        models: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Table format; defaults to csv for a `.csv` path, else text.
        #[arg(long)]
        format: Option<TableFormat>,
    },
}

#[derive(Debug, Clone)]
enum InputSpec {
    Script(PathBuf),
    Random { seed: u64, frames: usize },
}

impl FromStr for InputSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("script:") {
            return Ok(InputSpec::Script(path.into()));
        }
        let Some(rest) = s.strip_prefix("random:") else {
            return Err("expected script:<file> or random:<seed>:<frames>".into());
        };
        let (seed, frames) = rest.split_once(':').ok_or("expected random:<seed>:<frames>")?;
        let seed = seed.parse().map_err(|_| format!("bad seed {seed:?}"))?;
        let frames = frames.parse().map_err(|_| format!("bad frame count {frames:?}"))?;
        Ok(InputSpec::Random { seed, frames })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProbeKind {
    Player,
    Gravity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TableFormat {
    Text,
    Csv,
}

#[derive(Debug, Clone)]
enum ExportKind {
    DotFsm(String),
    DotRooms,
    Corpus,
    JumpTable,
}

impl FromStr for ExportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot-rooms" => Ok(ExportKind::DotRooms),
            "corpus" => Ok(ExportKind::Corpus),
            "jump-table" => Ok(ExportKind::JumpTable),
            _ => match s.strip_prefix("dot-fsm:") {
                Some(class) if !class.is_empty() => Ok(ExportKind::DotFsm(class.into())),
                _ => Err("expected dot-fsm:<class>, dot-rooms, corpus or jump-table".into()),
            },
        }
    }
}

/// A bad combination of otherwise well-formed arguments.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

/// Writes to `path`, or to stdout when it is `-`.
fn emit(path: &Path, text: &str) -> Result<()> {
    if path == Path::new("-") {
        std::io::stdout().write_all(text.as_bytes())?;
        return Ok(());
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_json_line(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn load_model(path: &Path) -> Result<DesignModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    DesignModel::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_design(path: &Path) -> Result<GroundTruthDesign> {
    Ok(GroundTruthDesign::load(path)?)
}

fn load_config(path: Option<&Path>) -> Result<LearnerConfig> {
    let Some(p) = path else {
        return Ok(LearnerConfig::default());
    };
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { design, inputs, seed, out, save_state } => {
            let design = load_design(&design)?;
            let inputs = match inputs {
                InputSpec::Script(path) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    parse_input_script(&text)?
                }
                InputSpec::Random { seed, frames } => random_walk_inputs(seed, frames),
            };
            if inputs.is_empty() {
                bail!(UsageError("input sequence is empty".into()));
            }
            let mut sim = Simulator::new(&design, seed)?;
            let header = sim.header(seed);
            let (frames, _) = sim.run(&inputs);
            let trace = Trace::new(header, frames)?;
            write_trace(&trace, &out)?;
            if let Some(path) = save_state {
                emit(&path, &to_json_line(&sim.state))?;
            }
        }
        Command::Learn { traces, config, out, eps, min_precision, min_support, window, penalty, jump_tiles } => {
            // flag > config file > default
            let mut cfg = load_config(config.as_deref())?;
            if let Some(v) = eps {
                cfg.eps = v;
            }
            if let Some(v) = min_precision {
                cfg.min_precision = v;
            }
            if let Some(v) = min_support {
                cfg.min_support = v;
            }
            if let Some(v) = window {
                cfg.window = v;
            }
            if let Some(v) = penalty {
                cfg.segment.penalty = Some(v);
            }
            if let Some(v) = jump_tiles {
                cfg.jump_tiles = v;
            }
            let traces = traces
                .iter()
                .map(|p| read_trace(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let model = learn(&traces, &cfg)?;
            emit(&out, &model.to_json())?;
        }
        Command::Probe { kind, design, state, entity, out } => {
            let design = load_design(&design)?;
            let text = fs::read_to_string(&state).with_context(|| format!("reading {}", state.display()))?;
            let start: SimState =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", state.display()))?;
            let result = match kind {
                ProbeKind::Player => {
                    let sig = probe_player_identity(&design, &start)?;
                    serde_json::json!({ "probe": "player", "signature": sig })
                }
                ProbeKind::Gravity => {
                    let sig = match entity {
                        Some(s) => s,
                        None => {
                            let Some(p) = &start.player else {
                                bail!(UsageError("state has no player; pass --entity".into()));
                            };
                            sprite_signature(&design.states[p.state].sprite)
                        }
                    };
                    let falls = probe_gravity(&design, &start, &sig)?;
                    serde_json::json!({ "probe": "gravity", "signature": sig, "gravity": falls })
                }
            };
            emit(&out, &to_json_line(&result))?;
        }
        Command::Eval { model, truth, out, min_support } => {
            let model = load_model(&model)?;
            let design = load_design(&truth)?;
            emit(&out, &to_json_line(&evaluate(&model, &design, min_support)))?;
        }
        Command::Export { what, models, out, format } => {
            let single = || -> Result<DesignModel> {
                if models.len() != 1 {
                    bail!(UsageError(format!("this export takes one model, got {}", models.len())));
                }
                load_model(&models[0])
            };
            match what {
                ExportKind::DotFsm(class) => {
                    let model = single()?;
                    let class = if class == "player" && !model.characters.contains_key("player") {
                        model.player_class.clone()
                    } else {
                        class
                    };
                    emit(&out, &model_fsm_dot(&model, &class)?)?;
                }
                ExportKind::DotRooms => emit(&out, &rooms_dot(&single()?.room_graph))?,
                ExportKind::Corpus => {
                    let n = write_level_corpus(&single()?, &out)?;
                    eprintln!("wrote {n} room grids to {}", out.display());
                }
                ExportKind::JumpTable => {
                    let loaded = models.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
                    let rows: Vec<(String, &DesignModel)> = models
                        .iter()
                        .zip(&loaded)
                        .map(|(p, m)| (p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()), m))
                        .collect();
                    let table = jump_table(&rows);
                    if let Some(w) = &table.warning {
                        eprintln!("warning: {w}");
                    }
                    let csv = match format {
                        Some(f) => matches!(f, TableFormat::Csv),
                        None => out.extension().is_some_and(|e| e == "csv"),
                    };
                    emit(&out, &if csv { table.to_csv() } else { table.to_text() })?;
                }
            }
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("AGDL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| UsageError(format!("AGDL_THREADS must be a number, got {v:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use growfrag::cli::{
    self, CheckKind, Invocation, Task, EXIT_CONFIG, EXIT_TASK_ERROR,
};
use growfrag::model::{registry, ModelConfig};
use growfrag::Error;

#[derive(Parser)]
#[command(name = "growfrag", version, about = "Growth-fragmentation simulation and spectral estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a task: `run [simulate|spectral|spine|check] [CHECK...] [key=value...]`.
    Run(RunArgs),
    /// Run verification checks: `check [CHECK...|all] [key=value...]`.
    Check(RunArgs),
    /// List the built-in model families.
    ListModels {
        #[arg(long)]
        json: bool,
    },
    /// Write one tagged-cell path (time, mass, log weight, event) as CSV.
    DumpPath(DumpArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Replay the config stored in a previous run's manifest.json.
    #[arg(long, conflicts_with = "config")]
    manifest: Option<PathBuf>,
    /// Model family; replaces the config's model section if it differs.
    #[arg(long, short)]
    model: Option<String>,
    #[arg(long, short)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, short, default_value_t = 0)]
    workers: usize,
    /// Output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
    /// Task, check names and key=value overrides.
    args: Vec<String>,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long, short)]
    model: String,
    #[arg(long, short)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    x0: f64,
    #[arg(long, default_value_t = 10.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Output file; stdout if omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Model parameter overrides, e.g. `a=2 fission.b=3`.
    overrides: Vec<String>,
}

fn invocation(args: &RunArgs, check_verb: bool) -> Result<Invocation, Error> {
    let mut inv = Invocation {
        config: args.config.clone(),
        manifest: args.manifest.clone(),
        model: args.model.clone(),
        seed: args.seed,
        output: args.output.clone(),
        ..Default::default()
    };
    if check_verb {
        inv.task = Some(Task::Check);
    }
    for a in &args.args {
        if a.contains('=') {
            inv.overrides.push(a.clone());
        } else if inv.task.is_none() {
            inv.task = Some(Task::parse(a).ok_or_else(|| {
                Error::config("command line", format!("unknown task `{a}`"))
            })?);
        } else if inv.task == Some(Task::Check) {
            if a == "all" {
                inv.checks.extend(CheckKind::ALL);
            } else {
                inv.checks.push(CheckKind::parse(a).ok_or_else(|| {
                    Error::config("command line", format!("unknown check `{a}`"))
                })?);
            }
        } else {
            return Err(Error::config("command line", format!("unexpected argument `{a}`")));
        }
    }
    Ok(inv)
}

fn run(args: &RunArgs, check_verb: bool) -> ExitCode {
    let cfg = match invocation(args, check_verb).and_then(|inv| cli::load_config(&inv)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match cli::run(&cfg, args.workers, args.quiet) {
        Ok(outcome) => {
            for r in &outcome.reports {
                print!("{}", r.render_text());
            }
            println!("results in {}", outcome.dir.display());
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config { .. } | Error::Io { .. } => EXIT_CONFIG,
                _ => EXIT_TASK_ERROR,
            };
            ExitCode::from(code as u8)
        }
    }
}

fn dump(args: &DumpArgs) -> Result<(), Error> {
    let mut model = toml::Table::new();
    let mut root = toml::Table::new();
    model.insert("family".into(), toml::Value::String(args.model.clone()));
    root.insert("model".into(), toml::Value::Table(model));
    for o in &args.overrides {
        cli::apply_override(&mut root, o)?;
    }
    let section = root.remove("model").expect("inserted above");
    let cfg: ModelConfig = section
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("model", e.to_string()))?;
    let model = cfg.build()?;
    match &args.output {
        Some(path) => {
            let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = std::io::BufWriter::new(f);
            cli::run_dump_path(&model, args.seed, args.x0, args.horizon, args.replicate, &mut w, path)
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            let name = PathBuf::from("<stdout>");
            cli::run_dump_path(&model, args.seed, args.x0, args.horizon, args.replicate, &mut w, &name)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(&args, false),
        Command::Check(args) => run(&args, true),
        Command::ListModels { json } => {
            if json {
                println!("{}", serde_json::to_string_pretty(&registry()).expect("serializable"));
            } else {
                print!("{}", cli::list_models_text());
            }
            ExitCode::SUCCESS
        }
        Command::DumpPath(args) => match dump(&args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG as u8)
            }
        },
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gcspn_cli::commands;
use gcspn_cli::{CliError, RunConfig};
use gcspn_core::propagation::BackwardHook;

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Render the synthetic scene set
    Gen,
    /// Train a model and write a checkpoint
    Train,
    /// Predict dense depth for the test scenes
    Infer,
    /// Score predictions against ground truth
    Eval,
    /// Compare analytic and finite-difference gradients
    Gradcheck,
    /// Sweep steps, neighbours, sparsity and toggles
    Ablate,
}

#[derive(clap::Args, Debug, Clone, Default)]
struct Overrides {
    /// Flat key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Mean aggregation instead of learned attention
    #[arg(long, global = true)]
    no_attention: bool,
    /// Neighbours by feature distance instead of 3D distance
    #[arg(long, global = true)]
    no_geometry: bool,
    /// Keep the first step's neighbour table
    #[arg(long, global = true)]
    static_graph: bool,
    #[arg(long, global = true)]
    reimpose_sparse: bool,
    /// Any config key, as key=value (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true, hide = true)]
    corrupt_backward: bool,
}

#[derive(Parser, Debug)]
#[command(name = "gcspn", version, about = "Graph spatial propagation for depth completion")]
struct Args {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

fn build_config(o: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Ok(v) = std::env::var("GCSPN_SEED") {
        cfg.set("seed", v.trim())?;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(s) = o.steps {
        cfg.prop.steps = s;
    }
    if let Some(k) = o.k {
        cfg.prop.k = k;
    }
    let flags = [
        (o.no_attention, "attention=false"),
        (o.no_geometry, "geometry=false"),
        (o.static_graph, "dynamic=false"),
        (o.reimpose_sparse, "reimpose_sparse=true"),
    ];
    for (on, pair) in flags {
        if on {
            cfg.set_pair(pair)?;
        }
    }
    for pair in &o.set {
        cfg.set_pair(pair)?;
    }
    Ok(cfg)
}

fn run(args: &Args) -> Result<String, CliError> {
    let cfg = build_config(&args.overrides)?;
    match args.command {
        Command::Gen => commands::cmd_gen(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Infer => commands::cmd_infer(&cfg),
        Command::Eval => commands::cmd_eval(&cfg),
        Command::Ablate => commands::cmd_ablate(&cfg),
        Command::Gradcheck => {
            let hook = BackwardHook {
                drop_softmax_centering: args.overrides.corrupt_backward,
            };
            let (report, passed) = commands::cmd_gradcheck(&cfg, hook)?;
            println!("{report}");
            if passed {
                Ok(String::new())
            } else {
                Err(CliError::GradCheck("a parameter group exceeds the tolerance".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("gcspn: error[{}]: {msg}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

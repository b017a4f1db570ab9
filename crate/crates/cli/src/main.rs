use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use diffcore::suite::GRAD_TOL;
use hsda::HsdaError;
use hsda_cli::commands;
use hsda_cli::RunConfig;

#[derive(Parser)]
#[command(name = "hsda", version, about = "Handwriting-based Alzheimer's screening with hybrid attention")]
struct Cli {
    /// key = value configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rendered image side length.
    #[arg(long, global = true)]
    size: Option<usize>,
    #[arg(long, global = true, value_name = "FORMAT")]
    raw_format: Option<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GradScale {
    Toy,
}

#[derive(Subcommand)]
enum Command {
    /// Clean raw recordings and write one kinematic signal CSV per sequence.
    Preprocess { input: PathBuf },
    /// Render each cleaned sequence as a PPM image.
    Render { input: PathBuf },
    /// Generate a balanced synthetic raw dataset.
    Synth {
        /// Subjects per class.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run the split, k-fold training and test evaluation.
    Train { input: PathBuf },
    /// Evaluate a saved checkpoint.
    Evaluate {
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// File of sample ids (subject_task), one per line.
        #[arg(long)]
        subset: Option<PathBuf>,
    },
    /// Finite-difference check of every primitive and the toy model.
    Gradcheck {
        #[arg(long, value_enum, default_value = "toy")]
        scale: GradScale,
        #[arg(long, hide = true)]
        inject_faulty_rule: bool,
    },
}

fn exit_code(e: &HsdaError) -> u8 {
    match e {
        HsdaError::Config(_) | HsdaError::Usage(_) => 2,
        _ => 1,
    }
}

fn need_out(out: &Option<PathBuf>) -> Result<&Path, HsdaError> {
    out.as_deref()
        .ok_or_else(|| HsdaError::Usage("--out is required for this command".into()))
}

fn run(cli: Cli) -> Result<ExitCode, HsdaError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = cli.size {
        cfg.render_size = n;
    }
    if let Some(f) = &cli.raw_format {
        cfg.raw_format = f.parse().map_err(HsdaError::Usage)?;
    }
    match &cli.cmd {
        Command::Preprocess { input } | Command::Render { input } | Command::Train { input } | Command::Evaluate { input, .. } => {
            cfg.input = input.display().to_string();
        }
        _ => {}
    }
    if let Command::Synth { n: Some(n) } = cli.cmd {
        cfg.synth_n = n;
    }
    cfg.validate()?;
    match &cli.cmd {
        Command::Preprocess { input } => commands::preprocess(input, need_out(&cli.out)?, &cfg)?,
        Command::Render { input } => commands::render(input, need_out(&cli.out)?, &cfg)?,
        Command::Synth { .. } => {
            let path = commands::synth(need_out(&cli.out)?, &cfg)?;
            println!("{}", path.display());
        }
        Command::Train { input } => {
            let m = commands::train(input, need_out(&cli.out)?, &cfg)?;
            println!("{m}");
        }
        Command::Evaluate {
            input,
            checkpoint,
            subset,
        } => {
            let m = commands::evaluate_cmd(input, checkpoint, subset.as_deref(), cli.out.as_deref(), &cfg)?;
            println!("{m}");
        }
        Command::Gradcheck {
            scale: GradScale::Toy,
            inject_faulty_rule,
        } => {
            let checks = commands::gradcheck(cfg.train.seed, *inject_faulty_rule)?;
            let report = commands::gradcheck_report(&checks);
            print!("{report}");
            if let Some(out) = &cli.out {
                commands::prepare_out(out, &cfg)?;
                let path = out.join("gradcheck.txt");
                std::fs::write(&path, &report).map_err(hsda::error::io_err(&path))?;
            }
            if checks.iter().any(|c| !c.report.passes(GRAD_TOL)) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

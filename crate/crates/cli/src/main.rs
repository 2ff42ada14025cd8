use std::path::PathBuf;
use std::process::ExitCode;

use astrodiff::pipeline::{self, Branch, Overrides, Preset, RestoreMode, RunConfig};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "astrodiff", version, about = "Dual-branch diffusion restoration of turbulence-degraded planet images")]
struct Cli {
    /// TOML run configuration; keys override the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory of the run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    #[value(name = "one_step", alias = "one-step")]
    OneStep,
    Fused,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the train and eval splits.
    GenData,
    /// Train the unconditional prior branch.
    TrainPrior,
    /// Train the conditional restoration branch.
    TrainRestore,
    /// Restore the eval split.
    Restore {
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
    },
    /// Bucketed PSNR and severity tables.
    Eval,
    /// Print the resolved configuration.
    ShowConfig,
}

fn resolve(cli: &Cli) -> astrodiff::Result<RunConfig> {
    let preset = cli.preset.map(|p| match p {
        PresetArg::Paper => Preset::Paper,
        PresetArg::Desk => Preset::Desk,
    });
    let flags = Overrides { seed: cli.seed, out_dir: cli.out.clone(), threads: cli.threads };
    match &cli.config {
        Some(path) => RunConfig::load(path, preset, &flags),
        None => RunConfig::resolve(preset, None, &flags),
    }
}

fn run(cli: &Cli, cfg: &RunConfig) -> astrodiff::Result<()> {
    match &cli.command {
        Command::GenData => {
            let m = pipeline::cmd_gen_data(cfg)?;
            println!("wrote {} manifests ({:.1}s)", m.tables.len(), m.wall_seconds);
        }
        Command::TrainPrior | Command::TrainRestore => {
            let branch = if matches!(cli.command, Command::TrainPrior) { Branch::Prior } else { Branch::Restore };
            let m = pipeline::cmd_train(branch, cfg)?;
            for c in &m.checkpoints {
                println!("checkpoint {}", c.display());
            }
            println!("{branch} trained in {:.1}s", m.wall_seconds);
        }
        Command::Restore { mode } => {
            let modes: &[RestoreMode] = match mode {
                ModeArg::OneStep => &[RestoreMode::OneStep],
                ModeArg::Fused => &[RestoreMode::Fused],
                ModeArg::Both => &RestoreMode::ALL,
            };
            for &md in modes {
                let m = pipeline::cmd_restore(md, cfg)?;
                println!("{md}: {} tables ({:.1}s)", m.tables.len(), m.wall_seconds);
            }
        }
        Command::Eval => {
            let t = pipeline::cmd_eval(cfg)?;
            print!("{}", pipeline::summary_csv(&t.summary));
            println!("summary {}", t.summary_path.display());
            println!("detail {}", t.detail_path.display());
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();

    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(2);
    }
    log::info!("preset {} seed {} out {}", cfg.preset, cfg.seed, cfg.out_dir.display());
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

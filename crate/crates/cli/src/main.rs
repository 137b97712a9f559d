use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kgtext_core::ablation::{run_ablation, AblationSpec};
use kgtext_core::run::{self, RunConfig};
use kgtext_core::synth::SynthConfig;
use kgtext_core::train::Modality;
use kgtext_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "kgtext", version, about = "Relation extraction from sentence bags and a knowledge graph")]
struct Cli {
    /// TOML run configuration (synthetic generator settings for `synth`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the sentence-bag model.
    PretrainText,
    /// Train the knowledge-graph model.
    PretrainGraph,
    /// Jointly train both models from their checkpoints.
    Cotrain,
    /// Fit thresholds on the validation split and report on the test split.
    Eval {
        #[arg(long, value_enum, default_value = "both")]
        modality: ModalityArg,
    },
    /// Generate a planted synthetic dataset.
    Synth,
    /// Print dictionary matches for each line of a whitespace-tokenized file.
    LinkEntities {
        /// Input file; standard input when omitted.
        input: Option<PathBuf>,
        /// Dictionary file; defaults to `paths.dictionary`.
        #[arg(long)]
        dictionary: Option<PathBuf>,
        /// Also report spans nested inside longer matches.
        #[arg(long)]
        nested: bool,
    },
    /// Train and evaluate the ablation grid; writes `ablation.tsv`.
    Ablate {
        /// Number of seeds, counting up from the configured one.
        #[arg(long, default_value_t = 3)]
        repeats: u64,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ModalityArg {
    Text,
    Graph,
    Both,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Text => Modality::Text,
            ModalityArg::Graph => Modality::Graph,
            ModalityArg::Both => Modality::Both,
        }
    }
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_deref().ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    Ok(config)
}

fn synth_config(cli: &Cli) -> Result<SynthConfig> {
    let mut config = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.world.seed = s;
    }
    Ok(config)
}

fn read_input(input: Option<&Path>) -> Result<String> {
    match input {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e)),
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).map_err(|e| Error::io("<stdin>", e))?;
            Ok(s)
        }
    }
}

fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::PretrainText => run::cmd_pretrain_text(&run_config(cli)?, &cli.out, cli.force),
        Command::PretrainGraph => run::cmd_pretrain_graph(&run_config(cli)?, &cli.out, cli.force),
        Command::Cotrain => run::cmd_cotrain(&run_config(cli)?, &cli.out, cli.force),
        Command::Eval { modality } => Ok(run::cmd_eval(&run_config(cli)?, (*modality).into(), &cli.out, cli.force)?.1),
        Command::Synth => Ok(run::cmd_synth(&synth_config(cli)?, &cli.out, cli.force)?.1),
        Command::LinkEntities { input, dictionary, nested } => {
            let dict = match dictionary {
                Some(d) => d.clone(),
                None => run_config(cli)?.require("dictionary")?.to_path_buf(),
            };
            let text = read_input(input.as_deref())?;
            let out = run::cmd_link_entities(&dict, &text, *nested)?;
            Ok(out.trim_end().to_string())
        }
        Command::Ablate { repeats } => {
            let base = run_config(cli)?;
            let path = cli.out.join("ablation.tsv");
            if path.exists() && !cli.force {
                return Err(Error::Config(format!("{} exists; pass --force to overwrite", path.display())));
            }
            let mut spec = AblationSpec::new(base);
            spec.seeds = (0..*repeats).map(|i| spec.base.seed + i).collect();
            let table = run_ablation(&spec)?;
            let tsv = table.to_tsv();
            std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
            std::fs::write(&path, &tsv).map_err(|e| Error::io(&path, e))?;
            Ok(format!("{}wrote {}", tsv, path.display()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summary) => {
            if !summary.is_empty() {
                let _ = writeln!(std::io::stdout(), "{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `maskcon` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
//! 4 numerical abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use maskcon::data::{gen_hierarchical_gaussian, write_vds};
use maskcon::eval::EmbeddingSpace;
use maskcon::relations::Temperature;
use maskcon::train::{cmd_eval, cmd_sweep, cmd_train, DataSource, RunConfig};
use maskcon::Error;

#[derive(Parser)]
#[command(name = "maskcon", version, about = "Contrastive learning from coarse labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics.csv and model.ckpt.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Further `--key value` config overrides.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Recall@K and d_z of a checkpoint on a VDS dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "1,2,5,10", value_delimiter = ',')]
        ks: Vec<usize>,
        #[arg(long, default_value = "features")]
        space: String,
        /// Also write the recall report CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every (w, tau) cell and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        w: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        tau: Vec<String>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Write the synthetic train/test split as train.vds and test.vds.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::BadConfig(_) | Error::DimMismatch(_) | Error::NonPositiveTemperature(_) | Error::TooFewPoints { .. } => 2,
        Error::Io(_) | Error::MalformedRecord(_) | Error::IncompleteCoarseMap(_) | Error::ChecksumMismatch { .. } => 3,
        _ => 4,
    }
}

fn pairs(overrides: &[String]) -> Result<Vec<(&str, &str)>, Error> {
    if !overrides.len().is_multiple_of(2) {
        return Err(Error::BadConfig(format!("override {:?} has no value", overrides.last())));
    }
    overrides
        .chunks(2)
        .map(|kv| {
            let key = kv[0]
                .strip_prefix("--")
                .ok_or_else(|| Error::BadConfig(format!("expected --key, got {:?}", kv[0])))?;
            Ok((key, kv[1].as_str()))
        })
        .collect()
}

fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<RunConfig, Error> {
    let base = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    base.with_overrides(pairs(overrides)?)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            overrides,
        } => {
            let mut cfg = load_config(config.as_ref(), &overrides)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let outcome = cmd_train(&cfg, |row| {
                let recall = row
                    .recall
                    .map(|r| format!(" recall@1 {:.4}", r[0]))
                    .unwrap_or_default();
                eprintln!(
                    "epoch {:>3} loss {:.5} lr {:.5} d_z sup {:.4} mask {:.4}{recall}",
                    row.epoch, row.objective, row.lr, row.d_z_sup, row.d_z_mask
                );
            })?;
            print!("{}", outcome.final_recall.to_csv());
            eprintln!("wrote {}", cfg.out_dir.display());
        }
        Command::Eval {
            checkpoint,
            data,
            ks,
            space,
            out,
        } => {
            let space: EmbeddingSpace = space.parse()?;
            let (recall, dz) = cmd_eval(&checkpoint, &data, &ks, space)?;
            print!("{}", recall.to_csv());
            eprint!("{}", dz.to_csv());
            if let Some(p) = out {
                std::fs::write(p, recall.to_csv())?;
            }
        }
        Command::Sweep {
            config,
            w,
            tau,
            overrides,
        } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            let taus = tau.iter().map(|t| t.parse()).collect::<Result<Vec<Temperature>, _>>()?;
            let rows = cmd_sweep(&cfg, &w, &taus, |r| {
                eprintln!("w {} tau {} recall@1 {:.4}", r.w, r.tau, r.recall[0]);
            })?;
            print!("{}", maskcon::train::sweep_csv(&rows));
        }
        Command::GenData { config, out, overrides } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            let DataSource::Synthetic(syn) = &cfg.data else {
                return Err(Error::BadConfig("gen-data needs data = synthetic".into()));
            };
            let (train, test) = gen_hierarchical_gaussian(syn)?;
            std::fs::create_dir_all(&out)?;
            write_vds(&train, out.join("train.vds"))?;
            write_vds(&test, out.join("test.vds"))?;
            eprintln!("wrote {} train / {} test vectors to {}", train.len(), test.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

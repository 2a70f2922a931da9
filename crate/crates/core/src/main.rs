use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trex_core::config::{DescriptionSource, ReactionClassMode, RunConfig, Stage};
use trex_core::data::synthetic_corpus;
use trex_core::pipeline::{self, DescribeScope};
use trex_core::Result;

#[derive(Parser)]
#[command(name = "trex", version, about = "Text-assisted two-stage retrosynthesis")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set epochs.center=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Read descriptions from this JSONL cache only; no resolver or LLM calls.
    #[arg(long, global = true, value_name = "FILE")]
    descriptions_from: Option<PathBuf>,
    /// Keep stereochemistry when matching.
    #[arg(long, global = true)]
    stereo: bool,
    #[arg(long, global = true)]
    reaction_class: Option<ReactionClassMode>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, deduplicate and split a reaction corpus into the run directory.
    Ingest {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        cross: Option<PathBuf>,
        /// Generate a templated corpus of N reactions instead of reading one.
        #[arg(long, value_name = "N")]
        synthetic: Option<usize>,
    },
    /// Fill the description cache for products or stage-1 candidates.
    Describe {
        #[arg(long, value_enum, default_value = "products")]
        scope: Scope,
    },
    /// Train one stage, or all of them with `--stage pipeline`.
    Train {
        #[arg(long)]
        stage: Option<Stage>,
    },
    /// Ranked reactant sets for one product SMILES, as JSON.
    Predict {
        product: String,
        /// Known reaction type, 1 to 10.
        #[arg(long)]
        reaction_type: Option<u8>,
    },
    /// Top-k exact match on the test split before and after reranking.
    Eval,
    /// Print the effective configuration.
    Config,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Scope {
    Products,
    Candidates,
}

fn build_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| trex_core::TrexError::Config(format!("override `{kv}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(d) = &c.run_dir {
        cfg.run_dir = d.clone();
    }
    if let Some(p) = &c.descriptions_from {
        cfg.text.source = DescriptionSource::File;
        cfg.text.descriptions = Some(p.clone());
    }
    if c.stereo {
        cfg.stereo = true;
    }
    if let Some(m) = c.reaction_class {
        cfg.reaction_class = m;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = build_config(&cli.common)?;
    match cli.cmd {
        Command::Ingest { data, cross, synthetic } => {
            if let Some(n) = synthetic {
                std::fs::create_dir_all(&cfg.run_dir)?;
                let path = cfg.run_dir.join("synthetic.txt");
                std::fs::write(&path, synthetic_corpus(n, cfg.data.split_seed).join("\n") + "\n")?;
                cfg.data.path = Some(path);
            }
            if let Some(d) = data {
                cfg.data.path = Some(d);
            }
            if let Some(c) = cross {
                cfg.data.cross_path = Some(c);
            }
            print_json(&pipeline::ingest(&cfg)?)
        }
        Command::Describe { scope } => {
            let scope = match scope {
                Scope::Products => DescribeScope::Products,
                Scope::Candidates => DescribeScope::Candidates,
            };
            print_json(&pipeline::describe(&cfg, scope)?)
        }
        Command::Train { stage } => {
            let outcomes = pipeline::train_stage(&cfg, stage.unwrap_or(cfg.stage))?;
            for o in &outcomes {
                println!(
                    "{}: best epoch {} (val {:.4}), checkpoint {}, metrics {}",
                    o.stage,
                    o.best_epoch,
                    o.best_val,
                    o.checkpoint.display(),
                    o.metrics.display()
                );
            }
            Ok(())
        }
        Command::Predict { product, reaction_type } => {
            println!("{}", serde_json::to_string(&pipeline::predict(&cfg, &product, reaction_type)?)?);
            Ok(())
        }
        Command::Eval => {
            let s = pipeline::evaluate(&cfg)?;
            println!("{} ({})", s.tag, s.split);
            for r in &s.reports {
                println!("  {:<16} top-{:<2} {:.4}  (n={})", r.label, r.k, r.overall, r.n_records);
            }
            if let Some(ret) = &s.retention {
                let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
                println!(
                    "  retention: top-1 kept {} of {} ({}), ranks 2-3 promoted {} of {} ({})",
                    ret.kept_top1,
                    ret.stage1_top1,
                    f(ret.kept_fraction()),
                    ret.promoted_to_top1,
                    ret.stage1_rank2_3,
                    f(ret.promoted_fraction())
                );
            }
            Ok(())
        }
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! Command-line front end: world generation, training, evaluation, the
//! ablation matrix, and plot exports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use igsearch::config::RunConfig;
use igsearch::report::export_plots;
use igsearch::trainer::{evaluate, load_policy, split_questions, train};
use igsearch::world::{generate_world, World};

#[derive(Parser)]
#[command(name = "igsearch", version, about = "Information-gain shaped search-policy training")]
struct Cli {
    /// Configuration file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. --set ig.alpha=0.1 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads for the data-parallel phases; 1 forces sequential.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic QA world and write it as JSON lines.
    GenWorld {
        /// Output world file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy; writes metrics, IG records, and checkpoints.
    Train {
        /// Run directory for outputs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reuse a generated world instead of building one from the config.
        #[arg(long)]
        world_file: Option<PathBuf>,
    },
    /// Evaluate a saved policy on the held-out split.
    Eval {
        /// Policy JSON produced by training.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        world_file: Option<PathBuf>,
    },
    /// Train the full ablation matrix and summarize final metrics.
    Ablate {
        /// Directory receiving one run subdirectory per variant and seed.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
    },
    /// Turn a run directory into plot-ready TSV tables.
    ExportPlots {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Output directory for the tables.
        #[arg(long)]
        out: PathBuf,
    },
}

/// (name, overrides) for every ablation variant.
const ABLATION_MATRIX: &[(&str, &[&str])] = &[
    ("full", &[]),
    ("no_ig", &["ig.enabled=false"]),
    ("alpha_0", &["ig.alpha=0"]),
    ("lambda_1", &["ig.lambda=1.0"]),
    ("no_dead_zone", &["ig.dead_zone=off"]),
    ("no_soft_clip", &["ig.soft_clip=off"]),
    ("no_length_norm", &["ig.length_norm=off"]),
    ("scope_think_query", &["ig.scope=think_query"]),
    ("scope_all", &["ig.scope=all"]),
    ("baseline_random_docs_only", &["ig.baseline=random_docs_only"]),
    ("baseline_bottom_k", &["ig.baseline=bottom_k"]),
    ("baseline_empty", &["ig.baseline=empty"]),
];

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Ok(seed) = std::env::var("IGSEARCH_SEED") {
        cfg.set("train.seed", &seed)
            .context("IGSEARCH_SEED is not a valid seed")?;
    }
    if let Some(path) = &cli.config {
        cfg.apply_file(path)
            .with_context(|| format!("reading config {}", path.display()))?;
    }
    for spec in &cli.overrides {
        cfg.apply_override(spec)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_or_generate_world(cfg: &RunConfig, world_file: Option<&Path>) -> Result<World> {
    match world_file {
        Some(path) => World::load(path).with_context(|| format!("loading {}", path.display())),
        None => Ok(generate_world(cfg.train.seed, cfg.world_spec())?),
    }
}

fn effective_parallel(jobs: Option<usize>) -> Result<bool> {
    match jobs {
        Some(0) => anyhow::bail!("--jobs must be >= 1"),
        Some(1) => Ok(false),
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
            Ok(true)
        }
        None => Ok(cfg!(feature = "parallel")),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli)?;
    let parallel = effective_parallel(cli.jobs)?;
    match cli.cmd {
        Cmd::GenWorld { out } => {
            let world = generate_world(cfg.train.seed, cfg.world_spec())?;
            world.save(&out)?;
            println!(
                "wrote {} ({} questions, {} documents)",
                out.display(),
                world.questions.len(),
                world.corpus.len()
            );
        }
        Cmd::Train { out, world_file } => {
            let world = load_or_generate_world(&cfg, world_file.as_deref())?;
            let outcome = train(&cfg, &world, out.as_deref(), parallel)?;
            println!("{}", serde_json::to_string_pretty(&outcome.final_eval)?);
        }
        Cmd::Eval { policy, world_file } => {
            let world = load_or_generate_world(&cfg, world_file.as_deref())?;
            let policy = load_policy(&policy)?;
            let (_, eval_ids) = split_questions(&world, cfg.env.eval_fraction, cfg.train.seed);
            let summary = evaluate(&policy, &world, &eval_ids, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Cmd::Ablate { out, seeds } => {
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| s.trim().parse().context("seeds must be comma-separated integers"))
                .collect::<Result<_>>()?;
            anyhow::ensure!(!seeds.is_empty(), "at least one seed required");
            std::fs::create_dir_all(&out)?;
            let mut summary =
                String::from("variant\tseed\teval_em\teval_f1\tmean_searches\tmean_query_len\n");
            for (name, sets) in ABLATION_MATRIX {
                for &seed in &seeds {
                    let mut vcfg = cfg.clone();
                    vcfg.train.seed = seed;
                    for s in *sets {
                        vcfg.apply_override(s)?;
                    }
                    let world = generate_world(seed, vcfg.world_spec())?;
                    let dir = out.join(format!("{name}_seed{seed}"));
                    let outcome = train(&vcfg, &world, Some(&dir), parallel)?;
                    let e = &outcome.final_eval;
                    let _ = writeln!(
                        summary,
                        "{name}\t{seed}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                        e.em, e.f1, e.mean_searches, e.mean_query_len
                    );
                    log::info!("{name} seed {seed}: em {:.3} f1 {:.3}", e.em, e.f1);
                }
            }
            std::fs::write(out.join("summary.tsv"), &summary)?;
            print!("{summary}");
        }
        Cmd::ExportPlots { run, out } => {
            let paths = export_plots(&run, &out)?;
            for p in paths {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// Configuration mistakes exit 2; runtime failures exit 1.
fn classify(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<igsearch::Error>() {
        Some(igsearch::Error::ConfigInvalid(_)) | Some(igsearch::Error::InvalidHyperparam(_)) => 2,
        _ => {
            if err.to_string().contains("--jobs") || err.to_string().contains("IGSEARCH_SEED") {
                2
            } else {
                1
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

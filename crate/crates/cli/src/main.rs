//! `xtalkprint`: enroll a simulated fleet, train locality classifiers and
//! produce the evaluation reports.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use xtalkprint::par::{self, Execution};
use xtalkprint::pipeline::{self, RunConfig, HEADLINE_PATTERNS};
use xtalkprint::topology::{Embedding, PatternKind};

#[derive(Parser)]
#[command(name = "xtalkprint", version, about = "Crosstalk fingerprinting of a simulated device fleet")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "XTALKPRINT_OUT")]
    out: Option<PathBuf>,
    /// Number of enrollment batches.
    #[arg(long, global = true)]
    batches: Option<u32>,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write the fleet and its error models.
    FleetInit,
    /// Run idle tomography on every device and batch, resuming where left off.
    Enroll,
    /// Slice enrolled fingerprints into per-pattern datasets, or one probe.
    Slice(SliceArgs),
    /// Train one classifier per pattern on the training batches.
    Train,
    /// Predict the locality of a probe fingerprint.
    Infer {
        /// Probe fingerprint (compact JSON or feature CSV).
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        pattern: PatternKind,
    },
    /// Produce the distance and accuracy reports.
    Eval,
    /// List or count the embeddings of a pattern into the fleet.
    Embeddings {
        #[arg(long)]
        pattern: PatternKind,
        #[arg(long)]
        count: bool,
    },
}

#[derive(Args)]
struct SliceArgs {
    /// With --device, --batch and --map: slice a single probe.
    #[arg(long, requires_all = ["device", "batch", "map", "probe_out"])]
    pattern: Option<PatternKind>,
    #[arg(long)]
    device: Option<String>,
    #[arg(long)]
    batch: Option<u32>,
    /// Device qubit of every pattern vertex, comma separated.
    #[arg(long, value_delimiter = ',')]
    map: Option<Vec<usize>>,
    /// Where to write the probe fingerprint (JSON, or CSV by extension).
    #[arg(long)]
    probe_out: Option<PathBuf>,
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(b) = common.batches {
        config.batches = b;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.common.jobs == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    if let Command::Embeddings { pattern, count } = &cli.command {
        let seed = cli.common.seed.unwrap_or(RunConfig::default().seed);
        let found = pipeline::embeddings(*pattern, seed);
        if *count {
            println!("{}", found.len());
        } else {
            for e in &found {
                println!("{}", e.describe());
            }
        }
        return Ok(());
    }
    let config = resolve(&cli.common)?;
    par::with_jobs(cli.common.jobs, || execute(&cli.command, &config, exec))
}

fn execute(command: &Command, config: &RunConfig, exec: Execution) -> Result<()> {
    let out = config.out_dir.display();
    match command {
        Command::FleetInit => {
            let (fleet, _) = pipeline::fleet_init(config)?;
            for d in &fleet.devices {
                println!("{}", pipeline::describe_graph(d));
            }
            println!("wrote fleet and error models to {out}");
        }
        Command::Enroll => {
            let s = pipeline::enroll(config, exec)?;
            println!(
                "enrolled {} device-batches, {} already present, {} incomplete",
                s.enrolled.len(),
                s.skipped.len(),
                s.incomplete.len()
            );
            for (d, b) in &s.incomplete {
                println!("incomplete: {d} batch {b}");
            }
        }
        Command::Slice(args) => match args.pattern {
            Some(pattern) => {
                let (Some(device), Some(batch), Some(map), Some(path)) = (&args.device, args.batch, &args.map, &args.probe_out) else {
                    bail!("--pattern needs --device, --batch, --map and --probe-out");
                };
                let emb = Embedding {
                    pattern,
                    device_id: device.clone(),
                    vertex_map: map.clone(),
                };
                let f = pipeline::slice_probe(config, &emb, batch)?;
                if path.extension().is_some_and(|e| e == "csv") {
                    f.write_csv(path)?;
                } else {
                    f.write_json(path)?;
                }
                println!("wrote {} features of {} to {}", f.dim(), emb.describe(), path.display());
            }
            None => {
                for d in pipeline::slice_all(config, exec)? {
                    println!("{}: {} classes, {} samples, {} features", d.pattern, d.num_classes(), d.samples.len(), d.dim());
                }
            }
        },
        Command::Train => {
            for c in pipeline::train(config, exec)? {
                let loss = c.training.set_losses.last().copied().unwrap_or(f64::NAN);
                println!(
                    "{}: {} classes, {} components, {} epochs, final loss {loss:.4}{}",
                    c.pattern,
                    c.classes.len(),
                    c.preprocess.pca.retained,
                    c.training.epochs,
                    if c.training.converged { "" } else { " (epoch-set cap reached)" }
                );
            }
        }
        Command::Infer { probe, pattern } => {
            let r = pipeline::infer(config, probe, *pattern)?;
            println!("device {}", r.embedding.device_id);
            println!("vertex_map {:?}", r.embedding.vertex_map);
            println!("class {}", r.class);
            println!("margin {:.6}", r.margin);
        }
        Command::Eval => {
            let s = pipeline::eval(config, exec)?;
            println!("pattern  inter/intra  device  embedding  centroid");
            for (d, a) in s.distances.iter().zip(&s.by_pattern) {
                println!(
                    "{:<7}  {:>11.2}  {:>6.3}  {:>9.3}  {:>8.3}",
                    d.pattern.to_string(),
                    d.ratio,
                    a.device_accuracy,
                    a.embedding_accuracy,
                    a.centroid_embedding_accuracy
                );
            }
            let head: Vec<_> = s.by_pattern.iter().filter(|a| HEADLINE_PATTERNS.contains(&a.pattern)).collect();
            if !head.is_empty() {
                let n = head.len() as f64;
                println!(
                    "mean over L4/T4/L5p/T5p: device {:.3}, embedding {:.3}",
                    head.iter().map(|a| a.device_accuracy).sum::<f64>() / n,
                    head.iter().map(|a| a.embedding_accuracy).sum::<f64>() / n
                );
            }
            println!("reports written to {}", config.paths().reports().display());
        }
        Command::Embeddings { .. } => unreachable!("handled before config resolution"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

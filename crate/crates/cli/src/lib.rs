//! Headless driver: serving, training from a marks file, batch transfer,
//! benchmarking and phantom generation.

pub mod bench;
pub mod error;
pub mod phantom;
pub mod pipeline;
pub mod settings;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use dictseg::prelude::*;

pub use error::{CliError, Result};
pub use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "dictseg", version, about = "Dictionary-based interactive segmentation")]
pub struct Cli {
    /// TOML file with defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Build a dictionary, propagate a marks file and write a model.
    Train(TrainArgs),
    /// Apply a model to an image or stack.
    Apply(ApplyArgs),
    /// Time preprocessing and updates.
    Bench(BenchArgs),
    /// Write a synthetic image with truth and scripted marks.
    Phantom(PhantomCmd),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value_t = 16)]
    pub max_sessions: usize,
    /// Largest accepted request body in MiB.
    #[arg(long, default_value_t = 512)]
    pub max_body_mib: usize,
    /// Longest wait of a result request, in seconds.
    #[arg(long, default_value_t = 30)]
    pub max_wait: u64,
    /// Threads per batch job; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub batch_workers: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// PNG of class ids, 0 = unmarked.
    #[arg(long)]
    pub marks: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Images or TIFF stacks, concatenated in order.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long = "size", default_values_t = [512])]
    pub sizes: Vec<usize>,
    #[arg(long = "patch", default_values_t = [9])]
    pub patch_sizes: Vec<usize>,
    /// `BRANCHING:LAYERS`, repeatable.
    #[arg(long = "tree", default_values = ["5:4"], value_parser = parse_tree)]
    pub trees: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 15)]
    pub repeats: usize,
    /// Print JSON lines instead of a table.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Args)]
pub struct PhantomCmd {
    #[command(flatten)]
    pub phantom: phantom::PhantomArgs,
    #[arg(long, short)]
    pub out: PathBuf,
}

fn parse_tree(s: &str) -> std::result::Result<(usize, usize), String> {
    s.split_once(':')
        .and_then(|(b, t)| Some((b.parse().ok()?, t.parse().ok()?)))
        .ok_or_else(|| format!("expected BRANCHING:LAYERS, got '{s}'"))
}

impl Cli {
    pub fn run(self) -> Result<()> {
        let config = self.config.as_deref();
        match self.command {
            Command::Serve(a) => serve(&a),
            Command::Train(a) => cmd_train(a, config),
            Command::Apply(a) => cmd_apply(a, config),
            Command::Bench(a) => cmd_bench(a, config),
            Command::Phantom(a) => cmd_phantom(&a),
        }
    }
}

fn serve(a: &ServeArgs) -> Result<()> {
    let limits = dictseg_server::Limits {
        max_sessions: a.max_sessions,
        max_body_bytes: a.max_body_mib << 20,
        max_wait: Duration::from_secs(a.max_wait),
        batch_workers: a.batch_workers,
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Invalid(format!("runtime: {e}")))?;
    rt.block_on(dictseg_server::serve(a.addr, limits))
        .map_err(|e| CliError::Invalid(format!("serve {}: {e}", a.addr)))
}

fn cmd_train(a: TrainArgs, config: Option<&Path>) -> Result<()> {
    let settings = a.settings.resolve(config)?;
    let image = pipeline::read_single_image(&a.image)?;
    let marks = pipeline::read_marks(&a.marks, image.shape(), settings.classes)?;
    let source = a.image.file_name().map(|n| n.to_string_lossy().into_owned());
    let report = pipeline::train(&image, &marks, &settings, source, &a.out)?;
    let t = report.timings;
    println!(
        "dictionary {} elements, {} marked pixels, {} classes",
        report.model.tree().len(),
        marks.len(),
        marks.classes()
    );
    println!(
        "build {:.0} ms (dictionary {:.0}, assignment {:.0}, graph {:.0}, normalization {:.0}), update {:.1} ms",
        (t.dictionary + t.assignment + t.biadjacency + t.normalization).as_secs_f64() * 1e3,
        t.dictionary.as_secs_f64() * 1e3,
        t.assignment.as_secs_f64() * 1e3,
        t.biadjacency.as_secs_f64() * 1e3,
        t.normalization.as_secs_f64() * 1e3,
        report.update_ms
    );
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_apply(a: ApplyArgs, config: Option<&Path>) -> Result<()> {
    let settings = a.settings.resolve(config)?;
    let model = TrainedModel::load(&a.model)?;
    let slices = pipeline::read_stack(&a.input)?;
    let (output, files) = pipeline::apply(&model, &slices, &settings, &a.out)?;
    println!("{} slices", slices.len());
    if settings.centres.is_some() {
        println!("{} centres", output.centres.len());
    }
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs, config: Option<&Path>) -> Result<()> {
    let settings = a.settings.resolve(config)?;
    let dict = settings.dictionary();
    let params = bench::BenchParams {
        sizes: a.sizes,
        patch_sizes: settings.patch_size.map_or(a.patch_sizes, |m| vec![m]),
        trees: match (settings.branching, settings.layers) {
            (None, None) => a.trees,
            _ => vec![(dict.tree.branching, dict.tree.layers)],
        },
        repeats: a.repeats,
        seed: dict.tree.seed,
        iterations: dict.tree.iterations,
        subsample: dict.subsample,
        options: settings.update_options()?,
    };
    if !a.json {
        println!("{}", bench::table_header());
    }
    bench::run(&params, |r| {
        if a.json {
            println!("{}", serde_json::to_string(r).expect("record serializes"));
        } else {
            println!("{}", bench::table_row(r));
        }
    })?;
    Ok(())
}

fn cmd_phantom(a: &PhantomCmd) -> Result<()> {
    let p = phantom::generate(&a.phantom)?;
    let marks = phantom::scripted_marks(&p, a.phantom.kind)?;
    let files = phantom::write(&p, &marks, &a.out)?;
    println!(
        "{} objects, {} marked pixels ({:.2}%)",
        p.centres.len(),
        marks.len(),
        100.0 * marks.len() as f64 / p.shape().len() as f64
    );
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

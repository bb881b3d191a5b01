use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ssdr_al::cloud::{load_point_cloud, save_point_cloud};
use ssdr_al::harness::config::parse_scene_spec;
use ssdr_al::harness::{evaluate, generate_scene, run_experiment, RunConfig};
use ssdr_al::partition::{generate_superpoints, PartitionerParams};
use ssdr_al::{Error, Result};

#[derive(Parser)]
#[command(name = "ssdr", version, about = "Superpoint active-learning selection for point cloud segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Group a cloud into superpoints and write it with a superpoint id column.
    Partition {
        cloud: PathBuf,
        #[arg(long)]
        classes: usize,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = PartitionerParams::default().voxel_size)]
        voxel_size: f64,
        #[arg(long, default_value_t = PartitionerParams::default().color_threshold)]
        color_threshold: f64,
        #[arg(long, default_value_t = PartitionerParams::default().normal_threshold)]
        normal_threshold: f64,
        #[arg(long, default_value_t = PartitionerParams::default().min_region)]
        min_region: usize,
        #[arg(long, default_value_t = PartitionerParams::default().max_extent)]
        max_extent: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic scene from a `scene.key = value` file.
    GenScene {
        spec: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run an active-learning experiment and emit a JSON-lines log.
    Run { config: PathBuf },
    /// Score predicted labels against ground truth.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        classes: usize,
    },
}

/// Labels from a file holding either one integer per line or cloud rows (label in column 7).
fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let field = match fields.len() {
            1 => fields[0],
            7 | 8 => fields[6],
            n => {
                return Err(Error::Parse { path: path.to_path_buf(), line: i + 1, msg: format!("expected 1, 7 or 8 fields, found {n}") })
            }
        };
        out.push(field.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("label is not a nonnegative integer: {field:?}"),
        })?);
    }
    Ok(out)
}

fn init_threads() -> Result<()> {
    let threads = match std::env::var("SSDR_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| Error::Config(format!("SSDR_THREADS: bad value {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Partition { cloud, classes, out, voxel_size, color_threshold, normal_threshold, min_region, max_extent, seed } => {
            let params = PartitionerParams { voxel_size, color_threshold, normal_threshold, min_region, max_extent, rng_seed: seed };
            params.validate()?;
            let cloud = load_point_cloud(&cloud, classes)?;
            let partition = generate_superpoints(&cloud, &params)?;
            save_point_cloud(&out, &cloud, Some(&partition))?;
            eprintln!("{} points -> {} superpoints", cloud.len(), partition.num_superpoints());
        }
        Command::GenScene { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(|source| Error::Io { path: spec.clone(), source })?;
            let cloud = generate_scene(&parse_scene_spec(&text)?)?;
            save_point_cloud(&out, &cloud, None)?;
        }
        Command::Run { config } => {
            let cfg = RunConfig::from_file(&config)?;
            let log = run_experiment(&cfg)?;
            match &cfg.output {
                Some(path) => {
                    let io_err = |source| Error::Io { path: path.clone(), source };
                    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
                    log.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(io_err)?;
                }
                None => {
                    let stdout = std::io::stdout();
                    log.write_jsonl(stdout.lock()).map_err(|source| Error::Io { path: "<stdout>".into(), source })?;
                }
            }
        }
        Command::Eval { pred, gt, classes } => {
            let m = evaluate(&read_labels(&pred)?, &read_labels(&gt)?, classes)?;
            println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

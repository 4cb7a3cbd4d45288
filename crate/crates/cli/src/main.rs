use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transgc_core::harness::files::{estimate_from_files, write_estimates, EstimateFlags, InputFiles};
use transgc_core::harness::reproduce::{reproduce, ukb_fixture, ReproduceOptions, Scale, Target};
use transgc_core::harness::runner::run_experiment;
use transgc_core::shrinkage::{linear_grid, log_grid, write_curve_csv};
use transgc_core::{
    blockwise_moments, emit_shrinkage_curve, merge_ld_blocks, BlockPartition, CovSource, CovarianceMatrix,
    Error, ExperimentConfig, MomentEstimates, Provenance,
};

#[derive(Parser, Debug)]
#[command(name = "transgc", version, about = "Trans-ancestry genetic correlation from genetic-predicted traits")]
struct Cli {
    /// Experiment config (flat `key=value` text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides `base_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replicated runs.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output directory. Single-table commands print to stdout without it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a replicated simulation experiment.
    Simulate(SimulateArgs),
    /// Estimate the corrected correlation from summary statistics and target-cohort files.
    Estimate(EstimateArgs),
    /// Spectral LD moments of two covariance structures.
    Moments(MomentsArgs),
    /// Merge two LD block specs into their coarsest common refinement.
    MergeBlocks(MergeArgs),
    /// Shrinkage path S(t) over an omega grid.
    ShrinkageCurve(CurveArgs),
    /// Regenerate a published table or figure.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Override a config key, e.g. `--set dims.n=5000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Summary statistics CSV with a `# n=<int>` first line.
    #[arg(long)]
    summary_stats: PathBuf,
    /// Target-cohort genotype CSV.
    #[arg(long)]
    genotypes: PathBuf,
    /// Target-cohort trait CSV.
    #[arg(long)]
    traits: PathBuf,
    /// Moments CSV.
    #[arg(long)]
    moments: PathBuf,
    #[arg(long)]
    h2_beta: f64,
    #[arg(long)]
    h2_alpha: f64,
    /// Correlate the traits without centering.
    #[arg(long)]
    no_center: bool,
    #[arg(long, default_value = "trait")]
    label: String,
}

#[derive(Args, Debug)]
struct MomentsArgs {
    /// Covariance CSV for the GWAS population (defaults to `ld.x` of the config).
    #[arg(long)]
    ld_x: Option<PathBuf>,
    /// Covariance CSV for the target population (defaults to `ld.z` of the config).
    #[arg(long)]
    ld_z: Option<PathBuf>,
    /// Treat the inputs as sample covariances from this many samples and debias.
    #[arg(long)]
    sample_n: Option<usize>,
}

#[derive(Args, Debug)]
struct MergeArgs {
    /// Block spec file (`start<TAB>end` lines).
    a: PathBuf,
    b: PathBuf,
}

#[derive(Args, Debug)]
struct CurveArgs {
    /// Moments CSV; the bundled UK Biobank fixture is used without it.
    #[arg(long)]
    moments: Option<PathBuf>,
    #[arg(long, default_value_t = 0.4)]
    h2_beta: f64,
    /// Defaults to `h2_beta`.
    #[arg(long)]
    h2_alpha: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    phi: f64,
    /// Explicit omega values, comma separated. Overrides the log grid.
    #[arg(long, value_delimiter = ',')]
    omega: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    omega_min: f64,
    #[arg(long, default_value_t = 100.0)]
    omega_max: f64,
    #[arg(long, default_value_t = 61)]
    omega_points: usize,
    #[arg(long, default_value_t = 5)]
    t_points: usize,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// table1, fig1, fig2 or fig3.
    target: String,
    /// desk or paper.
    #[arg(long, default_value = "desk")]
    scale: String,
    /// Required to run at paper scale.
    #[arg(long)]
    allow_paper_scale: bool,
    /// Override the replicate count of every simulated configuration.
    #[arg(long)]
    replicates: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Refused(_) | Error::Domain(_) | Error::Infeasible { .. } => 2,
        Error::Data { .. } | Error::Io(_) | Error::Csv(_) | Error::Shape(_) | Error::State(_) => 3,
        Error::Numerical(_) | Error::NotPsd { .. } | Error::Degenerate(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("transgc: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> transgc_core::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

/// Write a single table to `<out>/<name>` or to stdout.
fn emit(
    out: Option<&Path>,
    name: &str,
    f: impl FnOnce(&mut dyn Write) -> transgc_core::Result<()>,
) -> transgc_core::Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(name);
            let mut file = io::BufWriter::new(File::create(&path)?);
            f(&mut file)?;
            file.flush()?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

fn read_cov(path: &Path, source: CovSource) -> transgc_core::Result<CovarianceMatrix> {
    let f = File::open(path).map_err(|e| data_err(path, format!("cannot open: {e}")))?;
    CovarianceMatrix::read_csv(BufReader::new(f), source).map_err(|e| match e {
        Error::Io(_) | Error::Domain(_) | Error::Shape(_) => data_err(path, e.to_string()),
        other => other,
    })
}

fn data_err(path: &Path, msg: String) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        msg,
    }
}

fn read_partition(path: &Path) -> transgc_core::Result<BlockPartition> {
    let f = File::open(path).map_err(|e| data_err(path, format!("cannot open: {e}")))?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    BlockPartition::read_spec(BufReader::new(f), label).map_err(|e| data_err(path, e.to_string()))
}

fn run(cli: Cli) -> transgc_core::Result<()> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Simulate(args) => {
            let mut cfg = load_config(&cli)?;
            for kv in &args.overrides {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
                cfg.set(k.trim(), v)?;
            }
            let table = run_experiment(&cfg, cli.workers)?;
            eprintln!(
                "{} summary rows written to {}",
                table.rows.len(),
                cfg.output_dir.join("summary.csv").display()
            );
            Ok(())
        }
        Command::Estimate(a) => {
            let files = InputFiles {
                summary_stats: a.summary_stats.clone(),
                genotypes: a.genotypes.clone(),
                traits: a.traits.clone(),
                moments: a.moments.clone(),
            };
            let flags = EstimateFlags { center: !a.no_center };
            let r = estimate_from_files(&files, a.h2_beta, a.h2_alpha, flags)?;
            emit(out, "estimates.csv", |w| write_estimates(&[(a.label.clone(), r)], w))
        }
        Command::Moments(a) => {
            let source = if a.sample_n.is_some() {
                CovSource::SampleEstimate
            } else {
                CovSource::SyntheticBlock
            };
            let (x, z) = match (&a.ld_x, &a.ld_z) {
                (Some(px), Some(pz)) => (read_cov(px, source)?, read_cov(pz, source)?),
                (None, None) => {
                    if a.sample_n.is_some() {
                        return Err(Error::Config("--sample-n needs --ld-x and --ld-z".into()));
                    }
                    let cfg = load_config(&cli)?;
                    (cfg.ld_x.build()?, cfg.ld_z.build()?)
                }
                _ => return Err(Error::Config("give both --ld-x and --ld-z, or neither".into())),
            };
            if x.dim() != z.dim() {
                return Err(Error::Shape(format!("ld-x has p={}, ld-z has p={}", x.dim(), z.dim())));
            }
            let merged = merge_ld_blocks(x.partition(), z.partition())?;
            let (x, z) = (x.reblock(&merged)?, z.reblock(&merged)?);
            let m = match a.sample_n {
                Some(n) => blockwise_moments(&x, &z, n, Provenance::SampleDebiased)?,
                None => blockwise_moments(&x, &z, 0, Provenance::PopulationExact)?,
            };
            if m.status != transgc_core::Status::Ok {
                eprintln!("warning: moment status {}", m.status);
            }
            emit(out, "moments.csv", |w| MomentEstimates::write_csv(&[m], w))
        }
        Command::MergeBlocks(a) => {
            let merged = merge_ld_blocks(&read_partition(&a.a)?, &read_partition(&a.b)?)?;
            emit(out, "merged_blocks.tsv", |w| merged.write_spec(w))
        }
        Command::ShrinkageCurve(a) => {
            let m = match &a.moments {
                Some(p) => transgc_core::harness::files::read_moments(p)?,
                None => ukb_fixture(),
            };
            let omegas = if a.omega.is_empty() {
                if a.omega_points == 0 || a.omega_min <= 0.0 || a.omega_max < a.omega_min {
                    return Err(Error::Config("omega grid needs 0 < omega-min <= omega-max and points > 0".into()));
                }
                log_grid(a.omega_min, a.omega_max, a.omega_points)
            } else {
                a.omega.clone()
            };
            if a.t_points == 0 {
                return Err(Error::Config("t-points must be positive".into()));
            }
            let rows = emit_shrinkage_curve(
                &omegas,
                &linear_grid(0.0, 1.0, a.t_points),
                a.h2_beta,
                a.h2_alpha.unwrap_or(a.h2_beta),
                a.phi,
                &m,
            )?;
            emit(out, "shrinkage_curve.csv", |w| write_curve_csv(&rows, w))
        }
        Command::Reproduce(a) => {
            let target: Target = a.target.parse()?;
            let opts = ReproduceOptions {
                scale: a.scale.parse::<Scale>()?,
                allow_paper_scale: a.allow_paper_scale,
                workers: cli.workers,
                base_seed: cli.seed.unwrap_or(1),
                replicates: a.replicates,
                out_dir: out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out").join(target.to_string())),
            };
            for f in reproduce(target, &opts)? {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

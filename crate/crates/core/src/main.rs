use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ffvol::checkpoint::{self, Checkpoint};
use ffvol::metrics::{evaluate, format_report_table, write_report_csv};
use ffvol::net::FfNetwork;
use ffvol::pipeline::{
    grid_names, prepare, reconstruct_slice, region_stats, run_sweep, train_checkpoint, volume_slice,
    write_pgm, write_sweep_csv, MaskVariant, Region, SweepSpec,
};
use ffvol::train::{reconstruct_full, write_loss_csv, ExecMode, Precision, TrainConfig};
use ffvol::volume::volz::{load_volz, save_volz};
use ffvol::volume::{generate_synthetic, normalize, Dims, SyntheticSpec};
use ffvol::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "ffvol", version, about = "Fourier-feature volume compression with active-voxel sampling")]
struct Cli {
    /// Seed for volume generation, network init and shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Fixed work chunks so results do not depend on the thread count.
    #[arg(long, global = true)]
    strict_determinism: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic fire-like volume.
    Gen(GenArgs),
    /// Train a network on one mask variant of a volume.
    Train(TrainArgs),
    /// Reconstruct the full box from a checkpoint and score it.
    Eval(EvalArgs),
    /// Train and score several mask variants with identical settings.
    Sweep(SweepArgs),
    /// Export one Z-slice of a grid as a PGM image.
    Slice(SliceArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// nx,ny,nz
    #[arg(long, value_parser = parse_dims, default_value = "64,64,96")]
    dims: Dims,
    #[arg(long)]
    carve_quadrant: bool,
    /// Relative amplitude of the small-scale turbulence (0 for smooth blobs).
    #[arg(long)]
    turbulence: Option<f64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct HyperArgs {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Fourier feature count.
    #[arg(long, default_value_t = 1280)]
    features: usize,
    #[arg(long, default_value_t = 2.5)]
    gauss_multiplier: f64,
    #[arg(long, default_value_t = 8)]
    hidden_layers: usize,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 24)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0003)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1)]
    bands: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    precision: PrecisionArg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    input: PathBuf,
    /// bbx, avm or dilated:<l>
    #[arg(long, default_value = "bbx")]
    mask: String,
    #[arg(short, long)]
    output: PathBuf,
    /// Loss history CSV (defaults to <output>.loss.csv).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    checkpoint: PathBuf,
    volume: PathBuf,
    /// Also report statistics inside a voxel box: x0:x1,y0:y1,z0:z1 or `quadrant`.
    #[arg(long)]
    region: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Count encoder parameters in the compression ratio.
    #[arg(long)]
    include_encoder: bool,
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    volume: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "avm,dilated:1,dilated:2,dilated:5,dilated:10,bbx")]
    variants: Vec<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    include_encoder: bool,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Debug)]
struct SliceArgs {
    /// A VOLZ volume or an FFCK checkpoint.
    source: PathBuf,
    #[arg(long)]
    z: usize,
    #[arg(long, default_value = "density")]
    grid: String,
    #[arg(short, long)]
    output: PathBuf,
}

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [nx, ny, nz] => Ok(Dims::new(nx, ny, nz)),
        _ => Err(format!("expected nx,ny,nz, got {s:?}")),
    }
}

impl Cli {
    fn config(&self, h: &HyperArgs) -> TrainConfig {
        TrainConfig {
            epochs: h.epochs,
            features: h.features,
            gauss_multiplier: h.gauss_multiplier,
            hidden_layers: h.hidden_layers,
            width: h.width,
            batch_size: h.batch_size,
            learning_rate: h.learning_rate,
            seed: self.seed,
            band_count: h.bands,
            precision: match h.precision {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            },
            exec: if self.strict_determinism {
                ExecMode::Strict
            } else {
                ExecMode::Fast
            },
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_gen(cli: &Cli, args: &GenArgs) -> Result<()> {
    let mut spec = SyntheticSpec {
        carve_quadrant: args.carve_quadrant,
        ..SyntheticSpec::with_dims(args.dims)
    };
    if let Some(t) = args.turbulence {
        spec.turbulence = t;
    }
    let volume = generate_synthetic(&spec, cli.seed)?;
    save_volz(&args.output, &volume, None)?;
    println!(
        "wrote {} ({}, {} grids)",
        args.output.display(),
        volume.dims(),
        volume.grid_count()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let variant: MaskVariant = args.mask.parse()?;
    let config = cli.config(&args.hyper);
    config.validate()?;
    let (raw, _) = load_volz(&args.input)?;
    let data = prepare(&raw, variant)?;
    println!("mask {variant}: {} training rows", data.dataset.len());
    let progress = |e: &ffvol::train::EpochStats| {
        println!("epoch {:>4}  loss {:.6e}  {:>8.2}s", e.epoch, e.mean_loss, e.elapsed);
    };
    let label = variant.to_string();
    let (ckpt, history, seconds) = match config.precision {
        Precision::F32 => {
            let (c, r) = train_checkpoint::<f32>(&data, &config, &label, progress)?;
            (c, r.history, r.seconds)
        }
        Precision::F64 => {
            let (c, r) = train_checkpoint::<f64>(&data, &config, &label, progress)?;
            (c, r.history, r.seconds)
        }
    };
    println!("trained in {seconds:.2}s");
    ckpt.save(&args.output)?;
    let loss_path = args
        .loss_csv
        .clone()
        .unwrap_or_else(|| args.output.with_extension("loss.csv"));
    write_loss_csv(create(&loss_path)?, &history)?;
    println!(
        "wrote {} and {}",
        args.output.display(),
        loss_path.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (raw, _) = load_volz(&args.volume)?;
    ckpt.dims.check_eq(&raw.dims())?;
    if raw.grid_count() != ckpt.network.outputs() {
        return Err(Error::Shape(format!(
            "checkpoint predicts {} grids, volume has {}",
            ckpt.network.outputs(),
            raw.grid_count()
        )));
    }
    let region = args
        .region
        .as_deref()
        .map(|r| Region::parse(r, raw.dims()))
        .transpose()?;
    let (reference, _) = normalize(&raw);
    let predicted = reconstruct_full(&ckpt.network, reference.dims(), &grid_names(&reference))?;
    let label = args
        .label
        .clone()
        .unwrap_or_else(|| args.checkpoint.display().to_string());
    let report = evaluate(&reference, &predicted, &ckpt.network, args.include_encoder, f64::NAN, &label)?;
    let stats = region
        .as_ref()
        .map(|r| region_stats(&reference, &predicted, r))
        .transpose()?;

    print!("{}", format_report_table(std::slice::from_ref(&report)));
    if let (Some(region), Some(stats)) = (&region, &stats) {
        println!("region {region}:");
        for s in stats {
            println!(
                "  {:<12} mean predicted {:.6}  mean reference {:.6}  rmse {:.6}",
                s.grid, s.mean_predicted, s.mean_reference, s.rmse
            );
        }
    }
    if let Some(path) = &args.csv {
        write_report_csv(create(path)?, &[report])?;
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let variants = args
        .variants
        .iter()
        .map(|v| v.parse())
        .collect::<Result<Vec<MaskVariant>>>()?;
    let spec = SweepSpec {
        variants,
        config: cli.config(&args.hyper),
        include_encoder: args.include_encoder,
    };
    let (raw, _) = load_volz(&args.volume)?;
    let rows = run_sweep(&raw, &spec, |row| {
        println!(
            "{:<12} rows {:>9}  score {:.3}  {:.2}s/epoch",
            row.variant.to_string(),
            row.rows,
            row.quality.score,
            row.seconds_per_epoch
        );
        for q in &row.quadrant {
            println!(
                "  quadrant {:<12} mean predicted {:.6}  mean reference {:.6}",
                q.grid, q.mean_predicted, q.mean_reference
            );
        }
    })?;
    let reports: Vec<_> = rows.iter().map(|r| r.quality.clone()).collect();
    print!("{}", format_report_table(&reports));
    if let Some(path) = &args.csv {
        write_sweep_csv(create(path)?, &rows)?;
    }
    Ok(())
}

fn cmd_slice(args: &SliceArgs) -> Result<()> {
    let mut magic = [0u8; 4];
    {
        use std::io::Read;
        File::open(&args.source)?.read_exact(&mut magic)?;
    }
    let (values, dims) = if &magic == checkpoint::MAGIC {
        let ckpt = Checkpoint::load(&args.source)?;
        let grid = ckpt
            .grid_names
            .iter()
            .position(|g| *g == args.grid)
            .ok_or_else(|| Error::UnknownGrid(args.grid.clone()))?;
        let net: &FfNetwork<f32> = &ckpt.network;
        (reconstruct_slice(net, ckpt.dims, args.z, grid)?, ckpt.dims)
    } else {
        let (raw, _) = load_volz(&args.source)?;
        let (normalized, _) = normalize(&raw);
        (volume_slice(&normalized, &args.grid, args.z)?, normalized.dims())
    };
    write_pgm(create(&args.output)?, &values, dims.nx, dims.ny)?;
    println!("wrote {} ({}x{})", args.output.display(), dims.nx, dims.ny);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(cli, a),
        Command::Slice(a) => cmd_slice(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

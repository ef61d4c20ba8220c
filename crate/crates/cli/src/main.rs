//! Command-line interface for the bandsplit source-separation toolkit.
//!
//! Exit codes: 0 on success, 2 for configuration/validation problems,
//! 3 for numeric failures during training.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bandsplit::bands::{BandKind, BandSpec};
use bandsplit::checkpoint;
use bandsplit::config::RunConfig;
use bandsplit::data::{self, scan_corpus, CorpusLayout, WavFormat};
use bandsplit::dsp::{ChunkMode, ChunkPlan, StftConfig};
use bandsplit::error::Error;
use bandsplit::eval::{
    evaluate_corpus, MixtureSeparator, ModelSeparator, OracleKind, OracleSeparator,
};
use bandsplit::model::{self, Layout, ModelParams, ParamCounts};
use bandsplit::train::{self, trace_to_csv};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "bandsplit", about = "Bandsplit source separation toolkit", version)]
struct Cli {
    /// Cap the worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a band definition and write its JSON spec plus a CSV table
    /// of per-band frequency ranges.
    Bands(BandsArgs),
    /// Generate the deterministic synthetic three-stem corpus.
    SynthData(SynthArgs),
    /// Train a model (optionally resuming, freezing the encoder, or
    /// attaching a new decoder to a trained checkpoint).
    Train(TrainArgs),
    /// Separate a WAV file into one estimate per stem.
    Separate(SeparateArgs),
    /// Evaluate a checkpoint or an oracle on a corpus.
    Evaluate(EvaluateArgs),
    /// Report per-module parameter counts.
    Params(ParamsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Mel,
    Tribark,
    Bark,
    Erb,
    Musical,
}

impl From<KindArg> for BandKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Mel => BandKind::Mel,
            KindArg::Tribark => BandKind::TriBark,
            KindArg::Bark => BandKind::Bark,
            KindArg::Erb => BandKind::Erb,
            KindArg::Musical => BandKind::Musical,
        }
    }
}

#[derive(Args)]
struct BandsArgs {
    #[arg(long)]
    kind: KindArg,
    #[arg(long, default_value_t = 44100.0)]
    fs: f64,
    #[arg(long, default_value_t = 2048)]
    n_fft: usize,
    #[arg(long)]
    num_bands: usize,
    /// Output base path; writes <out>.json and <out>.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    tracks: usize,
    /// Track duration in seconds.
    #[arg(long)]
    duration: f64,
    #[arg(long, default_value_t = 8000.0)]
    fs: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration JSON (see `configs/desk.json`).
    #[arg(long)]
    config: PathBuf,
    /// Corpus root directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the loss trace.
    #[arg(long)]
    out: PathBuf,
    /// Resume from a checkpoint instead of initializing fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Freeze encoder tensors (no updates).
    #[arg(long)]
    freeze_encoder: bool,
    /// Attach a fresh decoder for this stem to the resumed checkpoint.
    /// A composite target may be written as "music+effects"; it trains
    /// against the sum of those stems under the name "music_and_effects".
    /// Implies --freeze-encoder unless --no-freeze is given.
    #[arg(long)]
    attach_stem: Option<String>,
    /// Override the freeze implied by --attach-stem.
    #[arg(long)]
    no_freeze: bool,
}

#[derive(Args)]
struct SeparateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Chunk length in seconds for overlap-add inference.
    #[arg(long, default_value_t = 6.0)]
    chunk_len: f64,
    /// Chunk hop in seconds.
    #[arg(long, default_value_t = 0.5)]
    chunk_hop: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Irm,
    Psf,
    Mix,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, conflicts_with = "oracle")]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    oracle: Option<OracleArg>,
    #[arg(long)]
    data: PathBuf,
    /// Output base path; writes <out>.json and <out>.csv.
    #[arg(long)]
    out: PathBuf,
    /// STFT size for the oracles (checkpoints carry their own).
    #[arg(long, default_value_t = 2048)]
    n_fft: usize,
    /// Chunk length in seconds for model inference.
    #[arg(long, default_value_t = 6.0)]
    chunk_len: f64,
    #[arg(long, default_value_t = 0.5)]
    chunk_hop: f64,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long, conflicts_with = "ckpt")]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: could not configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Bands(args) => cmd_bands(args),
        Command::SynthData(args) => cmd_synth_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Separate(args) => cmd_separate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Params(args) => cmd_params(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_bands(args: BandsArgs) -> Result<(), Error> {
    let spec = BandSpec::build(args.kind.into(), args.fs, args.n_fft, args.num_bands)?;
    let json_path = args.out.with_extension("json");
    let csv_path = args.out.with_extension("csv");
    std::fs::write(&json_path, spec.to_json()?)?;
    std::fs::write(&csv_path, spec.band_table_csv())?;
    println!(
        "wrote {} bands over {} bins ({} total band bins) to {} and {}",
        spec.num_bands(),
        spec.num_bins(),
        spec.total_band_bins(),
        json_path.display(),
        csv_path.display()
    );
    Ok(())
}

fn cmd_synth_data(args: SynthArgs) -> Result<(), Error> {
    data::toy::generate_toy_corpus(&args.out, args.tracks, args.duration, args.fs, args.seed)?;
    println!(
        "wrote {} tracks of {} s at {} Hz (seed {}) to {}",
        args.tracks,
        args.duration,
        args.fs,
        args.seed,
        args.out.display()
    );
    Ok(())
}

fn load_run_config(path: &Path) -> Result<RunConfig, Error> {
    RunConfig::from_json(&std::fs::read_to_string(path)?)
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let run = load_run_config(&args.config)?;
    let layout = run.data.as_ref().map(|d| d.layout.clone()).unwrap_or_default();
    let mut corpus = scan_corpus(&args.data, &layout)?;
    if corpus.tracks.is_empty() {
        return Err(Error::Config(format!("no usable tracks under {}", args.data.display())));
    }
    if (corpus.fs - run.stft.fs).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "corpus rate {} does not match configured rate {}",
            corpus.fs, run.stft.fs
        )));
    }

    let mut train_cfg = run.train.clone();
    if args.freeze_encoder {
        train_cfg.freeze_encoder = true;
    }

    let (mut params, start_step) = match (&args.resume, &args.attach_stem) {
        (None, Some(_)) => {
            return Err(Error::Config("--attach-stem requires --resume <checkpoint>".into()))
        }
        (None, None) => {
            let model_cfg = run.build_model_config()?;
            let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
            (ModelParams::init(model_cfg, &mut rng)?, 0)
        }
        (Some(ckpt), None) => checkpoint::load(ckpt)?,
        (Some(ckpt), Some(spec)) => {
            let (base, step) = checkpoint::load(ckpt)?;
            let parts: Vec<&str> = spec.split('+').collect();
            let stem_name = if parts.len() > 1 { parts.join("_and_") } else { spec.clone() };
            if parts.len() > 1 {
                corpus = corpus.with_composite_stem(&stem_name, &parts)?;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0xA77A);
            let params = base.attach_decoder(&stem_name, &mut rng)?;
            if !args.no_freeze {
                train_cfg.freeze_encoder = true;
            }
            println!(
                "attached decoder {stem_name:?}; encoder frozen: {}",
                train_cfg.freeze_encoder
            );
            (params, step)
        }
    };

    std::fs::create_dir_all(&args.out)?;
    let out = args.out.clone();
    let trace =
        train::train_with(&mut params, &corpus, &train_cfg, &run.stft, start_step, |epoch, p| {
            checkpoint::save(&out.join(format!("ckpt_epoch_{epoch:04}.bsck")), p, 0)
        })?;
    let final_step = trace.last().map(|r| r.step).unwrap_or(start_step);
    checkpoint::save(&args.out.join("ckpt_final.bsck"), &params, final_step)?;
    std::fs::write(args.out.join("loss_trace.csv"), trace_to_csv(&trace))?;
    println!(
        "trained {} steps; final loss {:.4}; wrote checkpoints and loss_trace.csv to {}",
        trace.len(),
        trace.last().map(|r| r.loss).unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

fn cmd_separate(args: SeparateArgs) -> Result<(), Error> {
    let (params, _) = checkpoint::load(&args.ckpt)?;
    let (signal, fs) = data::load_wav(&args.input)?;
    let band_fs = params.config.band_spec.fs;
    if (fs as f64 - band_fs).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "input rate {fs} does not match the checkpoint's {band_fs}"
        )));
    }
    let stft_cfg = StftConfig {
        n_fft: params.config.band_spec.n_fft,
        hop: params.config.band_spec.n_fft / 4,
        fs: band_fs,
        ..Default::default()
    };
    let plan = ChunkPlan::new(args.chunk_len, args.chunk_hop, ChunkMode::TestOverlapAdd)?;
    let stems = model::separate_chunked(&params, &signal, &stft_cfg, &plan)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for (stem, est) in &stems {
        let path = args.out_dir.join(format!("{stem}.wav"));
        data::save_wav(&path, est, fs, WavFormat::Float32)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let corpus = scan_corpus(&args.data, &CorpusLayout::default())?;
    if corpus.tracks.is_empty() {
        return Err(Error::Config(format!("no usable tracks under {}", args.data.display())));
    }
    let report = match (&args.ckpt, &args.oracle) {
        (Some(ckpt), None) => {
            let (params, _) = checkpoint::load(ckpt)?;
            let stft = StftConfig {
                n_fft: params.config.band_spec.n_fft,
                hop: params.config.band_spec.n_fft / 4,
                fs: corpus.fs,
                ..Default::default()
            };
            let plan = ChunkPlan::new(args.chunk_len, args.chunk_hop, ChunkMode::TestOverlapAdd)?;
            let sep = ModelSeparator { params: &params, stft, chunk: Some(plan) };
            evaluate_corpus(&sep, &corpus)?
        }
        (None, Some(oracle)) => {
            let stft = StftConfig {
                n_fft: args.n_fft,
                hop: args.n_fft / 4,
                fs: corpus.fs,
                ..Default::default()
            };
            match oracle {
                OracleArg::Mix => {
                    let sep = MixtureSeparator { stems: corpus.stem_names() };
                    evaluate_corpus(&sep, &corpus)?
                }
                OracleArg::Irm => {
                    evaluate_corpus(&OracleSeparator { kind: OracleKind::Irm, stft }, &corpus)?
                }
                OracleArg::Psf => {
                    evaluate_corpus(&OracleSeparator { kind: OracleKind::Psf, stft }, &corpus)?
                }
            }
        }
        _ => return Err(Error::Config("exactly one of --ckpt or --oracle must be given".into())),
    };
    let json_path = args.out.with_extension("json");
    let csv_path = args.out.with_extension("csv");
    std::fs::write(&json_path, report.to_json()?)?;
    std::fs::write(&csv_path, report.to_csv())?;
    println!("separator: {}", report.separator);
    for s in &report.summary {
        println!(
            "  {:<18} SNR {:>7.2} dB   SI-SNR {:>7.2} dB   (excluded {})",
            s.stem, s.mean_snr_db.0, s.mean_si_snr_db.0, s.excluded
        );
    }
    println!(
        "  {:<18} SNR {:>7.2} dB   SI-SNR {:>7.2} dB",
        "average", report.mean_snr_db.0, report.mean_si_snr_db.0
    );
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

fn cmd_params(args: ParamsArgs) -> Result<(), Error> {
    let (counts, stems): (ParamCounts, Vec<String>) = match (&args.config, &args.ckpt) {
        (Some(config), None) => {
            let run = load_run_config(config)?;
            let model_cfg = run.build_model_config()?;
            (Layout::build(&model_cfg)?.counts(), model_cfg.stems)
        }
        (None, Some(ckpt)) => {
            let (params, _) = checkpoint::load(ckpt)?;
            (params.counts(), params.config.stems.clone())
        }
        _ => return Err(Error::Config("exactly one of --config or --ckpt must be given".into())),
    };
    println!("embedding        {:>12}", counts.embedding);
    println!("tf module        {:>12}", counts.tf_module);
    for (stem, n) in stems.iter().zip(&counts.per_stem) {
        println!("decoder {stem:<12} {:>9}", n);
    }
    println!("decoders total   {:>12}", counts.decoders_total());
    println!("total            {:>12}", counts.total);
    Ok(())
}

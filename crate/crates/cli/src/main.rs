use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fovnet::beamforming::{design_maxdi, ArrayGeometry, BlockGrid, DEFAULT_LOADING};
use fovnet::desk::{load_scenes, render_scenes, train_on_scenes, DeskScene};
use fovnet::dsp::wav::{read_pipeline_wav, write_wav, WavFormat};
use fovnet::dsp::StftConfig;
use fovnet::engine::{enhance_batch, oracle_gains, score_stages, Engine, GainSource, Pipeline, Stage};
use fovnet::features::{fov_to_blocks, parse_fov, FovSpec};
use fovnet::metrics::MetricReport;
use fovnet::net::gradcheck::{check_full_chain, check_loss, check_network};
use fovnet::net::{count_complexity, ArchConfig, BankDims, NetworkWeights, TrainConfig};
use fovnet::scene::{generate_dataset, load_dataset, Catalog, RirConfig, SamplerConfig};
use fovnet::wiener::WienerConfig;

#[derive(Parser)]
#[command(name = "fovnet", version, about = "FoV-conditioned multi-channel speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design the maxDI beamformer bank for an array geometry.
    DesignBank(DesignBankArgs),
    /// Render a synthetic scene dataset.
    Synth(SynthArgs),
    /// Enhance a multichannel WAV file (or a raw f32 stream on stdin).
    Enhance(EnhanceArgs),
    /// Train the network on a few scenes on this machine.
    TrainDesk(TrainDeskArgs),
    /// Compare analytic gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// SI-SDR of the noisy input and every stage over a scene dataset.
    Evaluate(EvaluateArgs),
    /// Parameter and multiply-accumulate counts.
    Complexity(ComplexityArgs),
}

#[derive(Args)]
struct GeometryArg {
    /// Array geometry TOML (default: the built-in five-microphone glasses layout).
    #[arg(long)]
    geometry: Option<PathBuf>,
}

impl GeometryArg {
    fn load(&self) -> Result<ArrayGeometry> {
        Ok(match &self.geometry {
            Some(p) => ArrayGeometry::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ArrayGeometry::glasses_default(),
        })
    }
}

#[derive(Args)]
struct DesignBankArgs {
    #[command(flatten)]
    geometry: GeometryArg,
    #[arg(long, default_value_t = 20)]
    blocks: usize,
    #[arg(long, default_value_t = DEFAULT_LOADING)]
    loading: f64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    geometry: GeometryArg,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene length in seconds.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    /// Folder of speech WAVs (16 kHz); synthetic talkers when omitted.
    #[arg(long, requires = "noise_dir")]
    speech_dir: Option<PathBuf>,
    #[arg(long, requires = "speech_dir")]
    noise_dir: Option<PathBuf>,
    /// Number of synthetic clips per kind.
    #[arg(long, default_value_t = 16)]
    synthetic_clips: usize,
    #[arg(long)]
    max_noises: Option<usize>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[command(flatten)]
    geometry: GeometryArg,
    /// Multichannel WAV, or `-` for interleaved little-endian f32 on stdin.
    #[arg(long, short)]
    input: PathBuf,
    /// Mono WAV, or `-` for little-endian f32 on stdout.
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, short)]
    weights: PathBuf,
    /// Field of view as `start:end` in degrees, counter-clockwise.
    #[arg(long, allow_hyphen_values = true, default_value = "-45:27")]
    fov: String,
    #[arg(long, default_value = "fovnet+mcwf+pp")]
    stage: Stage,
    #[command(flatten)]
    wiener: WienerArgs,
}

#[derive(Args)]
struct WienerArgs {
    #[arg(long, default_value_t = WienerConfig::default().alpha_xx)]
    alpha_xx: f64,
    #[arg(long, default_value_t = WienerConfig::default().alpha_xy)]
    alpha_xy: f64,
    /// Relative diagonal loading of the covariance solve.
    #[arg(long, default_value_t = WienerConfig::default().loading)]
    loading: f64,
    /// Lower bound of the post-filter mask.
    #[arg(long, default_value_t = WienerConfig::default().pp_floor)]
    pp_floor: f64,
}

impl WienerArgs {
    fn config(&self) -> Result<WienerConfig> {
        let cfg = WienerConfig {
            alpha_xx: self.alpha_xx,
            alpha_xy: self.alpha_xy,
            loading: self.loading,
            pp_floor: self.pp_floor,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainDeskArgs {
    #[command(flatten)]
    geometry: GeometryArg,
    /// Output weights file.
    #[arg(long, short)]
    out: PathBuf,
    /// Dataset written by `synth`; otherwise scenes are rendered in memory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    /// Architecture descriptor TOML (default: the shipped one).
    #[arg(long)]
    arch: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    per_tensor: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also check the full loss-through-resynthesis chain (slower).
    #[arg(long)]
    chain: bool,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    geometry: GeometryArg,
    #[arg(long)]
    dataset: PathBuf,
    /// Network weights; required unless `--oracle`.
    #[arg(long, short)]
    weights: Option<PathBuf>,
    /// Use ideal band gains computed from the target instead of the network.
    #[arg(long)]
    oracle: bool,
    /// Override every scene's FoV (`start:end` degrees).
    #[arg(long, allow_hyphen_values = true)]
    fov: Option<String>,
    #[command(flatten)]
    wiener: WienerArgs,
    /// Write per-scene results as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ComplexityArgs {
    #[arg(long)]
    arch: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    blocks: usize,
    #[arg(long, default_value_t = 5)]
    mics: usize,
}

fn load_arch(path: &Option<PathBuf>) -> Result<ArchConfig> {
    Ok(match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ArchConfig::from_toml_str(&text)?
        }
        None => ArchConfig::shipped(),
    })
}

fn resolve_fov(grid: &BlockGrid, text: &str) -> Result<FovSpec> {
    let (a, b) = parse_fov(text)?;
    let fov = fov_to_blocks(grid, a, b)?;
    let (lo, hi) = fov.resolved_edges(grid);
    eprintln!("fov {a}:{b} deg -> blocks {:?} ({lo}..{hi} deg)", fov.blocks);
    Ok(fov)
}

fn design_bank(args: &DesignBankArgs) -> Result<()> {
    let geometry = args.geometry.load()?;
    let bank = design_maxdi(&geometry, &BlockGrid::new(args.blocks)?, &StftConfig::default(), args.loading)?;
    bank.save(&args.out)?;
    println!(
        "{} blocks x {} bins x {} mics, max |w^H d - 1| = {:.3e}, written to {}",
        bank.num_blocks(),
        bank.num_bins(),
        bank.num_mics(),
        bank.max_distortion_error(),
        args.out.display()
    );
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let geometry = args.geometry.load()?;
    let catalog = match (&args.speech_dir, &args.noise_dir) {
        (Some(s), Some(n)) => Catalog::from_folders(s, n)?,
        _ => Catalog::synthetic(args.synthetic_clips, args.synthetic_clips, args.seed),
    };
    let mut sampler = SamplerConfig {
        duration_s: args.duration,
        ..SamplerConfig::default()
    };
    if let Some(n) = args.max_noises {
        sampler.noises.1 = n.max(sampler.noises.0);
    }
    let index = generate_dataset(&args.out, args.count, args.seed, &sampler, &catalog, &geometry, &RirConfig::default())?;
    println!("wrote {} scenes to {}", index.scenes.len(), args.out.display());
    Ok(())
}

fn read_stdin_f32(channels: usize) -> Result<Vec<Vec<f64>>> {
    let mut bytes = Vec::new();
    std::io::stdin().read_to_end(&mut bytes)?;
    if bytes.len() % (4 * channels) != 0 {
        bail!("stdin holds {} bytes, not a whole number of {channels}-channel f32 frames", bytes.len());
    }
    let mut out = vec![Vec::with_capacity(bytes.len() / 4 / channels); channels];
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        out[i % channels].push(f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64);
    }
    Ok(out)
}

fn enhance(args: &EnhanceArgs) -> Result<()> {
    let geometry = args.geometry.load()?;
    let pipeline = Pipeline::design(&geometry)?;
    let fov = resolve_fov(pipeline.bank.grid(), &args.fov)?;
    let weights = NetworkWeights::load(&args.weights).with_context(|| format!("loading {}", args.weights.display()))?;
    let mut engine = Engine::new(
        pipeline.clone(),
        GainSource::Network(Arc::new(weights)),
        fov,
        args.stage,
        args.wiener.config()?,
    )?;
    let stdin = args.input.as_os_str() == "-";
    let signals = if stdin {
        read_stdin_f32(pipeline.num_mics())?
    } else {
        let audio = read_pipeline_wav(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
        if audio.num_channels() != pipeline.num_mics() {
            bail!("{} has {} channels, the array has {}", args.input.display(), audio.num_channels(), pipeline.num_mics());
        }
        audio.channels
    };
    let hop = pipeline.config().hop;
    let len = signals[0].len();
    let delay = pipeline.stream_delay();
    let blocks = (len + delay).div_ceil(hop);
    let mut out = Vec::with_capacity(blocks * hop);
    let mut block = vec![vec![0.0; hop]; signals.len()];
    for b in 0..blocks {
        for (dst, src) in block.iter_mut().zip(&signals) {
            for (i, d) in dst.iter_mut().enumerate() {
                *d = src.get(b * hop + i).copied().unwrap_or(0.0);
            }
        }
        let refs: Vec<&[f64]> = block.iter().map(Vec::as_slice).collect();
        out.extend(engine.process_frame(&refs)?);
    }
    let aligned = &out[delay..delay + len];
    if args.output.as_os_str() == "-" {
        let mut stdout = std::io::stdout().lock();
        for v in aligned {
            stdout.write_all(&(*v as f32).to_le_bytes())?;
        }
    } else {
        write_wav(&args.output, &[aligned.to_vec()], pipeline.config().sample_rate, WavFormat::Float32)?;
    }
    eprintln!(
        "{len} samples, stage {}, latency {} samples ({:.1} ms), {} Wiener warnings",
        args.stage,
        engine.latency_samples(),
        1e3 * engine.latency_samples() as f64 / pipeline.config().sample_rate as f64,
        engine.wiener_warnings()
    );
    Ok(())
}

fn train_desk(args: &TrainDeskArgs) -> Result<()> {
    let geometry = args.geometry.load()?;
    let pipeline = Pipeline::design(&geometry)?;
    let arch = load_arch(&args.arch)?;
    let scenes: Vec<DeskScene> = match &args.dataset {
        Some(d) => load_scenes(&load_dataset(d)?.1)?,
        None => {
            let sampler = SamplerConfig {
                duration_s: args.duration,
                ..SamplerConfig::default()
            };
            let catalog = Catalog::synthetic(16, 16, args.seed);
            render_scenes(args.scenes, args.seed, &sampler, &catalog, &geometry, &RirConfig::default())?
        }
    };
    let cfg = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let outcome = train_on_scenes(&pipeline, &scenes, &arch, args.seed, &cfg, |e| {
        println!("epoch {:4}  loss {:8.4}  si-sdr {:6.2} dB", e.epoch, e.mean_loss, e.mean_si_sdr_db);
    })?;
    outcome.weights.save(&args.out)?;
    println!(
        "loss {:.4} -> {:.4} ({:.1}% lower); si-sdr noisy {:.2} dB -> fovnet {:.2} dB; weights written to {}",
        outcome.initial_loss,
        outcome.final_loss,
        100.0 * outcome.loss_reduction(),
        outcome.noisy_si_sdr_db,
        outcome.enhanced_si_sdr_db,
        args.out.display()
    );
    Ok(())
}

fn grad_check(args: &GradCheckArgs) -> Result<bool> {
    let arch = ArchConfig::shipped();
    let mut rows = check_network(&arch, args.frames, args.per_tensor, args.seed)?;
    rows.push(check_loss(1000, 20, args.seed)?);
    if args.chain {
        let cfg = StftConfig::default();
        let bank = design_maxdi(&ArrayGeometry::glasses_default(), &BlockGrid::default(), &cfg, DEFAULT_LOADING)?;
        let fb = fovnet::dsp::ErbFilterbank::new(&cfg, arch.input.bands)?;
        rows.extend(check_full_chain(&bank, &fb, &arch, 800, 1, args.seed)?);
    }
    let mut ok = true;
    for r in &rows {
        let pass = r.passes(args.tolerance);
        ok &= pass;
        println!("{:32} {:3} probes  max rel err {:.2e}  {}", r.name, r.checked, r.max_rel_err, if pass { "ok" } else { "FAIL" });
    }
    Ok(ok)
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let geometry = args.geometry.load()?;
    let pipeline = Pipeline::design(&geometry)?;
    let (_, dirs) = load_dataset(&args.dataset)?;
    let scenes = load_scenes(&dirs)?;
    let network = match (&args.weights, args.oracle) {
        (_, true) => None,
        (Some(p), false) => Some(Arc::new(NetworkWeights::load(p)?)),
        (None, false) => bail!("--weights is required unless --oracle is given"),
    };
    let fov_override = args.fov.as_deref().map(|f| resolve_fov(pipeline.bank.grid(), f)).transpose()?;
    let wiener = args.wiener.config()?;
    let r = pipeline.reference_channel();
    let mut noisy = MetricReport::new("Noisy");
    let mut reports: Vec<MetricReport> = Stage::ALL.iter().map(|s| MetricReport::new(s.label())).collect();
    for (scene, dir) in scenes.iter().zip(&dirs) {
        let name = dir.file_name().map_or_else(|| scene.name.clone(), |n| n.to_string_lossy().into_owned());
        let fov = fov_override.clone().unwrap_or_else(|| scene.spec.fov.clone());
        let gains = match &network {
            Some(w) => GainSource::Network(w.clone()),
            None => GainSource::Fixed(Arc::new(oracle_gains(&pipeline, &scene.mixture[r], &scene.target)?)),
        };
        let enhanced = enhance_batch(&pipeline, &gains, &fov, Stage::FovnetMcwfPp, wiener, &scene.mixture)?;
        let scores = score_stages(&scene.mixture[r], &scene.target, &enhanced)?;
        noisy.push(name.clone(), scores.noisy_db);
        for (rep, (_, db)) in reports.iter_mut().zip(&scores.stages) {
            rep.push(name.clone(), *db);
        }
    }
    println!("{:24} {:>12}", "Method", "SI-SDR (dB)");
    for rep in std::iter::once(&noisy).chain(&reports) {
        println!("{:24} {:>12.2}", rep.label, rep.si_sdr_db);
    }
    if let Some(path) = &args.json {
        let all: Vec<&MetricReport> = std::iter::once(&noisy).chain(&reports).collect();
        std::fs::write(path, serde_json::to_string_pretty(&all)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn complexity(args: &ComplexityArgs) -> Result<()> {
    let arch = load_arch(&args.arch)?;
    let cfg = StftConfig::default();
    let bank = BankDims {
        blocks: args.blocks,
        bins: cfg.num_bins(),
        mics: args.mics,
    };
    let c = count_complexity(&arch, bank, cfg.frame_rate());
    println!("parameters        {:>10}  ({:.3}M)", c.params, c.params_millions());
    println!("spatial MACs      {:>10}  per frame", c.spatial_macs);
    println!("reference MACs    {:>10}  per frame", c.reference_macs);
    println!("gru MACs          {:>10}  per frame", c.gru_macs);
    println!("head MACs         {:>10}  per frame", c.head_macs);
    println!("beamformer MACs   {:>10}  per frame", c.bank_macs);
    println!("total MACs        {:>10}  per frame at {} frames/s", c.macs_per_frame(), c.frame_rate);
    println!("MMACS             {:>10.2}", c.mmacs());
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::DesignBank(a) => {
            ensure_parent(&a.out)?;
            design_bank(a)?
        }
        Command::Synth(a) => synth(a)?,
        Command::Enhance(a) => enhance(a)?,
        Command::TrainDesk(a) => {
            ensure_parent(&a.out)?;
            train_desk(a)?
        }
        Command::GradCheck(a) => return grad_check(a),
        Command::Evaluate(a) => evaluate(a)?,
        Command::Complexity(a) => complexity(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

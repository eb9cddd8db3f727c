//! Command-line entry point. Every subcommand is a thin wrapper over the
//! library; see `examples/` for the same capabilities driven as code.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::Rng;

use crate::beamforming::{
    beam_pattern, design_bank, load_bank, save_bank, BeamformerBank, DesignerSpec,
    NlcmvSolverConfig, PointPsd, RefinementProvenance, DEFAULT_LOADING,
};
use crate::error::{Error, Result};
use crate::geometry::{load_geometry, ArrayGeometry, FrequencyGrid, SourceDescriptor};
use crate::room::{
    reflection_for_rt60, simulate_rir, ArrayPose, RoomSpec, SamplingRanges, DEFAULT_MOUTH_OFFSET,
};
use crate::scene::{generate_dataset, AssetIndex, DatasetConfig};
use crate::separation::{refine_beamformer, separate_dataset, GradientMode, RefinementConfig};

#[derive(Parser, Debug)]
#[command(
    name = "glasswave",
    version,
    about = "Directional microphone-array toolkit: design beamformer banks, simulate rooms, synthesize scenes, separate, refine, evaluate"
)]
struct Cli {
    /// Worker threads; defaults to the available cores. Outputs do not
    /// depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Root random seed; generated and logged when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Design a K+1-channel beamformer bank and write it as a weight file.
    Design(DesignArgs),
    /// Emit per-channel azimuth/gain tables for a bank at one frequency.
    Beampattern(BeampatternArgs),
    /// Simulate a room impulse response set and export it as WAV.
    SimulateRir(SimulateRirArgs),
    /// Generate a scene dataset over a scenario grid.
    Synth(SynthArgs),
    /// Oracle-mask separation of every scene in a dataset.
    Separate(SeparateArgs),
    /// Gradient-refine a bank against the separation loss on a dataset.
    Refine(RefineArgs),
    /// Score estimates against a dataset and write a report.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DesignerKind {
    Das,
    Mvdr,
    Nlcmv,
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// Geometry config file; the built-in 7-mic preset when absent.
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Horizontal steering directions.
    #[arg(long, short = 'K', default_value_t = 12)]
    k: usize,
    #[arg(long, value_enum, default_value_t = DesignerKind::Nlcmv)]
    designer: DesignerKind,
    /// Mouth position `x,y,z` in the array frame; overrides the geometry's.
    #[arg(long)]
    mouth: Option<String>,
    /// Null direction as `azimuth_deg:weight`; repeatable.
    #[arg(long = "null")]
    nulls: Vec<String>,
    /// Point-noise PSD used with the nulls.
    #[arg(long, default_value_t = 1.0)]
    point_psd: f64,
    #[arg(long, default_value_t = 16_000.0)]
    sample_rate: f64,
    #[arg(long, default_value_t = 512)]
    fft_size: usize,
    #[arg(long, default_value_t = 256)]
    bins: usize,
    /// Diagonal loading fraction for MVDR/NLCMV inverses.
    #[arg(long, default_value_t = DEFAULT_LOADING)]
    loading: f64,
    /// Constraint slack for the NLCMV design.
    #[arg(long, default_value_t = 1e-6)]
    nlcmv_tol: f64,
    #[arg(long, default_value_t = 60)]
    max_bisection_steps: usize,
    /// Output bank file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BeampatternArgs {
    /// Bank weight file.
    #[arg(long)]
    bank: PathBuf,
    #[arg(long, default_value_t = 250.0)]
    freq: f64,
    /// Azimuth step, degrees.
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    /// Second bank to compare lateral gains against (e.g. refined vs
    /// predetermined).
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Output directory for the tables.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateRirArgs {
    /// Room dimensions `Lx,Ly,Lz` in meters.
    #[arg(long, default_value = "6.0,5.0,3.0")]
    room: String,
    /// Uniform pressure reflection coefficient for all six walls.
    #[arg(long, conflicts_with = "rt60", default_value_t = 0.5)]
    reflection: f64,
    /// Target RT60 seconds; converted to a uniform reflection coefficient.
    #[arg(long)]
    rt60: Option<f64>,
    #[arg(long, default_value_t = crate::room::DEFAULT_MAX_ORDER)]
    max_order: usize,
    /// Source position `x,y,z` in room coordinates.
    #[arg(long)]
    source: String,
    /// Array origin `x,y,z` in room coordinates.
    #[arg(long, default_value = "3.0,2.5,1.5")]
    array_pos: String,
    /// Array yaw, degrees.
    #[arg(long, default_value_t = 0.0)]
    array_yaw: f64,
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long, default_value_t = 16_000.0)]
    sample_rate: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scenes per scenario.
    #[arg(long, default_value_t = 200)]
    scenes: usize,
    /// Bystander counts, one scenario each.
    #[arg(long, default_value = "1,2,3")]
    bystanders: String,
    #[arg(long, default_value_t = -8)]
    snr_min: i32,
    #[arg(long, default_value_t = 40)]
    snr_max: i32,
    /// Overlap-ratio choices.
    #[arg(long, default_value = "0.05,0.1,0.2,0.3,0.4,0.5")]
    overlaps: String,
    /// Asset directory with `utterances/` and `noise/` WAV folders;
    /// built-in fixtures when absent.
    #[arg(long)]
    assets: Option<PathBuf>,
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long, default_value_t = crate::room::DEFAULT_MAX_ORDER)]
    max_order: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SeparateArgs {
    #[arg(long)]
    bank: PathBuf,
    /// Dataset directory produced by `synth`.
    #[arg(long)]
    dataset: PathBuf,
    /// Estimate output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Refine on the first N scenes of the dataset (all when absent).
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, value_enum, default_value_t = GradientArg::Analytic)]
    gradient: GradientArg,
    /// Refined bank output file.
    #[arg(long)]
    out: PathBuf,
    /// Optional loss-trace JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GradientArg {
    Analytic,
    FiniteDifference,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    estimates: PathBuf,
    /// Report output directory (`report.json` + `report.txt`).
    #[arg(long)]
    out: PathBuf,
}

/// Runs the CLI; returns the process exit code. Usage errors exit 2,
/// validation errors 3, runtime failures 1.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let seed = cli.seed.unwrap_or_else(|| rand::rng().random());
    info!("root seed: {seed}");
    info!("command: {:?}", cli.command);

    let workers = cli.workers.unwrap_or_else(num_cpus);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: failed to build worker pool: {e}");
            return 1;
        }
    };

    let outcome = pool.install(|| dispatch(cli.command, seed));
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_validation() {
                3
            } else {
                1
            }
        }
    }
}

fn num_cpus() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("GLASSWAVE_LOG", "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

fn dispatch(command: Command, seed: u64) -> Result<()> {
    match command {
        Command::Design(args) => cmd_design(args),
        Command::Beampattern(args) => cmd_beampattern(args),
        Command::SimulateRir(args) => cmd_simulate_rir(args),
        Command::Synth(args) => cmd_synth(args, seed),
        Command::Separate(args) => cmd_separate(args),
        Command::Refine(args) => cmd_refine(args, seed),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

fn load_geometry_or_preset(path: &Option<PathBuf>) -> Result<ArrayGeometry> {
    match path {
        Some(path) => load_geometry(path),
        None => Ok(ArrayGeometry::glasses_preset()),
    }
}

fn parse_triple(text: &str, what: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(format!("{what}: {e}")))?;
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "{what}: expected three comma-separated values, got {}",
            parts.len()
        )));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn parse_list<V: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<V>>
where
    V::Err: std::fmt::Display,
{
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<V>()
                .map_err(|e| Error::InvalidArgument(format!("{what}: {e}")))
        })
        .collect()
}

fn cmd_design(args: DesignArgs) -> Result<()> {
    let geometry = load_geometry_or_preset(&args.geometry)?;
    let grid = FrequencyGrid::new(args.sample_rate, args.fft_size, args.bins)?;
    let mouth = match &args.mouth {
        Some(text) => SourceDescriptor::Point {
            xyz: parse_triple(text, "--mouth")?,
        },
        None => SourceDescriptor::Point {
            xyz: geometry.mouth.unwrap_or(DEFAULT_MOUTH_OFFSET),
        },
    };
    let nulls = args
        .nulls
        .iter()
        .map(|spec| -> Result<(SourceDescriptor, f64)> {
            let (azimuth, weight) = spec.split_once(':').ok_or_else(|| {
                Error::InvalidArgument(format!("--null expects azimuth_deg:weight, got {spec:?}"))
            })?;
            let azimuth: f64 = azimuth
                .trim()
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("--null azimuth: {e}")))?;
            let weight: f64 = weight
                .trim()
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("--null weight: {e}")))?;
            Ok((SourceDescriptor::azimuth(azimuth), weight))
        })
        .collect::<Result<Vec<_>>>()?;
    let designer = match args.designer {
        DesignerKind::Das => DesignerSpec::Das,
        DesignerKind::Mvdr => DesignerSpec::Mvdr {
            loading: args.loading,
        },
        DesignerKind::Nlcmv => DesignerSpec::Nlcmv {
            nulls,
            point_psd: PointPsd::Constant(args.point_psd),
            solver: NlcmvSolverConfig {
                max_bisection_steps: args.max_bisection_steps,
                tol: args.nlcmv_tol,
                loading: args.loading,
            },
        },
    };
    let bank = design_bank(&geometry, &grid, args.k, &mouth, &designer)?;
    save_bank(&bank, &args.out)?;
    info!(
        "wrote {}-channel bank ({}) to {}",
        bank.channel_count(),
        bank.label(),
        args.out.display()
    );
    println!("{}", args.out.display());
    Ok(())
}

fn lateral_gains(bank: &BeamformerBank, freq: f64, step: f64) -> Result<Vec<(f64, f64, f64)>> {
    bank.channels
        .iter()
        .map(|channel| {
            let pattern = beam_pattern(channel, &bank.geometry, freq, step)?;
            Ok((pattern.gain_near(90.0), pattern.gain_near(270.0), pattern.gain_near(0.0)))
        })
        .collect()
}

fn cmd_beampattern(args: BeampatternArgs) -> Result<()> {
    let bank = load_bank(&args.bank)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::file(&args.out, e))?;
    for (index, channel) in bank.channels.iter().enumerate() {
        let pattern = beam_pattern(channel, &bank.geometry, args.freq, args.step)?;
        let path = args.out.join(format!("channel_{index:02}.tsv"));
        let mut file = std::fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
        pattern.write_table(&mut file)?;
    }
    info!(
        "wrote {} pattern tables at {} Hz to {}",
        bank.channel_count(),
        args.freq,
        args.out.display()
    );

    if let Some(other_path) = &args.compare {
        let other = load_bank(other_path)?;
        if other.channel_count() != bank.channel_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} channels", bank.channel_count()),
                got: format!("{}", other.channel_count()),
            });
        }
        let ours = lateral_gains(&bank, args.freq, args.step)?;
        let theirs = lateral_gains(&other, args.freq, args.step)?;
        let path = args.out.join("lateral_comparison.tsv");
        let mut out = String::new();
        out.push_str("channel\tleft_db\tright_db\tfront_db\tother_left_db\tother_right_db\tother_front_db\n");
        for (index, (a, b)) in ours.iter().zip(theirs.iter()).enumerate() {
            out.push_str(&format!(
                "{index}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\n",
                a.0, a.1, a.2, b.0, b.1, b.2
            ));
        }
        std::fs::write(&path, out).map_err(|e| Error::file(&path, e))?;
        info!("wrote lateral-gain comparison to {}", path.display());
    }
    Ok(())
}

fn cmd_simulate_rir(args: SimulateRirArgs) -> Result<()> {
    let geometry = load_geometry_or_preset(&args.geometry)?;
    let dims = parse_triple(&args.room, "--room")?;
    let reflection = match args.rt60 {
        Some(rt60) => reflection_for_rt60(dims, rt60)?,
        None => args.reflection,
    };
    let mut room = RoomSpec::new(dims, [reflection; 6], args.sample_rate)?;
    room.max_order = args.max_order;
    let source = parse_triple(&args.source, "--source")?;
    let pose = ArrayPose {
        position: parse_triple(&args.array_pos, "--array-pos")?,
        yaw_rad: args.array_yaw.to_radians(),
    };
    let rirs = simulate_rir(&room, source, &geometry, &pose)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::file(&args.out, e))?;
    let wav_path = args.out.join("rir.wav");
    crate::wav::write_wav(&wav_path, rirs.taps.view(), args.sample_rate)?;
    let sidecar = serde_json::json!({
        "room": room,
        "source": source,
        "pose": pose,
        "geometry": geometry,
        "mic_positions": rirs.mic_positions,
        "direct_delay_samples": rirs.direct_delay_samples,
        "arrival_counts": rirs.arrival_counts,
    });
    let manifest_path = args.out.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&sidecar)?)
        .map_err(|e| Error::file(&manifest_path, e))?;
    info!(
        "wrote {}-channel rir ({} taps) to {}",
        rirs.mic_count(),
        rirs.taps.ncols(),
        args.out.display()
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs, seed: u64) -> Result<()> {
    let geometry = load_geometry_or_preset(&args.geometry)?;
    let assets = match &args.assets {
        Some(dir) => AssetIndex::scan(dir)?,
        None => AssetIndex::builtin(),
    };
    if args.snr_min > args.snr_max {
        return Err(Error::InvalidArgument(format!(
            "--snr-min {} exceeds --snr-max {}",
            args.snr_min, args.snr_max
        )));
    }
    let mut ranges = SamplingRanges::default();
    ranges.max_order = args.max_order;
    let config = DatasetConfig {
        root_seed: seed,
        scenes_per_scenario: args.scenes,
        bystander_counts: parse_list(&args.bystanders, "--bystanders")?,
        snr_range_db: [args.snr_min, args.snr_max],
        overlap_ratios: parse_list(&args.overlaps, "--overlaps")?,
        ranges,
    };
    let manifest = generate_dataset(&config, &assets, &geometry, &args.out)?;
    info!(
        "wrote {} scenes across {} scenarios to {}",
        manifest.scenes.len(),
        config.bystander_counts.len(),
        args.out.display()
    );
    println!("{}", args.out.join("dataset.json").display());
    Ok(())
}

fn cmd_separate(args: SeparateArgs) -> Result<()> {
    let bank = load_bank(&args.bank)?;
    let count = separate_dataset(&bank, &args.dataset, &args.out)?;
    info!("separated {count} scenes into {}", args.out.display());
    Ok(())
}

fn cmd_refine(args: RefineArgs, seed: u64) -> Result<()> {
    let bank = load_bank(&args.bank)?;
    let manifest = crate::scene::load_dataset_manifest(args.dataset.join("dataset.json"))?;
    let take = args.scenes.unwrap_or(manifest.scenes.len());
    let entries = &manifest.scenes[..take.min(manifest.scenes.len())];
    let scenes = entries
        .iter()
        .map(|entry| crate::scene::load_scene_audio(args.dataset.join(&entry.rel_path)))
        .collect::<Result<Vec<_>>>()?;
    let config = RefinementConfig {
        step_size: args.step,
        iterations: args.iterations,
        gradient_mode: match args.gradient {
            GradientArg::Analytic => GradientMode::Analytic,
            GradientArg::FiniteDifference => GradientMode::FiniteDifference,
        },
        ..RefinementConfig::default()
    };
    let (mut refined, trace) = refine_beamformer(&bank, &scenes, &config)?;
    refined.provenance = Some(RefinementProvenance {
        seed,
        scenes: entries.iter().map(|e| e.scene_id.clone()).collect(),
        iterations: config.iterations,
        step_size: config.step_size,
        loss_weights: [
            config.loss_weights.l1,
            config.loss_weights.stft,
            config.loss_weights.neg_log_si_sdr,
        ],
    });
    save_bank(&refined, &args.out)?;
    if let Some(trace_path) = &args.trace {
        std::fs::write(trace_path, serde_json::to_string_pretty(&trace)?)
            .map_err(|e| Error::file(trace_path, e))?;
    }
    info!(
        "refined bank over {} scenes: loss {:.6} -> {:.6}, wrote {}",
        scenes.len(),
        trace.first().unwrap_or(&f64::NAN),
        trace.last().unwrap_or(&f64::NAN),
        args.out.display()
    );
    println!(
        "initial_loss={:.6} final_loss={:.6}",
        trace.first().unwrap_or(&f64::NAN),
        trace.last().unwrap_or(&f64::NAN)
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let report = crate::metrics::evaluate_run(&args.dataset, &args.estimates)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::file(&args.out, e))?;
    report.save_json(args.out.join("report.json"))?;
    let mut table = Vec::new();
    report.write_table(&mut table)?;
    let text_path = args.out.join("report.txt");
    std::fs::write(&text_path, &table).map_err(|e| Error::file(&text_path, e))?;
    print!("{}", String::from_utf8_lossy(&table));
    info!("wrote report to {}", args.out.display());
    Ok(())
}

/// Convenience used by tests and the acceptance suite: run the CLI against
/// a prepared argv, capturing the exit code.
pub fn run_args(args: &[&str]) -> i32 {
    run(std::iter::once("glasswave").chain(args.iter().copied()))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_lists_every_subcommand() {
        use clap::CommandFactory;
        let mut cmd = Cli::command();
        let help = cmd.render_long_help().to_string();
        for name in [
            "design",
            "beampattern",
            "simulate-rir",
            "synth",
            "separate",
            "refine",
            "evaluate",
        ] {
            assert!(help.contains(name), "help missing {name}");
        }
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        assert_eq!(run_args(&["design", "--bogus-flag", "1"]), 2);
        assert_eq!(run_args(&["no-such-command"]), 2);
    }

    #[test]
    fn design_writes_expected_channel_count() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("bank.json");
        let code = run_args(&[
            "design",
            "--k",
            "4",
            "--designer",
            "mvdr",
            "--fft-size",
            "128",
            "--bins",
            "64",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let bank = load_bank(&out).unwrap();
        assert_eq!(bank.channel_count(), 5);
    }

    #[test]
    fn validation_failures_exit_three() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("bank.json");
        let code = run_args(&[
            "design",
            "--k",
            "4",
            "--fft-size",
            "511",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 3);
    }

    #[test]
    fn runtime_failures_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let code = run_args(&[
            "separate",
            "--bank",
            dir.path().join("missing.json").to_str().unwrap(),
            "--dataset",
            dir.path().to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }
}

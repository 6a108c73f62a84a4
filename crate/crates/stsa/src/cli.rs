//! Command-line interface: scene generation, flow extraction, block runs,
//! cost benchmarks, toy training, size sweeps, and report re-emission.
//!
//! Every subcommand is deterministic given `--seed`; nothing written here
//! carries timestamps or environment-dependent content, so repeated runs
//! produce byte-identical files.

use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::align::{compute_alignment, dump_alignment};
use crate::attention::{
    cost_model, crossframe_attention_counted, full_attention_counted, load_params, save_params,
    stsa_block_counted, subspace_attention_counted, temporal_attention_counted, AttentionMode,
    AttentionParams, CostDims, CostReport, MacTally, StsaOptions, DEFAULT_TOKEN_CAP,
};
use crate::error::{Error, Result};
use crate::flow::{load_flow, save_flow, shift_flows, synth_flow_from_poses};
use crate::harness::{
    consistency_report, default_scene, dump_pgm_frames, emit_sweep, gen_scene, load_sweep,
    sweep_subspace_sizes, toy_train, SceneSpec, TrainConfig,
};
use crate::rng::derive_seed;
use crate::scalar::{Precision, Scalar};
use crate::subspace::{split, SubspaceSpec};
use crate::tensor::io::{load_pose, load_video, save_pose, save_video};
use crate::tensor::LatentVideo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

impl PrecisionArg {
    fn precision(self) -> Precision {
        match self {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        }
    }
}

fn parse_spec(s: &str) -> std::result::Result<SubspaceSpec, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected S_F,S_H,S_W, got '{s}'"));
    }
    let mut dims = [0usize; 3];
    for (d, p) in dims.iter_mut().zip(&parts) {
        *d = p
            .trim()
            .parse()
            .map_err(|_| format!("'{p}' is not a size"))?;
    }
    SubspaceSpec::new(dims[0], dims[1], dims[2]).map_err(|e| e.to_string())
}

fn parse_dims(s: &str) -> std::result::Result<CostDims, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 5 {
        return Err(format!("expected F,H,W,C,D, got '{s}'"));
    }
    let mut v = [0usize; 5];
    for (d, p) in v.iter_mut().zip(&parts) {
        *d = p
            .trim()
            .parse()
            .map_err(|_| format!("'{p}' is not a dimension"))?;
    }
    Ok(CostDims {
        frames: v[0],
        height: v[1],
        width: v[2],
        channels: v[3],
        d_model: v[4],
    })
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once('x')
        .ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let h = h.trim().parse().map_err(|_| format!("'{h}' is not a size"))?;
    let w = w.trim().parse().map_err(|_| format!("'{w}' is not a size"))?;
    Ok((h, w))
}

fn parse_mode(s: &str) -> std::result::Result<AttentionMode, String> {
    AttentionMode::from_str(s).map_err(|e| e.to_string())
}

/// Spatial-temporal subspace attention toolkit.
#[derive(Debug, Parser)]
#[command(name = "stsa", version, about)]
pub struct Cli {
    /// Base seed for every random draw in the invocation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Element type for tensors written or processed.
    #[arg(long, global = true, value_enum, default_value_t = PrecisionArg::Double)]
    precision: PrecisionArg,
    /// Directory all output files land in.
    #[arg(long, global = true, default_value = "stsa-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene: video, keypoints, ground-truth flows.
    GenData(GenDataArgs),
    /// Build a dense flow set from pose keypoints.
    ExtractFlow(ExtractFlowArgs),
    /// Run one attention block over a stored video.
    RunBlock(RunBlockArgs),
    /// Predict (and optionally measure) attention costs.
    Benchmark(BenchmarkArgs),
    /// Gradient-descend one block on a denoising objective.
    TrainToy(TrainToyArgs),
    /// Compare costs and consistency across subspace sizes.
    Sweep(SweepArgs),
    /// Re-emit a stored sweep as fresh JSON and CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Scene description JSON; omit for the built-in default scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Also write one PGM image per frame under `pgm/`.
    #[arg(long)]
    dump_pgm: bool,
}

#[derive(Debug, Args)]
struct ExtractFlowArgs {
    /// Keypoint sequence JSON.
    #[arg(long)]
    poses: PathBuf,
    /// Grid resolution as HxW.
    #[arg(long, value_parser = parse_size)]
    size: (usize, usize),
    /// Spatial spread of each keypoint's influence, in cells.
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Output file; defaults to `flows.mfl` in the out dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunBlockArgs {
    /// Input latent video (LVT1).
    #[arg(long)]
    input: PathBuf,
    /// Motion flow set (MFL1).
    #[arg(long)]
    flows: PathBuf,
    /// Window size as S_F,S_H,S_W.
    #[arg(long, value_parser = parse_spec, default_value = "4,4,4")]
    subspace: SubspaceSpec,
    /// Apply the half-window cyclic shift around the block.
    #[arg(long)]
    shifted: bool,
    /// Skip the residual connection around each window's attention.
    #[arg(long)]
    no_residual: bool,
    /// Attention parameter file; omit to draw seeded parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Attention heads (parameter files store matrices only).
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Model width used when drawing seeded parameters.
    #[arg(long, default_value_t = 8)]
    d_model: usize,
    /// Output video file; defaults to `output.lvt` in the out dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the alignment maps as `maps.json`.
    #[arg(long)]
    dump_maps: bool,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Attention variant: subspace, temporal, crossframe-first,
    /// crossframe-middle, crossframe-previous, crossframe-all, or full.
    #[arg(long, value_parser = parse_mode)]
    mode: AttentionMode,
    /// Problem size as F,H,W,C,D.
    #[arg(long, value_parser = parse_dims)]
    dims: CostDims,
    /// Window size as S_F,S_H,S_W; required for subspace mode.
    #[arg(long, value_parser = parse_spec)]
    subspace: Option<SubspaceSpec>,
    /// Run the variant on random data and verify the prediction exactly.
    #[arg(long)]
    measure: bool,
}

#[derive(Debug, Args)]
struct TrainToyArgs {
    /// Scene description JSON; omit for the built-in default scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Noising variance applied once to the clean video.
    #[arg(long, default_value_t = 0.25)]
    beta: f64,
    /// Window size as S_F,S_H,S_W.
    #[arg(long, value_parser = parse_spec, default_value = "4,4,4")]
    subspace: SubspaceSpec,
    #[arg(long)]
    shifted: bool,
    /// Reconstruct from window content alone, without the residual path.
    #[arg(long)]
    no_residual: bool,
    /// Train the zero-flow control arm instead of flow-aligned attention.
    #[arg(long)]
    no_flow: bool,
    #[arg(long, default_value_t = 8)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Scene description JSON; omit for the built-in default scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Candidate sizes, semicolon-separated: "4,2,2;4,4,4;8,4,4".
    #[arg(
        long,
        value_parser = parse_spec,
        value_delimiter = ';',
        default_value = "4,2,2;4,4,4;8,4,4"
    )]
    sizes: Vec<SubspaceSpec>,
    #[arg(long, default_value_t = 8)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Previously emitted sweep JSON to validate and re-emit.
    #[arg(long)]
    results: PathBuf,
}

/// Parse the process arguments and run the selected subcommand.
pub fn run() -> Result<()> {
    run_from(Cli::parse())
}

fn run_from(cli: Cli) -> Result<()> {
    fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::GenData(args) => gen_data(&cli, args),
        Command::ExtractFlow(args) => extract_flow(&cli, args),
        Command::RunBlock(args) => match cli.precision.precision() {
            Precision::Single => run_block::<f32>(&cli, args),
            Precision::Double => run_block::<f64>(&cli, args),
        },
        Command::Benchmark(args) => match cli.precision.precision() {
            Precision::Single => benchmark::<f32>(&cli, args),
            Precision::Double => benchmark::<f64>(&cli, args),
        },
        Command::TrainToy(args) => train_toy(&cli, args),
        Command::Sweep(args) => sweep(&cli, args),
        Command::Report(args) => report(&cli, args),
    }
}

/// Entry point used by the binary: run, report errors on stderr, and set
/// the exit code.
pub fn main_entry() -> std::process::ExitCode {
    match run() {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn load_scene(path: &Option<PathBuf>) -> Result<SceneSpec> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(default_scene()),
    }
}

fn gen_data(cli: &Cli, args: &GenDataArgs) -> Result<()> {
    let spec = load_scene(&args.scene)?;
    let (video, poses, flows) = gen_scene(&spec, cli.seed)?;
    let video_path = cli.out_dir.join("video.lvt");
    match cli.precision.precision() {
        Precision::Single => save_video(&video_path, &video.cast::<f32>())?,
        Precision::Double => save_video(&video_path, &video)?,
    }
    save_pose(cli.out_dir.join("poses.json"), &poses)?;
    save_flow(cli.out_dir.join("flows.mfl"), &flows)?;
    let mut scene_json = serde_json::to_string_pretty(&spec)?;
    scene_json.push('\n');
    fs::write(cli.out_dir.join("scene.json"), scene_json)?;
    if args.dump_pgm {
        dump_pgm_frames(&video, cli.out_dir.join("pgm"))?;
    }
    let (f, h, w, c) = video.shape();
    println!(
        "wrote scene {f}x{h}x{w}x{c} with {} objects to {}",
        spec.objects.len(),
        cli.out_dir.display()
    );
    Ok(())
}

fn extract_flow(cli: &Cli, args: &ExtractFlowArgs) -> Result<()> {
    let poses = load_pose(&args.poses)?;
    let (h, w) = args.size;
    let flows = synth_flow_from_poses(&poses, h, w, args.sigma)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cli.out_dir.join("flows.mfl"));
    save_flow(&out, &flows)?;
    println!(
        "wrote {} flow pairs at {h}x{w} to {}",
        flows.frames().saturating_sub(1),
        out.display()
    );
    Ok(())
}

fn block_params<T: Scalar>(
    path: &Option<PathBuf>,
    channels: usize,
    d_model: usize,
    heads: usize,
    seed: u64,
) -> Result<AttentionParams<T>> {
    match path {
        Some(p) => load_params(p, heads),
        None => AttentionParams::seeded(channels, d_model, heads, derive_seed(seed, "params")),
    }
}

fn run_block<T: Scalar>(cli: &Cli, args: &RunBlockArgs) -> Result<()> {
    let video: LatentVideo<T> = load_video(&args.input)?;
    let flows = load_flow(&args.flows)?;
    let (_, _, _, c) = video.shape();
    let params = block_params::<T>(&args.params, c, args.d_model, args.heads, cli.seed)?;
    let options = StsaOptions {
        shifted: args.shifted,
        residual: !args.no_residual,
    };
    let mut tally = MacTally::default();
    let output = stsa_block_counted(&video, &flows, args.subspace, &params, options, &mut tally)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cli.out_dir.join("output.lvt"));
    save_video(&out, &output)?;
    save_params(cli.out_dir.join("params.lvt"), &params)?;
    if args.dump_maps {
        let (f, h, w, _) = video.shape();
        let flows_for_maps = if args.shifted {
            shift_flows(&flows, args.subspace)
        } else {
            flows.clone()
        };
        let maps = compute_alignment(&flows_for_maps, (f, h, w), args.subspace.s_f)?;
        fs::write(cli.out_dir.join("maps.json"), dump_alignment(&maps)?)?;
    }
    let report = consistency_report(
        &output,
        &flows,
        args.subspace,
        params.d_model(),
        cli.seed,
        args.shifted,
    )?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(cli.out_dir.join("consistency.json"), text)?;
    println!(
        "block over {} tokens: {} projection + {} attention MACs, output in {}",
        video.frames() * video.height() * video.width(),
        tally.projection,
        tally.score + tally.value,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchmarkOutput {
    report: CostReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    measured: Option<MacTally>,
    #[serde(skip_serializing_if = "Option::is_none")]
    matches: Option<bool>,
}

/// Run the selected variant once on seeded noise and return its tally.
fn measure_mode<T: Scalar>(
    mode: AttentionMode,
    dims: CostDims,
    spec: Option<SubspaceSpec>,
    seed: u64,
) -> Result<MacTally> {
    let x = crate::tensor::independent_noise::<T>(
        dims.frames,
        dims.height,
        dims.width,
        dims.channels,
        derive_seed(seed, "benchmark-input"),
    )?;
    let params = AttentionParams::<T>::seeded(
        dims.channels,
        dims.d_model,
        1,
        derive_seed(seed, "benchmark-params"),
    )?;
    let mut tally = MacTally::default();
    match mode {
        AttentionMode::Subspace => {
            let spec = spec.expect("validated by cost_model");
            let (blocks, _) = split(&x, spec)?;
            for block in &blocks {
                subspace_attention_counted(block.tokens(), &params, &mut tally)?;
            }
        }
        AttentionMode::Temporal => {
            temporal_attention_counted(&x, &params, &mut tally)?;
        }
        AttentionMode::CrossFrame(m) => {
            crossframe_attention_counted(&x, m, &params, &mut tally)?;
        }
        AttentionMode::Full => {
            full_attention_counted(&x, &params, DEFAULT_TOKEN_CAP, &mut tally)?;
        }
    }
    Ok(tally)
}

fn benchmark<T: Scalar>(cli: &Cli, args: &BenchmarkArgs) -> Result<()> {
    let report = cost_model(args.mode, args.dims, args.subspace)?;
    let measured = if args.measure {
        Some(measure_mode::<T>(args.mode, args.dims, args.subspace, cli.seed)?)
    } else {
        None
    };
    let output = BenchmarkOutput {
        report,
        matches: measured.as_ref().map(|m| report.matches(m)),
        measured,
    };
    let mut text = serde_json::to_string_pretty(&output)?;
    text.push('\n');
    fs::write(cli.out_dir.join("benchmark.json"), &text)?;
    print!("{text}");
    if let Some(false) = output.matches {
        return Err(Error::Config(
            "measured MAC tally deviates from the closed-form prediction".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainOutput {
    config: TrainConfig,
    initial_loss: f64,
    final_loss: f64,
    losses: Vec<f64>,
}

fn train_toy(cli: &Cli, args: &TrainToyArgs) -> Result<()> {
    if cli.precision.precision() != Precision::Double {
        return Err(Error::PrecisionGuard { op: "train-toy" });
    }
    let spec = load_scene(&args.scene)?;
    let (clean, _, flows) = gen_scene(&spec, cli.seed)?;
    let config = TrainConfig {
        steps: args.steps,
        lr: args.lr,
        beta: args.beta,
        spec: args.subspace,
        shifted: args.shifted,
        residual: !args.no_residual,
        use_flows: !args.no_flow,
        d_model: args.d_model,
        heads: args.heads,
        seed: cli.seed,
    };
    let result = toy_train(&clean, &flows, &config)?;
    let output = TrainOutput {
        config,
        initial_loss: result.initial_loss(),
        final_loss: result.final_loss(),
        losses: result.losses.clone(),
    };
    let mut text = serde_json::to_string_pretty(&output)?;
    text.push('\n');
    fs::write(cli.out_dir.join("losses.json"), text)?;
    save_params(cli.out_dir.join("trained_params.lvt"), &result.params)?;
    println!(
        "trained {} steps: loss {:.6} -> {:.6} ({})",
        config.steps,
        output.initial_loss,
        output.final_loss,
        if config.use_flows {
            "flow-aligned"
        } else {
            "zero-flow control"
        }
    );
    Ok(())
}

fn sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let spec = load_scene(&args.scene)?;
    let (video, _, flows) = gen_scene(&spec, cli.seed)?;
    let table = sweep_subspace_sizes(&video, &flows, &args.sizes, args.d_model, args.heads, cli.seed)?;
    for skip in &table.skipped {
        eprintln!("warning: skipped {}: {}", skip.spec, skip.reason);
    }
    let (json_path, csv_path) = emit_sweep(&table, &cli.out_dir)?;
    println!(
        "swept {} sizes ({} skipped): {} and {}",
        table.rows.len(),
        table.skipped.len(),
        json_path.display(),
        csv_path.display()
    );
    Ok(())
}

fn report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let table = load_sweep(&args.results)?;
    let (json_path, csv_path) = emit_sweep(&table, &cli.out_dir)?;
    println!(
        "re-emitted {} rows: {} and {}",
        table.rows.len(),
        json_path.display(),
        csv_path.display()
    );
    Ok(())
}

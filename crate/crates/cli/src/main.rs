//! `nvgap`: synthesize latent containers, measure amortization gaps, encode,
//! decode and verify.
//!
//! Exit status: 0 on success, 2 on malformed or mismatched input files, 3 when
//! a decode or verification check fails, 1 for anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use nvgap::analysis::analyze;
use nvgap::codec::{decode_bitstream, encode_container, CodecError, DecoderSideInfo, EncoderConfig};
use nvgap::container_io::{
    read_bitstream, read_latent_container, write_bitstream, write_latent_container, FormatError,
    LatentContainer,
};
use nvgap::synth::{generate, parse_gop, Sampling, SynthConfig};
use nvgap::verify::verify_container;

const EXIT_FORMAT: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "nvgap", version, about = "Amortization-gap analysis and reparameterized entropy coding of video latents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic latent container (.nvl).
    Synth(SynthArgs),
    /// Print the ratio / gap / saving table of a latent container.
    Analyze(AnalyzeArgs),
    /// Encode a latent container into a bitstream (.nvb).
    Encode(EncodeArgs),
    /// Decode a bitstream and compare it with the latent container.
    Decode(DecodeArgs),
    /// Run the invariant checks on a latent container and print a JSON verdict.
    Verify(VerifyArgs),
}

#[derive(Args, Clone, Copy)]
struct CoderArgs {
    /// Mixture components K for side-stream refits.
    #[arg(long, short = 'k', default_value_t = 1)]
    mixtures: usize,
    /// Channels per side stream eligible for replacement.
    #[arg(long, default_value_t = 8)]
    top_s_factorized: usize,
    /// Scale groups per main stream eligible for replacement.
    #[arg(long, default_value_t = 8)]
    top_s_hyper: usize,
}

impl From<CoderArgs> for EncoderConfig {
    fn from(a: CoderArgs) -> Self {
        EncoderConfig {
            mixtures: a.mixtures,
            top_s_factorized: a.top_s_factorized,
            top_s_hyper: a.top_s_hyper,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Stratified,
    Iid,
}

#[derive(Args)]
struct SynthArgs {
    /// Output .nvl path.
    #[arg(long, short)]
    output: PathBuf,
    /// Named configuration: matched, drifted-sigma or drifted-side.
    #[arg(long, default_value = "matched")]
    preset: String,
    /// GOP preset (ssf, lhbdc, aivc) or a pattern such as IPPB.
    #[arg(long)]
    gop: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side mean shift in units of each channel's learned scale.
    #[arg(long)]
    side_shift: Option<f64>,
    /// True side scale over learned side scale.
    #[arg(long)]
    side_sigma_ratio: Option<f64>,
    /// True main scale over the winning predefined scale.
    #[arg(long)]
    main_sigma_ratio: Option<f64>,
    /// Per-frame drift added to the side shift and the main ratio.
    #[arg(long)]
    temporal_drift: Option<f64>,
    /// Residual main-latent elements per frame.
    #[arg(long)]
    main_len: Option<usize>,
    #[arg(long, value_enum)]
    sampling: Option<SamplingArg>,
    /// Leave out the motion streams.
    #[arg(long)]
    no_motion: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[command(flatten)]
    coder: CoderArgs,
    /// Also write the table, plus one line per frame, as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    coder: CoderArgs,
}

#[derive(Args)]
struct DecodeArgs {
    /// Bitstream to decode.
    #[arg(long, short)]
    input: PathBuf,
    /// Latent container holding the model tables and the reference latents.
    #[arg(long, short)]
    model: PathBuf,
    /// Write the reconstruction as a .nvl file.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Reject the bitstream unless its header has this K.
    #[arg(long, short = 'k')]
    mixtures: Option<usize>,
    #[arg(long)]
    top_s_factorized: Option<usize>,
    #[arg(long)]
    top_s_hyper: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[command(flatten)]
    coder: CoderArgs,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_latents(path: &Path) -> Result<LatentContainer> {
    let bytes = read_file(path)?;
    read_latent_container(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let mut cfg = SynthConfig::preset(&a.preset)?;
    if let Some(g) = &a.gop {
        cfg.gop = parse_gop(g)?;
    }
    cfg.seed = a.seed;
    if let Some(v) = a.side_shift {
        cfg.side_shift = v;
    }
    if let Some(v) = a.side_sigma_ratio {
        cfg.side_sigma_ratio = v;
    }
    if let Some(v) = a.main_sigma_ratio {
        cfg.main_sigma_ratio = v;
    }
    if let Some(v) = a.temporal_drift {
        cfg.temporal_drift = v;
    }
    if let Some(v) = a.main_len {
        cfg.residual.main_len = v;
    }
    if let Some(s) = a.sampling {
        cfg.sampling = match s {
            SamplingArg::Stratified => Sampling::Stratified,
            SamplingArg::Iid => Sampling::Iid,
        };
    }
    if a.no_motion {
        cfg.motion = None;
    }
    let container = generate(&cfg)?;
    let bytes = write_latent_container(&container);
    write_file(&a.output, &bytes)?;
    println!(
        "wrote {} frames ({} bytes) to {}",
        container.frames().len(),
        bytes.len(),
        a.output.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<ExitCode> {
    let container = load_latents(&a.input)?;
    let report = analyze(&container, &a.coder.into())?;
    print!("{}", report.render_table());
    if let Some(path) = &a.csv {
        write_file(path, report.to_csv().as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn encode(a: EncodeArgs) -> Result<ExitCode> {
    let container = load_latents(&a.input)?;
    let (bitstream, summary) = encode_container(&container, &a.coder.into())?;
    let bytes = write_bitstream(&bitstream);
    write_file(&a.output, &bytes)?;
    let payload = bitstream.payload_bits();
    let estimated_baseline: f64 = summary
        .frames
        .iter()
        .flat_map(|f| &f.streams)
        .map(|s| s.estimated_baseline_bits)
        .sum();
    let estimated_achieved: f64 = summary
        .frames
        .iter()
        .flat_map(|f| &f.streams)
        .map(|s| s.estimated_achieved_bits)
        .sum();
    let params: usize = summary.frames.iter().flat_map(|f| &f.streams).map(|s| s.param_bits).sum();
    println!("frames: {}", summary.frames.len());
    println!("baseline bits: {}", summary.coded_baseline_bits());
    println!("achieved bits: {payload}");
    println!("parameter bits: {params}");
    println!("saving: {}", pct(summary.saving()?));
    println!("estimated baseline bits: {estimated_baseline:.1}");
    println!("estimated achieved bits: {estimated_achieved:.1}");
    println!("file bits: {} (header {})", 8 * bytes.len(), 8 * bytes.len() - payload);
    Ok(ExitCode::SUCCESS)
}

fn decode(a: DecodeArgs) -> Result<ExitCode> {
    let reference = load_latents(&a.model)?;
    let bytes = read_file(&a.input)?;
    let bitstream = read_bitstream(&bytes).with_context(|| format!("parsing {}", a.input.display()))?;
    let header = &bitstream.header;
    let expected = EncoderConfig {
        mixtures: a.mixtures.unwrap_or(usize::from(header.mixtures)),
        top_s_factorized: a.top_s_factorized.unwrap_or(usize::from(header.top_s_factorized)),
        top_s_hyper: a.top_s_hyper.unwrap_or(usize::from(header.top_s_hyper)),
    };
    let frames = decode_bitstream(&bitstream, &DecoderSideInfo::from_container(&reference), Some(&expected))?;
    let mismatch = frames
        .iter()
        .zip(reference.frames())
        .position(|(a, b)| a != b)
        .or((frames.len() != reference.frames().len()).then_some(frames.len()));
    if let Some(path) = &a.output {
        let rebuilt = LatentContainer::new(reference.models().clone(), frames)?;
        write_file(path, &write_latent_container(&rebuilt))?;
    }
    match mismatch {
        None => {
            println!("decoded {} frames: identical", reference.frames().len());
            Ok(ExitCode::SUCCESS)
        }
        Some(i) => {
            println!("decoded frames differ from the reference at frame {i}");
            Ok(ExitCode::from(EXIT_VERIFY))
        }
    }
}

fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let container = load_latents(&a.input)?;
    let report = verify_container(&container, &a.coder.into())?;
    let verdict = json!({
        "verdict": if report.passed() { "pass" } else { "fail" },
        "tables_checked": report.tables_checked,
        "streams_checked": report.streams_checked,
        "gibbs_violations": report.gibbs.len(),
        "overhead_violations": report.overhead.len(),
        "round_trip": report.round_trip_failure.is_none(),
        "first_round_trip_failure": report.round_trip_failure,
    });
    println!("{verdict}");
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VERIFY)
    })
}

/// Malformed or mismatched inputs map to the format exit status.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<FormatError>().is_some() {
            return EXIT_FORMAT;
        }
        if let Some(e) = cause.downcast_ref::<CodecError>() {
            return match e {
                CodecError::Config(_) => 1,
                _ => EXIT_FORMAT,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NVC_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

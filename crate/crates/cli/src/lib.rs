//! Command-line front end over PNG frame sequences: deflicker, detail fusion,
//! evaluation, analysis sweeps and fixture generation.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 validation. Every error is
//! reported on stderr with a leading `error[CODE]:`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] relight_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_io() => 2,
            CliError::Core(_) => 3,
        }
    }
}

/// Renders an error with its `error[CODE]:` prefix on the first line.
pub fn format_error(err: &CliError) -> String {
    let text = err.to_string();
    let text = text.trim_end();
    let text = text.strip_prefix("error: ").unwrap_or(text);
    format!("error[{}]: {}", err.exit_code(), text)
}

#[derive(Debug, Parser)]
#[command(name = "relight", version, about = "Post-process and evaluate relit videos stored as PNG sequences")]
pub struct Cli {
    /// JSON config file; absent keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set bilateral.radius=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Remove temporal lighting flicker from a sequence.
    Smooth(SmoothArgs),
    /// Transfer the lighting of a relit sequence onto the original.
    Fuse(FuseArgs),
    /// Smooth a relit sequence, fuse it onto the original and evaluate.
    Pipeline(PipelineArgs),
    /// Score a candidate sequence against a reference.
    Eval(EvalArgs),
    /// Rank sequences by light stability at several brightness thresholds.
    SweepTau(SweepTauArgs),
    /// Write magnitude spectra and high-frequency energy.
    Spectrum(SpectrumArgs),
    /// Brightness histograms of one or more sequences.
    Hist(HistArgs),
    /// Generate a deterministic synthetic sequence.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Reports {
    /// Write the JSON report here.
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
    /// Write per-frame signals as CSV here.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
}

impl Reports {
    fn requested(&self) -> bool {
        self.json.is_some() || self.csv.is_some()
    }
}

#[derive(Debug, Args)]
pub struct SmoothArgs {
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Base blend weight of the history.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Brightness threshold of the stability metric, 8-bit units.
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    pub reports: Reports,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Original sequence.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    #[arg(short, long)]
    pub relit: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Share of the relit lightness kept in the output.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    pub reports: Reports,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Original sequence.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    #[arg(short, long)]
    pub relit: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    pub reports: Reports,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference sequence.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Candidate sequence.
    #[arg(short, long)]
    pub relit: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    pub reports: Reports,
}

#[derive(Debug, Args)]
pub struct SweepTauArgs {
    /// Sequences to rank. Repeatable.
    #[arg(short, long, required = true)]
    pub input: Vec<PathBuf>,
    /// Comma-separated thresholds; defaults to 105,115,125,135,145.
    #[arg(long, value_delimiter = ',')]
    pub taus: Vec<f64>,
    #[command(flatten)]
    pub reports: Reports,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Reference for the high-frequency energy ratio.
    #[arg(short, long)]
    pub relit: Option<PathBuf>,
    /// PGM file for the mean spectrum, or a directory with `--per-frame`.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub per_frame: bool,
    /// Radius of the low-frequency disc as a fraction of Nyquist.
    #[arg(long, default_value_t = commands::HF_CUTOFF)]
    pub cutoff: f64,
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    /// Sequences to histogram. Repeatable.
    #[arg(short, long, required = true)]
    pub input: Vec<PathBuf>,
    /// Number of bins; must divide 256.
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    #[command(flatten)]
    pub reports: Reports,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Constant,
    Flicker,
    MovingSquare,
    TexturedTranslation,
    Jitter,
    /// Writes `original/` and a blurred, flickering `relit/` copy.
    RelitPair,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub kind: SynthKind,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 320)]
    pub width: usize,
    #[arg(long, default_value_t = 240)]
    pub height: usize,
    #[arg(long, default_value_t = 48)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Base gray level, 8-bit units (background for moving-square).
    #[arg(long)]
    pub base: Option<f64>,
    /// Flicker or jitter amplitude, 8-bit units.
    #[arg(long)]
    pub amp: Option<f64>,
    /// Frames between brightness toggles.
    #[arg(long)]
    pub period: Option<usize>,
    /// Peak-to-peak static texture amplitude, 8-bit units.
    #[arg(long)]
    pub texture: Option<f64>,
    /// Square side in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Square speed in pixels per frame.
    #[arg(long)]
    pub speed: Option<usize>,
    /// Square gray level, 8-bit units.
    #[arg(long)]
    pub foreground: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub dx: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    pub dy: Option<i64>,
    /// Texture smoothness for textured-translation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Blur of the relit copy in relit-pair.
    #[arg(long)]
    pub blur: Option<f64>,
    /// Left-to-right lighting gain of the relit copy in relit-pair.
    #[arg(long)]
    pub gain: Option<f64>,
}

/// Parses `args` (program name first) and runs the command, writing
/// human-readable results to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            return commands::emit(out, e.render().to_string().trim_end());
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            return Err(CliError::Usage(format!("missing command\n{}", e.render())));
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    if cli.threads > 0 {
        // Fails only if a pool already exists, e.g. on a second in-process run.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    commands::dispatch(&cli, out)
}

/// Runs with process stdout/stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(args, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", format_error(&e));
            e.exit_code()
        }
    }
}

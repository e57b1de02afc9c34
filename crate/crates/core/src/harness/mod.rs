//! Command implementations shared by the `stereoworld` binary and by
//! `stereoworld run --config <file.json>`.
//!
//! Every command returns an [`Outcome`]; errors mean bad input. The binary
//! maps them to exit codes 0 (success), 1 (a checked property failed) and
//! 2 (usage or validation error).

pub mod bench;
pub mod suites;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMode, TokenGrid};
use crate::camera::Composition;
use crate::container::{write_atomic, write_file};
use crate::dit::{
    estimate_disparity, generate_scene, load_model, read_manifest, sample, SampleOptions, TrainConfig, Trainer,
};
use crate::error::{Error, Result};
use crate::flops::{flops_decomposed, measure, ShapeSpec, CSV_HEADER};
use crate::rng::Rng;
use crate::rope::RopeConfig;
use crate::tensor::{DType, Scalar};
use crate::trajectory::{sample_trajectory, TrajectoryConfig, TrajectoryFile};

pub use bench::{bench_csv, bench_sweep, BenchRow, SWEEP};
pub use suites::Property;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub passed: bool,
    pub stdout: String,
}

impl Outcome {
    fn ok(stdout: impl Into<String>) -> Self {
        Outcome {
            passed: true,
            stdout: stdout.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Attention cost of one shape, closed form and optionally counted.
    Flops(FlopsArgs),
    /// Run a property suite.
    Check(CheckArgs),
    /// Sample a random camera trajectory.
    Traj(TrajArgs),
    /// Train the toy model and write a checkpoint directory.
    Train(TrainArgs),
    /// Generate a stereo video from a checkpoint.
    Sample(SampleArgs),
    /// Time joint versus decomposed attention over a shape sweep.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlopsArgs {
    #[arg(long, default_value_t = 1)]
    pub b: u64,
    #[arg(long, default_value_t = 13)]
    pub f: u64,
    #[arg(long, default_value_t = 15)]
    pub h: u64,
    #[arg(long, default_value_t = 20)]
    pub w: u64,
    #[arg(long, default_value_t = 128)]
    pub d: u64,
    /// Camera dims appended to queries and keys (adjusted totals only).
    #[arg(long, default_value_t = 0)]
    pub d_c: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Also run the kernels and count their multiply-adds.
    #[arg(long)]
    pub empirical: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Default for FlopsArgs {
    fn default() -> Self {
        FlopsArgs {
            b: 1,
            f: 13,
            h: 15,
            w: 20,
            d: 128,
            d_c: 0,
            format: Format::Json,
            empirical: false,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Rope,
    Attention,
    Camera,
    Grad,
}

fn parse_variant(s: &str) -> std::result::Result<Composition, String> {
    match s {
        "inverse" => Ok(Composition::Inverse),
        "transpose" => Ok(Composition::Transpose),
        _ => Err(format!("expected `inverse` or `transpose`, got `{s}`")),
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    pub seed: u64,
    /// Rotary head dimension.
    #[arg(long, default_value_t = 12)]
    #[serde(default = "default_check_d")]
    pub d: usize,
    #[arg(long, default_value_t = 8)]
    #[serde(default = "default_check_d_c")]
    pub d_c: usize,
    #[arg(long, value_parser = parse_variant, default_value = "inverse")]
    #[serde(default)]
    pub variant: Composition,
    #[arg(long, default_value_t = 0, hide = true)]
    #[serde(default)]
    pub fault_row_band: usize,
}

fn default_check_d() -> usize {
    12
}

fn default_check_d_c() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of frames.
    #[arg(long, visible_alias = "n-frames", default_value_t = 49)]
    pub n: usize,
    #[arg(long, default_value_t = 0.063)]
    pub baseline: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Default for TrajArgs {
    fn default() -> Self {
        TrajArgs {
            seed: 0,
            n: 49,
            baseline: 0.063,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// JSON training config; defaults are used when absent.
    #[arg(long)]
    #[serde(default)]
    pub config: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
    /// Train until this step count (defaults to the config's).
    #[arg(long)]
    #[serde(default)]
    pub steps: Option<usize>,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    #[serde(default)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    #[default]
    Stereo,
    Full4d,
    Causal,
}

impl From<SampleMode> for AttentionMode {
    fn from(m: SampleMode) -> Self {
        match m {
            SampleMode::Stereo => AttentionMode::StereoDecomposed,
            SampleMode::Full4d => AttentionMode::Full4D,
            SampleMode::Causal => AttentionMode::CausalChunked,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SampleMode::Stereo)]
    #[serde(default)]
    pub mode: SampleMode,
    /// Output tensor file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    pub seed: u64,
    /// Euler steps.
    #[arg(long, default_value_t = 20)]
    #[serde(default = "default_sample_steps")]
    pub steps: usize,
    /// Trajectory file whose cameras replace the scene's.
    #[arg(long)]
    #[serde(default)]
    pub trajectory: Option<PathBuf>,
}

fn default_sample_steps() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 7)]
    pub repeats: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Default for BenchArgs {
    fn default() -> Self {
        BenchArgs {
            seed: 0,
            repeats: 7,
            out: None,
        }
    }
}

/// Parses a JSON run file: one command object, e.g.
/// `{"flops": {"f": 13, "format": "csv"}}`.
pub fn parse_run_config(json: &str) -> Result<Command> {
    Ok(serde_json::from_str(json)?)
}

pub fn execute(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Flops(a) => cmd_flops(a),
        Command::Check(a) => cmd_check(a),
        Command::Traj(a) => cmd_traj(a),
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Writes `text` to `out` if given, otherwise returns it for stdout.
fn emit(text: String, out: Option<&Path>) -> Result<Outcome> {
    match out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            Ok(Outcome::ok(format!("wrote {}\n", p.display())))
        }
        None => Ok(Outcome::ok(text)),
    }
}

fn cmd_flops(a: &FlopsArgs) -> Result<Outcome> {
    let shape = ShapeSpec::new(a.b, a.f, a.h, a.w, a.d)?;
    let mut report = flops_decomposed(shape, a.d_c)?;
    if a.empirical {
        report.empirical = Some(measure(shape, a.seed)?);
    }
    let text = match a.format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => {
            let mut header = CSV_HEADER.to_string();
            let mut row = report.csv_row();
            if let Some(e) = report.empirical {
                header.push_str(",empirical_full4d,empirical_attn3d,empirical_row,empirical_stereo_total,empirical_ratio");
                row.push_str(&format!(",{},{},{},{},{}", e.full4d, e.attn3d, e.row, e.stereo_total, e.ratio));
            }
            format!("{header}\n{row}\n")
        }
    };
    emit(text, a.out.as_deref())
}

fn cmd_check(a: &CheckArgs) -> Result<Outcome> {
    let cfg = RopeConfig::new(a.d, a.d_c)?.with_variant(a.variant);
    let props = suites::run_suite(a.suite, a.seed, &cfg, a.fault_row_band);
    let mut text = String::new();
    for p in &props {
        let tag = if p.passed { "PASS" } else { "FAIL" };
        text.push_str(&format!("{tag}  {}  {}\n", p.name, p.detail));
    }
    let passed = props.iter().filter(|p| p.passed).count();
    text.push_str(&format!("{passed}/{} properties passed\n", props.len()));
    Ok(Outcome {
        passed: passed == props.len(),
        stdout: text,
    })
}

fn cmd_traj(a: &TrajArgs) -> Result<Outcome> {
    if !(a.baseline > 0.0) {
        return Err(Error::invalid("baseline must be positive"));
    }
    let traj = sample_trajectory(&mut Rng::new(a.seed), a.n, &TrajectoryConfig::default())?;
    let json = TrajectoryFile::from_trajectory(&traj, a.baseline).to_json() + "\n";
    emit(json, a.out.as_deref())
}

fn cmd_train(a: &TrainArgs) -> Result<Outcome> {
    if a.resume {
        let m = read_manifest(&a.out)?;
        return match m.dtype {
            DType::F32 => train_with(Trainer::<f32>::resume(&a.out)?, a),
            DType::F64 => train_with(Trainer::<f64>::resume(&a.out)?, a),
        };
    }
    if a.out.join("manifest.json").exists() {
        return Err(Error::invalid(format!(
            "{} already holds a checkpoint; pass --resume to continue it",
            a.out.display()
        )));
    }
    let mut config = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<TrainConfig>(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(steps) = a.steps {
        config.steps = steps;
    }
    match config.dtype {
        DType::F32 => train_with(Trainer::<f32>::new(config)?, a),
        DType::F64 => train_with(Trainer::<f64>::new(config)?, a),
    }
}

fn train_with<T: Scalar>(mut trainer: Trainer<T>, a: &TrainArgs) -> Result<Outcome> {
    let until = a.steps.unwrap_or(trainer.config().steps);
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let log_path = a.out.join("train.jsonl");
    let mut log = OpenOptions::new()
        .create(true)
        .append(a.resume)
        .write(true)
        .truncate(!a.resume)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let start = trainer.step_count();
    trainer.run_until(until, |rec| {
        writeln!(log, "{}", rec.to_json_line()).map_err(|e| Error::io(&log_path, e))
    })?;
    let held_out = trainer.held_out_loss()?;
    trainer.save(&a.out)?;
    Ok(Outcome::ok(format!(
        "trained steps {start}..{} ({}), held-out loss {held_out:.6}\ncheckpoint {}\n",
        trainer.step_count(),
        T::DTYPE.as_str(),
        a.out.display()
    )))
}

fn cmd_sample(a: &SampleArgs) -> Result<Outcome> {
    match read_manifest(&a.checkpoint)?.dtype {
        DType::F32 => sample_with::<f32>(a),
        DType::F64 => sample_with::<f64>(a),
    }
}

fn sample_with<T: Scalar>(a: &SampleArgs) -> Result<Outcome> {
    let manifest = read_manifest(&a.checkpoint)?;
    let cfg = manifest.config;
    let model = load_model::<T>(&a.checkpoint)?.with_attention(a.mode.into());
    let policy = cfg.model.normalization;
    let mut rng = Rng::new(a.seed);
    let scene = generate_scene(&mut rng, &cfg.scene)?;
    let condition = match &a.trajectory {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let file = TrajectoryFile::from_json(&text)?;
            TokenGrid::with_trajectory(scene.video.cast(), &file.to_trajectory()?, file.baseline_m, policy)?
        }
        None => scene.grid::<T>(policy)?,
    };
    let opts = SampleOptions {
        steps: a.steps,
        ..Default::default()
    };
    let out = sample(&model, &condition, cfg.cond_frames, opts, &mut rng)?;
    write_file(&a.out, out.values())?;
    let max_shift = (cfg.scene.width as i64 / 2).max(1);
    let disparity = estimate_disparity(out.values(), cfg.cond_frames, max_shift)?;
    let summary = serde_json::json!({
        "out": a.out,
        "shape": out.values().shape(),
        "dtype": T::DTYPE,
        "mode": a.mode,
        "steps": a.steps,
        "estimated_disparity_px": disparity,
    });
    Ok(Outcome::ok(serde_json::to_string_pretty(&summary)? + "\n"))
}

fn cmd_bench(a: &BenchArgs) -> Result<Outcome> {
    let rows = bench_sweep(&SWEEP, a.seed, a.repeats)?;
    emit(bench_csv(&rows), a.out.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flops_json_and_csv_agree() {
        let mut a = FlopsArgs::default();
        let json = execute(&Command::Flops(a.clone())).unwrap().stdout;
        a.format = Format::Csv;
        let csv = execute(&Command::Flops(a)).unwrap().stdout;
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[5], v["analytic_full4d"].to_string());
        assert_eq!(row[8], v["analytic_stereo_total"].to_string());
        assert_eq!(row[9], v["ratio"].to_string());
    }

    #[test]
    fn run_config_rejects_unknown_fields() {
        assert!(parse_run_config(r#"{"flops": {"f": 2, "bogus": 1}}"#).is_err());
        let cmd = parse_run_config(r#"{"check": {"suite": "camera"}}"#).unwrap();
        assert!(matches!(cmd, Command::Check(CheckArgs { suite: Suite::Camera, d: 12, .. })));
    }

    #[test]
    fn invalid_shape_is_an_error() {
        let a = FlopsArgs {
            w: 0,
            ..Default::default()
        };
        assert!(execute(&Command::Flops(a)).is_err());
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use boxcalib::evaluation::{classify_difficulty, run_benchmark, BenchmarkOptions, DifficultyRule, SUCCESS_RTE_M};
use boxcalib::io::{
    export_merged_geometry, export_report, export_result, load_dataset, load_extrinsic, load_scene, synth_dataset,
    write_dataset, GtTransform, ResultFile, SynthParams,
};
use boxcalib::pipeline::StageTimings;
use boxcalib::{calibrate, CalibrationStatus, Difficulty, StrategyConfig};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "boxcalib", version, about = "Vehicle-infrastructure LiDAR extrinsic calibration from 3D detection boxes")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "BOXCALIB_JOBS")]
    jobs: Option<usize>,

    /// More progress output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibrate one infrastructure/vehicle frame pair.
    Calibrate(CalibrateArgs),
    /// Calibrate every pair of a dataset and aggregate errors by difficulty.
    Benchmark(BenchmarkArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Label every pair of a dataset easy or hard.
    Classify(ClassifyArgs),
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Infrastructure scene file.
    #[arg(long)]
    infra: PathBuf,
    /// Vehicle scene file.
    #[arg(long)]
    veh: PathBuf,
    /// Ground-truth extrinsic; adds rre_deg / rte_m / success to the output.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// v1, v2, v3 or a path to a TOML strategy file.
    #[arg(long, default_value = "v1", value_parser = parse_strategy)]
    strategy: StrategyConfig,
    /// Result file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also write both scenes, merged in the vehicle frame, as ASCII PLY.
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long, default_value_t = SUCCESS_RTE_M)]
    success_threshold: f64,
    /// Write zero stage timings so output is byte-reproducible.
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args, Debug)]
struct RuleArgs {
    /// Minimum co-visible box pairs for an easy pair.
    #[arg(long, default_value_t = DifficultyRule::default().min_common)]
    min_common: usize,
    /// IoU above which a ground-truth-aligned box pair counts as co-visible.
    #[arg(long, default_value_t = DifficultyRule::default().iou_threshold)]
    covisible_iou: f64,
    /// Largest sensor separation (m) of an easy pair.
    #[arg(long, default_value_t = DifficultyRule::default().max_translation_m)]
    max_easy_translation: f64,
}

impl RuleArgs {
    fn rule(&self) -> DifficultyRule {
        DifficultyRule {
            min_common: self.min_common,
            iou_threshold: self.covisible_iou,
            max_translation_m: self.max_easy_translation,
        }
    }
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "v1", value_parser = parse_strategy)]
    strategy: StrategyConfig,
    /// Report file (JSON).
    #[arg(long)]
    report: PathBuf,
    /// RTE (m) below which a pair counts as a success.
    #[arg(long, default_value_t = SUCCESS_RTE_M)]
    success_threshold: f64,
    #[command(flatten)]
    rule: RuleArgs,
    /// Write zero per-frame times so output is byte-reproducible.
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// TOML file with generator parameters; flags below override it.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Number of frame pairs.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_common: Option<usize>,
    #[arg(long)]
    n_infra_only: Option<usize>,
    #[arg(long)]
    n_vehicle_only: Option<usize>,
    /// Side of the placement square (m).
    #[arg(long)]
    area: Option<f64>,
    /// Largest ground-truth translation (m).
    #[arg(long)]
    max_translation: Option<f64>,
    #[arg(long)]
    noise_center_sigma: Option<f64>,
    /// Yaw noise (rad).
    #[arg(long)]
    noise_yaw_sigma: Option<f64>,
    #[arg(long)]
    noise_size_sigma: Option<f64>,
    #[arg(long)]
    min_gap: Option<f64>,
    /// Comma-separated center-noise values; one sub-directory per value.
    #[arg(long, value_delimiter = ',')]
    sweep_center_sigma: Vec<f64>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Labels file (JSON).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    rule: RuleArgs,
}

fn parse_strategy(s: &str) -> std::result::Result<StrategyConfig, String> {
    if let Some(preset) = StrategyConfig::preset(s) {
        return Ok(preset);
    }
    let path = Path::new(s);
    if !path.is_file() {
        return Err(format!("unknown strategy '{s}': expected v1, v2, v3 or a path to a TOML strategy file"));
    }
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let config: StrategyConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    config.validate().map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(config)
}

/// Process outcome: 0 on success, 2 when calibration itself failed.
enum Outcome {
    Done,
    CalibrationFailed,
}

fn cmd_calibrate(args: &CalibrateArgs, verbose: u8) -> Result<Outcome> {
    let inf = load_scene(&args.infra)?;
    let veh = load_scene(&args.veh)?;
    let gt = args.gt.as_ref().map(load_extrinsic).transpose()?;
    let mut result = calibrate(&inf, &veh, &args.strategy);
    if args.no_timings {
        result.stage_timings = StageTimings::default();
    }
    let file = ResultFile::new(&result, gt.as_ref(), args.success_threshold);
    export_result(&file, &args.out)?;
    if let Some(path) = &args.geometry {
        export_merged_geometry(&result, &inf, &veh, path)?;
    }
    eprintln!(
        "{}: {} matches, scene oIoU {:.4}",
        result.status,
        result.matches.len(),
        result.scene_oiou
    );
    if verbose > 0 {
        if let (Some(r), Some(t)) = (file.rre_deg, file.rte_m) {
            eprintln!("RRE {r:.4} deg, RTE {t:.4} m");
        }
    }
    Ok(if result.status == CalibrationStatus::Ok {
        Outcome::Done
    } else {
        Outcome::CalibrationFailed
    })
}

fn cmd_benchmark(args: &BenchmarkArgs, verbose: u8) -> Result<Outcome> {
    let (_, records) = load_dataset(&args.dataset)?;
    if verbose > 0 {
        eprintln!("{} frame pairs from {}", records.len(), args.dataset.display());
    }
    let options = BenchmarkOptions {
        success_threshold_m: args.success_threshold,
        rule: args.rule.rule(),
    };
    let mut report = run_benchmark(&records, &args.strategy, &options)?;
    if args.no_timings {
        report = report.without_timings();
    }
    export_report(&report, &args.report)?;
    for (name, g) in &report.groups {
        eprintln!(
            "{name:>8}: {} frames, success {:.1}%, RRE {}, RTE {}, {:.1} ms",
            g.frames,
            g.success_rate_pct,
            g.mean_rre_deg.map_or("-".into(), |v| format!("{v:.3} deg")),
            g.mean_rte_m.map_or("-".into(), |v| format!("{v:.3} m")),
            g.mean_time_ms
        );
    }
    Ok(Outcome::Done)
}

fn synth_params(args: &SynthArgs) -> Result<SynthParams> {
    let mut p = match &args.params {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthParams::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = args.$field { p.$field = v; })*};
    }
    set!(seed, n_common, n_infra_only, n_vehicle_only, area, noise_center_sigma, noise_yaw_sigma, noise_size_sigma, min_gap);
    if let Some(m) = args.max_translation {
        match &mut p.gt_transform {
            GtTransform::Random { max_translation, .. } => *max_translation = m,
            GtTransform::Fixed { .. } => bail!("--max-translation needs a random ground-truth transform"),
        }
    }
    p.validate()?;
    Ok(p)
}

fn cmd_synth(args: &SynthArgs, verbose: u8) -> Result<Outcome> {
    let params = synth_params(args)?;
    let runs: Vec<(PathBuf, SynthParams)> = if args.sweep_center_sigma.is_empty() {
        vec![(args.out.clone(), params)]
    } else {
        args.sweep_center_sigma
            .iter()
            .map(|&sigma| {
                let p = SynthParams {
                    noise_center_sigma: sigma,
                    ..params.clone()
                };
                p.validate()?;
                Ok((args.out.join(format!("center_sigma_{sigma}")), p))
            })
            .collect::<Result<_>>()?
    };
    for (dir, p) in runs {
        let records = synth_dataset(&p, args.n)?;
        write_dataset(&dir, &records, Some(&p))?;
        if verbose > 0 {
            eprintln!("wrote {} pairs to {}", records.len(), dir.display());
        }
    }
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct PairLabel {
    name: String,
    difficulty: Difficulty,
}

#[derive(Serialize)]
struct Labels {
    rule: DifficultyRule,
    counts: BTreeMap<String, usize>,
    pairs: Vec<PairLabel>,
}

fn cmd_classify(args: &ClassifyArgs) -> Result<Outcome> {
    let (manifest, records) = load_dataset(&args.dataset)?;
    let rule = args.rule.rule();
    let mut counts = BTreeMap::from([("easy".to_string(), 0), ("hard".to_string(), 0)]);
    let mut pairs = Vec::with_capacity(records.len());
    for (k, (entry, rec)) in manifest.pairs.iter().zip(&records).enumerate() {
        let difficulty = classify_difficulty(rec, &rule, k)?;
        *counts.entry(difficulty.to_string()).or_default() += 1;
        pairs.push(PairLabel {
            name: entry.name.clone(),
            difficulty,
        });
    }
    let labels = Labels { rule, counts, pairs };
    let json = serde_json::to_string_pretty(&labels)? + "\n";
    fs::write(&args.out, json).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("easy {}, hard {}", labels.counts["easy"], labels.counts["hard"]);
    Ok(Outcome::Done)
}

fn run(cli: &Cli) -> Result<Outcome> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build()?;
    pool.install(|| match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a, cli.verbose),
        Command::Benchmark(a) => cmd_benchmark(a, cli.verbose),
        Command::Synth(a) => cmd_synth(a, cli.verbose),
        Command::Classify(a) => cmd_classify(a),
    })
}

/// The error chain joined with ": ", skipping causes already quoted by
/// their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                ErrorKind::InvalidValue | ErrorKind::ValueValidation => {
                    eprintln!("\n{}", Cli::command().render_usage());
                    ExitCode::from(1)
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::CalibrationFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use lungview::evaluation::{evaluate_scores, Calibration, SplitSizes};
use lungview::features::FeatureExtractor;
use lungview::manifest::{CaseRecord, Manifest};
use lungview::memory_bank::{bank_file_name, load_bank, save_bank};
use lungview::mvol::{load_volume, save_volume};
use lungview::phantom::{generate_dataset_with, dataset_case_config};
use lungview::pipeline::{
    extract_all, monte_carlo_eval, prepare_record, CaseFeatures, Detector, LungSource, RunConfig,
};
use lungview::projection::{ProjectionMethod, ProjectionSet};
use lungview::report::{load_scores, write_roc, write_scores, MetricsReport, ScoreRow};
use lungview::segmentation::{dice, iou, threshold_segment_phantom};
use lungview::volume::Volume;
use lungview::{Error, Result};

const CALIBRATION_FILE: &str = "calibration.json";

#[derive(Parser)]
#[command(name = "lungview", version, about = "Multi-view projection anomaly detection for lung CT volumes")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (JSON); flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_parser = parse_method)]
    method: Option<ProjectionMethod>,
    #[arg(long, global = true, value_parser = parse_set)]
    projection_set: Option<ProjectionSet>,
    #[arg(long, global = true)]
    coreset_frac: Option<f64>,
    /// Skip lung masking: each half of the volume stands in for a lung.
    #[arg(long, global = true)]
    unsegmented: bool,
    /// Segment lungs by thresholding instead of reading mask files.
    #[arg(long, global = true, conflicts_with = "unsegmented")]
    threshold_lungs: bool,
}

fn parse_method(s: &str) -> std::result::Result<ProjectionMethod, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("expected mip or aip, got {s:?}"))
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| format!("bad dims {s:?}: {e}"))?;
    parts.try_into().map_err(|_| format!("expected Z,Y,X, got {s:?}"))
}

fn parse_set(s: &str) -> std::result::Result<ProjectionSet, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("expected coronal-only, coronal-axial or all-three, got {s:?}"))
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded phantom dataset with a manifest.
    Phantom {
        #[arg(long, default_value_t = 10)]
        normal: usize,
        #[arg(long, default_value_t = 10)]
        abnormal: usize,
        /// Volume size as Z,Y,X.
        #[arg(long, value_parser = parse_dims)]
        dims: Option<[usize; 3]>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the projected images, masks and mapping sidecars of each case.
    Project {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Memory bank operations.
    Bank {
        #[command(subcommand)]
        command: BankCommand,
    },
    /// Score cases against trained banks and write a scores CSV.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        banks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build 3D anomaly volumes and their top-percentile binarization.
    Localize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        banks: PathBuf,
        /// Only this case (default: every case in the manifest).
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics from a scores CSV, or Monte Carlo validation over a manifest.
    Eval {
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        scores: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Training normals per fold (default: all remaining).
        #[arg(long)]
        train: Option<usize>,
        #[arg(long, default_value_t = 20)]
        calibration: usize,
        /// Test cases per class per fold (default: as many as balance allows).
        #[arg(long)]
        test_per_class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare threshold segmentation with the manifest's lung masks.
    SegmentEval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BankCommand {
    /// Build one bank per projection type plus score calibration.
    Build {
        /// Normal training cases.
        #[arg(long)]
        manifest: PathBuf,
        /// Held-out normal cases for score calibration.
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let cfg = run_config(&cli.global)?;
    match cli.command {
        Command::Phantom {
            normal,
            abnormal,
            dims,
            out,
        } => cmd_phantom(&cfg, normal, abnormal, dims, &out),
        Command::Project { manifest, out } => cmd_project(&cfg, &manifest, &out),
        Command::Bank {
            command:
                BankCommand::Build {
                    manifest,
                    calibration,
                    out,
                },
        } => cmd_bank_build(&cfg, &manifest, &calibration, &out),
        Command::Score { manifest, banks, out } => cmd_score(&cfg, &manifest, &banks, &out),
        Command::Localize {
            manifest,
            banks,
            case,
            out,
        } => cmd_localize(&cfg, &manifest, &banks, case.as_deref(), &out),
        Command::Eval {
            scores,
            manifest,
            folds,
            train,
            calibration,
            test_per_class,
            out,
        } => match (scores, manifest) {
            (Some(s), _) => cmd_eval_scores(&s, &out),
            (None, Some(m)) => {
                let sizes = SplitSizes {
                    train,
                    calibration,
                    test_per_class,
                };
                cmd_eval_monte_carlo(&cfg, &m, folds, sizes, &out)
            }
            (None, None) => Err(Error::Config("eval needs --scores or --manifest".into())),
        },
        Command::SegmentEval { manifest, out } => cmd_segment_eval(&manifest, out.as_deref()),
    }
}

fn run_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(m) = g.method {
        cfg.method = m;
    }
    if let Some(s) = g.projection_set {
        cfg.projection_set = s;
    }
    if let Some(f) = g.coreset_frac {
        cfg.coreset_frac = f;
    }
    if g.unsegmented {
        cfg.lungs = LungSource::Unsegmented;
    }
    if g.threshold_lungs {
        cfg.lungs = LungSource::Threshold;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(p, bytes).map_err(|e| Error::io(p, e))
}

fn write_json(p: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write(p, &bytes)
}

fn cmd_phantom(cfg: &RunConfig, normal: usize, abnormal: usize, dims: Option<[usize; 3]>, out: &Path) -> Result<()> {
    let manifest = generate_dataset_with(normal, abnormal, cfg.seed, out, |seed, abnormal| {
        let mut c = dataset_case_config(seed, abnormal);
        if let Some(d) = dims {
            c.dims = d;
        }
        c
    })?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_project(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<()> {
    let m = Manifest::load(manifest)?;
    let extractor = cfg.extractor()?;
    create_dir(out)?;
    m.records.par_iter().try_for_each(|r| -> Result<()> {
        let case = prepare_record(&m, r, cfg, &extractor)?;
        for (img, mask) in &case.projections {
            let (h, w) = (img.pixels.h, img.pixels.w);
            let stem = format!("{}_{}", r.case_id, img.ptype);
            let image = Volume::from_f32([1, h, w], [1.0; 3], img.pixels.data.clone())?;
            save_volume(&image, out.join(format!("{stem}.mvol")))?;
            let m = Volume::from_mask([1, h, w], [1.0; 3], &mask.pixels.data)?;
            save_volume(&m, out.join(format!("{stem}_mask.mvol")))?;
        }
        write_json(&out.join(format!("{}_projection.json", r.case_id)), &case.sidecars())
    })
}

fn records(m: &Manifest) -> Vec<&CaseRecord> {
    m.records.iter().collect()
}

fn cmd_bank_build(cfg: &RunConfig, manifest: &Path, calibration: &Path, out: &Path) -> Result<()> {
    let train_m = Manifest::load(manifest)?;
    let cal_m = Manifest::load(calibration)?;
    let extractor = cfg.extractor()?;
    let train = extract_all(&train_m, &train_m.normals().collect::<Vec<_>>(), cfg, &extractor)?;
    let cal = extract_all(&cal_m, &cal_m.normals().collect::<Vec<_>>(), cfg, &extractor)?;
    let mut det = Detector::train(cfg.clone(), &train.iter().collect::<Vec<_>>())?;
    det.calibrate(&cal.iter().collect::<Vec<_>>())?;
    create_dir(out)?;
    for bank in det.banks() {
        save_bank(bank, &out.join(bank_file_name(bank.ptype)))?;
    }
    write_json(&out.join(CALIBRATION_FILE), &det.calibration())?;
    Ok(())
}

fn load_detector(cfg: &RunConfig, banks: &Path) -> Result<Detector> {
    let loaded = cfg
        .types()
        .iter()
        .map(|&p| load_bank(&banks.join(bank_file_name(p))))
        .collect::<Result<Vec<_>>>()?;
    let cal_path = banks.join(CALIBRATION_FILE);
    let text = fs::read_to_string(&cal_path).map_err(|e| Error::io(&cal_path, e))?;
    let cal: Calibration = serde_json::from_str(&text)?;
    Detector::new(cfg.clone(), loaded, Some(cal))
}

fn cmd_score(cfg: &RunConfig, manifest: &Path, banks: &Path, out: &Path) -> Result<()> {
    let det = load_detector(cfg, banks)?;
    let m = Manifest::load(manifest)?;
    let extractor = cfg.extractor()?;
    let cases: Vec<CaseFeatures> = extract_all(&m, &records(&m), cfg, &extractor)?;
    let rows = cases
        .par_iter()
        .map(|c| {
            let s = det.score_case(&c.features)?;
            Ok(ScoreRow {
                case_id: c.case_id.clone(),
                score: s.score,
                label: c.label,
                raw: s.raw,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write(out, &write_scores(&rows)?)
}

fn cmd_localize(cfg: &RunConfig, manifest: &Path, banks: &Path, case: Option<&str>, out: &Path) -> Result<()> {
    let det = load_detector(cfg, banks)?;
    let m = Manifest::load(manifest)?;
    let extractor = cfg.extractor()?;
    let chosen: Vec<&CaseRecord> = match case {
        Some(id) => vec![m
            .records
            .iter()
            .find(|r| r.case_id == id)
            .ok_or_else(|| Error::Manifest(format!("case {id:?} not in manifest")))?],
        None => records(&m),
    };
    create_dir(out)?;
    chosen.par_iter().try_for_each(|r| -> Result<()> {
        let prepared = prepare_record(&m, r, cfg, &extractor as &dyn FeatureExtractor)?;
        let gt = r
            .anomaly_gt_path
            .as_deref()
            .filter(|p| !p.is_empty())
            .map(|p| load_volume(m.resolve(p)))
            .transpose()?;
        let loc = det.localize(&prepared, gt.as_ref())?;
        save_volume(&loc.volume.to_volume()?, out.join(format!("{}_v.mvol", r.case_id)))?;
        save_volume(&loc.binary, out.join(format!("{}_v_top.mvol", r.case_id)))?;
        write_json(&out.join(format!("{}_localization.json", r.case_id)), &loc.report)
    })
}

fn cmd_eval_scores(scores: &Path, out: &Path) -> Result<()> {
    let rows = load_scores(scores)?;
    let labeled: Vec<(f64, bool)> = rows.iter().map(|(_, s, l)| (*s, l.is_abnormal())).collect();
    let (roc, fold) = evaluate_scores(&labeled)?;
    create_dir(out)?;
    write(&out.join("metrics.json"), &MetricsReport::single(fold).to_json()?)?;
    write(&out.join("roc.csv"), &write_roc(&roc))
}

fn cmd_eval_monte_carlo(cfg: &RunConfig, manifest: &Path, folds: usize, sizes: SplitSizes, out: &Path) -> Result<()> {
    let m = Manifest::load(manifest)?;
    let extractor = cfg.extractor()?;
    let cases = extract_all(&m, &records(&m), cfg, &extractor)?;
    let report = monte_carlo_eval(&cases, cfg, folds, sizes)?;
    create_dir(out)?;
    write(
        &out.join("metrics.json"),
        &MetricsReport::monte_carlo(report.folds, report.summary).to_json()?,
    )
}

#[derive(Serialize)]
struct SegmentCase {
    case_id: String,
    dice: f64,
    iou: f64,
}

#[derive(Serialize)]
struct SegmentReport {
    mean_dice: f64,
    mean_iou: f64,
    cases: Vec<SegmentCase>,
}

fn cmd_segment_eval(manifest: &Path, out: Option<&Path>) -> Result<()> {
    let m = Manifest::load(manifest)?;
    let cases = m
        .records
        .par_iter()
        .map(|r| {
            let ct = load_volume(m.resolve(&r.volume_path))?;
            let reference = binary(&load_volume(m.resolve(&r.mask_path))?)?;
            let predicted = binary(&threshold_segment_phantom(&ct)?)?;
            Ok(SegmentCase {
                case_id: r.case_id.clone(),
                dice: dice(&predicted, &reference)?,
                iou: iou(&predicted, &reference)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = cases.len().max(1) as f64;
    let report = SegmentReport {
        mean_dice: cases.iter().map(|c| c.dice).sum::<f64>() / n,
        mean_iou: cases.iter().map(|c| c.iou).sum::<f64>() / n,
        cases,
    };
    match out {
        Some(p) => write_json(p, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

/// Any-label foreground as a `{0, 1}` mask.
fn binary(v: &Volume) -> Result<Volume> {
    Volume::from_mask(v.dims(), v.spacing(), &v.foreground()?)
}

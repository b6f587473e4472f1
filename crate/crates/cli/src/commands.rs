use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;
use vistrack::eval::{eval_f1, eval_vis, EvalReport};
use vistrack::io::{write_json, write_jsonl, write_jsonl_to};
use vistrack::labeling::{assign_labels, score_filter};
use vistrack::pipeline::{track_dataset, FilterSettings, Tracker};
use vistrack::pmf::{build_bank, pmf_filter};
use vistrack::synth::generate;
use vistrack::validate::{validate_dataset, ValidationReport};
use vistrack::{ClassEmbeddingTable, DetectionRecord, GroundTruthRecord, Manifest, Tracklet};

use crate::settings::{read_records, InputPaths, Settings};
use crate::{Cli, Command, Stage};

pub fn run(cli: Cli) -> Result<ExitCode> {
    let (shared, name) = match &cli.command {
        Command::Validate { shared, .. } => (shared, "validate"),
        Command::Label { shared, .. } => (shared, "label"),
        Command::Filter { shared, .. } => (shared, "filter"),
        Command::Track { shared, .. } => (shared, "track"),
        Command::Baseline { shared, .. } => (shared, "baseline"),
        Command::Eval { shared, .. } => (shared, "eval"),
        Command::F1 { shared, .. } => (shared, "f1"),
        Command::Synth { shared, .. } => (shared, "synth"),
        Command::E2e { shared, .. } => (shared, "e2e"),
    };
    let settings = Settings::load(shared, name)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = settings.jobs(shared)? {
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().context("starting worker threads")?;
    pool.install(|| dispatch(cli.command, &settings))
}

fn dispatch(command: Command, s: &Settings) -> Result<ExitCode> {
    match command {
        Command::Validate { inputs, json, .. } => {
            let inputs = s.inputs(&inputs)?;
            let report = validate_inputs(&inputs, inputs.optional_ground_truth()?.as_deref())?;
            if json || s.switch(false, "json")? {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else if report.is_valid() {
                println!("ok");
            } else {
                print!("{report}");
            }
            Ok(exit_for(&report))
        }
        Command::Label { inputs, out, .. } => {
            let inputs = s.inputs(&inputs)?;
            let (dets, table, report) = load_validated(&inputs)?;
            if !report.is_valid() {
                return Ok(reject(&report));
            }
            let labeled = label(dets, &table)?;
            emit_jsonl(&s.path(&out, "out")?, &labeled)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Filter { inputs, stage, filter, bank_out, out, .. } => {
            let inputs = s.inputs(&inputs)?;
            let stage = s.stage(stage)?;
            let settings = s.filter(&filter)?;
            let dets = inputs.detections()?;
            let n_in = dets.len();
            let mut kept = dets;
            if matches!(stage, Stage::Score | Stage::All) {
                kept = score_filter(kept, settings.objectness_min, settings.class_score_min)?;
                info!("score filter: kept {} of {n_in}", kept.len());
            }
            if matches!(stage, Stage::Pmf | Stage::All) {
                let before = kept.len();
                let (after, bank) = prototype_filter(kept, &settings)?;
                kept = after;
                info!("prototype filter: kept {} of {before}", kept.len());
                if let Some(path) = s.path(&bank_out, "bank-out")? {
                    write_json(&path, &bank)?;
                }
            }
            emit_jsonl(&s.path(&out, "out")?, &canonical_detections(kept))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Track { inputs, track, baseline, out, .. } => {
            let tracker = if s.switch(baseline, "baseline")? {
                Tracker::Baseline(s.baseline(&track)?)
            } else {
                Tracker::Memory(s.tracker(&track)?)
            };
            track_command(s, &s.inputs(&inputs)?, tracker, &out)
        }
        Command::Baseline { inputs, track, out, .. } => {
            let tracker = Tracker::Baseline(s.baseline(&track)?);
            track_command(s, &s.inputs(&inputs)?, tracker, &out)
        }
        Command::Eval { inputs, tracklets, ignore_class, json, out, .. } => {
            let inputs = s.inputs(&inputs)?;
            let manifest = inputs.manifest()?;
            let path = s
                .path(&tracklets, "tracklets")?
                .context("missing --tracklets")?;
            let preds: Vec<Tracklet> = read_records(&path, "tracklets")?;
            let gt = inputs.ground_truth()?;
            let report = eval_vis(&preds, &gt, &manifest, s.switch(ignore_class, "ignore-class")?)?;
            show_report(s, &report, json, &out, EvalReport::to_table)
        }
        Command::F1 { inputs, f1_iou, ignore_class, json, out, .. } => {
            let inputs = s.inputs(&inputs)?;
            let manifest = inputs.manifest()?;
            let dets = inputs.detections()?;
            let gt = inputs.ground_truth()?;
            let iou = s.pick(f1_iou, "f1-iou", 0.5)?;
            let report = eval_f1(&dets, &gt, &manifest.class_names, iou, s.switch(ignore_class, "ignore-class")?)?;
            show_report(s, &report, json, &out, vistrack::eval::F1Report::to_table)
        }
        Command::Synth { preset, seed, out, .. } => {
            let cfg = s.synth_config(preset)?;
            let seed = s.pick(seed, "seed", 0)?;
            let dir = s.path(&out, "out")?.context("missing --out")?;
            let ds = generate(&cfg, seed)?;
            ds.write(&dir)?;
            info!(
                "synth: {} videos, {} detections, {} ground-truth masks -> {}",
                ds.manifest.videos.len(),
                ds.detections.len(),
                ds.ground_truth.len(),
                dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::E2e { inputs, filter, track, baseline, ignore_class, json, out_dir, .. } => {
            let inputs = s.inputs(&inputs)?;
            let gt = inputs.ground_truth()?;
            let (dets, table, report) = load_validated_with(&inputs, Some(&gt))?;
            if !report.is_valid() {
                return Ok(reject(&report));
            }
            let manifest = inputs.manifest()?;
            let settings = s.filter(&filter)?;
            let tracker = if s.switch(baseline, "baseline")? {
                Tracker::Baseline(s.baseline(&track)?)
            } else {
                Tracker::Memory(s.tracker(&track)?)
            };
            let out_dir = s.path(&out_dir, "out-dir")?;
            let keep = |name: &str, recs: &[DetectionRecord]| -> Result<()> {
                if let Some(dir) = &out_dir {
                    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                    write_jsonl(dir.join(name), recs)?;
                }
                Ok(())
            };

            let n_in = dets.len();
            let labeled = label(dets, &table)?;
            keep("labeled.jsonl", &labeled)?;
            let scored = canonical_detections(score_filter(labeled, settings.objectness_min, settings.class_score_min)?);
            info!("score filter: kept {} of {n_in}", scored.len());
            keep("scored.jsonl", &scored)?;
            let n_scored = scored.len();
            let (filtered, bank) = prototype_filter(scored, &settings)?;
            let filtered = canonical_detections(filtered);
            info!("prototype filter: kept {} of {n_scored}", filtered.len());
            keep("filtered.jsonl", &filtered)?;
            let tracklets = canonical_tracklets(track_dataset(&manifest, &filtered, &tracker)?);
            info!("tracking: {} tracklets", tracklets.len());
            let report = eval_vis(&tracklets, &gt, &manifest, s.switch(ignore_class, "ignore-class")?)?;
            if let Some(dir) = &out_dir {
                write_json(dir.join("bank.json"), &bank)?;
                write_jsonl(dir.join("tracklets.jsonl"), &tracklets)?;
                write_json(dir.join("report.json"), &report)?;
            }
            show_report(s, &report, json, &None, EvalReport::to_table)
        }
    }
}

fn validate_inputs(inputs: &InputPaths, gt: Option<&[GroundTruthRecord]>) -> Result<ValidationReport> {
    let manifest = inputs.manifest()?;
    let dets = inputs.detections()?;
    let table = inputs.classes()?;
    Ok(validate_dataset(&manifest, &dets, gt, &table)?)
}

fn load_validated(inputs: &InputPaths) -> Result<(Vec<DetectionRecord>, ClassEmbeddingTable, ValidationReport)> {
    load_validated_with(inputs, None)
}

fn load_validated_with(
    inputs: &InputPaths,
    gt: Option<&[GroundTruthRecord]>,
) -> Result<(Vec<DetectionRecord>, ClassEmbeddingTable, ValidationReport)> {
    let manifest: Manifest = inputs.manifest()?;
    let dets = inputs.detections()?;
    let table = inputs.classes()?;
    let report = validate_dataset(&manifest, &dets, gt, &table)?;
    Ok((dets, table, report))
}

fn label(dets: Vec<DetectionRecord>, table: &ClassEmbeddingTable) -> Result<Vec<DetectionRecord>> {
    let labeled = canonical_detections(assign_labels(dets, table)?);
    info!("label: {} detections against {} classes", labeled.len(), table.len());
    Ok(labeled)
}

fn prototype_filter(
    dets: Vec<DetectionRecord>,
    settings: &FilterSettings,
) -> Result<(Vec<DetectionRecord>, vistrack::pmf::PrototypeBank)> {
    let bank = build_bank(&dets, &settings.k_rule, settings.seed)?;
    let tau = settings.tau.unwrap_or(0.7);
    Ok((pmf_filter(dets, &bank, tau)?, bank))
}

fn track_command(s: &Settings, inputs: &InputPaths, tracker: Tracker, out: &Option<PathBuf>) -> Result<ExitCode> {
    let manifest = inputs.manifest()?;
    let dets = inputs.detections()?;
    let tracklets = canonical_tracklets(track_dataset(&manifest, &dets, &tracker)?);
    info!("tracking: {} tracklets from {} detections", tracklets.len(), dets.len());
    emit_jsonl(&s.path(out, "out")?, &tracklets)?;
    Ok(ExitCode::SUCCESS)
}

/// Stable sort by (video, frame): input order survives within a frame.
fn canonical_detections(mut dets: Vec<DetectionRecord>) -> Vec<DetectionRecord> {
    dets.sort_by(|a, b| (a.video_id.as_str(), a.frame_idx).cmp(&(b.video_id.as_str(), b.frame_idx)));
    dets
}

/// Grouped by video id; confidence rank survives within a video.
fn canonical_tracklets(mut tracklets: Vec<Tracklet>) -> Vec<Tracklet> {
    tracklets.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    tracklets
}

fn emit_jsonl<T: Serialize>(out: &Option<PathBuf>, records: &[T]) -> Result<()> {
    match out {
        Some(path) => write_jsonl(path, records)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_jsonl_to(&mut lock, records).context("writing to stdout")?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn show_report<R: Serialize>(
    s: &Settings,
    report: &R,
    json: bool,
    out: &Option<PathBuf>,
    table: fn(&R) -> String,
) -> Result<ExitCode> {
    if let Some(path) = s.path(out, "out")? {
        write_json(&path, report)?;
    }
    if json || s.switch(false, "json")? {
        println!("{}", serde_json::to_string_pretty(report)?);
    } else {
        print!("{}", table(report));
    }
    Ok(ExitCode::SUCCESS)
}

fn reject(report: &ValidationReport) -> ExitCode {
    eprint!("{report}");
    eprintln!("error: input failed validation ({} violations)", report.violations.len());
    ExitCode::from(1)
}

fn exit_for(report: &ValidationReport) -> ExitCode {
    if report.is_valid() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use atlasseg::evaluation::report::CompareInput;
use atlasseg::evaluation::{
    compare_report, evaluate_subject, grid_search, EvaluationRecord, GridSearchConfig, PerRegion,
};
use atlasseg::fusion::{segment, AtlasBank, SegmentOptions};
use atlasseg::imaging::io::{
    list_subject_dirs, read_bank, read_bundle, read_mask_file, read_subjects, write_bundle,
    write_json, BankIndex, BANK_FILE, BANK_VERSION,
};
use atlasseg::imaging::{preprocess_bundle, LabelMask, SubjectBundle};
use atlasseg::phantom::generate_bank;
use atlasseg::{Error, FormatError, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::settings::Settings;
use crate::{
    Cli, Command, CompareArgs, EvaluateArgs, GridsearchArgs, PhantomArgs, PreprocessArgs,
    SegmentArgs,
};

pub const RUN_FILE: &str = "run.json";
pub const EVALUATION_CSV: &str = "report.csv";
pub const EVALUATION_JSON: &str = "report.json";

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    inputs: serde_json::Value,
    config: &'a Settings,
}

fn write_run(
    out: &Path,
    command: &'static str,
    inputs: serde_json::Value,
    config: &Settings,
) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| FormatError::io(out, e))?;
    let record = RunRecord {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        inputs,
        config,
    };
    write_json(&out.join(RUN_FILE), &record)
}

pub fn run(cli: &Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Phantom(a) => phantom(a, settings),
        Command::Preprocess(a) => preprocess(a, settings),
        Command::Segment(a) => segment_cmd(a, settings),
        Command::Evaluate(a) => evaluate(a, settings),
        Command::Gridsearch(a) => gridsearch(a, settings),
        Command::Compare(a) => compare(a, settings),
    }
}

fn phantom(a: &PhantomArgs, mut s: Settings) -> Result<()> {
    let p = &mut s.phantom;
    if let Some(v) = a.seed {
        p.seed = v;
    }
    if let Some(v) = a.bank_size {
        p.bank_size = v;
    }
    if let Some(v) = a.test_size {
        p.test_size = v;
    }
    if let Some(v) = a.resolution {
        p.resolution = v;
    }
    if let Some(v) = a.deform_mag {
        p.deform_mag = v;
    }
    if a.emit_gates {
        p.emit_gates = true;
    }
    p.validate()?;
    write_run(&a.out, "phantom", serde_json::json!({}), &s)?;
    let set = generate_bank(&s.phantom)?;
    set.write(&a.out)?;
    log::info!(
        "wrote {} bank and {} test subjects to {}",
        set.bank.len(),
        set.test.len(),
        a.out.display()
    );
    Ok(())
}

fn preprocess(a: &PreprocessArgs, mut s: Settings) -> Result<()> {
    if let Some(b) = a.bins {
        s.bins = b;
    }
    if s.bins < 2 {
        return Err(Error::Config(format!(
            "--bins must be at least 2, got {}",
            s.bins
        )));
    }
    write_run(
        &a.out,
        "preprocess",
        serde_json::json!({ "input": a.input, "keep_going": a.keep_going }),
        &s,
    )?;
    let dirs = list_subject_dirs(&a.input)?;
    let mut written: Vec<(String, [usize; 2])> = Vec::new();
    let mut first_error = None;
    for dir in &dirs {
        let outcome = read_bundle(dir)
            .and_then(|b| preprocess_bundle(&b, s.bins))
            .and_then(|b| {
                write_bundle(&b, a.out.join(b.id()))?;
                Ok(b)
            });
        match outcome {
            Ok(b) => written.push((b.id().to_string(), [b.grid().width(), b.grid().height()])),
            Err(e) => {
                log::error!("{}: {e}", dir.display());
                if !a.keep_going {
                    return Err(e);
                }
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some((_, resolution)) = written.first() {
        let index = BankIndex {
            version: BANK_VERSION,
            resolution: *resolution,
            subjects: written.iter().map(|(id, _)| id.clone()).collect(),
        };
        write_json(&a.out.join(BANK_FILE), &index)?;
    }
    log::info!("preprocessed {} of {} subjects", written.len(), dirs.len());
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn normalized(bundle: SubjectBundle, bins: usize) -> Result<SubjectBundle> {
    if bundle.is_normalized() {
        return Ok(bundle);
    }
    log::info!("{}: equalizing magnitude in memory", bundle.id());
    preprocess_bundle(&bundle, bins)
}

fn load_bank(dir: &Path, bins: usize) -> Result<AtlasBank> {
    let bank = read_bank(dir)?;
    let subjects = bank
        .subjects()
        .iter()
        .map(|b| normalized(b.clone(), bins))
        .collect::<Result<Vec<_>>>()?;
    AtlasBank::new(subjects)
}

fn segment_cmd(a: &SegmentArgs, mut s: Settings) -> Result<()> {
    s.apply_registration(&a.registration);
    if let Some(v) = a.n {
        s.n = v;
    }
    if let Some(v) = a.threshold {
        s.threshold = v;
    }
    if a.include_self {
        s.exclude_self = false;
    }
    let bank = load_bank(&a.bank, s.bins)?;
    let subjects = read_subjects(&a.subjects)?
        .into_iter()
        .map(|b| normalized(b, s.bins))
        .collect::<Result<Vec<_>>>()?;
    let config = s.fusion_for(bank.grid().width());
    s.registration = config.registration.clone();
    s.explicit_levels = true;
    let options = SegmentOptions {
        exclude_self: s.exclude_self,
    };
    for subject in &subjects {
        let available = bank
            .ids()
            .iter()
            .filter(|id| !(options.exclude_self && **id == subject.id()))
            .count();
        config.validate(available)?;
    }
    write_run(
        &a.out,
        "segment",
        serde_json::json!({
            "bank": a.bank,
            "subjects": a.subjects,
            "save_registrations": a.save_registrations,
        }),
        &s,
    )?;

    let results: Vec<Result<()>> = subjects
        .par_iter()
        .map(|subject| {
            let seg = segment(subject, &bank, &config, options)?;
            let dir = a.out.join(subject.id());
            seg.write(&config, &dir)?;
            if a.save_registrations {
                for t in &seg.templates {
                    if let Ok((r, _)) = &t.result {
                        r.write(&config.registration, dir.join("registrations").join(&t.id))?;
                    }
                }
            }
            log::info!(
                "{}: fused {} templates",
                subject.id(),
                seg.templates.iter().filter(|t| t.usable()).count()
            );
            Ok(())
        })
        .collect();
    let mut first_error = None;
    for (subject, r) in subjects.iter().zip(results) {
        if let Err(e) = r {
            log::error!("{}: {e}", subject.id());
            first_error.get_or_insert(e);
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// `<dir>/<id>/hard_mask.u8`, falling back to `<dir>/<id>/mask.u8`.
fn prediction_path(dir: &Path, id: &str) -> Result<PathBuf> {
    ["hard_mask.u8", "mask.u8"]
        .iter()
        .map(|f| dir.join(id).join(f))
        .find(|p| p.exists())
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "no prediction for {id} under {} (expected hard_mask.u8 or mask.u8)",
                dir.display()
            ))
        })
}

fn read_prediction(dir: &Path, subject: &SubjectBundle) -> Result<LabelMask> {
    read_mask_file(prediction_path(dir, subject.id())?, *subject.grid())
}

fn read_truth_subjects(dir: &Path) -> Result<Vec<SubjectBundle>> {
    let subjects = read_subjects(dir)?;
    if subjects.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no subject bundles under {}",
            dir.display()
        )));
    }
    for s in &subjects {
        s.require_mask()?;
    }
    Ok(subjects)
}

/// `report.json` of `evaluate`.
#[derive(Debug, Serialize)]
struct EvaluationReport {
    unit: String,
    csf_cutoff: Option<f64>,
    mean_dice: PerRegion<f64>,
    mean_dice_full: f64,
    mean_biomarker_error: Option<f64>,
    missing_biomarkers: usize,
    records: Vec<EvaluationRecord>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn evaluation_csv(records: &[EvaluationRecord]) -> String {
    let mut out = String::from(
        "subject,dice_cerebellum,dice_brain_stem,dice_full,\
         true_cerebellum,pred_cerebellum,error_cerebellum,\
         true_brain_stem,pred_brain_stem,error_brain_stem\n",
    );
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{}",
            r.subject, r.dice.cerebellum, r.dice.brain_stem, r.dice_full
        );
        for region in PerRegion::<()>::REGIONS {
            let t = r.biomarker_true.map(|b| *b.get(region));
            let p = r.biomarker_pred.and_then(|b| *b.get(region));
            let e = r.relative_error.and_then(|b| *b.get(region));
            let _ = write!(out, ",{},{},{}", opt(t), opt(p), opt(e));
        }
        out.push('\n');
    }
    out
}

fn evaluate(a: &EvaluateArgs, mut s: Settings) -> Result<()> {
    if a.csf_cutoff.is_some() {
        s.csf_cutoff = a.csf_cutoff;
    }
    write_run(
        &a.out,
        "evaluate",
        serde_json::json!({ "subjects": a.subjects, "predictions": a.predictions }),
        &s,
    )?;
    let subjects = read_truth_subjects(&a.subjects)?;
    let records = subjects
        .par_iter()
        .map(|subject| {
            let predicted = read_prediction(&a.predictions, subject)?;
            evaluate_subject(
                subject.id(),
                subject.require_mask()?,
                &predicted,
                subject.peak_dense(),
                s.csf_cutoff,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvaluationReport {
        unit: subjects[0].unit().to_string(),
        csf_cutoff: s.csf_cutoff,
        mean_dice: PerRegion::from_fn(|r| {
            mean(records.iter().map(|e| *e.dice.get(r))).expect("non-empty")
        }),
        mean_dice_full: mean(records.iter().map(|e| e.dice_full)).expect("non-empty"),
        mean_biomarker_error: mean(records.iter().flat_map(|e| e.errors())),
        missing_biomarkers: records
            .iter()
            .filter_map(|e| e.relative_error.as_ref())
            .map(|e| e.cerebellum.is_none() as usize + e.brain_stem.is_none() as usize)
            .sum(),
        records,
    };
    write_json(&a.out.join(EVALUATION_JSON), &report)?;
    let path = a.out.join(EVALUATION_CSV);
    std::fs::write(&path, evaluation_csv(&report.records))
        .map_err(|e| FormatError::io(&path, e))?;
    log::info!(
        "mean Dice {:.4} over {} subjects",
        report.mean_dice_full,
        report.records.len()
    );
    Ok(())
}

fn gridsearch(a: &GridsearchArgs, mut s: Settings) -> Result<()> {
    s.apply_registration(&a.registration);
    if let Some(v) = &a.n_values {
        s.n_values = v.clone();
    }
    if let Some(v) = &a.thresholds {
        s.thresholds = v.clone();
    }
    if a.csf_cutoff.is_some() {
        s.csf_cutoff = a.csf_cutoff;
    }
    let bank = load_bank(&a.bank, s.bins)?;
    let mut subjects = match &a.subjects {
        Some(dir) => read_truth_subjects(dir)?
            .into_iter()
            .map(|b| normalized(b, s.bins))
            .collect::<Result<Vec<_>>>()?,
        None => bank.subjects().to_vec(),
    };
    if let Some(k) = a.max_subjects {
        subjects.truncate(k);
    }
    s.registration = s.registration_for(bank.grid().width());
    s.explicit_levels = true;
    let config = GridSearchConfig {
        n_values: s.n_values.clone(),
        thresholds: s.thresholds.clone(),
        registration: s.registration.clone(),
        csf_cutoff: s.csf_cutoff,
        exclude_self: s.exclude_self,
    };
    config.validate()?;
    write_run(
        &a.out,
        "gridsearch",
        serde_json::json!({
            "bank": a.bank,
            "subjects": a.subjects,
            "max_subjects": a.max_subjects,
        }),
        &s,
    )?;
    let result = grid_search(&bank, &subjects, &config)?;
    result.write(&a.out)?;
    log::info!(
        "selected n = {}, threshold = {} (mean Dice {:.4})",
        result.selected_n,
        result.selected_threshold,
        result.selected_mean_dice
    );
    Ok(())
}

fn compare(a: &CompareArgs, mut s: Settings) -> Result<()> {
    if a.csf_cutoff.is_some() {
        s.csf_cutoff = a.csf_cutoff;
    }
    write_run(
        &a.out,
        "compare",
        serde_json::json!({ "truth": a.truth, "ab": a.ab, "nn": a.nn }),
        &s,
    )?;
    let subjects = read_truth_subjects(&a.truth)?;
    let inputs = subjects
        .iter()
        .map(|subject| {
            Ok(CompareInput {
                subject: subject.id().to_string(),
                truth: subject.require_mask()?.clone(),
                peak: subject.peak_dense().cloned(),
                ab: Some(read_prediction(&a.ab, subject)?),
                nn: a
                    .nn
                    .as_deref()
                    .map(|dir| read_prediction(dir, subject))
                    .transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if a.nn.is_none() {
        log::info!("no network predictions given; the NN column is left absent");
    }
    let report = compare_report(&inputs, subjects[0].unit(), s.csf_cutoff)?;
    report.write(&a.out)?;
    Ok(())
}

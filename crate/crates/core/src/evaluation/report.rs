//! Side-by-side comparison of two segmentation methods against the truth.
//!
//! The atlas-based arm is `ab`, the network arm `nn`. Either may be missing
//! for any subject; such rows are reported as absent.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result};
use crate::evaluation::{evaluate_subject, mean, EvaluationRecord, PerRegion};
use crate::imaging::image::ScalarImage;
use crate::imaging::io::{read_json, write_json};
use crate::imaging::mask::{LabelMask, Region};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const BAR_CSV: &str = "plot_bar.csv";
pub const SCATTER_CSV: &str = "plot_scatter.csv";
pub const BOX_CSV: &str = "plot_box.csv";

/// One subject's masks and peak image.
#[derive(Debug, Clone)]
pub struct CompareInput {
    pub subject: String,
    pub truth: LabelMask,
    pub peak: Option<ScalarImage<f32>>,
    pub ab: Option<LabelMask>,
    pub nn: Option<LabelMask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Best {
    Ab,
    Nn,
    Tie,
    /// Fewer than two arms have a value.
    None,
}

fn best_of(ab: Option<f64>, nn: Option<f64>, higher_is_better: bool) -> Best {
    match (ab, nn) {
        (Some(a), Some(n)) if a == n => Best::Tie,
        (Some(a), Some(n)) => {
            if (a > n) == higher_is_better {
                Best::Ab
            } else {
                Best::Nn
            }
        }
        _ => Best::None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestFlags {
    pub dice: PerRegion<Best>,
    pub dice_full: Best,
    /// Judged by relative error; equal errors are a tie.
    pub biomarker: PerRegion<Best>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub subject: String,
    pub biomarker_true: Option<PerRegion<f64>>,
    pub ab: Option<EvaluationRecord>,
    pub nn: Option<EvaluationRecord>,
    pub best: BestFlags,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmSummary {
    pub subjects: usize,
    pub mean_dice: PerRegion<Option<f64>>,
    pub mean_dice_full: Option<f64>,
    pub mean_relative_error: PerRegion<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub unit: String,
    pub csf_cutoff: Option<f64>,
    pub rows: Vec<CompareRow>,
    pub ab: ArmSummary,
    pub nn: ArmSummary,
}

fn rel_err(r: &Option<EvaluationRecord>, region: Region) -> Option<f64> {
    r.as_ref()
        .and_then(|r| r.relative_error.as_ref())
        .and_then(|e| *e.get(region))
}

fn summarize<'a>(records: impl Iterator<Item = &'a EvaluationRecord> + Clone) -> ArmSummary {
    ArmSummary {
        subjects: records.clone().count(),
        mean_dice: PerRegion::from_fn(|r| mean(records.clone().map(|e| *e.dice.get(r)))),
        mean_dice_full: mean(records.clone().map(|e| e.dice_full)),
        mean_relative_error: PerRegion::from_fn(|r| {
            mean(
                records
                    .clone()
                    .filter_map(|e| e.relative_error.as_ref().and_then(|x| *x.get(r))),
            )
        }),
    }
}

/// Scores both arms for every subject and flags the better one per metric.
pub fn compare_report(
    inputs: &[CompareInput],
    unit: &str,
    csf_cutoff: Option<f64>,
) -> Result<CompareReport> {
    let mut rows = Vec::with_capacity(inputs.len());
    for input in inputs {
        let peak = input.peak.as_ref();
        let score = |m: &Option<LabelMask>| {
            m.as_ref()
                .map(|m| evaluate_subject(&input.subject, &input.truth, m, peak, csf_cutoff))
                .transpose()
        };
        let ab = score(&input.ab)?;
        let nn = score(&input.nn)?;
        let biomarker_true = ab
            .as_ref()
            .or(nn.as_ref())
            .and_then(|r| r.biomarker_true)
            .or(match peak {
                Some(p) => Some(PerRegion::try_from_fn(|r| {
                    crate::evaluation::biomarker(p, &input.truth, r, csf_cutoff)
                })?),
                None => None,
            });
        let dice_of =
            |r: &Option<EvaluationRecord>, region: Region| r.as_ref().map(|e| *e.dice.get(region));
        let best = BestFlags {
            dice: PerRegion::from_fn(|r| best_of(dice_of(&ab, r), dice_of(&nn, r), true)),
            dice_full: best_of(
                ab.as_ref().map(|e| e.dice_full),
                nn.as_ref().map(|e| e.dice_full),
                true,
            ),
            biomarker: PerRegion::from_fn(|r| best_of(rel_err(&ab, r), rel_err(&nn, r), false)),
        };
        rows.push(CompareRow {
            subject: input.subject.clone(),
            biomarker_true,
            ab,
            nn,
            best,
        });
    }
    Ok(CompareReport {
        unit: unit.to_string(),
        csf_cutoff,
        ab: summarize(rows.iter().filter_map(|r| r.ab.as_ref())),
        nn: summarize(rows.iter().filter_map(|r| r.nn.as_ref())),
        rows,
    })
}

pub fn read_compare_report(path: impl AsRef<Path>) -> Result<CompareReport> {
    read_json(path.as_ref())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Linear-interpolation quartiles (min, q1, median, q3, max) of sorted data.
pub fn five_numbers(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let x = p * (v.len() - 1) as f64;
        let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (x - lo as f64)
    };
    Some([v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]])
}

impl CompareReport {
    fn arms(row: &CompareRow) -> [(&'static str, &Option<EvaluationRecord>); 2] {
        [("ab", &row.ab), ("nn", &row.nn)]
    }

    /// Table layout: Dice per structure for both arms, then true and
    /// predicted biomarkers per structure. Missing values are empty fields.
    pub fn table_csv(&self) -> String {
        let mut out = String::from(
            "subject,ab_dice_brain_stem,nn_dice_brain_stem,ab_dice_cerebellum,nn_dice_cerebellum,\
             true_biomarker_brain_stem,ab_biomarker_brain_stem,nn_biomarker_brain_stem,\
             true_biomarker_cerebellum,ab_biomarker_cerebellum,nn_biomarker_cerebellum\n",
        );
        for row in &self.rows {
            let dice =
                |r: &Option<EvaluationRecord>, g: Region| opt(r.as_ref().map(|e| *e.dice.get(g)));
            let bio = |r: &Option<EvaluationRecord>, g: Region| {
                opt(r
                    .as_ref()
                    .and_then(|e| e.biomarker_pred.as_ref())
                    .and_then(|b| *b.get(g)))
            };
            let truth = |g: Region| opt(row.biomarker_true.as_ref().map(|b| *b.get(g)));
            let (bs, cb) = (Region::BrainStem, Region::Cerebellum);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                csv_text(&row.subject),
                dice(&row.ab, bs),
                dice(&row.nn, bs),
                dice(&row.ab, cb),
                dice(&row.nn, cb),
                truth(bs),
                bio(&row.ab, bs),
                bio(&row.nn, bs),
                truth(cb),
                bio(&row.ab, cb),
                bio(&row.nn, cb),
            );
        }
        out
    }

    /// One line per subject, arm and structure: Dice and relative error.
    /// Feeds both the bar chart and the Dice-vs-error scatter plot.
    pub fn bar_csv(&self) -> String {
        let mut out = String::from("subject,arm,region,dice,relative_error\n");
        for row in &self.rows {
            for (arm, rec) in Self::arms(row) {
                let Some(rec) = rec else { continue };
                for region in PerRegion::<f64>::REGIONS {
                    let _ = writeln!(
                        out,
                        "{},{arm},{},{},{}",
                        csv_text(&row.subject),
                        region.name(),
                        rec.dice.get(region),
                        opt(rel_err(&Some(rec.clone()), region)),
                    );
                }
            }
        }
        out
    }

    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("subject,arm,region,dice,abs_relative_error\n");
        for row in &self.rows {
            for (arm, rec) in Self::arms(row) {
                let Some(rec) = rec else { continue };
                for region in PerRegion::<f64>::REGIONS {
                    if let Some(e) = rel_err(&Some(rec.clone()), region) {
                        let _ = writeln!(
                            out,
                            "{},{arm},{},{},{}",
                            csv_text(&row.subject),
                            region.name(),
                            rec.dice.get(region),
                            e.abs()
                        );
                    }
                }
            }
        }
        out
    }

    pub fn box_csv(&self) -> String {
        let mut out = String::from("arm,metric,region,count,min,q1,median,q3,max\n");
        for arm in ["ab", "nn"] {
            let recs: Vec<&EvaluationRecord> = self
                .rows
                .iter()
                .filter_map(|r| {
                    if arm == "ab" {
                        r.ab.as_ref()
                    } else {
                        r.nn.as_ref()
                    }
                })
                .collect();
            for region in PerRegion::<f64>::REGIONS {
                let dice: Vec<f64> = recs.iter().map(|r| *r.dice.get(region)).collect();
                let errs: Vec<f64> = recs
                    .iter()
                    .filter_map(|r| r.relative_error.as_ref().and_then(|e| *e.get(region)))
                    .collect();
                for (metric, values) in [("dice", dice), ("relative_error", errs)] {
                    if let Some(f) = five_numbers(&values) {
                        let _ = writeln!(
                            out,
                            "{arm},{metric},{},{},{},{},{},{},{}",
                            region.name(),
                            values.len(),
                            f[0],
                            f[1],
                            f[2],
                            f[3],
                            f[4]
                        );
                    }
                }
            }
        }
        out
    }

    /// Writes `report.json`, `report.csv` and the plot CSV series into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
        write_json(&dir.join(REPORT_JSON), self)?;
        for (name, text) in [
            (REPORT_CSV, self.table_csv()),
            (BAR_CSV, self.bar_csv()),
            (SCATTER_CSV, self.scatter_csv()),
            (BOX_CSV, self.box_csv()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| FormatError::io(&path, e))?;
        }
        Ok(())
    }
}

//! On-disk subject bundles and atlas banks.
//!
//! A bundle is a directory holding `meta.json` plus raw little-endian arrays
//! (`magnitude.f32`, `mean_dense.f32`, `peak_dense.f32`, `mask.u8`, and
//! optionally `gates.f32`). Arrays are row-major with one row per constant v.
//! `meta.json` carries a CRC-32 per array.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result};
use crate::fusion::AtlasBank;
use crate::imaging::bundle::SubjectBundle;
use crate::imaging::grid::ImageGrid;
use crate::imaging::image::ScalarImage;
use crate::imaging::mask::LabelMask;
use crate::imaging::preprocess::GateStack;

pub const BUNDLE_VERSION: u32 = 1;
pub const BANK_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const BANK_FILE: &str = "bank.json";

const MAGNITUDE: &str = "magnitude";
const MEAN_DENSE: &str = "mean_dense";
const PEAK_DENSE: &str = "peak_dense";
const MASK: &str = "mask";
const GATES: &str = "gates";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub version: u32,
    pub channels: Vec<String>,
    pub cardiac_gate_count: u32,
    #[serde(default)]
    pub normalized: bool,
    #[serde(default = "default_unit")]
    pub unit: String,
    pub crc32: BTreeMap<String, u32>,
}

fn default_unit() -> String {
    crate::imaging::bundle::DEFAULT_UNIT.to_string()
}

fn channel_file(channel: &str) -> String {
    match channel {
        MASK => format!("{channel}.u8"),
        _ => format!("{channel}.f32"),
    }
}

pub(crate) fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<u32> {
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))?;
    Ok(crc32fast::hash(bytes))
}

pub(crate) fn read_exact_file(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        }
        .into());
    }
    if bytes.len() > expected {
        return Err(FormatError::InvalidContent {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() - expected),
        }
        .into());
    }
    Ok(bytes)
}

fn check_crc(path: &Path, bytes: &[u8], expected: Option<u32>) -> Result<()> {
    let found = crc32fast::hash(bytes);
    match expected {
        Some(expected) if expected != found => Err(FormatError::Checksum {
            path: path.to_path_buf(),
            expected,
            found,
        }
        .into()),
        Some(_) => Ok(()),
        None => Err(FormatError::MalformedHeader {
            path: path.to_path_buf(),
            reason: "missing crc32 entry".into(),
        }
        .into()),
    }
}

pub(crate) fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn image_from(path: &Path, grid: ImageGrid, values: Vec<f32>) -> Result<ScalarImage<f32>> {
    ScalarImage::new(grid, values).map_err(|e| {
        FormatError::InvalidContent {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
        .into()
    })
}

/// Parses `meta.json` and checks the version before anything else is touched.
pub fn read_meta(dir: &Path) -> Result<BundleMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| FormatError::io(&path, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| FormatError::MalformedHeader {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == BUNDLE_VERSION as u64 => {}
        Some(v) => {
            return Err(FormatError::UnsupportedVersion {
                path,
                found: v,
                supported: BUNDLE_VERSION,
            }
            .into())
        }
        None => {
            return Err(FormatError::MalformedHeader {
                path,
                reason: "missing or non-integer version".into(),
            }
            .into())
        }
    }
    let meta: BundleMeta =
        serde_json::from_value(raw).map_err(|e| FormatError::MalformedHeader {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    if meta.width == 0 || meta.height == 0 {
        return Err(FormatError::MalformedHeader {
            path,
            reason: format!("invalid dimensions {}x{}", meta.width, meta.height),
        }
        .into());
    }
    if !meta.channels.iter().any(|c| c == MAGNITUDE) {
        return Err(FormatError::MalformedHeader {
            path,
            reason: "magnitude channel is required".into(),
        }
        .into());
    }
    Ok(meta)
}

/// Reads a bundle directory. All arrays are validated before the bundle is returned.
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<SubjectBundle> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let grid = ImageGrid::new(meta.width, meta.height)?;
    let n = grid.len();
    let has = |c: &str| meta.channels.iter().any(|x| x == c);

    let read_f32 = |channel: &str, count: usize| -> Result<Vec<f32>> {
        let path = dir.join(channel_file(channel));
        let bytes = read_exact_file(&path, count * 4)?;
        check_crc(&path, &bytes, meta.crc32.get(channel).copied())?;
        Ok(decode_f32(&bytes))
    };

    let mag_path = dir.join(channel_file(MAGNITUDE));
    let magnitude = image_from(&mag_path, grid, read_f32(MAGNITUDE, n)?)?;
    let mut bundle = SubjectBundle::new(meta.id.clone(), magnitude)?
        .with_normalized(meta.normalized)
        .with_unit(meta.unit.clone());

    match (has(MEAN_DENSE), has(PEAK_DENSE)) {
        (true, true) => {
            let mean = image_from(
                &dir.join(channel_file(MEAN_DENSE)),
                grid,
                read_f32(MEAN_DENSE, n)?,
            )?;
            let peak = image_from(
                &dir.join(channel_file(PEAK_DENSE)),
                grid,
                read_f32(PEAK_DENSE, n)?,
            )?;
            bundle = bundle.with_dense(mean, peak)?;
        }
        (false, false) => {}
        _ => {
            return Err(FormatError::MalformedHeader {
                path: dir.join(META_FILE),
                reason: "mean_dense and peak_dense must be present together".into(),
            }
            .into())
        }
    }
    if has(MASK) {
        let path = dir.join(channel_file(MASK));
        let bytes = read_exact_file(&path, n)?;
        check_crc(&path, &bytes, meta.crc32.get(MASK).copied())?;
        let mask = LabelMask::new(grid, bytes).map_err(|e| FormatError::InvalidContent {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        bundle = bundle.with_mask(mask)?;
    }
    if has(GATES) {
        let count = meta.cardiac_gate_count as usize;
        if count == 0 {
            return Err(FormatError::MalformedHeader {
                path: dir.join(META_FILE),
                reason: "gates channel with cardiac_gate_count = 0".into(),
            }
            .into());
        }
        let path = dir.join(channel_file(GATES));
        let values = read_f32(GATES, count * n)?;
        let gates = values
            .chunks_exact(n)
            .map(|c| image_from(&path, grid, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        bundle = bundle.with_gates(GateStack::new(gates)?)?;
    }
    Ok(bundle.with_gate_count(meta.cardiac_gate_count))
}

/// Writes a bundle directory (created if missing). `meta.json` is written last.
pub fn write_bundle(bundle: &SubjectBundle, dir: impl AsRef<Path>) -> Result<BundleMeta> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    let mut channels = Vec::new();
    let mut crc32 = BTreeMap::new();
    let mut put = |channel: &str, bytes: Vec<u8>| -> Result<()> {
        let crc = write_file(&dir.join(channel_file(channel)), &bytes)?;
        channels.push(channel.to_string());
        crc32.insert(channel.to_string(), crc);
        Ok(())
    };
    put(MAGNITUDE, f32_bytes(bundle.magnitude().values()))?;
    if let (Some(mean), Some(peak)) = (bundle.mean_dense(), bundle.peak_dense()) {
        put(MEAN_DENSE, f32_bytes(mean.values()))?;
        put(PEAK_DENSE, f32_bytes(peak.values()))?;
    }
    if let Some(mask) = bundle.mask() {
        put(MASK, mask.labels().to_vec())?;
    }
    if let Some(gates) = bundle.gates() {
        let bytes = gates
            .gates()
            .iter()
            .flat_map(|g| f32_bytes(g.values()))
            .collect();
        put(GATES, bytes)?;
    }
    // stale arrays from a previous write would otherwise linger next to the new meta
    for channel in [MEAN_DENSE, PEAK_DENSE, MASK, GATES] {
        if !channels.iter().any(|c| c == channel) {
            let stale = dir.join(channel_file(channel));
            if stale.exists() {
                fs::remove_file(&stale).map_err(|e| FormatError::io(&stale, e))?;
            }
        }
    }
    let meta = BundleMeta {
        id: bundle.id().to_string(),
        width: bundle.grid().width(),
        height: bundle.grid().height(),
        version: BUNDLE_VERSION,
        channels,
        cardiac_gate_count: bundle.cardiac_gate_count(),
        normalized: bundle.is_normalized(),
        unit: bundle.unit().to_string(),
        crc32,
    };
    write_json(&dir.join(META_FILE), &meta)?;
    Ok(meta)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| FormatError::InvalidContent {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| FormatError::io(path, e))?;
    Ok(())
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        FormatError::MalformedHeader {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
        .into()
    })
}

/// Reads a bare `mask.u8` (or any one-byte-per-pixel label file) for a known grid.
pub fn read_mask_file(path: impl AsRef<Path>, grid: ImageGrid) -> Result<LabelMask> {
    let path = path.as_ref();
    let bytes = read_exact_file(path, grid.len())?;
    LabelMask::new(grid, bytes).map_err(|e| {
        FormatError::InvalidContent {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
        .into()
    })
}

pub fn write_mask_file(mask: &LabelMask, path: impl AsRef<Path>) -> Result<u32> {
    write_file(path.as_ref(), mask.labels())
}

pub fn write_f32_file(values: &[f32], path: impl AsRef<Path>) -> Result<u32> {
    write_file(path.as_ref(), &f32_bytes(values))
}

pub fn read_f32_file(path: impl AsRef<Path>, count: usize) -> Result<Vec<f32>> {
    Ok(decode_f32(&read_exact_file(path.as_ref(), count * 4)?))
}

/// `bank.json`: subject directories relative to the bank directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankIndex {
    pub version: u32,
    pub resolution: [usize; 2],
    pub subjects: Vec<String>,
}

pub fn read_bank_index(dir: &Path) -> Result<BankIndex> {
    let path = dir.join(BANK_FILE);
    let raw: serde_json::Value = read_json(&path)?;
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == BANK_VERSION as u64 => {}
        Some(v) => {
            return Err(FormatError::UnsupportedVersion {
                path,
                found: v,
                supported: BANK_VERSION,
            }
            .into())
        }
        None => {
            return Err(FormatError::MalformedHeader {
                path,
                reason: "missing version".into(),
            }
            .into())
        }
    }
    serde_json::from_value(raw).map_err(|e| {
        FormatError::MalformedHeader {
            path,
            reason: e.to_string(),
        }
        .into()
    })
}

/// Subject directories listed by `bank.json`, or every bundle directory when there is no index.
pub fn list_subject_dirs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if dir.join(BANK_FILE).exists() {
        let index = read_bank_index(dir)?;
        return Ok(index.subjects.iter().map(|s| dir.join(s)).collect());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| FormatError::io(dir, e))? {
        let entry = entry.map_err(|e| FormatError::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() && p.join(META_FILE).exists() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_bank(dir: impl AsRef<Path>) -> Result<AtlasBank> {
    let dir = dir.as_ref();
    let index = read_bank_index(dir)?;
    let subjects = index
        .subjects
        .iter()
        .map(|s| read_bundle(dir.join(s)))
        .collect::<Result<Vec<_>>>()?;
    let bank = AtlasBank::new(subjects)?;
    let res = [bank.grid().width(), bank.grid().height()];
    if res != index.resolution {
        return Err(FormatError::InvalidContent {
            path: dir.join(BANK_FILE),
            reason: format!(
                "index resolution {:?} but subjects are {res:?}",
                index.resolution
            ),
        }
        .into());
    }
    Ok(bank)
}

/// Writes every subject to `dir/<id>/` plus the `bank.json` index.
pub fn write_bank(bank: &AtlasBank, dir: impl AsRef<Path>) -> Result<BankIndex> {
    let dir = dir.as_ref();
    write_subjects_with_index(bank.subjects(), dir)
}

/// Same layout as a bank, without the bank's mask requirement.
pub fn write_subjects_with_index(subjects: &[SubjectBundle], dir: &Path) -> Result<BankIndex> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    for s in subjects {
        write_bundle(s, dir.join(s.id()))?;
    }
    let grid = subjects
        .first()
        .map(|s| [s.grid().width(), s.grid().height()])
        .unwrap_or([0, 0]);
    let index = BankIndex {
        version: BANK_VERSION,
        resolution: grid,
        subjects: subjects.iter().map(|s| s.id().to_string()).collect(),
    };
    write_json(&dir.join(BANK_FILE), &index)?;
    Ok(index)
}

/// Reads every bundle listed in (or found under) `dir`.
pub fn read_subjects(dir: impl AsRef<Path>) -> Result<Vec<SubjectBundle>> {
    list_subject_dirs(dir)?.iter().map(read_bundle).collect()
}

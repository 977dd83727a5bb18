//! Batch evaluation commands. Each command returns its CSV report as bytes.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use slicereg_core::eval::phantom::{make_phantom, PhantomDataset, PhantomSpec};
use slicereg_core::eval::{
    box_stats_csv, evaluate_labels, inject_noise, label_report_csv, misalignment_from_csvs,
    t1_consistency, t1_report_csv, LabelPair, LabelReport, T1Pair, T1Report,
};
use slicereg_core::geometry::{invert, rigid_to_matrix, RigidParams, WorldPoint};
use slicereg_core::nifti_io::{encode_transform_csv, read_transform_csv};

const NIFTI_SUFFIXES: [&str; 3] = [".nii.gz", ".nii", ".hdr"];

fn nifti_stem(rel: &str) -> Option<&str> {
    NIFTI_SUFFIXES.iter().find_map(|s| rel.strip_suffix(s))
}

/// Pairs every NIfTI file under `gt_dir` with the file at the same relative
/// path under `pred_dir`. The pair id is the relative path without suffix.
pub fn pair_label_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<Vec<LabelPair>> {
    let mut pairs = Vec::new();
    for entry in walkdir::WalkDir::new(gt_dir).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", gt_dir.display()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(gt_dir)?;
        let rel_str = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let Some(id) = nifti_stem(&rel_str) else { continue };
        let pred = pred_dir.join(rel);
        if !pred.is_file() {
            bail!("no prediction for {rel_str} (expected {})", pred.display());
        }
        pairs.push(LabelPair {
            id: id.to_string(),
            pred,
            gt: entry.path().to_path_buf(),
        });
    }
    if pairs.is_empty() {
        bail!("no NIfTI labels under {}", gt_dir.display());
    }
    Ok(pairs)
}

pub fn eval_labels(pred_dir: &Path, gt_dir: &Path, spacing: Option<(f64, f64)>) -> Result<(LabelReport, Vec<u8>)> {
    let pairs = pair_label_dirs(pred_dir, gt_dir)?;
    let report = evaluate_labels(&pairs, spacing)?;
    let csv = label_report_csv(&report)?;
    Ok((report, csv))
}

pub fn misalignment(csvs: &[PathBuf]) -> Result<Vec<u8>> {
    Ok(box_stats_csv(&misalignment_from_csvs(csvs)?)?)
}

#[derive(Debug, Deserialize)]
struct T1Row {
    id: String,
    slice: PathBuf,
    label_a: PathBuf,
    label_b: PathBuf,
}

/// Reads an `id,slice,label_a,label_b` table. Relative paths resolve
/// against the table's directory.
pub fn read_t1_pairs(path: &Path) -> Result<Vec<T1Pair>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pairs = Vec::new();
    for row in reader.deserialize::<T1Row>() {
        let row = row.with_context(|| format!("parsing {}", path.display()))?;
        pairs.push(T1Pair {
            id: row.id,
            slice: base.join(row.slice),
            label_a: base.join(row.label_a),
            label_b: base.join(row.label_b),
        });
    }
    Ok(pairs)
}

pub fn t1(pairs_csv: &Path) -> Result<(T1Report, Vec<u8>)> {
    let report = t1_consistency(&read_t1_pairs(pairs_csv)?)?;
    let csv = t1_report_csv(&report)?;
    Ok((report, csv))
}

/// Perturbs every row of a single-case transform CSV.
pub fn noise(input: &Path, stds: [f64; 6], seed: u64) -> Result<Vec<u8>> {
    let rows = read_transform_csv(input)?;
    let cases: BTreeSet<&str> = rows.iter().map(|r| r.case_id.as_str()).collect();
    if cases.len() != 1 {
        bail!("{} holds {} case ids; expected exactly one", input.display(), cases.len());
    }
    let params: Vec<RigidParams> = rows.iter().map(|r| r.params).collect();
    let noisy = inject_noise(&params, stds, seed)?;
    let entries: Vec<(String, RigidParams)> =
        rows.iter().map(|r| r.slice_id.clone()).zip(noisy).collect();
    Ok(encode_transform_csv(&rows[0].case_id, &entries)?)
}

/// Writes a phantom whose slices are misaligned by Gaussian rigid
/// perturbations with the given standard deviations. The stored true
/// transforms are the inverses of those perturbations.
pub fn phantom(spec: &PhantomSpec, misalign_std: [f64; 6], out: &Path) -> Result<PhantomDataset> {
    let n = spec.n_cases * spec.slices_per_case;
    let zero = RigidParams::zero_about(WorldPoint::origin());
    let perturbations = inject_noise(&vec![zero; n], misalign_std, spec.seed.wrapping_add(1))?;
    let truths = perturbations
        .chunks(spec.slices_per_case.max(1))
        .map(|case| {
            case.iter()
                .map(|m| Ok(invert(&rigid_to_matrix(m)?).params().dof()))
                .collect::<slicereg_core::Result<Vec<_>>>()
        })
        .collect::<slicereg_core::Result<Vec<_>>>()?;
    Ok(make_phantom(spec, &truths, out)?)
}

/// Parses `a,b` or `a,b,c,...` into exactly `N` numbers.
pub fn parse_list<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

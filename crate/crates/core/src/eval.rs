//! Batch evaluation procedures: label overlap reports, misalignment
//! statistics, intensity consistency and synthetic noise.

use std::path::{Path, PathBuf};

use ndarray::Zip;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{invert, rigid_to_matrix, RigidParams, DOF_NAMES};
use crate::imgmodel::{Mask2D, VolumeKind};
use crate::metrics::{dice, hd95, percentile};
use crate::nifti_io::{read_slice, read_transform_csv, read_volume, write_atomic};

pub mod phantom;

/// Normal-approximation 95% interval half-width multiplier.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPair {
    pub id: String,
    pub pred: PathBuf,
    pub gt: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub dice: f64,
    pub hd95: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    /// `None` when fewer than two samples are available.
    pub ci: Option<(f64, f64)>,
}

impl MeanCi {
    pub fn of(values: &[f64]) -> Result<Self> {
        let s = sample_stats(values)?;
        Ok(MeanCi {
            mean: s.0,
            ci: s.1.map(|sd| {
                let half = Z95 * sd / (values.len() as f64).sqrt();
                (s.0 - half, s.0 + half)
            }),
        })
    }
}

/// Mean and sample standard deviation (N − 1); the latter is `None` for N = 1.
fn sample_stats(values: &[f64]) -> Result<(f64, Option<f64>)> {
    if values.is_empty() {
        return Err(Error::DegenerateInput("no values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Ok((mean, None));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, Some(var.sqrt())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub rows: Vec<(String, PairScore)>,
    pub n: usize,
    pub single_pair: bool,
    pub dice: MeanCi,
    pub hd95: MeanCi,
}

/// A 2D label file as a mask of its positive pixels, with in-plane spacing
/// (column, row) in mm.
pub fn read_label_mask(path: &Path) -> Result<(Mask2D, (f64, f64))> {
    let v = read_volume(path, VolumeKind::BinaryLabel)?;
    let [nx, ny, nz] = v.dims();
    if nz != 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} has {nz} planes, expected a single-plane label",
            path.display()
        )));
    }
    let col = v.affine.fixed_view::<3, 1>(0, 0).norm();
    let row = v.affine.fixed_view::<3, 1>(0, 1).norm();
    let mask = Mask2D::new(ndarray::Array2::from_shape_fn((ny, nx), |(j, i)| {
        v.data[[i, j, 0]] > 0.0
    }));
    Ok((mask, (col, row)))
}

pub fn score_pair(pred: &Mask2D, gt: &Mask2D, spacing: (f64, f64)) -> Result<PairScore> {
    Ok(PairScore {
        dice: dice(pred, gt)?,
        hd95: hd95(pred, gt, spacing)?,
    })
}

/// Dice and HD95 for every pair plus means with 95% intervals. Spacing
/// defaults to the ground-truth file's pixel size.
pub fn evaluate_labels(pairs: &[LabelPair], spacing: Option<(f64, f64)>) -> Result<LabelReport> {
    if pairs.is_empty() {
        return Err(Error::DegenerateInput("no label pairs".into()));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (pred, _) = read_label_mask(&p.pred)?;
        let (gt, gt_spacing) = read_label_mask(&p.gt)?;
        let s = score_pair(&pred, &gt, spacing.unwrap_or(gt_spacing))
            .map_err(|e| Error::InCase { case_id: p.id.clone(), source: Box::new(e) })?;
        rows.push((p.id.clone(), s));
    }
    let dices: Vec<f64> = rows.iter().map(|r| r.1.dice).collect();
    let hds: Vec<f64> = rows.iter().map(|r| r.1.hd95).collect();
    Ok(LabelReport {
        n: rows.len(),
        single_pair: rows.len() == 1,
        dice: MeanCi::of(&dices)?,
        hd95: MeanCi::of(&hds)?,
        rows,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Per-pair rows followed by `mean`, `ci_low`, `ci_high` rows. Interval
/// cells are empty when N = 1.
pub fn label_report_csv(report: &LabelReport) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let e = |e: csv::Error| Error::InvalidParameter(e.to_string());
    w.write_record(["id", "dice", "hd95_mm"]).map_err(e)?;
    for (id, s) in &report.rows {
        w.write_record([id.clone(), format!("{:.6}", s.dice), format!("{:.6}", s.hd95)])
            .map_err(e)?;
    }
    let summary = [
        ("mean", Some(report.dice.mean), Some(report.hd95.mean)),
        ("ci_low", report.dice.ci.map(|c| c.0), report.hd95.ci.map(|c| c.0)),
        ("ci_high", report.dice.ci.map(|c| c.1), report.hd95.ci.map(|c| c.1)),
    ];
    for (name, d, h) in summary {
        w.write_record([name.to_string(), fmt_opt(d), fmt_opt(h)]).map_err(e)?;
    }
    w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub parameter: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn box_stats(parameter: &str, values: &[f64]) -> Result<BoxStats> {
    Ok(BoxStats {
        parameter: parameter.to_string(),
        n: values.len(),
        min: percentile(values, 0.0)?,
        q1: percentile(values, 25.0)?,
        median: percentile(values, 50.0)?,
        q3: percentile(values, 75.0)?,
        max: percentile(values, 100.0)?,
    })
}

/// Inverse of each annotated transform, decomposed about the same center.
pub fn inverted_params(p: &RigidParams) -> Result<RigidParams> {
    Ok(invert(&rigid_to_matrix(p)?).params())
}

/// Box-plot statistics of the six inverted parameters over all rows.
pub fn misalignment_summary(params: &[RigidParams]) -> Result<Vec<BoxStats>> {
    if params.is_empty() {
        return Err(Error::DegenerateInput("no transforms".into()));
    }
    let inv: Vec<[f64; 6]> = params
        .iter()
        .map(|p| inverted_params(p).map(|q| q.dof()))
        .collect::<Result<_>>()?;
    (0..6)
        .map(|k| {
            let col: Vec<f64> = inv.iter().map(|d| d[k]).collect();
            box_stats(DOF_NAMES[k], &col)
        })
        .collect()
}

pub fn misalignment_from_csvs(paths: &[PathBuf]) -> Result<Vec<BoxStats>> {
    if paths.is_empty() {
        return Err(Error::DegenerateInput("no transform CSV files".into()));
    }
    let mut params = Vec::new();
    for p in paths {
        params.extend(read_transform_csv(p)?.into_iter().map(|r| r.params));
    }
    misalignment_summary(&params)
}

pub fn box_stats_csv(stats: &[BoxStats]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let e = |e: csv::Error| Error::InvalidParameter(e.to_string());
    w.write_record(["parameter", "n", "min", "q1", "median", "q3", "max"]).map_err(e)?;
    for s in stats {
        let mut rec = vec![s.parameter.clone(), s.n.to_string()];
        rec.extend([s.min, s.q1, s.median, s.q3, s.max].iter().map(|v| format!("{v:.9}")));
        w.write_record(&rec).map_err(e)?;
    }
    w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))
}

/// Median of `values` inside `mask`, averaging the two middle values for
/// even counts.
pub fn quantify_t1(values: &ndarray::Array2<f32>, mask: &Mask2D) -> Result<f64> {
    if values.dim() != mask.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", values.dim(), mask.dim())));
    }
    let mut inside = Vec::new();
    Zip::from(values).and(&mask.data).for_each(|&v, &m| {
        if m {
            inside.push(v as f64);
        }
    });
    if inside.is_empty() {
        return Err(Error::EmptyMask);
    }
    percentile(&inside, 50.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub lower: f64,
    pub upper: f64,
}

impl BlandAltman {
    pub fn contains(&self, d: f64) -> bool {
        (self.lower..=self.upper).contains(&d)
    }
}

/// Mean difference `a − b` with limits at ± 1.96 sample SD.
pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltman> {
    if pairs.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let (mean, sd) = sample_stats(&d)?;
    let sd = sd.unwrap_or(0.0);
    Ok(BlandAltman {
        n: d.len(),
        mean_diff: mean,
        sd_diff: sd,
        lower: mean - Z95 * sd,
        upper: mean + Z95 * sd,
    })
}

/// One slice quantified under two labels, e.g. a reference annotation and
/// the label produced after registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T1Pair {
    pub id: String,
    pub slice: PathBuf,
    pub label_a: PathBuf,
    pub label_b: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T1Report {
    /// (id, median under label a, median under label b)
    pub rows: Vec<(String, f64, f64)>,
    pub agreement: BlandAltman,
}

pub fn t1_consistency(pairs: &[T1Pair]) -> Result<T1Report> {
    let mut rows = Vec::with_capacity(pairs.len());
    for p in pairs {
        let quantify = || -> Result<(f64, f64)> {
            let slice = read_slice(&p.slice, p.id.clone())?;
            let (a, _) = read_label_mask(&p.label_a)?;
            let (b, _) = read_label_mask(&p.label_b)?;
            Ok((quantify_t1(&slice.data, &a)?, quantify_t1(&slice.data, &b)?))
        };
        let (a, b) = quantify().map_err(|e| Error::InCase { case_id: p.id.clone(), source: Box::new(e) })?;
        rows.push((p.id.clone(), a, b));
    }
    let values: Vec<(f64, f64)> = rows.iter().map(|r| (r.1, r.2)).collect();
    Ok(T1Report {
        agreement: bland_altman(&values)?,
        rows,
    })
}

/// Per-slice rows followed by `mean_difference`, `lower_limit` and
/// `upper_limit` rows in the difference column.
pub fn t1_report_csv(report: &T1Report) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let e = |e: csv::Error| Error::InvalidParameter(e.to_string());
    w.write_record(["id", "t1_a", "t1_b", "difference"]).map_err(e)?;
    for (id, a, b) in &report.rows {
        w.write_record([id.clone(), format!("{a:.6}"), format!("{b:.6}"), format!("{:.6}", a - b)])
            .map_err(e)?;
    }
    let ba = &report.agreement;
    for (name, v) in [("mean_difference", ba.mean_diff), ("lower_limit", ba.lower), ("upper_limit", ba.upper)] {
        w.write_record([name.to_string(), String::new(), String::new(), format!("{v:.6}")])
            .map_err(e)?;
    }
    w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))
}

/// Adds independent zero-mean Gaussian noise to each of the six parameters.
/// `stds` follows [`DOF_NAMES`] order.
pub fn inject_noise(params: &[RigidParams], stds: [f64; 6], seed: u64) -> Result<Vec<RigidParams>> {
    if let Some(s) = stds.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter(format!("standard deviation {s} must be finite and >= 0")));
    }
    let normals = stds
        .iter()
        .map(|&s| {
            Normal::new(0.0, s)
                .map_err(|_| Error::InvalidParameter(format!("standard deviation {s} must be >= 0")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(params
        .iter()
        .map(|p| {
            let mut dof = p.dof();
            for (v, n) in dof.iter_mut().zip(&normals) {
                *v += n.sample(&mut rng);
            }
            p.with_dof(dof)
        })
        .collect())
}

pub fn write_report(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    write_atomic(path.as_ref(), bytes)
}

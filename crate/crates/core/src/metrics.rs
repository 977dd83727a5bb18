//! Similarity scores for live guidance and overlap/distance scores for
//! segmentation evaluation.

use std::fmt;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgmodel::Mask2D;

pub const DEFAULT_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    Nmi,
    Sad,
}

impl MetricKind {
    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::Nmi)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Nmi => "nmi",
            MetricKind::Sad => "sad",
        })
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nmi" => Ok(MetricKind::Nmi),
            "sad" => Ok(MetricKind::Sad),
            other => Err(Error::InvalidParameter(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub kind: MetricKind,
    pub value: f64,
    pub higher_is_better: bool,
}

impl MetricScore {
    pub fn new(kind: MetricKind, value: f64) -> Self {
        MetricScore {
            kind,
            value,
            higher_is_better: kind.higher_is_better(),
        }
    }

    /// Strict comparison in the direction of the metric.
    pub fn better_than(&self, other: &MetricScore) -> bool {
        if self.higher_is_better {
            self.value > other.value
        } else {
            self.value < other.value
        }
    }
}

fn check_shapes(a: (usize, usize), b: (usize, usize), region: (usize, usize)) -> Result<()> {
    if a != b || a != region {
        return Err(Error::ShapeMismatch(format!(
            "images {a:?} and {b:?} with region {region:?}"
        )));
    }
    Ok(())
}

fn bin_index(v: f32, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let b = ((v as f64 - lo) / (hi - lo) * bins as f64).floor();
    (b.max(0.0) as usize).min(bins - 1)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information over `region` with per-image linear bins.
pub fn nmi(a: &Array2<f32>, b: &Array2<f32>, region: &Mask2D, bins: usize) -> Result<MetricScore> {
    check_shapes(a.dim(), b.dim(), region.dim())?;
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("bins must be >= 2, got {bins}")));
    }
    let mut pairs = Vec::new();
    Zip::from(a).and(b).and(&region.data).for_each(|&x, &y, &m| {
        if m {
            pairs.push((x, y));
        }
    });
    if pairs.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "region has {} pixels, need at least 2",
            pairs.len()
        )));
    }
    let range = |sel: fn(&(f32, f32)) -> f32| {
        pairs.iter().map(sel).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v as f64), hi.max(v as f64))
        })
    };
    let (alo, ahi) = range(|p| p.0);
    let (blo, bhi) = range(|p| p.1);

    let mut joint = vec![0usize; bins * bins];
    let mut ma = vec![0usize; bins];
    let mut mb = vec![0usize; bins];
    for &(x, y) in &pairs {
        let ia = bin_index(x, alo, ahi, bins);
        let ib = bin_index(y, blo, bhi, bins);
        joint[ia * bins + ib] += 1;
        ma[ia] += 1;
        mb[ib] += 1;
    }
    let n = pairs.len() as f64;
    let hab = entropy(joint.into_iter(), n);
    if hab <= 0.0 {
        return Err(Error::DegenerateInput(
            "joint entropy is zero (both images constant on region)".into(),
        ));
    }
    let value = (entropy(ma.into_iter(), n) + entropy(mb.into_iter(), n)) / hab;
    Ok(MetricScore::new(MetricKind::Nmi, value))
}

/// Sum of absolute differences over `region`.
pub fn sad(a: &Array2<f32>, b: &Array2<f32>, region: &Mask2D) -> Result<MetricScore> {
    check_shapes(a.dim(), b.dim(), region.dim())?;
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut total = 0.0f64;
    Zip::from(a).and(b).and(&region.data).for_each(|&x, &y, &m| {
        if m {
            total += (x as f64 - y as f64).abs();
        }
    });
    Ok(MetricScore::new(MetricKind::Sad, total))
}

pub fn score(
    kind: MetricKind,
    a: &Array2<f32>,
    b: &Array2<f32>,
    region: &Mask2D,
    bins: usize,
) -> Result<MetricScore> {
    match kind {
        MetricKind::Nmi => nmi(a, b, region, bins),
        MetricKind::Sad => sad(a, b, region),
    }
}

pub fn dice(a: &Mask2D, b: &Mask2D) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("masks {:?} and {:?}", a.dim(), b.dim())));
    }
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    let mut both = 0usize;
    Zip::from(&a.data).and(&b.data).for_each(|&x, &y| {
        if x && y {
            both += 1;
        }
    });
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Mask pixels with at least one 4-neighbour outside the mask or the image.
pub fn boundary(m: &Mask2D) -> Mask2D {
    let (rows, cols) = m.dim();
    let d = &m.data;
    Mask2D::new(Array2::from_shape_fn((rows, cols), |(r, c)| {
        d[[r, c]]
            && (r == 0
                || c == 0
                || r + 1 == rows
                || c + 1 == cols
                || !d[[r - 1, c]]
                || !d[[r + 1, c]]
                || !d[[r, c - 1]]
                || !d[[r, c + 1]])
    }))
}

/// Percentile `p` in [0, 100] by linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::DegenerateInput("percentile of empty set".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("percentile {p} outside [0, 100]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let frac = pos - lo as f64;
    Ok(v[lo] + (v[hi] - v[lo]) * frac)
}

/// Exact squared distance transform of a 1D sampled function whose samples
/// sit `spacing` apart. Infinite samples are not sites.
fn squared_edt_1d(f: &[f64], spacing: f64, out: &mut [f64]) {
    let x = |q: usize| q as f64 * spacing;
    let sites: Vec<usize> = (0..f.len()).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let meet = |p: usize, q: usize| {
        ((f[q] + x(q) * x(q)) - (f[p] + x(p) * x(p))) / (2.0 * (x(q) - x(p)))
    };
    let mut hull: Vec<usize> = Vec::with_capacity(sites.len());
    let mut bounds: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    for &q in &sites {
        loop {
            match hull.last() {
                Some(&p) => {
                    let s = meet(p, q);
                    if hull.len() > 1 && s <= bounds[hull.len() - 1] {
                        hull.pop();
                        bounds.pop();
                    } else {
                        hull.push(q);
                        bounds.push(s);
                        break;
                    }
                }
                None => {
                    hull.push(q);
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
            }
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < hull.len() && bounds[k + 1] < x(q) {
            k += 1;
        }
        let d = x(q) - x(hull[k]);
        *o = d * d + f[hull[k]];
    }
}

/// Squared Euclidean distance (mm²) from every pixel to the nearest set pixel
/// of `sites`. `spacing` is (column spacing, row spacing).
fn squared_distance_map(sites: &Mask2D, spacing: (f64, f64)) -> Array2<f64> {
    let (rows, cols) = sites.dim();
    let mut g = sites.data.mapv(|b| if b { 0.0 } else { f64::INFINITY });
    let mut buf_in = vec![0.0; rows];
    let mut buf_out = vec![0.0; rows];
    for c in 0..cols {
        for r in 0..rows {
            buf_in[r] = g[[r, c]];
        }
        squared_edt_1d(&buf_in, spacing.1, &mut buf_out);
        for r in 0..rows {
            g[[r, c]] = buf_out[r];
        }
    }
    let mut row_out = vec![0.0; cols];
    for r in 0..rows {
        let row: Vec<f64> = g.row(r).to_vec();
        squared_edt_1d(&row, spacing.0, &mut row_out);
        for c in 0..cols {
            g[[r, c]] = row_out[c];
        }
    }
    g
}

fn directed_hd95(from: &Mask2D, to: &Mask2D, spacing: (f64, f64)) -> Result<f64> {
    let dist = squared_distance_map(to, spacing);
    let mut d = Vec::new();
    Zip::from(&from.data).and(&dist).for_each(|&b, &sq| {
        if b {
            d.push(sq.sqrt());
        }
    });
    percentile(&d, 95.0)
}

/// 95th-percentile symmetric Hausdorff distance between mask boundaries, in
/// mm. `spacing` is (column spacing, row spacing).
pub fn hd95(a: &Mask2D, b: &Mask2D, spacing: (f64, f64)) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("masks {:?} and {:?}", a.dim(), b.dim())));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMask);
    }
    if !(spacing.0 > 0.0 && spacing.1 > 0.0) {
        return Err(Error::InvalidParameter(format!("spacing {spacing:?} must be positive")));
    }
    let (ba, bb) = (boundary(a), boundary(b));
    Ok(directed_hd95(&ba, &bb, spacing)?.max(directed_hd95(&bb, &ba, spacing)?))
}

/// True iff `score` is strictly better than every score in `prior`.
pub fn is_best(score: &MetricScore, prior: &[MetricScore]) -> Result<bool> {
    if let Some(other) = prior.iter().find(|p| p.kind != score.kind) {
        return Err(Error::InvalidParameter(format!(
            "cannot compare {} with {}",
            score.kind, other.kind
        )));
    }
    Ok(prior.iter().all(|p| score.better_than(p)))
}

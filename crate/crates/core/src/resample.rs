//! Sampling a volume on the pixel grid of a posed, transformed slice.

use nalgebra::{Matrix4, Vector3};
use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, SlicePose};
use crate::imgmodel::{Mask2D, ResampledSlice, Volume, VolumeKind};

/// Slack, in voxels, on the inside test so that points lying on the outer
/// voxel planes are not lost to rounding in the affine chain.
pub const INSIDE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

impl Interpolation {
    /// Trilinear for intensities and binary labels, nearest for categorical labels.
    pub fn default_for(kind: VolumeKind) -> Self {
        match kind {
            VolumeKind::CategoricalLabel => Interpolation::Nearest,
            _ => Interpolation::Trilinear,
        }
    }
}

/// Affine map from slice pixel (i, j) to continuous voxel coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PlaneMapping {
    origin: Vector3<f64>,
    step_i: Vector3<f64>,
    step_j: Vector3<f64>,
    dims: [usize; 3],
}

impl PlaneMapping {
    pub(crate) fn new(v: &Volume, pose: &SlicePose, t: &RigidTransform) -> Result<Self> {
        let inv = v.inverse_affine()?;
        let m: Matrix4<f64> = inv * pose.effective_affine(t);
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularAffine);
        }
        let col = |k: usize| Vector3::new(m[(0, k)], m[(1, k)], m[(2, k)]);
        if col(0).norm() == 0.0 || col(1).norm() == 0.0 {
            return Err(Error::DegeneratePose("pixel axes collapse in voxel space".into()));
        }
        Ok(PlaneMapping {
            origin: col(3),
            step_i: col(0),
            step_j: col(1),
            dims: v.dims(),
        })
    }

    #[inline]
    pub(crate) fn voxel(&self, i: f64, j: f64) -> Vector3<f64> {
        self.origin + self.step_i * i + self.step_j * j
    }

    #[inline]
    pub(crate) fn inside(&self, q: &Vector3<f64>) -> bool {
        (0..3).all(|k| q[k] >= -INSIDE_EPS && q[k] <= (self.dims[k] as f64 - 1.0) + INSIDE_EPS)
    }
}

#[inline]
fn lower_index(q: f64, n: usize) -> (usize, f64) {
    let q = q.clamp(0.0, (n - 1) as f64);
    if n == 1 {
        return (0, 0.0);
    }
    let i0 = (q.floor() as usize).min(n - 2);
    (i0, q - i0 as f64)
}

fn trilinear(data: &Array3<f32>, dims: [usize; 3], q: &Vector3<f64>) -> f64 {
    let (i0, fx) = lower_index(q.x, dims[0]);
    let (j0, fy) = lower_index(q.y, dims[1]);
    let (k0, fz) = lower_index(q.z, dims[2]);
    let i1 = (i0 + 1).min(dims[0] - 1);
    let j1 = (j0 + 1).min(dims[1] - 1);
    let k1 = (k0 + 1).min(dims[2] - 1);
    let at = |i, j, k| data[[i, j, k]] as f64;
    let c00 = at(i0, j0, k0) * (1.0 - fx) + at(i1, j0, k0) * fx;
    let c10 = at(i0, j1, k0) * (1.0 - fx) + at(i1, j1, k0) * fx;
    let c01 = at(i0, j0, k1) * (1.0 - fx) + at(i1, j0, k1) * fx;
    let c11 = at(i0, j1, k1) * (1.0 - fx) + at(i1, j1, k1) * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

fn nearest(data: &Array3<f32>, dims: [usize; 3], q: &Vector3<f64>) -> f64 {
    let idx = |v: f64, n: usize| ((v + 0.5).floor().max(0.0) as usize).min(n - 1);
    data[[idx(q.x, dims[0]), idx(q.y, dims[1]), idx(q.z, dims[2])]] as f64
}

pub fn resample_on_slice(
    v: &Volume,
    pose: &SlicePose,
    t: &RigidTransform,
    method: Interpolation,
) -> Result<ResampledSlice> {
    let map = PlaneMapping::new(v, pose, t)?;
    let (rows, cols) = (pose.rows, pose.cols);
    let per_row: Vec<(Vec<f32>, Vec<bool>)> = (0..rows)
        .into_par_iter()
        .map(|j| {
            let mut values = vec![0f32; cols];
            let mut valid = vec![false; cols];
            for i in 0..cols {
                let q = map.voxel(i as f64, j as f64);
                if map.inside(&q) {
                    valid[i] = true;
                    values[i] = match method {
                        Interpolation::Trilinear => trilinear(&v.data, map.dims, &q),
                        Interpolation::Nearest => nearest(&v.data, map.dims, &q),
                    } as f32;
                }
            }
            (values, valid)
        })
        .collect();
    let mut values = Array2::zeros((rows, cols));
    let mut valid = Array2::from_elem((rows, cols), false);
    for (j, (vals, oks)) in per_row.into_iter().enumerate() {
        for i in 0..cols {
            values[[j, i]] = vals[i];
            valid[[j, i]] = oks[i];
        }
    }
    Ok(ResampledSlice {
        values,
        valid: Mask2D::new(valid),
    })
}

/// True where the sample is valid and at or above `threshold`.
pub fn binarize(r: &ResampledSlice, threshold: f64) -> Mask2D {
    let mut out = Array2::from_elem(r.values.dim(), false);
    ndarray::Zip::from(&mut out)
        .and(&r.values)
        .and(&r.valid.data)
        .for_each(|o, &v, &ok| *o = ok && v as f64 >= threshold);
    Mask2D::new(out)
}

/// Mask as 0/1 floats.
pub fn mask_to_values(mask: &Mask2D) -> Array2<f32> {
    mask.data.mapv(|b| if b { 1.0 } else { 0.0 })
}

/// The 2D label for a slice: binary labels are interpolated then thresholded,
/// categorical labels are sampled with nearest neighbour.
pub fn label_on_slice(
    label: &Volume,
    pose: &SlicePose,
    t: &RigidTransform,
    threshold: f64,
) -> Result<(ResampledSlice, Array2<f32>)> {
    let sampled = resample_on_slice(label, pose, t, Interpolation::default_for(label.kind))?;
    let output = match label.kind {
        VolumeKind::CategoricalLabel => sampled.values.clone(),
        _ => mask_to_values(&binarize(&sampled, threshold)),
    };
    Ok((sampled, output))
}

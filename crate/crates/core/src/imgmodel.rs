//! Image value types: volumes, posed 2D slices, masks and resampled slices.

use nalgebra::{Matrix4, Vector3, Vector4};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SlicePose, WorldPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeKind {
    Intensity,
    BinaryLabel,
    CategoricalLabel,
}

/// 3D scalar grid indexed `[[i, j, k]]` with a voxel→world affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub data: Array3<f32>,
    pub affine: Matrix4<f64>,
    pub kind: VolumeKind,
}

impl Volume {
    pub fn new(data: Array3<f32>, affine: Matrix4<f64>, kind: VolumeKind) -> Result<Self> {
        let det = affine.fixed_view::<3, 3>(0, 0).determinant();
        if !(det.abs() > 1e-12) {
            return Err(Error::SingularAffine);
        }
        Ok(Volume { data, affine, kind })
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn inverse_affine(&self) -> Result<Matrix4<f64>> {
        self.affine.try_inverse().ok_or(Error::SingularAffine)
    }

    /// The eight world-space corners of the voxel-center lattice.
    pub fn corner_points(&self) -> [WorldPoint; 8] {
        let [nx, ny, nz] = self.dims().map(|n| n.saturating_sub(1) as f64);
        let mut out = [WorldPoint::origin(); 8];
        for (idx, slot) in out.iter_mut().enumerate() {
            let v = Vector4::new(
                if idx & 1 == 0 { 0.0 } else { nx },
                if idx & 2 == 0 { 0.0 } else { ny },
                if idx & 4 == 0 { 0.0 } else { nz },
                1.0,
            );
            let w = self.affine * v;
            *slot = WorldPoint::new(w.x, w.y, w.z);
        }
        out
    }

    pub fn preprocessed(mut self) -> Self {
        replace_nan(self.data.iter_mut());
        self
    }
}

/// A 2D image (`[[row, col]]`, i.e. `[[j, i]]`) placed in world space.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub id: String,
    pub data: Array2<f32>,
    pub pose: SlicePose,
}

impl SliceImage {
    pub fn new(id: impl Into<String>, data: Array2<f32>, pose: SlicePose) -> Result<Self> {
        let (rows, cols) = data.dim();
        if rows != pose.rows || cols != pose.cols {
            return Err(Error::ShapeMismatch(format!(
                "slice data is {rows}x{cols} but pose expects {}x{}",
                pose.rows, pose.cols
            )));
        }
        Ok(SliceImage {
            id: id.into(),
            data,
            pose,
        })
    }

    pub fn preprocessed(mut self) -> Self {
        replace_nan(self.data.iter_mut());
        self
    }
}

fn replace_nan<'a>(values: impl Iterator<Item = &'a mut f32>) {
    for v in values {
        if v.is_nan() {
            *v = 0.0;
        }
    }
}

/// Replaces every NaN with 0 and leaves all other values untouched.
pub fn preprocess<T: Preprocess>(raw: T) -> T {
    raw.preprocess()
}

pub trait Preprocess {
    fn preprocess(self) -> Self;
}

impl Preprocess for Volume {
    fn preprocess(self) -> Self {
        self.preprocessed()
    }
}

impl Preprocess for SliceImage {
    fn preprocess(self) -> Self {
        self.preprocessed()
    }
}

impl Preprocess for Array2<f32> {
    fn preprocess(mut self) -> Self {
        replace_nan(self.iter_mut());
        self
    }
}

/// Boolean 2D mask, same `[[row, col]]` layout as its parent image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2D {
    pub data: Array2<bool>,
}

impl Mask2D {
    pub fn new(data: Array2<bool>) -> Self {
        Mask2D { data }
    }

    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Mask2D {
            data: Array2::from_elem((rows, cols), value),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }
}

/// Values sampled from a volume on a posed plane plus the in-volume mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledSlice {
    pub values: Array2<f32>,
    pub valid: Mask2D,
}

/// Continuous voxel coordinates of a world point.
pub fn world_to_voxel(v: &Volume, p: &WorldPoint) -> Result<Vector3<f64>> {
    let inv = v.inverse_affine()?;
    let h = inv * Vector4::new(p.x, p.y, p.z, 1.0);
    Ok(Vector3::new(h.x, h.y, h.z))
}

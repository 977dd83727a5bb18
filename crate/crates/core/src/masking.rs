//! Masks restricting where slices are compared and displayed.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, SlicePose};
use crate::imgmodel::{Mask2D, SliceImage, Volume};
use crate::resample::PlaneMapping;

/// Pixels with strictly positive values. Zero is excluded, which also drops
/// pixels that were NaN before preprocessing.
pub fn positive_mask(s: &SliceImage) -> Mask2D {
    Mask2D::new(s.data.mapv(|v| v > 0.0))
}

/// Pixels whose world position, under `t`, falls inside the volume.
pub fn overlap_mask(v: &Volume, pose: &SlicePose, t: &RigidTransform) -> Result<Mask2D> {
    let map = PlaneMapping::new(v, pose, t)?;
    Ok(Mask2D::new(Array2::from_shape_fn(
        (pose.rows, pose.cols),
        |(j, i)| map.inside(&map.voxel(i as f64, j as f64)),
    )))
}

/// Logical AND of equally shaped masks.
pub fn intersect(masks: &[&Mask2D]) -> Result<Mask2D> {
    let (first, rest) = masks
        .split_first()
        .ok_or_else(|| Error::InvalidParameter("no masks to intersect".into()))?;
    let mut out = (*first).clone();
    for m in rest {
        if m.dim() != out.dim() {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} vs {:?}",
                m.dim(),
                out.dim()
            )));
        }
        ndarray::Zip::from(&mut out.data)
            .and(&m.data)
            .for_each(|o, &b| *o = *o && b);
    }
    Ok(out)
}

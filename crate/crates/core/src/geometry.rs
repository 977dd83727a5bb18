//! Rigid transform algebra and the coordinate mappings between slice pixels,
//! world (RAS+ millimetres) and volume voxels.
//!
//! A [`RigidTransform`] is stored as its 4×4 matrix; [`RigidParams`] is a
//! derived view (three translations in mm, three ZYX Euler angles in degrees,
//! all about a fixed rotation center). The matrix built from parameters is
//!
//! ```text
//! Trans(t) · Trans(c) · Rz(rz) · Ry(ry) · Rx(rx) · Trans(-c)
//! ```

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Unit, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in world space (RAS+, millimetres).
pub type WorldPoint = Point3<f64>;

/// Tolerance used when checking that a matrix is a proper rotation.
pub const RIGID_TOLERANCE: f64 = 1e-9;

const GIMBAL_EPS: f64 = 1e-9;

/// The six rigid degrees of freedom plus the rotation center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidParams {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
}

impl RigidParams {
    pub fn zero_about(center: WorldPoint) -> Self {
        RigidParams {
            tx: 0.0,
            ty: 0.0,
            tz: 0.0,
            rx: 0.0,
            ry: 0.0,
            rz: 0.0,
            cx: center.x,
            cy: center.y,
            cz: center.z,
        }
    }

    /// Translation and rotation components in the fixed order
    /// `tx, ty, tz, rx, ry, rz`.
    pub fn dof(&self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.rx, self.ry, self.rz]
    }

    pub fn with_dof(&self, dof: [f64; 6]) -> Self {
        RigidParams {
            tx: dof[0],
            ty: dof[1],
            tz: dof[2],
            rx: dof[3],
            ry: dof[4],
            rz: dof[5],
            ..*self
        }
    }

    pub fn center(&self) -> WorldPoint {
        Point3::new(self.cx, self.cy, self.cz)
    }

    fn all_finite(&self) -> bool {
        self.dof().iter().all(|v| v.is_finite())
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.cz.is_finite()
    }
}

/// Names of the six degrees of freedom, in [`RigidParams::dof`] order.
pub const DOF_NAMES: [&str; 6] = ["tx_mm", "ty_mm", "tz_mm", "rx_deg", "ry_deg", "rz_deg"];

/// A rigid world→world map together with the center its parameters are
/// expressed about.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    matrix: Matrix4<f64>,
    center: WorldPoint,
}

impl RigidTransform {
    pub fn identity(center: WorldPoint) -> Self {
        RigidTransform {
            matrix: Matrix4::identity(),
            center,
        }
    }

    /// Wraps a matrix after checking the rigid invariants.
    pub fn from_matrix(matrix: Matrix4<f64>, center: WorldPoint) -> Result<Self> {
        check_rigid(&matrix)?;
        Ok(RigidTransform { matrix, center })
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn center(&self) -> WorldPoint {
        self.center
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn transform_point(&self, p: &WorldPoint) -> WorldPoint {
        let h = self.matrix * Vector4::new(p.x, p.y, p.z, 1.0);
        Point3::new(h.x, h.y, h.z)
    }

    pub fn params(&self) -> RigidParams {
        // The matrix invariant is checked on construction.
        decompose(&self.matrix, self.center)
    }

    pub fn is_identity(&self) -> bool {
        self.matrix == Matrix4::identity()
    }
}

fn check_rigid(m: &Matrix4<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidTransform("non-finite entry".into()));
    }
    let last = m.row(3);
    if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
        return Err(Error::InvalidTransform("last row is not (0,0,0,1)".into()));
    }
    let r = m.fixed_view::<3, 3>(0, 0);
    let gram = r.transpose() * r;
    let ortho_err = (gram - Matrix3::identity()).amax();
    if ortho_err > RIGID_TOLERANCE {
        return Err(Error::InvalidTransform(format!(
            "rotation block is not orthonormal (error {ortho_err:e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > RIGID_TOLERANCE {
        return Err(Error::InvalidTransform(format!("determinant {det} is not +1")));
    }
    Ok(())
}

/// Maps an angle in degrees into (-180, 180].
pub fn normalize_degrees(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

fn euler_zyx(rx: f64, ry: f64, rz: f64) -> Matrix3<f64> {
    let rot_x = Rotation3::from_axis_angle(&Vector3::x_axis(), rx.to_radians());
    let rot_y = Rotation3::from_axis_angle(&Vector3::y_axis(), ry.to_radians());
    let rot_z = Rotation3::from_axis_angle(&Vector3::z_axis(), rz.to_radians());
    (rot_z * rot_y * rot_x).into_inner()
}

fn homogeneous(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
    m
}

pub fn rigid_to_matrix(p: &RigidParams) -> Result<RigidTransform> {
    if !p.all_finite() {
        return Err(Error::InvalidParameter(format!("non-finite rigid parameters {p:?}")));
    }
    let r = euler_zyx(p.rx, p.ry, p.rz);
    let c = p.center().coords;
    // (c - R c) is exactly zero when R is exactly the identity, so pure
    // translations never pick up rounding from the center.
    let t = Vector3::new(p.tx, p.ty, p.tz) + (c - r * c);
    Ok(RigidTransform {
        matrix: homogeneous(&r, &t),
        center: p.center(),
    })
}

pub fn matrix_to_rigid(m: &RigidTransform) -> Result<RigidParams> {
    check_rigid(&m.matrix)?;
    Ok(decompose(&m.matrix, m.center))
}

fn decompose(m: &Matrix4<f64>, center: WorldPoint) -> RigidParams {
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    let cos_ry = (r[(0, 0)] * r[(0, 0)] + r[(1, 0)] * r[(1, 0)]).sqrt();
    let ry = (-r[(2, 0)]).atan2(cos_ry);
    let (rx, rz) = if cos_ry < GIMBAL_EPS {
        (0.0, (-r[(0, 1)]).atan2(r[(1, 1)]))
    } else {
        (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
    };
    let c = center.coords;
    let t = m.fixed_view::<3, 1>(0, 3).into_owned() - (c - r * c);
    RigidParams {
        tx: t.x,
        ty: t.y,
        tz: t.z,
        rx: normalize_degrees(rx.to_degrees()),
        ry: normalize_degrees(ry.to_degrees()),
        rz: normalize_degrees(rz.to_degrees()),
        cx: center.x,
        cy: center.y,
        cz: center.z,
    }
}

/// Inverse map; the center is carried over unchanged.
pub fn invert(m: &RigidTransform) -> RigidTransform {
    let rt = m.rotation().transpose();
    let t = -(rt * m.translation());
    RigidTransform {
        matrix: homogeneous(&rt, &t),
        center: m.center,
    }
}

/// Rebuilds the matrix from its own parameters, re-orthonormalizing the
/// rotation block.
fn renormalize(matrix: Matrix4<f64>, center: WorldPoint) -> Result<RigidTransform> {
    let params = decompose(&matrix, center);
    let t = rigid_to_matrix(&params)?;
    check_rigid(&t.matrix)?;
    Ok(t)
}

/// Pixel grid placement of a 2D slice in world space.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePose {
    /// Maps (i, j, 0, 1), i along columns and j along rows, to world.
    pub affine: Matrix4<f64>,
    pub rows: usize,
    pub cols: usize,
    pub spacing_u: f64,
    pub spacing_v: f64,
}

impl SlicePose {
    pub fn new(affine: Matrix4<f64>, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::DegeneratePose(format!("empty pixel grid {cols}x{rows}")));
        }
        let u = affine.fixed_view::<3, 1>(0, 0).into_owned();
        let v = affine.fixed_view::<3, 1>(0, 1).into_owned();
        let (nu, nv) = (u.norm(), v.norm());
        if !(nu > 1e-12 && nv > 1e-12) {
            return Err(Error::DegeneratePose("zero-length in-plane axis".into()));
        }
        let cosine = u.dot(&v) / (nu * nv);
        if cosine.abs() > 1e-6 {
            return Err(Error::DegeneratePose(format!(
                "in-plane axes are not orthogonal (cos = {cosine:e})"
            )));
        }
        Ok(SlicePose {
            affine,
            rows,
            cols,
            spacing_u: nu,
            spacing_v: nv,
        })
    }

    /// Builds a pose from an origin (world position of pixel (0, 0)), two
    /// in-plane directions and pixel spacings. The third affine column is the
    /// unit normal scaled by `thickness`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_axes(
        origin: WorldPoint,
        u_dir: Vector3<f64>,
        v_dir: Vector3<f64>,
        spacing_u: f64,
        spacing_v: f64,
        thickness: f64,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        let u = u_dir
            .try_normalize(1e-12)
            .ok_or_else(|| Error::DegeneratePose("zero u direction".into()))?;
        let v = v_dir
            .try_normalize(1e-12)
            .ok_or_else(|| Error::DegeneratePose("zero v direction".into()))?;
        let n = u
            .cross(&v)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::DegeneratePose("parallel in-plane directions".into()))?;
        let mut affine = Matrix4::identity();
        affine.fixed_view_mut::<3, 1>(0, 0).copy_from(&(u * spacing_u));
        affine.fixed_view_mut::<3, 1>(0, 1).copy_from(&(v * spacing_v));
        affine.fixed_view_mut::<3, 1>(0, 2).copy_from(&(n * thickness));
        affine.fixed_view_mut::<3, 1>(0, 3).copy_from(&origin.coords);
        SlicePose::new(affine, rows, cols)
    }

    /// Continuous pixel coordinate of the grid center.
    pub fn center_pixel(&self) -> (f64, f64) {
        ((self.cols as f64 - 1.0) / 2.0, (self.rows as f64 - 1.0) / 2.0)
    }

    /// World position of the grid center at the untransformed pose; this is
    /// the fixed rotation center used for parameter decomposition.
    pub fn center(&self) -> WorldPoint {
        let (ci, cj) = self.center_pixel();
        map_pixel(&self.affine, ci, cj)
    }

    /// Pixel coordinates of the four grid corners, in the order
    /// (0,0), (cols-1,0), (0,rows-1), (cols-1,rows-1).
    pub fn corner_pixels(&self) -> [(f64, f64); 4] {
        let (w, h) = (self.cols as f64 - 1.0, self.rows as f64 - 1.0);
        [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
    }

    /// Effective pixel→world affine under a transform.
    pub fn effective_affine(&self, t: &RigidTransform) -> Matrix4<f64> {
        t.matrix * self.affine
    }
}

fn map_pixel(affine: &Matrix4<f64>, i: f64, j: f64) -> WorldPoint {
    let h = affine * Vector4::new(i, j, 0.0, 1.0);
    Point3::new(h.x, h.y, h.z)
}

pub fn pixel_to_world(pose: &SlicePose, t: &RigidTransform, i: f64, j: f64) -> WorldPoint {
    map_pixel(&pose.effective_affine(t), i, j)
}

/// Unit in-plane axes and normal of a slice at its current pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceAxes {
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub n: Vector3<f64>,
}

pub fn slice_axes(pose: &SlicePose, t: &RigidTransform) -> Result<SliceAxes> {
    let eff = pose.effective_affine(t);
    let col = |k: usize| eff.fixed_view::<3, 1>(0, k).into_owned();
    let u = col(0)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::DegeneratePose("zero-length u axis".into()))?;
    let v = col(1)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::DegeneratePose("zero-length v axis".into()))?;
    let n = u
        .cross(&v)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::DegeneratePose("in-plane axes are parallel".into()))?;
    Ok(SliceAxes { u, v, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncrementKind {
    #[serde(alias = "translate")]
    Translation,
    #[serde(alias = "rotate")]
    Rotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Patient,
    Slice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
    U,
    V,
    N,
}

/// One keyboard/button step: translate or rotate along an axis of the
/// patient or slice frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Increment {
    pub kind: IncrementKind,
    pub frame: Frame,
    pub axis: Axis,
    /// Millimetres for translations, degrees for rotations.
    pub amount: f64,
}

impl Increment {
    pub fn new(kind: IncrementKind, frame: Frame, axis: Axis, amount: f64) -> Self {
        Increment {
            kind,
            frame,
            axis,
            amount,
        }
    }

    /// Left-multiplied world-space matrix realizing this increment for a slice
    /// currently at `current`.
    pub fn delta(&self, current: &RigidTransform, pose: &SlicePose) -> Result<Matrix4<f64>> {
        if !self.amount.is_finite() {
            return Err(Error::InvalidParameter("non-finite increment amount".into()));
        }
        let direction = match (self.frame, self.axis) {
            (Frame::Patient, Axis::X) => Vector3::x(),
            (Frame::Patient, Axis::Y) => Vector3::y(),
            (Frame::Patient, Axis::Z) => Vector3::z(),
            (Frame::Slice, axis @ (Axis::U | Axis::V | Axis::N)) => {
                let axes = slice_axes(pose, current)?;
                match axis {
                    Axis::U => axes.u,
                    Axis::V => axes.v,
                    _ => axes.n,
                }
            }
            (frame, axis) => {
                return Err(Error::InvalidParameter(format!(
                    "axis {axis:?} does not belong to the {frame:?} frame"
                )))
            }
        };
        Ok(match self.kind {
            IncrementKind::Translation => {
                homogeneous(&Matrix3::identity(), &(direction * self.amount))
            }
            IncrementKind::Rotation => {
                let (ci, cj) = pose.center_pixel();
                let pivot = pixel_to_world(pose, current, ci, cj).coords;
                let r = Rotation3::from_axis_angle(
                    &Unit::new_normalize(direction),
                    self.amount.to_radians(),
                )
                .into_inner();
                homogeneous(&r, &(pivot - r * pivot))
            }
        })
    }
}

/// Applies a world-space delta on the left and re-normalizes.
pub fn compose_delta(delta: &Matrix4<f64>, current: &RigidTransform) -> Result<RigidTransform> {
    renormalize(delta * current.matrix, current.center)
}

pub fn apply_increment(
    current: &RigidTransform,
    increment: &Increment,
    pose: &SlicePose,
) -> Result<RigidTransform> {
    let delta = increment.delta(current, pose)?;
    compose_delta(&delta, current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_abs_diff(a: &Matrix4<f64>, b: &Matrix4<f64>) -> f64 {
        (a - b).amax()
    }

    /// Plain triple-loop product, independent of nalgebra's multiply.
    fn naive_mul(a: &Matrix4<f64>, b: &Matrix4<f64>) -> Matrix4<f64> {
        let mut out = Matrix4::zeros();
        for r in 0..4 {
            for c in 0..4 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a[(r, k)] * b[(k, c)];
                }
                out[(r, c)] = s;
            }
        }
        out
    }

    fn axis_aligned_pose(rows: usize, cols: usize) -> SlicePose {
        SlicePose::new(Matrix4::identity(), rows, cols).unwrap()
    }

    fn tilted_pose() -> SlicePose {
        let tilt = 30f64.to_radians();
        SlicePose::from_axes(
            Point3::new(-10.0, 5.0, 2.0),
            Vector3::x(),
            Vector3::new(0.0, tilt.cos(), tilt.sin()),
            1.5,
            1.25,
            4.0,
            20,
            24,
        )
        .unwrap()
    }

    fn params(dof: [f64; 6], center: [f64; 3]) -> RigidParams {
        RigidParams::zero_about(Point3::new(center[0], center[1], center[2])).with_dof(dof)
    }

    #[test]
    fn zero_params_give_identity() {
        let t = rigid_to_matrix(&params([0.0; 6], [3.0, -4.0, 7.5])).unwrap();
        assert_eq!(*t.matrix(), Matrix4::identity());
    }

    #[test]
    fn pure_translation() {
        let t = rigid_to_matrix(&params([5.0, 0.0, 0.0, 0.0, 0.0, 0.0], [1.0, 2.0, 3.0])).unwrap();
        assert_eq!(t.rotation(), Matrix3::identity());
        assert_eq!(t.translation(), Vector3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn rz_90_maps_x_to_y() {
        let t = rigid_to_matrix(&params([0.0, 0.0, 0.0, 0.0, 0.0, 90.0], [0.0; 3])).unwrap();
        let p = t.transform_point(&Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn non_finite_params_rejected() {
        let p = params([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert!(matches!(rigid_to_matrix(&p), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn identity_decomposes_to_zero() {
        let p = matrix_to_rigid(&RigidTransform::identity(Point3::origin())).unwrap();
        assert_eq!(p.dof(), [0.0; 6]);
    }

    #[test]
    fn translation_and_ry_round_trip() {
        let p = params([3.0, 0.0, 0.0, 0.0, 30.0, 0.0], [0.0; 3]);
        let back = matrix_to_rigid(&rigid_to_matrix(&p).unwrap()).unwrap();
        for (a, b) in back.dof().iter().zip(p.dof()) {
            assert!((a - b).abs() < 1e-12, "{back:?}");
        }
    }

    #[test]
    fn non_rigid_matrix_rejected() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 2.0;
        let t = RigidTransform {
            matrix: m,
            center: Point3::origin(),
        };
        assert!(matches!(matrix_to_rigid(&t), Err(Error::InvalidTransform(_))));
        let mut reflect = Matrix4::identity();
        reflect[(2, 2)] = -1.0;
        assert!(RigidTransform::from_matrix(reflect, Point3::origin()).is_err());
    }

    #[test]
    fn gimbal_lock_folds_rx_into_rz() {
        let p = params([0.0, 0.0, 0.0, 20.0, 90.0, 50.0], [1.0, 2.0, 3.0]);
        let m = rigid_to_matrix(&p).unwrap();
        let back = matrix_to_rigid(&m).unwrap();
        assert_eq!(back.rx, 0.0);
        assert!((back.ry - 90.0).abs() < 1e-6);
        let again = rigid_to_matrix(&back).unwrap();
        assert!(max_abs_diff(again.matrix(), m.matrix()) < 1e-9);
    }

    #[test]
    fn normalize_degrees_range() {
        assert_eq!(normalize_degrees(180.0), 180.0);
        assert_eq!(normalize_degrees(-180.0), 180.0);
        assert_eq!(normalize_degrees(190.0), -170.0);
        assert_eq!(normalize_degrees(-540.0), 180.0);
        assert_eq!(normalize_degrees(359.0), -1.0);
    }

    #[test]
    fn invert_identity_and_translation() {
        let id = RigidTransform::identity(Point3::new(1.0, 1.0, 1.0));
        assert_eq!(*invert(&id).matrix(), Matrix4::identity());
        let t = rigid_to_matrix(&params([5.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0; 3])).unwrap();
        let inv = invert(&t);
        assert_eq!(inv.translation(), Vector3::new(-5.0, 0.0, 0.0));
        assert_eq!(inv.center(), t.center());
    }

    #[test]
    fn invert_composite_against_product() {
        // rz = 90 about the origin followed by tx = 10.
        let rot = rigid_to_matrix(&params([0.0, 0.0, 0.0, 0.0, 0.0, 90.0], [0.0; 3])).unwrap();
        let shift = rigid_to_matrix(&params([10.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0; 3])).unwrap();
        let composite =
            RigidTransform::from_matrix(naive_mul(shift.matrix(), rot.matrix()), Point3::origin())
                .unwrap();
        let inv = invert(&composite);
        let eye = Matrix4::identity();
        assert!(max_abs_diff(&naive_mul(composite.matrix(), inv.matrix()), &eye) < 1e-9);
        assert!(max_abs_diff(&naive_mul(inv.matrix(), composite.matrix()), &eye) < 1e-9);
        // Numeric inverse from nalgebra's LU as a second opinion.
        let lu_inv = composite.matrix().try_inverse().unwrap();
        assert!(max_abs_diff(&lu_inv, inv.matrix()) < 1e-12);
    }

    #[test]
    fn patient_z_translation() {
        let pose = axis_aligned_pose(8, 8);
        let id = RigidTransform::identity(pose.center());
        let inc = Increment::new(IncrementKind::Translation, Frame::Patient, Axis::Z, 2.0);
        let t = apply_increment(&id, &inc, &pose).unwrap();
        assert_eq!(t.params().tz, 2.0);
        assert_eq!(t.params().tx, 0.0);
    }

    #[test]
    fn slice_u_translation_on_axis_aligned_pose() {
        let pose = axis_aligned_pose(8, 8);
        let id = RigidTransform::identity(pose.center());
        let inc = Increment::new(IncrementKind::Translation, Frame::Slice, Axis::U, 3.0);
        let t = apply_increment(&id, &inc, &pose).unwrap();
        assert_eq!(t.params().tx, 3.0);
    }

    #[test]
    fn slice_normal_translation_on_tilted_pose() {
        let pose = tilted_pose();
        let id = RigidTransform::identity(pose.center());
        let inc = Increment::new(IncrementKind::Translation, Frame::Slice, Axis::N, 1.0);
        let t = apply_increment(&id, &inc, &pose).unwrap();
        // Normal straight from the affine columns.
        let a = &pose.affine;
        let u = Vector3::new(a[(0, 0)], a[(1, 0)], a[(2, 0)]);
        let v = Vector3::new(a[(0, 1)], a[(1, 1)], a[(2, 1)]);
        let n = u.cross(&v);
        let n = n / n.norm();
        let before = pixel_to_world(&pose, &id, 0.0, 0.0);
        let after = pixel_to_world(&pose, &t, 0.0, 0.0);
        assert!(((after - before) - n).norm() < 1e-9);
    }

    #[test]
    fn patient_axis_in_slice_frame_rejected() {
        let pose = axis_aligned_pose(4, 4);
        let id = RigidTransform::identity(pose.center());
        let inc = Increment::new(IncrementKind::Translation, Frame::Slice, Axis::X, 1.0);
        assert!(matches!(apply_increment(&id, &inc, &pose), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn degenerate_pose_rejected() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 0.0;
        assert!(matches!(SlicePose::new(m, 4, 4), Err(Error::DegeneratePose(_))));
        let mut shear = Matrix4::identity();
        shear[(0, 1)] = 0.5;
        assert!(matches!(SlicePose::new(shear, 4, 4), Err(Error::DegeneratePose(_))));
    }

    #[test]
    fn slice_axes_identity_and_rotated() {
        let pose = axis_aligned_pose(4, 4);
        let id = RigidTransform::identity(pose.center());
        let axes = slice_axes(&pose, &id).unwrap();
        assert_eq!(axes.u, Vector3::x());
        assert_eq!(axes.v, Vector3::y());
        assert_eq!(axes.n, Vector3::z());

        let rotated = SlicePose::from_axes(
            Point3::origin(),
            Vector3::y(),
            -Vector3::x(),
            1.0,
            1.0,
            1.0,
            4,
            4,
        )
        .unwrap();
        let axes = slice_axes(&rotated, &id).unwrap();
        assert!((axes.u - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn pixel_to_world_readouts() {
        let pose = axis_aligned_pose(4, 4);
        let id = RigidTransform::identity(Point3::origin());
        assert_eq!(pixel_to_world(&pose, &id, 0.0, 0.0), Point3::origin());

        let mut m = Matrix4::identity();
        m[(0, 3)] = 10.0;
        m[(1, 3)] = 20.0;
        m[(2, 3)] = 30.0;
        let pose = SlicePose::new(m, 4, 4).unwrap();
        assert_eq!(pixel_to_world(&pose, &id, 0.0, 0.0), Point3::new(10.0, 20.0, 30.0));
    }

    #[test]
    fn pixel_to_world_oblique_matches_naive_product() {
        let pose = tilted_pose();
        let t = rigid_to_matrix(&params([1.0, -2.0, 3.0, 10.0, -20.0, 30.0], [4.0, 5.0, 6.0])).unwrap();
        let eff = naive_mul(t.matrix(), &pose.affine);
        let expect = [
            eff[(0, 0)] * 3.0 + eff[(0, 1)] * 4.0 + eff[(0, 3)],
            eff[(1, 0)] * 3.0 + eff[(1, 1)] * 4.0 + eff[(1, 3)],
            eff[(2, 0)] * 3.0 + eff[(2, 1)] * 4.0 + eff[(2, 3)],
        ];
        let got = pixel_to_world(&pose, &t, 3.0, 4.0);
        assert!((got - Point3::from(expect)).norm() < 1e-12);
    }

    #[test]
    fn slice_rotation_keeps_center_fixed() {
        let pose = tilted_pose();
        let start =
            rigid_to_matrix(&params([2.0, 1.0, -3.0, 5.0, 10.0, -15.0], pose.center().into()))
                .unwrap();
        let (ci, cj) = pose.center_pixel();
        let before = pixel_to_world(&pose, &start, ci, cj);
        for axis in [Axis::U, Axis::V, Axis::N] {
            let inc = Increment::new(IncrementKind::Rotation, Frame::Slice, axis, 7.0);
            let t = apply_increment(&start, &inc, &pose).unwrap();
            let after = pixel_to_world(&pose, &t, ci, cj);
            assert!((after - before).norm() < 1e-9, "{axis:?}");
        }
    }

    fn rigid_params_strategy() -> impl Strategy<Value = RigidParams> {
        (
            prop::array::uniform3(-100.0..100.0f64),
            -179.9..179.9f64,
            -89.0..89.0f64,
            -179.9..179.9f64,
            prop::array::uniform3(-50.0..50.0f64),
        )
            .prop_map(|(t, rx, ry, rz, c)| params([t[0], t[1], t[2], rx, ry, rz], c))
    }

    proptest! {
        #[test]
        fn params_round_trip(p in rigid_params_strategy()) {
            let back = matrix_to_rigid(&rigid_to_matrix(&p).unwrap()).unwrap();
            for (a, b) in back.dof().iter().zip(p.dof()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn inverse_is_two_sided(p in rigid_params_strategy()) {
            let m = rigid_to_matrix(&p).unwrap();
            let inv = invert(&m);
            prop_assert!(max_abs_diff(&(m.matrix() * inv.matrix()), &Matrix4::identity()) < 1e-9);
            prop_assert!(max_abs_diff(&(inv.matrix() * m.matrix()), &Matrix4::identity()) < 1e-9);
        }

        #[test]
        fn slice_axes_orthonormal(p in rigid_params_strategy()) {
            let pose = tilted_pose();
            let axes = slice_axes(&pose, &rigid_to_matrix(&p).unwrap()).unwrap();
            let basis = Matrix3::from_columns(&[axes.u, axes.v, axes.n]);
            prop_assert!(((basis.transpose() * basis) - Matrix3::identity()).amax() < 1e-9);
            prop_assert!((basis.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn patient_translations_commute(a in -20.0..20.0f64, b in -20.0..20.0f64, axis in 0usize..3) {
            let pose = axis_aligned_pose(6, 6);
            let id = RigidTransform::identity(pose.center());
            let axis = [Axis::X, Axis::Y, Axis::Z][axis];
            let step = |t: &RigidTransform, amount| {
                apply_increment(t, &Increment::new(IncrementKind::Translation, Frame::Patient, axis, amount), &pose).unwrap()
            };
            let ab = step(&step(&id, a), b);
            let ba = step(&step(&id, b), a);
            let sum = step(&id, a + b);
            prop_assert_eq!(ab.matrix(), ba.matrix());
            prop_assert_eq!(ab.matrix(), sum.matrix());
        }

        #[test]
        fn increments_stay_rigid(
            p in rigid_params_strategy(),
            kind in 0usize..2,
            axis in 0usize..6,
            amount in -15.0..15.0f64,
        ) {
            let pose = tilted_pose();
            let start = rigid_to_matrix(&p).unwrap();
            let axis = [Axis::X, Axis::Y, Axis::Z, Axis::U, Axis::V, Axis::N][axis];
            let frame = if axis_index(axis) < 3 { Frame::Patient } else { Frame::Slice };
            let kind = [IncrementKind::Translation, IncrementKind::Rotation][kind];
            let t = apply_increment(&start, &Increment::new(kind, frame, axis, amount), &pose).unwrap();
            prop_assert!(check_rigid(t.matrix()).is_ok());
        }
    }

    fn axis_index(a: Axis) -> usize {
        match a {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
            Axis::U => 3,
            Axis::V => 4,
            Axis::N => 5,
        }
    }
}

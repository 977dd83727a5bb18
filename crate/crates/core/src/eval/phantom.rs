//! Seeded synthetic datasets with known slice misalignment.
//!
//! Each case has a smooth positive intensity volume, a binary ellipsoid
//! label and a few planar slices. A slice file stores pose `P` in its header
//! but its pixels are sampled at `T · P`, where `T` is the case's true
//! transform for that slice. Registering the slice therefore means finding
//! `T`. Ground-truth 2D labels are the label volume sampled at `T · P`.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rigid_to_matrix, RigidParams, SlicePose, WorldPoint};
use crate::imgmodel::{SliceImage, Volume, VolumeKind};
use crate::nifti_io::{write_atomic, write_label_nifti, write_slice, write_transform_csv, write_volume};
use crate::resample::{label_on_slice, resample_on_slice, Interpolation};

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n_cases: usize,
    pub volume_size: [usize; 3],
    pub voxel_mm: f64,
    pub slices_per_case: usize,
    /// (rows, cols)
    pub slice_size: (usize, usize),
    pub pixel_mm: f64,
    pub semi_axes_mm: [f64; 3],
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            n_cases: 3,
            volume_size: [40, 40, 40],
            voxel_mm: 2.0,
            slices_per_case: 3,
            slice_size: (48, 48),
            pixel_mm: 1.5,
            semi_axes_mm: [30.0, 27.0, 24.0],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSlice {
    pub slice_id: String,
    pub pose: SlicePose,
    /// Transform that registers the slice, about the pose center.
    pub truth: RigidParams,
    pub path: PathBuf,
    pub gt_label: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub case_id: String,
    pub slices: Vec<PhantomSlice>,
    pub truth_csv: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomDataset {
    pub root: PathBuf,
    pub config_path: PathBuf,
    pub cases: Vec<PhantomCase>,
}

pub fn case_id(k: usize) -> String {
    format!("case{:03}", k + 1)
}

pub fn slice_id(k: usize) -> String {
    format!("s{:02}", k + 1)
}

/// Config document matching the layout written by [`make_phantom`].
pub fn phantom_config() -> serde_json::Value {
    serde_json::json!({
        "dataset_root": ".",
        "volume_pattern": r"cases/(?P<case_id>[^/]+)/volume\.nii\.gz",
        "label3d_pattern": r"cases/(?P<case_id>[^/]+)/label\.nii\.gz",
        "slice_pattern": r"cases/(?P<case_id>[^/]+)/slices/(?P<slice_id>[^/]+)\.nii\.gz",
        "output_transform_template": "outputs/{case_id}/transforms.csv",
        "output_label_template": "outputs/{case_id}/{slice_id}_label.nii.gz",
        "label_kind": "binary",
        "binarization_threshold": 0.5
    })
}

/// Rounds every entry to the nearest f32 so the pose survives a NIfTI
/// header round trip unchanged.
fn f32_exact(m: Matrix4<f64>) -> Matrix4<f64> {
    m.map(|x| x as f32 as f64)
}

fn slice_pose(k: usize, spec: &PhantomSpec) -> Result<SlicePose> {
    let (rows, cols) = spec.slice_size;
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    let layouts = [
        (x, y, Vector3::new(0.0, 0.0, -3.0)),
        (x, z, Vector3::new(0.0, 2.0, 0.0)),
        (y, z, Vector3::new(-2.0, 0.0, 0.0)),
        (x, y, Vector3::new(0.0, 0.0, 4.0)),
        (x, z, Vector3::new(0.0, -3.0, 0.0)),
        (y, z, Vector3::new(3.0, 0.0, 0.0)),
    ];
    let (u, v, center) = layouts[k % layouts.len()];
    let shift = (k / layouts.len()) as f64 * 2.0;
    let center = center + u.cross(&v) * shift;
    let origin = center
        - u * spec.pixel_mm * (cols as f64 - 1.0) / 2.0
        - v * spec.pixel_mm * (rows as f64 - 1.0) / 2.0;
    let pose = SlicePose::from_axes(
        WorldPoint::from(origin),
        u,
        v,
        spec.pixel_mm,
        spec.pixel_mm,
        spec.pixel_mm,
        rows,
        cols,
    )?;
    SlicePose::new(f32_exact(pose.affine), rows, cols)
}

struct CaseShape {
    center: Vector3<f64>,
    phase: [f64; 3],
}

fn intensity(p: &Vector3<f64>, shape: &CaseShape, axes: &[f64; 3]) -> f64 {
    let q = p - shape.center;
    let r = ((q.x / axes[0]).powi(2) + (q.y / axes[1]).powi(2) + (q.z / axes[2]).powi(2)).sqrt();
    let organ = 1.0 / (1.0 + ((r - 1.0) / 0.1).exp());
    300.0
        + 60.0 * (p.x / 9.0 + shape.phase[0]).sin() * (p.y / 11.0 + shape.phase[1]).cos()
        + 40.0 * (p.z / 7.0 + shape.phase[2]).sin()
        + 250.0 * organ
}

fn inside_ellipsoid(p: &Vector3<f64>, shape: &CaseShape, axes: &[f64; 3]) -> bool {
    let q = p - shape.center;
    (q.x / axes[0]).powi(2) + (q.y / axes[1]).powi(2) + (q.z / axes[2]).powi(2) <= 1.0
}

fn volume_affine(spec: &PhantomSpec) -> Matrix4<f64> {
    let mut a = Matrix4::identity();
    for k in 0..3 {
        a[(k, k)] = spec.voxel_mm;
        a[(k, 3)] = -(spec.volume_size[k] as f64 - 1.0) * spec.voxel_mm / 2.0;
    }
    f32_exact(a)
}

fn build_volumes(spec: &PhantomSpec, shape: &CaseShape) -> Result<(Volume, Volume)> {
    let affine = volume_affine(spec);
    let [nx, ny, nz] = spec.volume_size;
    let world = |i: usize, j: usize, k: usize| {
        let h = affine * nalgebra::Vector4::new(i as f64, j as f64, k as f64, 1.0);
        Vector3::new(h.x, h.y, h.z)
    };
    let data = Array3::from_shape_fn((nx, ny, nz), |(i, j, k)| {
        intensity(&world(i, j, k), shape, &spec.semi_axes_mm) as f32
    });
    let label = Array3::from_shape_fn((nx, ny, nz), |(i, j, k)| {
        if inside_ellipsoid(&world(i, j, k), shape, &spec.semi_axes_mm) {
            1.0f32
        } else {
            0.0
        }
    });
    Ok((
        Volume::new(data, affine, VolumeKind::Intensity)?,
        Volume::new(label, affine, VolumeKind::BinaryLabel)?,
    ))
}

/// Writes a phantom dataset under `root`. `truths[c][s]` holds the six
/// degrees of freedom (mm, degrees) of the true transform of slice `s` in
/// case `c`; missing entries mean identity.
pub fn make_phantom(spec: &PhantomSpec, truths: &[Vec<[f64; 6]>], root: &Path) -> Result<PhantomDataset> {
    if spec.n_cases == 0 || spec.slices_per_case == 0 {
        return Err(Error::InvalidParameter("phantom needs at least one case and one slice".into()));
    }
    if spec.volume_size.iter().any(|&n| n < 2) || spec.slice_size.0 == 0 || spec.slice_size.1 == 0 {
        return Err(Error::InvalidParameter("phantom grids must be non-empty".into()));
    }
    if !(spec.voxel_mm > 0.0 && spec.pixel_mm > 0.0) {
        return Err(Error::InvalidParameter("spacings must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cases = Vec::with_capacity(spec.n_cases);
    for c in 0..spec.n_cases {
        let shape = CaseShape {
            center: Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ),
            phase: [
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            ],
        };
        let cid = case_id(c);
        let case_dir = root.join("cases").join(&cid);
        let (volume, label) = build_volumes(spec, &shape)?;
        write_volume(&volume, case_dir.join("volume.nii.gz"))?;
        write_volume(&label, case_dir.join("label.nii.gz"))?;

        let mut slices = Vec::with_capacity(spec.slices_per_case);
        for s in 0..spec.slices_per_case {
            let sid = slice_id(s);
            let pose = slice_pose(s, spec)?;
            let dof = truths.get(c).and_then(|t| t.get(s)).copied().unwrap_or([0.0; 6]);
            let truth = RigidParams::zero_about(pose.center()).with_dof(dof);
            let t = rigid_to_matrix(&truth)?;

            let sampled = resample_on_slice(&volume, &pose, &t, Interpolation::Trilinear)?;
            let mut pixels = sampled.values.clone();
            ndarray::Zip::from(&mut pixels)
                .and(&sampled.valid.data)
                .for_each(|p, &ok| {
                    if !ok {
                        *p = f32::NAN;
                    }
                });
            let path = case_dir.join("slices").join(format!("{sid}.nii.gz"));
            write_slice(&SliceImage::new(sid.clone(), pixels, pose.clone())?, &path)?;

            let (_, gt) = label_on_slice(&label, &pose, &t, 0.5)?;
            let gt_label = root.join("ground_truth").join(&cid).join(format!("{sid}_label.nii.gz"));
            write_label_nifti(&gt, &pose, &t, &gt_label)?;
            slices.push(PhantomSlice {
                slice_id: sid,
                pose,
                truth,
                path,
                gt_label,
            });
        }
        let truth_csv = root.join("ground_truth").join(format!("{cid}_transforms.csv"));
        let rows: Vec<(String, RigidParams)> =
            slices.iter().map(|s| (s.slice_id.clone(), s.truth)).collect();
        write_transform_csv(&cid, &rows, &truth_csv)?;
        cases.push(PhantomCase {
            case_id: cid,
            slices,
            truth_csv,
        });
    }
    let config_path = root.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(&phantom_config())
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    write_atomic(&config_path, format!("{text}\n").as_bytes())?;
    Ok(PhantomDataset {
        root: root.to_path_buf(),
        config_path,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::eval::{read_label_mask, score_pair};
    use crate::geometry::RigidTransform;
    use crate::nifti_io::{read_slice, read_volume};

    pub(crate) fn small_spec(n_cases: usize, seed: u64) -> PhantomSpec {
        PhantomSpec {
            n_cases,
            volume_size: [24, 24, 24],
            voxel_mm: 3.0,
            slices_per_case: 3,
            slice_size: (32, 32),
            pixel_mm: 2.0,
            semi_axes_mm: [22.0, 16.0, 13.0],
            seed,
        }
    }

    fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out: Vec<_> = walkdir::WalkDir::new(root)
            .sort_by_file_name()
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file())
            .map(|e| {
                (
                    e.path().strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn identity_truth_slices_are_volume_planes() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_phantom(&small_spec(1, 1), &[], dir.path()).unwrap();
        let volume = read_volume(dir.path().join("cases/case001/volume.nii.gz"), VolumeKind::Intensity).unwrap();
        for s in &ds.cases[0].slices {
            let img = read_slice(&s.path, &s.slice_id).unwrap();
            assert_eq!(img.pose, s.pose);
            let id = RigidTransform::identity(s.pose.center());
            let r = resample_on_slice(&volume, &img.pose, &id, Interpolation::Trilinear).unwrap();
            for ((idx, &v), &ok) in img.data.indexed_iter().zip(r.valid.data.iter()) {
                if ok {
                    assert_eq!(v, r.values[idx]);
                } else {
                    assert!(v.is_nan());
                }
            }
            let label = read_volume(dir.path().join("cases/case001/label.nii.gz"), VolumeKind::BinaryLabel).unwrap();
            let (_, l2d) = label_on_slice(&label, &img.pose, &id, 0.5).unwrap();
            let (gt, _) = read_label_mask(&s.gt_label).unwrap();
            let ours = crate::imgmodel::Mask2D::new(l2d.mapv(|v| v > 0.0));
            assert!(gt.count() > 0);
            assert_eq!(score_pair(&ours, &gt, (2.0, 2.0)).unwrap().dice, 1.0);
        }
    }

    #[test]
    fn layout_scans_as_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_phantom(&small_spec(2, 3), &[], dir.path()).unwrap();
        let opened = Dataset::from_config_file(&ds.config_path).unwrap();
        assert_eq!(opened.case_ids(), ["case001", "case002"]);
        let b = opened.bundle("case002").unwrap();
        assert_eq!(b.slice_ids(), ["s01", "s02", "s03"]);
        assert!(b.output_transform.ends_with("outputs/case002/transforms.csv"));
    }

    #[test]
    fn seeded_generation_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let truths = vec![vec![[1.0, -2.0, 0.5, 1.5, -0.5, 2.0]; 3]];
        make_phantom(&small_spec(1, 42), &truths, a.path()).unwrap();
        make_phantom(&small_spec(1, 42), &truths, b.path()).unwrap();
        assert_eq!(files(a.path()), files(b.path()));
        let c = tempfile::tempdir().unwrap();
        make_phantom(&small_spec(1, 43), &truths, c.path()).unwrap();
        assert_ne!(files(a.path()), files(c.path()));
    }

    #[test]
    fn truths_are_written_to_csv() {
        let dir = tempfile::tempdir().unwrap();
        let truths = vec![vec![[0.0, 0.0, 6.0, 0.0, 0.0, 0.0]]];
        let ds = make_phantom(&small_spec(1, 0), &truths, dir.path()).unwrap();
        let rows = crate::nifti_io::read_transform_csv(&ds.cases[0].truth_csv).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].params.tz, 6.0);
        assert_eq!(rows[1].params.tz, 0.0);
    }
}

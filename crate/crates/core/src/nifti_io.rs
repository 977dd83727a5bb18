//! NIfTI-1 reading and writing (single-file `.nii`, header/image pairs
//! `.hdr`/`.img`, and gzip containers selected by a `.gz` suffix).
//!
//! Only the fields needed to place 2D/3D scalar images in world space are
//! interpreted. Pixel data is always converted to `f32` in memory.

pub mod transform_csv;

pub use transform_csv::{
    decode_transform_csv, encode_transform_csv, quantize, read_transform_csv, write_transform_csv,
    TransformRow,
};

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::{Compression, GzBuilder};
use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector4};
use ndarray::{Array2, Array3, ShapeBuilder};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, SlicePose};
use crate::imgmodel::{SliceImage, Volume, VolumeKind};

pub const HEADER_SIZE: usize = 348;
/// Offset of voxel data in a single-file `.nii`: header plus 4 extension bytes.
pub const SINGLE_FILE_VOX_OFFSET: usize = 352;
pub const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
pub const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

/// Voxel storage types understood by the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    Uint8,
    Int8,
    Int16,
    Uint16,
    Int32,
    Float32,
    Float64,
}

impl DataType {
    pub fn code(self) -> i16 {
        match self {
            DataType::Uint8 => 2,
            DataType::Int16 => 4,
            DataType::Int32 => 8,
            DataType::Float32 => 16,
            DataType::Float64 => 64,
            DataType::Int8 => 256,
            DataType::Uint16 => 512,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => DataType::Uint8,
            4 => DataType::Int16,
            8 => DataType::Int32,
            16 => DataType::Float32,
            64 => DataType::Float64,
            256 => DataType::Int8,
            512 => DataType::Uint16,
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }

    pub fn size(self) -> usize {
        match self {
            DataType::Uint8 | DataType::Int8 => 1,
            DataType::Int16 | DataType::Uint16 => 2,
            DataType::Int32 | DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

/// The subset of the NIfTI-1 header this crate reads and writes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: DataType,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub descrip: String,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub magic: [u8; 4],
}

impl NiftiHeader {
    /// Spatial extent (nx, ny, nz); missing trailing dimensions count as 1.
    pub fn spatial_dims(&self) -> Result<[usize; 3]> {
        let ndim = self.dim[0];
        if !(1..=7).contains(&ndim) {
            return Err(Error::CorruptHeader(format!("dim[0] = {ndim}")));
        }
        let mut out = [1usize; 3];
        for (k, slot) in out.iter_mut().enumerate() {
            if (k as i16) < ndim {
                let d = self.dim[k + 1];
                if d < 1 {
                    return Err(Error::CorruptHeader(format!("dim[{}] = {d}", k + 1)));
                }
                *slot = d as usize;
            }
        }
        for k in 4..=ndim as usize {
            if self.dim[k] > 1 {
                return Err(Error::CorruptHeader(
                    "images with more than three spatial dimensions are not supported".into(),
                ));
            }
        }
        Ok(out)
    }

    /// Voxel→world affine: sform if set, else qform, else scaled identity.
    pub fn affine(&self) -> Matrix4<f64> {
        if self.sform_code > 0 {
            let mut m = Matrix4::identity();
            for r in 0..3 {
                for c in 0..4 {
                    m[(r, c)] = self.srow[r][c] as f64;
                }
            }
            m
        } else if self.qform_code > 0 {
            self.qform_affine()
        } else {
            let d = |k: usize| {
                let v = self.pixdim[k] as f64;
                if v > 0.0 {
                    v
                } else {
                    1.0
                }
            };
            Matrix4::from_diagonal(&Vector4::new(d(1), d(2), d(3), 1.0))
        }
    }

    fn qform_affine(&self) -> Matrix4<f64> {
        let [b, c, d] = self.quatern.map(|v| v as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let r = Matrix3::new(
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        );
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let spacing = [
            self.pixdim[1] as f64,
            self.pixdim[2] as f64,
            self.pixdim[3] as f64 * qfac,
        ]
        .map(|v| if v == 0.0 { 1.0 } else { v });
        let mut m = Matrix4::identity();
        for row in 0..3 {
            for col in 0..3 {
                m[(row, col)] = r[(row, col)] * spacing[col];
            }
            m[(row, 3)] = self.qoffset[row] as f64;
        }
        m
    }

    fn for_image(dims: [usize; 3], datatype: DataType, affine: &Matrix4<f64>) -> Result<Self> {
        let mut dim = [1i16; 8];
        dim[0] = 3;
        for k in 0..3 {
            dim[k + 1] = i16::try_from(dims[k]).map_err(|_| {
                Error::InvalidParameter(format!("dimension {} exceeds NIfTI-1 limits", dims[k]))
            })?;
        }
        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = affine[(r, c)] as f32;
            }
        }
        let block = affine.fixed_view::<3, 3>(0, 0).into_owned();
        let spacing = [0, 1, 2].map(|k| block.column(k).norm());
        let mut pixdim = [0f32; 8];
        pixdim[0] = 1.0;
        for k in 0..3 {
            pixdim[k + 1] = spacing[k] as f32;
        }
        let (qform_code, quatern, qoffset) = match qform_from_block(&block, spacing) {
            Some((q, qfac)) => {
                pixdim[0] = qfac;
                (
                    1,
                    q,
                    [affine[(0, 3)] as f32, affine[(1, 3)] as f32, affine[(2, 3)] as f32],
                )
            }
            None => (0, [0.0; 3], [0.0; 3]),
        };
        Ok(NiftiHeader {
            dim,
            datatype,
            pixdim,
            vox_offset: SINGLE_FILE_VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            xyzt_units: 2, // millimetres
            descrip: String::new(),
            qform_code,
            sform_code: 1,
            quatern,
            qoffset,
            srow,
            magic: *MAGIC_SINGLE,
        })
    }

    fn parse(bytes: &[u8]) -> Result<(Self, Endian)> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::CorruptHeader(format!(
                "file holds {} bytes, header needs {HEADER_SIZE}",
                bytes.len()
            )));
        }
        let endian = if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
            Endian::Little
        } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
            Endian::Big
        } else {
            return Err(Error::CorruptHeader("sizeof_hdr is not 348".into()));
        };
        let rd = HeaderReader { bytes, endian };
        let magic: [u8; 4] = bytes[344..348].try_into().expect("slice of length 4");
        if &magic != MAGIC_SINGLE && &magic != MAGIC_PAIR {
            return Err(Error::CorruptHeader(format!("bad magic {magic:?}")));
        }
        let mut dim = [0i16; 8];
        for (k, d) in dim.iter_mut().enumerate() {
            *d = rd.i16(40 + 2 * k);
        }
        let datatype = DataType::from_code(rd.i16(70))?;
        let mut pixdim = [0f32; 8];
        for (k, p) in pixdim.iter_mut().enumerate() {
            *p = rd.f32(76 + 4 * k);
        }
        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = rd.f32(280 + 16 * r + 4 * c);
            }
        }
        let descrip_raw = &bytes[148..228];
        let end = descrip_raw.iter().position(|&b| b == 0).unwrap_or(80);
        Ok((
            NiftiHeader {
                dim,
                datatype,
                pixdim,
                vox_offset: rd.f32(108),
                scl_slope: rd.f32(112),
                scl_inter: rd.f32(116),
                xyzt_units: bytes[123],
                descrip: String::from_utf8_lossy(&descrip_raw[..end]).into_owned(),
                qform_code: rd.i16(252),
                sform_code: rd.i16(254),
                quatern: [rd.f32(256), rd.f32(260), rd.f32(264)],
                qoffset: [rd.f32(268), rd.f32(272), rd.f32(276)],
                srow,
                magic,
            },
            endian,
        ))
    }

    /// Little-endian 348-byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = vec![0u8; HEADER_SIZE];
        LittleEndian::write_i32(&mut b[0..4], HEADER_SIZE as i32);
        b[38] = b'r'; // regular
        for (k, d) in self.dim.iter().enumerate() {
            LittleEndian::write_i16(&mut b[40 + 2 * k..], *d);
        }
        LittleEndian::write_i16(&mut b[70..], self.datatype.code());
        LittleEndian::write_i16(&mut b[72..], (self.datatype.size() * 8) as i16);
        for (k, p) in self.pixdim.iter().enumerate() {
            LittleEndian::write_f32(&mut b[76 + 4 * k..], *p);
        }
        LittleEndian::write_f32(&mut b[108..], self.vox_offset);
        LittleEndian::write_f32(&mut b[112..], self.scl_slope);
        LittleEndian::write_f32(&mut b[116..], self.scl_inter);
        b[123] = self.xyzt_units;
        let descrip = self.descrip.as_bytes();
        let n = descrip.len().min(79);
        b[148..148 + n].copy_from_slice(&descrip[..n]);
        LittleEndian::write_i16(&mut b[252..], self.qform_code);
        LittleEndian::write_i16(&mut b[254..], self.sform_code);
        for k in 0..3 {
            LittleEndian::write_f32(&mut b[256 + 4 * k..], self.quatern[k]);
            LittleEndian::write_f32(&mut b[268 + 4 * k..], self.qoffset[k]);
        }
        for r in 0..3 {
            for c in 0..4 {
                LittleEndian::write_f32(&mut b[280 + 16 * r + 4 * c..], self.srow[r][c]);
            }
        }
        b[344..348].copy_from_slice(&self.magic);
        b
    }
}

/// Quaternion (b, c, d) and qfac for an orthogonal, column-scaled 3×3 block;
/// `None` when the block has shear and no qform can represent it.
fn qform_from_block(block: &Matrix3<f64>, spacing: [f64; 3]) -> Option<([f32; 3], f32)> {
    if spacing.iter().any(|&s| !(s > 1e-12)) {
        return None;
    }
    let mut r = Matrix3::from_fn(|row, col| block[(row, col)] / spacing[col]);
    if ((r.transpose() * r) - Matrix3::identity()).amax() > 1e-5 {
        return None;
    }
    let qfac = if r.determinant() < 0.0 {
        r.column_mut(2).neg_mut();
        -1.0
    } else {
        1.0
    };
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
    Some(([q.i as f32, q.j as f32, q.k as f32], qfac))
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl HeaderReader<'_> {
    fn i16(&self, at: usize) -> i16 {
        match self.endian {
            Endian::Little => LittleEndian::read_i16(&self.bytes[at..]),
            Endian::Big => BigEndian::read_i16(&self.bytes[at..]),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        match self.endian {
            Endian::Little => LittleEndian::read_f32(&self.bytes[at..]),
            Endian::Big => BigEndian::read_f32(&self.bytes[at..]),
        }
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_gz(path) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// `x.hdr[.gz]` → `x.img[.gz]`.
fn paired_image_path(header_path: &Path) -> PathBuf {
    let name = header_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let image_name = if let Some(stem) = name.strip_suffix(".hdr.gz") {
        format!("{stem}.img.gz")
    } else if let Some(stem) = name.strip_suffix(".hdr") {
        format!("{stem}.img")
    } else {
        format!("{name}.img")
    };
    header_path.with_file_name(image_name)
}

fn decode_voxels(bytes: &[u8], header: &NiftiHeader, endian: Endian, count: usize) -> Result<Vec<f32>> {
    let size = header.datatype.size();
    if bytes.len() < count * size {
        return Err(Error::CorruptHeader(format!(
            "voxel data holds {} bytes, {} expected",
            bytes.len(),
            count * size
        )));
    }
    macro_rules! read_all {
        ($f:ident) => {
            bytes
                .chunks_exact(size)
                .take(count)
                .map(|c| match endian {
                    Endian::Little => LittleEndian::$f(c) as f64,
                    Endian::Big => BigEndian::$f(c) as f64,
                })
                .collect::<Vec<f64>>()
        };
    }
    let raw: Vec<f64> = match header.datatype {
        DataType::Uint8 => bytes[..count].iter().map(|&b| b as f64).collect(),
        DataType::Int8 => bytes[..count].iter().map(|&b| b as i8 as f64).collect(),
        DataType::Int16 => read_all!(read_i16),
        DataType::Uint16 => read_all!(read_u16),
        DataType::Int32 => read_all!(read_i32),
        DataType::Float32 => read_all!(read_f32),
        DataType::Float64 => read_all!(read_f64),
    };
    let slope = header.scl_slope as f64;
    let inter = header.scl_inter as f64;
    let scaled = slope != 0.0 && !(slope == 1.0 && inter == 0.0);
    Ok(raw
        .into_iter()
        .map(|v| if scaled { (v * slope + inter) as f32 } else { v as f32 })
        .collect())
}

/// A decoded image: 3D volumes and single-plane slices are told apart by
/// the third dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum NiftiImage {
    Volume(Volume),
    Slice(SliceImage),
}

/// Header plus voxels (i fastest) straight from disk.
#[derive(Debug, Clone)]
pub struct RawNifti {
    pub header: NiftiHeader,
    pub dims: [usize; 3],
    pub data: Vec<f32>,
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawNifti> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let (header, endian) = NiftiHeader::parse(&bytes)?;
    let dims = header.spatial_dims()?;
    let count = dims.iter().product::<usize>();
    let data = if &header.magic == MAGIC_PAIR {
        let img = read_maybe_gz(&paired_image_path(path))?;
        let offset = header.vox_offset.max(0.0) as usize;
        decode_voxels(img.get(offset..).unwrap_or(&[]), &header, endian, count)?
    } else {
        let offset = (header.vox_offset as usize).max(SINGLE_FILE_VOX_OFFSET);
        let body = bytes
            .get(offset..)
            .ok_or_else(|| Error::CorruptHeader("vox_offset beyond end of file".into()))?;
        decode_voxels(body, &header, endian, count)?
    };
    Ok(RawNifti { header, dims, data })
}

/// Slice identifier derived from a file name (`s1.nii.gz` → `s1`).
pub fn file_stem_id(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for ext in [".nii.gz", ".nii", ".hdr.gz", ".hdr"] {
        if let Some(stem) = name.strip_suffix(ext) {
            return stem.to_string();
        }
    }
    name
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let affine = raw.header.affine();
    let [nx, ny, nz] = raw.dims;
    if nz == 1 {
        let data = Array2::from_shape_vec((ny, nx), raw.data)
            .map_err(|e| Error::CorruptHeader(e.to_string()))?;
        let pose = SlicePose::new(affine, ny, nx)?;
        Ok(NiftiImage::Slice(SliceImage::new(file_stem_id(path), data, pose)?))
    } else {
        let data = Array3::from_shape_vec((nx, ny, nz).f(), raw.data)
            .map_err(|e| Error::CorruptHeader(e.to_string()))?;
        Ok(NiftiImage::Volume(Volume::new(data, affine, VolumeKind::Intensity)?))
    }
}

/// Reads any NIfTI as a volume (single-plane files become nz = 1 volumes).
pub fn read_volume(path: impl AsRef<Path>, kind: VolumeKind) -> Result<Volume> {
    let raw = read_raw(path)?;
    let [nx, ny, nz] = raw.dims;
    let data = Array3::from_shape_vec((nx, ny, nz).f(), raw.data)
        .map_err(|e| Error::CorruptHeader(e.to_string()))?;
    Volume::new(data, raw.header.affine(), kind)
}

pub fn read_slice(path: impl AsRef<Path>, id: impl Into<String>) -> Result<SliceImage> {
    let path = path.as_ref();
    match read_nifti(path)? {
        NiftiImage::Slice(mut s) => {
            s.id = id.into();
            Ok(s)
        }
        NiftiImage::Volume(v) => Err(Error::ShapeMismatch(format!(
            "{} is a volume of shape {:?}, expected a single plane",
            path.display(),
            v.dims()
        ))),
    }
}

/// Writes `bytes` next to `path` and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&parent).map_err(|e| Error::io(&parent, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn encode_voxels(data: &[f32], datatype: DataType) -> Result<Vec<u8>> {
    let mut out = vec![0u8; data.len() * datatype.size()];
    match datatype {
        DataType::Uint8 => {
            for (o, &v) in out.iter_mut().zip(data) {
                *o = v as u8;
            }
        }
        DataType::Int16 => {
            for (o, &v) in out.chunks_exact_mut(2).zip(data) {
                LittleEndian::write_i16(o, v as i16);
            }
        }
        DataType::Float32 => {
            for (o, &v) in out.chunks_exact_mut(4).zip(data) {
                LittleEndian::write_f32(o, v);
            }
        }
        other => {
            return Err(Error::InvalidParameter(format!("writing {other:?} is not supported")))
        }
    }
    Ok(out)
}

/// Encodes a single-file NIfTI-1 image (gzip when `path` ends in `.gz`)
/// and writes it atomically. `data` is ordered with i fastest.
pub fn write_raw(
    path: impl AsRef<Path>,
    dims: [usize; 3],
    data: &[f32],
    affine: &Matrix4<f64>,
    datatype: DataType,
) -> Result<()> {
    let path = path.as_ref();
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values for dims {dims:?}",
            data.len()
        )));
    }
    let header = NiftiHeader::for_image(dims, datatype, affine)?;
    let mut bytes = header.to_bytes();
    bytes.extend_from_slice(&[0u8; 4]);
    bytes.extend_from_slice(&encode_voxels(data, datatype)?);
    if is_gz(path) {
        // Fixed header fields (mtime 0) keep repeated saves byte-identical.
        let mut enc: GzEncoder<Vec<u8>> =
            GzBuilder::new().mtime(0).write(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        bytes = enc.finish().map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &bytes)
}

fn is_binary(values: impl IntoIterator<Item = f32>) -> bool {
    values.into_iter().all(|v| v == 0.0 || v == 1.0)
}

/// Column-major (i fastest) flattening of a `[[row, col]]` image.
fn flatten_2d(values: &Array2<f32>) -> Vec<f32> {
    values.iter().copied().collect()
}

/// Writes a 2D label at the post-registration pose `t · pose.affine`.
/// All-{0,1} labels are stored as uint8, anything else as float32.
pub fn write_label_nifti(
    values: &Array2<f32>,
    pose: &SlicePose,
    t: &RigidTransform,
    path: impl AsRef<Path>,
) -> Result<()> {
    let (rows, cols) = values.dim();
    if rows != pose.rows || cols != pose.cols {
        return Err(Error::ShapeMismatch(format!(
            "label is {rows}x{cols}, pose is {}x{}",
            pose.rows, pose.cols
        )));
    }
    let datatype = if is_binary(values.iter().copied()) {
        DataType::Uint8
    } else {
        DataType::Float32
    };
    write_raw(
        path,
        [cols, rows, 1],
        &flatten_2d(values),
        &pose.effective_affine(t),
        datatype,
    )
}

pub fn write_slice(slice: &SliceImage, path: impl AsRef<Path>) -> Result<()> {
    let (rows, cols) = slice.data.dim();
    write_raw(
        path,
        [cols, rows, 1],
        &flatten_2d(&slice.data),
        &slice.pose.affine,
        DataType::Float32,
    )
}

/// Label volumes with values in {0, 1} are stored as uint8, others as float32.
pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<f32> = volume.data.t().iter().copied().collect();
    let datatype = if volume.kind != VolumeKind::Intensity && is_binary(data.iter().copied()) {
        DataType::Uint8
    } else {
        DataType::Float32
    };
    write_raw(path, volume.dims(), &data, &volume.affine, datatype)
}

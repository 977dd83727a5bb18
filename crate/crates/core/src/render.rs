//! 2D plot composition, PNG encoding and the 3D scene document.

use std::io::Cursor;

use ndarray::{Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pixel_to_world, RigidTransform, SlicePose};
use crate::imgmodel::{Mask2D, Volume};
use crate::metrics::{boundary, percentile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidParameter(format!("window lo {lo} must be < hi {hi}")));
        }
        Ok(Window { lo, hi })
    }

    /// [1st, 99th] percentile of `values`, widened to a unit range if flat.
    pub fn from_values(values: &[f64]) -> Self {
        let (lo, hi) = match (percentile(values, 1.0), percentile(values, 99.0)) {
            (Ok(lo), Ok(hi)) => (lo, hi),
            _ => (0.0, 1.0),
        };
        if hi > lo {
            Window { lo, hi }
        } else {
            Window { lo, hi: lo + 1.0 }
        }
    }

    /// Default window over the pixels selected by `mask` (all when `None`).
    pub fn for_image(img: &Array2<f32>, mask: Option<&Mask2D>) -> Self {
        let values: Vec<f64> = match mask {
            Some(m) => img
                .iter()
                .zip(m.data.iter())
                .filter(|(_, &b)| b)
                .map(|(&v, _)| v as f64)
                .collect(),
            None => img.iter().map(|&v| v as f64).collect(),
        };
        Window::from_values(&values)
    }

    /// Default window over the strictly positive voxels of a volume.
    pub fn for_volume(v: &Volume) -> Self {
        let values: Vec<f64> = v.data.iter().filter(|&&x| x > 0.0).map(|&x| x as f64).collect();
        Window::from_values(&values)
    }
}

fn round_u8(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// `v → round(255 · clamp((v − lo) / (hi − lo), 0, 1))`, halves rounded up.
pub fn window_to_gray(img: &Array2<f32>, window: Window) -> Result<Array2<u8>> {
    let Window { lo, hi } = Window::new(window.lo, window.hi)?;
    Ok(img.mapv(|v| round_u8(255.0 * ((v as f64 - lo) / (hi - lo)).clamp(0.0, 1.0))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OverlayFormat {
    #[default]
    Mask,
    Contour,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStyle {
    pub color: [u8; 4],
    pub opacity: f64,
}

impl Default for LabelStyle {
    fn default() -> Self {
        LabelStyle {
            color: [255, 0, 0, 255],
            opacity: 0.5,
        }
    }
}

/// Boundary pixels grown by a `w × w` square.
fn contour(label: &Mask2D, w: usize) -> Mask2D {
    let edge = boundary(label);
    if w <= 1 {
        return edge;
    }
    let (rows, cols) = label.dim();
    let before = (w - 1) / 2;
    let after = w - 1 - before;
    let mut out = Array2::from_elem((rows, cols), false);
    for ((r, c), &b) in edge.data.indexed_iter() {
        if !b {
            continue;
        }
        for rr in r.saturating_sub(before)..=(r + after).min(rows - 1) {
            for cc in c.saturating_sub(before)..=(c + after).min(cols - 1) {
                out[[rr, cc]] = true;
            }
        }
    }
    Mask2D::new(out)
}

/// Grayscale to RGBA with `style.color` blended over the label pixels
/// (mask), its dilated boundary (contour) or nowhere (none). The effective
/// alpha is `opacity · color[3] / 255`.
pub fn overlay(
    gray: &Array2<u8>,
    label: &Mask2D,
    style: &LabelStyle,
    format: OverlayFormat,
    line_width: usize,
) -> Result<Array3<u8>> {
    if gray.dim() != label.dim() {
        return Err(Error::ShapeMismatch(format!(
            "image {:?} vs label {:?}",
            gray.dim(),
            label.dim()
        )));
    }
    if !(0.0..=1.0).contains(&style.opacity) {
        return Err(Error::InvalidParameter(format!("opacity {} outside [0, 1]", style.opacity)));
    }
    if line_width == 0 {
        return Err(Error::InvalidParameter("line width must be >= 1".into()));
    }
    let painted = match format {
        OverlayFormat::Mask => Some(label.clone()),
        OverlayFormat::Contour => Some(contour(label, line_width)),
        OverlayFormat::None => None,
    };
    let alpha = style.opacity * style.color[3] as f64 / 255.0;
    let (rows, cols) = gray.dim();
    let mut out = Array3::from_elem((rows, cols, 4), 255u8);
    for ((r, c), &g) in gray.indexed_iter() {
        let on = painted.as_ref().is_some_and(|m| m.data[[r, c]]);
        for ch in 0..3 {
            out[[r, c, ch]] = if on {
                round_u8((1.0 - alpha) * g as f64 + alpha * style.color[ch] as f64)
            } else {
                g
            };
        }
    }
    Ok(out)
}

/// Pixel `(row j, col i)` taken from `a` when `⌊i/w⌋ + ⌊j/w⌋` is even.
pub fn checkerboard(a: &Array2<u8>, b: &Array2<u8>, width: usize) -> Result<Array2<u8>> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if width == 0 {
        return Err(Error::InvalidParameter("checker width must be >= 1".into()));
    }
    Ok(Array2::from_shape_fn(a.dim(), |(j, i)| {
        if (i / width + j / width).is_multiple_of(2) {
            a[[j, i]]
        } else {
            b[[j, i]]
        }
    }))
}

/// Sets pixels outside `mask` to 0.
pub fn apply_mask(img: &Array2<u8>, mask: &Mask2D) -> Result<Array2<u8>> {
    if img.dim() != mask.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", img.dim(), mask.dim())));
    }
    let mut out = img.clone();
    Zip::from(&mut out).and(&mask.data).for_each(|o, &m| {
        if !m {
            *o = 0;
        }
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Image8 {
    /// `[[row, col]]`
    Gray(Array2<u8>),
    /// `[[row, col, channel]]`
    Rgba(Array3<u8>),
}

pub fn encode_png(img: &Image8) -> Result<Vec<u8>> {
    let (rows, cols, color, bytes) = match img {
        Image8::Gray(a) => {
            let (r, c) = a.dim();
            (r, c, png::ColorType::Grayscale, a.iter().copied().collect::<Vec<u8>>())
        }
        Image8::Rgba(a) => {
            let (r, c, ch) = a.dim();
            if ch != 4 {
                return Err(Error::ShapeMismatch(format!("RGBA image has {ch} channels")));
            }
            (r, c, png::ColorType::Rgba, a.iter().copied().collect::<Vec<u8>>())
        }
    };
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidParameter("cannot encode an empty image".into()));
    }
    let mut out = Vec::new();
    let err = |e: png::EncodingError| Error::InvalidParameter(format!("png encoding: {e}"));
    {
        let mut enc = png::Encoder::new(&mut out, cols as u32, rows as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(err)?;
        w.write_image_data(&bytes).map_err(err)?;
        w.finish().map_err(err)?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Image8> {
    let err = |e: png::DecodingError| Error::InvalidParameter(format!("png decoding: {e}"));
    let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::InvalidParameter("png too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    buf.truncate(info.buffer_size());
    let (rows, cols) = (info.height as usize, info.width as usize);
    let shape_err = |e: ndarray::ShapeError| Error::ShapeMismatch(e.to_string());
    match (info.color_type, info.bit_depth) {
        (png::ColorType::Grayscale, png::BitDepth::Eight) => {
            Ok(Image8::Gray(Array2::from_shape_vec((rows, cols), buf).map_err(shape_err)?))
        }
        (png::ColorType::Rgba, png::BitDepth::Eight) => {
            Ok(Image8::Rgba(Array3::from_shape_vec((rows, cols, 4), buf).map_err(shape_err)?))
        }
        other => Err(Error::InvalidParameter(format!("unsupported png format {other:?}"))),
    }
}

pub const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub corners: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSlice {
    pub slice_id: String,
    pub selected: bool,
    /// World corners at pixels (0,0), (cols−1,0), (0,rows−1), (cols−1,rows−1).
    pub corners: [[f64; 3]; 4],
    pub texture: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPreset {
    pub name: String,
    pub position: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bbox: BoundingBox,
    pub slices: Vec<SceneSlice>,
    pub cameras: Vec<CameraPreset>,
}

pub fn texture_url(slice_id: &str) -> String {
    let enc: String = form_urlencoded::byte_serialize(slice_id.as_bytes()).collect();
    format!("/api/plot/texture?slice_id={enc}")
}

pub struct ScenePlane<'a> {
    pub slice_id: &'a str,
    pub pose: &'a SlicePose,
    pub transform: &'a RigidTransform,
    pub selected: bool,
}

pub fn volume_bbox(v: &Volume) -> BoundingBox {
    let pts = v.corner_points();
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in &pts {
        for k in 0..3 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    let corners = (0..8)
        .map(|idx| {
            [
                if idx & 1 == 0 { min[0] } else { max[0] },
                if idx & 2 == 0 { min[1] } else { max[1] },
                if idx & 4 == 0 { min[2] } else { max[2] },
            ]
        })
        .collect();
    BoundingBox { min, max, corners }
}

fn cameras(bbox: &BoundingBox) -> Vec<CameraPreset> {
    let target: [f64; 3] = std::array::from_fn(|k| 0.5 * (bbox.min[k] + bbox.max[k]));
    let diag = (0..3)
        .map(|k| (bbox.max[k] - bbox.min[k]).powi(2))
        .sum::<f64>()
        .sqrt()
        .max(1.0);
    let d = 2.0 * diag;
    let at = |off: [f64; 3]| std::array::from_fn(|k| target[k] + off[k]);
    vec![
        CameraPreset {
            name: "axial".into(),
            position: at([0.0, 0.0, d]),
            target,
            up: [0.0, 1.0, 0.0],
        },
        CameraPreset {
            name: "coronal".into(),
            position: at([0.0, d, 0.0]),
            target,
            up: [0.0, 0.0, 1.0],
        },
        CameraPreset {
            name: "sagittal".into(),
            position: at([d, 0.0, 0.0]),
            target,
            up: [0.0, 0.0, 1.0],
        },
    ]
}

/// Scene document for the given planes; callers choose which planes to show.
pub fn scene(volume: &Volume, planes: &[ScenePlane<'_>]) -> Scene {
    let bbox = volume_bbox(volume);
    let slices = planes
        .iter()
        .map(|p| {
            let corners = p.pose.corner_pixels().map(|(i, j)| {
                let w = pixel_to_world(p.pose, p.transform, i, j);
                [w.x, w.y, w.z]
            });
            SceneSlice {
                slice_id: p.slice_id.to_string(),
                selected: p.selected,
                corners,
                texture: texture_url(p.slice_id),
            }
        })
        .collect();
    Scene {
        cameras: cameras(&bbox),
        bbox,
        slices,
    }
}

//! Read-only views of a session state: the JSON summary, PNG plots and the
//! 3D scene.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{Mode, SessionState, StepSizes, StyleState};
use crate::error::Result;
use crate::geometry::RigidParams;
use crate::imgmodel::Mask2D;
use crate::metrics::MetricKind;
use crate::render::{
    apply_mask, checkerboard, encode_png, overlay, scene, window_to_gray, Image8, OverlayFormat,
    Scene, ScenePlane,
};

/// Which 2D label the main plot overlays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// Every pixel where the interpolated label volume is positive.
    #[default]
    Resampled,
    /// The output label after thresholding.
    Resultant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SupportKind {
    #[default]
    Resampled,
    Checkerboard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub slice_id: String,
    pub params: RigidParams,
    pub history_len: usize,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub case_id: String,
    pub slice_ids: Vec<String>,
    pub selected: String,
    pub mode: Mode,
    pub slices: Vec<SliceSummary>,
    pub step_sizes: StepSizes,
    pub styles: StyleState,
    pub metric_kind: MetricKind,
    pub metric_bins: usize,
    pub dirty: bool,
}

impl SessionState {
    pub fn summary(&self) -> StateSummary {
        StateSummary {
            case_id: self.case_id().to_string(),
            slice_ids: self.slices.iter().map(|s| s.id.clone()).collect(),
            selected: self.selected_id().to_string(),
            mode: self.mode,
            slices: self
                .slices
                .iter()
                .zip(&self.histories)
                .map(|(s, h)| SliceSummary {
                    slice_id: s.id.clone(),
                    params: h.current().params(),
                    history_len: h.len(),
                    cursor: h.cursor(),
                })
                .collect(),
            step_sizes: self.steps,
            styles: self.styles,
            metric_kind: self.metric_kind,
            metric_bins: self.metric_bins,
            dirty: self.dirty,
        }
    }

    fn index_or_selected(&self, slice_id: Option<&str>) -> Result<usize> {
        match slice_id {
            Some(id) => self.slice_index(id),
            None => Ok(self.selected),
        }
    }

    fn slice_gray(&self, idx: usize) -> Result<ndarray::Array2<u8>> {
        window_to_gray(&self.slices[idx].data, self.styles.slice_window)
    }

    /// Resampled slice, windowed, with pixels outside the positive mask set
    /// to black.
    fn resampled_gray(&self, idx: usize) -> Result<ndarray::Array2<u8>> {
        let view = &self.views[idx];
        let gray = window_to_gray(&view.resampled.values, self.styles.resampled_window)?;
        apply_mask(&gray, &view.positive)
    }

    pub fn label_mask(&self, idx: usize, source: LabelSource) -> Mask2D {
        let view = &self.views[idx];
        let mut out = ndarray::Array2::from_elem(view.label.dim(), false);
        match source {
            LabelSource::Resampled => Zip::from(&mut out)
                .and(&view.label_sampled.values)
                .and(&view.label_sampled.valid.data)
                .for_each(|o, &v, &ok| *o = ok && v > 0.0),
            LabelSource::Resultant => {
                Zip::from(&mut out).and(&view.label).for_each(|o, &v| *o = v > 0.0)
            }
        }
        Mask2D::new(out)
    }

    /// The slice in grayscale with its 2D label overlaid, as PNG.
    pub fn main_plot(
        &self,
        slice_id: Option<&str>,
        source: LabelSource,
        format: OverlayFormat,
    ) -> Result<Vec<u8>> {
        let idx = self.index_or_selected(slice_id)?;
        let rgba = overlay(
            &self.slice_gray(idx)?,
            &self.label_mask(idx, source),
            &self.styles.label_style(),
            format,
            self.styles.contour_width,
        )?;
        encode_png(&Image8::Rgba(rgba))
    }

    /// The resampled slice alone, or checkered with the original, as PNG.
    pub fn support_plot(&self, slice_id: Option<&str>, kind: SupportKind) -> Result<Vec<u8>> {
        let idx = self.index_or_selected(slice_id)?;
        let resampled = self.resampled_gray(idx)?;
        let img = match kind {
            SupportKind::Resampled => resampled,
            SupportKind::Checkerboard => {
                checkerboard(&self.slice_gray(idx)?, &resampled, self.styles.checker_width)?
            }
        };
        encode_png(&Image8::Gray(img))
    }

    /// Windowed slice used as the texture of its quad in the 3D scene.
    pub fn texture(&self, slice_id: &str) -> Result<Vec<u8>> {
        let idx = self.slice_index(slice_id)?;
        encode_png(&Image8::Gray(self.slice_gray(idx)?))
    }

    /// All slices in macro mode, only the selected one in micro mode.
    pub fn scene(&self) -> Scene {
        let planes: Vec<ScenePlane<'_>> = self
            .slices
            .iter()
            .enumerate()
            .filter(|(k, _)| self.mode == Mode::Macro || *k == self.selected)
            .map(|(k, s)| ScenePlane {
                slice_id: &s.id,
                pose: &s.pose,
                transform: self.current(k),
                selected: k == self.selected,
            })
            .collect();
        scene(&self.volume, &planes)
    }
}

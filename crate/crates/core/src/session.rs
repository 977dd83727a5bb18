//! One loaded case: slices, per-slice histories, display styles and the
//! actions applied to them.
//!
//! A [`Session`] owns a [`Dataset`] and the [`SessionState`] of the active
//! case. All mutations go through `&mut Session`; readers clone the state,
//! which is cheap because images are shared behind `Arc`.

use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CaseBundle, Dataset, LabelKind};
use crate::error::{Error, Result};
use crate::geometry::{
    compose_delta, rigid_to_matrix, Axis, Frame, Increment, IncrementKind, RigidParams,
    RigidTransform,
};
use crate::history::{Direction, TransformationHistory};
use crate::imgmodel::{Mask2D, ResampledSlice, SliceImage, Volume, VolumeKind};
use crate::masking::{intersect, positive_mask};
use crate::metrics::{self, MetricKind, MetricScore, DEFAULT_BINS};
use crate::nifti_io::{self, write_label_nifti, write_transform_csv};
use crate::render::{LabelStyle, Window};
use crate::resample::{binarize, label_on_slice, mask_to_values, resample_on_slice, Interpolation};

pub mod view;

pub const STEP_RANGE: (f64, f64) = (0.1, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Macro,
    #[default]
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub translation_mm: f64,
    pub rotation_deg: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        StepSizes {
            translation_mm: 1.0,
            rotation_deg: 1.0,
        }
    }
}

impl StepSizes {
    pub fn new(translation_mm: f64, rotation_deg: f64) -> Result<Self> {
        let (lo, hi) = STEP_RANGE;
        for (name, v) in [("translation_mm", translation_mm), ("rotation_deg", rotation_deg)] {
            if !(lo..=hi).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(StepSizes {
            translation_mm,
            rotation_deg,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleState {
    pub volume_window: Window,
    pub slice_window: Window,
    pub resampled_window: Window,
    pub label_color: [u8; 4],
    pub label_opacity: f64,
    pub contour_width: usize,
    pub checker_width: usize,
    pub binarization_threshold: f64,
    pub metric_visible: bool,
}

impl StyleState {
    fn initial(threshold: f64) -> Self {
        let unit = Window { lo: 0.0, hi: 1.0 };
        let label = LabelStyle::default();
        StyleState {
            volume_window: unit,
            slice_window: unit,
            resampled_window: unit,
            label_color: label.color,
            label_opacity: label.opacity,
            contour_width: 1,
            checker_width: 32,
            binarization_threshold: threshold,
            metric_visible: true,
        }
    }

    pub fn label_style(&self) -> LabelStyle {
        LabelStyle {
            color: self.label_color,
            opacity: self.label_opacity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("volume_window", self.volume_window),
            ("slice_window", self.slice_window),
            ("resampled_window", self.resampled_window),
        ] {
            if !(w.lo < w.hi) {
                return Err(Error::InvalidParameter(format!("{name}: lo must be < hi")));
            }
        }
        if !(0.0..=1.0).contains(&self.label_opacity) {
            return Err(Error::InvalidParameter("label_opacity outside [0, 1]".into()));
        }
        if self.contour_width < 1 || self.checker_width < 1 {
            return Err(Error::InvalidParameter("widths must be >= 1".into()));
        }
        if !self.binarization_threshold.is_finite() {
            return Err(Error::InvalidParameter("binarization_threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Partial style update; absent fields keep their value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StylePatch {
    pub volume_window: Option<Window>,
    pub slice_window: Option<Window>,
    pub resampled_window: Option<Window>,
    pub label_color: Option<[u8; 4]>,
    pub label_opacity: Option<f64>,
    pub contour_width: Option<usize>,
    pub checker_width: Option<usize>,
    pub binarization_threshold: Option<f64>,
    pub metric_visible: Option<bool>,
}

impl StylePatch {
    pub fn apply(&self, s: &StyleState) -> Result<StyleState> {
        let out = StyleState {
            volume_window: self.volume_window.unwrap_or(s.volume_window),
            slice_window: self.slice_window.unwrap_or(s.slice_window),
            resampled_window: self.resampled_window.unwrap_or(s.resampled_window),
            label_color: self.label_color.unwrap_or(s.label_color),
            label_opacity: self.label_opacity.unwrap_or(s.label_opacity),
            contour_width: self.contour_width.unwrap_or(s.contour_width),
            checker_width: self.checker_width.unwrap_or(s.checker_width),
            binarization_threshold: self.binarization_threshold.unwrap_or(s.binarization_threshold),
            metric_visible: self.metric_visible.unwrap_or(s.metric_visible),
        };
        out.validate()?;
        Ok(out)
    }
}

/// A user action. Increments without `amount` use the current step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Action {
    #[serde(alias = "translation")]
    Translate {
        frame: Frame,
        axis: Axis,
        #[serde(default)]
        amount: Option<f64>,
    },
    #[serde(alias = "rotation")]
    Rotate {
        frame: Frame,
        axis: Axis,
        #[serde(default)]
        amount: Option<f64>,
    },
    Undo,
    Redo,
    Optimize,
    Reset,
}

/// Everything derived from one slice at its current transform.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceView {
    pub resampled: ResampledSlice,
    /// The label volume sampled on the slice before thresholding.
    pub label_sampled: ResampledSlice,
    /// The output 2D label L_2D.
    pub label: Array2<f32>,
    pub positive: Mask2D,
    /// Evaluation region: positive ∧ overlap.
    pub region: Mask2D,
}

fn label_kind(kind: LabelKind) -> VolumeKind {
    match kind {
        LabelKind::Binary => VolumeKind::BinaryLabel,
        LabelKind::Categorical => VolumeKind::CategoricalLabel,
    }
}

fn label_values(label_sampled: &ResampledSlice, kind: VolumeKind, threshold: f64) -> Array2<f32> {
    match kind {
        VolumeKind::CategoricalLabel => label_sampled.values.clone(),
        _ => mask_to_values(&binarize(label_sampled, threshold)),
    }
}

fn compute_view(
    volume: &Volume,
    label3d: &Volume,
    slice: &SliceImage,
    t: &RigidTransform,
    threshold: f64,
) -> Result<SliceView> {
    let resampled = resample_on_slice(volume, &slice.pose, t, Interpolation::Trilinear)?;
    let (label_sampled, label) = label_on_slice(label3d, &slice.pose, t, threshold)?;
    let positive = positive_mask(slice);
    let region = intersect(&[&positive, &resampled.valid])?;
    Ok(SliceView {
        resampled,
        label_sampled,
        label,
        positive,
        region,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: MetricScore,
    pub is_best: bool,
}

/// Snapshot-able state of the active case.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub bundle: CaseBundle,
    pub volume: Arc<Volume>,
    pub label3d: Arc<Volume>,
    pub slices: Vec<Arc<SliceImage>>,
    pub selected: usize,
    pub mode: Mode,
    pub histories: Vec<TransformationHistory>,
    pub views: Vec<Arc<SliceView>>,
    pub metric_kind: MetricKind,
    pub metric_bins: usize,
    pub steps: StepSizes,
    pub styles: StyleState,
    pub dirty: bool,
}

impl SessionState {
    pub fn case_id(&self) -> &str {
        &self.bundle.case_id
    }

    pub fn slice_index(&self, slice_id: &str) -> Result<usize> {
        self.slices
            .iter()
            .position(|s| s.id == slice_id)
            .ok_or_else(|| Error::UnknownSlice(slice_id.to_string()))
    }

    pub fn selected_id(&self) -> &str {
        &self.slices[self.selected].id
    }

    pub fn current(&self, idx: usize) -> &RigidTransform {
        self.histories[idx].current()
    }

    fn score_at(&self, idx: usize, kind: MetricKind, view: &SliceView) -> Option<MetricScore> {
        metrics::score(
            kind,
            &self.slices[idx].data,
            &view.resampled.values,
            &view.region,
            self.metric_bins,
        )
        .ok()
    }

    fn view_at(&self, idx: usize, t: &RigidTransform) -> Result<SliceView> {
        compute_view(
            &self.volume,
            &self.label3d,
            &self.slices[idx],
            t,
            self.styles.binarization_threshold,
        )
    }

    /// Live metric of the selected slice. With a `kind` other than the
    /// session's, the history is scored for that kind on the fly.
    pub fn evaluate(&self, kind: Option<MetricKind>) -> Result<Evaluation> {
        let kind = kind.unwrap_or(self.metric_kind);
        let idx = self.selected;
        let view = &self.views[idx];
        let score = metrics::score(
            kind,
            &self.slices[idx].data,
            &view.resampled.values,
            &view.region,
            self.metric_bins,
        )?;
        let prior = if kind == self.metric_kind {
            self.histories[idx].other_scores()
        } else {
            let mut h = self.histories[idx].clone();
            h.rescore(|t| self.view_at(idx, t).ok().and_then(|v| self.score_at(idx, kind, &v)))?;
            h.other_scores()
        };
        Ok(Evaluation {
            score,
            is_best: metrics::is_best(&score, &prior)?,
        })
    }

    /// Transform table rows in slice order.
    pub fn transform_rows(&self) -> Vec<(String, RigidParams)> {
        self.slices
            .iter()
            .zip(&self.histories)
            .map(|(s, h)| (s.id.clone(), h.current().params()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionOutcome {
    /// Slices whose current transform changed.
    pub changed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaveReport {
    pub case_id: String,
    pub transform_csv: std::path::PathBuf,
    pub labels: Vec<std::path::PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseDirection {
    #[serde(alias = "previous")]
    Prev,
    Next,
}

/// Settings carried from one case to the next.
#[derive(Debug, Clone, Copy)]
struct Carry {
    mode: Mode,
    steps: StepSizes,
    styles: Option<StyleState>,
    metric_kind: MetricKind,
    metric_bins: usize,
}

pub struct Session {
    dataset: Dataset,
    state: SessionState,
}

impl Session {
    /// Opens the dataset at its first case.
    pub fn open(dataset: Dataset) -> Result<Self> {
        let first = dataset
            .case_ids()
            .first()
            .cloned()
            .ok_or(Error::EmptyDataset)?;
        let carry = Carry {
            mode: Mode::default(),
            steps: StepSizes::default(),
            styles: None,
            metric_kind: MetricKind::default(),
            metric_bins: DEFAULT_BINS,
        };
        let state = load_state(&dataset, &first, carry)?;
        Ok(Session { dataset, state })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn snapshot(&self) -> SessionState {
        self.state.clone()
    }

    /// Saves the current case when dirty, then loads `case_id`. A failed save
    /// leaves the current case loaded.
    pub fn load_case(&mut self, case_id: &str) -> Result<()> {
        if !self.dataset.case_ids().iter().any(|c| c == case_id) {
            return Err(Error::UnknownCase(case_id.to_string()));
        }
        if self.state.dirty {
            self.save()?;
        }
        let carry = Carry {
            mode: self.state.mode,
            steps: self.state.steps,
            styles: Some(self.state.styles),
            metric_kind: self.state.metric_kind,
            metric_bins: self.state.metric_bins,
        };
        self.state = load_state(&self.dataset, case_id, carry)?;
        Ok(())
    }

    pub fn shift_case(&mut self, direction: CaseDirection) -> Result<()> {
        let ids = self.dataset.case_ids();
        let k = ids
            .iter()
            .position(|c| c == self.state.case_id())
            .ok_or_else(|| Error::UnknownCase(self.state.case_id().to_string()))?;
        let target = match direction {
            CaseDirection::Prev if k > 0 => k - 1,
            CaseDirection::Next if k + 1 < ids.len() => k + 1,
            _ => return Err(Error::AtBoundary),
        };
        let id = ids[target].clone();
        self.load_case(&id)
    }

    pub fn select_slice(&mut self, slice_id: &str) -> Result<()> {
        self.state.selected = self.state.slice_index(slice_id)?;
        Ok(())
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.state.mode = mode;
    }

    pub fn set_steps(&mut self, steps: StepSizes) -> Result<()> {
        self.state.steps = StepSizes::new(steps.translation_mm, steps.rotation_deg)?;
        Ok(())
    }

    /// Applies a style patch. Only a threshold change touches image data, and
    /// even then only the thresholding step is redone.
    pub fn set_style(&mut self, patch: &StylePatch) -> Result<()> {
        let styles = patch.apply(&self.state.styles)?;
        let threshold_changed =
            styles.binarization_threshold != self.state.styles.binarization_threshold;
        self.state.styles = styles;
        if threshold_changed {
            let kind = self.state.label3d.kind;
            let th = styles.binarization_threshold;
            for view in &mut self.state.views {
                let mut v = (**view).clone();
                v.label = label_values(&v.label_sampled, kind, th);
                *view = Arc::new(v);
            }
        }
        Ok(())
    }

    /// Switches the live metric, rescoring every history.
    pub fn set_metric(&mut self, kind: MetricKind, bins: Option<usize>) -> Result<()> {
        let bins = bins.unwrap_or(self.state.metric_bins);
        if bins < 2 {
            return Err(Error::InvalidParameter(format!("bins must be >= 2, got {bins}")));
        }
        if kind == self.state.metric_kind && bins == self.state.metric_bins {
            return Ok(());
        }
        self.state.metric_kind = kind;
        self.state.metric_bins = bins;
        let st = &self.state;
        let rescored: Vec<TransformationHistory> = (0..st.slices.len())
            .into_par_iter()
            .map(|idx| {
                let mut h = st.histories[idx].clone();
                h.rescore(|t| st.view_at(idx, t).ok().and_then(|v| st.score_at(idx, kind, &v)))?;
                Ok(h)
            })
            .collect::<Result<_>>()?;
        self.state.histories = rescored;
        Ok(())
    }

    fn increment(&self, kind: IncrementKind, frame: Frame, axis: Axis, amount: Option<f64>) -> Increment {
        let step = match kind {
            IncrementKind::Translation => self.state.steps.translation_mm,
            IncrementKind::Rotation => self.state.steps.rotation_deg,
        };
        Increment::new(kind, frame, axis, amount.unwrap_or(step))
    }

    fn targets(&self) -> Vec<usize> {
        match self.state.mode {
            Mode::Micro => vec![self.state.selected],
            Mode::Macro => (0..self.state.slices.len()).collect(),
        }
    }

    /// Records `new` transforms (scored at their own slice) for the listed slices.
    fn record_all(&mut self, updates: Vec<(usize, RigidTransform)>) -> Result<Vec<usize>> {
        let st = &self.state;
        let kind = st.metric_kind;
        let computed: Vec<(usize, RigidTransform, SliceView, Option<MetricScore>)> = updates
            .into_par_iter()
            .map(|(idx, t)| {
                let view = st.view_at(idx, &t)?;
                let score = st.score_at(idx, kind, &view);
                Ok((idx, t, view, score))
            })
            .collect::<Result<_>>()?;
        let mut changed = Vec::with_capacity(computed.len());
        for (idx, t, view, score) in computed {
            self.state.histories[idx].record(t, score)?;
            self.state.views[idx] = Arc::new(view);
            changed.push(idx);
        }
        Ok(changed)
    }

    fn refresh_views(&mut self, idxs: &[usize]) -> Result<()> {
        let st = &self.state;
        let views: Vec<(usize, SliceView)> = idxs
            .par_iter()
            .map(|&idx| Ok((idx, st.view_at(idx, st.current(idx))?)))
            .collect::<Result<_>>()?;
        for (idx, v) in views {
            self.state.views[idx] = Arc::new(v);
        }
        Ok(())
    }

    pub fn act(&mut self, action: Action) -> Result<ActionOutcome> {
        let changed = match action {
            Action::Translate { frame, axis, amount } => {
                let inc = self.increment(IncrementKind::Translation, frame, axis, amount);
                self.apply_increment(&inc)?
            }
            Action::Rotate { frame, axis, amount } => {
                let inc = self.increment(IncrementKind::Rotation, frame, axis, amount);
                self.apply_increment(&inc)?
            }
            Action::Reset => {
                let updates = self
                    .targets()
                    .into_iter()
                    .map(|idx| (idx, RigidTransform::identity(self.state.histories[idx].center())))
                    .collect();
                self.record_all(updates)?
            }
            Action::Undo | Action::Redo | Action::Optimize => self.navigate(action)?,
        };
        self.state.dirty = true;
        Ok(ActionOutcome {
            changed: changed.iter().map(|&i| self.state.slices[i].id.clone()).collect(),
        })
    }

    /// The same world-space delta, derived from the selected slice, is applied
    /// to every target slice.
    fn apply_increment(&mut self, inc: &Increment) -> Result<Vec<usize>> {
        let sel = self.state.selected;
        let delta = inc.delta(self.state.current(sel), &self.state.slices[sel].pose)?;
        let updates = self
            .targets()
            .into_iter()
            .map(|idx| Ok((idx, compose_delta(&delta, self.state.current(idx))?)))
            .collect::<Result<Vec<_>>>()?;
        self.record_all(updates)
    }

    /// Undo/redo/optimize on each target slice. In macro mode slices at a
    /// boundary or without scores are skipped; the error is only reported
    /// when no slice moved.
    fn navigate(&mut self, action: Action) -> Result<Vec<usize>> {
        let mut moved = Vec::new();
        let mut first_err = None;
        for idx in self.targets() {
            let h = &mut self.state.histories[idx];
            let r = match action {
                Action::Undo => h.step(Direction::Undo).map(|_| ()),
                Action::Redo => h.step(Direction::Redo).map(|_| ()),
                _ => h.best().map(|_| ()),
            };
            match r {
                Ok(()) => moved.push(idx),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if moved.is_empty() {
            return Err(first_err.unwrap_or(Error::AtBoundary));
        }
        self.refresh_views(&moved)?;
        Ok(moved)
    }

    pub fn evaluate(&self, kind: Option<MetricKind>) -> Result<Evaluation> {
        self.state.evaluate(kind)
    }

    /// Writes the case transform CSV and one label per slice. The state stays
    /// dirty when any write fails.
    pub fn save(&mut self) -> Result<SaveReport> {
        let report = save_outputs(&self.state)?;
        self.state.dirty = false;
        Ok(report)
    }
}

/// Writes the transform CSV and the labels. Labels are sampled at the
/// transforms exactly as the CSV stores them, so reloading and saving again
/// reproduces the same bytes.
pub fn save_outputs(state: &SessionState) -> Result<SaveReport> {
    let case_id = state.case_id().to_string();
    let wrap = |e| Error::in_case(&case_id, e);
    let rows: Vec<(String, RigidParams)> = state
        .transform_rows()
        .into_iter()
        .map(|(id, p)| (id, nifti_io::quantize(&p)))
        .collect();
    let labels: Vec<(RigidTransform, Array2<f32>)> = rows
        .par_iter()
        .enumerate()
        .map(|(idx, (_, p))| {
            let t = rigid_to_matrix(p)?;
            let label = if t.matrix() == state.current(idx).matrix() {
                state.views[idx].label.clone()
            } else {
                state.view_at(idx, &t)?.label
            };
            Ok((t, label))
        })
        .collect::<Result<_>>()
        .map_err(wrap)?;
    write_transform_csv(&case_id, &rows, &state.bundle.output_transform).map_err(wrap)?;
    let mut paths = Vec::with_capacity(state.slices.len());
    for (idx, entry) in state.bundle.slices.iter().enumerate() {
        let (t, label) = &labels[idx];
        write_label_nifti(label, &state.slices[idx].pose, t, &entry.output_label).map_err(wrap)?;
        paths.push(entry.output_label.clone());
    }
    Ok(SaveReport {
        case_id: case_id.clone(),
        transform_csv: state.bundle.output_transform.clone(),
        labels: paths,
    })
}

/// Histories for a freshly loaded case: identity, followed by the saved
/// transform when an earlier output exists for the slice.
fn initial_histories(bundle: &CaseBundle, slices: &[Arc<SliceImage>]) -> Result<Vec<TransformationHistory>> {
    let saved = if bundle.output_transform.is_file() {
        nifti_io::read_transform_csv(&bundle.output_transform)?
    } else {
        Vec::new()
    };
    slices
        .iter()
        .map(|s| {
            let mut h = TransformationHistory::new(s.pose.center(), None);
            if let Some(row) = saved.iter().find(|r| r.slice_id == s.id) {
                let t = rigid_to_matrix(&row.params)?;
                if !t.is_identity() {
                    h.record(t, None)?;
                }
            }
            Ok(h)
        })
        .collect()
}

fn load_state(dataset: &Dataset, case_id: &str, carry: Carry) -> Result<SessionState> {
    let wrap = |e| Error::in_case(case_id, e);
    let bundle = dataset.bundle(case_id)?;
    let volume = nifti_io::read_volume(&bundle.volume, VolumeKind::Intensity)
        .map_err(wrap)?
        .preprocessed();
    let label3d = nifti_io::read_volume(&bundle.label3d, label_kind(dataset.config.label_kind))
        .map_err(wrap)?
        .preprocessed();
    let slices: Vec<Arc<SliceImage>> = bundle
        .slices
        .par_iter()
        .map(|e| Ok(Arc::new(nifti_io::read_slice(&e.path, &e.slice_id)?.preprocessed())))
        .collect::<Result<_>>()
        .map_err(wrap)?;

    let mut styles = carry
        .styles
        .unwrap_or_else(|| StyleState::initial(dataset.config.binarization_threshold));
    styles.volume_window = Window::for_volume(&volume);
    styles.resampled_window = styles.volume_window;
    let positive: Vec<f64> = slices
        .iter()
        .flat_map(|s| s.data.iter().filter(|&&v| v > 0.0).map(|&v| v as f64))
        .collect();
    styles.slice_window = Window::from_values(&positive);

    let histories = initial_histories(&bundle, &slices).map_err(wrap)?;
    let mut state = SessionState {
        bundle,
        volume: Arc::new(volume),
        label3d: Arc::new(label3d),
        views: Vec::new(),
        slices,
        selected: 0,
        mode: carry.mode,
        histories,
        metric_kind: carry.metric_kind,
        metric_bins: carry.metric_bins,
        steps: carry.steps,
        styles,
        dirty: false,
    };
    let st = &state;
    let scored: Vec<(Arc<SliceView>, TransformationHistory)> = (0..st.slices.len())
        .into_par_iter()
        .map(|idx| {
            let view = st.view_at(idx, st.current(idx))?;
            let mut h = st.histories[idx].clone();
            h.rescore(|t| {
                if t == st.current(idx) {
                    st.score_at(idx, st.metric_kind, &view)
                } else {
                    st.view_at(idx, t).ok().and_then(|v| st.score_at(idx, st.metric_kind, &v))
                }
            })?;
            Ok((Arc::new(view), h))
        })
        .collect::<Result<_>>()
        .map_err(wrap)?;
    let (views, histories) = scored.into_iter().unzip();
    state.views = views;
    state.histories = histories;
    Ok(state)
}

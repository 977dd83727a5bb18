//! Linear per-slice transformation history.
//!
//! Entry 0 is always the identity. Recording after an undo truncates the
//! redo branch. Reset records a new identity entry instead of clearing, so
//! earlier results stay reachable through undo and optimize.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, WorldPoint};
use crate::metrics::{MetricKind, MetricScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Undo,
    Redo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub transform: RigidTransform,
    pub score: Option<MetricScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformationHistory {
    entries: Vec<HistoryEntry>,
    cursor: usize,
}

impl TransformationHistory {
    /// A history holding only the identity about `center`.
    pub fn new(center: WorldPoint, score: Option<MetricScore>) -> Self {
        TransformationHistory {
            entries: vec![HistoryEntry {
                transform: RigidTransform::identity(center),
                score,
            }],
            cursor: 0,
        }
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn current(&self) -> &RigidTransform {
        &self.entries[self.cursor].transform
    }

    pub fn current_score(&self) -> Option<&MetricScore> {
        self.entries[self.cursor].score.as_ref()
    }

    pub fn center(&self) -> WorldPoint {
        self.entries[0].transform.center()
    }

    /// The metric kind shared by the scored entries, if any are scored.
    pub fn score_kind(&self) -> Option<MetricKind> {
        self.entries.iter().find_map(|e| e.score.map(|s| s.kind))
    }

    /// Scores of every entry other than the current one.
    pub fn other_scores(&self) -> Vec<MetricScore> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != self.cursor)
            .filter_map(|(_, e)| e.score)
            .collect()
    }

    fn check_kind(&self, score: &Option<MetricScore>) -> Result<()> {
        match (score, self.score_kind()) {
            (Some(s), Some(k)) if s.kind != k => Err(Error::InvalidParameter(format!(
                "history holds {k} scores, cannot record {}",
                s.kind
            ))),
            _ => Ok(()),
        }
    }

    /// Drops entries after the cursor, appends `(t, score)` and points at it.
    pub fn record(&mut self, t: RigidTransform, score: Option<MetricScore>) -> Result<()> {
        self.check_kind(&score)?;
        self.entries.truncate(self.cursor + 1);
        self.entries.push(HistoryEntry {
            transform: t,
            score,
        });
        self.cursor = self.entries.len() - 1;
        Ok(())
    }

    pub fn step(&mut self, direction: Direction) -> Result<&RigidTransform> {
        match direction {
            Direction::Undo if self.cursor > 0 => self.cursor -= 1,
            Direction::Redo if self.cursor + 1 < self.entries.len() => self.cursor += 1,
            _ => return Err(Error::AtBoundary),
        }
        Ok(self.current())
    }

    /// Index of the best-scored entry, earliest on ties.
    pub fn best_index(&self) -> Result<usize> {
        let mut best: Option<(usize, &MetricScore)> = None;
        for (k, e) in self.entries.iter().enumerate() {
            if let Some(s) = &e.score {
                if best.is_none_or(|(_, b)| s.better_than(b)) {
                    best = Some((k, s));
                }
            }
        }
        best.map(|(k, _)| k).ok_or(Error::NoScores)
    }

    /// Moves the cursor to the best-scored entry.
    pub fn best(&mut self) -> Result<&RigidTransform> {
        self.cursor = self.best_index()?;
        Ok(self.current())
    }

    /// Records a fresh identity entry.
    pub fn reset(&mut self, score: Option<MetricScore>) -> Result<()> {
        let id = RigidTransform::identity(self.center());
        self.record(id, score)
    }

    /// Replaces every score with `f(transform)`, e.g. after a metric switch.
    pub fn rescore(
        &mut self,
        mut f: impl FnMut(&RigidTransform) -> Option<MetricScore>,
    ) -> Result<()> {
        let scores: Vec<Option<MetricScore>> =
            self.entries.iter().map(|e| f(&e.transform)).collect();
        let mut kinds = scores.iter().flatten().map(|s| s.kind);
        if let Some(first) = kinds.next() {
            if kinds.any(|k| k != first) {
                return Err(Error::InvalidParameter("rescore produced mixed metric kinds".into()));
            }
        }
        for (e, s) in self.entries.iter_mut().zip(scores) {
            e.score = s;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rigid_to_matrix, RigidParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn origin() -> WorldPoint {
        WorldPoint::origin()
    }

    fn shift(tx: f64) -> RigidTransform {
        let mut p = RigidParams::zero_about(origin());
        p.tx = tx;
        rigid_to_matrix(&p).unwrap()
    }

    fn sad(v: f64) -> Option<MetricScore> {
        Some(MetricScore::new(MetricKind::Sad, v))
    }

    fn nmi(v: f64) -> Option<MetricScore> {
        Some(MetricScore::new(MetricKind::Nmi, v))
    }

    #[test]
    fn record_appends() {
        let mut h = TransformationHistory::new(origin(), None);
        h.record(shift(1.0), None).unwrap();
        h.record(shift(2.0), None).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h.cursor(), 2);
        assert_eq!(h.current(), &shift(2.0));
        assert!(h.entries()[0].transform.is_identity());
    }

    #[test]
    fn record_after_undo_truncates() {
        let mut h = TransformationHistory::new(origin(), None);
        h.record(shift(1.0), None).unwrap();
        h.step(Direction::Undo).unwrap();
        h.record(shift(3.0), None).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h.cursor(), 1);
        assert_eq!(h.current(), &shift(3.0));
        assert!(matches!(h.step(Direction::Redo), Err(Error::AtBoundary)));
    }

    #[test]
    fn undo_redo_boundaries_and_bit_identity() {
        let mut h = TransformationHistory::new(origin(), None);
        assert!(matches!(h.step(Direction::Undo), Err(Error::AtBoundary)));
        let a = shift(0.1 + 0.2);
        h.record(a, None).unwrap();
        assert!(h.step(Direction::Undo).unwrap().is_identity());
        assert_eq!(h.cursor(), 0);
        let back = h.step(Direction::Redo).unwrap();
        assert_eq!(back.matrix(), a.matrix());
    }

    #[test]
    fn best_examples() {
        let mut h = TransformationHistory::new(origin(), sad(5.0));
        h.record(shift(1.0), sad(3.0)).unwrap();
        h.record(shift(2.0), sad(4.0)).unwrap();
        assert_eq!(h.best_index().unwrap(), 1);
        h.best().unwrap();
        assert_eq!(h.cursor(), 1);

        let mut h = TransformationHistory::new(origin(), nmi(1.2));
        h.record(shift(1.0), nmi(1.9)).unwrap();
        h.record(shift(2.0), nmi(1.9)).unwrap();
        assert_eq!(h.best_index().unwrap(), 1);
    }

    #[test]
    fn best_without_scores() {
        let mut h = TransformationHistory::new(origin(), None);
        h.record(shift(1.0), None).unwrap();
        assert!(matches!(h.best(), Err(Error::NoScores)));
        assert_eq!(h.cursor(), 1);
    }

    #[test]
    fn reset_semantics() {
        let mut h = TransformationHistory::new(origin(), sad(9.0));
        h.record(shift(1.0), sad(2.0)).unwrap();
        h.record(shift(2.0), sad(6.0)).unwrap();
        h.reset(sad(9.0)).unwrap();
        assert!(h.current().is_identity());
        assert_eq!(h.current().params().dof(), [0.0; 6]);
        h.reset(sad(9.0)).unwrap();
        assert_eq!(h.len(), 5);
        assert!(h.step(Direction::Undo).unwrap().is_identity());
        assert_eq!(h.best().unwrap(), &shift(1.0));
    }

    #[test]
    fn mixed_kinds_rejected() {
        let mut h = TransformationHistory::new(origin(), sad(1.0));
        assert!(h.record(shift(1.0), nmi(1.5)).is_err());
        assert_eq!(h.len(), 1);
        h.rescore(|t| nmi(1.0 + t.translation().x.abs())).unwrap();
        assert_eq!(h.score_kind(), Some(MetricKind::Nmi));
        h.record(shift(1.0), nmi(1.5)).unwrap();
    }

    #[test]
    fn other_scores_excludes_current() {
        let mut h = TransformationHistory::new(origin(), sad(5.0));
        h.record(shift(1.0), sad(3.0)).unwrap();
        h.record(shift(2.0), None).unwrap();
        h.step(Direction::Undo).unwrap();
        assert_eq!(h.other_scores(), vec![sad(5.0).unwrap()]);
    }

    /// Plain list-with-cursor model used as the fuzz oracle.
    #[derive(Debug)]
    struct Model {
        items: Vec<(f64, Option<f64>)>,
        cursor: usize,
    }

    impl Model {
        fn apply(&mut self, op: u32, tx: f64, score: Option<f64>) -> bool {
            match op {
                0 => {
                    self.items.truncate(self.cursor + 1);
                    self.items.push((tx, score));
                    self.cursor = self.items.len() - 1;
                    true
                }
                1 => {
                    if self.cursor == 0 {
                        return false;
                    }
                    self.cursor -= 1;
                    true
                }
                2 => {
                    if self.cursor + 1 >= self.items.len() {
                        return false;
                    }
                    self.cursor += 1;
                    true
                }
                3 => {
                    let mut best: Option<(usize, f64)> = None;
                    for (k, (_, s)) in self.items.iter().enumerate() {
                        if let Some(s) = s {
                            if best.is_none() || *s < best.unwrap().1 {
                                best = Some((k, *s));
                            }
                        }
                    }
                    match best {
                        Some((k, _)) => {
                            self.cursor = k;
                            true
                        }
                        None => false,
                    }
                }
                _ => {
                    self.items.truncate(self.cursor + 1);
                    self.items.push((0.0, score));
                    self.cursor = self.items.len() - 1;
                    true
                }
            }
        }
    }

    #[test]
    fn fuzz_500_ops_against_model() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut h = TransformationHistory::new(origin(), None);
            let mut m = Model {
                items: vec![(0.0, None)],
                cursor: 0,
            };
            for _ in 0..500 {
                let op = rng.random_range(0..5u32);
                let tx = rng.random_range(-5..=5) as f64;
                let score = rng.random_bool(0.7).then(|| rng.random_range(0..10) as f64);
                let expect_ok = m.apply(op, tx, score);
                let s = score.and_then(sad);
                let got = match op {
                    0 => h.record(shift(tx), s).map(|_| ()),
                    1 => h.step(Direction::Undo).map(|_| ()),
                    2 => h.step(Direction::Redo).map(|_| ()),
                    3 => h.best().map(|_| ()),
                    _ => h.reset(s),
                };
                assert_eq!(got.is_ok(), expect_ok, "seed {seed} op {op}");
                assert_eq!(h.cursor(), m.cursor);
                assert_eq!(h.len(), m.items.len());
                for (e, (tx, s)) in h.entries().iter().zip(&m.items) {
                    assert_eq!(e.transform.translation().x, *tx);
                    assert_eq!(e.score.map(|x| x.value), *s);
                }
            }
        }
    }
}

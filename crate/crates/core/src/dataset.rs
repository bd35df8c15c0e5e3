//! Grid-count featurisation, sample assembly, session-level splits and the
//! binary dataset format.
//!
//! A [`FeatureTensor`] stacks the per-cell user counts of 5 consecutive
//! instants, slice by slice (`values[k·rows·cols + row·cols + col]`). Row
//! indices grow with `y`, column indices with `x`.
//!
//! Binary layout (little endian):
//!
//! ```text
//! "UAVDS1" | rows u32 | cols u32 | depth u32 | n_samples u32
//! n_samples × ( session_id u64 | step u64 | rows·cols·depth × f32 | label_x f64 | label_y f64 )
//! crc32 u32   (IEEE, over every byte after the magic)
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::mobility::{Session, Snapshot};
use crate::channel::ChannelParams;
use crate::oracle::LabelRow;
use crate::rng::SplitMix64;
use crate::{Area, Error, Result, UavPose};

/// Number of consecutive instants per input window.
pub const TEMPORAL_DEPTH: usize = 5;
pub const DATASET_MAGIC: &[u8; 6] = b"UAVDS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub temporal_depth: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { rows: 20, cols: 20, temporal_depth: TEMPORAL_DEPTH }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 4 || self.cols < 4 {
            return Err(Error::Validation(format!(
                "grid must be at least 4x4, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.temporal_depth != TEMPORAL_DEPTH {
            return Err(Error::Validation(format!(
                "grid.temporal_depth must be {TEMPORAL_DEPTH}, got {}",
                self.temporal_depth
            )));
        }
        Ok(())
    }

    pub fn slice_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.temporal_depth
    }

    /// Grid cell `(row, col)` of a point; points on the top/right border map
    /// into the last row/column.
    pub fn cell_of(&self, x: f64, y: f64, area: Area) -> (usize, usize) {
        let cell_w = area.width / self.cols as f64;
        let cell_h = area.height / self.rows as f64;
        let row = ((y / cell_h).floor().max(0.0) as usize).min(self.rows - 1);
        let col = ((x / cell_w).floor().max(0.0) as usize).min(self.cols - 1);
        (row, col)
    }

    /// Centre of cell `(row, col)` in metres.
    pub fn cell_center(&self, row: usize, col: usize, area: Area) -> (f64, f64) {
        let cell_w = area.width / self.cols as f64;
        let cell_h = area.height / self.rows as f64;
        ((col as f64 + 0.5) * cell_w, (row as f64 + 0.5) * cell_h)
    }
}

/// Per-cell user counts over a 5-instant window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub rows: usize,
    pub cols: usize,
    pub depth: usize,
    pub values: Vec<f32>,
}

impl FeatureTensor {
    pub fn zeros(grid: &GridConfig) -> Self {
        Self { rows: grid.rows, cols: grid.cols, depth: grid.temporal_depth, values: vec![0.0; grid.len()] }
    }

    pub fn slice(&self, k: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, row: usize, col: usize) -> f32 {
        self.values[(k * self.rows + row) * self.cols + col]
    }

    /// Each slice divided by its total, so a non-empty slice sums to 1.
    pub fn normalized(&self) -> Vec<f64> {
        let n = self.rows * self.cols;
        let mut out = Vec::with_capacity(self.values.len());
        for slice in self.values.chunks(n) {
            let total: f64 = slice.iter().map(|&v| v as f64).sum();
            let scale = if total > 0.0 { 1.0 / total } else { 0.0 };
            out.extend(slice.iter().map(|&v| v as f64 * scale));
        }
        out
    }
}

fn count_into(slice: &mut [f32], snap: &Snapshot, grid: &GridConfig, area: Area) {
    for p in &snap.positions {
        let (r, c) = grid.cell_of(p.x, p.y, area);
        slice[r * grid.cols + c] += 1.0;
    }
}

/// Featurises a window of exactly 5 consecutive snapshots.
pub fn featurize(window: &[Snapshot], grid: &GridConfig, area: Area) -> Result<FeatureTensor> {
    grid.validate()?;
    if window.len() != grid.temporal_depth {
        return Err(Error::Validation(format!(
            "window must hold {} snapshots, got {}",
            grid.temporal_depth,
            window.len()
        )));
    }
    if window.windows(2).any(|w| w[1].t != w[0].t + 1) {
        return Err(Error::Validation("window steps are not consecutive".into()));
    }
    let mut tensor = FeatureTensor::zeros(grid);
    for (slice, snap) in tensor.values.chunks_mut(grid.slice_len()).zip(window) {
        count_into(slice, snap, grid, area);
    }
    Ok(tensor)
}

/// Features of the window of `session` ending at `end_step`.
pub fn featurize_session(session: &Session, end_step: usize, grid: &GridConfig, area: Area) -> Result<FeatureTensor> {
    let depth = grid.temporal_depth;
    if end_step + 1 < depth || end_step >= session.snapshots.len() {
        return Err(Error::Validation(format!(
            "session {}: no {depth}-instant window ends at step {end_step}",
            session.id
        )));
    }
    featurize(&session.snapshots[end_step + 1 - depth..=end_step], grid, area)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureTensor,
    /// Oracle position at the window's last instant, divided by the area size.
    pub label: [f64; 2],
    pub session_id: u64,
    pub step: u64,
}

pub fn normalize_label(pose: &UavPose, area: Area) -> [f64; 2] {
    [pose.x / area.width, pose.y / area.height]
}

pub fn denormalize_label(label: [f64; 2], area: Area) -> (f64, f64) {
    (label[0] * area.width, label[1] * area.height)
}

/// One sample per window end step `depth-1 ..` of every session.
pub fn build_samples(sessions: &[Session], labels: &[LabelRow], grid: &GridConfig, area: Area) -> Result<Vec<Sample>> {
    grid.validate()?;
    let index: HashMap<(u64, usize), &LabelRow> = labels.iter().map(|l| ((l.session_id, l.step), l)).collect();
    let per_session: Vec<Vec<Sample>> = sessions
        .par_iter()
        .map(|s| {
            (grid.temporal_depth - 1..s.snapshots.len())
                .map(|step| {
                    let label = index.get(&(s.id, step)).ok_or_else(|| {
                        Error::Validation(format!("missing label for session {} step {step}", s.id))
                    })?;
                    Ok(Sample {
                        features: featurize_session(s, step, grid, area)?,
                        label: normalize_label(&label.pose, area),
                        session_id: s.id,
                        step: step as u64,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_session.into_iter().flatten().collect())
}

/// Labels `sessions` with the exact oracle and builds their samples.
pub fn samples_from_sessions(sessions: &[Session], p: &ChannelParams, grid: &GridConfig, area: Area) -> Result<Vec<Sample>> {
    let labels = crate::oracle::label_sessions(sessions, p, area)?;
    build_samples(sessions, &crate::oracle::label_rows(sessions, &labels), grid, area)
}

/// Session ids assigned to each part of a split.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SessionSplit {
    pub train: BTreeSet<u64>,
    pub val: BTreeSet<u64>,
    pub test: BTreeSet<u64>,
}

/// Shuffles the distinct session ids with `seed` and cuts them by `fractions`
/// (train, val, test). Rounds train and val to the nearest count; test takes
/// the rest.
pub fn split_sessions(ids: impl IntoIterator<Item = u64>, fractions: [f64; 3], seed: u64) -> Result<SessionSplit> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("split fractions {fractions:?} must be >= 0 and sum to 1")));
    }
    let mut ids: Vec<u64> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    SplitMix64::new(seed).shuffle(&mut ids);
    let n = ids.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let split = SessionSplit {
        train: ids[..n_train].iter().copied().collect(),
        val: ids[n_train..n_train + n_val].iter().copied().collect(),
        test: ids[n_train + n_val..].iter().copied().collect(),
    };
    for (name, f, part) in [("train", fractions[0], &split.train), ("val", fractions[1], &split.val), ("test", fractions[2], &split.test)] {
        if f > 0.0 && part.is_empty() {
            return Err(Error::Validation(format!("degenerate split: {name} part is empty")));
        }
    }
    Ok(split)
}

/// Splits samples by session so no session spans two parts.
pub fn split(samples: Vec<Sample>, fractions: [f64; 3], seed: u64) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    let parts = split_sessions(samples.iter().map(|s| s.session_id), fractions, seed)?;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        if parts.train.contains(&s.session_id) {
            train.push(s);
        } else if parts.val.contains(&s.session_id) {
            val.push(s);
        } else {
            test.push(s);
        }
    }
    Ok((train, val, test))
}

pub fn encode_dataset(samples: &[Sample], grid: &GridConfig) -> Result<Vec<u8>> {
    let n = u32::try_from(samples.len()).map_err(|_| Error::Validation("too many samples".into()))?;
    let feat_len = grid.len();
    let mut buf = Vec::with_capacity(6 + 16 + samples.len() * (16 + 4 * feat_len + 16) + 4);
    buf.extend_from_slice(DATASET_MAGIC);
    for v in [grid.rows as u32, grid.cols as u32, grid.temporal_depth as u32, n] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for s in samples {
        if s.features.values.len() != feat_len {
            return Err(Error::Validation(format!(
                "sample ({}, {}) has {} features, grid expects {feat_len}",
                s.session_id,
                s.step,
                s.features.values.len()
            )));
        }
        buf.extend_from_slice(&s.session_id.to_le_bytes());
        buf.extend_from_slice(&s.step.to_le_bytes());
        for v in &s.features.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&s.label[0].to_le_bytes());
        buf.extend_from_slice(&s.label[1].to_le_bytes());
    }
    let crc = crc32fast::hash(&buf[DATASET_MAGIC.len()..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

/// Little-endian cursor over a checked byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Checks magic and trailing CRC; returns the checksummed body after the magic.
pub(crate) fn checked_body<'a>(bytes: &'a [u8], magic: &[u8; 6]) -> Result<&'a [u8]> {
    if bytes.len() < magic.len() + 4 {
        return Err(Error::Format("file too short".into()));
    }
    if &bytes[..magic.len()] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..magic.len()]),
            String::from_utf8_lossy(magic)
        )));
    }
    let (body, crc) = bytes[magic.len()..].split_at(bytes.len() - magic.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Format(format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    Ok(body)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<(GridConfig, Vec<Sample>)> {
    let body = checked_body(bytes, DATASET_MAGIC)?;
    let mut r = Reader::new(body);
    let grid = GridConfig { rows: r.u32()? as usize, cols: r.u32()? as usize, temporal_depth: r.u32()? as usize };
    grid.validate().map_err(|e| Error::Format(format!("bad dataset header: {e}")))?;
    let n = r.u32()? as usize;
    let record = 16 + 4 * grid.len() + 16;
    if body.len() != 16 + n * record {
        return Err(Error::Format(format!("dataset body holds {} bytes, header implies {}", body.len(), 16 + n * record)));
    }
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let session_id = r.u64()?;
        let step = r.u64()?;
        let values = (0..grid.len()).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let label = [r.f64()?, r.f64()?];
        samples.push(Sample {
            features: FeatureTensor { rows: grid.rows, cols: grid.cols, depth: grid.temporal_depth, values },
            label,
            session_id,
            step,
        });
    }
    Ok((grid, samples))
}

pub fn save_dataset(path: &Path, samples: &[Sample], grid: &GridConfig) -> Result<()> {
    fs::write(path, encode_dataset(samples, grid)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<(GridConfig, Vec<Sample>)> {
    decode_dataset(&fs::read(path)?)
}

/// Distinct session ids, in first-seen order.
pub fn session_ids(samples: &[Sample]) -> Vec<u64> {
    let mut seen = HashSet::new();
    samples.iter().map(|s| s.session_id).filter(|id| seen.insert(*id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobility::{generate_scenario_par, ScenarioConfig};
    use crate::oracle::{label_rows, label_sessions};
    use crate::channel::ChannelParams;
    use crate::Position;
    use proptest::prelude::*;

    fn snapshots(points: &[Vec<Position>]) -> Vec<Snapshot> {
        points.iter().enumerate().map(|(t, p)| Snapshot { t, positions: p.clone() }).collect()
    }

    #[test]
    fn pile_lands_in_one_cell() {
        let grid = GridConfig::default();
        let pile = vec![Position::new(1234.0, 567.0); 30];
        let window = snapshots(&vec![pile; 5]);
        let f = featurize(&window, &grid, Area::default()).unwrap();
        for k in 0..5 {
            assert_eq!(f.get(k, 5, 12), 30.0);
            assert_eq!(f.slice(k).iter().sum::<f32>(), 30.0);
            assert_eq!(f.slice(k).iter().filter(|&&v| v != 0.0).count(), 1);
        }
    }

    #[test]
    fn top_right_corner_maps_to_last_cell() {
        let grid = GridConfig::default();
        assert_eq!(grid.cell_of(2000.0, 2000.0, Area::default()), (19, 19));
        assert_eq!(grid.cell_of(0.0, 0.0, Area::default()), (0, 0));
        assert_eq!(grid.cell_of(99.999, 100.0, Area::default()), (1, 0));
    }

    #[test]
    fn window_must_be_consecutive() {
        let grid = GridConfig::default();
        let mut w = snapshots(&vec![vec![Position::new(1.0, 1.0)]; 5]);
        assert!(featurize(&w[..4], &grid, Area::default()).is_err());
        w[3].t = 7;
        assert!(featurize(&w, &grid, Area::default()).is_err());
    }

    fn small_corpus(n: usize) -> (Vec<Session>, Vec<LabelRow>) {
        let cfg = ScenarioConfig::default();
        let sessions = generate_scenario_par(n, 0, 5, &cfg).unwrap();
        let labels = label_sessions(&sessions, &ChannelParams::default(), cfg.area).unwrap();
        let rows = label_rows(&sessions, &labels);
        (sessions, rows)
    }

    #[test]
    fn build_samples_counts_and_labels() {
        let (sessions, rows) = small_corpus(2);
        let grid = GridConfig::default();
        let area = Area::default();
        let samples = build_samples(&sessions[..1], &rows, &grid, area).unwrap();
        assert_eq!(samples.len(), 11);
        for s in &samples {
            let row = rows.iter().find(|r| r.session_id == s.session_id && r.step as u64 == s.step).unwrap();
            let (x, y) = denormalize_label(s.label, area);
            assert!((x - row.pose.x).abs() < 1e-9 && (y - row.pose.y).abs() < 1e-9);
            assert!(s.step >= 4);
            assert!((0.0..=1.0).contains(&s.label[0]) && (0.0..=1.0).contains(&s.label[1]));
        }
        let missing: Vec<LabelRow> = rows.iter().filter(|r| !(r.session_id == 1 && r.step == 9)).copied().collect();
        let err = build_samples(&sessions, &missing, &grid, area).unwrap_err();
        assert!(err.to_string().contains("session 1 step 9"), "{err}");
    }

    #[test]
    fn full_scale_sample_count() {
        // 72,000 sessions × (15 − 5 + 1) windows.
        assert_eq!(72_000 * (15 - TEMPORAL_DEPTH + 1), 792_000);
    }

    #[test]
    fn split_by_session() {
        let parts = split_sessions(0..72_000u64, [0.75, 0.0, 0.25], 9).unwrap();
        assert_eq!(parts.test.len(), 18_000);
        assert_eq!(parts.train.len(), 54_000);
        assert!(parts.val.is_empty());
        assert!(parts.train.is_disjoint(&parts.test));
        assert_eq!(parts, split_sessions(0..72_000u64, [0.75, 0.0, 0.25], 9).unwrap());
        assert_ne!(parts, split_sessions(0..72_000u64, [0.75, 0.0, 0.25], 10).unwrap());
        assert!(split_sessions(0..3u64, [0.5, 0.2, 0.2], 1).is_err());
        assert!(split_sessions(0..3u64, [0.9, 0.05, 0.05], 1).is_err());
    }

    #[test]
    fn split_samples_without_leakage() {
        let (sessions, rows) = small_corpus(8);
        let samples = build_samples(&sessions, &rows, &GridConfig::default(), Area::default()).unwrap();
        let (train, val, test) = split(samples.clone(), [0.5, 0.25, 0.25], 3).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), samples.len());
        let ids = |v: &[Sample]| v.iter().map(|s| s.session_id).collect::<BTreeSet<_>>();
        assert!(ids(&train).is_disjoint(&ids(&val)));
        assert!(ids(&train).is_disjoint(&ids(&test)));
        assert!(ids(&val).is_disjoint(&ids(&test)));
        assert_eq!(train.len() % 11, 0);
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let (sessions, rows) = small_corpus(2);
        let grid = GridConfig::default();
        let samples = build_samples(&sessions, &rows, &grid, Area::default()).unwrap();
        let bytes = encode_dataset(&samples, &grid).unwrap();
        let (g, back) = decode_dataset(&bytes).unwrap();
        assert_eq!(g, grid);
        assert_eq!(back, samples);

        let mut bad = bytes.clone();
        bad[100] ^= 0x10;
        assert!(matches!(decode_dataset(&bad), Err(Error::Format(m)) if m.contains("checksum")));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(Error::Format(m)) if m.contains("magic")));
        assert!(decode_dataset(&bytes[..bytes.len() - 9]).is_err());
    }

    #[test]
    fn empty_dataset_is_valid() {
        let grid = GridConfig::default();
        let bytes = encode_dataset(&[], &grid).unwrap();
        assert_eq!(bytes.len(), 6 + 16 + 4);
        let (g, back) = decode_dataset(&bytes).unwrap();
        assert_eq!(g, grid);
        assert!(back.is_empty());
    }

    proptest! {
        #[test]
        fn conservation_and_permutation_invariance(
            pts in proptest::collection::vec((0.0f64..=2000.0, 0.0f64..=2000.0), 1..60),
            seed in any::<u64>(),
        ) {
            let grid = GridConfig::default();
            let users: Vec<Position> = pts.iter().map(|&(x, y)| Position::new(x, y)).collect();
            let mut shuffled = users.clone();
            SplitMix64::new(seed).shuffle(&mut shuffled);
            let a = featurize(&snapshots(&vec![users.clone(); 5]), &grid, Area::default()).unwrap();
            let b = featurize(&snapshots(&vec![shuffled; 5]), &grid, Area::default()).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.values.len(), 20 * 20 * 5);
            for k in 0..5 {
                prop_assert_eq!(a.slice(k).iter().sum::<f32>() as usize, users.len());
            }
            let norm = a.normalized();
            for k in 0..5 {
                let s: f64 = norm[k * 400..(k + 1) * 400].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }
}

//! Coverage-optimal UAV placement (label generation).
//!
//! With the altitude fixed at `h_opt` the covered region of a UAV is a closed
//! disk of radius `r_max`, so the per-instant placement problem is maximum
//! disk coverage. [`DiskOracle::exact`] enumerates the classical candidate
//! set (every user position plus both intersection points of every pair of
//! radius-r circles) in O(n³); [`DiskOracle::grid`] scans a regular grid.
//!
//! Intersection candidates are generated on circles shrunk by
//! [`CANDIDATE_SHRINK_M`] so that, after rounding to 1e-6 m, they still lie
//! strictly inside the disks that define them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::channel::{max_coverage_radius, ChannelParams};
use crate::mobility::{parse, Session};
use crate::textfmt::fmt_f64;
use crate::{Area, Error, Position, Result, UavPose};

pub const CANDIDATE_SHRINK_M: f64 = 1e-5;
const ROUND_M: f64 = 1e-6;

/// Objective weights of the generic placement model. Only the coverage term
/// is active here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl ObjectiveWeights {
    pub const COVERAGE_ONLY: Self = Self { w1: 1.0, w2: 0.0, w3: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if *self != Self::COVERAGE_ONLY {
            return Err(Error::Validation(format!(
                "only coverage-only weights (1, 0, 0) are supported, got ({}, {}, {})",
                self.w1, self.w2, self.w3
            )));
        }
        Ok(())
    }
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self::COVERAGE_ONLY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementResult {
    pub pose: UavPose,
    pub covered: usize,
    pub runtime_ns: u64,
}

impl PlacementResult {
    /// Equality ignoring the wall-clock field.
    pub fn same_placement(&self, other: &Self) -> bool {
        self.pose == other.pose && self.covered == other.covered
    }
}

/// Fixed-radius maximum-coverage solver over a rectangular area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskOracle {
    pub radius: f64,
    pub altitude: f64,
    pub area: Area,
}

#[inline]
fn round_um(v: f64) -> f64 {
    (v / ROUND_M).round() * ROUND_M
}

#[inline]
fn lex_less(a: &Position, b: &Position) -> bool {
    a.x < b.x || (a.x == b.x && a.y < b.y)
}

impl DiskOracle {
    pub fn new(radius: f64, altitude: f64, area: Area) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Domain(format!("coverage radius must be > 0, got {radius}")));
        }
        if !(altitude > 0.0) {
            return Err(Error::Domain(format!("altitude must be > 0, got {altitude}")));
        }
        Ok(Self { radius, altitude, area })
    }

    /// Oracle for the channel's maximal coverage disk.
    pub fn from_channel(p: &ChannelParams, area: Area) -> Result<Self> {
        let disk = max_coverage_radius(p)?;
        Self::new(disk.radius, disk.altitude, area)
    }

    /// Number of users within the closed disk around `center`.
    pub fn count(&self, center: &Position, users: &[Position]) -> usize {
        let r2 = self.radius * self.radius;
        users.iter().filter(|u| center.dist_sq(u) <= r2).count()
    }

    fn result(&self, center: Position, covered: usize, start: Instant) -> PlacementResult {
        PlacementResult {
            pose: UavPose::new(center.x, center.y, self.altitude),
            covered,
            runtime_ns: start.elapsed().as_nanos() as u64,
        }
    }

    /// Exact maximum disk coverage by candidate enumeration.
    pub fn exact(&self, users: &[Position]) -> Result<PlacementResult> {
        let start = Instant::now();
        if users.is_empty() {
            return Err(Error::Validation("placement needs at least one user".into()));
        }
        let rc = if self.radius > 2.0 * CANDIDATE_SHRINK_M {
            self.radius - CANDIDATE_SHRINK_M
        } else {
            self.radius
        };
        let mut best = Position::default();
        let mut best_count = 0usize;
        let mut consider = |c: Position| {
            let c = self.area.clamp(c);
            let c = Position::new(round_um(c.x), round_um(c.y));
            let n = self.count(&c, users);
            if n > best_count || (n == best_count && lex_less(&c, &best)) {
                best = c;
                best_count = n;
            }
        };

        for u in users {
            consider(*u);
        }
        let reach_sq = 4.0 * rc * rc;
        for (i, a) in users.iter().enumerate() {
            for b in &users[i + 1..] {
                let d_sq = a.dist_sq(b);
                if d_sq == 0.0 || d_sq > reach_sq {
                    continue;
                }
                let d = d_sq.sqrt();
                let half = (rc * rc - d_sq / 4.0).max(0.0).sqrt();
                let mid = Position::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
                let (px, py) = (-(b.y - a.y) / d, (b.x - a.x) / d);
                consider(Position::new(mid.x + half * px, mid.y + half * py));
                consider(Position::new(mid.x - half * px, mid.y - half * py));
            }
        }
        Ok(self.result(best, best_count, start))
    }

    /// Best center among grid points `(i·step, j·step)` inside the area.
    pub fn grid(&self, users: &[Position], step: f64) -> Result<PlacementResult> {
        let start = Instant::now();
        if !(step > 0.0) {
            return Err(Error::Domain(format!("grid step must be > 0, got {step}")));
        }
        if step > self.area.width.min(self.area.height) {
            return Err(Error::Domain(format!(
                "grid step {step} exceeds the area side {}",
                self.area.width.min(self.area.height)
            )));
        }
        let nx = (self.area.width / step).floor() as usize + 1;
        let ny = (self.area.height / step).floor() as usize + 1;
        let r2 = self.radius * self.radius;
        let covers = |x: f64, j: usize, u: &Position| {
            let dx = x - u.x;
            let dy = j as f64 * step - u.y;
            dx * dx + dy * dy <= r2
        };

        let mut counts = vec![0i64; ny + 1];
        let mut best = Position::default();
        let mut best_count = 0usize;
        let mut found = false;
        for i in 0..nx {
            let x = i as f64 * step;
            counts.iter_mut().for_each(|c| *c = 0);
            for u in users {
                let dx = x - u.x;
                if dx * dx > r2 {
                    continue;
                }
                let half = (r2 - dx * dx).sqrt();
                let mut lo = ((u.y - half) / step).ceil().max(0.0) as usize;
                let mut hi = ((u.y + half) / step).floor().min((ny - 1) as f64) as i64;
                // Fix rounding at the ends with the exact predicate.
                while lo > 0 && covers(x, lo - 1, u) {
                    lo -= 1;
                }
                while (lo as i64) <= hi && !covers(x, lo, u) {
                    lo += 1;
                }
                while hi + 1 < ny as i64 && covers(x, (hi + 1) as usize, u) {
                    hi += 1;
                }
                while hi >= lo as i64 && !covers(x, hi as usize, u) {
                    hi -= 1;
                }
                if hi >= lo as i64 {
                    counts[lo] += 1;
                    counts[hi as usize + 1] -= 1;
                }
            }
            let mut running = 0i64;
            for (j, c) in counts.iter().take(ny).enumerate() {
                running += c;
                if !found || running as usize > best_count {
                    best_count = running as usize;
                    best = Position::new(x, j as f64 * step);
                    found = true;
                }
            }
        }
        Ok(self.result(best, best_count, start))
    }
}

/// Labels every instant of a session independently with the exact oracle.
pub fn label_session(session: &Session, p: &ChannelParams, area: Area) -> Result<Vec<PlacementResult>> {
    let oracle = DiskOracle::from_channel(p, area)?;
    label_with(&oracle, session)
}

pub fn label_with(oracle: &DiskOracle, session: &Session) -> Result<Vec<PlacementResult>> {
    if session.snapshots.is_empty() {
        return Err(Error::Validation(format!("session {} has no snapshots", session.id)));
    }
    session.snapshots.iter().map(|s| oracle.exact(&s.positions)).collect()
}

/// Labels many sessions in parallel; output is in input order.
pub fn label_sessions(sessions: &[Session], p: &ChannelParams, area: Area) -> Result<Vec<Vec<PlacementResult>>> {
    let oracle = DiskOracle::from_channel(p, area)?;
    sessions.par_iter().map(|s| label_with(&oracle, s)).collect()
}

/// One row of the labels file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRow {
    pub session_id: u64,
    pub step: usize,
    pub pose: UavPose,
    pub covered: usize,
}

pub const LABEL_HEADER: [&str; 6] = ["session_id", "step", "opt_x_m", "opt_y_m", "opt_h_m", "covered"];

pub fn label_rows(sessions: &[Session], labels: &[Vec<PlacementResult>]) -> Vec<LabelRow> {
    sessions
        .iter()
        .zip(labels)
        .flat_map(|(s, ls)| {
            s.snapshots.iter().zip(ls).map(move |(snap, l)| LabelRow {
                session_id: s.id,
                step: snap.t,
                pose: l.pose,
                covered: l.covered,
            })
        })
        .collect()
}

pub fn write_labels<W: Write>(out: W, rows: &[LabelRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(LABEL_HEADER)?;
    for r in rows {
        w.write_record([
            r.session_id.to_string(),
            r.step.to_string(),
            fmt_f64(r.pose.x),
            fmt_f64(r.pose.y),
            fmt_f64(r.pose.h),
            r.covered.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    write_labels(BufWriter::new(File::create(path)?), rows)
}

pub fn read_labels<R: Read>(input: R) -> Result<Vec<LabelRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(LABEL_HEADER) {
        return Err(Error::Validation(format!("unexpected labels header {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ctx = || format!("labels row {}", line + 2);
        if rec.len() != LABEL_HEADER.len() {
            return Err(Error::Validation(format!("{}: expected 6 fields", ctx())));
        }
        rows.push(LabelRow {
            session_id: parse(&rec[0], &ctx)?,
            step: parse(&rec[1], &ctx)?,
            pose: UavPose::new(parse(&rec[2], &ctx)?, parse(&rec[3], &ctx)?, parse(&rec[4], &ctx)?),
            covered: parse(&rec[5], &ctx)?,
        });
    }
    Ok(rows)
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelRow>> {
    read_labels(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobility::Snapshot;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn oracle(r: f64) -> DiskOracle {
        DiskOracle::new(r, 100.0, Area::default()).unwrap()
    }

    /// Naive grid scan over every 1 m point of the area; independent of the
    /// interval sweep used by `DiskOracle::grid`.
    fn brute_force_grid(users: &[Position], r: f64, area: Area) -> usize {
        let r2 = r * r;
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for u in users {
            x0 = x0.min(u.x - r);
            x1 = x1.max(u.x + r);
            y0 = y0.min(u.y - r);
            y1 = y1.max(u.y + r);
        }
        let xs = x0.max(0.0).ceil() as i64..=x1.min(area.width).floor() as i64;
        let ys = y0.max(0.0).ceil() as i64..=y1.min(area.height).floor() as i64;
        let mut best = 0;
        for x in xs {
            for y in ys.clone() {
                let (x, y) = (x as f64, y as f64);
                let n = users
                    .iter()
                    .filter(|u| (x - u.x) * (x - u.x) + (y - u.y) * (y - u.y) <= r2)
                    .count();
                best = best.max(n);
            }
        }
        best
    }

    fn random_users(rng: &mut SplitMix64, n: usize) -> Vec<Position> {
        (0..n).map(|_| Position::new(rng.uniform(0.0, 2000.0), rng.uniform(0.0, 2000.0))).collect()
    }

    #[test]
    fn three_users_in_one_disk() {
        let users = [Position::new(500.0, 500.0), Position::new(520.0, 480.0), Position::new(490.0, 530.0)];
        assert_eq!(oracle(300.0).exact(&users).unwrap().covered, 3);
    }

    #[test]
    fn picks_larger_cluster() {
        let r = 50.0;
        let users = [
            Position::new(100.0, 100.0),
            Position::new(110.0, 100.0),
            Position::new(600.0, 600.0),
            Position::new(605.0, 610.0),
            Position::new(595.0, 598.0),
        ];
        let res = oracle(r).exact(&users).unwrap();
        assert_eq!(res.covered, 3);
        assert!(res.pose.ground().dist(&Position::new(600.0, 603.0)) < 2.0 * r);
    }

    #[test]
    fn empty_users_is_an_error() {
        assert!(oracle(300.0).exact(&[]).is_err());
    }

    #[test]
    fn exact_matches_brute_force_grid() {
        let mut rng = SplitMix64::new(2024);
        for _ in 0..100 {
            let users = random_users(&mut rng, 10);
            let exact = oracle(300.0).exact(&users).unwrap();
            assert_eq!(exact.covered, brute_force_grid(&users, 300.0, Area::default()));
            assert_eq!(exact.covered, oracle(300.0).count(&exact.pose.ground(), &users));
        }
    }

    #[test]
    fn grid_one_metre_matches_brute_force() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..20 {
            let users = random_users(&mut rng, 10);
            let o = oracle(300.0);
            let g = o.grid(&users, 1.0).unwrap();
            assert!(g.covered <= o.exact(&users).unwrap().covered);
            assert_eq!(g.covered, brute_force_grid(&users, 300.0, Area::default()));
            assert_eq!(g.covered, o.count(&g.pose.ground(), &users));
        }
    }

    #[test]
    fn grid_single_user_and_coarse_step() {
        let o = oracle(30.0);
        let g = o.grid(&[Position::new(1234.4, 77.7)], 10.0).unwrap();
        assert_eq!(g.covered, 1);
        // Lexicographically first grid point within reach.
        assert_eq!(g.pose.ground(), Position::new(1210.0, 70.0));
        let g = o.grid(&[Position::new(1234.4, 77.7)], 1.0).unwrap();
        assert_eq!(g.covered, 1);

        let users = [Position::new(5.0, 5.0), Position::new(1000.0, 1000.0)];
        let corners = oracle(300.0).grid(&users, 2000.0).unwrap();
        assert!(corners.covered <= oracle(300.0).exact(&users).unwrap().covered);
        assert_eq!(corners.pose.ground(), Position::new(0.0, 0.0));
        assert!(oracle(300.0).grid(&users, 2000.5).is_err());
        assert!(oracle(300.0).grid(&users, 0.0).is_err());
    }

    #[test]
    fn label_session_static_and_single() {
        let p = ChannelParams::default();
        let users: Vec<Position> = (0..30).map(|i| Position::new(800.0 + 13.0 * i as f64, 900.0 + (i % 7) as f64 * 40.0)).collect();
        let session = Session {
            id: 3,
            seed: None,
            snapshots: (0..15).map(|t| Snapshot { t, positions: users.clone() }).collect(),
        };
        let labels = label_session(&session, &p, Area::default()).unwrap();
        assert_eq!(labels.len(), 15);
        assert!(labels.iter().all(|l| l.same_placement(&labels[0])));

        let one = Session { snapshots: session.snapshots[..1].to_vec(), ..session.clone() };
        assert_eq!(label_session(&one, &p, Area::default()).unwrap().len(), 1);

        let empty = Session { snapshots: vec![], ..session };
        assert!(label_session(&empty, &p, Area::default()).is_err());
    }

    #[test]
    fn label_session_matches_per_instant_calls() {
        let p = ChannelParams::default();
        let cfg = crate::mobility::ScenarioConfig::default();
        let s = crate::mobility::generate_session(0, 11, &cfg).unwrap();
        let labels = label_session(&s, &p, cfg.area).unwrap();
        let disk = max_coverage_radius(&p).unwrap();
        let o = DiskOracle::new(disk.radius, disk.altitude, cfg.area).unwrap();
        for (snap, l) in s.snapshots.iter().zip(&labels) {
            let direct = o.exact(&snap.positions).unwrap();
            assert!(direct.same_placement(l));
            assert_eq!(l.pose.h, disk.altitude);
        }
    }

    #[test]
    fn weights_must_be_coverage_only() {
        assert!(ObjectiveWeights::default().validate().is_ok());
        assert!(ObjectiveWeights { w1: 1.0, w2: 0.5, w3: 0.0 }.validate().is_err());
    }

    #[test]
    fn labels_csv_round_trip() {
        let rows = vec![
            LabelRow { session_id: 0, step: 0, pose: UavPose::new(1.0 / 3.0, 1999.999999, 272.6), covered: 12 },
            LabelRow { session_id: 0, step: 1, pose: UavPose::new(0.0, 2000.0, 272.6), covered: 0 },
        ];
        let mut buf = Vec::new();
        write_labels(&mut buf, &rows).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("session_id,step,opt_x_m,opt_y_m,opt_h_m,covered\n"));
        assert_eq!(read_labels(&buf[..]).unwrap(), rows);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn exact_dominates_grid(seed in any::<u64>(), n in 1usize..15, step in 5.0f64..400.0) {
            let mut rng = SplitMix64::new(seed);
            let users = random_users(&mut rng, n);
            let o = oracle(250.0);
            let e = o.exact(&users).unwrap();
            let g = o.grid(&users, step).unwrap();
            prop_assert!(g.covered <= e.covered);
            prop_assert!(e.covered <= n);
            prop_assert!(o.area.contains(&e.pose.ground()));
            prop_assert!(e.same_placement(&o.exact(&users).unwrap()));
        }

        #[test]
        fn translation_equivariance(seed in any::<u64>(), dx in -300.0f64..300.0, dy in -300.0f64..300.0) {
            // Users stay far enough from the border that no candidate is clamped.
            let mut rng = SplitMix64::new(seed);
            let users: Vec<Position> = (0..12)
                .map(|_| Position::new(rng.uniform(700.0, 1300.0), rng.uniform(700.0, 1300.0)))
                .collect();
            let moved: Vec<Position> = users.iter().map(|u| Position::new(u.x + dx, u.y + dy)).collect();
            let o = oracle(200.0);
            let a = o.exact(&users).unwrap();
            let b = o.exact(&moved).unwrap();
            prop_assert_eq!(a.covered, b.covered);
            prop_assert!((a.pose.x + dx - b.pose.x).abs() < 1e-5);
            prop_assert!((a.pose.y + dy - b.pose.y).abs() < 1e-5);
        }
    }
}

//! Session-based mobile-user trajectories.
//!
//! At the start of every session a hotspot centre is drawn uniformly over the
//! area inset by the hotspot radius, and each user starts uniformly inside
//! the hotspot disk. Each user then moves with a constant velocity (uniform
//! heading, uniform speed) for the whole session, reflecting specularly off
//! the area boundary.
//!
//! Draw order from the session RNG: centre x, centre y, then per user
//! (radius variate, angle variate, heading variate, speed variate).

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::rng::{split, SplitMix64};
use crate::textfmt::fmt_f64;
use crate::{Area, Error, Position, Result};

/// Positions of all users at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Step index within the session.
    pub t: usize,
    pub positions: Vec<Position>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: u64,
    /// Generation seed; `None` for sessions read back from a trajectory file.
    pub seed: Option<u64>,
    pub snapshots: Vec<Snapshot>,
}

impl Session {
    pub fn n_users(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.positions.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub area: Area,
    pub n_users: usize,
    pub hotspot_radius: f64,
    /// Speed interval in m/s, `speed_min ≤ speed_max`.
    pub speed_min: f64,
    pub speed_max: f64,
    pub steps_per_session: usize,
    pub step_seconds: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area: Area::default(),
            n_users: 30,
            hotspot_radius: 600.0,
            speed_min: 1.0,
            speed_max: 5.0,
            steps_per_session: 15,
            step_seconds: 4.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        Area::new(self.area.width, self.area.height)?;
        if self.n_users == 0 {
            return bad("scenario.n_users must be >= 1".into());
        }
        let half = self.area.width.min(self.area.height) / 2.0;
        if !(self.hotspot_radius >= 0.0 && self.hotspot_radius <= half) {
            return bad(format!(
                "scenario.hotspot_radius = {} must lie in [0, {half}]",
                self.hotspot_radius
            ));
        }
        if !(self.speed_min >= 0.0 && self.speed_max >= self.speed_min) {
            return bad(format!(
                "invalid speed range [{}, {}]",
                self.speed_min, self.speed_max
            ));
        }
        if !(self.step_seconds > 0.0 && self.step_seconds.is_finite()) {
            return bad(format!("scenario.step_seconds must be > 0, got {}", self.step_seconds));
        }
        // One reflection per step is enough only below this speed.
        let limit = half / self.step_seconds;
        if self.speed_max > limit {
            return bad(format!(
                "scenario.speed_max = {} exceeds {limit} m/s (half the area side per step)",
                self.speed_max
            ));
        }
        if self.steps_per_session < 1 {
            return bad("scenario.steps_per_session must be >= 1".into());
        }
        Ok(())
    }
}

/// Specular reflection of one coordinate into `[0, max]`.
fn reflect(coord: f64, vel: f64, max: f64) -> (f64, f64) {
    if coord > max {
        (2.0 * max - coord, -vel)
    } else if coord < 0.0 {
        (-coord, -vel)
    } else {
        (coord, vel)
    }
}

/// Generates one session; a pure function of `(id, seed, cfg)`.
pub fn generate_session(id: u64, seed: u64, cfg: &ScenarioConfig) -> Result<Session> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(seed);
    let r = cfg.hotspot_radius;
    let center = Position::new(
        rng.uniform(r, cfg.area.width - r),
        rng.uniform(r, cfg.area.height - r),
    );

    let mut positions = Vec::with_capacity(cfg.n_users);
    let mut velocities = Vec::with_capacity(cfg.n_users);
    for _ in 0..cfg.n_users {
        let rho = r * rng.next_f64().sqrt();
        let phi = TAU * rng.next_f64();
        let heading = TAU * rng.next_f64();
        let speed = rng.uniform(cfg.speed_min, cfg.speed_max);
        let p = Position::new(center.x + rho * phi.cos(), center.y + rho * phi.sin());
        positions.push(cfg.area.clamp(p));
        velocities.push((speed * heading.cos(), speed * heading.sin()));
    }

    let mut snapshots = Vec::with_capacity(cfg.steps_per_session);
    snapshots.push(Snapshot { t: 0, positions: positions.clone() });
    for t in 1..cfg.steps_per_session {
        for (p, v) in positions.iter_mut().zip(velocities.iter_mut()) {
            let (x, vx) = reflect(p.x + v.0 * cfg.step_seconds, v.0, cfg.area.width);
            let (y, vy) = reflect(p.y + v.1 * cfg.step_seconds, v.1, cfg.area.height);
            *p = Position::new(x, y);
            *v = (vx, vy);
        }
        snapshots.push(Snapshot { t, positions: positions.clone() });
    }
    Ok(Session { id, seed: Some(seed), snapshots })
}

/// Lazily generates sessions `first_id .. first_id + n_sessions`; session
/// `id` uses seed `split(master_seed, id)`.
pub fn generate_scenario(
    n_sessions: usize,
    first_id: u64,
    master_seed: u64,
    cfg: &ScenarioConfig,
) -> impl Iterator<Item = Result<Session>> + '_ {
    (0..n_sessions as u64).map(move |i| {
        let id = first_id + i;
        generate_session(id, split(master_seed, id), cfg)
    })
}

/// Parallel counterpart of [`generate_scenario`]; output is identical and in
/// id order.
pub fn generate_scenario_par(
    n_sessions: usize,
    first_id: u64,
    master_seed: u64,
    cfg: &ScenarioConfig,
) -> Result<Vec<Session>> {
    cfg.validate()?;
    (0..n_sessions as u64)
        .into_par_iter()
        .map(|i| {
            let id = first_id + i;
            generate_session(id, split(master_seed, id), cfg)
        })
        .collect()
}

pub const TRAJECTORY_HEADER: [&str; 5] = ["session_id", "step", "mu_id", "x_m", "y_m"];

/// Writes `session_id,step,mu_id,x_m,y_m` rows sorted by (session, step, mu).
pub fn write_trajectories<W: Write>(out: W, sessions: &[Session]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    let mut sorted: Vec<&Session> = sessions.iter().collect();
    sorted.sort_by_key(|s| s.id);
    for s in sorted {
        for snap in &s.snapshots {
            for (mu, p) in snap.positions.iter().enumerate() {
                w.write_record([
                    s.id.to_string(),
                    snap.t.to_string(),
                    mu.to_string(),
                    fmt_f64(p.x),
                    fmt_f64(p.y),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectories(path: &Path, sessions: &[Session]) -> Result<()> {
    write_trajectories(BufWriter::new(File::create(path)?), sessions)
}

/// Reads a trajectory file back into sessions, checking ordering and shape.
pub fn read_trajectories<R: Read>(input: R) -> Result<Vec<Session>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRAJECTORY_HEADER) {
        return Err(Error::Validation(format!("unexpected trajectory header {header:?}")));
    }
    let mut sessions: Vec<Session> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ctx = || format!("trajectory row {}", line + 2);
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Validation(format!("{}: missing field {i}", ctx())));
        let id: u64 = parse(field(0)?, &ctx)?;
        let t: usize = parse(field(1)?, &ctx)?;
        let mu: usize = parse(field(2)?, &ctx)?;
        let p = Position::new(parse(field(3)?, &ctx)?, parse(field(4)?, &ctx)?);

        if sessions.last().map_or(true, |s| s.id != id) {
            if let Some(prev) = sessions.last() {
                if prev.id > id {
                    return Err(Error::Validation(format!("{}: sessions not sorted", ctx())));
                }
            }
            sessions.push(Session { id, seed: None, snapshots: Vec::new() });
        }
        let session = sessions.last_mut().expect("pushed above");
        if session.snapshots.last().map_or(true, |s| s.t != t) {
            if t != session.snapshots.len() {
                return Err(Error::Validation(format!("{}: expected step {}", ctx(), session.snapshots.len())));
            }
            session.snapshots.push(Snapshot { t, positions: Vec::new() });
        }
        let snap = session.snapshots.last_mut().expect("pushed above");
        if mu != snap.positions.len() {
            return Err(Error::Validation(format!("{}: expected mu_id {}", ctx(), snap.positions.len())));
        }
        snap.positions.push(p);
    }
    for s in &sessions {
        let n = s.n_users();
        if s.snapshots.iter().any(|snap| snap.positions.len() != n) {
            return Err(Error::Validation(format!("session {}: user count varies across steps", s.id)));
        }
    }
    Ok(sessions)
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Session>> {
    read_trajectories(BufReader::new(File::open(path)?))
}

pub(crate) fn parse<T: std::str::FromStr>(s: &str, ctx: &dyn Fn() -> String) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Validation(format!("{}: cannot parse {s:?}", ctx())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_speed_gives_static_session() {
        let cfg = ScenarioConfig { speed_min: 0.0, speed_max: 0.0, ..Default::default() };
        let s = generate_session(0, 17, &cfg).unwrap();
        assert_eq!(s.snapshots.len(), 15);
        for snap in &s.snapshots {
            assert_eq!(snap.positions, s.snapshots[0].positions);
        }
    }

    #[test]
    fn constant_velocity_kinematics() {
        let area = Area::default();
        let mut p = Position::new(100.0, 100.0);
        let mut v = (5.0, 0.0);
        for _ in 0..3 {
            let (x, vx) = reflect(p.x + v.0 * 4.0, v.0, area.width);
            p.x = x;
            v.0 = vx;
        }
        assert_eq!(p, Position::new(160.0, 100.0));
    }

    #[test]
    fn reflection_at_right_edge() {
        assert_eq!(reflect(1990.0 + 20.0, 5.0, 2000.0), (1990.0, -5.0));
        assert_eq!(reflect(-3.0, -1.0, 2000.0), (3.0, 1.0));
    }

    #[test]
    fn scenario_is_reproducible_and_parallel_matches_serial() {
        let cfg = ScenarioConfig::default();
        let a: Vec<_> = generate_scenario(20, 0, 99, &cfg).collect::<Result<_>>().unwrap();
        let b: Vec<_> = generate_scenario(20, 0, 99, &cfg).collect::<Result<_>>().unwrap();
        let c = generate_scenario_par(20, 0, 99, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        // A later block continues the same id space.
        let tail = generate_scenario_par(5, 15, 99, &cfg).unwrap();
        assert_eq!(&a[15..], &tail[..]);
    }

    #[test]
    fn distinct_hotspots_across_sessions() {
        let cfg = ScenarioConfig { speed_min: 0.0, speed_max: 0.0, hotspot_radius: 0.0, ..Default::default() };
        let sessions = generate_scenario_par(2000, 0, 3, &cfg).unwrap();
        for pair in sessions.chunks(2) {
            assert_ne!(pair[0].snapshots[0].positions[0], pair[1].snapshots[0].positions[0]);
        }
    }

    #[test]
    fn full_scale_snapshot_count() {
        // 72,000 sessions of 15 instants.
        let cfg = ScenarioConfig::default();
        let count: usize = generate_scenario(72_000, 0, 1, &cfg)
            .map(|s| s.unwrap().snapshots.len())
            .sum();
        assert_eq!(count, 1_080_000);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = ScenarioConfig { hotspot_radius: 1500.0, ..Default::default() };
        assert!(generate_session(0, 1, &cfg).is_err());
        let cfg = ScenarioConfig { speed_min: 3.0, speed_max: 1.0, ..Default::default() };
        assert!(generate_session(0, 1, &cfg).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let cfg = ScenarioConfig::default();
        let sessions = generate_scenario_par(3, 10, 5, &cfg).unwrap();
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &sessions).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("session_id,step,mu_id,x_m,y_m\n"));
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 1 + 3 * 15 * 30);
        let back = read_trajectories(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in sessions.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.snapshots, b.snapshots);
        }
    }

    #[test]
    fn csv_rejects_gaps() {
        let text = "session_id,step,mu_id,x_m,y_m\n0,0,0,1.0,1.0\n0,2,0,1.0,1.0\n";
        assert!(read_trajectories(text.as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn session_invariants(seed in any::<u64>(), smax in 0.0f64..250.0, radius in 0.0f64..1000.0) {
            let cfg = ScenarioConfig { speed_min: 0.0, speed_max: smax, hotspot_radius: radius, ..Default::default() };
            let s = generate_session(7, seed, &cfg).unwrap();
            prop_assert_eq!(s.snapshots.len(), 15);
            let first = &s.snapshots[0].positions;
            for a in first {
                for b in first {
                    prop_assert!(a.dist(b) <= 2.0 * radius + 1e-9);
                }
            }
            for snap in &s.snapshots {
                for p in &snap.positions {
                    prop_assert!(cfg.area.contains(p));
                }
            }
            // Step length is constant per user; a shorter straight-line step
            // only happens when the user bounced off a wall during it.
            for mu in 0..cfg.n_users {
                let steps: Vec<(Position, Position)> = s.snapshots.windows(2)
                    .map(|w| (w[0].positions[mu], w[1].positions[mu]))
                    .collect();
                let full = steps.iter().map(|(a, b)| a.dist(b)).fold(0.0, f64::max);
                prop_assert!(full <= smax * cfg.step_seconds + 1e-9);
                for (a, b) in &steps {
                    if (a.dist(b) - full).abs() > 1e-9 {
                        let near_wall = |p: &Position| {
                            p.x <= full || p.y <= full
                                || cfg.area.width - p.x <= full || cfg.area.height - p.y <= full
                        };
                        prop_assert!(near_wall(a) && near_wall(b));
                    }
                }
            }
        }
    }
}

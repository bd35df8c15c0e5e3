//! Method comparison: coverage series, CDFs, gaps to the oracle and runtime
//! benchmarks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::channel::{is_covered, ChannelParams};
use crate::cnn::{CnnModel, Scalar};
use crate::dataset::{denormalize_label, featurize, featurize_session, GridConfig};
use crate::mobility::{parse, Session, Snapshot};
use crate::oracle::{DiskOracle, PlacementResult};
use crate::rl::{rl_policy_positions, Policy};
use crate::textfmt::fmt_f64;
use crate::{Area, Error, Result, UavPose};

pub const ORACLE: &str = "oracle";

/// Users at `snapshot` served by a UAV at `pose`.
pub fn coverage_of(pose: &UavPose, snapshot: &Snapshot, p: &ChannelParams) -> usize {
    snapshot.positions.iter().filter(|u| is_covered(pose, u, p)).count()
}

/// Poses of one method keyed by `(session id, step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodPoses {
    pub name: String,
    pub poses: BTreeMap<(u64, usize), UavPose>,
}

impl MethodPoses {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), poses: BTreeMap::new() }
    }

    /// Keeps only steps `>= from_step`.
    pub fn from_step(mut self, from_step: usize) -> Self {
        self.poses.retain(|&(_, step), _| step >= from_step);
        self
    }
}

pub fn oracle_poses(sessions: &[Session], labels: &[Vec<PlacementResult>]) -> Result<MethodPoses> {
    if sessions.len() != labels.len() {
        return Err(Error::Validation("one label list per session required".into()));
    }
    let mut m = MethodPoses::new(ORACLE);
    for (s, ls) in sessions.iter().zip(labels) {
        for (step, l) in ls.iter().enumerate() {
            m.poses.insert((s.id, step), l.pose);
        }
    }
    Ok(m)
}

/// CNN placements for every step with a full feature window.
pub fn cnn_poses<F: Scalar>(
    model: &CnnModel<F>,
    sessions: &[Session],
    grid: &GridConfig,
    area: Area,
    altitude: f64,
) -> Result<MethodPoses> {
    let per_session: Vec<Vec<((u64, usize), UavPose)>> = sessions
        .par_iter()
        .map(|s| {
            let steps: Vec<usize> = (grid.temporal_depth - 1..s.snapshots.len()).collect();
            let feats = steps.iter().map(|&t| featurize_session(s, t, grid, area)).collect::<Result<Vec<_>>>()?;
            let preds = model.predict_batch(&feats)?;
            Ok(steps
                .into_iter()
                .zip(preds)
                .map(|(t, p)| {
                    let (x, y) = denormalize_label(p, area);
                    ((s.id, t), UavPose::new(x, y, altitude))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut m = MethodPoses::new("cnn");
    m.poses.extend(per_session.into_iter().flatten());
    Ok(m)
}

/// Greedy rollouts of an RL policy, one pose per instant.
pub fn policy_poses(
    name: &str,
    policy: &(dyn Policy + Sync),
    sessions: &[Session],
    grid: GridConfig,
    area: Area,
    p: &ChannelParams,
) -> Result<MethodPoses> {
    let per_session: Vec<Vec<UavPose>> =
        sessions.par_iter().map(|s| rl_policy_positions(policy, s, grid, area, p)).collect::<Result<_>>()?;
    let mut m = MethodPoses::new(name);
    for (s, poses) in sessions.iter().zip(per_session) {
        for (t, pose) in poses.into_iter().enumerate() {
            m.poses.insert((s.id, t), pose);
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub name: String,
    /// Covered users per instant, aligned with [`EvalReport::instants`].
    pub covered: Vec<usize>,
    /// Oracle coverage minus this method's coverage, per instant.
    pub gaps: Vec<i64>,
    pub mean_covered: f64,
    pub mean_gap: f64,
    pub median_gap: f64,
    /// Mean horizontal distance to the oracle placement, metres.
    pub mean_position_error_m: f64,
    /// `cdf[k]` = share of instants with at most `k` users covered.
    pub cdf: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeStats {
    pub instances: usize,
    pub oracle_median_ns: f64,
    pub cnn_median_ns: f64,
    /// Oracle median over CNN median.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_users: usize,
    pub instants: Vec<(u64, usize)>,
    pub methods: Vec<MethodReport>,
    pub runtime: Option<RuntimeStats>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }
}

fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2],
        n => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
    }
}

/// Empirical CDF of `values` on the support `0..=max`.
pub fn coverage_cdf(values: &[usize], max: usize) -> Vec<f64> {
    let mut hist = vec![0usize; max + 1];
    for &v in values {
        hist[v.min(max)] += 1;
    }
    let total = values.len().max(1) as f64;
    let mut acc = 0;
    hist.iter()
        .map(|&h| {
            acc += h;
            acc as f64 / total
        })
        .collect()
}

/// Compares every method with the method named [`ORACLE`] on the oracle's
/// instants at steps `>= from_step`. Every method must provide exactly that
/// instant set.
pub fn evaluate(sessions: &[Session], methods: &[MethodPoses], p: &ChannelParams, from_step: usize) -> Result<EvalReport> {
    let oracle = methods
        .iter()
        .find(|m| m.name == ORACLE)
        .ok_or_else(|| Error::Validation("evaluation needs an oracle method".into()))?;
    let instants: Vec<(u64, usize)> = oracle.poses.keys().copied().filter(|&(_, t)| t >= from_step).collect();
    if instants.is_empty() {
        return Err(Error::Validation("no instants to evaluate".into()));
    }
    let wanted: BTreeSet<(u64, usize)> = instants.iter().copied().collect();
    for m in methods {
        let got: BTreeSet<(u64, usize)> = m.poses.keys().copied().filter(|&(_, t)| t >= from_step).collect();
        if got != wanted {
            let missing = wanted.difference(&got).next();
            let extra = got.difference(&wanted).next();
            return Err(Error::Validation(format!(
                "method {} covers a different instant set (missing {missing:?}, extra {extra:?})",
                m.name
            )));
        }
    }
    let by_id: HashMap<u64, &Session> = sessions.iter().map(|s| (s.id, s)).collect();
    let snapshots: Vec<&Snapshot> = instants
        .iter()
        .map(|&(id, t)| {
            by_id
                .get(&id)
                .and_then(|s| s.snapshots.get(t))
                .ok_or_else(|| Error::Validation(format!("no snapshot for session {id} step {t}")))
        })
        .collect::<Result<_>>()?;
    let n_users = snapshots.iter().map(|s| s.positions.len()).max().unwrap_or(0);

    let count = |m: &MethodPoses| -> Vec<usize> {
        instants.par_iter().zip(&snapshots).map(|(k, snap)| coverage_of(&m.poses[k], snap, p)).collect()
    };
    let oracle_cov = count(oracle);
    let reports = methods
        .iter()
        .map(|m| {
            let covered = count(m);
            let gaps: Vec<i64> = oracle_cov.iter().zip(&covered).map(|(&o, &c)| o as i64 - c as i64).collect();
            let n = instants.len() as f64;
            let mut sorted: Vec<f64> = gaps.iter().map(|&g| g as f64).collect();
            sorted.sort_by(f64::total_cmp);
            let pos_err: f64 = instants
                .iter()
                .map(|k| {
                    let (a, b) = (&m.poses[k], &oracle.poses[k]);
                    (a.x - b.x).hypot(a.y - b.y)
                })
                .sum::<f64>()
                / n;
            MethodReport {
                name: m.name.clone(),
                mean_covered: covered.iter().sum::<usize>() as f64 / n,
                mean_gap: gaps.iter().sum::<i64>() as f64 / n,
                median_gap: median(&sorted),
                mean_position_error_m: pos_err,
                cdf: coverage_cdf(&covered, n_users),
                covered,
                gaps,
            }
        })
        .collect();
    Ok(EvalReport { n_users, instants, methods: reports, runtime: None })
}

/// Median wall-clock time of the exact oracle and of CNN inference
/// (featurisation plus forward pass) over `windows`. The oracle solves the
/// last snapshot of each window. Every instance is run `repeats` times after
/// one warm-up pass and its mean taken; the medians are over instances.
pub fn bench_runtime<F: Scalar>(
    oracle: &DiskOracle,
    model: &CnnModel<F>,
    grid: &GridConfig,
    area: Area,
    windows: &[&[Snapshot]],
    repeats: usize,
) -> Result<RuntimeStats> {
    if windows.is_empty() || repeats == 0 {
        return Err(Error::Validation("benchmark needs instances and repeats".into()));
    }
    let last = |w: &[Snapshot]| -> Result<Vec<crate::Position>> {
        w.last().map(|s| s.positions.clone()).ok_or_else(|| Error::Validation("empty window".into()))
    };
    let time = |f: &mut dyn FnMut() -> Result<()>| -> Result<f64> {
        f()?;
        let start = Instant::now();
        for _ in 0..repeats {
            f()?;
        }
        Ok(start.elapsed().as_nanos() as f64 / repeats as f64)
    };
    let mut t_oracle = Vec::with_capacity(windows.len());
    let mut t_cnn = Vec::with_capacity(windows.len());
    for w in windows {
        let users = last(w)?;
        t_oracle.push(time(&mut || {
            std::hint::black_box(oracle.exact(std::hint::black_box(&users))?);
            Ok(())
        })?);
        t_cnn.push(time(&mut || {
            let f = featurize(std::hint::black_box(w), grid, area)?;
            std::hint::black_box(model.predict(&f)?);
            Ok(())
        })?);
    }
    t_oracle.sort_by(f64::total_cmp);
    t_cnn.sort_by(f64::total_cmp);
    let (o, c) = (median(&t_oracle), median(&t_cnn));
    Ok(RuntimeStats { instances: windows.len(), oracle_median_ns: o, cnn_median_ns: c, ratio: o / c })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub const SUMMARY_FILE: &str = "report_summary.csv";
pub const CDF_FILE: &str = "report_cdf.csv";
pub const SERIES_FILE: &str = "report_series.csv";
pub const TEXT_FILE: &str = "report_summary.txt";

const SUMMARY_HEADER: [&str; 6] = ["method", "instants", "mean_covered", "mean_gap", "median_gap", "mean_position_error_m"];
const CDF_HEADER: [&str; 3] = ["method", "covered", "cum_prob"];
const SERIES_HEADER: [&str; 3] = ["method", "step", "covered"];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub instants: usize,
    pub mean_covered: f64,
    pub mean_gap: f64,
    pub median_gap: f64,
    pub mean_position_error_m: f64,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(File::create(path)?)))
}

/// Writes the three CSV tables and a plain-text summary into `dir`.
/// In the series table `step` is the index of the instant in evaluation
/// order (sessions ascending, then steps).
pub fn export_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv_writer(&dir.join(SUMMARY_FILE))?;
    w.write_record(SUMMARY_HEADER)?;
    for m in &report.methods {
        w.write_record([
            m.name.clone(),
            m.covered.len().to_string(),
            fmt_f64(m.mean_covered),
            fmt_f64(m.mean_gap),
            fmt_f64(m.median_gap),
            fmt_f64(m.mean_position_error_m),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(CDF_FILE))?;
    w.write_record(CDF_HEADER)?;
    for m in &report.methods {
        for (k, c) in m.cdf.iter().enumerate() {
            w.write_record([m.name.clone(), k.to_string(), fmt_f64(*c)])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(SERIES_FILE))?;
    w.write_record(SERIES_HEADER)?;
    for m in &report.methods {
        for (k, c) in m.covered.iter().enumerate() {
            w.write_record([m.name.clone(), k.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;

    std::fs::write(dir.join(TEXT_FILE), summary_text(report))?;
    Ok(())
}

pub fn summary_text(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "instants: {}", report.instants.len());
    let _ = writeln!(s, "users per instant: {}", report.n_users);
    for m in &report.methods {
        let _ = writeln!(
            s,
            "{}: mean covered {:.3}, mean gap {:.3}, median gap {:.1}, mean position error {:.1} m",
            m.name, m.mean_covered, m.mean_gap, m.median_gap, m.mean_position_error_m
        );
    }
    if let Some(r) = report.runtime {
        let _ = writeln!(
            s,
            "runtime over {} instances: oracle median {:.0} ns, cnn median {:.0} ns, ratio {:.3}",
            r.instances, r.oracle_median_ns, r.cnn_median_ns, r.ratio
        );
    }
    s
}

fn read_rows<R: Read>(input: R, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(header.iter().copied()) {
        return Err(Error::Format(format!("expected header {}", header.join(","))));
    }
    Ok(r.records().collect::<std::result::Result<_, _>>()?)
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    read_rows(input, &SUMMARY_HEADER)?
        .iter()
        .map(|r| {
            let f = |i: usize| parse::<f64>(&r[i], &|| SUMMARY_HEADER[i].to_string());
            Ok(SummaryRow {
                method: r[0].to_string(),
                instants: parse(&r[1], &|| "instants".into())?,
                mean_covered: f(2)?,
                mean_gap: f(3)?,
                median_gap: f(4)?,
                mean_position_error_m: f(5)?,
            })
        })
        .collect()
}

pub fn read_cdf<R: Read>(input: R) -> Result<Vec<(String, usize, f64)>> {
    read_rows(input, &CDF_HEADER)?
        .iter()
        .map(|r| Ok((r[0].to_string(), parse(&r[1], &|| "covered".into())?, parse(&r[2], &|| "cum_prob".into())?)))
        .collect()
}

pub fn read_series<R: Read>(input: R) -> Result<Vec<(String, usize, usize)>> {
    read_rows(input, &SERIES_HEADER)?
        .iter()
        .map(|r| Ok((r[0].to_string(), parse(&r[1], &|| "step".into())?, parse(&r[2], &|| "covered".into())?)))
        .collect()
}

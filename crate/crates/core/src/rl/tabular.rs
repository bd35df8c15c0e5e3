//! Tabular Q-learning and Double Q-learning.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::env::{Environment, Policy};
use super::{argmax, epsilon};
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RlConfig {
    pub episodes: usize,
    /// Initial step size; the step for a state-action pair visited `k`
    /// times is `alpha / sqrt(k)`.
    pub alpha: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Share of the episodes over which ε decays linearly.
    pub eps_decay_fraction: f64,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self { episodes: 6000, alpha: 0.1, gamma: 0.99, eps_start: 1.0, eps_end: 0.05, eps_decay_fraction: 0.5, seed: 0 }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.episodes == 0 {
            return Err(Error::Config("rl episodes must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !unit(self.gamma) {
            return Err(Error::Config(format!("alpha must be in (0,1] and gamma in [0,1], got {} and {}", self.alpha, self.gamma)));
        }
        if !unit(self.eps_start) || !unit(self.eps_end) || !(self.eps_decay_fraction > 0.0 && self.eps_decay_fraction <= 1.0) {
            return Err(Error::Config("epsilon schedule values must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Action values per discrete state; unseen states read as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_actions: usize,
    pub values: BTreeMap<u64, Vec<f64>>,
}

pub const QTABLE_HEADER: [&str; 6] = ["state_code", "q_up", "q_down", "q_left", "q_right", "q_stay"];

impl QTable {
    pub fn new(n_actions: usize) -> Self {
        Self { n_actions, values: BTreeMap::new() }
    }

    pub fn get(&self, state: u64) -> Vec<f64> {
        self.values.get(&state).cloned().unwrap_or_else(|| vec![0.0; self.n_actions])
    }

    pub fn entry(&mut self, state: u64) -> &mut Vec<f64> {
        let n = self.n_actions;
        self.values.entry(state).or_insert_with(|| vec![0.0; n])
    }

    pub fn greedy(&self, state: u64) -> usize {
        argmax(&self.get(state))
    }

    pub fn all_finite(&self) -> bool {
        self.values.values().all(|q| q.iter().all(|v| v.is_finite()))
    }

    /// Element-wise mean of two tables over the union of their states.
    pub fn mean(a: &QTable, b: &QTable) -> QTable {
        let mut out = QTable::new(a.n_actions);
        for &s in a.values.keys().chain(b.values.keys()) {
            let (qa, qb) = (a.get(s), b.get(s));
            out.values.insert(s, qa.iter().zip(&qb).map(|(x, y)| (x + y) / 2.0).collect());
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        if self.n_actions != 5 {
            return Err(Error::Validation(format!("Q-table CSV holds 5 actions, table has {}", self.n_actions)));
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(QTABLE_HEADER)?;
        for (s, q) in &self.values {
            let mut rec = vec![s.to_string()];
            rec.extend(q.iter().map(|&v| crate::textfmt::fmt_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(input);
        if r.headers()?.iter().ne(QTABLE_HEADER) {
            return Err(Error::Format(format!("Q-table header must be {}", QTABLE_HEADER.join(","))));
        }
        let mut table = QTable::new(5);
        for rec in r.records() {
            let rec = rec?;
            let s: u64 = crate::mobility::parse(&rec[0], &|| "state_code".to_string())?;
            let q = (1..6).map(|i| crate::mobility::parse::<f64>(&rec[i], &|| QTABLE_HEADER[i].to_string())).collect::<Result<Vec<_>>>()?;
            if q.iter().any(|v| !v.is_finite()) || table.values.insert(s, q).is_some() {
                return Err(Error::Format(format!("bad or duplicate Q-table row for state {s}")));
            }
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

impl Policy for QTable {
    fn act(&self, env: &dyn Environment) -> usize {
        self.greedy(env.state_code())
    }
}

/// The two estimators of Double Q-learning.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleQ {
    pub a: QTable,
    pub b: QTable,
}

impl DoubleQ {
    /// Acting table: the mean of both estimators.
    pub fn combined(&self) -> QTable {
        QTable::mean(&self.a, &self.b)
    }
}

impl Policy for DoubleQ {
    fn act(&self, env: &dyn Environment) -> usize {
        let s = env.state_code();
        let q: Vec<f64> = self.a.get(s).iter().zip(self.b.get(s)).map(|(x, y)| x + y).collect();
        argmax(&q)
    }
}

fn choose(q: &[f64], eps: f64, rng: &mut SplitMix64) -> usize {
    if rng.next_f64() < eps {
        rng.below(q.len())
    } else {
        argmax(q)
    }
}

fn check_divergence(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence("non-finite Q-value".into()))
    }
}

pub fn q_learning_train(env: &mut dyn Environment, cfg: &RlConfig) -> Result<QTable> {
    cfg.validate()?;
    let n = env.n_actions();
    let mut q = QTable::new(n);
    let mut visits: BTreeMap<(u64, usize), u64> = BTreeMap::new();
    let mut rng = SplitMix64::new(cfg.seed);
    for ep in 0..cfg.episodes {
        let eps = epsilon(ep, cfg.episodes, cfg.eps_start, cfg.eps_end, cfg.eps_decay_fraction);
        env.reset(ep);
        let mut s = env.state_code();
        loop {
            let a = choose(&q.get(s), eps, &mut rng);
            let step = env.step(a);
            let s2 = env.state_code();
            let bootstrap = if step.terminal { 0.0 } else { q.get(s2).iter().cloned().fold(f64::NEG_INFINITY, f64::max) };
            let k = visits.entry((s, a)).or_insert(0);
            *k += 1;
            let alpha = cfg.alpha / (*k as f64).sqrt();
            let cell = &mut q.entry(s)[a];
            *cell += alpha * (step.reward + cfg.gamma * bootstrap - *cell);
            check_divergence(*cell)?;
            if step.done {
                break;
            }
            s = s2;
        }
    }
    Ok(q)
}

pub fn double_q_learning_train(env: &mut dyn Environment, cfg: &RlConfig) -> Result<DoubleQ> {
    cfg.validate()?;
    let n = env.n_actions();
    let mut dq = DoubleQ { a: QTable::new(n), b: QTable::new(n) };
    let mut visits: BTreeMap<(bool, u64, usize), u64> = BTreeMap::new();
    let mut rng = SplitMix64::new(cfg.seed);
    for ep in 0..cfg.episodes {
        let eps = epsilon(ep, cfg.episodes, cfg.eps_start, cfg.eps_end, cfg.eps_decay_fraction);
        env.reset(ep);
        let mut s = env.state_code();
        loop {
            let sum: Vec<f64> = dq.a.get(s).iter().zip(dq.b.get(s)).map(|(x, y)| x + y).collect();
            let a = choose(&sum, eps, &mut rng);
            let step = env.step(a);
            let s2 = env.state_code();
            let update_a = rng.bernoulli(0.5);
            let (upd, other) = if update_a { (&mut dq.a, &dq.b) } else { (&mut dq.b, &dq.a) };
            let bootstrap = if step.terminal { 0.0 } else { other.get(s2)[argmax(&upd.get(s2))] };
            let k = visits.entry((update_a, s, a)).or_insert(0);
            *k += 1;
            let alpha = cfg.alpha / (*k as f64).sqrt();
            let cell = &mut upd.entry(s)[a];
            *cell += alpha * (step.reward + cfg.gamma * bootstrap - *cell);
            check_divergence(*cell)?;
            if step.done {
                break;
            }
            s = s2;
        }
    }
    Ok(dq)
}

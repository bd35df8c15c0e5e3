//! Run configuration in a flat `section.key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown and
//! repeated keys are errors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::channel::ChannelParams;
use crate::cnn::TrainConfig;
use crate::dataset::GridConfig;
use crate::mobility::ScenarioConfig;
use crate::rl::{DqnConfig, RlConfig};
use crate::{Error, Result};

/// Session-level split of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1, seed: 0 }
    }
}

impl SplitConfig {
    pub fn fractions(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    /// Master seed of the scenario generator.
    pub seed: u64,
    pub sessions: usize,
    /// Id of the first generated session; ids continue the seed stream.
    pub first_id: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, sessions: 100, first_id: 0, threads: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Instances per user count.
    pub instances: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { instances: 100, repeats: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub run: RunSection,
    pub scenario: ScenarioConfig,
    pub channel: ChannelParams,
    pub grid: GridConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub rl: RlConfig,
    pub dqn: DqnConfig,
    pub bench: BenchConfig,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

macro_rules! config_keys {
    ($( $key:literal => ( $($path:tt)+ ), $help:literal; )*) => {
        /// Every configuration key with a one-line description.
        pub const KEYS: &[(&str, &str)] = &[$(($key, $help)),*];

        impl RunConfig {
            /// Sets one key from its text value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$($path)+ = parse_value(key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            /// Current value of `key` in the text format.
            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($path)+.to_string()),)*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    "run.seed" => (run.seed), "master seed of the scenario generator";
    "run.sessions" => (run.sessions), "number of sessions to generate";
    "run.first_id" => (run.first_id), "id of the first generated session";
    "run.threads" => (run.threads), "worker threads, 0 = automatic";
    "scenario.width" => (scenario.area.width), "area width in metres";
    "scenario.height" => (scenario.area.height), "area height in metres";
    "scenario.n_users" => (scenario.n_users), "mobile users per session";
    "scenario.hotspot_radius" => (scenario.hotspot_radius), "radius of the user hotspot in metres";
    "scenario.speed_min" => (scenario.speed_min), "minimum user speed in m/s";
    "scenario.speed_max" => (scenario.speed_max), "maximum user speed in m/s";
    "scenario.steps_per_session" => (scenario.steps_per_session), "instants per session";
    "scenario.step_seconds" => (scenario.step_seconds), "seconds between instants";
    "channel.a" => (channel.a), "environment constant a of the LoS probability";
    "channel.b" => (channel.b), "environment constant b of the LoS probability";
    "channel.eta_los_db" => (channel.eta_los_db), "LoS excess loss in dB";
    "channel.eta_nlos_db" => (channel.eta_nlos_db), "NLoS excess loss in dB";
    "channel.carrier_hz" => (channel.carrier_hz), "carrier frequency in Hz";
    "channel.gamma_db" => (channel.gamma_db), "maximum pathloss for coverage in dB";
    "grid.rows" => (grid.rows), "feature grid rows";
    "grid.cols" => (grid.cols), "feature grid columns";
    "grid.temporal_depth" => (grid.temporal_depth), "instants per feature window";
    "split.train" => (split.train), "training share of sessions";
    "split.val" => (split.val), "validation share of sessions";
    "split.test" => (split.test), "test share of sessions";
    "split.seed" => (split.seed), "seed of the session split";
    "train.epochs" => (train.epochs), "maximum CNN training epochs";
    "train.batch_size" => (train.batch_size), "CNN mini-batch size";
    "train.lr" => (train.adam.lr), "Adam learning rate";
    "train.beta1" => (train.adam.beta1), "Adam first-moment decay";
    "train.beta2" => (train.adam.beta2), "Adam second-moment decay";
    "train.eps" => (train.adam.eps), "Adam epsilon";
    "train.patience" => (train.patience), "early-stopping patience in epochs";
    "train.seed" => (train.seed), "CNN initialisation and shuffle seed";
    "train.precision" => (train.precision), "CNN arithmetic, f32 or f64";
    "rl.episodes" => (rl.episodes), "tabular training episodes";
    "rl.alpha" => (rl.alpha), "initial tabular step size";
    "rl.gamma" => (rl.gamma), "tabular discount";
    "rl.eps_start" => (rl.eps_start), "initial exploration rate";
    "rl.eps_end" => (rl.eps_end), "final exploration rate";
    "rl.eps_decay_fraction" => (rl.eps_decay_fraction), "share of episodes for the exploration decay";
    "rl.seed" => (rl.seed), "tabular training seed";
    "dqn.episodes" => (dqn.episodes), "DQN training episodes";
    "dqn.gamma" => (dqn.gamma), "DQN discount";
    "dqn.lr" => (dqn.lr), "DQN Adam learning rate";
    "dqn.batch_size" => (dqn.batch_size), "DQN replay batch size";
    "dqn.replay_capacity" => (dqn.replay_capacity), "replay buffer capacity";
    "dqn.target_sync" => (dqn.target_sync), "steps between target network syncs";
    "dqn.hidden1" => (dqn.hidden[0]), "first hidden layer width";
    "dqn.hidden2" => (dqn.hidden[1]), "second hidden layer width";
    "dqn.eps_start" => (dqn.eps_start), "initial DQN exploration rate";
    "dqn.eps_end" => (dqn.eps_end), "final DQN exploration rate";
    "dqn.eps_decay_fraction" => (dqn.eps_decay_fraction), "share of episodes for the DQN exploration decay";
    "dqn.seed" => (dqn.seed), "DQN training seed";
    "bench.instances" => (bench.instances), "benchmark instances per user count";
    "bench.repeats" => (bench.repeats), "timed repetitions per instance";
}

impl RunConfig {
    /// Parses a configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: repeated key {key:?}", no + 1)));
            }
            cfg.set(key, value).map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(m) | Error::Validation(m) => Error::Config(m),
            other => other,
        };
        self.scenario.validate().map_err(wrap)?;
        self.channel.validate().map_err(wrap)?;
        self.grid.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.rl.validate().map_err(wrap)?;
        self.dqn.validate().map_err(wrap)?;
        let f = self.split.fractions();
        if f.iter().any(|v| !(*v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be non-negative and sum to 1, got {f:?}")));
        }
        if self.bench.instances == 0 || self.bench.repeats == 0 {
            return Err(Error::Config("bench.instances and bench.repeats must be positive".into()));
        }
        Ok(())
    }
}

impl fmt::Display for RunConfig {
    /// Every key with its current value, in the file format.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (key, _) in KEYS {
            writeln!(f, "{key} = {}", self.get(key).expect("listed key"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::Precision;

    #[test]
    fn parse_overrides_defaults() {
        let cfg = RunConfig::parse("# comment\n\nscenario.n_users = 12\ntrain.precision = f32\ndqn.hidden2=32\n").unwrap();
        assert_eq!(cfg.scenario.n_users, 12);
        assert_eq!(cfg.train.precision, Precision::F32);
        assert_eq!(cfg.dqn.hidden, [128, 32]);
        assert_eq!(cfg.channel, ChannelParams::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_repeated_and_malformed() {
        assert!(matches!(RunConfig::parse("scenario.colour = red"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("run.seed = 1\nrun.seed = 2"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("run.seed"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("run.seed = -1"), Err(Error::Config(_))));
    }

    #[test]
    fn validation_is_a_config_error() {
        let cfg = RunConfig::parse("split.train = 0.9").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = RunConfig::parse("scenario.n_users = 0").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn display_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("channel.gamma_db", "95.25").unwrap();
        cfg.set("train.lr", "0.0003").unwrap();
        let text = cfg.to_string();
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }
}

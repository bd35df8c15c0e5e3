//! Environments: the gridded UAV placement task and small tabular MDPs.

use crate::channel::ChannelParams;
use crate::dataset::GridConfig;
use crate::mobility::{Session, Snapshot};
use crate::oracle::DiskOracle;
use crate::{Area, Error, Position, Result, UavPose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Towards larger y (next row).
    Up,
    Down,
    /// Towards smaller x (previous column).
    Left,
    Right,
    Stay,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Outcome of one environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub reward: f64,
    /// The episode is over.
    pub done: bool,
    /// The episode ended in a terminal state, so no value is bootstrapped.
    /// False for time-limit truncation.
    pub terminal: bool,
}

/// Episodic environment with a discrete action set.
pub trait Environment {
    fn n_actions(&self) -> usize;
    /// Starts episode `episode`; implementations cycle through their data.
    fn reset(&mut self, episode: usize);
    /// Discrete code of the current observation, used by tabular agents.
    fn state_code(&self) -> u64;
    fn feature_len(&self) -> usize;
    /// Dense observation vector for function approximators.
    fn features(&self) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Step;
}

/// Action selection from an environment's current observation.
pub trait Policy {
    fn act(&self, env: &dyn Environment) -> usize;
}

/// Always chooses [`Action::Stay`].
pub struct StayPolicy;

impl Policy for StayPolicy {
    fn act(&self, _env: &dyn Environment) -> usize {
        Action::Stay.index()
    }
}

/// UAV placement on the feature grid. The observation at instant `t` is the
/// UAV cell chosen at `t − 1` together with the users at `t`; the action
/// moves the UAV and the reward is the coverage at `t` from the new cell
/// centre at the optimal altitude. Each session is one episode and starts
/// from the centre cell.
#[derive(Debug, Clone)]
pub struct UavEnv<'a> {
    sessions: &'a [Session],
    grid: GridConfig,
    area: Area,
    oracle: DiskOracle,
    session: usize,
    t: usize,
    cell: (usize, usize),
}

impl<'a> UavEnv<'a> {
    pub fn new(sessions: &'a [Session], grid: GridConfig, area: Area, p: &ChannelParams) -> Result<Self> {
        grid.validate()?;
        if sessions.is_empty() || sessions.iter().any(|s| s.snapshots.is_empty()) {
            return Err(Error::Validation("UAV environment needs non-empty sessions".into()));
        }
        let oracle = DiskOracle::from_channel(p, area)?;
        Ok(Self { sessions, grid, area, oracle, session: 0, t: 0, cell: Self::start_cell(&grid) })
    }

    pub fn start_cell(grid: &GridConfig) -> (usize, usize) {
        (grid.rows / 2, grid.cols / 2)
    }

    pub fn cell(&self) -> (usize, usize) {
        self.cell
    }

    pub fn instant(&self) -> usize {
        self.t
    }

    pub fn altitude(&self) -> f64 {
        self.oracle.altitude
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.sessions[self.session].snapshots[self.t]
    }

    /// Cell after `action`, clamped to the grid.
    pub fn move_cell(&self, cell: (usize, usize), action: Action) -> (usize, usize) {
        let (r, c) = cell;
        match action {
            Action::Up => ((r + 1).min(self.grid.rows - 1), c),
            Action::Down => (r.saturating_sub(1), c),
            Action::Left => (r, c.saturating_sub(1)),
            Action::Right => (r, (c + 1).min(self.grid.cols - 1)),
            Action::Stay => (r, c),
        }
    }

    pub fn pose_of(&self, cell: (usize, usize)) -> UavPose {
        let (x, y) = self.grid.cell_center(cell.0, cell.1, self.area);
        UavPose::new(x, y, self.oracle.altitude)
    }

    /// Users covered from the centre of `cell`.
    pub fn reward_at(&self, cell: (usize, usize), users: &[Position]) -> usize {
        let (x, y) = self.grid.cell_center(cell.0, cell.1, self.area);
        self.oracle.count(&Position { x, y }, users)
    }

    /// 4×4 block occupancy of `users`: bit `i` is set when block `i`
    /// (row-major from the origin) holds more users than the median block.
    pub fn occupancy_code(&self, users: &[Position]) -> u16 {
        let mut counts = [0u32; 16];
        for p in users {
            let (r, c) = self.grid.cell_of(p.x, p.y, self.area);
            counts[(r * 4 / self.grid.rows) * 4 + c * 4 / self.grid.cols] += 1;
        }
        let mut sorted = counts;
        sorted.sort_unstable();
        let median = (sorted[7] + sorted[8]) as f64 / 2.0;
        counts.iter().enumerate().filter(|(_, &n)| n as f64 > median).fold(0u16, |code, (i, _)| code | 1 << i)
    }
}

impl Environment for UavEnv<'_> {
    fn n_actions(&self) -> usize {
        Action::ALL.len()
    }

    fn reset(&mut self, episode: usize) {
        self.session = episode % self.sessions.len();
        self.t = 0;
        self.cell = Self::start_cell(&self.grid);
    }

    fn state_code(&self) -> u64 {
        let cell = (self.cell.0 * self.grid.cols + self.cell.1) as u64;
        cell << 16 | self.occupancy_code(&self.snapshot().positions) as u64
    }

    fn feature_len(&self) -> usize {
        2 * self.grid.slice_len()
    }

    /// User occupancy fractions per cell followed by a one-hot UAV cell.
    fn features(&self) -> Vec<f64> {
        let n = self.grid.slice_len();
        let mut f = vec![0.0; 2 * n];
        let users = &self.snapshot().positions;
        let share = 1.0 / users.len().max(1) as f64;
        for p in users {
            let (r, c) = self.grid.cell_of(p.x, p.y, self.area);
            f[r * self.grid.cols + c] += share;
        }
        f[n + self.cell.0 * self.grid.cols + self.cell.1] = 1.0;
        f
    }

    fn step(&mut self, action: usize) -> Step {
        let action = Action::from_index(action).expect("action index below 5");
        self.cell = self.move_cell(self.cell, action);
        let reward = self.reward_at(self.cell, &self.snapshot().positions) as f64;
        let done = self.t + 1 >= self.sessions[self.session].snapshots.len();
        if !done {
            self.t += 1;
        }
        Step { reward, done, terminal: done }
    }
}

/// Greedy rollout of `policy` over one session from the centre cell; one
/// pose per instant.
pub fn rl_policy_positions(
    policy: &dyn Policy,
    session: &Session,
    grid: GridConfig,
    area: Area,
    p: &ChannelParams,
) -> Result<Vec<UavPose>> {
    let sessions = std::slice::from_ref(session);
    let mut env = UavEnv::new(sessions, grid, area, p)?;
    env.reset(0);
    let mut poses = Vec::with_capacity(session.snapshots.len());
    loop {
        let a = policy.act(&env);
        let step = env.step(a);
        poses.push(env.pose_of(env.cell()));
        if step.done {
            return Ok(poses);
        }
    }
}

/// Finite deterministic MDP: `next[s·A + a]` and `reward[s·A + a]`.
/// Episodes are truncated after `horizon` steps without being terminal, so
/// agents learn the discounted infinite-horizon values.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub next: Vec<usize>,
    pub reward: Vec<f64>,
    pub horizon: usize,
    state: usize,
    t: usize,
}

impl TabularMdp {
    pub fn new(n_states: usize, n_actions: usize, next: Vec<usize>, reward: Vec<f64>, horizon: usize) -> Result<Self> {
        let m = n_states * n_actions;
        if m == 0 || next.len() != m || reward.len() != m || horizon == 0 {
            return Err(Error::Validation("inconsistent MDP tables".into()));
        }
        if next.iter().any(|&s| s >= n_states) || reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Validation("MDP transition or reward out of range".into()));
        }
        Ok(Self { n_states, n_actions, next, reward, horizon, state: 0, t: 0 })
    }

    /// Three states in a line with actions left/right. Staying at the right
    /// end pays 1, bumping the left wall pays 0.2, everything else 0.
    pub fn chain() -> Self {
        let next = vec![0, 1, 0, 2, 1, 2];
        let reward = vec![0.2, 0.0, 0.0, 0.0, 0.0, 1.0];
        Self::new(3, 2, next, reward, 20).expect("valid chain")
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

impl Environment for TabularMdp {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Episodes start in every state in turn.
    fn reset(&mut self, episode: usize) {
        self.state = episode % self.n_states;
        self.t = 0;
    }

    fn state_code(&self) -> u64 {
        self.state as u64
    }

    fn feature_len(&self) -> usize {
        self.n_states
    }

    fn features(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.n_states];
        f[self.state] = 1.0;
        f
    }

    fn step(&mut self, action: usize) -> Step {
        let k = self.state * self.n_actions + action;
        self.state = self.next[k];
        self.t += 1;
        Step { reward: self.reward[k], done: self.t >= self.horizon, terminal: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobility::Snapshot;

    fn session(users: Vec<Position>, steps: usize) -> Session {
        let snapshots = (0..steps).map(|t| Snapshot { t, positions: users.clone() }).collect();
        Session { id: 0, seed: None, snapshots }
    }

    #[test]
    fn stay_and_clamp() {
        let s = [session(vec![Position { x: 10.0, y: 10.0 }], 3)];
        let env = UavEnv::new(&s, GridConfig::default(), Area::default(), &ChannelParams::default()).unwrap();
        assert_eq!(env.move_cell((3, 4), Action::Stay), (3, 4));
        assert_eq!(env.move_cell((3, 0), Action::Left), (3, 0));
        assert_eq!(env.move_cell((19, 5), Action::Up), (19, 5));
        assert_eq!(env.move_cell((0, 5), Action::Down), (0, 5));
        assert_eq!(env.move_cell((2, 19), Action::Right), (2, 19));
        assert_eq!(env.move_cell((2, 3), Action::Up), (3, 3));
    }

    #[test]
    fn pile_in_cell_is_fully_covered() {
        // Cell (7, 12) spans x in [1200, 1300), y in [700, 800).
        let pile = vec![Position { x: 1210.0, y: 790.0 }; 30];
        let s = [session(pile.clone(), 2)];
        let env = UavEnv::new(&s, GridConfig::default(), Area::default(), &ChannelParams::default()).unwrap();
        assert_eq!(env.reward_at((7, 12), &pile), 30);
    }

    #[test]
    fn episode_walks_the_session() {
        let s = [session(vec![Position { x: 1050.0, y: 1050.0 }], 4)];
        let mut env = UavEnv::new(&s, GridConfig::default(), Area::default(), &ChannelParams::default()).unwrap();
        env.reset(7);
        let steps: Vec<Step> = (0..4).map(|_| env.step(Action::Stay.index())).collect();
        assert!(steps[..3].iter().all(|s| !s.done));
        assert!(steps[3].done && steps[3].terminal);
        assert!(steps.iter().all(|s| s.reward == 1.0));
    }

    #[test]
    fn occupancy_code_marks_crowded_blocks() {
        let s = [session(vec![Position { x: 0.0, y: 0.0 }], 1)];
        let env = UavEnv::new(&s, GridConfig::default(), Area::default(), &ChannelParams::default()).unwrap();
        let users = vec![Position { x: 10.0, y: 10.0 }, Position { x: 1990.0, y: 1990.0 }, Position { x: 1990.0, y: 1990.0 }];
        assert_eq!(env.occupancy_code(&users), 1 | 1 << 15);
        assert_eq!(env.occupancy_code(&[]), 0);
    }

    #[test]
    fn stay_policy_gives_constant_pose() {
        let s = session(vec![Position { x: 300.0, y: 300.0 }], 6);
        let poses = rl_policy_positions(&StayPolicy, &s, GridConfig::default(), Area::default(), &ChannelParams::default()).unwrap();
        assert_eq!(poses.len(), 6);
        assert!(poses.iter().all(|p| *p == poses[0]));
        assert_eq!((poses[0].x, poses[0].y), (1050.0, 1050.0));
    }

    #[test]
    fn chain_dynamics() {
        let mut m = TabularMdp::chain();
        m.reset(2);
        let s = m.step(1);
        assert_eq!((m.state(), s.reward), (2, 1.0));
        m.reset(0);
        assert_eq!(m.step(0).reward, 0.2);
        assert!(TabularMdp::new(2, 1, vec![0, 2], vec![0.0, 0.0], 5).is_err());
    }
}

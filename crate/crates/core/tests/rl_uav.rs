use uavlab::channel::ChannelParams;
use uavlab::dataset::GridConfig;
use uavlab::eval::{coverage_of, policy_poses};
use uavlab::mobility::{generate_scenario, ScenarioConfig, Session};
use uavlab::rl::{
    double_q_learning_train, dqn_train, q_learning_train, rl_policy_positions, DqnConfig, Environment, Policy, QTable,
    RlConfig, UavEnv,
};
use uavlab::Area;

fn sessions(n: usize) -> Vec<Session> {
    generate_scenario(n, 0, 99, &ScenarioConfig::default()).collect::<Result<_, _>>().unwrap()
}

fn rollout_reward(policy: &dyn Policy, s: &Session) -> f64 {
    let one = std::slice::from_ref(s);
    let mut env = UavEnv::new(one, GridConfig::default(), Area::default(), &ChannelParams::default()).unwrap();
    env.reset(0);
    let mut total = 0.0;
    loop {
        let a = policy.act(&env);
        let step = env.step(a);
        total += step.reward;
        if step.done {
            return total;
        }
    }
}

#[test]
fn rollout_reward_matches_independent_recount() {
    let data = sessions(40);
    let p = ChannelParams::default();
    let mut env = UavEnv::new(&data, GridConfig::default(), Area::default(), &p).unwrap();
    let q = q_learning_train(&mut env, &RlConfig { episodes: 200, seed: 1, ..RlConfig::default() }).unwrap();
    for s in &data[..10] {
        let poses = rl_policy_positions(&q, s, GridConfig::default(), Area::default(), &p).unwrap();
        assert_eq!(poses.len(), s.snapshots.len());
        assert!(poses.iter().all(|p| (0.0..=2000.0).contains(&p.x) && (0.0..=2000.0).contains(&p.y)));
        let recount: usize = poses.iter().zip(&s.snapshots).map(|(pose, snap)| coverage_of(pose, snap, &p)).sum();
        assert_eq!(rollout_reward(&q, s), recount as f64);
    }
}

#[test]
fn uav_agents_train_and_persist() {
    let data = sessions(30);
    let p = ChannelParams::default();
    let grid = GridConfig::default();
    let mut env = UavEnv::new(&data, grid, Area::default(), &p).unwrap();
    let cfg = RlConfig { episodes: 60, seed: 2, ..RlConfig::default() };
    let q = q_learning_train(&mut env, &cfg).unwrap();
    assert!(q.all_finite() && !q.values.is_empty());
    let dq = double_q_learning_train(&mut env, &cfg).unwrap();
    let gamma = cfg.gamma;
    for t in [&dq.a, &dq.b] {
        for row in t.values.values() {
            assert!(row.iter().all(|&v| (0.0..=30.0 / (1.0 - gamma)).contains(&v)));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.csv");
    q.save(&path).unwrap();
    assert_eq!(QTable::load(&path).unwrap(), q);

    let dqn = dqn_train(&mut env, &DqnConfig { episodes: 10, seed: 3, ..DqnConfig::default() }).unwrap();
    assert_eq!(env.feature_len(), 800);
    let m = policy_poses("dqn", &dqn, &data[..3], grid, Area::default(), &p).unwrap();
    assert_eq!(m.poses.len(), 45);
    let path = dir.path().join("dqn.bin");
    dqn.save(&path).unwrap();
    assert_eq!(uavlab::rl::DqnModel::load(&path).unwrap(), dqn);
}

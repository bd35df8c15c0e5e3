use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};
use uavlab::channel::max_coverage_radius;
use uavlab::cnn::{self, CnnModel, Precision};
use uavlab::config::{RunConfig, KEYS};
use uavlab::dataset::{self, build_samples, load_dataset, save_dataset, split_sessions, Sample};
use uavlab::eval::{self, MethodPoses};
use uavlab::mobility::{generate_scenario_par, load_trajectories, save_trajectories, Session, Snapshot};
use uavlab::oracle::{label_rows, label_sessions, load_labels, save_labels, DiskOracle, LabelRow};
use uavlab::rl::{self, DqnModel, QTable, UavEnv};
use uavlab::{Error, Result};

fn flag_name(key: &str) -> String {
    key.replace(['.', '_'], "-")
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("PATH").value_parser(clap::value_parser!(PathBuf)).help(help)
}

fn cli() -> Command {
    let mut root = Command::new("uavlab")
        .about("Coverage-driven UAV base-station placement: data generation, oracle labels, CNN and RL training, evaluation")
        .subcommand_required(true)
        .arg(path_arg("config", "configuration file of `section.key = value` lines").global(true))
        .arg(
            Arg::new("threads")
                .long("threads")
                .value_name("N")
                .value_parser(clap::value_parser!(usize))
                .global(true)
                .help("worker threads (falls back to UAVLAB_THREADS, then run.threads)"),
        );
    for (key, help) in KEYS {
        if *key == "run.threads" {
            continue;
        }
        root = root.arg(Arg::new(*key).long(flag_name(key)).value_name("VALUE").global(true).help(format!("{help} [{key}]")));
    }
    root.subcommand(
        Command::new("generate")
            .about("generate mobility sessions")
            .arg(path_arg("out", "trajectory CSV to write").required(true)),
    )
    .subcommand(
        Command::new("label")
            .about("compute oracle placements for every instant")
            .arg(path_arg("traj", "trajectory CSV").required(true))
            .arg(path_arg("out", "label CSV to write").required(true)),
    )
    .subcommand(
        Command::new("dataset")
            .about("featurise and split into train.bin, val.bin and test.bin")
            .arg(path_arg("traj", "trajectory CSV").required(true))
            .arg(path_arg("labels", "label CSV").required(true))
            .arg(path_arg("out", "output directory").required(true)),
    )
    .subcommand(
        Command::new("train-cnn")
            .about("train the placement CNN")
            .arg(path_arg("train", "training dataset").required(true))
            .arg(path_arg("val", "validation dataset for early stopping"))
            .arg(path_arg("out", "model checkpoint to write").required(true))
            .arg(path_arg("history", "per-epoch MAE CSV to write")),
    )
    .subcommand(
        Command::new("train-rl")
            .about("train an RL baseline on the training sessions")
            .arg(path_arg("traj", "trajectory CSV").required(true))
            .arg(
                Arg::new("algo")
                    .long("algo")
                    .required(true)
                    .value_parser(["q", "double-q", "dqn"])
                    .help("q and double-q write a Q-table CSV, dqn a network checkpoint"),
            )
            .arg(path_arg("out", "model file to write").required(true)),
    )
    .subcommand(
        Command::new("eval")
            .about("compare methods on the test sessions and write report files")
            .arg(path_arg("traj", "trajectory CSV").required(true))
            .arg(path_arg("labels", "label CSV").required(true))
            .arg(path_arg("cnn", "CNN checkpoint"))
            .arg(path_arg("q", "Q-learning table"))
            .arg(path_arg("double-q", "Double Q-learning table"))
            .arg(path_arg("dqn", "DQN checkpoint"))
            .arg(path_arg("out", "report directory").required(true)),
    )
    .subcommand(
        Command::new("bench")
            .about("time the exact oracle against CNN inference for 10, 20 and 30 users")
            .arg(path_arg("cnn", "CNN checkpoint (a fresh network if omitted)"))
            .arg(path_arg("out", "CSV of medians to write")),
    )
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) => 3,
        Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 3,
        Error::Divergence(_) => 5,
        _ => 4,
    }
}

fn kind(code: u8) -> &'static str {
    match code {
        2 => "config",
        3 => "io",
        5 => "divergence",
        _ => "validation",
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} code={code} message={msg:?}", kind(code));
            ExitCode::from(code)
        }
    }
}

fn load_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("cannot read config {}: {io}", p.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    for (key, _) in KEYS {
        if let Some(v) = m.try_get_one::<String>(key).ok().flatten() {
            cfg.set(key, v)?;
        }
    }
    if let Some(n) = m.get_one::<usize>("threads") {
        cfg.run.threads = *n;
    } else if let Ok(v) = std::env::var("UAVLAB_THREADS") {
        cfg.run.threads = v.trim().parse().map_err(|_| Error::Config(format!("UAVLAB_THREADS: cannot parse {v:?}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(matches: &ArgMatches) -> Result<()> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cfg = load_config(sub)?;
    if cfg.run.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let path = |k: &str| sub.get_one::<PathBuf>(k).cloned();
    let req = |k: &str| path(k).expect("required by clap");
    match name {
        "generate" => cmd_generate(&cfg, &req("out")),
        "label" => cmd_label(&cfg, &req("traj"), &req("out")),
        "dataset" => cmd_dataset(&cfg, &req("traj"), &req("labels"), &req("out")),
        "train-cnn" => cmd_train_cnn(&cfg, &req("train"), path("val").as_deref(), &req("out"), path("history").as_deref()),
        "train-rl" => cmd_train_rl(&cfg, &req("traj"), sub.get_one::<String>("algo").expect("required"), &req("out")),
        "eval" => cmd_eval(
            &cfg,
            &req("traj"),
            &req("labels"),
            Models { cnn: path("cnn"), q: path("q"), double_q: path("double-q"), dqn: path("dqn") },
            &req("out"),
        ),
        "bench" => cmd_bench(&cfg, path("cnn").as_deref(), path("out").as_deref()),
        other => unreachable!("unknown subcommand {other}"),
    }
}

fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sessions = generate_scenario_par(cfg.run.sessions, cfg.run.first_id, cfg.run.seed, &cfg.scenario)?;
    save_trajectories(out, &sessions)?;
    println!("wrote {} sessions to {}", sessions.len(), out.display());
    Ok(())
}

fn cmd_label(cfg: &RunConfig, traj: &Path, out: &Path) -> Result<()> {
    let sessions = load_trajectories(traj)?;
    let labels = label_sessions(&sessions, &cfg.channel, cfg.scenario.area)?;
    let rows = label_rows(&sessions, &labels);
    save_labels(out, &rows)?;
    println!("wrote {} labels to {}", rows.len(), out.display());
    Ok(())
}

fn split_of(cfg: &RunConfig, sessions: &[Session]) -> Result<dataset::SessionSplit> {
    split_sessions(sessions.iter().map(|s| s.id), cfg.split.fractions(), cfg.split.seed)
}

fn cmd_dataset(cfg: &RunConfig, traj: &Path, labels: &Path, out: &Path) -> Result<()> {
    let sessions = load_trajectories(traj)?;
    let rows = load_labels(labels)?;
    let samples = build_samples(&sessions, &rows, &cfg.grid, cfg.scenario.area)?;
    let parts = split_of(cfg, &sessions)?;
    std::fs::create_dir_all(out)?;
    for (name, ids) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
        let part: Vec<Sample> = samples.iter().filter(|s| ids.contains(&s.session_id)).cloned().collect();
        let file = out.join(format!("{name}.bin"));
        save_dataset(&file, &part, &cfg.grid)?;
        println!("wrote {} samples to {}", part.len(), file.display());
    }
    Ok(())
}

fn load_for(cfg: &RunConfig, path: &Path) -> Result<Vec<Sample>> {
    let (grid, samples) = load_dataset(path)?;
    if grid != cfg.grid {
        return Err(Error::Validation(format!("{} was built for grid {grid:?}, config has {:?}", path.display(), cfg.grid)));
    }
    Ok(samples)
}

fn cmd_train_cnn(cfg: &RunConfig, train: &Path, val: Option<&Path>, out: &Path, history: Option<&Path>) -> Result<()> {
    let train_set = load_for(cfg, train)?;
    let val_set = match val {
        Some(p) => load_for(cfg, p)?,
        None => Vec::new(),
    };
    let (model, hist) = match cfg.train.precision {
        Precision::F32 => {
            let (m, h) = cnn::train::<f32>(&train_set, &val_set, &cfg.grid, &cfg.train)?;
            (m.cast::<f64>(), h)
        }
        Precision::F64 => cnn::train::<f64>(&train_set, &val_set, &cfg.grid, &cfg.train)?,
    };
    model.save(out)?;
    if let Some(p) = history {
        let mut text = String::from("epoch,train_mae,val_mae\n");
        for (i, t) in hist.train_mae.iter().enumerate() {
            let v = hist.val_mae.get(i).map(|v| format!("{v:.16e}")).unwrap_or_default();
            text.push_str(&format!("{i},{t:.16e},{v}\n"));
        }
        std::fs::write(p, text)?;
    }
    println!(
        "trained {} epochs, kept epoch {}, final train MAE {:.5}",
        hist.train_mae.len(),
        hist.best_epoch,
        hist.train_mae.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn sessions_in(sessions: Vec<Session>, ids: &std::collections::BTreeSet<u64>) -> Vec<Session> {
    sessions.into_iter().filter(|s| ids.contains(&s.id)).collect()
}

fn cmd_train_rl(cfg: &RunConfig, traj: &Path, algo: &str, out: &Path) -> Result<()> {
    let sessions = load_trajectories(traj)?;
    let parts = split_of(cfg, &sessions)?;
    let train = sessions_in(sessions, &parts.train);
    let mut env = UavEnv::new(&train, cfg.grid, cfg.scenario.area, &cfg.channel)?;
    match algo {
        "q" => rl::q_learning_train(&mut env, &cfg.rl)?.save(out)?,
        "double-q" => rl::double_q_learning_train(&mut env, &cfg.rl)?.combined().save(out)?,
        _ => rl::dqn_train(&mut env, &cfg.dqn)?.save(out)?,
    }
    println!("trained {algo} on {} sessions, wrote {}", train.len(), out.display());
    Ok(())
}

struct Models {
    cnn: Option<PathBuf>,
    q: Option<PathBuf>,
    double_q: Option<PathBuf>,
    dqn: Option<PathBuf>,
}

fn oracle_from_rows(rows: &[LabelRow], ids: &std::collections::BTreeSet<u64>) -> MethodPoses {
    let mut m = MethodPoses::new(eval::ORACLE);
    m.poses.extend(rows.iter().filter(|r| ids.contains(&r.session_id)).map(|r| ((r.session_id, r.step), r.pose)));
    m
}

fn cmd_eval(cfg: &RunConfig, traj: &Path, labels: &Path, models: Models, out: &Path) -> Result<()> {
    let sessions = load_trajectories(traj)?;
    let parts = split_of(cfg, &sessions)?;
    let test = sessions_in(sessions, &parts.test);
    let rows = load_labels(labels)?;
    let area = cfg.scenario.area;
    let altitude = max_coverage_radius(&cfg.channel)?.altitude;
    let from_step = cfg.grid.temporal_depth - 1;
    let mut methods = vec![oracle_from_rows(&rows, &parts.test)];
    let mut cnn_model = None;
    if let Some(p) = &models.cnn {
        let m = CnnModel::<f64>::load(p)?;
        methods.push(eval::cnn_poses(&m, &test, &cfg.grid, area, altitude)?);
        cnn_model = Some(m);
    }
    if let Some(p) = &models.q {
        methods.push(eval::policy_poses("q_learning", &QTable::load(p)?, &test, cfg.grid, area, &cfg.channel)?);
    }
    if let Some(p) = &models.double_q {
        methods.push(eval::policy_poses("double_q", &QTable::load(p)?, &test, cfg.grid, area, &cfg.channel)?);
    }
    if let Some(p) = &models.dqn {
        methods.push(eval::policy_poses("dqn", &DqnModel::load(p)?, &test, cfg.grid, area, &cfg.channel)?);
    }
    let methods: Vec<MethodPoses> = methods.into_iter().map(|m| m.from_step(from_step)).collect();
    let mut report = eval::evaluate(&test, &methods, &cfg.channel, from_step)?;
    if let Some(model) = &cnn_model {
        let windows: Vec<&[Snapshot]> = test
            .iter()
            .filter(|s| s.snapshots.len() >= cfg.grid.temporal_depth)
            .map(|s| &s.snapshots[s.snapshots.len() - cfg.grid.temporal_depth..])
            .take(cfg.bench.instances)
            .collect();
        let oracle = DiskOracle::from_channel(&cfg.channel, area)?;
        report.runtime = Some(eval::bench_runtime(&oracle, model, &cfg.grid, area, &windows, cfg.bench.repeats)?);
    }
    eval::export_report(&report, out)?;
    print!("{}", eval::summary_text(&report));
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, cnn_path: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let model = match cnn_path {
        Some(p) => CnnModel::<f64>::load(p)?,
        None => CnnModel::new(&cfg.grid, cfg.train.seed)?,
    };
    let area = cfg.scenario.area;
    let oracle = DiskOracle::from_channel(&cfg.channel, area)?;
    let mut text = String::from("n_users,oracle_median_ns,cnn_median_ns,ratio\n");
    for n in [10, 20, 30] {
        let scenario = uavlab::mobility::ScenarioConfig { n_users: n, ..cfg.scenario.clone() };
        let sessions = generate_scenario_par(cfg.bench.instances, cfg.run.first_id, cfg.run.seed, &scenario)?;
        let depth = cfg.grid.temporal_depth;
        let windows: Vec<&[Snapshot]> = sessions
            .iter()
            .filter(|s| s.snapshots.len() >= depth)
            .map(|s| &s.snapshots[s.snapshots.len() - depth..])
            .collect();
        let r = eval::bench_runtime(&oracle, &model, &cfg.grid, area, &windows, cfg.bench.repeats)?;
        println!("n={n}: oracle {:.0} ns, cnn {:.0} ns, ratio {:.3}", r.oracle_median_ns, r.cnn_median_ns, r.ratio);
        text.push_str(&format!("{n},{},{},{}\n", r.oracle_median_ns, r.cnn_median_ns, r.ratio));
    }
    if let Some(p) = out {
        std::fs::write(p, text)?;
    }
    Ok(())
}

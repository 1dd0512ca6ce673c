use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use phlearn::io::{params_to_toml, parse_params, read_trajectory_csv, write_loss_csv, write_table_csv, write_trajectory_csv};
use phlearn::network::OdeSystem;
use phlearn::odesolve::{CountingSystem, Method, Trajectory};
use phlearn::systems::{default_q_grid, random_swarm_states, recover_potential_curve, simulate_swarm, CsParams, SwarmModel};
use phlearn::train::{grad_total_loss, train_resume, Checkpoint, TrainConfig, TrainReport};
use phlearn::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Experiment, ExperimentConfig};
use crate::experiments::{self, mean_std, Model};
use crate::manifest::Manifest;

pub const PARAMS_FILE: &str = "params.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.toml";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config {
        field: "out".into(),
        reason: format!("cannot create `{}`: {e}", dir.display()),
    })?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Config {
        field: "out".into(),
        reason: format!("cannot write `{}`: {e}", path.display()),
    })
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn train_file(k: usize) -> String {
    format!("train_{k:03}.csv")
}

/// Writes the training trajectories to the data directory.
pub fn generate(cfg: &ExperimentConfig) -> Result<Manifest> {
    let dir = cfg.data_dir();
    ensure_dir(&cfg.out)?;
    ensure_dir(&dir)?;
    let data = experiments::training_data(cfg)?;
    let mut manifest = Manifest::new("generate", cfg)?;
    for (k, traj) in data.iter().enumerate() {
        let path = dir.join(train_file(k));
        write_trajectory_csv(create(&path)?, traj)?;
        manifest.files.push(path.display().to_string());
    }
    manifest.write(&cfg.out)?;
    Ok(manifest)
}

/// Training trajectories from the data directory, generated first when
/// the directory holds none.
pub fn load_training_data(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    let dir = cfg.data_dir();
    let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = file_name(p);
                name.starts_with("train_") && name.ends_with(".csv")
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    if paths.is_empty() {
        generate(cfg)?;
        return load_training_data(cfg);
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            read_trajectory_csv(File::open(p)?).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Reads a parameter file and checks its length against the model.
pub fn load_params(path: &Path, model: &Model) -> Result<(Vec<f64>, String)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        field: "params".into(),
        reason: format!("cannot read `{}`: {e}", path.display()),
    })?;
    let pv = parse_params(&text)?;
    let dim = model.system().param_dim();
    if pv.len() != dim {
        return Err(Error::Dimension {
            what: format!("parameter file `{}`", path.display()),
            expected: dim,
            got: pv.len(),
        });
    }
    Ok((pv.values().to_vec(), text))
}

fn write_params(path: &Path, w: &[f64], model: &Model) -> Result<()> {
    fs::write(path, params_to_toml(w, &model.slices())?)?;
    Ok(())
}

fn summary_text(cfg: &ExperimentConfig, report: &TrainReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("experiment: {}\n", cfg.experiment.name()));
    s.push_str(&format!("seed: {}\n", cfg.seed));
    s.push_str(&format!("iterations: {}\n", report.iterations));
    s.push_str(&format!("converged: {}\n", report.converged));
    s.push_str(&format!("initial J: {:.6e}\n", report.initial_j));
    s.push_str(&format!("final J: {:.6e}\n", report.final_j));
    s.push_str(&format!("final R: {:.6e}\n", report.final_r));
    if let Some(l) = report.lambda_trace.last() {
        s.push_str(&format!("final lambda: {l:.6e}\n"));
    }
    s.push_str(&format!("wall time per iteration: {:.3} ms\n", report.mean_wall_ms()));
    s
}

/// Outcome of `train`. A diverged run still writes its last finite
/// parameters before the error is returned.
pub fn train(cfg: &ExperimentConfig, params: Option<&Path>) -> Result<(Manifest, TrainReport)> {
    ensure_dir(&cfg.out)?;
    let data = load_training_data(cfg)?;
    let (model, mut w0) = experiments::build_model(cfg)?;
    let mut manifest = Manifest::new("train", cfg)?;
    let mut checkpoint = None;
    if let Some(path) = params {
        let (w, text) = load_params(path, &model)?;
        w0 = w;
        manifest = manifest.with_params(path, &text);
        let ck = path.with_file_name(CHECKPOINT_FILE);
        if ck.exists() && !cfg.train.primal_dual {
            let c: Checkpoint = toml::from_str(&fs::read_to_string(&ck)?)?;
            checkpoint = Some(c);
        }
    }
    let params_path = cfg.out.join(PARAMS_FILE);
    let result = if cfg.train.primal_dual || cfg.experiment == Experiment::SparseToy {
        experiments::run_training(cfg, &model, &data, &w0)
    } else {
        let mut tc: TrainConfig = cfg.train.clone();
        tc.seed = cfg.seed;
        train_resume(model.system(), &data, &w0, checkpoint.as_ref(), &tc)
    };
    let report = match result {
        Ok(r) => r,
        Err(Error::Diverged { iteration, last_finite }) => {
            write_params(&params_path, &last_finite, &model)?;
            manifest.files.push(params_path.display().to_string());
            manifest.write(&cfg.out)?;
            return Err(Error::Diverged { iteration, last_finite });
        }
        Err(e) => return Err(e),
    };
    write_params(&params_path, &report.params, &model)?;
    let loss_path = cfg.out.join("loss.csv");
    write_loss_csv(create(&loss_path)?, &report.records)?;
    let summary_path = cfg.out.join("summary.txt");
    fs::write(&summary_path, summary_text(cfg, &report))?;
    let ck_path = cfg.out.join(CHECKPOINT_FILE);
    fs::write(&ck_path, toml::to_string(&report.checkpoint)?)?;
    manifest.files.extend([&params_path, &loss_path, &summary_path, &ck_path].map(|p| p.display().to_string()));
    if !report.lambda_trace.is_empty() {
        let lambda_path = cfg.out.join("lambda.csv");
        let rows: Vec<Vec<f64>> = report
            .lambda_trace
            .iter()
            .enumerate()
            .map(|(k, l)| vec![(k + 1) as f64, *l])
            .collect();
        write_table_csv(create(&lambda_path)?, &["update", "lambda"], &rows)?;
        manifest.files.push(lambda_path.display().to_string());
    }
    manifest.write(&cfg.out)?;
    Ok((manifest, report))
}

fn params_path(cfg: &ExperimentConfig, params: Option<&Path>) -> PathBuf {
    params.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join(PARAMS_FILE))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub mse: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Per-trajectory MSE on fresh initial conditions.
pub fn eval(cfg: &ExperimentConfig, params: Option<&Path>) -> Result<EvalSummary> {
    ensure_dir(&cfg.out)?;
    let (model, _) = experiments::build_model(cfg)?;
    let path = params_path(cfg, params);
    let (w, text) = load_params(&path, &model)?;
    let data = experiments::evaluation_data(cfg)?;
    let mse = experiments::per_trajectory_mse(cfg, &model, &w, &data)?;
    let (mean, std) = mean_std(&mse);
    let metrics_path = cfg.out.join("metrics.csv");
    let rows: Vec<Vec<f64>> = mse.iter().enumerate().map(|(k, m)| vec![k as f64, *m]).collect();
    write_table_csv(create(&metrics_path)?, &["ic", "mse"], &rows)?;
    let summary_path = cfg.out.join("eval_summary.txt");
    fs::write(
        &summary_path,
        format!("initial conditions: {}\nmean MSE: {mean:.6e}\nstd MSE: {std:.6e}\n", mse.len()),
    )?;
    let mut manifest = Manifest::new("eval", cfg)?.with_params(&path, &text);
    manifest.files.extend([&metrics_path, &summary_path].map(|p| p.display().to_string()));
    manifest.write(&cfg.out)?;
    Ok(EvalSummary { mse, mean, std })
}

/// Learned and reference pair force along one axis.
pub fn potential(cfg: &ExperimentConfig, params: Option<&Path>) -> Result<PathBuf> {
    if cfg.experiment != Experiment::Swarm {
        return Err(Error::Config {
            field: "experiment".into(),
            reason: "`potential` needs a swarm config".into(),
        });
    }
    ensure_dir(&cfg.out)?;
    let (model, _) = experiments::build_model(cfg)?;
    let path = params_path(cfg, params);
    let (w, text) = load_params(&path, &model)?;
    let Model::Swarm(swarm) = &model else {
        unreachable!("swarm config builds a swarm model")
    };
    let curve = recover_potential_curve(swarm, &w, &default_q_grid(), &CsParams::reference())?;
    let rows: Vec<Vec<f64>> = (0..curve.q.len())
        .map(|k| vec![curve.q[k], curve.learned[k], curve.reference[k]])
        .collect();
    let out = cfg.out.join("potential.csv");
    write_table_csv(create(&out)?, &["q", "F_learned", "F_reference"], &rows)?;
    let mut manifest = Manifest::new("potential", cfg)?.with_params(&path, &text);
    manifest.files.push(out.display().to_string());
    manifest.write(&cfg.out)?;
    Ok(out)
}

pub const BENCH_PARTICLES: [usize; 4] = [2, 5, 10, 20];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub particles: usize,
    pub method: Method,
    pub horizon: f64,
    pub states: usize,
    pub params: usize,
    pub samples: usize,
    pub rhs_evals: usize,
    pub wall_ms: f64,
}

/// Cost of one gradient evaluation of the swarm model on one trajectory,
/// over particle count, method and horizon (`t_end` and twice `t_end`).
/// Timings are the minimum of `repeats` runs.
pub fn bench_rows(cfg: &ExperimentConfig, repeats: usize) -> Result<Vec<BenchRow>> {
    let base = if cfg.experiment == Experiment::Swarm {
        cfg.clone()
    } else {
        ExperimentConfig {
            seed: cfg.seed,
            out: cfg.out.clone(),
            ..ExperimentConfig::default_for(Experiment::Swarm)
        }
    };
    let mut rows = Vec::new();
    for &particles in &BENCH_PARTICLES {
        let mut c = base.clone();
        c.system.particles = particles;
        let Model::Swarm(model) = experiments::build_model(&c)?.0 else {
            unreachable!("swarm config builds a swarm model")
        };
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let w = model.init_params(&mut rng);
        for horizon in [c.system.t_end, 2.0 * c.system.t_end] {
            let mut spec = swarm_spec(&c);
            spec.t_end = horizon;
            let x0 = &random_swarm_states(&spec, 1, c.seed)[0];
            let traj = simulate_swarm(&spec, &CsParams::reference(), x0)?;
            for method in [Method::Midpoint, Method::Rk4] {
                let tc = TrainConfig {
                    method,
                    ..c.train.clone()
                };
                rows.push(bench_one(&model, &traj, &w, &tc, particles, horizon, repeats)?);
            }
        }
    }
    Ok(rows)
}

fn swarm_spec(cfg: &ExperimentConfig) -> phlearn::systems::SwarmDataSpec {
    let s = &cfg.system;
    phlearn::systems::SwarmDataSpec {
        particles: s.particles,
        series: 1,
        dim: s.dim,
        t_end: s.t_end,
        h: s.sample_h,
        ic_range: (s.ic_range[0], s.ic_range[1]),
        substeps: s.substeps,
        seed: cfg.seed,
    }
}

fn bench_one(
    model: &SwarmModel,
    traj: &Trajectory,
    w: &[f64],
    tc: &TrainConfig,
    particles: usize,
    horizon: f64,
    repeats: usize,
) -> Result<BenchRow> {
    let counting = CountingSystem::new(model);
    let mut best = f64::INFINITY;
    let mut evals = 0;
    for _ in 0..repeats.max(1) {
        counting.reset();
        let start = Instant::now();
        grad_total_loss(&counting, &[traj], w, tc)?;
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
        evals = counting.count();
    }
    Ok(BenchRow {
        particles,
        method: tc.method,
        horizon,
        states: model.state_dim(),
        params: model.param_dim(),
        samples: traj.len(),
        rhs_evals: evals,
        wall_ms: best,
    })
}

pub fn bench(cfg: &ExperimentConfig, repeats: usize) -> Result<(Manifest, Vec<BenchRow>)> {
    ensure_dir(&cfg.out)?;
    let rows = bench_rows(cfg, repeats)?;
    let path = cfg.out.join("bench.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["particles", "method", "horizon", "states", "params", "samples", "rhs_evals", "wall_ms"])?;
    for r in &rows {
        let method = match r.method {
            Method::Midpoint => "midpoint",
            Method::Rk4 => "rk4",
        };
        w.write_record([
            r.particles.to_string(),
            method.to_string(),
            format!("{:.16e}", r.horizon),
            r.states.to_string(),
            r.params.to_string(),
            r.samples.to_string(),
            r.rhs_evals.to_string(),
            format!("{:.16e}", r.wall_ms),
        ])?;
    }
    w.flush()?;
    let mut manifest = Manifest::new("bench", cfg)?;
    manifest.files.push(path.display().to_string());
    manifest.write(&cfg.out)?;
    Ok((manifest, rows))
}

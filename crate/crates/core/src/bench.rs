//! Evaluation: the MED tracking metric, deterministic policy rollouts, the
//! benchmark trial protocol over the four trajectory families and trace
//! export. Crashed trials report an infinite MED and are excluded from the
//! mean/std aggregates, with the crash count reported separately.

use std::path::Path;

use nalgebra::Vector3;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DrConfig, EnvConfig, QuadrotorParams, RateControllerGains, RunConfig};
use crate::control::GeometricTracker;
use crate::env::{actor_obs_dim, critic_obs_dim, unmap_action, QuadEnv, Termination};
use crate::error::{Error, Result};
use crate::nn::Policy;
use crate::traj::{ReferenceTrajectory, TrajectoryKind};

/// Mean Euclidean distance between two equally long traces, x/y only.
pub fn med(actual: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<f64> {
    if actual.len() != reference.len() {
        return Err(Error::Shape(format!(
            "trace lengths differ: {} vs {}",
            actual.len(),
            reference.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Shape("empty traces".into()));
    }
    let sum: f64 = actual
        .iter()
        .zip(reference.iter())
        .map(|(a, r)| {
            let dx = a.x - r.x;
            let dy = a.y - r.y;
            (dx * dx + dy * dy).sqrt()
        })
        .sum();
    Ok(sum / actual.len() as f64)
}

/// Copy of the environment config sanitized for evaluation: exact nominal
/// dynamics and no reset perturbation.
pub fn clean_env(base: &EnvConfig) -> EnvConfig {
    let mut c = base.clone();
    c.dr = DrConfig::all_sysid();
    c.reset_pos_std = 0.0;
    c.reset_vel_std = 0.0;
    c.reset_tilt_std = 0.0;
    c
}

/// One recorded tracking run.
#[derive(Debug, Clone)]
pub struct TrialTrace {
    pub times: Vec<f64>,
    pub pos: Vec<Vector3<f64>>,
    pub ref_pos: Vec<Vector3<f64>>,
    /// Executed physical commands `[accel, p, q, r]`.
    pub commands: Vec<[f64; 4]>,
    pub crashed: bool,
    /// Infinite when the trial crashed.
    pub med: f64,
    pub mean_action_diff: f64,
}

/// Roll a controller over one trajectory. The controller maps the current
/// environment to a raw normalized action.
pub fn run_tracking_controller(
    controller: &mut dyn FnMut(&QuadEnv) -> [f64; 4],
    quad: &QuadrotorParams,
    gains: &RateControllerGains,
    env_cfg: &EnvConfig,
    traj: ReferenceTrajectory,
    seed: u64,
) -> Result<TrialTrace> {
    let mut cfg = env_cfg.clone();
    cfg.dr = DrConfig::all_sysid();
    cfg.episode_len = (traj.duration() / cfg.dt).round() as usize;
    let mut env = QuadEnv::new(quad.clone(), gains, cfg, seed)?;
    env.reset_with(traj)?;

    let steps = env.cfg.episode_len;
    let mut trace = TrialTrace {
        times: Vec::with_capacity(steps),
        pos: Vec::with_capacity(steps),
        ref_pos: Vec::with_capacity(steps),
        commands: Vec::with_capacity(steps),
        crashed: false,
        med: f64::INFINITY,
        mean_action_diff: 0.0,
    };
    loop {
        let raw = controller(&env);
        let res = env.step(&raw)?;
        trace.times.push(env.sim_time());
        trace.pos.push(env.state().pos);
        trace.ref_pos.push(env.reference_position());
        trace.commands.push(res.command.as_array());
        trace.mean_action_diff += res.action_diff;
        match res.termination {
            Termination::Running => {}
            Termination::Crashed => {
                trace.crashed = true;
                break;
            }
            Termination::TimeLimit => break,
        }
    }
    trace.mean_action_diff /= trace.times.len().max(1) as f64;
    if !trace.crashed {
        trace.med = med(&trace.pos, &trace.ref_pos)?;
    }
    Ok(trace)
}

/// Roll a policy (deterministic mean action unless `stochastic`).
pub fn run_tracking(
    policy: &Policy<f32>,
    quad: &QuadrotorParams,
    gains: &RateControllerGains,
    env_cfg: &EnvConfig,
    traj: ReferenceTrajectory,
    seed: u64,
    stochastic: bool,
) -> Result<TrialTrace> {
    let da = actor_obs_dim(env_cfg);
    let dc = critic_obs_dim(env_cfg);
    let mut action_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xAC7103);
    let mut obs = Array2::<f32>::zeros((1, da));
    let mut critic_scratch = vec![0.0f32; dc];
    let mut controller = move |env: &QuadEnv| -> [f64; 4] {
        env.write_obs(obs.row_mut(0).as_slice_mut().unwrap(), &mut critic_scratch);
        let mean = policy.forward_mean(&obs.view());
        let mut raw = [0.0f64; 4];
        if stochastic {
            let (a, _) = policy.head.sample_row(&mean.row(0), &mut action_rng);
            for d in 0..4 {
                raw[d] = a[d] as f64;
            }
        } else {
            for d in 0..4 {
                raw[d] = mean[(0, d)] as f64;
            }
        }
        raw
    };
    run_tracking_controller(&mut controller, quad, gains, env_cfg, traj, seed)
}

/// Roll the geometric reference tracker (evaluation baseline / demo).
pub fn run_tracking_baseline(
    tracker: &GeometricTracker,
    quad: &QuadrotorParams,
    gains: &RateControllerGains,
    env_cfg: &EnvConfig,
    traj: ReferenceTrajectory,
    seed: u64,
) -> Result<TrialTrace> {
    let cfg = env_cfg.clone();
    let mut controller = move |env: &QuadEnv| -> [f64; 4] {
        let t = env.sim_time();
        let ref_pos = env.trajectory().position(t + 2.0 * env.cfg.dt);
        let ref_vel = env.trajectory().velocity(t);
        let cmd = tracker.command(env.state(), &ref_pos, &ref_vel);
        unmap_action(&cmd.as_array(), &cfg)
    };
    run_tracking_controller(&mut controller, quad, gains, env_cfg, traj, seed)
}

// ---------------------------------------------------------------------------
// Benchmark protocol
// ---------------------------------------------------------------------------

/// Trial counts and trajectory settings of the benchmark suite.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SuiteConfig {
    /// Figure-eight lap periods (slow, normal, fast), s.
    pub fig8_periods: [f64; 3],
    /// Consecutive laps per figure-eight trial.
    pub fig8_laps: usize,
    /// Trials per figure-eight speed.
    pub fig8_trials: usize,
    /// Pentagram speeds (slow, fast), m/s.
    pub pentagram_speeds: [f64; 2],
    /// Single-run trials per pentagram speed.
    pub pentagram_trials: usize,
    /// Random trajectories per random family.
    pub random_trajs: usize,
    /// Repetitions of each random trajectory.
    pub random_repeats: usize,
    /// Duration of random trajectories, s.
    pub random_duration: f64,
    /// Evaluate with sampled actions instead of the mean.
    pub stochastic: bool,
    pub base_seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            fig8_periods: [15.0, 5.5, 3.5],
            fig8_laps: 10,
            fig8_trials: 3,
            pentagram_speeds: [0.5, 1.0],
            pentagram_trials: 3,
            random_trajs: 5,
            random_repeats: 2,
            random_duration: 10.0,
            stochastic: false,
            base_seed: 0,
        }
    }
}

impl SuiteConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    /// None means the trial crashed (rendered as inf in tables).
    pub med: Option<f64>,
    pub crashed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnReport {
    pub name: String,
    pub trials: Vec<TrialResult>,
    /// Mean/std over non-crashed trials.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub crashes: usize,
}

impl ColumnReport {
    fn from_trials(name: String, trials: Vec<TrialResult>) -> Self {
        let ok: Vec<f64> = trials.iter().filter_map(|t| t.med).collect();
        let crashes = trials.iter().filter(|t| t.crashed).count();
        let (mean, std) = if ok.is_empty() {
            (None, None)
        } else {
            let m = ok.iter().sum::<f64>() / ok.len() as f64;
            let var = ok.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / ok.len() as f64;
            (Some(m), Some(var.sqrt()))
        };
        Self { name, trials, mean, std, crashes }
    }

    /// "mean(std)" in meters, or the infinity sign when every trial crashed.
    pub fn cell(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) if self.crashes == 0 => format!("{m:.3}({s:.3})"),
            (Some(m), Some(s)) => format!("{m:.3}({s:.3}) [{} crash]", self.crashes),
            _ => "inf".into(),
        }
    }
}

/// Identifies what produced a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fingerprint {
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint_iteration: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub columns: Vec<ColumnReport>,
    pub fingerprint: Fingerprint,
}

impl EvalReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let width = self.columns.iter().map(|c| c.name.len()).max().unwrap_or(8).max(8);
        for c in &self.columns {
            out.push_str(&format!("{:width$}  {}\n", c.name, c.cell(), width = width));
        }
        out
    }
}

/// A trial trace tagged with its table column.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub column: String,
    pub trial: usize,
    pub trace: TrialTrace,
}

fn trial_seed(base: u64, column: usize, trial: usize) -> u64 {
    // fnv-1a over (base, column, trial)
    let mut h = 0xcbf29ce484222325u64;
    for b in base
        .to_le_bytes()
        .iter()
        .chain((column as u64).to_le_bytes().iter())
        .chain((trial as u64).to_le_bytes().iter())
    {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// FNV-1a hash of the serialized run configuration.
pub fn config_fingerprint(cfg: &RunConfig) -> String {
    let text = toml::to_string(cfg).unwrap_or_default();
    let mut h = 0xcbf29ce484222325u64;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Run the full benchmark protocol: figure-eight at three speeds (multi-lap,
/// several seeds), random polynomials and zigzags (fresh trajectories, two
/// repeats each) and the pentagram at two speeds.
pub fn run_benchmark(
    policy: &Policy<f32>,
    run_cfg: &RunConfig,
    suite: &SuiteConfig,
    checkpoint_iteration: usize,
) -> Result<(EvalReport, Vec<TrialRecord>)> {
    let env_cfg = &run_cfg.env;
    let mut columns = Vec::new();
    let mut records = Vec::new();
    let mut column_idx = 0usize;

    let speed_names = ["slow", "normal", "fast"];
    for (si, period) in suite.fig8_periods.iter().enumerate() {
        let name = format!("fig8_{}", speed_names.get(si).copied().unwrap_or("x"));
        let mut trials = Vec::new();
        for trial in 0..suite.fig8_trials {
            let traj = ReferenceTrajectory::figure_eight(*period)?.repeated(suite.fig8_laps);
            let trace = run_tracking(
                policy,
                &run_cfg.quad,
                &run_cfg.gains,
                env_cfg,
                traj,
                trial_seed(suite.base_seed, column_idx, trial),
                suite.stochastic,
            )?;
            trials.push(TrialResult {
                med: (!trace.crashed).then_some(trace.med),
                crashed: trace.crashed,
            });
            records.push(TrialRecord { column: name.clone(), trial, trace });
        }
        columns.push(ColumnReport::from_trials(name, trials));
        column_idx += 1;
    }

    for kind in [TrajectoryKind::Polynomial, TrajectoryKind::Zigzag] {
        let name = match kind {
            TrajectoryKind::Polynomial => "polynomial",
            _ => "zigzag",
        }
        .to_string();
        let mut trials = Vec::new();
        let mut trial_no = 0usize;
        for i in 0..suite.random_trajs {
            for j in 0..suite.random_repeats {
                let mut gen_rng =
                    ChaCha8Rng::seed_from_u64(trial_seed(suite.base_seed, column_idx, i));
                let traj = match kind {
                    TrajectoryKind::Polynomial => ReferenceTrajectory::random_polynomial(
                        &mut gen_rng,
                        suite.random_duration,
                    )?,
                    _ => ReferenceTrajectory::zigzag(&mut gen_rng, suite.random_duration)?,
                };
                let trace = run_tracking(
                    policy,
                    &run_cfg.quad,
                    &run_cfg.gains,
                    env_cfg,
                    traj,
                    trial_seed(suite.base_seed, column_idx, 1000 + i * 17 + j),
                    suite.stochastic,
                )?;
                trials.push(TrialResult {
                    med: (!trace.crashed).then_some(trace.med),
                    crashed: trace.crashed,
                });
                records.push(TrialRecord { column: name.clone(), trial: trial_no, trace });
                trial_no += 1;
            }
        }
        columns.push(ColumnReport::from_trials(name, trials));
        column_idx += 1;
    }

    let pent_names = ["slow", "fast"];
    for (si, speed) in suite.pentagram_speeds.iter().enumerate() {
        let name = format!("pentagram_{}", pent_names.get(si).copied().unwrap_or("x"));
        let mut trials = Vec::new();
        for trial in 0..suite.pentagram_trials {
            let traj = ReferenceTrajectory::pentagram(*speed)?;
            let trace = run_tracking(
                policy,
                &run_cfg.quad,
                &run_cfg.gains,
                env_cfg,
                traj,
                trial_seed(suite.base_seed, column_idx, trial),
                suite.stochastic,
            )?;
            trials.push(TrialResult {
                med: (!trace.crashed).then_some(trace.med),
                crashed: trace.crashed,
            });
            records.push(TrialRecord { column: name.clone(), trial, trace });
        }
        columns.push(ColumnReport::from_trials(name, trials));
        column_idx += 1;
    }

    let report = EvalReport {
        columns,
        fingerprint: Fingerprint {
            config_hash: config_fingerprint(run_cfg),
            seed: suite.base_seed,
            checkpoint_iteration,
        },
    };
    Ok((report, records))
}

/// Write per-trial CSV traces and a JSON summary into `dir`.
///
/// CSV schema (11 columns): t, x, y, z, x_ref, y_ref, z_ref, a_thrust,
/// a_roll_rate, a_pitch_rate, a_yaw_rate. Values print in full round-trip
/// precision.
pub fn export_traces(report: &EvalReport, records: &[TrialRecord], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in records {
        let path = dir.join(format!("{}_{:02}.csv", r.column, r.trial));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record([
            "t", "x", "y", "z", "x_ref", "y_ref", "z_ref", "a_thrust", "a_roll_rate",
            "a_pitch_rate", "a_yaw_rate",
        ])
        .map_err(csv_err)?;
        for i in 0..r.trace.times.len() {
            let p = r.trace.pos[i];
            let q = r.trace.ref_pos[i];
            let a = r.trace.commands[i];
            w.write_record(&[
                r.trace.times[i].to_string(),
                p.x.to_string(),
                p.y.to_string(),
                p.z.to_string(),
                q.x.to_string(),
                q.y.to_string(),
                q.z.to_string(),
                a[0].to_string(),
                a[1].to_string(),
                a[2].to_string(),
                a[3].to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    let summary = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(dir.join("summary.json"), summary)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

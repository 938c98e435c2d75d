//! Trajectory-tracking MDP around the simulator: observation construction,
//! the exponential tracking + smoothness reward, episode lifecycle and the
//! per-episode dynamics-parameter randomization.
//!
//! The actor sees the relative positions of the next N reference points, its
//! velocity and attitude; the critic additionally receives the training
//! timestep as privileged information. Actions are normalized CTBR commands
//! executed by the proportional rate controller at 100 Hz.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{
    ActionPipeline, DrConfig, DrMode, EnvConfig, QuadrotorParams, RateControllerGains,
    RotationObs, SmoothnessKind,
};
use crate::control::{clip_action, low_pass_filter, CtbrCommand, RateController};
use crate::error::Result;
use crate::nn::Scalar;
use crate::sim::{self, QuadrotorState};
use crate::traj::{ReferenceTrajectory, TrajectoryKind};

/// Why a step ended the episode, if it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Running,
    /// Position error, tilt or numeric divergence left the safe envelope.
    Crashed,
    TimeLimit,
}

/// Reward and its components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParts {
    pub total: f64,
    pub task: f64,
    pub smooth: f64,
    /// Raw smoothness exponent A (before e^-A).
    pub smooth_raw: f64,
}

/// Observation feature sizes under a given configuration.
pub fn actor_obs_dim(cfg: &EnvConfig) -> usize {
    base_obs_dim(cfg) + if cfg.actor_time_vector { cfg.time_vector_k } else { 0 }
}

pub fn critic_obs_dim(cfg: &EnvConfig) -> usize {
    base_obs_dim(cfg) + if cfg.critic_time_vector { cfg.time_vector_k } else { 0 }
}

fn base_obs_dim(cfg: &EnvConfig) -> usize {
    let rot = match cfg.rotation_obs {
        RotationObs::Matrix => 9,
        RotationObs::Quaternion => 4,
    };
    3 * cfg.lookahead_n
        + if cfg.include_lin_vel { 3 } else { 0 }
        + rot
        + if cfg.include_prev_action { 4 } else { 0 }
}

/// Per-feature scale for the critic input; state features pass through, the
/// raw timestep feature is shrunk so it does not dwarf everything else.
pub fn critic_input_scale<F: Scalar>(cfg: &EnvConfig) -> ndarray::Array1<F> {
    let dim = critic_obs_dim(cfg);
    let mut scale = ndarray::Array1::from_elem(dim, F::one());
    if cfg.critic_time_vector {
        for i in (dim - cfg.time_vector_k)..dim {
            scale[i] = F::from_f64(cfg.time_feature_scale);
        }
    }
    scale
}

/// Map a raw policy output (normalized, roughly [-1, 1] per dim) to a
/// physical `[accel, p, q, r]` command vector, before clamping.
pub fn map_raw_action(raw: &[f64; 4], cfg: &EnvConfig) -> [f64; 4] {
    let b = &cfg.ctbr_bounds;
    [
        (raw[0] + 1.0) * 0.5 * b.max_collective_accel,
        raw[1] * b.max_body_rate,
        raw[2] * b.max_body_rate,
        raw[3] * b.max_body_rate,
    ]
}

/// Inverse of [`map_raw_action`]: normalized policy-space action for a
/// physical `[accel, p, q, r]` command.
pub fn unmap_action(physical: &[f64; 4], cfg: &EnvConfig) -> [f64; 4] {
    let b = &cfg.ctbr_bounds;
    [
        2.0 * physical[0] / b.max_collective_accel - 1.0,
        physical[1] / b.max_body_rate,
        physical[2] / b.max_body_rate,
        physical[3] / b.max_body_rate,
    ]
}

/// Per-episode parameter randomization. Each parameter transforms
/// independently per its mode; inertia uses a single shared factor.
pub fn randomize_params<R: Rng>(
    nominal: &QuadrotorParams,
    dr: &DrConfig,
    rng: &mut R,
) -> QuadrotorParams {
    let mut p = nominal.clone();
    p.mass *= dr_factor(dr.mass, rng);
    p.inertia_diag *= dr_factor(dr.inertia, rng);
    p.motor_rate *= dr_factor(dr.motor_rate, rng);
    p.thrust_coeff *= dr_factor(dr.thrust_coeff, rng);
    p
}

fn dr_factor<R: Rng>(mode: DrMode, rng: &mut R) -> f64 {
    match mode {
        DrMode::SysId => 1.0,
        DrMode::UniformDr(f) => rng.random_range((1.0 - f)..(1.0 + f)),
        DrMode::Offset(f) => 1.0 + f,
        DrMode::OffsetPlusDr(f) => (1.0 + f) * rng.random_range((1.0 - f)..(1.0 + f)),
    }
}

/// Task + smoothness reward. `vel_history` holds recent simulated velocities,
/// most recent last; kinematic penalties fall back to zero exponent while the
/// history is shorter than the requested derivative needs.
pub fn reward(
    pos: &Vector3<f64>,
    ref_pos: &Vector3<f64>,
    u: &CtbrCommand,
    u_prev: &CtbrCommand,
    vel_history: &[Vector3<f64>],
    cfg: &EnvConfig,
) -> RewardParts {
    let task = (-cfg.pos_reward_scale * (pos - ref_pos).norm()).exp();
    let scale = cfg.smoothness_scale_value();
    let dt = cfg.dt;
    let a_raw = match cfg.smoothness_kind {
        SmoothnessKind::ActionDiff => {
            let un = u.normalized(&cfg.ctbr_bounds);
            let up = u_prev.normalized(&cfg.ctbr_bounds);
            let mut sq = 0.0;
            for d in 0..4 {
                sq += (un[d] - up[d]) * (un[d] - up[d]);
            }
            sq.sqrt()
        }
        SmoothnessKind::ActionNorm => {
            let un = u.normalized(&cfg.ctbr_bounds);
            un.iter().map(|v| v * v).sum::<f64>().sqrt()
        }
        SmoothnessKind::Acc => match vel_history {
            [.., a, b] => ((b - a) / dt).norm(),
            _ => 0.0,
        },
        SmoothnessKind::Jerk => match vel_history {
            [.., a, b, c] => ((c - 2.0 * b + a) / (dt * dt)).norm(),
            _ => 0.0,
        },
        SmoothnessKind::Snap => match vel_history {
            [.., a, b, c, d] => ((d - 3.0 * c + 3.0 * b - a) / (dt * dt * dt)).norm(),
            _ => 0.0,
        },
        SmoothnessKind::None => 0.0,
    };
    if cfg.smoothness_kind == SmoothnessKind::None {
        return RewardParts { total: task, task, smooth: 0.0, smooth_raw: 0.0 };
    }
    let smooth = (-scale * a_raw).exp();
    RewardParts { total: task + cfg.lambda * smooth, task, smooth, smooth_raw: scale * a_raw }
}

/// Episode termination rule.
pub fn termination_status(
    state: &QuadrotorState,
    ref_pos: &Vector3<f64>,
    t_step: usize,
    cfg: &EnvConfig,
) -> Termination {
    if (state.pos - ref_pos).norm() > cfg.crash_pos_err
        || state.tilt_angle() > cfg.crash_tilt_deg.to_radians()
    {
        return Termination::Crashed;
    }
    if t_step >= cfg.episode_len {
        return Termination::TimeLimit;
    }
    Termination::Running
}

/// Outcome of one control step.
#[derive(Debug, Clone, Copy)]
pub struct StepResult {
    pub reward: RewardParts,
    pub termination: Termination,
    /// Command actually executed (after clamp and smoothing pipeline).
    pub command: CtbrCommand,
    pub saturated: bool,
    /// Normalized action difference ||u - u_prev||, tracked for every
    /// smoothness configuration.
    pub action_diff: f64,
}

/// One trajectory-tracking environment instance.
pub struct QuadEnv {
    pub cfg: EnvConfig,
    nominal: QuadrotorParams,
    controller: RateController,
    rng: ChaCha8Rng,
    /// Episode state.
    params: QuadrotorParams,
    traj: ReferenceTrajectory,
    state: QuadrotorState,
    t_step: usize,
    prev_cmd: CtbrCommand,
    vel_history: Vec<Vector3<f64>>,
    terminated: Termination,
}

impl QuadEnv {
    pub fn new(
        nominal: QuadrotorParams,
        gains: &RateControllerGains,
        cfg: EnvConfig,
        seed: u64,
    ) -> Result<Self> {
        use rand::SeedableRng;
        cfg.validate()?;
        nominal.validate()?;
        let controller = RateController::new(&nominal, gains)?;
        let mut env = Self {
            cfg,
            nominal,
            controller,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: QuadrotorParams::default(),
            traj: ReferenceTrajectory::figure_eight(5.5)?,
            state: QuadrotorState::at_rest(Vector3::zeros()),
            t_step: 0,
            prev_cmd: CtbrCommand::hover(),
            vel_history: Vec::with_capacity(8),
            terminated: Termination::Running,
        };
        env.reset()?;
        Ok(env)
    }

    /// Start a fresh episode: sample the trajectory family from the mixture,
    /// draw randomized dynamics parameters and perturb the initial state.
    pub fn reset(&mut self) -> Result<()> {
        let duration = self.cfg.effective_traj_duration();
        let kind = sample_family(&mut self.rng, &self.cfg.traj_mixture);
        let traj = match kind {
            TrajectoryKind::Polynomial => {
                ReferenceTrajectory::random_polynomial(&mut self.rng, duration)?
            }
            _ => ReferenceTrajectory::zigzag(&mut self.rng, duration)?,
        };
        self.reset_with(traj)
    }

    /// Start a fresh episode on a caller-chosen trajectory (evaluation path).
    pub fn reset_with(&mut self, traj: ReferenceTrajectory) -> Result<()> {
        self.params = randomize_params(&self.nominal, &self.cfg.dr, &mut self.rng);
        self.traj = traj;
        let start = self.traj.position(0.0);
        let mut state = QuadrotorState::hover(start, &self.params);
        for i in 0..3 {
            state.pos[i] += self.cfg.reset_pos_std * standard_normal(&mut self.rng);
            state.vel[i] += self.cfg.reset_vel_std * standard_normal(&mut self.rng);
        }
        let tilt = self.cfg.reset_tilt_std * standard_normal(&mut self.rng);
        let dir: f64 = self.rng.random_range(0.0..std::f64::consts::TAU);
        let axis = Unit::new_normalize(Vector3::new(dir.cos(), dir.sin(), 0.0));
        state.quat = UnitQuaternion::from_axis_angle(&axis, tilt);
        self.state = state;
        self.t_step = 0;
        self.prev_cmd = CtbrCommand::hover();
        self.vel_history.clear();
        self.vel_history.push(self.state.vel);
        self.terminated = Termination::Running;
        Ok(())
    }

    /// Override the episode trajectory (evaluation drives this directly).
    pub fn set_trajectory(&mut self, traj: ReferenceTrajectory) {
        self.traj = traj;
    }

    pub fn state(&self) -> &QuadrotorState {
        &self.state
    }

    pub fn trajectory(&self) -> &ReferenceTrajectory {
        &self.traj
    }

    pub fn params(&self) -> &QuadrotorParams {
        &self.params
    }

    pub fn t_step(&self) -> usize {
        self.t_step
    }

    pub fn sim_time(&self) -> f64 {
        self.t_step as f64 * self.cfg.dt
    }

    pub fn reference_position(&self) -> Vector3<f64> {
        self.traj.position(self.sim_time())
    }

    pub fn terminated(&self) -> Termination {
        self.terminated
    }

    pub fn prev_command(&self) -> CtbrCommand {
        self.prev_cmd
    }

    /// Write actor and critic features for the current state.
    pub fn write_obs<F: Scalar>(&self, actor: &mut [F], critic: &mut [F]) {
        debug_assert_eq!(actor.len(), actor_obs_dim(&self.cfg));
        debug_assert_eq!(critic.len(), critic_obs_dim(&self.cfg));
        let mut features = Vec::with_capacity(base_obs_dim(&self.cfg));
        let t = self.sim_time();
        for i in 1..=self.cfg.lookahead_n {
            let p = self.traj.position(t + i as f64 * self.cfg.lookahead_spacing);
            features.push(p.x - self.state.pos.x);
            features.push(p.y - self.state.pos.y);
            features.push(p.z - self.state.pos.z);
        }
        if self.cfg.include_lin_vel {
            features.extend_from_slice(self.state.vel.as_slice());
        }
        match self.cfg.rotation_obs {
            RotationObs::Matrix => {
                let r = self.state.rotation_matrix();
                for row in 0..3 {
                    for col in 0..3 {
                        features.push(r[(row, col)]);
                    }
                }
            }
            RotationObs::Quaternion => {
                let q = self.state.quat;
                features.push(q.w);
                features.push(q.i);
                features.push(q.j);
                features.push(q.k);
            }
        }
        if self.cfg.include_prev_action {
            let un = self.prev_cmd.normalized(&self.cfg.ctbr_bounds);
            features.extend_from_slice(&un);
        }
        for (dst, src) in actor.iter_mut().zip(features.iter()) {
            *dst = F::from_f64(*src);
        }
        if self.cfg.actor_time_vector {
            for i in 0..self.cfg.time_vector_k {
                actor[features.len() + i] = F::from_f64(self.t_step as f64);
            }
        }
        for (dst, src) in critic.iter_mut().zip(features.iter()) {
            *dst = F::from_f64(*src);
        }
        if self.cfg.critic_time_vector {
            for i in 0..self.cfg.time_vector_k {
                critic[features.len() + i] = F::from_f64(self.t_step as f64);
            }
        }
    }

    /// Observation pair as owned vectors (the slice writer is the hot path).
    pub fn observe(&self) -> (Vec<f64>, Vec<f64>) {
        let mut actor = vec![0.0; actor_obs_dim(&self.cfg)];
        let mut critic = vec![0.0; critic_obs_dim(&self.cfg)];
        self.write_obs(&mut actor, &mut critic);
        (actor, critic)
    }

    /// Advance one control step with a raw (normalized) policy action.
    pub fn step(&mut self, raw_action: &[f64; 4]) -> Result<StepResult> {
        let mapped = map_raw_action(raw_action, &self.cfg);
        let mut cmd = clip_action(&mapped, &self.cfg.ctbr_bounds);
        match self.cfg.action_pipeline {
            ActionPipeline::None => {}
            ActionPipeline::Clip { frac } => {
                let mut tight = self.cfg.ctbr_bounds;
                tight.max_collective_accel *= frac;
                tight.max_body_rate *= frac;
                cmd = clip_action(&cmd.as_array(), &tight);
            }
            ActionPipeline::LowPass { alpha } => {
                cmd = low_pass_filter(&cmd, &self.prev_cmd, alpha)?;
            }
        }

        let ctrl = self.controller.command(&cmd, &self.state);
        let stepped = sim::step(&self.state, &ctrl.rotor_cmd, &self.params, self.cfg.dt);
        let crashed_numerically = stepped.is_err();
        if let Ok(next) = stepped {
            self.state = next;
        }
        self.t_step += 1;
        self.vel_history.push(self.state.vel);
        if self.vel_history.len() > 4 {
            self.vel_history.remove(0);
        }

        let ref_pos = self.reference_position();
        let reward_parts =
            reward(&self.state.pos, &ref_pos, &cmd, &self.prev_cmd, &self.vel_history, &self.cfg);
        let un = cmd.normalized(&self.cfg.ctbr_bounds);
        let up = self.prev_cmd.normalized(&self.cfg.ctbr_bounds);
        let action_diff =
            (0..4).map(|d| (un[d] - up[d]) * (un[d] - up[d])).sum::<f64>().sqrt();
        self.prev_cmd = cmd;

        let termination = if crashed_numerically {
            Termination::Crashed
        } else {
            termination_status(&self.state, &ref_pos, self.t_step, &self.cfg)
        };
        self.terminated = termination;
        Ok(StepResult {
            reward: reward_parts,
            termination,
            command: cmd,
            saturated: ctrl.saturated,
            action_diff,
        })
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw a trajectory family from (polynomial, zigzag) mixture weights.
pub fn sample_family<R: Rng>(rng: &mut R, weights: &[f64; 2]) -> TrajectoryKind {
    let u: f64 = rng.random_range(0.0..1.0);
    if u < weights[0] {
        TrajectoryKind::Polynomial
    } else {
        TrajectoryKind::Zigzag
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GRAVITY;
    use crate::sim::hover_rotor_speed;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    fn env_with(cfg: EnvConfig, seed: u64) -> QuadEnv {
        QuadEnv::new(
            QuadrotorParams::default(),
            &RateControllerGains::default(),
            cfg,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn obs_dimensions_match_layout() {
        let c = cfg();
        assert_eq!(actor_obs_dim(&c), 42);
        assert_eq!(critic_obs_dim(&c), 43);

        let mut c2 = cfg();
        c2.include_prev_action = true;
        assert_eq!(actor_obs_dim(&c2), 46);

        let mut c3 = cfg();
        c3.rotation_obs = RotationObs::Quaternion;
        assert_eq!(actor_obs_dim(&c3), 37);

        let mut c4 = cfg();
        c4.include_lin_vel = false;
        assert_eq!(actor_obs_dim(&c4), 39);

        let mut c5 = cfg();
        c5.actor_time_vector = true;
        assert_eq!(actor_obs_dim(&c5), 43);
    }

    #[test]
    fn observation_zero_case() {
        let mut env = env_with(cfg(), 0);
        // Constant trajectory at exactly the vehicle position.
        let point = Vector3::new(0.2, -0.1, 1.0);
        env.set_trajectory(constant_trajectory(point));
        env.state = QuadrotorState::at_rest(point);
        env.t_step = 0;
        let (actor, critic) = env.observe();
        for v in &actor[0..30] {
            assert_relative_eq!(*v, 0.0, epsilon = 1e-12);
        }
        for v in &actor[30..33] {
            assert_relative_eq!(*v, 0.0, epsilon = 1e-12);
        }
        let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for (v, e) in actor[33..42].iter().zip(identity.iter()) {
            assert_relative_eq!(*v, *e, epsilon = 1e-12);
        }
        assert_eq!(critic.len(), 43);
        assert_relative_eq!(critic[42], 0.0);
    }

    #[test]
    fn observation_yaw_rotation_matrix() {
        let mut env = env_with(cfg(), 0);
        let point = Vector3::new(0.0, 0.0, 1.0);
        env.set_trajectory(constant_trajectory(point));
        let mut s = QuadrotorState::at_rest(point);
        s.quat = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        env.state = s;
        let (actor, _) = env.observe();
        // Yaw by pi/2: columns rotate x->y.
        let expect = [0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for (v, e) in actor[33..42].iter().zip(expect.iter()) {
            assert_relative_eq!(*v, *e, epsilon = 1e-12);
        }
    }

    #[test]
    fn observe_is_pure() {
        let env = env_with(cfg(), 3);
        let a = env.observe();
        let b = env.observe();
        assert_eq!(a, b);
    }

    #[test]
    fn reward_perfect_tracking_equal_actions() {
        let c = cfg();
        let p = Vector3::new(0.3, 0.2, 1.0);
        let u = CtbrCommand::hover();
        let r = reward(&p, &p, &u, &u, &[Vector3::zeros()], &c);
        assert_relative_eq!(r.total, 1.0 + c.lambda, epsilon = 1e-12);
        assert_relative_eq!(r.task, 1.0);
        assert_relative_eq!(r.smooth, 1.0);
    }

    #[test]
    fn reward_task_vanishes_far_away() {
        let c = cfg();
        let u = CtbrCommand::hover();
        let r = reward(
            &Vector3::new(1e4, 0.0, 0.0),
            &Vector3::zeros(),
            &u,
            &u,
            &[],
            &c,
        );
        assert!(r.task < 1e-300);
        assert_relative_eq!(r.total, c.lambda * r.smooth, epsilon = 1e-12);
    }

    #[test]
    fn reward_regression_pin() {
        // c_pos = 2, error 0.5 m, lambda = 0.4, A = 1 => e^-1 + 0.4 e^-1.
        let mut c = cfg();
        c.pos_reward_scale = 2.0;
        c.lambda = 0.4;
        let pos = Vector3::new(0.5, 0.0, 0.0);
        let reference = Vector3::zeros();
        // Normalized action difference of exactly 1: thrust from 0 to full.
        let u = CtbrCommand::new(c.ctbr_bounds.max_collective_accel, Vector3::zeros());
        let u_prev = CtbrCommand::new(0.0, Vector3::zeros());
        let r = reward(&pos, &reference, &u, &u_prev, &[], &c);
        let e1 = (-1.0f64).exp();
        assert_relative_eq!(r.total, e1 + 0.4 * e1, epsilon = 1e-12);
        assert_relative_eq!(r.total, 0.5150, epsilon = 1e-4);
    }

    #[test]
    fn reward_translation_invariance() {
        let c = cfg();
        let u = CtbrCommand::new(0.5 * GRAVITY, Vector3::new(0.1, -0.2, 0.3));
        let u_prev = CtbrCommand::hover();
        let shift = Vector3::new(13.0, -7.5, 2.25);
        for i in 0..50 {
            let pos = Vector3::new(0.1 * i as f64, -0.05 * i as f64, 1.0);
            let reference = Vector3::new(0.02 * i as f64, 0.01, 1.1);
            let a = reward(&pos, &reference, &u, &u_prev, &[], &c);
            let b = reward(&(pos + shift), &(reference + shift), &u, &u_prev, &[], &c);
            assert_relative_eq!(a.total, b.total, epsilon = 1e-12);
        }
    }

    #[test]
    fn reward_components_in_unit_interval() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let pos = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.0..2.0),
            );
            let u = CtbrCommand::new(
                rng.random_range(0.0..c.ctbr_bounds.max_collective_accel),
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                ),
            );
            let r = reward(&pos, &Vector3::new(0.0, 0.0, 1.0), &u, &CtbrCommand::hover(), &[], &c);
            assert!(r.task > 0.0 && r.task <= 1.0);
            assert!(r.smooth > 0.0 && r.smooth <= 1.0);
            assert!(r.total > 0.0 && r.total <= 1.0 + c.lambda);
        }
    }

    #[test]
    fn action_diff_penalty_zero_iff_equal() {
        let c = cfg();
        let p = Vector3::zeros();
        let u = CtbrCommand::new(0.7 * GRAVITY, Vector3::new(0.5, 0.0, -0.5));
        let same = reward(&p, &p, &u, &u, &[], &c);
        assert_relative_eq!(same.smooth, 1.0, epsilon = 1e-15);
        let other = CtbrCommand::new(0.7 * GRAVITY, Vector3::new(0.5, 1e-6, -0.5));
        let diff = reward(&p, &p, &u, &other, &[], &c);
        assert!(diff.smooth < 1.0);
    }

    #[test]
    fn kinematic_penalties_fall_back_without_history() {
        let mut c = cfg();
        for kind in [SmoothnessKind::Acc, SmoothnessKind::Jerk, SmoothnessKind::Snap] {
            c.smoothness_kind = kind;
            let p = Vector3::zeros();
            let u = CtbrCommand::hover();
            let r = reward(&p, &p, &u, &u, &[Vector3::zeros()], &c);
            assert_relative_eq!(r.smooth, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn acc_penalty_uses_backward_difference() {
        let mut c = cfg();
        c.smoothness_kind = SmoothnessKind::Acc;
        c.smoothness_scale = Some(1.0);
        let p = Vector3::zeros();
        let u = CtbrCommand::hover();
        let hist = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.01, 0.0, 0.0)];
        let r = reward(&p, &p, &u, &u, &hist, &c);
        // acc = 0.01 / 0.01 = 1 m/s^2.
        assert_relative_eq!(r.smooth, (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn randomize_sysid_is_identity() {
        let nominal = QuadrotorParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = randomize_params(&nominal, &DrConfig::all_sysid(), &mut rng);
        assert_eq!(out, nominal);
    }

    #[test]
    fn randomize_offset_mass() {
        let mut nominal = QuadrotorParams::default();
        nominal.mass = 0.030;
        let mut dr = DrConfig::all_sysid();
        dr.mass = DrMode::Offset(0.30);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = randomize_params(&nominal, &dr, &mut rng);
        assert_relative_eq!(out.mass, 0.039, epsilon = 1e-12);
    }

    #[test]
    fn randomize_uniform_dr_statistics() {
        let nominal = QuadrotorParams::default();
        let mut dr = DrConfig::all_sysid();
        dr.thrust_coeff = DrMode::UniformDr(0.30);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let mut mean = 0.0;
        for _ in 0..n {
            let out = randomize_params(&nominal, &dr, &mut rng);
            let ratio = out.thrust_coeff / nominal.thrust_coeff;
            assert!((0.7..=1.3).contains(&ratio));
            mean += ratio;
        }
        mean /= n as f64;
        assert!((mean - 1.0).abs() < 0.01, "empirical mean {mean}");
    }

    #[test]
    fn family_mixture_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let mut poly = 0usize;
        for _ in 0..n {
            if sample_family(&mut rng, &[0.5, 0.5]) == TrajectoryKind::Polynomial {
                poly += 1;
            }
        }
        // 3 sigma of binomial(10^4, 0.5) is 150.
        assert!((poly as f64 - 5000.0).abs() < 150.0, "polynomial draws {poly}");
    }

    #[test]
    fn degenerate_mixture_always_polynomial() {
        let mut c = cfg();
        c.traj_mixture = [1.0, 0.0];
        c.episode_len = 100;
        let mut env = env_with(c, 5);
        for _ in 0..5 {
            assert_eq!(env.trajectory().kind(), TrajectoryKind::Polynomial);
            env.reset().unwrap();
        }
    }

    #[test]
    fn zero_noise_reset_starts_on_trajectory_at_hover() {
        let mut c = cfg();
        c.reset_pos_std = 0.0;
        c.reset_vel_std = 0.0;
        c.reset_tilt_std = 0.0;
        c.dr = DrConfig::all_sysid();
        let env = env_with(c, 7);
        let start = env.trajectory().position(0.0);
        assert_relative_eq!((env.state().pos - start).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(env.state().vel.norm(), 0.0, epsilon = 1e-12);
        let h = hover_rotor_speed(env.params());
        for w in env.state().rotor_speed {
            assert_relative_eq!(w, h, epsilon = 1e-12);
        }
    }

    #[test]
    fn same_seed_same_episode() {
        let mut c = cfg();
        c.episode_len = 50;
        let mut a = env_with(c.clone(), 123);
        let mut b = env_with(c, 123);
        for i in 0..120 {
            let raw = [0.23 * (i as f64 * 0.1).sin(), 0.05, -0.02, 0.01];
            let ra = a.step(&raw).unwrap();
            let rb = b.step(&raw).unwrap();
            assert_eq!(ra.reward, rb.reward);
            assert_eq!(a.state().pos, b.state().pos);
            if ra.termination != Termination::Running {
                a.reset().unwrap();
                b.reset().unwrap();
            }
        }
    }

    #[test]
    fn termination_rules() {
        let c = cfg();
        let state = QuadrotorState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        let near = Vector3::new(0.1, 0.0, 1.0);
        assert_eq!(termination_status(&state, &near, 0, &c), Termination::Running);
        assert_eq!(termination_status(&state, &near, c.episode_len, &c), Termination::TimeLimit);
        let far = Vector3::new(5.0, 0.0, 1.0);
        assert_eq!(termination_status(&state, &far, 0, &c), Termination::Crashed);
        let mut tilted = state.clone();
        tilted.quat = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 1.6);
        assert_eq!(termination_status(&tilted, &near, 0, &c), Termination::Crashed);
    }

    #[test]
    fn hover_action_tracks_constant_trajectory() {
        let mut c = cfg();
        c.reset_pos_std = 0.0;
        c.reset_vel_std = 0.0;
        c.reset_tilt_std = 0.0;
        c.dr = DrConfig::all_sysid();
        let mut env = env_with(c, 1);
        let point = env.state().pos;
        env.set_trajectory(constant_trajectory(point));
        // Raw action whose mapped collective is exactly 1 g, zero rates.
        let raw_hover = [2.0 * GRAVITY / env.cfg.ctbr_bounds.max_collective_accel - 1.0, 0.0, 0.0, 0.0];
        let mut total = 0.0;
        for _ in 0..100 {
            let r = env.step(&raw_hover).unwrap();
            assert_eq!(r.termination, Termination::Running);
            total += r.reward.total;
        }
        assert!((env.state().pos - point).norm() < 1e-3);
        assert!(total / 100.0 > 1.35, "hover should earn near-max reward");
    }

    fn constant_trajectory(p: Vector3<f64>) -> ReferenceTrajectory {
        ReferenceTrajectory::constant(p, 600.0)
    }
}

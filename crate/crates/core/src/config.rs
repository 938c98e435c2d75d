//! Run configuration: vehicle parameters, controller gains, MDP options and
//! trainer hyperparameters. Everything here loads from a single TOML file so a
//! run is fully described by `(config, seed)`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Standard gravity magnitude, m/s^2.
pub const GRAVITY: f64 = 9.81;

/// Physical parameters of the simulated quadrotor. All values in SI units.
///
/// Defaults describe a Crazyflie-class nano quadrotor; they are config inputs,
/// not calibrated ground truth.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct QuadrotorParams {
    /// Vehicle mass, kg.
    pub mass: f64,
    /// Diagonal of the body-frame inertia matrix, kg m^2.
    pub inertia_diag: Vector3<f64>,
    /// Rotor positions in the body frame, m.
    pub rotor_pos: [[f64; 3]; 4],
    /// Rotor spin direction, +1 (CCW) or -1 (CW). Two of each.
    pub rotor_spin_dir: [f64; 4],
    /// Thrust coefficient k_f, N/(rad/s)^2.
    pub thrust_coeff: f64,
    /// Yaw drag coefficient k_m, N m/(rad/s)^2.
    pub torque_coeff: f64,
    /// Motor response gain T_m, 1/s: rotor_speed' = T_m (cmd - rotor_speed).
    pub motor_rate: f64,
    /// Maximum rotor speed, rad/s.
    pub omega_max: f64,
    /// Gravity vector in the world frame, m/s^2.
    pub gravity: Vector3<f64>,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        // Symmetric X layout: four arms at 45/135/225/315 degrees.
        let arm = 0.046;
        let xy = arm / std::f64::consts::SQRT_2;
        Self {
            mass: 0.03,
            inertia_diag: Vector3::new(1.4e-5, 1.4e-5, 2.17e-5),
            rotor_pos: [
                [xy, xy, 0.0],
                [-xy, xy, 0.0],
                [-xy, -xy, 0.0],
                [xy, -xy, 0.0],
            ],
            rotor_spin_dir: [1.0, -1.0, 1.0, -1.0],
            thrust_coeff: 2.25e-8,
            torque_coeff: 1.3e-10,
            motor_rate: 25.0,
            omega_max: 2500.0,
            gravity: Vector3::new(0.0, 0.0, -GRAVITY),
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::InvalidConfig(format!("mass must be > 0, got {}", self.mass)));
        }
        if self.inertia_diag.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "inertia_diag must be > 0 componentwise, got {:?}",
                self.inertia_diag
            )));
        }
        if !(self.thrust_coeff > 0.0) {
            return Err(Error::InvalidConfig("thrust_coeff must be > 0".into()));
        }
        if self.torque_coeff < 0.0 {
            return Err(Error::InvalidConfig("torque_coeff must be >= 0".into()));
        }
        if !(self.motor_rate > 0.0) {
            return Err(Error::InvalidConfig("motor_rate must be > 0".into()));
        }
        if !(self.omega_max > 0.0) {
            return Err(Error::InvalidConfig("omega_max must be > 0".into()));
        }
        let spin_sum: f64 = self.rotor_spin_dir.iter().sum();
        if spin_sum.abs() > 1e-12 || self.rotor_spin_dir.iter().any(|s| s.abs() != 1.0) {
            return Err(Error::InvalidConfig(
                "rotor_spin_dir must contain two +1 and two -1 entries".into(),
            ));
        }
        Ok(())
    }
}

/// Gains for the proportional body-rate controller, N m s/rad.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RateControllerGains {
    pub kp_rate: Vector3<f64>,
}

impl Default for RateControllerGains {
    fn default() -> Self {
        Self { kp_rate: Vector3::new(5e-4, 5e-4, 2e-4) }
    }
}

impl RateControllerGains {
    pub fn validate(&self) -> Result<()> {
        if self.kp_rate.iter().any(|g| *g <= 0.0) {
            return Err(Error::InvalidConfig("rate gains must be > 0".into()));
        }
        Ok(())
    }
}

/// Bounds of the CTBR action space.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct CtbrBounds {
    /// Maximum mass-normalized collective thrust, m/s^2 (thrust-to-weight 1.6).
    pub max_collective_accel: f64,
    /// Symmetric body-rate bound per axis, rad/s.
    pub max_body_rate: f64,
}

impl Default for CtbrBounds {
    fn default() -> Self {
        Self { max_collective_accel: 1.6 * GRAVITY, max_body_rate: std::f64::consts::PI }
    }
}

/// Per-parameter randomization mode applied when an episode starts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", content = "frac", rename_all = "snake_case")]
pub enum DrMode {
    /// Use the calibrated value unchanged.
    SysId,
    /// Multiply by U(1-f, 1+f).
    UniformDr(f64),
    /// Multiply by (1+f), a fixed miscalibration.
    Offset(f64),
    /// Multiply by (1+f) * U(1-f, 1+f).
    OffsetPlusDr(f64),
}

impl DrMode {
    pub fn validate(&self) -> Result<()> {
        let frac = match self {
            DrMode::SysId => return Ok(()),
            DrMode::UniformDr(f) | DrMode::Offset(f) | DrMode::OffsetPlusDr(f) => *f,
        };
        if !(0.0..1.0).contains(&frac) {
            return Err(Error::InvalidConfig(format!(
                "randomization fraction must be in [0, 1), got {frac}"
            )));
        }
        Ok(())
    }
}

/// Which dynamics parameters get randomized, and how.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DrConfig {
    pub mass: DrMode,
    pub inertia: DrMode,
    pub motor_rate: DrMode,
    pub thrust_coeff: DrMode,
}

impl Default for DrConfig {
    fn default() -> Self {
        Self {
            mass: DrMode::SysId,
            inertia: DrMode::SysId,
            motor_rate: DrMode::SysId,
            thrust_coeff: DrMode::UniformDr(0.3),
        }
    }
}

impl DrConfig {
    pub fn all_sysid() -> Self {
        Self {
            mass: DrMode::SysId,
            inertia: DrMode::SysId,
            motor_rate: DrMode::SysId,
            thrust_coeff: DrMode::SysId,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mass.validate()?;
        self.inertia.validate()?;
        self.motor_rate.validate()?;
        self.thrust_coeff.validate()
    }
}

/// Form of the exponent A in the smoothness reward e^{-A}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SmoothnessKind {
    /// ||u_t - u_{t-1}|| on unit-normalized action components.
    ActionDiff,
    /// ||u_t|| on unit-normalized action components.
    ActionNorm,
    /// Finite-difference acceleration magnitude.
    Acc,
    /// Finite-difference jerk magnitude.
    Jerk,
    /// Finite-difference snap magnitude.
    Snap,
    /// No smoothness term.
    None,
}

impl SmoothnessKind {
    /// Default scale multiplying the raw magnitude before exponentiation.
    /// Kinematic derivatives at 100 Hz have large raw magnitudes.
    pub fn default_scale(&self) -> f64 {
        match self {
            SmoothnessKind::ActionDiff | SmoothnessKind::ActionNorm => 1.0,
            SmoothnessKind::Acc => 0.2,
            SmoothnessKind::Jerk => 5e-3,
            SmoothnessKind::Snap => 2.5e-5,
            SmoothnessKind::None => 0.0,
        }
    }
}

/// Rotation representation fed to the networks (input-space ablation).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum RotationObs {
    #[default]
    Matrix,
    Quaternion,
}

/// Non-reward action post-processing (smoothing ablation).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionPipeline {
    /// Commands pass through unchanged (after the standard bound clamp).
    None,
    /// Clamp commands to `frac` of the full CTBR bounds.
    Clip { frac: f64 },
    /// First-order low-pass filter u' = alpha u_t + (1 - alpha) u_{t-1}.
    LowPass { alpha: f64 },
}

impl Default for ActionPipeline {
    fn default() -> Self {
        ActionPipeline::None
    }
}

/// MDP options: observation layout, reward, episode lifecycle, randomization.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EnvConfig {
    /// Smoothness reward weight.
    pub lambda: f64,
    pub smoothness_kind: SmoothnessKind,
    /// Scale multiplying the raw smoothness magnitude; `None` picks the
    /// per-kind default.
    pub smoothness_scale: Option<f64>,
    /// Position error scale c_pos in r_task = exp(-c_pos ||e||), 1/m.
    pub pos_reward_scale: f64,
    /// Episode length in control steps.
    pub episode_len: usize,
    /// Per-parameter randomization modes.
    pub dr: DrConfig,
    /// Mixture weights over (polynomial, zigzag) training trajectories.
    pub traj_mixture: [f64; 2],
    /// Append the previous action to the actor observation.
    pub include_prev_action: bool,
    /// Include linear velocity in observations (input-space ablation).
    pub include_lin_vel: bool,
    /// Rotation representation in observations.
    pub rotation_obs: RotationObs,
    /// Give the actor the time vector too (ablation; hurts long flights).
    pub actor_time_vector: bool,
    /// Give the critic the time vector (on in the reference configuration).
    pub critic_time_vector: bool,
    /// Time-vector dimension k.
    pub time_vector_k: usize,
    /// Fixed scale applied to the time feature inside the critic input
    /// (stored with checkpoints as a normalization constant).
    pub time_feature_scale: f64,
    /// Number of lookahead reference points N.
    pub lookahead_n: usize,
    /// Spacing between lookahead points, s.
    pub lookahead_spacing: f64,
    /// Control/simulation step, s.
    pub dt: f64,
    /// CTBR bounds.
    pub ctbr_bounds: CtbrBounds,
    /// Non-reward action smoothing stage.
    pub action_pipeline: ActionPipeline,
    /// Reset noise: position std, m.
    pub reset_pos_std: f64,
    /// Reset noise: velocity std, m/s.
    pub reset_vel_std: f64,
    /// Reset noise: attitude tilt std, rad.
    pub reset_tilt_std: f64,
    /// Crash when position error exceeds this, m.
    pub crash_pos_err: f64,
    /// Crash when tilt from upright exceeds this, deg.
    pub crash_tilt_deg: f64,
    /// Duration of generated training trajectories, s. Defaults to
    /// episode_len * dt plus the lookahead window.
    pub traj_duration: Option<f64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            lambda: 0.4,
            smoothness_kind: SmoothnessKind::ActionDiff,
            smoothness_scale: None,
            pos_reward_scale: 2.0,
            episode_len: 800,
            dr: DrConfig::default(),
            traj_mixture: [0.5, 0.5],
            include_prev_action: false,
            include_lin_vel: true,
            rotation_obs: RotationObs::Matrix,
            actor_time_vector: false,
            critic_time_vector: true,
            time_vector_k: 1,
            time_feature_scale: 0.01,
            lookahead_n: 10,
            lookahead_spacing: 0.05,
            dt: 0.01,
            ctbr_bounds: CtbrBounds::default(),
            action_pipeline: ActionPipeline::None,
            reset_pos_std: 0.02,
            reset_vel_std: 0.02,
            reset_tilt_std: 0.02,
            crash_pos_err: 3.0,
            crash_tilt_deg: 85.0,
            traj_duration: None,
        }
    }
}

impl EnvConfig {
    /// Duration of a freshly generated training trajectory, s.
    pub fn effective_traj_duration(&self) -> f64 {
        self.traj_duration.unwrap_or(
            self.episode_len as f64 * self.dt
                + self.lookahead_n as f64 * self.lookahead_spacing,
        )
    }

    pub fn smoothness_scale_value(&self) -> f64 {
        self.smoothness_scale.unwrap_or_else(|| self.smoothness_kind.default_scale())
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        let wsum = self.traj_mixture[0] + self.traj_mixture[1];
        if (wsum - 1.0).abs() > 1e-9 || self.traj_mixture.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "traj_mixture weights must be non-negative and sum to 1, got {:?}",
                self.traj_mixture
            )));
        }
        if self.time_vector_k < 1 {
            return Err(Error::InvalidConfig("time_vector_k must be >= 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("dt must be > 0".into()));
        }
        if self.lookahead_n == 0 || !(self.lookahead_spacing > 0.0) {
            return Err(Error::InvalidConfig("lookahead window must be non-empty".into()));
        }
        if self.episode_len == 0 {
            return Err(Error::InvalidConfig("episode_len must be > 0".into()));
        }
        if let ActionPipeline::LowPass { alpha } = self.action_pipeline {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "low-pass alpha must be in (0, 1], got {alpha}"
                )));
            }
        }
        if let ActionPipeline::Clip { frac } = self.action_pipeline {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "clip fraction must be in (0, 1], got {frac}"
                )));
            }
        }
        self.dr.validate()
    }
}

/// PPO trainer hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    /// Discount factor.
    pub gamma: f64,
    /// GAE lambda.
    pub gae_lambda: f64,
    /// Clipped-surrogate epsilon.
    pub clip_eps: f64,
    /// Adam learning rate.
    pub learning_rate: f64,
    /// Gradient-descent passes over each collected batch.
    pub update_epochs: usize,
    /// Minibatches per pass.
    pub minibatch_count: usize,
    /// Parallel environments.
    pub n_envs: usize,
    /// Steps collected per environment per iteration.
    pub horizon: usize,
    /// Collect+update iterations ("epochs" in the training-loop sense).
    pub total_iterations: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global gradient-norm clip.
    pub max_grad_norm: f64,
    /// Hidden width of the MLP encoders.
    pub hidden_dim: usize,
    /// Initial policy log standard deviation (per normalized action dim).
    pub init_log_std: f64,
    pub seed: u64,
    /// Save a checkpoint every this many iterations (0 = only final).
    pub checkpoint_every: usize,
    /// Evaluate the deterministic policy every this many iterations (0 = never).
    pub eval_every: usize,
    /// Stop early once the evaluation MED drops below this, m.
    pub stop_at_eval_med: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            learning_rate: 3e-4,
            update_epochs: 4,
            minibatch_count: 8,
            n_envs: 1024,
            horizon: 64,
            total_iterations: 15_000,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            hidden_dim: 256,
            init_log_std: (0.3f64).ln(),
            seed: 0,
            checkpoint_every: 200,
            eval_every: 25,
            stop_at_eval_med: None,
        }
    }
}

impl TrainConfig {
    /// Samples collected per iteration.
    pub fn batch_size(&self) -> usize {
        self.n_envs * self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig("gamma must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::InvalidConfig("gae_lambda must be in [0, 1]".into()));
        }
        if !(self.clip_eps > 0.0) {
            return Err(Error::InvalidConfig("clip_eps must be > 0".into()));
        }
        if self.n_envs == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig("n_envs and horizon must be > 0".into()));
        }
        if self.minibatch_count == 0 || self.batch_size() < self.minibatch_count {
            return Err(Error::InvalidConfig(
                "batch size must be >= minibatch_count > 0".into(),
            ));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidConfig("hidden_dim must be > 0".into()));
        }
        Ok(())
    }
}

/// Top-level run configuration (one TOML file).
#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub quad: QuadrotorParams,
    pub gains: RateControllerGains,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.quad.validate()?;
        self.gains.validate()?;
        self.env.validate()?;
        self.train.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

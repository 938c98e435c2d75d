//! CTBR action space and the low-level stage that turns a collective-thrust +
//! body-rate command into four motor speed commands: a proportional rate
//! controller feeding a static allocation mixer. Also the non-reward action
//! smoothing stages (clipping, low-pass filter) used by the ablations.

use nalgebra::{Matrix4, Vector3, Vector4};

use crate::config::{CtbrBounds, QuadrotorParams, RateControllerGains};
use crate::error::{Error, Result};
use crate::sim::QuadrotorState;

/// Mid-level control command: mass-normalized collective thrust plus
/// body-rate setpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtbrCommand {
    /// Collective thrust divided by nominal mass, m/s^2.
    pub collective_accel: f64,
    /// Body-rate setpoints, rad/s.
    pub body_rate: Vector3<f64>,
}

impl CtbrCommand {
    pub fn new(collective_accel: f64, body_rate: Vector3<f64>) -> Self {
        Self { collective_accel, body_rate }
    }

    /// Hover command: 1 g collective, zero rates.
    pub fn hover() -> Self {
        Self::new(crate::config::GRAVITY, Vector3::zeros())
    }

    /// Command as a `[accel, p, q, r]` vector.
    pub fn as_array(&self) -> [f64; 4] {
        [self.collective_accel, self.body_rate.x, self.body_rate.y, self.body_rate.z]
    }

    /// Unit-normalized components for smoothness measures: thrust mapped to
    /// [0, 1] over its range, rates to [-1, 1] over theirs.
    pub fn normalized(&self, bounds: &CtbrBounds) -> [f64; 4] {
        [
            self.collective_accel / bounds.max_collective_accel,
            self.body_rate.x / bounds.max_body_rate,
            self.body_rate.y / bounds.max_body_rate,
            self.body_rate.z / bounds.max_body_rate,
        ]
    }

    pub fn within(&self, bounds: &CtbrBounds) -> bool {
        self.collective_accel >= 0.0
            && self.collective_accel <= bounds.max_collective_accel
            && self.body_rate.iter().all(|r| r.abs() <= bounds.max_body_rate)
    }
}

/// Componentwise clamp of a raw `[accel, p, q, r]` command to the CTBR bounds.
pub fn clip_action(raw: &[f64; 4], bounds: &CtbrBounds) -> CtbrCommand {
    CtbrCommand {
        collective_accel: raw[0].clamp(0.0, bounds.max_collective_accel),
        body_rate: Vector3::new(
            raw[1].clamp(-bounds.max_body_rate, bounds.max_body_rate),
            raw[2].clamp(-bounds.max_body_rate, bounds.max_body_rate),
            raw[3].clamp(-bounds.max_body_rate, bounds.max_body_rate),
        ),
    }
}

/// First-order smoothing u' = alpha u_t + (1 - alpha) u_{t-1}.
pub fn low_pass_filter(u: &CtbrCommand, u_prev: &CtbrCommand, alpha: f64) -> Result<CtbrCommand> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!("low-pass alpha must be in (0, 1], got {alpha}")));
    }
    Ok(CtbrCommand {
        collective_accel: alpha * u.collective_accel + (1.0 - alpha) * u_prev.collective_accel,
        body_rate: alpha * u.body_rate + (1.0 - alpha) * u_prev.body_rate,
    })
}

/// Static control allocation for the four-rotor X layout.
///
/// Solves [F, tau_x, tau_y, tau_z] = A t for per-rotor thrusts t, with A built
/// from rotor positions, spin directions and the drag-to-thrust ratio.
#[derive(Debug, Clone)]
pub struct Mixer {
    alloc: Matrix4<f64>,
    alloc_inv: Matrix4<f64>,
    /// Per-rotor thrust ceiling k_f omega_max^2, N.
    max_thrust: f64,
}

impl Mixer {
    pub fn new(params: &QuadrotorParams) -> Result<Self> {
        let km_over_kf = params.torque_coeff / params.thrust_coeff;
        let mut alloc = Matrix4::zeros();
        for j in 0..4 {
            let r = Vector3::from_row_slice(&params.rotor_pos[j]);
            alloc[(0, j)] = 1.0;
            alloc[(1, j)] = r.y; // (r x e_z t).x = r_y t
            alloc[(2, j)] = -r.x; // (r x e_z t).y = -r_x t
            alloc[(3, j)] = params.rotor_spin_dir[j] * km_over_kf;
        }
        let alloc_inv = alloc
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig("singular rotor allocation matrix".into()))?;
        Ok(Self { alloc, alloc_inv, max_thrust: params.thrust_coeff * params.omega_max.powi(2) })
    }

    /// Per-rotor thrusts realizing the requested collective force (N) and
    /// torque (N m), before any saturation.
    pub fn allocate(&self, collective_force: f64, torque: &Vector3<f64>) -> [f64; 4] {
        let rhs = Vector4::new(collective_force, torque.x, torque.y, torque.z);
        let t = self.alloc_inv * rhs;
        [t.x, t.y, t.z, t.w]
    }

    /// Wrench actually produced by a set of per-rotor thrusts.
    pub fn wrench_of(&self, thrusts: &[f64; 4]) -> (f64, Vector3<f64>) {
        let t = Vector4::new(thrusts[0], thrusts[1], thrusts[2], thrusts[3]);
        let w = self.alloc * t;
        (w.x, Vector3::new(w.y, w.z, w.w))
    }

    pub fn max_thrust(&self) -> f64 {
        self.max_thrust
    }
}

/// What the rate controller produced, including saturation telemetry.
#[derive(Debug, Clone, Copy)]
pub struct RateControlOutput {
    /// Rotor speed commands, rad/s, clamped to [0, omega_max].
    pub rotor_cmd: [f64; 4],
    /// True when any allocated thrust hit its limits.
    pub saturated: bool,
    /// Force error (N) and torque error (N m) between request and the
    /// post-clamp allocation.
    pub force_err: f64,
    pub torque_err: Vector3<f64>,
}

/// Proportional body-rate controller + mixer. Built from the *nominal*
/// parameters: a deployed controller would not see per-episode perturbations.
#[derive(Debug, Clone)]
pub struct RateController {
    gains: RateControllerGains,
    mixer: Mixer,
    mass: f64,
    thrust_coeff: f64,
    omega_max: f64,
}

impl RateController {
    pub fn new(params: &QuadrotorParams, gains: &RateControllerGains) -> Result<Self> {
        params.validate()?;
        gains.validate()?;
        Ok(Self {
            gains: gains.clone(),
            mixer: Mixer::new(params)?,
            mass: params.mass,
            thrust_coeff: params.thrust_coeff,
            omega_max: params.omega_max,
        })
    }

    pub fn mixer(&self) -> &Mixer {
        &self.mixer
    }

    /// Convert a CTBR command into four rotor speed commands given the
    /// current body rates.
    pub fn command(&self, cmd: &CtbrCommand, state: &QuadrotorState) -> RateControlOutput {
        let torque_des = Vector3::new(
            self.gains.kp_rate.x * (cmd.body_rate.x - state.omega.x),
            self.gains.kp_rate.y * (cmd.body_rate.y - state.omega.y),
            self.gains.kp_rate.z * (cmd.body_rate.z - state.omega.z),
        );
        let force_des = self.mass * cmd.collective_accel;
        let thrusts = self.mixer.allocate(force_des, &torque_des);

        let mut clamped = [0.0; 4];
        let mut saturated = false;
        for j in 0..4 {
            clamped[j] = thrusts[j].clamp(0.0, self.mixer.max_thrust);
            if clamped[j] != thrusts[j] {
                saturated = true;
            }
        }
        let (force_got, torque_got) = self.mixer.wrench_of(&clamped);

        let mut rotor_cmd = [0.0; 4];
        for j in 0..4 {
            rotor_cmd[j] = (clamped[j] / self.thrust_coeff).sqrt().clamp(0.0, self.omega_max);
        }
        RateControlOutput {
            rotor_cmd,
            saturated,
            force_err: force_got - force_des,
            torque_err: torque_got - torque_des,
        }
    }
}

/// Reference-tracking cascade that produces CTBR commands from position and
/// velocity errors via a reduced-attitude P law. Not part of the learned
/// pipeline; serves as an evaluation baseline and demo controller.
#[derive(Debug, Clone)]
pub struct GeometricTracker {
    pub kp_pos: f64,
    pub kd_vel: f64,
    pub kp_tilt: f64,
    pub bounds: CtbrBounds,
}

impl Default for GeometricTracker {
    fn default() -> Self {
        Self { kp_pos: 6.0, kd_vel: 4.0, kp_tilt: 8.0, bounds: CtbrBounds::default() }
    }
}

impl GeometricTracker {
    /// CTBR command steering the vehicle toward `ref_pos`/`ref_vel`.
    pub fn command(
        &self,
        state: &QuadrotorState,
        ref_pos: &Vector3<f64>,
        ref_vel: &Vector3<f64>,
    ) -> CtbrCommand {
        let g = crate::config::GRAVITY;
        let a_des = self.kp_pos * (ref_pos - state.pos) + self.kd_vel * (ref_vel - state.vel)
            + Vector3::new(0.0, 0.0, g);
        // Desired body z axis; collective is the projection on the current one.
        let norm = a_des.norm().max(1e-6);
        let z_des = a_des / norm;
        let z_body = state.quat * Vector3::z();
        let collective = norm * z_body.dot(&z_des).max(0.1);

        // Reduced-attitude error: rotate z_body onto z_des.
        let err_world = z_body.cross(&z_des);
        let err_body = state.quat.inverse() * err_world;
        let rate = self.kp_tilt * err_body;
        clip_action(
            &[collective, rate.x, rate.y, rate.z],
            &self.bounds,
        )
    }
}

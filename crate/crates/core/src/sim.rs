//! Rigid-body quadrotor dynamics with squared-speed propeller thrust/drag and
//! first-order motor response, integrated at a fixed 100 Hz step.
//!
//! State: world position p, body-to-world attitude quaternion q, world
//! velocity v, body angular velocity w, rotor speeds. Continuous model:
//!
//! ```text
//! p' = v
//! q' = q * [0, w/2]
//! v' = R(q) f_prop / m + g
//! w' = I^-1 (tau_prop - w x I w)
//! rotor' = motor_rate * (cmd - rotor)
//! ```

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::config::QuadrotorParams;
use crate::error::{Error, Result};

/// Divergence guard: any state component beyond this is a hard failure.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Full simulation state of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrotorState {
    /// World-frame position, m.
    pub pos: Vector3<f64>,
    /// Body-to-world attitude.
    pub quat: UnitQuaternion<f64>,
    /// World-frame velocity, m/s.
    pub vel: Vector3<f64>,
    /// Body-frame angular velocity, rad/s.
    pub omega: Vector3<f64>,
    /// Rotor speeds, rad/s.
    pub rotor_speed: [f64; 4],
}

impl QuadrotorState {
    /// At-rest state at `pos` with identity attitude and spun-down rotors.
    pub fn at_rest(pos: Vector3<f64>) -> Self {
        Self {
            pos,
            quat: UnitQuaternion::identity(),
            vel: Vector3::zeros(),
            omega: Vector3::zeros(),
            rotor_speed: [0.0; 4],
        }
    }

    /// Hovering state at `pos`: identity attitude, rotors at hover speed.
    pub fn hover(pos: Vector3<f64>, params: &QuadrotorParams) -> Self {
        let mut s = Self::at_rest(pos);
        s.rotor_speed = [hover_rotor_speed(params); 4];
        s
    }

    /// Body-to-world rotation matrix.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.quat.to_rotation_matrix().matrix()
    }

    /// Angle between the body z axis and world up, rad.
    pub fn tilt_angle(&self) -> f64 {
        let body_z = self.quat * Vector3::z();
        body_z.z.clamp(-1.0, 1.0).acos()
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().all(|v| v.is_finite())
            && self.quat.coords.iter().all(|v| v.is_finite())
            && self.vel.iter().all(|v| v.is_finite())
            && self.omega.iter().all(|v| v.is_finite())
            && self.rotor_speed.iter().all(|v| v.is_finite())
    }

    fn max_abs_component(&self) -> f64 {
        let mut m: f64 = 0.0;
        for v in self.pos.iter().chain(self.vel.iter()).chain(self.omega.iter()) {
            m = m.max(v.abs());
        }
        for v in &self.rotor_speed {
            m = m.max(v.abs());
        }
        m
    }
}

/// Net propeller force and torque in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    /// N.
    pub force: Vector3<f64>,
    /// N m.
    pub torque: Vector3<f64>,
}

/// Time derivative of [`QuadrotorState`]; the quaternion part is a raw
/// (non-unit) quaternion rate.
#[derive(Debug, Clone)]
pub struct StateDerivative {
    pub dpos: Vector3<f64>,
    pub dquat: Quaternion<f64>,
    pub dvel: Vector3<f64>,
    pub domega: Vector3<f64>,
    pub drotor: [f64; 4],
}

/// Rotor speed at which total lift equals weight: sqrt(m |g| / (4 k_f)).
pub fn hover_rotor_speed(params: &QuadrotorParams) -> f64 {
    (params.mass * params.gravity.norm() / (4.0 * params.thrust_coeff)).sqrt()
}

/// Net body-frame wrench for the given rotor speeds.
///
/// Per rotor j: f_j = [0, 0, k_f w_j^2], tau_j = spin_j [0, 0, k_m w_j^2],
/// summed together with the thrust moment arm r_j x f_j. The yaw component
/// carries the spin sign so that counter-rotating pairs cancel at hover.
pub fn propeller_wrench(rotor_speed: &[f64; 4], params: &QuadrotorParams) -> Result<Wrench> {
    if rotor_speed.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidState(format!("non-finite rotor speed {rotor_speed:?}")));
    }
    let mut force = Vector3::zeros();
    let mut torque = Vector3::zeros();
    for j in 0..4 {
        let w2 = rotor_speed[j] * rotor_speed[j];
        let f_j = Vector3::new(0.0, 0.0, params.thrust_coeff * w2);
        let r_j = Vector3::from_row_slice(&params.rotor_pos[j]);
        torque += params.rotor_spin_dir[j] * Vector3::new(0.0, 0.0, params.torque_coeff * w2);
        torque += r_j.cross(&f_j);
        force += f_j;
    }
    Ok(Wrench { force, torque })
}

/// Continuous-time state derivative under the commanded rotor speeds.
///
/// `rotor_cmd` is clamped to [0, omega_max]; the motor row is the literal
/// first-order law rotor' = motor_rate (cmd - rotor).
pub fn state_derivative(
    state: &QuadrotorState,
    rotor_cmd: &[f64; 4],
    params: &QuadrotorParams,
) -> Result<StateDerivative> {
    if !state.is_finite() {
        return Err(Error::InvalidState("non-finite state".into()));
    }
    if params.inertia_diag.iter().any(|v| *v <= 0.0) {
        return Err(Error::InvalidConfig("singular inertia".into()));
    }
    let wrench = propeller_wrench(&state.rotor_speed, params)?;

    let dpos = state.vel;
    let dquat = (state.quat.quaternion()
        * Quaternion::from_parts(0.0, state.omega * 0.5))
    .clone();
    let dvel = state.quat * wrench.force / params.mass + params.gravity;
    let inertia = params.inertia_diag;
    let i_omega = Vector3::new(
        inertia.x * state.omega.x,
        inertia.y * state.omega.y,
        inertia.z * state.omega.z,
    );
    let torque_net = wrench.torque - state.omega.cross(&i_omega);
    let domega = Vector3::new(
        torque_net.x / inertia.x,
        torque_net.y / inertia.y,
        torque_net.z / inertia.z,
    );
    let mut drotor = [0.0; 4];
    for j in 0..4 {
        let cmd = rotor_cmd[j].clamp(0.0, params.omega_max);
        drotor[j] = params.motor_rate * (cmd - state.rotor_speed[j]);
    }
    Ok(StateDerivative { dpos, dquat, dvel, domega, drotor })
}

/// One fixed integration step, velocities first.
///
/// Velocity-level states advance with the current derivative; position and
/// attitude then advance with the midpoint of old/new velocity, which keeps
/// the step consistent with a fine RK4 reference over multi-second rollouts.
/// The quaternion is renormalized and rotor speeds clamp to [0, omega_max].
pub fn step(
    state: &QuadrotorState,
    rotor_cmd: &[f64; 4],
    params: &QuadrotorParams,
    dt: f64,
) -> Result<QuadrotorState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be > 0, got {dt}")));
    }
    let d = state_derivative(state, rotor_cmd, params)?;

    let vel = state.vel + d.dvel * dt;
    let omega = state.omega + d.domega * dt;
    let mut rotor_speed = [0.0; 4];
    for j in 0..4 {
        rotor_speed[j] = (state.rotor_speed[j] + d.drotor[j] * dt).clamp(0.0, params.omega_max);
    }

    let pos = state.pos + (state.vel + vel) * (0.5 * dt);
    let omega_mid = (state.omega + omega) * 0.5;
    let dq = state.quat.quaternion() * Quaternion::from_parts(0.0, omega_mid * 0.5);
    let raw = state.quat.quaternion() + dq * dt;
    let norm = raw.norm();
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(Error::Diverged("quaternion norm collapsed".into()));
    }
    let quat = UnitQuaternion::from_quaternion(raw);

    let next = QuadrotorState { pos, quat, vel, omega, rotor_speed };
    if !next.is_finite() || next.max_abs_component() > DIVERGENCE_LIMIT {
        return Err(Error::Diverged(format!(
            "state left the numeric envelope at pos {:?}",
            next.pos
        )));
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> QuadrotorParams {
        QuadrotorParams::default()
    }

    #[test]
    fn hover_speed_scaling() {
        let p = params();
        let base = hover_rotor_speed(&p);

        let mut p4 = p.clone();
        p4.thrust_coeff *= 4.0;
        assert_relative_eq!(hover_rotor_speed(&p4), base / 2.0, max_relative = 1e-12);

        let mut pm = p.clone();
        pm.mass *= 4.0;
        assert_relative_eq!(hover_rotor_speed(&pm), base * 2.0, max_relative = 1e-12);
    }

    #[test]
    fn hover_speed_produces_weight() {
        let p = params();
        let w = propeller_wrench(&[hover_rotor_speed(&p); 4], &p).unwrap();
        assert_relative_eq!(w.force.z, p.mass * p.gravity.norm(), epsilon = 1e-9);
        assert_relative_eq!(w.force.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(w.force.y, 0.0, epsilon = 1e-12);
        assert!(w.torque.norm() < 1e-12, "hover torque must cancel: {:?}", w.torque);
    }

    #[test]
    fn zero_speed_zero_wrench() {
        let w = propeller_wrench(&[0.0; 4], &params()).unwrap();
        assert_eq!(w.force, Vector3::zeros());
        assert_eq!(w.torque, Vector3::zeros());
    }

    #[test]
    fn single_rotor_wrench_matches_hand_cross_product() {
        let mut p = params();
        let l = 0.046;
        let xy = l / std::f64::consts::SQRT_2;
        p.rotor_pos[0] = [xy, -xy, 0.0];
        let omega = 1500.0;
        let w = propeller_wrench(&[omega, 0.0, 0.0, 0.0], &p).unwrap();

        let thrust = p.thrust_coeff * omega * omega;
        assert_relative_eq!(w.force.z, thrust, max_relative = 1e-12);
        // r x f with r = (xy, -xy, 0), f = (0, 0, thrust):
        // (r_y f_z, -r_x f_z, 0) = (-xy t, -xy t, 0)
        assert_relative_eq!(w.torque.x, -xy * thrust, max_relative = 1e-12);
        assert_relative_eq!(w.torque.y, -xy * thrust, max_relative = 1e-12);
        assert_relative_eq!(
            w.torque.z,
            p.rotor_spin_dir[0] * p.torque_coeff * omega * omega,
            max_relative = 1e-12
        );
    }

    #[test]
    fn wrench_rejects_non_finite_input() {
        let r = propeller_wrench(&[f64::NAN, 0.0, 0.0, 0.0], &params());
        assert!(matches!(r, Err(Error::InvalidState(_))));
    }

    #[test]
    fn wrench_is_homogeneous_degree_two() {
        let p = params();
        let speeds = [900.0, 1100.0, 1000.0, 1234.0];
        let scaled = [2.5 * 900.0, 2.5 * 1100.0, 2.5 * 1000.0, 2.5 * 1234.0];
        let w1 = propeller_wrench(&speeds, &p).unwrap();
        let w2 = propeller_wrench(&scaled, &p).unwrap();
        assert_relative_eq!(w2.force, w1.force * 6.25, max_relative = 1e-12);
        assert_relative_eq!(w2.torque, w1.torque * 6.25, max_relative = 1e-12);
    }

    #[test]
    fn hover_derivative_is_zero() {
        let p = params();
        let h = hover_rotor_speed(&p);
        let s = QuadrotorState::hover(Vector3::new(0.0, 0.0, 1.0), &p);
        let d = state_derivative(&s, &[h; 4], &p).unwrap();
        assert!(d.dpos.norm() < 1e-12);
        assert!(d.dvel.norm() < 1e-9);
        assert!(d.domega.norm() < 1e-9);
        assert!(d.dquat.norm() < 1e-12);
        assert!(d.drotor.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn zero_thrust_free_fall_any_attitude() {
        let p = params();
        let mut s = QuadrotorState::at_rest(Vector3::zeros());
        s.quat = UnitQuaternion::from_euler_angles(0.4, -0.7, 1.3);
        let d = state_derivative(&s, &[0.0; 4], &p).unwrap();
        assert_relative_eq!(d.dvel, Vector3::new(0.0, 0.0, -9.81), epsilon = 1e-12);
    }

    #[test]
    fn motor_lag_fixed_point() {
        let p = params();
        let mut s = QuadrotorState::at_rest(Vector3::zeros());
        s.rotor_speed = [1200.0; 4];
        let d = state_derivative(&s, &[1200.0; 4], &p).unwrap();
        assert!(d.drotor.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn singular_inertia_is_config_error() {
        let mut p = params();
        p.inertia_diag.y = 0.0;
        let s = QuadrotorState::at_rest(Vector3::zeros());
        assert!(matches!(
            state_derivative(&s, &[0.0; 4], &p),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn hover_holds_for_five_seconds() {
        let p = params();
        let h = hover_rotor_speed(&p);
        let start = QuadrotorState::hover(Vector3::new(0.0, 0.0, 1.0), &p);
        let mut s = start.clone();
        for _ in 0..500 {
            s = step(&s, &[h; 4], &p, 0.01).unwrap();
            assert!((s.quat.coords.norm() - 1.0).abs() < 1e-9);
        }
        assert!(s.vel.norm() < 1e-3, "hover drift velocity {}", s.vel.norm());
        assert!((s.pos - start.pos).norm() < 1e-3);
    }

    #[test]
    fn one_gravity_step_from_rest() {
        let p = params();
        let s = QuadrotorState::at_rest(Vector3::zeros());
        let next = step(&s, &[0.0; 4], &p, 0.01).unwrap();
        assert_relative_eq!(next.vel.z, -0.0981, epsilon = 1e-12);
    }

    #[test]
    fn principal_axis_spin_preserves_rate() {
        let p = params();
        let mut s = QuadrotorState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        s.omega = Vector3::new(0.0, 0.0, 3.0);
        let n0 = s.omega.norm();
        for _ in 0..200 {
            s = step(&s, &[0.0; 4], &p, 0.01).unwrap();
        }
        assert_relative_eq!(s.omega.norm(), n0, epsilon = 1e-9);
    }

    #[test]
    fn free_fall_conserves_energy() {
        let p = params();
        let s0 = QuadrotorState::at_rest(Vector3::new(0.0, 0.0, 10.0));
        let energy = |s: &QuadrotorState| {
            0.5 * p.mass * s.vel.norm_squared() + p.mass * p.gravity.norm() * s.pos.z
        };
        let e0 = energy(&s0);
        let mut s = s0;
        for _ in 0..100 {
            s = step(&s, &[0.0; 4], &p, 0.01).unwrap();
        }
        assert!((energy(&s) - e0).abs() < 1e-3, "energy drift {}", (energy(&s) - e0).abs());
    }

    #[test]
    fn rotor_speeds_stay_clamped() {
        let p = params();
        let mut s = QuadrotorState::at_rest(Vector3::zeros());
        for _ in 0..1000 {
            s = step(&s, &[1e9; 4], &p, 0.01).unwrap();
            assert!(s.rotor_speed.iter().all(|w| *w >= 0.0 && *w <= p.omega_max));
        }
        assert_relative_eq!(s.rotor_speed[0], p.omega_max, max_relative = 1e-6);
    }

    #[test]
    fn divergence_guard_trips() {
        let p = params();
        let mut s = QuadrotorState::at_rest(Vector3::zeros());
        s.vel = Vector3::new(0.0, 0.0, -9.9e5);
        let mut err = None;
        for _ in 0..2000 {
            match step(&s, &[0.0; 4], &p, 0.01) {
                Ok(next) => s = next,
                Err(e) => {
                    err = Some(e);
                    break;
                }
            }
        }
        assert!(matches!(err, Some(Error::Diverged(_))));
    }
}

//! Shared test oracles: an independent RK4 reference integrator for the
//! rigid-body model (written directly from the equations of motion, not via
//! the library's derivative code) and random command-sequence generators.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use quadtrack::config::{QuadrotorParams, RateControllerGains};
use quadtrack::control::{CtbrCommand, RateController};
use quadtrack::sim::QuadrotorState;
use rand::Rng;

/// Oracle state mirrors the simulator state but integrates independently.
#[derive(Debug, Clone)]
pub struct OracleState {
    pub pos: Vector3<f64>,
    pub quat: Quaternion<f64>,
    pub vel: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub rotor: [f64; 4],
}

impl OracleState {
    pub fn from_state(s: &QuadrotorState) -> Self {
        Self {
            pos: s.pos,
            quat: *s.quat.quaternion(),
            vel: s.vel,
            omega: s.omega,
            rotor: s.rotor_speed,
        }
    }

    /// View as a simulator state (for feeding the shared rate controller).
    pub fn as_state(&self) -> QuadrotorState {
        QuadrotorState {
            pos: self.pos,
            quat: UnitQuaternion::from_quaternion(self.quat),
            vel: self.vel,
            omega: self.omega,
            rotor_speed: self.rotor,
        }
    }
}

struct OracleDeriv {
    dpos: Vector3<f64>,
    dquat: Quaternion<f64>,
    dvel: Vector3<f64>,
    domega: Vector3<f64>,
    drotor: [f64; 4],
}

/// Equations of motion written out longhand: squared-speed thrust and drag
/// per rotor, thrust moment arms, quaternion kinematics, Euler rigid-body
/// equation with diagonal inertia and a first-order motor response.
fn oracle_deriv(s: &OracleState, cmd: &[f64; 4], p: &QuadrotorParams) -> OracleDeriv {
    let mut lift = 0.0;
    let mut torque: Vector3<f64> = Vector3::zeros();
    for j in 0..4 {
        let w2 = s.rotor[j] * s.rotor[j];
        let thrust = p.thrust_coeff * w2;
        lift += thrust;
        let r = p.rotor_pos[j];
        // r x [0, 0, thrust] = (r_y thrust, -r_x thrust, 0)
        torque.x += r[1] * thrust;
        torque.y += -r[0] * thrust;
        torque.z += p.rotor_spin_dir[j] * p.torque_coeff * w2;
    }
    let rot = UnitQuaternion::from_quaternion(s.quat);
    let dvel = rot * Vector3::new(0.0, 0.0, lift / p.mass) + p.gravity;
    let dquat = s.quat * Quaternion::from_parts(0.0, s.omega * 0.5);
    let i = p.inertia_diag;
    let coriolis = Vector3::new(
        s.omega.y * s.omega.z * (i.z - i.y),
        s.omega.z * s.omega.x * (i.x - i.z),
        s.omega.x * s.omega.y * (i.y - i.x),
    );
    let domega = Vector3::new(
        (torque.x - coriolis.x) / i.x,
        (torque.y - coriolis.y) / i.y,
        (torque.z - coriolis.z) / i.z,
    );
    let mut drotor = [0.0; 4];
    for j in 0..4 {
        drotor[j] = p.motor_rate * (cmd[j].clamp(0.0, p.omega_max) - s.rotor[j]);
    }
    OracleDeriv { dpos: s.vel, dquat, dvel, domega, drotor }
}

fn advanced(s: &OracleState, d: &OracleDeriv, h: f64) -> OracleState {
    let mut rotor = [0.0; 4];
    for j in 0..4 {
        rotor[j] = s.rotor[j] + d.drotor[j] * h;
    }
    OracleState {
        pos: s.pos + d.dpos * h,
        quat: s.quat + d.dquat * h,
        vel: s.vel + d.dvel * h,
        omega: s.omega + d.domega * h,
        rotor,
    }
}

/// Classic fourth-order Runge-Kutta step with post-step quaternion
/// renormalization and rotor-speed clamping.
pub fn rk4_step(s: &OracleState, cmd: &[f64; 4], p: &QuadrotorParams, dt: f64) -> OracleState {
    let k1 = oracle_deriv(s, cmd, p);
    let k2 = oracle_deriv(&advanced(s, &k1, dt / 2.0), cmd, p);
    let k3 = oracle_deriv(&advanced(s, &k2, dt / 2.0), cmd, p);
    let k4 = oracle_deriv(&advanced(s, &k3, dt), cmd, p);
    let mut rotor = [0.0; 4];
    for j in 0..4 {
        rotor[j] = (s.rotor[j]
            + dt / 6.0 * (k1.drotor[j] + 2.0 * k2.drotor[j] + 2.0 * k3.drotor[j] + k4.drotor[j]))
            .clamp(0.0, p.omega_max);
    }
    let quat = s.quat + (k1.dquat + k2.dquat * 2.0 + k3.dquat * 2.0 + k4.dquat) * (dt / 6.0);
    OracleState {
        pos: s.pos + (k1.dpos + k2.dpos * 2.0 + k3.dpos * 2.0 + k4.dpos) * (dt / 6.0),
        quat: quat / quat.norm(),
        vel: s.vel + (k1.dvel + k2.dvel * 2.0 + k3.dvel * 2.0 + k4.dvel) * (dt / 6.0),
        omega: s.omega + (k1.domega + k2.domega * 2.0 + k3.domega * 2.0 + k4.domega) * (dt / 6.0),
        rotor,
    }
}

/// Piecewise-constant random CTBR sequence: near-hover collective with
/// moderate body-rate setpoints, resampled every `hold` steps.
pub fn random_ctbr_sequence<R: Rng>(rng: &mut R, steps: usize, hold: usize) -> Vec<CtbrCommand> {
    random_ctbr_sequence_with(rng, steps, hold, 0.2, 0.05)
}

/// Random CTBR sequence with explicit rate/thrust amplitudes.
pub fn random_ctbr_sequence_with<R: Rng>(
    rng: &mut R,
    steps: usize,
    hold: usize,
    rate_amp: f64,
    thrust_amp: f64,
) -> Vec<CtbrCommand> {
    let g = quadtrack::GRAVITY;
    let mut out = Vec::with_capacity(steps);
    let mut current = CtbrCommand::hover();
    for t in 0..steps {
        if t % hold == 0 {
            current = CtbrCommand::new(
                g * rng.random_range(1.0 - thrust_amp..1.0 + thrust_amp),
                Vector3::new(
                    rng.random_range(-rate_amp..rate_amp),
                    rng.random_range(-rate_amp..rate_amp),
                    rng.random_range(-rate_amp..rate_amp),
                ),
            );
        }
        out.push(current);
    }
    out
}

/// Run the fixed-step simulator and the RK4 oracle side by side under the
/// same closed-loop CTBR sequence (each arm closes the loop on its own
/// state). Returns the worst position/velocity disagreement, metres and m/s.
pub fn compare_integrators(
    seq: &[CtbrCommand],
    params: &QuadrotorParams,
    gains: &RateControllerGains,
    substeps: usize,
) -> (f64, f64) {
    let rc = RateController::new(params, gains).expect("controller");
    let start = QuadrotorState::hover(Vector3::new(0.0, 0.0, 1.0), params);
    let mut euler = start.clone();
    let mut oracle = OracleState::from_state(&start);
    let dt = 0.01;
    let mut max_pos = 0.0f64;
    let mut max_vel = 0.0f64;
    for cmd in seq {
        let rotor_e = rc.command(cmd, &euler).rotor_cmd;
        euler = quadtrack::sim::step(&euler, &rotor_e, params, dt).expect("euler step");

        let rotor_o = rc.command(cmd, &oracle.as_state()).rotor_cmd;
        for _ in 0..substeps {
            oracle = rk4_step(&oracle, &rotor_o, params, dt / substeps as f64);
        }
        max_pos = max_pos.max((euler.pos - oracle.pos).norm());
        max_vel = max_vel.max((euler.vel - oracle.vel).norm());
    }
    (max_pos, max_vel)
}

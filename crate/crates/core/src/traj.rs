//! Benchmark reference trajectories: the closed-form figure-eight, randomized
//! C^3 quintic-polynomial chains, the constant-speed pentagram and randomized
//! zigzags, plus the lookahead window sampler that feeds the policy.
//!
//! All families start at the x-y origin at a fixed 1 m height. The pentagram
//! and zigzag are deliberately infeasible: velocity flips direction at the
//! corners.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default flight height, m.
pub const DEFAULT_HEIGHT: f64 = 1.0;
/// Pentagram circumradius, m.
pub const PENTAGRAM_RADIUS: f64 = 1.0;
/// Speed ceiling for random polynomial trajectories, m/s.
pub const POLY_MAX_SPEED: f64 = 1.0;
/// Speed ceiling for zigzag segments, m/s.
pub const ZIGZAG_MAX_SPEED: f64 = 2.0;
/// Rejection budget for random generation.
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    FigureEight,
    Polynomial,
    Pentagram,
    Zigzag,
}

/// One quintic segment with per-axis coefficients in local time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolySegment {
    pub start: f64,
    pub dur: f64,
    /// coef[axis][k] multiplies tau^k.
    pub coef: [[f64; 6]; 3],
}

impl PolySegment {
    /// Value of the `order`-th derivative at local time tau.
    fn eval(&self, tau: f64, order: usize) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        for axis in 0..3 {
            let mut v = 0.0;
            for k in (order..6).rev() {
                let mut c = self.coef[axis][k];
                for d in 0..order {
                    c *= (k - d) as f64;
                }
                v = v * tau + c;
            }
            out[axis] = v;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Repr {
    FigureEight { period: f64, height: f64 },
    Polynomial { segments: Vec<PolySegment> },
    Linear { times: Vec<f64>, points: Vec<Vector3<f64>> },
}

/// A time-parameterized 3-D reference curve on [0, duration].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    kind: TrajectoryKind,
    duration: f64,
    repr: Repr,
}

impl ReferenceTrajectory {
    pub fn kind(&self) -> TrajectoryKind {
        self.kind
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Periodic figure-eight lap of the given period. The printed curve
    /// starts at (1, 0); it is translated by (-1, 0) so flight starts at the
    /// origin like every other family.
    pub fn figure_eight(period: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::InvalidConfig(format!("period must be > 0, got {period}")));
        }
        Ok(Self {
            kind: TrajectoryKind::FigureEight,
            duration: period,
            repr: Repr::FigureEight { period, height: DEFAULT_HEIGHT },
        })
    }

    /// Extend a periodic trajectory to `laps` repetitions.
    pub fn repeated(mut self, laps: usize) -> Self {
        if let Repr::FigureEight { period, .. } = &self.repr {
            self.duration = *period * laps.max(1) as f64;
        }
        self
    }

    /// Chain of random quintic segments, C^3 at junctions, planar speed
    /// within [0, 1] m/s, starting at rest at the origin.
    pub fn random_polynomial<R: Rng>(rng: &mut R, total_duration: f64) -> Result<Self> {
        if !(total_duration > 0.0) {
            return Err(Error::InvalidConfig("total_duration must be > 0".into()));
        }
        let mut segments: Vec<PolySegment> = Vec::new();
        let mut t = 0.0;
        // Boundary state carried across junctions: pos, vel, acc, jerk.
        let mut bpos = Vector3::new(0.0, 0.0, DEFAULT_HEIGHT);
        let mut bvel = Vector3::zeros();
        let mut bacc = Vector3::zeros();
        let mut bjerk = Vector3::zeros();

        while t < total_duration {
            let dur = rng.random_range(1.5..4.0);
            let mut best: Option<(PolySegment, f64)> = None;
            for _ in 0..MAX_ATTEMPTS {
                // Gentle targets keep the interior under the speed cap most
                // of the time; worst cases are rescaled globally below.
                let dist_cap = 0.35 * dur;
                let target = Vector3::new(
                    (bpos.x + rng.random_range(-dist_cap..dist_cap)).clamp(-1.2, 1.2),
                    (bpos.y + rng.random_range(-dist_cap..dist_cap)).clamp(-1.2, 1.2),
                    DEFAULT_HEIGHT,
                );
                let vel_end = Vector3::new(
                    rng.random_range(-0.35..0.35),
                    rng.random_range(-0.35..0.35),
                    0.0,
                );
                let seg = quintic_segment(t, dur, &bpos, &bvel, &bacc, &bjerk, &target, &vel_end);
                let vmax = segment_max_speed(&seg);
                // Margin absorbs grid-alignment differences between the
                // local acceptance grid and later global grids.
                if vmax <= POLY_MAX_SPEED * 0.999 {
                    best = Some((seg, vmax));
                    break;
                }
                match &best {
                    Some((_, b)) if *b <= vmax => {}
                    _ => best = Some((seg, vmax)),
                }
            }
            let (seg, _) = best.ok_or_else(|| {
                Error::TrajGen("polynomial segment rejection budget exhausted".into())
            })?;
            bpos = seg.eval(seg.dur, 0);
            bvel = seg.eval(seg.dur, 1);
            bacc = seg.eval(seg.dur, 2);
            bjerk = seg.eval(seg.dur, 3);
            t += seg.dur;
            segments.push(seg);
        }

        let mut traj = Self {
            kind: TrajectoryKind::Polynomial,
            duration: t,
            repr: Repr::Polynomial { segments },
        };
        // Uniform time rescale if any accepted segment still exceeds the cap.
        let vmax = traj.max_speed(1000.0);
        if vmax > POLY_MAX_SPEED * 0.999 {
            let c = vmax / (POLY_MAX_SPEED * 0.999);
            if let Repr::Polynomial { segments } = &mut traj.repr {
                let mut start = 0.0;
                for seg in segments.iter_mut() {
                    seg.start = start;
                    seg.dur *= c;
                    let mut scale = 1.0;
                    for k in 0..6 {
                        for axis in 0..3 {
                            seg.coef[axis][k] /= scale;
                        }
                        scale *= c;
                    }
                    start += seg.dur;
                }
                traj.duration = start;
            }
        }
        Ok(traj)
    }

    /// Single fixed point held for `duration` (a degenerate zigzag; useful
    /// for hover tests and demos).
    pub fn constant(point: Vector3<f64>, duration: f64) -> Self {
        Self {
            kind: TrajectoryKind::Zigzag,
            duration,
            repr: Repr::Linear { times: vec![0.0, duration], points: vec![point, point] },
        }
    }

    /// Constant-speed pentagram: lead-in from the origin to the first star
    /// vertex, then the five chords of the {5/2} star, closed.
    pub fn pentagram(speed: f64) -> Result<Self> {
        if !(speed > 0.0) {
            return Err(Error::InvalidConfig(format!("pentagram speed must be > 0, got {speed}")));
        }
        let mut points = Vec::with_capacity(7);
        points.push(Vector3::new(0.0, 0.0, DEFAULT_HEIGHT));
        // Stepping 144 degrees visits every second vertex of the pentagon.
        for k in 0..=5 {
            let theta = std::f64::consts::FRAC_PI_2
                + (k % 5) as f64 * 2.0 * std::f64::consts::PI * 2.0 / 5.0;
            points.push(Vector3::new(
                PENTAGRAM_RADIUS * theta.cos(),
                PENTAGRAM_RADIUS * theta.sin(),
                DEFAULT_HEIGHT,
            ));
        }
        let mut times = vec![0.0];
        for w in points.windows(2) {
            let dist = (w[1] - w[0]).norm();
            times.push(times.last().unwrap() + dist / speed);
        }
        let duration = *times.last().unwrap();
        Ok(Self {
            kind: TrajectoryKind::Pentagram,
            duration,
            repr: Repr::Linear { times, points },
        })
    }

    /// Random zigzag: waypoints uniform in the [-1, 1]^2 box connected by
    /// straight lines, segment times in [1, 1.5] s, speed at most 2 m/s.
    pub fn zigzag<R: Rng>(rng: &mut R, total_duration: f64) -> Result<Self> {
        if !(total_duration > 0.0) {
            return Err(Error::InvalidConfig("total_duration must be > 0".into()));
        }
        let mut points = vec![Vector3::new(0.0, 0.0, DEFAULT_HEIGHT)];
        let mut times = vec![0.0];
        while *times.last().unwrap() < total_duration {
            let prev = *points.last().unwrap();
            let mut accepted = false;
            for _ in 0..MAX_ATTEMPTS {
                let interval = rng.random_range(1.0..1.5);
                let wp = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    DEFAULT_HEIGHT,
                );
                if (wp - prev).norm() / interval <= ZIGZAG_MAX_SPEED {
                    points.push(wp);
                    times.push(times.last().unwrap() + interval);
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                return Err(Error::TrajGen("zigzag waypoint rejection budget exhausted".into()));
            }
        }
        Ok(Self {
            kind: TrajectoryKind::Zigzag,
            duration: *times.last().unwrap(),
            repr: Repr::Linear { times, points },
        })
    }

    /// Reference position at time `t`, clamped to the defined span.
    pub fn position(&self, t: f64) -> Vector3<f64> {
        let t = t.clamp(0.0, self.duration);
        match &self.repr {
            Repr::FigureEight { period, height } => {
                let w = 2.0 * std::f64::consts::PI * t / period;
                Vector3::new(w.cos() - 1.0, (2.0 * w).sin() / 2.0, *height)
            }
            Repr::Polynomial { segments } => {
                let seg = locate_segment(segments, t);
                seg.eval((t - seg.start).clamp(0.0, seg.dur), 0)
            }
            Repr::Linear { times, points } => {
                let i = locate_interval(times, t);
                let t0 = times[i];
                let t1 = times[i + 1];
                let frac = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
                points[i] + (points[i + 1] - points[i]) * frac
            }
        }
    }

    /// Reference velocity at time `t` (right-sided at breakpoints, zero past
    /// the end).
    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        if t > self.duration {
            return Vector3::zeros();
        }
        let t = t.max(0.0);
        match &self.repr {
            Repr::FigureEight { period, .. } => {
                let rate = 2.0 * std::f64::consts::PI / period;
                let w = rate * t;
                Vector3::new(-rate * w.sin(), rate * (2.0 * w).cos(), 0.0)
            }
            Repr::Polynomial { segments } => {
                let seg = locate_segment(segments, t);
                seg.eval((t - seg.start).clamp(0.0, seg.dur), 1)
            }
            Repr::Linear { times, points } => {
                let i = locate_interval(times, t);
                let dt = times[i + 1] - times[i];
                if dt > 0.0 {
                    (points[i + 1] - points[i]) / dt
                } else {
                    Vector3::zeros()
                }
            }
        }
    }

    /// The next `n` reference points spaced `spacing` seconds apart, starting
    /// at `t + spacing`. Queries beyond the end clamp to the terminal point.
    pub fn sample_window(&self, t: f64, n: usize, spacing: f64) -> Result<Vec<Vector3<f64>>> {
        if t < 0.0 {
            return Err(Error::Query(format!("window start must be >= 0, got {t}")));
        }
        if !(spacing > 0.0) {
            return Err(Error::Query("window spacing must be > 0".into()));
        }
        Ok((1..=n).map(|i| self.position(t + i as f64 * spacing)).collect())
    }

    /// Maximum reference speed found on a uniform grid of the given rate.
    pub fn max_speed(&self, grid_hz: f64) -> f64 {
        let steps = (self.duration * grid_hz).ceil() as usize;
        let mut vmax: f64 = 0.0;
        for i in 0..=steps {
            let t = (i as f64 / grid_hz).min(self.duration);
            vmax = vmax.max(self.velocity(t).norm());
        }
        vmax
    }

    /// Junction C^3 worst-case mismatch across derivative orders 0..=3.
    /// Zero for non-polynomial families.
    pub fn max_junction_mismatch(&self) -> f64 {
        let Repr::Polynomial { segments } = &self.repr else { return 0.0 };
        let mut worst: f64 = 0.0;
        for pair in segments.windows(2) {
            for order in 0..=3 {
                let left = pair[0].eval(pair[0].dur, order);
                let right = pair[1].eval(0.0, order);
                worst = worst.max((left - right).norm());
            }
        }
        worst
    }

    /// Piecewise-linear breakpoints (pentagram/zigzag); empty otherwise.
    pub fn waypoints(&self) -> Vec<Vector3<f64>> {
        match &self.repr {
            Repr::Linear { points, .. } => points.clone(),
            _ => Vec::new(),
        }
    }
}

fn locate_segment<'a>(segments: &'a [PolySegment], t: f64) -> &'a PolySegment {
    let mut lo = 0usize;
    let mut hi = segments.len() - 1;
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if segments[mid].start <= t {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    &segments[lo]
}

fn locate_interval(times: &[f64], t: f64) -> usize {
    let mut lo = 0usize;
    let mut hi = times.len() - 2;
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if times[mid] <= t {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Quintic interpolant pinning position/velocity/acceleration/jerk at the
/// start and position/velocity at the end.
#[allow(clippy::too_many_arguments)]
fn quintic_segment(
    start: f64,
    dur: f64,
    p0: &Vector3<f64>,
    v0: &Vector3<f64>,
    a0: &Vector3<f64>,
    j0: &Vector3<f64>,
    p1: &Vector3<f64>,
    v1: &Vector3<f64>,
) -> PolySegment {
    let mut coef = [[0.0; 6]; 3];
    let t = dur;
    for axis in 0..3 {
        let c0 = p0[axis];
        let c1 = v0[axis];
        let c2 = a0[axis] / 2.0;
        let c3 = j0[axis] / 6.0;
        let p_rem = p1[axis] - (c0 + c1 * t + c2 * t * t + c3 * t * t * t);
        let v_rem = v1[axis] - (c1 + 2.0 * c2 * t + 3.0 * c3 * t * t);
        // [t^4 t^5; 4t^3 5t^4] [c4 c5]^T = [p_rem v_rem]^T, det = t^8.
        let c4 = (5.0 * p_rem - t * v_rem) / t.powi(4);
        let c5 = (v_rem * t - 4.0 * p_rem) / t.powi(5);
        coef[axis] = [c0, c1, c2, c3, c4, c5];
    }
    PolySegment { start, dur, coef }
}

/// Maximum speed of one segment on a 1 kHz local grid.
fn segment_max_speed(seg: &PolySegment) -> f64 {
    let steps = (seg.dur * 1000.0).ceil() as usize;
    let mut vmax: f64 = 0.0;
    for i in 0..=steps {
        let tau = (i as f64 / 1000.0).min(seg.dur);
        vmax = vmax.max(seg.eval(tau, 1).norm());
    }
    vmax
}

/// Parameters that reproduce a generated trajectory exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: TrajectoryKind,
    /// RNG seed for random families; ignored for deterministic ones.
    pub seed: u64,
    /// Figure-eight lap period, s.
    pub period: Option<f64>,
    /// Pentagram speed, m/s.
    pub speed: Option<f64>,
    /// Total duration for random families, s.
    pub duration: Option<f64>,
    /// Figure-eight laps.
    pub laps: Option<usize>,
}

impl GeneratorSpec {
    /// Build the trajectory this spec describes.
    pub fn build(&self) -> Result<ReferenceTrajectory> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        match self.kind {
            TrajectoryKind::FigureEight => {
                let period = self.period.unwrap_or(5.5);
                Ok(ReferenceTrajectory::figure_eight(period)?.repeated(self.laps.unwrap_or(1)))
            }
            TrajectoryKind::Polynomial => {
                ReferenceTrajectory::random_polynomial(&mut rng, self.duration.unwrap_or(10.0))
            }
            TrajectoryKind::Pentagram => {
                ReferenceTrajectory::pentagram(self.speed.unwrap_or(0.5))
            }
            TrajectoryKind::Zigzag => {
                ReferenceTrajectory::zigzag(&mut rng, self.duration.unwrap_or(10.0))
            }
        }
    }
}

/// Write `(t, x, y, z)` samples of the trajectory at `rate_hz` as CSV.
pub fn write_csv<W: std::io::Write>(
    traj: &ReferenceTrajectory,
    rate_hz: f64,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "y", "z"]).map_err(csv_err)?;
    let steps = (traj.duration() * rate_hz).floor() as usize;
    for i in 0..=steps {
        let t = i as f64 / rate_hz;
        let p = traj.position(t);
        w.write_record(&[t.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

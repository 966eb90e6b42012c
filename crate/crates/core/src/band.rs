//! Timed elastic band: a fixed start pose followed by free poses, each reached
//! after a positive time interval. Velocities and accelerations are derived by
//! finite differences between consecutive configurations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to every time interval after a solver step.
pub const DT_FLOOR: f64 = 1e-3;

/// Wraps an angle to `(-pi, pi]`, rejecting non-finite input.
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(normalize_angle(theta))
}

/// Unchecked variant of [`wrap_angle`]; NaN propagates.
pub(crate) fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let two_pi = 2.0 * PI;
    let mut r = theta - two_pi * (theta / two_pi).round();
    if r <= -PI {
        r += two_pi;
    } else if r > PI {
        r -= two_pi;
    }
    r
}

/// Midpoint of two headings along the shorter arc.
pub(crate) fn angle_midpoint(a: f64, b: f64) -> f64 {
    normalize_angle(a + 0.5 * normalize_angle(b - a))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    x: f64,
    y: f64,
    beta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, beta: f64) -> Self {
        Self {
            x,
            y,
            beta: normalize_angle(beta),
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn distance_to(&self, other: &Pose2) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.beta.is_finite()
    }

    /// Rigid motion: rotate by `phi` about the origin, then translate.
    pub fn transformed(&self, phi: f64, tx: f64, ty: f64) -> Pose2 {
        let (s, c) = phi.sin_cos();
        Pose2::new(
            c * self.x - s * self.y + tx,
            s * self.x + c * self.y + ty,
            self.beta + phi,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub v: f64,
    pub omega: f64,
}

impl Twist {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    /// Clamps `v` into `[-v_max_backward, v_max]` and `omega` into `[-omega_max, omega_max]`.
    pub fn clipped(&self, limits: &KinodynamicLimits) -> Twist {
        let v_lo = -limits.v_max_backward;
        Twist {
            v: self.v.clamp(v_lo, limits.v_max),
            omega: self.omega.clamp(-limits.omega_max, limits.omega_max),
        }
    }
}

/// Kinodynamic bounds of a differential-drive robot.
///
/// `v_max_backward` bounds reverse motion. It defaults to `v_max`, in which
/// case the velocity bound is symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinodynamicLimits {
    pub v_max: f64,
    #[serde(default = "KinodynamicLimits::unset")]
    pub v_max_backward: f64,
    pub omega_max: f64,
    pub a_max: f64,
    pub alpha_max: f64,
    pub d_min: f64,
}

impl KinodynamicLimits {
    pub fn new(v_max: f64, omega_max: f64, a_max: f64, alpha_max: f64, d_min: f64) -> Result<Self> {
        Self {
            v_max,
            v_max_backward: v_max,
            omega_max,
            a_max,
            alpha_max,
            d_min,
        }
        .validated()
    }

    pub fn with_backward(mut self, v_max_backward: f64) -> Result<Self> {
        self.v_max_backward = v_max_backward;
        self.validated()
    }

    fn unset() -> f64 {
        f64::NAN
    }

    /// Fills defaulted fields and checks positivity.
    pub fn validated(mut self) -> Result<Self> {
        if self.v_max_backward.is_nan() {
            self.v_max_backward = self.v_max;
        }
        let fields = [
            ("v_max", self.v_max),
            ("v_max_backward", self.v_max_backward),
            ("omega_max", self.omega_max),
            ("a_max", self.a_max),
            ("alpha_max", self.alpha_max),
            ("d_min", self.d_min),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "limit {name} must be positive and finite, got {value}"
                )));
            }
        }
        Ok(self)
    }
}

/// Start pose plus `I` free poses and `I` positive time intervals.
///
/// Segment `i` connects node `i` to node `i + 1` over `dts[i]`, where node 0 is
/// the fixed start and node `k >= 1` is `poses[k - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedBand {
    start: Pose2,
    poses: Vec<Pose2>,
    dts: Vec<f64>,
}

impl TimedBand {
    pub fn new(start: Pose2, poses: Vec<Pose2>, dts: Vec<f64>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::InvalidParameter(
                "band needs at least one free pose".into(),
            ));
        }
        if poses.len() != dts.len() {
            return Err(Error::DimensionMismatch {
                what: "band dts",
                expected: poses.len(),
                got: dts.len(),
            });
        }
        if !start.is_finite() || poses.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("band pose"));
        }
        if let Some((index, &dt)) = dts
            .iter()
            .enumerate()
            .find(|(_, dt)| !(**dt > 0.0 && dt.is_finite()))
        {
            return Err(Error::NonPositiveInterval { index, dt });
        }
        Ok(Self { start, poses, dts })
    }

    pub fn start(&self) -> &Pose2 {
        &self.start
    }

    pub fn poses(&self) -> &[Pose2] {
        &self.poses
    }

    pub fn dts(&self) -> &[f64] {
        &self.dts
    }

    /// Number of free poses (and segments).
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn goal(&self) -> &Pose2 {
        self.poses.last().expect("band is never empty")
    }

    /// Node `0` is the start, node `k` is `poses[k - 1]`.
    pub fn node(&self, k: usize) -> &Pose2 {
        if k == 0 {
            &self.start
        } else {
            &self.poses[k - 1]
        }
    }

    pub fn total_time(&self) -> f64 {
        self.dts.iter().sum()
    }

    /// Number of optimized coordinates: three per pose and one per interval.
    pub fn num_coordinates(&self) -> usize {
        4 * self.poses.len()
    }

    /// Flattens to `[x_k, y_k, beta_k, dt_k]` per free pose.
    pub fn to_coordinates(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_coordinates());
        for (p, dt) in self.poses.iter().zip(&self.dts) {
            out.extend_from_slice(&[p.x, p.y, p.beta, *dt]);
        }
        out
    }

    pub fn from_coordinates(start: Pose2, coords: &[f64]) -> Result<Self> {
        if coords.is_empty() || !coords.len().is_multiple_of(4) {
            return Err(Error::DimensionMismatch {
                what: "band coordinates (multiple of 4)",
                expected: 4 * (coords.len() / 4).max(1),
                got: coords.len(),
            });
        }
        let (poses, dts) = coords
            .chunks_exact(4)
            .map(|c| (Pose2::new(c[0], c[1], c[2]), c[3]))
            .unzip();
        Self::new(start, poses, dts)
    }

    pub fn with_start(&self, start: Pose2) -> Self {
        Self {
            start,
            ..self.clone()
        }
    }

    /// Applies the same rigid motion to every pose, including the start.
    pub fn transformed(&self, phi: f64, tx: f64, ty: f64) -> Self {
        Self {
            start: self.start.transformed(phi, tx, ty),
            poses: self
                .poses
                .iter()
                .map(|p| p.transformed(phi, tx, ty))
                .collect(),
            dts: self.dts.clone(),
        }
    }

    /// Drops the first `count` free poses, making the last dropped pose the new start.
    pub(crate) fn drop_front(&self, count: usize, new_start: Pose2) -> Option<Self> {
        if count >= self.poses.len() {
            return None;
        }
        Some(Self {
            start: new_start,
            poses: self.poses[count..].to_vec(),
            dts: self.dts[count..].to_vec(),
        })
    }

    pub(crate) fn push(&mut self, pose: Pose2, dt: f64) {
        debug_assert!(dt > 0.0);
        self.poses.push(pose);
        self.dts.push(dt);
    }

    pub(crate) fn set_goal(&mut self, pose: Pose2) {
        *self.poses.last_mut().expect("band is never empty") = pose;
    }

    pub(crate) fn set_dt(&mut self, i: usize, dt: f64) {
        debug_assert!(dt > 0.0);
        self.dts[i] = dt;
    }

    fn check_segment(&self, i: usize) -> Result<()> {
        if i >= self.poses.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.poses.len(),
            });
        }
        if !(self.dts[i] > 0.0) {
            return Err(Error::NonPositiveInterval {
                index: i,
                dt: self.dts[i],
            });
        }
        Ok(())
    }
}

/// Twist that carries `from` onto `to` in time `dt` under the finite-difference model.
pub(crate) fn chord_twist(from: &Pose2, to: &Pose2, dt: f64) -> Twist {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    let (s, c) = from.beta.sin_cos();
    let sign = if c * dx + s * dy >= 0.0 { 1.0 } else { -1.0 };
    Twist {
        v: sign * dx.hypot(dy) / dt,
        omega: normalize_angle(to.beta - from.beta) / dt,
    }
}

/// Signed velocity of segment `i`. The sign follows the projection of the
/// chord onto the heading of the segment's first node.
pub fn finite_diff_twist(band: &TimedBand, i: usize) -> Result<Twist> {
    band.check_segment(i)?;
    Ok(chord_twist(band.node(i), band.node(i + 1), band.dts[i]))
}

/// Linear and angular acceleration between segments `i` and `i + 1`.
pub fn finite_diff_accel(band: &TimedBand, i: usize) -> Result<(f64, f64)> {
    if i + 1 >= band.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: band.len().saturating_sub(1),
        });
    }
    let t0 = finite_diff_twist(band, i)?;
    let t1 = finite_diff_twist(band, i + 1)?;
    let mean_dt = 0.5 * (band.dts[i] + band.dts[i + 1]);
    Ok(((t1.v - t0.v) / mean_dt, (t1.omega - t0.omega) / mean_dt))
}

/// Places poses along a polyline at arc-length spacing of at most
/// `v_nominal * dt_ref`, every interval set to `dt_ref`.
///
/// Headings follow the segment tangents; a pose falling exactly on a corner
/// takes the midpoint of the two tangents. The start pose sits on the first
/// waypoint with `start_heading`, the last pose on the final waypoint with
/// `goal_heading`.
pub fn init_from_path(
    path: &[(f64, f64)],
    start_heading: f64,
    goal_heading: f64,
    dt_ref: f64,
    v_nominal: f64,
) -> Result<TimedBand> {
    if !(dt_ref > 0.0 && v_nominal > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dt_ref and v_nominal must be positive (got {dt_ref}, {v_nominal})"
        )));
    }
    if path.iter().any(|(x, y)| !(x.is_finite() && y.is_finite()))
        || !start_heading.is_finite()
        || !goal_heading.is_finite()
    {
        return Err(Error::NonFinite("path"));
    }
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(path.len());
    for &p in path {
        if pts
            .last()
            .is_none_or(|q: &(f64, f64)| (p.0 - q.0).hypot(p.1 - q.1) > 1e-12)
        {
            pts.push(p);
        }
    }
    if pts.len() < 2 {
        return Err(Error::DegeneratePath(format!(
            "need at least 2 distinct points, got {}",
            pts.len()
        )));
    }

    let seg_len: Vec<f64> = pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .collect();
    let tangents: Vec<f64> = pts
        .windows(2)
        .map(|w| (w[1].1 - w[0].1).atan2(w[1].0 - w[0].0))
        .collect();
    let total: f64 = seg_len.iter().sum();
    let spacing = v_nominal * dt_ref;
    let n = ((total / spacing) - 1e-9).ceil().max(1.0) as usize;
    let step = total / n as f64;

    let mut poses = Vec::with_capacity(n);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 1..=n {
        if k == n {
            let last = pts[pts.len() - 1];
            poses.push(Pose2::new(last.0, last.1, goal_heading));
            break;
        }
        let s = step * k as f64;
        while seg + 1 < seg_len.len() && s > seg_start + seg_len[seg] + 1e-9 {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let local = (s - seg_start).clamp(0.0, seg_len[seg]);
        let t = local / seg_len[seg];
        let (a, b) = (pts[seg], pts[seg + 1]);
        let x = a.0 + t * (b.0 - a.0);
        let y = a.1 + t * (b.1 - a.1);
        let at_corner = (seg_len[seg] - local).abs() <= 1e-9 && seg + 1 < tangents.len();
        let heading = if at_corner {
            angle_midpoint(tangents[seg], tangents[seg + 1])
        } else {
            tangents[seg]
        };
        poses.push(Pose2::new(x, y, heading));
    }
    let start = Pose2::new(pts[0].0, pts[0].1, start_heading);
    TimedBand::new(start, poses, vec![dt_ref; n])
}

/// Bisects long intervals and merges short ones so that intervals stay near
/// `dt_ref`. One left-to-right pass; the start pose and the total time are
/// preserved.
pub fn resize(band: &TimedBand, dt_ref: f64, dt_hysteresis: f64, max_poses: usize) -> TimedBand {
    debug_assert!(dt_hysteresis < dt_ref);
    let hi = dt_ref + dt_hysteresis;
    let lo = dt_ref - dt_hysteresis;
    let mut poses = band.poses.clone();
    let mut dts = band.dts.clone();

    let mut i = 0;
    while i < dts.len() {
        if dts[i] > hi && dts.len() < max_poses {
            let from = if i == 0 { band.start } else { poses[i - 1] };
            let to = poses[i];
            let mid = Pose2::new(
                0.5 * (from.x + to.x),
                0.5 * (from.y + to.y),
                angle_midpoint(from.beta, to.beta),
            );
            let half = 0.5 * dts[i];
            poses.insert(i, mid);
            dts[i] = half;
            dts.insert(i + 1, half);
            i += 2;
            continue;
        }
        if dts[i] < lo && dts.len() > 2 {
            if i + 1 < dts.len() {
                // merge segments i and i+1 by dropping the pose between them
                poses.remove(i);
                dts[i] += dts[i + 1];
                dts.remove(i + 1);
                if dts[i] >= lo {
                    i += 1;
                }
            } else {
                // the last pose is the goal; drop its predecessor instead
                poses.remove(i - 1);
                dts[i - 1] += dts[i];
                dts.remove(i);
            }
            continue;
        }
        i += 1;
    }
    TimedBand {
        start: band.start,
        poses,
        dts,
    }
}

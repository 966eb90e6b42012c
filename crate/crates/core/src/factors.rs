//! Residual blocks over band variables.
//!
//! Objective factors contribute squared residuals to the cost, equality
//! factors stack into `c(x)` and inequality factors into `p(x)` (feasible when
//! `p <= 0`). Every factor evaluates a residual and its analytic Jacobian with
//! respect to the coordinates of the variable blocks it touches.
//!
//! Variable blocks are interleaved: block `2k` is free pose `k` (coordinates
//! `4k..4k+3`), block `2k + 1` is interval `k` (coordinate `4k + 3`). The start
//! pose is fixed and owns no block.

use std::sync::Arc;

use crate::band::{angle_midpoint, normalize_angle, KinodynamicLimits, Pose2, TimedBand, Twist};
use crate::error::{Error, Result};
use crate::nlls::sparse::{RowBuilder, SparseMatrix};
use crate::sim::grid::OccupancyGrid;

/// Clearance beyond this is treated as unbounded. Keeps `p + v` well
/// conditioned on maps with no obstacles in range.
pub const CLEARANCE_CAP: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum FactorKind {
    Objective,
    Equality,
    Inequality,
}

/// Constraint family, used to pick per-class weights in the soft baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorClass {
    Time,
    Kinematics,
    Velocity,
    Acceleration,
    Obstacle,
    Goal,
    Other,
}

#[derive(Debug, Clone)]
pub enum FactorModel {
    /// `dt_i`.
    Time { segment: usize },
    /// Nonholonomic arc condition on segment `i`.
    Kinematics { segment: usize },
    /// `(|v_i| - v_lim, |omega_i| - omega_max)`.
    Velocity {
        segment: usize,
        v_max: f64,
        v_max_backward: f64,
        omega_max: f64,
    },
    /// `(|a_i| - a_max, |alpha_i| - alpha_max)` between segments `i` and `i + 1`.
    Acceleration {
        segment: usize,
        a_max: f64,
        alpha_max: f64,
    },
    /// Acceleration from the robot's current twist into segment 0.
    StartAcceleration {
        twist: Twist,
        a_max: f64,
        alpha_max: f64,
    },
    /// `d_min - clearance(pose_k)`.
    Obstacle {
        pose: usize,
        d_min: f64,
        grid: Arc<OccupancyGrid>,
    },
    /// `(x - gx, y - gy, wrap(beta - gbeta))` on free pose `k`.
    Goal { pose: usize, goal: Pose2 },
    /// `sum_j a_j * x[c_j] + b` over raw coordinates.
    Affine {
        coeffs: Vec<(usize, f64)>,
        offset: f64,
    },
    /// `max(0, p + margin)` applied row-wise to an inequality model.
    Hinge {
        inner: Box<FactorModel>,
        margin: f64,
    },
}

impl FactorModel {
    pub fn class(&self) -> FactorClass {
        match self {
            FactorModel::Time { .. } => FactorClass::Time,
            FactorModel::Kinematics { .. } => FactorClass::Kinematics,
            FactorModel::Velocity { .. } => FactorClass::Velocity,
            FactorModel::Acceleration { .. } | FactorModel::StartAcceleration { .. } => {
                FactorClass::Acceleration
            }
            FactorModel::Obstacle { .. } => FactorClass::Obstacle,
            FactorModel::Goal { .. } => FactorClass::Goal,
            FactorModel::Affine { .. } => FactorClass::Other,
            FactorModel::Hinge { inner, .. } => inner.class(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            FactorModel::Time { .. } | FactorModel::Kinematics { .. } => 1,
            FactorModel::Velocity { .. }
            | FactorModel::Acceleration { .. }
            | FactorModel::StartAcceleration { .. } => 2,
            FactorModel::Obstacle { .. } | FactorModel::Affine { .. } => 1,
            FactorModel::Goal { .. } => 3,
            FactorModel::Hinge { inner, .. } => inner.dim(),
        }
    }

    fn var_indices(&self) -> Vec<usize> {
        match self {
            FactorModel::Time { segment } => vec![dt_block(*segment)],
            FactorModel::Kinematics { segment } | FactorModel::Velocity { segment, .. } => {
                segment_blocks(*segment)
            }
            FactorModel::Acceleration { segment, .. } => {
                let i = *segment;
                let mut b = Vec::with_capacity(5);
                if i > 0 {
                    b.push(pose_block(i - 1));
                }
                b.extend([
                    pose_block(i),
                    dt_block(i),
                    pose_block(i + 1),
                    dt_block(i + 1),
                ]);
                b
            }
            FactorModel::StartAcceleration { .. } => segment_blocks(0),
            FactorModel::Obstacle { pose, .. } | FactorModel::Goal { pose, .. } => {
                vec![pose_block(*pose)]
            }
            FactorModel::Affine { coeffs, .. } => {
                let mut b: Vec<usize> = coeffs.iter().map(|(c, _)| coordinate_block(*c)).collect();
                b.sort_unstable();
                b.dedup();
                b
            }
            FactorModel::Hinge { inner, .. } => inner.var_indices(),
        }
    }
}

pub fn pose_block(k: usize) -> usize {
    2 * k
}

pub fn dt_block(k: usize) -> usize {
    2 * k + 1
}

pub fn coordinate_block(c: usize) -> usize {
    if c % 4 == 3 {
        dt_block(c / 4)
    } else {
        pose_block(c / 4)
    }
}

/// Coordinates owned by a block, in increasing order.
pub fn block_coordinates(block: usize) -> std::ops::Range<usize> {
    let k = block / 2;
    if block.is_multiple_of(2) {
        4 * k..4 * k + 3
    } else {
        4 * k + 3..4 * k + 4
    }
}

fn segment_blocks(i: usize) -> Vec<usize> {
    if i == 0 {
        vec![pose_block(0), dt_block(0)]
    } else {
        vec![pose_block(i - 1), pose_block(i), dt_block(i)]
    }
}

/// Coordinate indices of node `k` (`None` for the fixed start).
fn node_coords(k: usize) -> Option<[usize; 3]> {
    (k > 0).then(|| {
        let b = 4 * (k - 1);
        [b, b + 1, b + 2]
    })
}

fn dt_coord(i: usize) -> usize {
    4 * i + 3
}

#[derive(Debug, Clone)]
pub struct Factor {
    kind: FactorKind,
    var_indices: Vec<usize>,
    dim: usize,
    weight: f64,
    model: FactorModel,
}

/// Dense Jacobian block: `dim` rows over the coordinates in `cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorJacobian {
    pub cols: Vec<usize>,
    pub dim: usize,
    /// Row-major, `dim * cols.len()`.
    pub values: Vec<f64>,
}

impl FactorJacobian {
    fn zeros(var_indices: &[usize], dim: usize) -> Self {
        let cols: Vec<usize> = var_indices
            .iter()
            .flat_map(|b| block_coordinates(*b))
            .collect();
        let values = vec![0.0; dim * cols.len()];
        Self { cols, dim, values }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cols
            .iter()
            .position(|c| *c == col)
            .map_or(0.0, |p| self.values[row * self.cols.len() + p])
    }

    fn add(&mut self, row: usize, col: Option<usize>, value: f64) {
        let Some(col) = col else { return };
        let p = self
            .cols
            .iter()
            .position(|c| *c == col)
            .expect("column outside factor blocks");
        let n = self.cols.len();
        self.values[row * n + p] += value;
    }

    fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let n = self.cols.len();
        self.cols
            .iter()
            .copied()
            .zip(self.values[row * n..(row + 1) * n].iter().copied())
    }
}

impl Factor {
    fn new(kind: FactorKind, weight: f64, model: FactorModel) -> Self {
        let var_indices = model.var_indices();
        let dim = model.dim();
        debug_assert!(dim >= 1 && !var_indices.is_empty());
        debug_assert!(var_indices.windows(2).all(|w| w[0] < w[1]));
        Self {
            kind,
            var_indices,
            dim,
            weight,
            model,
        }
    }

    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    pub fn var_indices(&self) -> &[usize] {
        &self.var_indices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn model(&self) -> &FactorModel {
        &self.model
    }

    pub fn class(&self) -> FactorClass {
        self.model.class()
    }

    /// Raw coordinate indices touched by the factor, in increasing order.
    pub fn coordinate_indices(&self) -> Vec<usize> {
        self.var_indices
            .iter()
            .flat_map(|b| block_coordinates(*b))
            .collect()
    }

    fn objective_scale(&self) -> f64 {
        match self.kind {
            FactorKind::Objective => self.weight.sqrt(),
            _ => 1.0,
        }
    }

    fn check_band(&self, band: &TimedBand) -> Result<()> {
        let n_blocks = 2 * band.len();
        match self.var_indices.last() {
            Some(&b) if b < n_blocks => {}
            _ => {
                return Err(Error::DimensionMismatch {
                    what: "factor blocks vs band",
                    expected: n_blocks,
                    got: self.var_indices.last().map_or(0, |b| b + 1),
                })
            }
        }
        // acceleration needs the following segment, which var_indices already covers
        Ok(())
    }

    /// Residual of the factor at `band`. Objective residuals carry `sqrt(weight)`.
    pub fn eval(&self, band: &TimedBand) -> Result<Vec<f64>> {
        self.check_band(band)?;
        let mut r = model_residual(&self.model, band);
        let s = self.objective_scale();
        if s != 1.0 {
            r.iter_mut().for_each(|x| *x *= s);
        }
        Ok(r)
    }

    /// Analytic Jacobian over the touched coordinates. At nonsmooth points a
    /// subgradient is returned with `sign(0) = +1`.
    pub fn jacobian(&self, band: &TimedBand) -> Result<FactorJacobian> {
        self.check_band(band)?;
        let mut jac = FactorJacobian::zeros(&self.var_indices, self.dim);
        jacobian_model(&self.model, band, &mut jac);
        let s = self.objective_scale();
        if s != 1.0 {
            jac.scale(s);
        }
        Ok(jac)
    }
}

fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Speed excess over the forward bound, or over the backward bound when
/// moving backwards: `max(|v| - v_max, -v - v_max_backward)` with `|v|` the
/// chord speed and `v` the projected speed. Equals `|v| - v_max` for
/// symmetric bounds and stays continuous through zero-length chords.
fn speed_excess(speed: f64, projected: f64, v_max: f64, v_max_backward: f64) -> f64 {
    (speed - v_max).max(-projected - v_max_backward)
}

/// Unweighted residual of `model`.
pub fn model_residual(model: &FactorModel, band: &TimedBand) -> Vec<f64> {
    match model {
        FactorModel::Time { segment } => vec![band.dts()[*segment]],
        FactorModel::Kinematics { segment } => {
            let (a, b) = (band.node(*segment), band.node(segment + 1));
            let mean = angle_midpoint(a.beta(), b.beta());
            let (s, c) = mean.sin_cos();
            vec![c * (b.y() - a.y()) - s * (b.x() - a.x())]
        }
        FactorModel::Velocity {
            segment,
            v_max,
            v_max_backward,
            omega_max,
        } => {
            let s = SegmentKinematics::new(band, *segment);
            vec![
                speed_excess(s.speed, s.v, *v_max, *v_max_backward),
                s.omega.abs() - omega_max,
            ]
        }
        FactorModel::Acceleration {
            segment,
            a_max,
            alpha_max,
        } => {
            let i = *segment;
            let s0 = SegmentKinematics::new(band, i);
            let s1 = SegmentKinematics::new(band, i + 1);
            let t = 0.5 * (s0.dt + s1.dt);
            let a = (s1.v - s0.v) / t;
            let alpha = (s1.omega - s0.omega) / t;
            vec![a.abs() - a_max, alpha.abs() - alpha_max]
        }
        FactorModel::StartAcceleration {
            twist,
            a_max,
            alpha_max,
        } => {
            let s0 = SegmentKinematics::new(band, 0);
            let a = (s0.v - twist.v) / s0.dt;
            let alpha = (s0.omega - twist.omega) / s0.dt;
            vec![a.abs() - a_max, alpha.abs() - alpha_max]
        }
        FactorModel::Obstacle { pose, d_min, grid } => {
            let p = band.poses()[*pose];
            vec![d_min - grid.distance(p.x(), p.y()).min(CLEARANCE_CAP)]
        }
        FactorModel::Goal { pose, goal } => {
            let p = band.poses()[*pose];
            vec![
                p.x() - goal.x(),
                p.y() - goal.y(),
                normalize_angle(p.beta() - goal.beta()),
            ]
        }
        FactorModel::Affine { coeffs, offset } => {
            let x = band.to_coordinates();
            vec![coeffs.iter().map(|(c, a)| a * x[*c]).sum::<f64>() + offset]
        }
        FactorModel::Hinge { inner, margin } => model_residual(inner, band)
            .into_iter()
            .map(|p| (p + margin).max(0.0))
            .collect(),
    }
}

/// Speed and yaw rate of one segment plus their partial derivatives.
///
/// `v` is the chord projected onto the mean heading over `dt`. Where the
/// kinematics equality holds this is the signed finite-difference speed, and
/// unlike `sign * |chord|` it stays smooth through zero-length chords.
/// `speed` is the chord length over `dt`.
struct SegmentKinematics {
    dt: f64,
    v: f64,
    speed: f64,
    chord: (f64, f64),
    omega: f64,
    /// d v / d (x_{k+1}, y_{k+1}); the start node gets the negation.
    dv_dxy: (f64, f64),
    /// d v / d beta, identical for both nodes.
    dv_dbeta: f64,
    from: Option<[usize; 3]>,
    to: Option<[usize; 3]>,
    dt_col: usize,
}

impl SegmentKinematics {
    fn new(band: &TimedBand, i: usize) -> Self {
        let (a, b) = (band.node(i), band.node(i + 1));
        let dt = band.dts()[i];
        let (dx, dy) = (b.x() - a.x(), b.y() - a.y());
        let (s, c) = angle_midpoint(a.beta(), b.beta()).sin_cos();
        Self {
            dt,
            v: (c * dx + s * dy) / dt,
            speed: dx.hypot(dy) / dt,
            chord: (dx, dy),
            omega: normalize_angle(b.beta() - a.beta()) / dt,
            dv_dxy: (c / dt, s / dt),
            dv_dbeta: 0.5 * (c * dy - s * dx) / dt,
            from: node_coords(i),
            to: node_coords(i + 1),
            dt_col: dt_coord(i),
        }
    }

    /// Accumulates `scale * d v` into `row`.
    fn add_dv(&self, jac: &mut FactorJacobian, row: usize, scale: f64) {
        let (gx, gy) = self.dv_dxy;
        jac.add(row, self.to.map(|c| c[0]), scale * gx);
        jac.add(row, self.to.map(|c| c[1]), scale * gy);
        jac.add(row, self.to.map(|c| c[2]), scale * self.dv_dbeta);
        jac.add(row, self.from.map(|c| c[0]), -scale * gx);
        jac.add(row, self.from.map(|c| c[1]), -scale * gy);
        jac.add(row, self.from.map(|c| c[2]), scale * self.dv_dbeta);
        jac.add(row, Some(self.dt_col), -scale * self.v / self.dt);
    }

    /// Accumulates `d speed` into `row`; zero chords take the zero subgradient.
    fn add_dspeed(&self, jac: &mut FactorJacobian, row: usize) {
        let (dx, dy) = self.chord;
        let len = dx.hypot(dy);
        if len > 0.0 {
            let (gx, gy) = (dx / (len * self.dt), dy / (len * self.dt));
            jac.add(row, self.to.map(|c| c[0]), gx);
            jac.add(row, self.to.map(|c| c[1]), gy);
            jac.add(row, self.from.map(|c| c[0]), -gx);
            jac.add(row, self.from.map(|c| c[1]), -gy);
        }
        jac.add(row, Some(self.dt_col), -self.speed / self.dt);
    }

    /// Accumulates `scale * d omega` into `row`.
    fn add_domega(&self, jac: &mut FactorJacobian, row: usize, scale: f64) {
        jac.add(row, self.to.map(|c| c[2]), scale / self.dt);
        jac.add(row, self.from.map(|c| c[2]), -scale / self.dt);
        jac.add(row, Some(self.dt_col), -scale * self.omega / self.dt);
    }
}

fn jacobian_model(model: &FactorModel, band: &TimedBand, jac: &mut FactorJacobian) {
    match model {
        FactorModel::Time { segment } => jac.add(0, Some(dt_coord(*segment)), 1.0),
        FactorModel::Kinematics { segment } => {
            let i = *segment;
            let (a, b) = (band.node(i), band.node(i + 1));
            let mean = angle_midpoint(a.beta(), b.beta());
            let (s, c) = mean.sin_cos();
            let (dx, dy) = (b.x() - a.x(), b.y() - a.y());
            let dbeta = 0.5 * (-s * dy - c * dx);
            if let Some([x, y, t]) = node_coords(i) {
                jac.add(0, Some(x), s);
                jac.add(0, Some(y), -c);
                jac.add(0, Some(t), dbeta);
            }
            let [x, y, t] = node_coords(i + 1).expect("segment end is a free pose");
            jac.add(0, Some(x), -s);
            jac.add(0, Some(y), c);
            jac.add(0, Some(t), dbeta);
        }
        FactorModel::Velocity {
            segment,
            v_max,
            v_max_backward,
            ..
        } => {
            let s = SegmentKinematics::new(band, *segment);
            if s.speed - v_max >= -s.v - v_max_backward {
                s.add_dspeed(jac, 0);
            } else {
                s.add_dv(jac, 0, -1.0);
            }
            s.add_domega(jac, 1, sign(s.omega));
        }
        FactorModel::Acceleration { segment, .. } => {
            let i = *segment;
            let s0 = SegmentKinematics::new(band, i);
            let s1 = SegmentKinematics::new(band, i + 1);
            let t = 0.5 * (s0.dt + s1.dt);
            let a = (s1.v - s0.v) / t;
            let alpha = (s1.omega - s0.omega) / t;
            let (sa, sw) = (sign(a), sign(alpha));
            s1.add_dv(jac, 0, sa / t);
            s0.add_dv(jac, 0, -sa / t);
            jac.add(0, Some(s0.dt_col), -sa * a * 0.5 / t);
            jac.add(0, Some(s1.dt_col), -sa * a * 0.5 / t);
            s1.add_domega(jac, 1, sw / t);
            s0.add_domega(jac, 1, -sw / t);
            jac.add(1, Some(s0.dt_col), -sw * alpha * 0.5 / t);
            jac.add(1, Some(s1.dt_col), -sw * alpha * 0.5 / t);
        }
        FactorModel::StartAcceleration { twist, .. } => {
            let s0 = SegmentKinematics::new(band, 0);
            let a = (s0.v - twist.v) / s0.dt;
            let alpha = (s0.omega - twist.omega) / s0.dt;
            let (sa, sw) = (sign(a), sign(alpha));
            s0.add_dv(jac, 0, sa / s0.dt);
            jac.add(0, Some(s0.dt_col), -sa * a / s0.dt);
            s0.add_domega(jac, 1, sw / s0.dt);
            jac.add(1, Some(s0.dt_col), -sw * alpha / s0.dt);
        }
        FactorModel::Obstacle { pose, grid, .. } => {
            let p = band.poses()[*pose];
            let (d, (gx, gy)) = grid.distance_and_gradient(p.x(), p.y());
            let (gx, gy) = if d > CLEARANCE_CAP {
                (0.0, 0.0)
            } else {
                (gx, gy)
            };
            jac.add(0, Some(4 * pose), -gx);
            jac.add(0, Some(4 * pose + 1), -gy);
        }
        FactorModel::Goal { pose, .. } => {
            for r in 0..3 {
                jac.add(r, Some(4 * pose + r), 1.0);
            }
        }
        FactorModel::Affine { coeffs, .. } => {
            for (c, a) in coeffs {
                jac.add(0, Some(*c), *a);
            }
        }
        FactorModel::Hinge { inner, margin } => {
            let p = model_residual(inner, band);
            jacobian_model(inner, band, jac);
            let n = jac.cols.len();
            for (row, pr) in p.iter().enumerate() {
                if pr + margin <= 0.0 {
                    jac.values[row * n..(row + 1) * n]
                        .iter_mut()
                        .for_each(|v| *v = 0.0);
                }
            }
        }
    }
}

/// Objective: `sqrt(weight) * dt_i`.
pub fn time_factor(i: usize, weight: f64) -> Factor {
    debug_assert!(weight >= 0.0);
    Factor::new(
        FactorKind::Objective,
        weight,
        FactorModel::Time { segment: i },
    )
}

/// Equality: chord of segment `i` collinear with the mean heading.
pub fn kinematics_factor(i: usize) -> Factor {
    Factor::new(
        FactorKind::Equality,
        1.0,
        FactorModel::Kinematics { segment: i },
    )
}

pub fn velocity_factor(i: usize, limits: &KinodynamicLimits) -> Factor {
    Factor::new(
        FactorKind::Inequality,
        1.0,
        FactorModel::Velocity {
            segment: i,
            v_max: limits.v_max,
            v_max_backward: limits.v_max_backward,
            omega_max: limits.omega_max,
        },
    )
}

pub fn acceleration_factor(i: usize, limits: &KinodynamicLimits) -> Factor {
    Factor::new(
        FactorKind::Inequality,
        1.0,
        FactorModel::Acceleration {
            segment: i,
            a_max: limits.a_max,
            alpha_max: limits.alpha_max,
        },
    )
}

/// Inequality on the jump from the robot's current twist into segment 0.
pub fn start_acceleration_factor(twist: Twist, limits: &KinodynamicLimits) -> Factor {
    Factor::new(
        FactorKind::Inequality,
        1.0,
        FactorModel::StartAcceleration {
            twist,
            a_max: limits.a_max,
            alpha_max: limits.alpha_max,
        },
    )
}

/// Inequality: `d_min - clearance`. Off-map poses have zero clearance.
pub fn obstacle_factor(pose: usize, grid: Arc<OccupancyGrid>, d_min: f64) -> Factor {
    Factor::new(
        FactorKind::Inequality,
        1.0,
        FactorModel::Obstacle { pose, d_min, grid },
    )
}

/// Equality pinning free pose `k` to `goal`.
pub fn goal_factor(pose: usize, goal: Pose2) -> Factor {
    Factor::new(FactorKind::Equality, 1.0, FactorModel::Goal { pose, goal })
}

/// Scalar affine residual over raw coordinates. Constraint kinds take weight 1.
pub fn affine_factor(
    kind: FactorKind,
    coeffs: Vec<(usize, f64)>,
    offset: f64,
    weight: f64,
) -> Factor {
    let weight = if kind == FactorKind::Objective {
        weight
    } else {
        1.0
    };
    Factor::new(kind, weight, FactorModel::Affine { coeffs, offset })
}

/// Wraps an inequality factor as an objective squared hinge
/// `weight * max(0, p + margin)^2`.
pub fn hinge_factor(inner: &Factor, weight: f64, margin: f64) -> Factor {
    debug_assert_eq!(inner.kind, FactorKind::Inequality);
    Factor::new(
        FactorKind::Objective,
        weight,
        FactorModel::Hinge {
            inner: Box::new(inner.model.clone()),
            margin,
        },
    )
}

/// Reinterprets a constraint factor as the objective `weight * |c|^2`.
pub fn squared_factor(inner: &Factor, weight: f64) -> Factor {
    Factor::new(FactorKind::Objective, weight, inner.model.clone())
}

/// Ordered list of factors over one band. Registration order defines the row
/// order of the stacked constraint vectors.
#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_factors(factors: Vec<Factor>) -> Self {
        Self { factors }
    }

    pub fn push(&mut self, f: Factor) {
        self.factors.push(f);
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn of_kind(&self, kind: FactorKind) -> impl Iterator<Item = &Factor> {
        self.factors.iter().filter(move |f| f.kind == kind)
    }

    /// Total residual dimension of all factors of `kind`.
    pub fn dim_of(&self, kind: FactorKind) -> usize {
        self.of_kind(kind).map(|f| f.dim).sum()
    }

    /// Sum of squared objective residuals.
    pub fn objective_value(&self, band: &TimedBand) -> Result<f64> {
        let mut total = 0.0;
        for f in self.of_kind(FactorKind::Objective) {
            total += f.eval(band)?.iter().map(|r| r * r).sum::<f64>();
        }
        Ok(total)
    }
}

/// Which inequality families are handled by variable splitting. Families that
/// are not split become objective squared hinges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    #[default]
    All,
    VelocityOnly,
}

/// Options for assembling the standard factor set of a band.
#[derive(Debug, Clone)]
pub struct GraphOptions {
    pub time_weight: f64,
    /// Pins the last pose when set.
    pub goal: Option<Pose2>,
    /// Adds the start-acceleration factor when set.
    pub start_twist: Option<Twist>,
    pub grid: Option<Arc<OccupancyGrid>>,
    pub split: SplitPolicy,
    /// Hinge weights for unsplit families: (acceleration, obstacle).
    pub unsplit_weights: (f64, f64),
    pub hinge_margin: f64,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            time_weight: 1.0,
            goal: None,
            start_twist: None,
            grid: None,
            split: SplitPolicy::All,
            unsplit_weights: (1.0, 50.0),
            hinge_margin: 0.05,
        }
    }
}

/// Registers the time, kinematics, velocity, acceleration, obstacle and goal
/// factors for `band`.
pub fn build_band_graph(
    band: &TimedBand,
    limits: &KinodynamicLimits,
    options: &GraphOptions,
) -> FactorGraph {
    let n = band.len();
    let mut g = FactorGraph::new();
    let soften = |f: Factor, w: f64| -> Factor {
        match options.split {
            SplitPolicy::All => f,
            SplitPolicy::VelocityOnly => hinge_factor(&f, w, options.hinge_margin),
        }
    };
    for i in 0..n {
        g.push(time_factor(i, options.time_weight));
    }
    for i in 0..n {
        g.push(kinematics_factor(i));
    }
    for i in 0..n {
        g.push(velocity_factor(i, limits));
    }
    if let Some(twist) = options.start_twist {
        g.push(soften(
            start_acceleration_factor(twist, limits),
            options.unsplit_weights.0,
        ));
    }
    for i in 0..n.saturating_sub(1) {
        g.push(soften(
            acceleration_factor(i, limits),
            options.unsplit_weights.0,
        ));
    }
    if let Some(grid) = &options.grid {
        // the goal pose is pinned, so it gets no obstacle factor
        let last = if options.goal.is_some() { n - 1 } else { n };
        for k in 0..last {
            g.push(soften(
                obstacle_factor(k, grid.clone(), limits.d_min),
                options.unsplit_weights.1,
            ));
        }
    }
    if let Some(goal) = options.goal {
        g.push(goal_factor(n - 1, goal));
    }
    g
}

/// Equality and inequality residuals with their sparse Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedConstraints {
    pub c: Vec<f64>,
    pub p: Vec<f64>,
    pub jc: SparseMatrix,
    pub jp: SparseMatrix,
}

/// Evaluates constraint residuals only (no Jacobians).
pub fn constraint_values(graph: &FactorGraph, band: &TimedBand) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut c = Vec::with_capacity(graph.dim_of(FactorKind::Equality));
    let mut p = Vec::with_capacity(graph.dim_of(FactorKind::Inequality));
    for f in graph.factors() {
        match f.kind {
            FactorKind::Equality => c.extend(f.eval(band)?),
            FactorKind::Inequality => p.extend(f.eval(band)?),
            FactorKind::Objective => {}
        }
    }
    Ok((c, p))
}

/// Stacks `c`, `p`, `J_c`, `J_p` in registration order.
pub fn stack_constraints(graph: &FactorGraph, band: &TimedBand) -> Result<StackedConstraints> {
    let n = band.num_coordinates();
    let mut c = Vec::new();
    let mut p = Vec::new();
    let mut jc = RowBuilder::new(n);
    let mut jp = RowBuilder::new(n);
    for f in graph.factors() {
        let (vals, rows) = match f.kind {
            FactorKind::Equality => (&mut c, &mut jc),
            FactorKind::Inequality => (&mut p, &mut jp),
            FactorKind::Objective => continue,
        };
        vals.extend(f.eval(band)?);
        let jac = f.jacobian(band)?;
        for r in 0..f.dim {
            rows.push_row(jac.row(r));
        }
    }
    Ok(StackedConstraints {
        c,
        p,
        jc: jc.build(),
        jp: jp.build(),
    })
}

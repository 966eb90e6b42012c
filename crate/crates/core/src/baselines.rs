//! Comparison planners: soft-penalty TEB on the same factor graph, and the
//! dynamic window approach.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::band::{normalize_angle, KinodynamicLimits, Pose2, TimedBand, Twist};
use crate::error::{Error, Result};
use crate::factors::{hinge_factor, squared_factor, FactorClass, FactorGraph, FactorKind};
use crate::nlls::{lm_solve, LmConfig, LmStats, SubproblemSpec};
use crate::sim::grid::OccupancyGrid;
use crate::sim::planner::LocalPlanner;
use crate::sim::robot::{integrate, RobotState};

/// Penalty weight per constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassWeights {
    pub velocity: f64,
    pub acceleration: f64,
    pub obstacle: f64,
    pub kinematics: f64,
    pub goal: f64,
    pub other: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            velocity: 2.0,
            acceleration: 1.0,
            obstacle: 50.0,
            kinematics: 1000.0,
            goal: 1000.0,
            other: 1.0,
        }
    }
}

impl ClassWeights {
    pub fn of(&self, class: FactorClass) -> f64 {
        match class {
            FactorClass::Velocity => self.velocity,
            FactorClass::Acceleration => self.acceleration,
            FactorClass::Obstacle => self.obstacle,
            FactorClass::Kinematics => self.kinematics,
            FactorClass::Goal => self.goal,
            FactorClass::Time | FactorClass::Other => self.other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftTebConfig {
    pub weights: ClassWeights,
    pub hinge_margin: f64,
    pub lm: LmConfig,
}

impl Default for SoftTebConfig {
    fn default() -> Self {
        Self {
            weights: ClassWeights::default(),
            hinge_margin: 0.05,
            lm: LmConfig::default(),
        }
    }
}

/// Objective-only graph: inequality rows become squared hinges, equality rows
/// weighted squares. Objective factors are kept as they are.
pub fn soften_graph(graph: &FactorGraph, config: &SoftTebConfig) -> Result<FactorGraph> {
    let w = &config.weights;
    if [
        w.velocity,
        w.acceleration,
        w.obstacle,
        w.kinematics,
        w.goal,
        w.other,
    ]
    .iter()
    .any(|x| !(*x >= 0.0))
        || !(config.hinge_margin >= 0.0)
    {
        return Err(Error::InvalidParameter(
            "soft weights and margin must be nonnegative".into(),
        ));
    }
    Ok(FactorGraph::from_factors(
        graph
            .factors()
            .iter()
            .map(|f| match f.kind() {
                FactorKind::Objective => f.clone(),
                FactorKind::Inequality => hinge_factor(f, w.of(f.class()), config.hinge_margin),
                FactorKind::Equality => squared_factor(f, w.of(f.class())),
            })
            .collect(),
    ))
}

/// Single unconstrained solve over the softened graph.
pub fn soft_teb_solve(
    band0: &TimedBand,
    graph: &FactorGraph,
    config: &SoftTebConfig,
) -> Result<(TimedBand, LmStats)> {
    let soft = soften_graph(graph, config)?;
    let spec = SubproblemSpec::unconstrained(&soft)?;
    lm_solve(&spec, band0, &config.lm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DwaConfig {
    pub v_samples: usize,
    pub omega_samples: usize,
    pub horizon: f64,
    pub sim_step: f64,
    pub heading_weight: f64,
    pub clearance_weight: f64,
    pub velocity_weight: f64,
    /// Clearance beyond this scores the same.
    pub clearance_cap: f64,
    pub control_period: f64,
    /// Lowest sampled speed; zero disables reversing.
    pub v_min: f64,
}

impl Default for DwaConfig {
    fn default() -> Self {
        Self {
            v_samples: 11,
            omega_samples: 21,
            horizon: 1.5,
            sim_step: 0.1,
            heading_weight: 0.8,
            clearance_weight: 0.2,
            velocity_weight: 0.2,
            clearance_cap: 1.0,
            control_period: 0.2,
            v_min: 0.0,
        }
    }
}

impl DwaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.v_samples < 2
            || self.omega_samples < 2
            || !(self.horizon > 0.0)
            || !(self.sim_step > 0.0)
            || !(self.control_period > 0.0)
        {
            return Err(Error::InvalidParameter(format!(
                "invalid DWA config {self:?}"
            )));
        }
        Ok(())
    }
}

/// One sampled twist and its score (`None` when the arc collides).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwaSample {
    pub twist: Twist,
    pub clearance: f64,
    pub score: Option<f64>,
}

fn window(current: f64, reach: f64, lo: f64, hi: f64) -> (f64, f64) {
    let a = (current - reach).max(lo);
    let b = (current + reach).min(hi);
    if a <= b {
        (a, b)
    } else {
        let c = current.clamp(lo, hi);
        (c, c)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if i + 1 == n {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    })
}

/// Scores every sample of the dynamic window, `v` major, `omega` minor.
pub fn dwa_samples(
    state: &RobotState,
    goal: &Pose2,
    grid: &OccupancyGrid,
    config: &DwaConfig,
    limits: &KinodynamicLimits,
) -> Result<Vec<DwaSample>> {
    config.validate()?;
    let t = config.control_period;
    let (v_lo, v_hi) = window(
        state.twist.v,
        limits.a_max * t,
        config.v_min.max(-limits.v_max_backward),
        limits.v_max,
    );
    let (w_lo, w_hi) = window(
        state.twist.omega,
        limits.alpha_max * t,
        -limits.omega_max,
        limits.omega_max,
    );
    let steps = (config.horizon / config.sim_step).round().max(1.0) as usize;
    let dist_to_goal = state.pose.distance_to(goal);
    // speed that still allows stopping at the goal
    let v_target = limits.v_max.min((2.0 * limits.a_max * dist_to_goal).sqrt());
    let mut out = Vec::with_capacity(config.v_samples * config.omega_samples);
    for v in linspace(v_lo, v_hi, config.v_samples) {
        for omega in linspace(w_lo, w_hi, config.omega_samples) {
            let twist = Twist::new(v, omega);
            let mut s = *state;
            let mut clearance = f64::INFINITY;
            for _ in 0..steps {
                s = integrate(&s, twist, config.sim_step);
                let d = if grid.is_blocked(s.pose.x(), s.pose.y()) {
                    0.0
                } else {
                    grid.distance(s.pose.x(), s.pose.y())
                };
                clearance = clearance.min(d);
            }
            let score = (clearance >= limits.d_min).then(|| {
                let bearing = (goal.y() - s.pose.y()).atan2(goal.x() - s.pose.x());
                let heading = (PI - normalize_angle(bearing - s.pose.beta()).abs()) / PI;
                let clear = clearance.min(config.clearance_cap) / config.clearance_cap;
                let speed = 1.0 - (v - v_target).abs() / limits.v_max;
                config.heading_weight * heading
                    + config.clearance_weight * clear
                    + config.velocity_weight * speed
            });
            out.push(DwaSample {
                twist,
                clearance,
                score,
            });
        }
    }
    Ok(out)
}

/// Best-scoring admissible twist. Ties go to the smallest `|omega|`, then the
/// first sample. When every arc collides the robot stops and turns toward the
/// side with more clearance.
pub fn dwa_step(
    state: &RobotState,
    goal: &Pose2,
    grid: &OccupancyGrid,
    config: &DwaConfig,
    limits: &KinodynamicLimits,
) -> Result<Twist> {
    let samples = dwa_samples(state, goal, grid, config, limits)?;
    let mut best: Option<&DwaSample> = None;
    for s in &samples {
        let Some(score) = s.score else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let bs = b.score.unwrap_or(f64::NEG_INFINITY);
                score > bs || (score == bs && s.twist.omega.abs() < b.twist.omega.abs())
            }
        };
        if better {
            best = Some(s);
        }
    }
    if let Some(b) = best {
        return Ok(b.twist);
    }
    let p = state.pose;
    let (s, c) = p.beta().sin_cos();
    let left = grid.distance(p.x() - 0.5 * s, p.y() + 0.5 * c);
    let right = grid.distance(p.x() + 0.5 * s, p.y() - 0.5 * c);
    let omega = if left >= right {
        limits.omega_max
    } else {
        -limits.omega_max
    };
    Ok(Twist::new(0.0, omega))
}

/// DWA with an in-place turn onto the goal heading once close enough.
#[derive(Debug, Clone)]
pub struct DwaPlanner {
    pub config: DwaConfig,
    pub limits: KinodynamicLimits,
    /// Distance to the goal below which the planner only aligns the heading.
    pub align_radius: f64,
}

impl DwaPlanner {
    pub fn new(config: DwaConfig, limits: KinodynamicLimits, align_radius: f64) -> Self {
        Self {
            config,
            limits,
            align_radius,
        }
    }
}

impl LocalPlanner for DwaPlanner {
    fn name(&self) -> &str {
        "dwa"
    }

    fn plan(
        &mut self,
        state: &RobotState,
        goal: &Pose2,
        grid: &Arc<OccupancyGrid>,
    ) -> Result<Twist> {
        if state.pose.distance_to(goal) > self.align_radius {
            return dwa_step(state, goal, grid, &self.config, &self.limits);
        }
        let t = self.config.control_period;
        let v = if state.twist.v >= 0.0 {
            (state.twist.v - self.limits.a_max * t).max(0.0)
        } else {
            (state.twist.v + self.limits.a_max * t).min(0.0)
        };
        let err = normalize_angle(goal.beta() - state.pose.beta());
        let (w_lo, w_hi) = window(
            state.twist.omega,
            self.limits.alpha_max * t,
            -self.limits.omega_max,
            self.limits.omega_max,
        );
        // turn rate that still allows stopping on the heading
        let w_stop = (2.0 * self.limits.alpha_max * err.abs())
            .sqrt()
            .min(err.abs() / t);
        Ok(Twist::new(v, (w_stop * err.signum()).clamp(w_lo, w_hi)))
    }
}

//! Local planner interface and the receding-horizon band planner.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::astar::astar;
use super::grid::OccupancyGrid;
use super::robot::RobotState;
use crate::band::{
    finite_diff_twist, init_from_path, normalize_angle, resize, KinodynamicLimits, Pose2,
    TimedBand, Twist,
};
use crate::baselines::{soft_teb_solve, ClassWeights, SoftTebConfig};
use crate::error::{Error, Result};
use crate::factors::{build_band_graph, GraphOptions, SplitPolicy};
use crate::nlls::LmConfig;
use crate::vsloop::{monotonicity_check, outer_solve, OuterStatus, OuterTrace, VsConfig};

/// Produces the next twist command from the observed robot state.
pub trait LocalPlanner {
    fn name(&self) -> &str;

    fn plan(
        &mut self,
        state: &RobotState,
        goal: &Pose2,
        grid: &Arc<OccupancyGrid>,
    ) -> Result<Twist>;

    /// Solver diagnostics of the most recent cycle, for band planners.
    fn last_cycle(&self) -> Option<&CycleInfo> {
        None
    }
}

/// Outcome of one band optimization cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleInfo {
    pub poses: usize,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub monotone: bool,
    pub max_violation: f64,
    pub capped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandPlannerConfig {
    pub dt_ref: f64,
    pub dt_hysteresis: f64,
    pub max_poses: usize,
    /// Arc length along the global path to the local goal.
    pub lookahead: f64,
    /// Nominal speed for new poses, as a fraction of `v_max`.
    pub nominal_speed_fraction: f64,
    /// Extra clearance for the global path beyond `d_min`.
    pub path_margin: f64,
    /// Weight of each squared time interval.
    pub time_weight: f64,
    pub split: SplitPolicy,
    pub rho: f64,
    pub mu: f64,
    pub max_outer: usize,
    pub inner_max_iterations: usize,
    pub soft_weights: ClassWeights,
    pub hinge_margin: f64,
    /// Reuse the previous band instead of reinitializing from the path.
    pub warm_start: bool,
}

impl Default for BandPlannerConfig {
    fn default() -> Self {
        Self {
            dt_ref: 0.3,
            dt_hysteresis: 0.1,
            max_poses: 60,
            lookahead: 3.0,
            nominal_speed_fraction: 0.8,
            path_margin: 0.15,
            time_weight: 0.03,
            split: SplitPolicy::All,
            rho: 10.0,
            mu: 10.0,
            max_outer: 30,
            inner_max_iterations: 50,
            soft_weights: ClassWeights::default(),
            hinge_margin: 0.05,
            warm_start: true,
        }
    }
}

impl BandPlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_ref > 0.0
            && self.dt_hysteresis >= 0.0
            && self.dt_hysteresis < self.dt_ref
            && self.max_poses >= 2
            && self.lookahead > 0.0
            && self.nominal_speed_fraction > 0.0
            && self.nominal_speed_fraction <= 1.0
            && self.path_margin >= 0.0
            && self.time_weight >= 0.0
            && self.max_outer >= 1
            && self.inner_max_iterations >= 1;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "invalid band planner config {self:?}"
            )));
        }
        self.vs_config().validate()
    }

    pub fn vs_config(&self) -> VsConfig {
        VsConfig {
            rho0: self.rho,
            mu0: self.mu,
            max_outer: self.max_outer,
            inner: self.lm_config(),
            ..VsConfig::default()
        }
    }

    pub fn soft_config(&self) -> SoftTebConfig {
        SoftTebConfig {
            weights: self.soft_weights,
            hinge_margin: self.hinge_margin,
            lm: self.lm_config(),
        }
    }

    fn lm_config(&self) -> LmConfig {
        LmConfig {
            max_iterations: self.inner_max_iterations,
            ..LmConfig::default()
        }
    }

    pub fn graph_options(
        &self,
        grid: &Arc<OccupancyGrid>,
        goal: Pose2,
        start_twist: Twist,
    ) -> GraphOptions {
        GraphOptions {
            time_weight: self.time_weight,
            goal: Some(goal),
            start_twist: Some(start_twist),
            grid: Some(grid.clone()),
            split: self.split,
            unsplit_weights: (self.soft_weights.acceleration, self.soft_weights.obstacle),
            hinge_margin: self.hinge_margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandSolver {
    /// Variable-splitting augmented Lagrangian.
    Split,
    /// Single solve with hinge penalties.
    Soft,
}

/// Polyline with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPath {
    points: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

impl GlobalPath {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        for p in points {
            if pts
                .last()
                .is_none_or(|q| (p.0 - q.0).hypot(p.1 - q.1) > 1e-9)
            {
                pts.push(p);
            }
        }
        if pts.is_empty() {
            return Err(Error::DegeneratePath("empty global path".into()));
        }
        let mut cumulative = vec![0.0];
        for w in pts.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1));
        }
        Ok(Self {
            points: pts,
            cumulative,
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len();
        if n < 2 {
            return 0;
        }
        self.cumulative[1..]
            .iter()
            .position(|c| s <= *c)
            .unwrap_or(n - 2)
            .min(n - 2)
    }

    /// Point and tangent heading at arc length `s` (clamped).
    pub fn at(&self, s: f64) -> (f64, f64, f64) {
        if self.points.len() == 1 {
            let p = self.points[0];
            return (p.0, p.1, 0.0);
        }
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let len = self.cumulative[i + 1] - self.cumulative[i];
        let t = ((s - self.cumulative[i]) / len).clamp(0.0, 1.0);
        (
            a.0 + t * (b.0 - a.0),
            a.1 + t * (b.1 - a.1),
            (b.1 - a.1).atan2(b.0 - a.0),
        )
    }

    /// Arc length of the closest point within `[from, to]`.
    pub fn project(&self, x: f64, y: f64, from: f64, to: f64) -> f64 {
        if self.points.len() == 1 {
            return 0.0;
        }
        let (from, to) = (from.clamp(0.0, self.length()), to.clamp(0.0, self.length()));
        let mut best = (f64::INFINITY, from);
        for i in 0..self.points.len() - 1 {
            let (s0, s1) = (self.cumulative[i], self.cumulative[i + 1]);
            if s1 < from || s0 > to {
                continue;
            }
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let t = (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0);
            let s = (s0 + t * (s1 - s0)).clamp(from, to);
            let (px, py, _) = self.at(s);
            let d = (px - x).hypot(py - y);
            if d < best.0 {
                best = (d, s);
            }
        }
        best.1
    }

    /// Vertices strictly inside `(s0, s1)`.
    fn vertices_between(&self, s0: f64, s1: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points
            .iter()
            .zip(&self.cumulative)
            .filter(move |(_, c)| **c > s0 + 1e-9 && **c < s1 - 1e-9)
            .map(|(p, _)| *p)
    }
}

fn line_of_sight(grid: &OccupancyGrid, a: (f64, f64), b: (f64, f64), inflation: f64) -> bool {
    let len = (b.0 - a.0).hypot(b.1 - a.1);
    let n = (len / (0.25 * grid.resolution())).ceil().max(1.0) as usize;
    (0..=n).all(|k| {
        let t = k as f64 / n as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        grid.world_to_cell(x, y)
            .is_some_and(|(c, r)| !grid.is_occupied(c, r) && grid.cell_distance(c, r) >= inflation)
    })
}

/// A* between the cells of `start` and `goal`, shortcut by line of sight.
/// Tries the inflated map first and falls back to `d_min` alone.
pub fn global_path(
    grid: &OccupancyGrid,
    start: &Pose2,
    goal: &Pose2,
    d_min: f64,
    margin: f64,
) -> Result<GlobalPath> {
    let s = grid
        .world_to_cell(start.x(), start.y())
        .ok_or_else(|| Error::Blocked("start outside the map".into()))?;
    let g = grid
        .world_to_cell(goal.x(), goal.y())
        .ok_or_else(|| Error::Blocked("goal outside the map".into()))?;
    let mut last_err = None;
    for inflation in [d_min + margin, d_min] {
        match astar(grid, s, g, inflation) {
            Ok(cells) if !cells.is_empty() => {
                let mut raw: Vec<(f64, f64)> = vec![start.position()];
                raw.extend(
                    cells
                        .iter()
                        .skip(1)
                        .take(cells.len().saturating_sub(2))
                        .map(|&(c, r)| grid.cell_center(c, r)),
                );
                raw.push(goal.position());
                let mut pts = vec![raw[0]];
                let mut i = 0;
                while i + 1 < raw.len() {
                    let mut j = i + 1;
                    while j + 1 < raw.len() && line_of_sight(grid, raw[i], raw[j + 1], inflation) {
                        j += 1;
                    }
                    pts.push(raw[j]);
                    i = j;
                }
                return GlobalPath::new(pts);
            }
            Ok(_) => last_err = Some(Error::Blocked("goal unreachable".into())),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

/// Receding-horizon band planner solved by splitting or by soft penalties.
#[derive(Debug, Clone)]
pub struct BandPlanner {
    pub config: BandPlannerConfig,
    pub limits: KinodynamicLimits,
    pub solver: BandSolver,
    control_period: f64,
    path: Option<GlobalPath>,
    path_goal: Option<Pose2>,
    band: Option<TimedBand>,
    robot_s: f64,
    band_goal_s: f64,
    last: Option<CycleInfo>,
    last_trace: Option<OuterTrace>,
}

impl BandPlanner {
    pub fn new(
        config: BandPlannerConfig,
        limits: KinodynamicLimits,
        solver: BandSolver,
        control_period: f64,
    ) -> Result<Self> {
        config.validate()?;
        if !(control_period > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "control period must be positive, got {control_period}"
            )));
        }
        Ok(Self {
            config,
            limits,
            solver,
            control_period,
            path: None,
            path_goal: None,
            band: None,
            robot_s: 0.0,
            band_goal_s: 0.0,
            last: None,
            last_trace: None,
        })
    }

    pub fn band(&self) -> Option<&TimedBand> {
        self.band.as_ref()
    }

    pub fn path(&self) -> Option<&GlobalPath> {
        self.path.as_ref()
    }

    /// Outer-iteration trace of the most recent split solve.
    pub fn last_trace(&self) -> Option<&OuterTrace> {
        self.last_trace.as_ref()
    }

    fn spacing(&self) -> f64 {
        self.v_nominal() * self.config.dt_ref
    }

    fn v_nominal(&self) -> f64 {
        self.config.nominal_speed_fraction * self.limits.v_max
    }

    pub(crate) fn local_goal(&self, path: &GlobalPath, goal: &Pose2, s: f64) -> Pose2 {
        if s >= path.length() - 1e-9 {
            *goal
        } else {
            let (x, y, h) = path.at(s);
            Pose2::new(x, y, h)
        }
    }

    /// Fresh band from the robot along the path to arc length `s_goal`,
    /// preceded by an in-place turn when the robot faces away from the path.
    pub(crate) fn initial_band(
        &self,
        path: &GlobalPath,
        robot: &Pose2,
        s_goal: f64,
        goal: Pose2,
    ) -> Result<TimedBand> {
        let mut pts = vec![robot.position()];
        pts.extend(path.vertices_between(self.robot_s, s_goal));
        pts.push(goal.position());
        let degenerate = pts
            .iter()
            .all(|p| (p.0 - robot.x()).hypot(p.1 - robot.y()) < 1e-9);
        let mut band = if degenerate {
            // already at the goal position: rotate only
            TimedBand::new(*robot, vec![goal], vec![self.config.dt_ref])?
        } else {
            init_from_path(
                &pts,
                robot.beta(),
                goal.beta(),
                self.config.dt_ref,
                self.v_nominal(),
            )?
        };
        let first_heading = band.poses()[0].beta();
        let turn = normalize_angle(first_heading - robot.beta());
        if turn.abs() > PI / 4.0 && band.len() > 1 {
            let omega = 0.5 * self.limits.omega_max;
            let n = (turn.abs() / (omega * self.config.dt_ref)).ceil() as usize;
            let mut poses = Vec::with_capacity(n + band.len());
            let mut dts = Vec::with_capacity(n + band.len());
            for k in 1..=n {
                poses.push(Pose2::new(
                    robot.x(),
                    robot.y(),
                    robot.beta() + turn * k as f64 / n as f64,
                ));
                dts.push(turn.abs() / (n as f64 * omega));
            }
            // the first path pose now follows the last turn pose
            poses.extend_from_slice(band.poses());
            dts.extend_from_slice(band.dts());
            band = TimedBand::new(*robot, poses, dts)?;
        }
        Ok(band)
    }

    /// Drops the part of the band executed during the last control period and
    /// moves the start onto the robot.
    fn prune(&self, band: &TimedBand, robot: &Pose2) -> Option<TimedBand> {
        let mut elapsed = self.control_period;
        let mut k = 0;
        while k < band.len() && band.dts()[k] <= elapsed + 1e-9 {
            elapsed -= band.dts()[k];
            k += 1;
        }
        if k >= band.len() {
            return None;
        }
        let mut out = band.drop_front(k, *robot)?;
        let dt = (out.dts()[0] - elapsed).max(crate::band::DT_FLOOR);
        out.set_dt(0, dt);
        Some(out)
    }

    fn extend(&self, band: &mut TimedBand, path: &GlobalPath, from_s: f64, to_s: f64, goal: Pose2) {
        let spacing = self.spacing();
        let gap = to_s - from_s;
        if gap < 0.5 * spacing {
            band.set_goal(goal);
            return;
        }
        let n = (gap / spacing).ceil() as usize;
        let step = gap / n as f64;
        for k in 1..n {
            let (x, y, h) = path.at(from_s + step * k as f64);
            band.push(Pose2::new(x, y, h), step / self.v_nominal());
        }
        band.push(goal, step / self.v_nominal());
    }

    fn cycle(
        &mut self,
        state: &RobotState,
        goal: &Pose2,
        grid: &Arc<OccupancyGrid>,
    ) -> Result<Twist> {
        if self.path.is_none() || self.path_goal != Some(*goal) {
            self.path = Some(global_path(
                grid,
                &state.pose,
                goal,
                self.limits.d_min,
                self.config.path_margin,
            )?);
            self.path_goal = Some(*goal);
            self.band = None;
            self.robot_s = 0.0;
        }
        let path = self.path.clone().expect("path set above");
        let spacing = self.spacing();
        self.robot_s = path.project(
            state.pose.x(),
            state.pose.y(),
            self.robot_s,
            self.robot_s + 4.0 * spacing + 1.0,
        );
        let s_goal = (self.robot_s + self.config.lookahead).min(path.length());
        let local_goal = self.local_goal(&path, goal, s_goal);

        let warm = if self.config.warm_start {
            self.band.as_ref().and_then(|b| self.prune(b, &state.pose))
        } else {
            None
        };
        let band = match warm {
            Some(mut b) => {
                self.extend(&mut b, &path, self.band_goal_s, s_goal, local_goal);
                b
            }
            None => self.initial_band(&path, &state.pose, s_goal, local_goal)?,
        };
        self.band_goal_s = s_goal;
        let band = resize(
            &band,
            self.config.dt_ref,
            self.config.dt_hysteresis,
            self.config.max_poses,
        );

        let opts = self.config.graph_options(grid, local_goal, state.twist);
        let graph = build_band_graph(&band, &self.limits, &opts);
        let (solved, info) = match self.solver {
            BandSolver::Split => {
                let out = outer_solve(&band, &graph, &self.config.vs_config())?;
                if let OuterStatus::InnerFailure(msg) = &out.status {
                    return Err(Error::InvalidParameter(format!(
                        "inner solve failed: {msg}"
                    )));
                }
                let report = monotonicity_check(&out.trace, 1e-6);
                let info = CycleInfo {
                    poses: out.band.len(),
                    outer_iterations: out.trace.len(),
                    inner_iterations: out.trace.records.iter().map(|r| r.inner_iterations).sum(),
                    converged: out.status == OuterStatus::Converged,
                    monotone: report.passed,
                    max_violation: report.max_violation,
                    capped: report.flagged.len(),
                };
                self.last_trace = Some(out.trace);
                (out.band, info)
            }
            BandSolver::Soft => {
                let (b, stats) = soft_teb_solve(&band, &graph, &self.config.soft_config())?;
                let info = CycleInfo {
                    poses: b.len(),
                    outer_iterations: 1,
                    inner_iterations: stats.iterations,
                    converged: stats.termination != crate::nlls::Termination::MaxIterations,
                    monotone: true,
                    max_violation: 0.0,
                    capped: usize::from(
                        stats.termination == crate::nlls::Termination::MaxIterations,
                    ),
                };
                (b, info)
            }
        };
        let cmd = finite_diff_twist(&solved, 0)?.clipped(&self.limits);
        self.band = Some(solved);
        self.last = Some(info);
        Ok(cmd)
    }
}

impl LocalPlanner for BandPlanner {
    fn name(&self) -> &str {
        match self.solver {
            BandSolver::Split => "teb-vs",
            BandSolver::Soft => "teb",
        }
    }

    fn plan(
        &mut self,
        state: &RobotState,
        goal: &Pose2,
        grid: &Arc<OccupancyGrid>,
    ) -> Result<Twist> {
        self.cycle(state, goal, grid)
    }

    fn last_cycle(&self) -> Option<&CycleInfo> {
        self.last.as_ref()
    }
}

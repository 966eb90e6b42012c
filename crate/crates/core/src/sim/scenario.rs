//! Scenario configuration and the built-in corridor map.
//!
//! A scenario file is TOML. Unknown keys are rejected at every level.
//!
//! ```toml
//! grid = "corridor.pgm"           # relative to the scenario file
//! start = { x = 2.0, y = 5.0, beta = 3.141592653589793 }
//! goal = { x = 9.0, y = 5.0, beta = 0.0 }
//! control_period = 0.2
//! timeout = 120.0
//! goal_tolerance = { position = 0.1, heading = 0.2 }
//!
//! [limits]
//! v_max = 0.4
//! v_max_backward = 0.1            # optional, defaults to v_max
//! omega_max = 1.0
//! a_max = 0.5
//! alpha_max = 1.0
//! d_min = 0.3
//!
//! [planner]                       # optional, band planner settings
//! [dwa]                           # optional, DWA settings
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::grid::OccupancyGrid;
use super::planner::BandPlannerConfig;
use crate::band::{KinodynamicLimits, Pose2};
use crate::baselines::DwaConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub x: f64,
    pub y: f64,
    pub beta: f64,
}

impl From<PoseSpec> for Pose2 {
    fn from(p: PoseSpec) -> Self {
        Pose2::new(p.x, p.y, p.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalTolerance {
    pub position: f64,
    pub heading: f64,
}

impl GoalTolerance {
    pub fn reached(&self, pose: &Pose2, goal: &Pose2) -> bool {
        pose.distance_to(goal) <= self.position
            && crate::band::normalize_angle(pose.beta() - goal.beta()).abs() <= self.heading
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    grid: String,
    start: PoseSpec,
    goal: PoseSpec,
    control_period: f64,
    timeout: f64,
    goal_tolerance: GoalTolerance,
    limits: KinodynamicLimits,
    #[serde(default)]
    planner: BandPlannerConfig,
    #[serde(default)]
    dwa: DwaConfig,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: Arc<OccupancyGrid>,
    pub start: Pose2,
    pub goal: Pose2,
    pub limits: KinodynamicLimits,
    pub control_period: f64,
    pub timeout: f64,
    pub goal_tolerance: GoalTolerance,
    pub planner: BandPlannerConfig,
    pub dwa: DwaConfig,
}

impl Scenario {
    /// Checks timing, tolerances and that start and goal have clearance.
    pub fn validate(&self) -> Result<()> {
        if !(self.control_period > 0.0) || !(self.timeout >= 0.0) {
            return Err(Error::Config(
                "control_period must be positive and timeout nonnegative".into(),
            ));
        }
        if !(self.goal_tolerance.position > 0.0 && self.goal_tolerance.heading > 0.0) {
            return Err(Error::Config("goal tolerances must be positive".into()));
        }
        for (name, p) in [("start", self.start), ("goal", self.goal)] {
            if !p.is_finite() || self.grid.is_blocked(p.x(), p.y()) {
                return Err(Error::Config(format!("{name} pose is outside free space")));
            }
            let clearance = self.grid.distance(p.x(), p.y());
            if clearance < self.limits.d_min {
                return Err(Error::Config(format!(
                    "{name} clearance {clearance:.3} m is below d_min {}",
                    self.limits.d_min
                )));
            }
        }
        self.planner
            .validate()
            .map_err(|e| Error::Config(format!("planner: {e}")))?;
        self.dwa
            .validate()
            .map_err(|e| Error::Config(format!("dwa: {e}")))?;
        Ok(())
    }

    /// Parses scenario TOML; relative grid paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let limits = file
            .limits
            .validated()
            .map_err(|e| Error::Config(e.to_string()))?;
        let grid_path = base_dir.join(&file.grid);
        let grid = OccupancyGrid::load(&grid_path)
            .map_err(|e| Error::Config(format!("grid {}: {e}", grid_path.display())))?;
        let s = Self {
            grid: Arc::new(grid),
            start: file.start.into(),
            goal: file.goal.into(),
            limits,
            control_period: file.control_period,
            timeout: file.timeout,
            goal_tolerance: file.goal_tolerance,
            planner: file.planner,
            dwa: DwaConfig {
                control_period: file.control_period,
                ..file.dwa
            },
        };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// `corridor` selects the built-in scenario; anything else is a file path.
    pub fn resolve(arg: &str) -> Result<Self> {
        if arg == "corridor" {
            Ok(Self::corridor())
        } else {
            Self::load(Path::new(arg))
        }
    }

    /// Two offset walls forming an S-shaped passage in a 12 m x 10 m room.
    pub fn corridor() -> Self {
        let limits = KinodynamicLimits::new(0.4, 1.0, 0.5, 1.0, 0.3)
            .and_then(|l| l.with_backward(0.1))
            .expect("corridor limits are valid");
        Self {
            grid: Arc::new(corridor_grid()),
            start: Pose2::new(2.0, 5.0, std::f64::consts::PI),
            goal: Pose2::new(9.0, 5.0, 0.0),
            limits,
            control_period: 0.2,
            timeout: 120.0,
            goal_tolerance: GoalTolerance {
                position: 0.1,
                heading: 0.2,
            },
            planner: BandPlannerConfig::default(),
            dwa: DwaConfig::default(),
        }
    }
}

/// 240 x 200 cells at 0.05 m with a one-cell perimeter wall. Wall A spans
/// x in [4.9, 5.1], y in [0, 4.9]; wall B spans x in [6.9, 7.1], y in [5.1, 10].
pub fn corridor_grid() -> OccupancyGrid {
    let (w, h, res) = (240usize, 200usize, 0.05);
    let mut cells = vec![false; w * h];
    let inside = |v: f64, lo: f64, hi: f64| v >= lo && v <= hi;
    for row in 0..h {
        for col in 0..w {
            let (x, y) = ((col as f64 + 0.5) * res, (row as f64 + 0.5) * res);
            let border = col == 0 || row == 0 || col == w - 1 || row == h - 1;
            let wall_a = inside(x, 4.9, 5.1) && inside(y, 0.0, 4.9);
            let wall_b = inside(x, 6.9, 7.1) && inside(y, 5.1, 10.0);
            cells[row * w + col] = border || wall_a || wall_b;
        }
    }
    OccupancyGrid::new(w, h, res, (0.0, 0.0), cells).expect("corridor grid is valid")
}

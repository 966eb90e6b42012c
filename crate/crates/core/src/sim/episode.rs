//! Closed-loop episodes: plan, clip, integrate, record.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::planner::{BandPlanner, BandSolver, CycleInfo, LocalPlanner};
use super::robot::{integrate, RobotState};
use super::scenario::Scenario;
use crate::band::{Pose2, Twist};
use crate::baselines::DwaPlanner;
use crate::error::{Error, Result};

/// Sub-steps per control period used for the collision sweep.
const SWEEP_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlannerKind {
    #[serde(rename = "dwa")]
    Dwa,
    #[serde(rename = "teb")]
    Teb,
    #[serde(rename = "teb-vs")]
    TebVs,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 3] = [PlannerKind::Dwa, PlannerKind::Teb, PlannerKind::TebVs];

    pub fn as_str(&self) -> &'static str {
        match self {
            PlannerKind::Dwa => "dwa",
            PlannerKind::Teb => "teb",
            PlannerKind::TebVs => "teb-vs",
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dwa" => Ok(PlannerKind::Dwa),
            "teb" => Ok(PlannerKind::Teb),
            "teb-vs" | "teb_vs" => Ok(PlannerKind::TebVs),
            _ => Err(Error::Config(format!(
                "unknown planner `{s}` (expected dwa, teb or teb-vs)"
            ))),
        }
    }
}

pub fn make_planner(kind: PlannerKind, scenario: &Scenario) -> Result<Box<dyn LocalPlanner>> {
    Ok(match kind {
        PlannerKind::Dwa => Box::new(DwaPlanner::new(
            scenario.dwa.clone(),
            scenario.limits,
            scenario.goal_tolerance.position,
        )),
        PlannerKind::Teb | PlannerKind::TebVs => {
            let solver = if kind == PlannerKind::Teb {
                BandSolver::Soft
            } else {
                BandSolver::Split
            };
            Box::new(BandPlanner::new(
                scenario.planner.clone(),
                scenario.limits,
                solver,
                scenario.control_period,
            )?)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub pose: Pose2,
    pub cmd: Twist,
    pub real: Twist,
    pub plan_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Success,
    Timeout,
    Collision,
    PlannerFailure,
}

/// One record per control tick. The last record is the terminal state with a
/// zero twist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub planner: PlannerKind,
    pub records: Vec<TraceRecord>,
    pub status: EpisodeStatus,
    pub cycles: Vec<CycleInfo>,
    pub failure: Option<String>,
}

impl RunTrace {
    pub fn success(&self) -> bool {
        self.status == EpisodeStatus::Success
    }

    pub fn final_pose(&self) -> Pose2 {
        self.records.last().map(|r| r.pose).unwrap_or_default()
    }

    /// Mean planner wall time per call in milliseconds.
    pub fn mean_plan_ms(&self) -> f64 {
        let calls: Vec<f64> = self.records[..self.records.len().saturating_sub(1)]
            .iter()
            .map(|r| r.plan_ms)
            .collect();
        if calls.is_empty() {
            0.0
        } else {
            calls.iter().sum::<f64>() / calls.len() as f64
        }
    }

    /// CSV with 9 significant digits. Without `timing` the plan_ms column is 0.
    pub fn write_csv<W: Write>(&self, mut w: W, timing: bool) -> Result<()> {
        writeln!(w, "t,x,y,beta,v_cmd,omega_cmd,v_real,omega_real,plan_ms")?;
        for r in &self.records {
            let fields = [
                r.t,
                r.pose.x(),
                r.pose.y(),
                r.pose.beta(),
                r.cmd.v,
                r.cmd.omega,
                r.real.v,
                r.real.omega,
                if timing { r.plan_ms } else { 0.0 },
            ];
            let line: Vec<String> = fields.iter().map(|&x| sig(x, 9)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// `x` rounded to `digits` significant digits, printed in shortest form.
pub(crate) fn sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .expect("formatted float parses");
    if rounded == 0.0 {
        "0".into()
    } else {
        format!("{rounded}")
    }
}

/// Whether the constant-twist arc from `state` over `dt` enters an occupied cell.
fn sweep_collides(state: &RobotState, cmd: Twist, dt: f64, scenario: &Scenario) -> bool {
    (1..=SWEEP_STEPS).any(|k| {
        let p = integrate(state, cmd, dt * k as f64 / SWEEP_STEPS as f64).pose;
        scenario.grid.is_blocked(p.x(), p.y())
    })
}

pub fn run_episode(scenario: &Scenario, kind: PlannerKind) -> RunTrace {
    let mut trace = RunTrace {
        planner: kind,
        records: Vec::new(),
        status: EpisodeStatus::Timeout,
        cycles: Vec::new(),
        failure: None,
    };
    let mut planner = match make_planner(kind, scenario) {
        Ok(p) => p,
        Err(e) => {
            trace.status = EpisodeStatus::PlannerFailure;
            trace.failure = Some(e.to_string());
            trace
                .records
                .push(terminal(&RobotState::at_rest(scenario.start)));
            return trace;
        }
    };
    let dt = scenario.control_period;
    let mut state = RobotState::at_rest(scenario.start);
    loop {
        if scenario.goal_tolerance.reached(&state.pose, &scenario.goal) {
            trace.status = EpisodeStatus::Success;
            break;
        }
        // stop once the next tick would start past the timeout
        if state.time >= scenario.timeout - 1e-9 {
            trace.status = EpisodeStatus::Timeout;
            break;
        }
        let clock = Instant::now();
        let planned = planner.plan(&state, &scenario.goal, &scenario.grid);
        let plan_ms = clock.elapsed().as_secs_f64() * 1e3;
        let cmd = match planned {
            Ok(cmd) => cmd.clipped(&scenario.limits),
            Err(e) => {
                trace.status = EpisodeStatus::PlannerFailure;
                trace.failure = Some(e.to_string());
                break;
            }
        };
        if let Some(info) = planner.last_cycle() {
            trace.cycles.push(info.clone());
        }
        trace.records.push(TraceRecord {
            t: state.time,
            pose: state.pose,
            cmd,
            real: cmd,
            plan_ms,
        });
        let collided = sweep_collides(&state, cmd, dt, scenario);
        state = integrate(&state, cmd, dt);
        if collided {
            trace.status = EpisodeStatus::Collision;
            trace.failure = Some(format!(
                "collision near ({:.3}, {:.3})",
                state.pose.x(),
                state.pose.y()
            ));
            break;
        }
    }
    trace.records.push(terminal(&state));
    trace
}

fn terminal(state: &RobotState) -> TraceRecord {
    TraceRecord {
        t: state.time,
        pose: state.pose,
        cmd: Twist::default(),
        real: Twist::default(),
        plan_ms: 0.0,
    }
}

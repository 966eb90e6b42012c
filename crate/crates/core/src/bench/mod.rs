//! Benchmark harness: phase segmentation, velocity-variation statistics,
//! planner timing and the one-shot band plan.

pub mod checks;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::band::{resize, Pose2, TimedBand, Twist};
use crate::error::{Error, Result};
use crate::factors::{build_band_graph, FactorGraph};
use crate::sim::episode::{run_episode, sig, EpisodeStatus, PlannerKind, RunTrace, TraceRecord};
use crate::sim::planner::{global_path, BandPlanner, BandSolver};
use crate::sim::scenario::Scenario;
use crate::vsloop::{
    kkt_residuals, monotonicity_check, outer_solve, KktResiduals, MonotonicityReport, OuterResult,
    VsConfig,
};

/// Tolerance on Lagrangian increases between outer iterations.
pub const MONOTONICITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseLabel {
    Rotation,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Linear,
    Angular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseThresholds {
    pub v: f64,
    pub omega: f64,
}

impl Default for PhaseThresholds {
    fn default() -> Self {
        Self {
            v: 0.05,
            omega: 0.1,
        }
    }
}

/// A tick is Rotation when it barely translates while turning.
pub fn segment_phases(records: &[TraceRecord], thresholds: &PhaseThresholds) -> Vec<PhaseLabel> {
    records
        .iter()
        .map(|r| {
            if r.real.v.abs() < thresholds.v && r.real.omega.abs() > thresholds.omega {
                PhaseLabel::Rotation
            } else {
                PhaseLabel::Linear
            }
        })
        .collect()
}

fn channel_value(t: &Twist, channel: Channel) -> f64 {
    match channel {
        Channel::Linear => t.v,
        Channel::Angular => t.omega,
    }
}

/// `|u_t - u_{t-1}|` over consecutive ticks that both carry `phase`.
pub fn variations(
    records: &[TraceRecord],
    phases: &[PhaseLabel],
    channel: Channel,
    phase: PhaseLabel,
) -> Vec<f64> {
    assert_eq!(records.len(), phases.len(), "one phase label per record");
    records
        .windows(2)
        .zip(phases.windows(2))
        .filter(|(_, p)| p[0] == phase && p[1] == phase)
        .map(|(r, _)| {
            (channel_value(&r[1].real, channel) - channel_value(&r[0].real, channel)).abs()
        })
        .collect()
}

/// Population statistics of a set of variations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationStats {
    pub count: usize,
    pub mean: f64,
    pub stddev: f64,
    pub variance: f64,
}

impl VariationStats {
    /// `None` when there is nothing to summarize.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let variance = samples.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
        let stddev = variance.sqrt();
        Some(Self {
            count: samples.len(),
            mean,
            stddev,
            variance: stddev * stddev,
        })
    }
}

pub fn variation_stats(
    records: &[TraceRecord],
    phases: &[PhaseLabel],
    channel: Channel,
    phase: PhaseLabel,
) -> Option<VariationStats> {
    VariationStats::from_samples(&variations(records, phases, channel, phase))
}

/// The four reported (channel, phase) rows, in report order.
pub const STAT_ROWS: [(Channel, PhaseLabel); 4] = [
    (Channel::Angular, PhaseLabel::Rotation),
    (Channel::Linear, PhaseLabel::Rotation),
    (Channel::Angular, PhaseLabel::Linear),
    (Channel::Linear, PhaseLabel::Linear),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub planner: PlannerKind,
    pub channel: Channel,
    pub phase: PhaseLabel,
    pub stats: Option<VariationStats>,
}

/// Lagrangian monotonicity over every split cycle of the TEB-VS runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicitySummary {
    pub cycles: usize,
    pub monotone_cycles: usize,
    pub max_violation: f64,
    pub capped_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerSummary {
    pub planner: PlannerKind,
    pub runs: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub failures: usize,
    /// Mean wall time per planning call over successful runs, seconds.
    pub mean_plan_s: f64,
    pub monotonicity: Option<MonotonicitySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub planners: Vec<PlannerSummary>,
    pub rows: Vec<StatRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Jsonlines,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonlines" => Ok(ReportFormat::Jsonlines),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::Config(format!(
                "unknown format `{s}` (expected csv or jsonlines)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub repetitions: usize,
    /// Worker threads; episodes are independent.
    pub jobs: usize,
    pub thresholds: PhaseThresholds,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repetitions: 1,
            jobs: 1,
            thresholds: PhaseThresholds::default(),
        }
    }
}

/// Runs every (planner, repetition) episode, `jobs` at a time.
pub fn run_episodes(
    scenario: &Scenario,
    planners: &[PlannerKind],
    options: &BenchOptions,
) -> Result<Vec<RunTrace>> {
    if options.repetitions == 0 || options.jobs == 0 {
        return Err(Error::InvalidParameter(
            "repetitions and jobs must be at least 1".into(),
        ));
    }
    let jobs: Vec<PlannerKind> = planners
        .iter()
        .flat_map(|&p| std::iter::repeat_n(p, options.repetitions))
        .collect();
    let mut out: Vec<Option<RunTrace>> = vec![None; jobs.len()];
    for (chunk_jobs, chunk_out) in jobs.chunks(options.jobs).zip(out.chunks_mut(options.jobs)) {
        std::thread::scope(|s| {
            for (kind, slot) in chunk_jobs.iter().zip(chunk_out.iter_mut()) {
                s.spawn(move || *slot = Some(run_episode(scenario, *kind)));
            }
        });
    }
    Ok(out.into_iter().map(|t| t.expect("every job ran")).collect())
}

pub fn run_benchmark(
    scenario: &Scenario,
    planners: &[PlannerKind],
    options: &BenchOptions,
) -> Result<BenchReport> {
    let traces = run_episodes(scenario, planners, options)?;
    Ok(summarize(&traces, planners, &options.thresholds))
}

/// Pools per-tick variations of the successful runs of each planner.
pub fn summarize(
    traces: &[RunTrace],
    planners: &[PlannerKind],
    thresholds: &PhaseThresholds,
) -> BenchReport {
    let mut report = BenchReport {
        planners: Vec::new(),
        rows: Vec::new(),
    };
    for &planner in planners {
        let runs: Vec<&RunTrace> = traces.iter().filter(|t| t.planner == planner).collect();
        let ok: Vec<&RunTrace> = runs.iter().copied().filter(|t| t.success()).collect();
        let count = |s: EpisodeStatus| runs.iter().filter(|t| t.status == s).count();
        let calls: Vec<f64> = ok
            .iter()
            .flat_map(|t| t.records[..t.records.len() - 1].iter().map(|r| r.plan_ms))
            .collect();
        let mean_plan_s = if calls.is_empty() {
            0.0
        } else {
            calls.iter().sum::<f64>() / calls.len() as f64 * 1e-3
        };
        let monotonicity = (planner == PlannerKind::TebVs).then(|| {
            let cycles: Vec<_> = runs.iter().flat_map(|t| t.cycles.iter()).collect();
            MonotonicitySummary {
                cycles: cycles.len(),
                monotone_cycles: cycles.iter().filter(|c| c.monotone).count(),
                max_violation: cycles.iter().map(|c| c.max_violation).fold(0.0, f64::max),
                capped_iterations: cycles.iter().map(|c| c.capped).sum(),
            }
        });
        report.planners.push(PlannerSummary {
            planner,
            runs: runs.len(),
            successes: ok.len(),
            collisions: count(EpisodeStatus::Collision),
            timeouts: count(EpisodeStatus::Timeout),
            failures: count(EpisodeStatus::PlannerFailure),
            mean_plan_s,
            monotonicity,
        });
        for (channel, phase) in STAT_ROWS {
            let mut pooled = Vec::new();
            for t in &ok {
                let phases = segment_phases(&t.records, thresholds);
                pooled.extend(variations(&t.records, &phases, channel, phase));
            }
            report.rows.push(StatRow {
                planner,
                channel,
                phase,
                stats: VariationStats::from_samples(&pooled),
            });
        }
    }
    report
}

impl BenchReport {
    pub fn row(
        &self,
        planner: PlannerKind,
        channel: Channel,
        phase: PhaseLabel,
    ) -> Option<&StatRow> {
        self.rows
            .iter()
            .find(|r| r.planner == planner && r.channel == channel && r.phase == phase)
    }

    pub fn summary(&self, planner: PlannerKind) -> Option<&PlannerSummary> {
        self.planners.iter().find(|p| p.planner == planner)
    }

    /// Whether every run of every planner reached the goal.
    pub fn all_succeeded(&self) -> bool {
        self.planners.iter().all(|p| p.successes == p.runs)
    }

    /// Statistics at 6 significant digits, timings at 3. Without `timing`
    /// the timing fields are 0.
    pub fn write<W: Write>(&self, mut w: W, format: ReportFormat, timing: bool) -> Result<()> {
        match format {
            ReportFormat::Jsonlines => self.write_jsonl(&mut w, timing),
            ReportFormat::Csv => self.write_csv(&mut w, timing),
        }
    }

    fn write_jsonl<W: Write>(&self, w: &mut W, timing: bool) -> Result<()> {
        let num = |x: f64, d: usize| -> serde_json::Value {
            let s = sig(x, d);
            serde_json::from_str(&s).unwrap_or(serde_json::Value::Null)
        };
        for p in &self.planners {
            let mono = p.monotonicity.as_ref().map(|m| {
                serde_json::json!({
                    "cycles": m.cycles,
                    "monotone_cycles": m.monotone_cycles,
                    "max_violation": num(m.max_violation, 6),
                    "capped_iterations": m.capped_iterations,
                })
            });
            let line = serde_json::json!({
                "record": "planner",
                "planner": p.planner,
                "runs": p.runs,
                "successes": p.successes,
                "collisions": p.collisions,
                "timeouts": p.timeouts,
                "failures": p.failures,
                "mean_plan_s": num(if timing { p.mean_plan_s } else { 0.0 }, 3),
                "monotonicity": mono,
            });
            writeln!(w, "{line}")?;
        }
        for r in &self.rows {
            let stats = r.stats.map(|s| {
                serde_json::json!({
                    "count": s.count,
                    "mean": num(s.mean, 6),
                    "stddev": num(s.stddev, 6),
                    "variance": num(s.variance, 6),
                })
            });
            let line = serde_json::json!({
                "record": "stats",
                "planner": r.planner,
                "channel": r.channel,
                "phase": r.phase,
                "stats": stats,
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    fn write_csv<W: Write>(&self, w: &mut W, timing: bool) -> Result<()> {
        writeln!(
            w,
            "planner,channel,phase,count,mean,stddev,variance,runs,successes,mean_plan_s,monotone_cycles,cycles,max_violation"
        )?;
        for r in &self.rows {
            let p = self.summary(r.planner).expect("summary per planner");
            let (count, mean, sd, var) = match r.stats {
                Some(s) => (
                    s.count.to_string(),
                    sig(s.mean, 6),
                    sig(s.stddev, 6),
                    sig(s.variance, 6),
                ),
                None => ("0".into(), String::new(), String::new(), String::new()),
            };
            let (mono, cycles, viol) = match &p.monotonicity {
                Some(m) => (
                    m.monotone_cycles.to_string(),
                    m.cycles.to_string(),
                    sig(m.max_violation, 6),
                ),
                None => (String::new(), String::new(), String::new()),
            };
            let channel = match r.channel {
                Channel::Linear => "linear",
                Channel::Angular => "angular",
            };
            let phase = match r.phase {
                PhaseLabel::Linear => "linear",
                PhaseLabel::Rotation => "rotation",
            };
            writeln!(
                w,
                "{},{channel},{phase},{count},{mean},{sd},{var},{},{},{},{mono},{cycles},{viol}",
                r.planner,
                p.runs,
                p.successes,
                sig(if timing { p.mean_plan_s } else { 0.0 }, 3),
            )?;
        }
        Ok(())
    }
}

/// The first planning cycle solved cold: one band from the start at rest to
/// the local goal one lookahead along the global path.
#[derive(Debug, Clone)]
pub struct OneShotPlan {
    pub initial: TimedBand,
    pub graph: FactorGraph,
    pub result: OuterResult,
    pub kkt: KktResiduals,
    pub monotonicity: MonotonicityReport,
}

pub fn plan_once(scenario: &Scenario, config: &VsConfig) -> Result<OneShotPlan> {
    let limits = scenario.limits;
    let pc = scenario.planner.clone();
    let planner = BandPlanner::new(
        pc.clone(),
        limits,
        BandSolver::Split,
        scenario.control_period,
    )?;
    let path = global_path(
        &scenario.grid,
        &scenario.start,
        &scenario.goal,
        limits.d_min,
        pc.path_margin,
    )?;
    let s_goal = pc.lookahead.min(path.length());
    let local_goal = planner.local_goal(&path, &scenario.goal, s_goal);
    let band = planner.initial_band(&path, &scenario.start, s_goal, local_goal)?;
    let initial = resize(&band, pc.dt_ref, pc.dt_hysteresis, pc.max_poses);
    let opts = pc.graph_options(&scenario.grid, local_goal, Twist::default());
    let graph = build_band_graph(&initial, &limits, &opts);
    let result = outer_solve(&initial, &graph, config)?;
    let kkt = kkt_residuals(&result.band, &graph, &result.state)?;
    let monotonicity = monotonicity_check(&result.trace, MONOTONICITY_TOLERANCE);
    Ok(OneShotPlan {
        initial,
        graph,
        result,
        kkt,
        monotonicity,
    })
}

/// Default outer settings for the one-shot plan of a scenario.
pub fn one_shot_config(scenario: &Scenario) -> VsConfig {
    scenario.planner.vs_config()
}

impl OneShotPlan {
    /// Band poses as JSON lines `{"k","x","y","beta","dt"}`; node 0 is the start.
    pub fn write_band<W: Write>(&self, mut w: W) -> Result<()> {
        let b = &self.result.band;
        let node = |k: usize, p: &Pose2, dt: Option<f64>| {
            serde_json::json!({
                "k": k,
                "x": sig(p.x(), 9).parse::<f64>().unwrap_or(0.0),
                "y": sig(p.y(), 9).parse::<f64>().unwrap_or(0.0),
                "beta": sig(p.beta(), 9).parse::<f64>().unwrap_or(0.0),
                "dt": dt.map(|d| sig(d, 9).parse::<f64>().unwrap_or(0.0)),
            })
        };
        writeln!(w, "{}", node(0, b.start(), None))?;
        for (k, (p, dt)) in b.poses().iter().zip(b.dts()).enumerate() {
            writeln!(w, "{}", node(k + 1, p, Some(*dt)))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(v: f64, omega: f64) -> TraceRecord {
        TraceRecord {
            t: 0.0,
            pose: Pose2::default(),
            cmd: Twist::new(v, omega),
            real: Twist::new(v, omega),
            plan_ms: 0.0,
        }
    }

    #[test]
    fn segmentation_rule() {
        let th = PhaseThresholds::default();
        let spin: Vec<_> = (0..5).map(|_| rec(0.0, 0.5)).collect();
        assert!(segment_phases(&spin, &th)
            .iter()
            .all(|p| *p == PhaseLabel::Rotation));
        let cruise: Vec<_> = (0..5).map(|_| rec(0.3, 0.0)).collect();
        assert!(segment_phases(&cruise, &th)
            .iter()
            .all(|p| *p == PhaseLabel::Linear));
        // boundaries: strict inequalities on both thresholds
        assert_eq!(
            segment_phases(&[rec(0.05, 0.5), rec(0.0, 0.1)], &th),
            vec![PhaseLabel::Linear; 2]
        );
    }

    #[test]
    fn hand_computed_stats() {
        let th = PhaseThresholds::default();
        let r = vec![rec(0.0, 0.0), rec(0.1, 0.0), rec(0.3, 0.0)];
        let s = variation_stats(
            &r,
            &segment_phases(&r, &th),
            Channel::Linear,
            PhaseLabel::Linear,
        )
        .unwrap();
        assert_eq!(s.count, 2);
        assert!((s.mean - 0.15).abs() < 1e-15);
        assert!((s.variance - 0.0025).abs() < 1e-15);
        assert!((s.stddev - 0.05).abs() < 1e-15);
        let flat = vec![rec(0.2, 0.0); 4];
        let s = variation_stats(
            &flat,
            &segment_phases(&flat, &th),
            Channel::Linear,
            PhaseLabel::Linear,
        )
        .unwrap();
        assert_eq!((s.mean, s.stddev, s.variance), (0.0, 0.0, 0.0));
        let single = vec![rec(0.2, 0.0)];
        assert!(variation_stats(
            &single,
            &segment_phases(&single, &th),
            Channel::Linear,
            PhaseLabel::Linear
        )
        .is_none());
    }

    #[test]
    fn differences_never_cross_phases() {
        let th = PhaseThresholds::default();
        let mut r: Vec<_> = (0..6).map(|_| rec(0.0, 0.5)).collect();
        r.extend((0..4).map(|_| rec(0.3, 0.0)));
        let phases = segment_phases(&r, &th);
        assert_eq!(
            variations(&r, &phases, Channel::Angular, PhaseLabel::Rotation),
            vec![0.0; 5]
        );
        assert_eq!(
            variations(&r, &phases, Channel::Angular, PhaseLabel::Linear),
            vec![0.0; 3]
        );
    }

    #[test]
    fn synthetic_ten_and_ten() {
        let th = PhaseThresholds::default();
        let mut r: Vec<_> = (0..10).map(|k| rec(0.0, 0.2 + 0.01 * k as f64)).collect();
        r.extend((0..10).map(|k| rec(0.2 + 0.02 * k as f64, 0.05)));
        let phases = segment_phases(&r, &th);
        assert_eq!(
            phases
                .iter()
                .filter(|p| **p == PhaseLabel::Rotation)
                .count(),
            10
        );
        let rot = variation_stats(&r, &phases, Channel::Angular, PhaseLabel::Rotation).unwrap();
        assert_eq!(rot.count, 9);
        assert!((rot.mean - 0.01).abs() < 1e-12 && rot.variance < 1e-24);
        let lin = variation_stats(&r, &phases, Channel::Linear, PhaseLabel::Linear).unwrap();
        assert!((lin.mean - 0.02).abs() < 1e-12);
    }

    #[test]
    fn variance_is_stddev_squared() {
        let samples: Vec<f64> = (0..37).map(|k| ((k * 7919) % 101) as f64 * 1e-3).collect();
        let s = VariationStats::from_samples(&samples).unwrap();
        assert!((s.variance - s.stddev * s.stddev).abs() <= 1e-12 * s.variance);
    }

    #[test]
    fn pooling_is_order_independent() {
        let a: Vec<f64> = (0..20).map(|k| (k as f64 * 0.37).sin().abs()).collect();
        let b: Vec<f64> = (0..13).map(|k| (k as f64 * 0.91).cos().abs()).collect();
        let ab = VariationStats::from_samples(&[a.clone(), b.clone()].concat()).unwrap();
        let ba = VariationStats::from_samples(&[b, a].concat()).unwrap();
        assert!((ab.mean - ba.mean).abs() < 1e-15 && (ab.variance - ba.variance).abs() < 1e-15);
    }

    #[test]
    fn report_has_four_rows_per_planner() {
        let mut s = Scenario::corridor();
        s.start = Pose2::new(8.2, 5.0, 0.0);
        let planners = [PlannerKind::Dwa, PlannerKind::TebVs];
        let report = run_benchmark(&s, &planners, &BenchOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 8);
        assert!(report
            .summary(PlannerKind::TebVs)
            .unwrap()
            .monotonicity
            .is_some());
        assert!(report
            .summary(PlannerKind::Dwa)
            .unwrap()
            .monotonicity
            .is_none());
        let mut a = Vec::new();
        report.write(&mut a, ReportFormat::Csv, false).unwrap();
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 9);
    }
}

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::collections::BinaryHeap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tebvs::band::{Pose2, TimedBand, Twist};
use tebvs::bench::checks::{full_factor_set, kink_distance, random_band};
use tebvs::bench::{one_shot_config, plan_once, run_benchmark, BenchOptions, Channel, PhaseLabel};
use tebvs::factors::{affine_factor, FactorGraph, FactorKind};
use tebvs::sim::astar::{astar, dijkstra, step_counts};
use tebvs::sim::episode::PlannerKind;
use tebvs::sim::grid::OccupancyGrid;
use tebvs::sim::robot::{integrate, RobotState};
use tebvs::sim::scenario::Scenario;
use tebvs::vsloop::{
    dual_update_eta, outer_solve, slack_update, OuterStatus, SlackState, VsConfig,
};

/// Reference linear-phase angular variation means, soft TEB and TEB-VS.
const REFERENCE_TEB_ANGULAR_LINEAR: f64 = 0.02620;
const REFERENCE_TEBVS_ANGULAR_LINEAR: f64 = 0.01788;
/// Reference TEB-VS running time per call, seconds.
const REFERENCE_TEBVS_RUNTIME_S: f64 = 0.00171429;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(
        elapsed < limit,
        format!("{what} took {elapsed:?} (limit {limit:?})"),
    )
}

fn c1_slack_prox() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p: f64 = rng.gen_range(-3.0..3.0);
        let eta: f64 = rng.gen_range(-3.0..3.0);
        let rho: f64 = rng.gen_range(0.1..50.0);
        let v = slack_update(&[p], &[eta], rho).map_err(|e| e.to_string())?[0];
        // grid search on v in [0, V] with V past the unconstrained minimizer
        let upper = (-p - eta / rho).max(0.0) + 1.0;
        let h = |v: f64| eta * (p + v) + 0.5 * rho * (p + v).powi(2);
        let steps = (upper / 1e-4).ceil() as usize;
        let best = (0..=steps)
            .map(|k| k as f64 * 1e-4)
            .min_by(|a, b| h(*a).total_cmp(&h(*b)))
            .unwrap();
        worst = worst.max((v - best).abs());
    }
    ensure(worst <= 1e-3, format!("worst {worst:e}"))?;
    within(clock.elapsed(), Duration::from_secs(5), "1000 triples")?;
    Ok(format!(
        "worst {worst:.2e} over 1000 triples in {:?}",
        clock.elapsed()
    ))
}

fn c2_dual_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p: f64 = rng.gen_range(-3.0..3.0);
        let eta: f64 = rng.gen_range(0.0..3.0);
        let rho: f64 = rng.gen_range(0.1..50.0);
        let v = slack_update(&[p], &[eta], rho).map_err(|e| e.to_string())?;
        let mut s = SlackState {
            v,
            eta: vec![eta],
            zeta: Vec::new(),
            rho,
            mu: rho,
            n: 0,
        };
        dual_update_eta(&mut s, &[p]).map_err(|e| e.to_string())?;
        worst = worst.max((s.eta[0] - (eta + rho * p).max(0.0)).abs());
    }
    ensure(worst <= 1e-12, format!("worst {worst:e}"))?;
    Ok(format!("worst {worst:.2e} over 1000 triples"))
}

fn one_pose_band(x: f64) -> TimedBand {
    TimedBand::new(
        Pose2::new(0.0, 0.0, 0.0),
        vec![Pose2::new(x, 0.0, 0.0)],
        vec![1.0],
    )
    .unwrap()
}

fn c3_analytic_kkt() -> Outcome {
    let config = VsConfig {
        primal_tolerance: 1e-6,
        dual_tolerance: 1e-6,
        ..VsConfig::default()
    };
    // min (x - 2)^2 s.t. x - 1 <= 0: x* = 1, 2 (x* - 2) + eta = 0 gives eta = 2
    let ineq = FactorGraph::from_factors(vec![
        affine_factor(FactorKind::Objective, vec![(0, 1.0)], -2.0, 1.0),
        affine_factor(FactorKind::Inequality, vec![(0, 1.0)], -1.0, 1.0),
    ]);
    // min x^2 s.t. x - 1 = 0: 2 x* + zeta = 0 gives zeta = -2
    let eq = FactorGraph::from_factors(vec![
        affine_factor(FactorKind::Objective, vec![(0, 1.0)], 0.0, 1.0),
        affine_factor(FactorKind::Equality, vec![(0, 1.0)], -1.0, 1.0),
    ]);
    let mut detail = Vec::new();
    for (name, graph, x0, multiplier) in [("ineq", &ineq, 3.0, 2.0), ("eq", &eq, 0.0, -2.0)] {
        let clock = Instant::now();
        let out = outer_solve(&one_pose_band(x0), graph, &config).map_err(|e| e.to_string())?;
        let elapsed = clock.elapsed();
        let x = out.band.poses()[0].x();
        let m = if name == "ineq" {
            out.state.eta[0]
        } else {
            out.state.zeta[0]
        };
        ensure(
            out.status == OuterStatus::Converged,
            format!("{name}: {:?}", out.status),
        )?;
        ensure((x - 1.0).abs() <= 1e-4, format!("{name}: x {x}"))?;
        ensure(
            (m - multiplier).abs() <= 1e-3,
            format!("{name}: multiplier {m}"),
        )?;
        within(elapsed, Duration::from_secs(1), name)?;
        detail.push(format!("{name} x {x:.7} mult {m:.5} in {elapsed:?}"));
    }
    Ok(detail.join("; "))
}

fn c4_jacobians() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let grid = {
        let (w, h) = (50, 50);
        let cells = (0..w * h)
            .map(|i| {
                let (c, r) = (i % w, i / w);
                c == 0
                    || r == 0
                    || c == w - 1
                    || r == h - 1
                    || ((20..24).contains(&c) && (10..30).contains(&r))
            })
            .collect();
        std::sync::Arc::new(OccupancyGrid::new(w, h, 0.1, (0.0, 0.0), cells).unwrap())
    };
    let fd_step = 1e-6;
    let (mut checked, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    for _ in 0..200 {
        let band = random_band(&mut rng, 10);
        let x = band.to_coordinates();
        for f in full_factor_set(&mut rng, 10, &grid) {
            if kink_distance(&f, &band) < 1e-4 {
                skipped += 1;
                continue;
            }
            let jac = f.jacobian(&band).map_err(|e| e.to_string())?;
            for &c in &jac.cols {
                let eval = |delta: f64| {
                    let mut y = x.clone();
                    y[c] += delta;
                    f.eval(&TimedBand::from_coordinates(*band.start(), &y).unwrap())
                        .unwrap()
                };
                let (plus, minus) = (eval(fd_step), eval(-fd_step));
                for row in 0..f.dim() {
                    let fd = (plus[row] - minus[row]) / (2.0 * fd_step);
                    worst = worst.max((jac.get(row, c) - fd).abs() / fd.abs().max(1.0));
                }
            }
            checked += 1;
        }
    }
    ensure(worst < 1e-5, format!("worst relative error {worst:e}"))?;
    ensure(
        checked > 200 * 40,
        format!("only {checked} factors checked"),
    )?;
    within(clock.elapsed(), Duration::from_secs(10), "200 bands")?;
    Ok(format!(
        "{checked} factors, {skipped} near kinks, worst {worst:.2e} in {:?}",
        clock.elapsed()
    ))
}

fn c5_c6_one_shot() -> (Outcome, Outcome) {
    let scenario = Scenario::corridor();
    let config = one_shot_config(&scenario);
    let plan = match plan_once(&scenario, &config) {
        Ok(p) => p,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let records = &plan.result.trace.records;
    let c5 = (|| {
        ensure(
            config.rho0 == 10.0 && config.mu0 == 10.0,
            "penalties are not 10",
        )?;
        let capped = records.iter().filter(|r| r.inner_capped).count();
        ensure(capped <= 1, format!("{capped} capped inner solves"))?;
        let mut rise: f64 = f64::NEG_INFINITY;
        for w in records.windows(2) {
            if !w[1].inner_capped {
                rise = rise.max(w[1].lagrangian - w[0].lagrangian);
            }
        }
        ensure(rise <= 1e-6, format!("lagrangian rises by {rise:e}"))?;
        ensure(plan.monotonicity.passed, "monotonicity check failed")?;
        Ok(format!(
            "{} outer iterations, {capped} capped, largest change in L {rise:.2e}",
            records.len()
        ))
    })();
    let c6 = (|| {
        let band = &plan.result.band;
        let (mut ceq, mut pin) = (0.0f64, 0.0f64);
        for f in plan.graph.of_kind(FactorKind::Equality) {
            ceq = f
                .eval(band)
                .unwrap()
                .iter()
                .fold(ceq, |m, c| m.max(c.abs()));
        }
        for f in plan.graph.of_kind(FactorKind::Inequality) {
            pin = f
                .eval(band)
                .unwrap()
                .iter()
                .fold(pin, |m, p| m.max(p.max(0.0)));
        }
        ensure(
            ceq <= 1e-3 && pin <= 1e-3,
            format!("|c| {ceq:e} |p+| {pin:e}"),
        )?;
        let k = &plan.kkt;
        ensure(
            (k.primal_eq - ceq).abs() < 1e-12 && (k.primal_ineq - pin).abs() < 1e-12,
            "kkt residuals disagree",
        )?;
        Ok(format!("|c|inf {ceq:.2e}, |max(p,0)|inf {pin:.2e}"))
    })();
    (c5, c6)
}

fn c7_c8_benchmark() -> (Outcome, Outcome) {
    let scenario = Scenario::corridor();
    let options = BenchOptions::default();
    let report = match run_benchmark(&scenario, &[PlannerKind::Teb, PlannerKind::TebVs], &options) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let c7 = (|| {
        let reference_cut = 1.0 - REFERENCE_TEBVS_ANGULAR_LINEAR / REFERENCE_TEB_ANGULAR_LINEAR;
        ensure(reference_cut >= 0.10, "reference direction")?;
        for p in [PlannerKind::Teb, PlannerKind::TebVs] {
            let s = report.summary(p).ok_or("missing summary")?;
            ensure(
                s.runs == 1 && s.successes == 1,
                format!("{p} did not reach the goal"),
            )?;
        }
        let mean = |p| {
            report
                .row(p, Channel::Angular, PhaseLabel::Linear)
                .and_then(|r| r.stats.as_ref())
                .map(|s| s.mean)
                .ok_or(format!("{p}: no linear-phase angular stats"))
        };
        let (teb, vs) = (mean(PlannerKind::Teb)?, mean(PlannerKind::TebVs)?);
        let cut = 1.0 - vs / teb;
        ensure(
            cut >= 0.10,
            format!("teb {teb} teb-vs {vs} reduction {:.1}%", 100.0 * cut),
        )?;
        Ok(format!(
            "teb {teb:.5} teb-vs {vs:.5} reduction {:.1}% (reference {:.1}%)",
            100.0 * cut,
            100.0 * reference_cut
        ))
    })();
    let c8 = (|| {
        let s = report
            .summary(PlannerKind::TebVs)
            .ok_or("missing summary")?;
        ensure(
            s.mean_plan_s <= 0.050,
            format!("mean {:.1} ms", s.mean_plan_s * 1e3),
        )?;
        ensure(
            s.mean_plan_s < scenario.control_period,
            "slower than the control period",
        )?;
        Ok(format!(
            "teb-vs mean {:.2} ms per cycle (reference {:.2} ms)",
            s.mean_plan_s * 1e3,
            REFERENCE_TEBVS_RUNTIME_S * 1e3
        ))
    })();
    (c7, c8)
}

/// Uniform-cost search with a binary heap; costs as exact step counts.
fn reference_counts(
    grid: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
    inflation: f64,
) -> Option<(usize, usize)> {
    #[derive(PartialEq)]
    struct Item(f64, (usize, usize), (usize, usize));
    impl Eq for Item {}
    impl PartialOrd for Item {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Item {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            o.0.total_cmp(&self.0)
        }
    }
    let (w, h) = (grid.width(), grid.height());
    let free = |c: isize, r: isize| {
        c >= 0
            && r >= 0
            && (c as usize) < w
            && (r as usize) < h
            && !grid.is_occupied(c as usize, r as usize)
            && grid.cell_distance(c as usize, r as usize) >= inflation
    };
    if !free(start.0 as isize, start.1 as isize) || !free(goal.0 as isize, goal.1 as isize) {
        return None;
    }
    let mut settled = vec![false; w * h];
    let mut heap = BinaryHeap::from([Item(0.0, start, (0, 0))]);
    while let Some(Item(_, cell, counts)) = heap.pop() {
        let i = cell.1 * w + cell.0;
        if settled[i] {
            continue;
        }
        settled[i] = true;
        if cell == goal {
            return Some(counts);
        }
        let (c, r) = (cell.0 as isize, cell.1 as isize);
        for (dc, dr) in [
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ] {
            let (nc, nr) = (c + dc, r + dr);
            let diagonal = dc != 0 && dr != 0;
            if !free(nc, nr) || (diagonal && !(free(nc, r) && free(c, nr))) {
                continue;
            }
            let next = if diagonal {
                (counts.0, counts.1 + 1)
            } else {
                (counts.0 + 1, counts.1)
            };
            let cost = next.0 as f64 + next.1 as f64 * std::f64::consts::SQRT_2;
            heap.push(Item(cost, (nc as usize, nr as usize), next));
        }
    }
    None
}

fn c9_sim_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let counts = |p: tebvs::Result<Vec<(usize, usize)>>| match p {
        Ok(p) if !p.is_empty() => Some(step_counts(&p)),
        _ => None,
    };
    let mut reachable = 0;
    for case in 0..200 {
        let density = rng.gen_range(0.05..0.35);
        let cells: Vec<bool> = (0..32 * 32).map(|_| rng.gen_bool(density)).collect();
        let grid = OccupancyGrid::new(32, 32, 0.1, (0.0, 0.0), cells).unwrap();
        let inflation = [0.0, 0.1, 0.15][case % 3];
        let start = (rng.gen_range(0..32), rng.gen_range(0..32));
        let goal = (rng.gen_range(0..32), rng.gen_range(0..32));
        let a = counts(astar(&grid, start, goal, inflation));
        let d = counts(dijkstra(&grid, start, goal, inflation));
        let reference = reference_counts(&grid, start, goal, inflation);
        ensure(
            a == d && a == reference,
            format!("case {case}: astar {a:?} dijkstra {d:?} reference {reference:?}"),
        )?;
        reachable += usize::from(a.is_some());
    }
    ensure(reachable >= 50, format!("only {reachable} reachable cases"))?;

    for case in 0..20 {
        let (w, h) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
        let density = rng.gen_range(0.01..0.2);
        let cells: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(density)).collect();
        let occupied: Vec<(f64, f64)> = (0..w * h)
            .filter(|&i| cells[i])
            .map(|i| ((i % w) as f64, (i / w) as f64))
            .collect();
        let grid = OccupancyGrid::new(w, h, 0.05, (0.0, 0.0), cells).unwrap();
        for r in 0..h {
            for c in 0..w {
                let got = grid.cell_distance(c, r);
                let brute = occupied
                    .iter()
                    .map(|&(oc, or)| (oc - c as f64).hypot(or - r as f64) * 0.05)
                    .fold(f64::INFINITY, f64::min);
                let same = if occupied.is_empty() {
                    got >= 1e19
                } else {
                    got == brute
                };
                ensure(
                    same,
                    format!("grid {case} cell ({c},{r}): {got} vs {brute}"),
                )?;
            }
        }
    }

    let wrap = |a: f64| a.sin().atan2(a.cos());
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pose = Pose2::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-3.1..3.1),
        );
        let cmd = Twist::new(rng.gen_range(-0.5..0.5), rng.gen_range(-2.0..2.0));
        let dt = rng.gen_range(0.01..0.5);
        let exact = integrate(&RobotState::at_rest(pose), cmd, dt).pose;
        let n = 200_000;
        let h = dt / n as f64;
        let (mut x, mut y, mut b) = (pose.x(), pose.y(), pose.beta());
        for _ in 0..n {
            x += h * cmd.v * b.cos();
            y += h * cmd.v * b.sin();
            b += h * cmd.omega;
        }
        worst = worst.max(
            (exact.x() - x)
                .abs()
                .max((exact.y() - y).abs())
                .max(wrap(exact.beta() - b).abs()),
        );
    }
    ensure(worst <= 1e-4, format!("integrate vs euler {worst:e}"))?;
    Ok(format!(
        "200 grids agree ({reachable} reachable), 20 distance fields exact, integrate worst {worst:.2e}"
    ))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tebvs"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!(
            "{args:?}: {:?} {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ),
    )?;
    Ok(out.stdout)
}

fn c10_determinism() -> Outcome {
    let runs: [&[&str]; 3] = [
        &[
            "simulate",
            "--planner",
            "teb-vs",
            "--no-timing",
            "--seed",
            "7",
        ],
        &[
            "bench",
            "--planner",
            "teb,teb-vs",
            "--no-timing",
            "--seed",
            "7",
            "--format",
            "jsonlines",
        ],
        &[
            "bench",
            "--planner",
            "teb,teb-vs",
            "--no-timing",
            "--seed",
            "7",
            "--format",
            "csv",
            "--jobs",
            "2",
        ],
    ];
    let mut sizes = Vec::new();
    for args in runs {
        let (a, b) = (run_cli(args)?, run_cli(args)?);
        ensure(!a.is_empty(), format!("{args:?}: empty output"))?;
        ensure(a == b, format!("{args:?}: outputs differ"))?;
        sizes.push(a.len());
    }
    Ok(format!(
        "simulate {} B, bench jsonl {} B, bench csv {} B identical across runs",
        sizes[0], sizes[1], sizes[2]
    ))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    })
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 slack-prox oracle", guarded(c1_slack_prox)),
        ("2 dual-substitution identity", guarded(c2_dual_identity)),
        ("3 analytic KKT", guarded(c3_analytic_kkt)),
        ("4 jacobian fidelity", guarded(c4_jacobians)),
    ];
    let (c5, c6) =
        catch_unwind(c5_c6_one_shot).unwrap_or_else(|_| (Err("panic".into()), Err("panic".into())));
    results.push(("5 lagrangian monotonicity", c5));
    results.push(("6 constraint satisfaction", c6));
    let (c7, c8) = catch_unwind(c7_c8_benchmark)
        .unwrap_or_else(|_| (Err("panic".into()), Err("panic".into())));
    results.push(("7 linear-phase angular variation", c7));
    results.push(("8 planning time", c8));
    results.push(("9 sim correctness", guarded(c9_sim_correctness)));
    results.push(("10 determinism", guarded(c10_determinism)));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

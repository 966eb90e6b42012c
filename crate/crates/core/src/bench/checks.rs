//! Seeded property suites behind the `check` command.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::band::{normalize_angle, KinodynamicLimits, Pose2, TimedBand, Twist};
use crate::error::Result;
use crate::factors::{
    acceleration_factor, affine_factor, goal_factor, hinge_factor, kinematics_factor,
    model_residual, obstacle_factor, start_acceleration_factor, time_factor, velocity_factor,
    Factor, FactorGraph, FactorKind, FactorModel,
};
use crate::sim::astar::{astar, step_counts, Cell};
use crate::sim::grid::OccupancyGrid;
use crate::sim::robot::{integrate, RobotState};
use crate::vsloop::{
    dual_update_eta, monotonicity_check, outer_solve, slack_update, OuterStatus, SlackState,
    VsConfig,
};

/// Outcome of one suite. `worst` is the largest observed error.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub skipped: usize,
    pub failures: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: cases {} skipped {} failures {} worst {:.3e} tol {:e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.skipped,
            self.failures,
            self.worst,
            self.tolerance
        )
    }
}

struct Tally {
    result: CheckResult,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            result: CheckResult {
                name,
                cases: 0,
                skipped: 0,
                failures: 0,
                worst: 0.0,
                tolerance,
            },
        }
    }

    fn record(&mut self, error: f64) {
        let r = &mut self.result;
        r.cases += 1;
        r.worst = r.worst.max(error);
        if !(error <= r.tolerance) {
            r.failures += 1;
        }
    }
}

/// Runs every suite with the given seed.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        slack_prox(seed, 1000),
        dual_identity(seed, 1000),
        jacobians(seed, 200, 10)?,
        kkt_problems()?,
        astar_vs_dijkstra(seed, 200)?,
        distance_field(seed, 20)?,
        integrate_vs_euler(seed, 100),
    ])
}

/// Closed-form slack against a grid search of `eta (p + v) + rho/2 (p + v)^2`
/// over `v >= 0` with step 1e-4.
pub fn slack_prox(seed: u64, n: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("slack-prox", 1e-3);
    for _ in 0..n {
        let (p, eta, rho) = (
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(0.5..20.0),
        );
        let v = slack_update(&[p], &[eta], rho)
            .map(|v| v[0])
            .unwrap_or(f64::NAN);
        let objective = |v: f64| eta * (p + v) + 0.5 * rho * (p + v) * (p + v);
        // the unconstrained minimizer is below 2 + 2/0.5 = 6
        let (mut best, mut best_val) = (0.0, objective(0.0));
        for k in 1..=60_000 {
            let v = k as f64 * 1e-4;
            let val = objective(v);
            if val < best_val {
                best = v;
                best_val = val;
            }
        }
        t.record((v - best).abs());
    }
    t.result
}

/// Slack update followed by the eta update equals `max(0, eta + rho p)`.
pub fn dual_identity(seed: u64, n: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut t = Tally::new("dual-identity", 1e-12);
    for _ in 0..n {
        let (p, eta, rho) = (
            rng.gen_range(-2.0..2.0),
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.5..20.0),
        );
        let mut s = SlackState {
            v: vec![0.0],
            eta: vec![eta],
            zeta: Vec::new(),
            rho,
            mu: rho,
            n: 0,
        };
        let err = slack_update(&[p], &s.eta, rho)
            .and_then(|v| {
                s.v = v;
                dual_update_eta(&mut s, &[p])
            })
            .map(|_| (s.eta[0] - (eta + rho * p).max(0.0)).abs())
            .unwrap_or(f64::INFINITY);
        t.record(err);
    }
    t.result
}

fn check_grid() -> Arc<OccupancyGrid> {
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
    Arc::new(OccupancyGrid::new(w, h, 0.1, (0.0, 0.0), cells).expect("check grid is valid"))
}

/// Random band of `n` free poses inside the check grid.
pub fn random_band(rng: &mut ChaCha8Rng, n: usize) -> TimedBand {
    let start = Pose2::new(
        rng.gen_range(0.8..1.2),
        rng.gen_range(1.0..4.0),
        rng.gen_range(-0.5..0.5),
    );
    let mut poses = Vec::with_capacity(n);
    let mut dts = Vec::with_capacity(n);
    let mut prev = start;
    for _ in 0..n {
        let beta = prev.beta() + rng.gen_range(-0.6..0.6);
        let heading = 0.5 * (prev.beta() + beta) + rng.gen_range(-0.2..0.2);
        let len = rng.gen_range(-0.1..0.3);
        let p = Pose2::new(
            prev.x() + len * heading.cos(),
            prev.y() + len * heading.sin(),
            beta,
        );
        poses.push(p);
        dts.push(rng.gen_range(0.1..0.6));
        prev = p;
    }
    TimedBand::new(start, poses, dts).expect("random band is valid")
}

/// Every factor family on a band of `n` free poses.
pub fn full_factor_set(rng: &mut ChaCha8Rng, n: usize, grid: &Arc<OccupancyGrid>) -> Vec<Factor> {
    let limits = KinodynamicLimits::new(0.4, 1.0, 0.5, 1.0, 0.3)
        .and_then(|l| l.with_backward(0.1))
        .expect("check limits are valid");
    let twist = Twist::new(rng.gen_range(-0.1..0.4), rng.gen_range(-1.0..1.0));
    let goal = Pose2::new(
        rng.gen_range(0.0..5.0),
        rng.gen_range(0.0..5.0),
        rng.gen_range(-3.0..3.0),
    );
    let mut fs = Vec::new();
    for i in 0..n {
        fs.push(time_factor(i, 0.5));
        fs.push(kinematics_factor(i));
        fs.push(velocity_factor(i, &limits));
        fs.push(obstacle_factor(i, grid.clone(), limits.d_min));
    }
    for i in 0..n - 1 {
        fs.push(acceleration_factor(i, &limits));
    }
    fs.push(start_acceleration_factor(twist, &limits));
    fs.push(goal_factor(n - 1, goal));
    fs.push(hinge_factor(&velocity_factor(n / 2, &limits), 3.0, 0.05));
    fs.push(hinge_factor(
        &obstacle_factor(n / 2, grid.clone(), limits.d_min),
        3.0,
        0.05,
    ));
    fs
}

fn with_coords(band: &TimedBand, coords: &[f64]) -> Option<TimedBand> {
    TimedBand::from_coordinates(*band.start(), coords).ok()
}

fn eval_at(f: &Factor, band: &TimedBand, coords: &[f64]) -> Option<Vec<f64>> {
    with_coords(band, coords).and_then(|b| f.eval(&b).ok())
}

/// Scalar functions that vanish on the nonsmooth loci of `model`.
fn kink_functions(model: &FactorModel, band: &TimedBand) -> Vec<f64> {
    let omega_arg = |i: usize| normalize_angle(band.node(i + 1).beta() - band.node(i).beta());
    let wrap = |d: f64| d.abs() - std::f64::consts::PI;
    let twist = |i: usize| -> (f64, f64) {
        let (a, b) = (band.node(i), band.node(i + 1));
        let dt = band.dts()[i];
        let mean = a.beta() + 0.5 * omega_arg(i);
        let v = (mean.cos() * (b.x() - a.x()) + mean.sin() * (b.y() - a.y())) / dt;
        (v, omega_arg(i) / dt)
    };
    match model {
        FactorModel::Time { .. } | FactorModel::Affine { .. } => Vec::new(),
        FactorModel::Kinematics { segment } => vec![wrap(omega_arg(*segment))],
        FactorModel::Velocity {
            segment,
            v_max,
            v_max_backward,
            ..
        } => {
            let i = *segment;
            let (a, b) = (band.node(i), band.node(i + 1));
            let len = (b.x() - a.x()).hypot(b.y() - a.y());
            let (v, omega) = twist(i);
            let dt = band.dts()[i];
            vec![
                len,
                (len / dt - v_max) - (-v - v_max_backward),
                omega,
                wrap(omega_arg(i)),
            ]
        }
        FactorModel::Acceleration { segment, .. } => {
            let i = *segment;
            let ((v0, w0), (v1, w1)) = (twist(i), twist(i + 1));
            vec![v1 - v0, w1 - w0, wrap(omega_arg(i)), wrap(omega_arg(i + 1))]
        }
        FactorModel::StartAcceleration { twist: t0, .. } => {
            let (v, w) = twist(0);
            vec![v - t0.v, w - t0.omega, wrap(omega_arg(0))]
        }
        FactorModel::Obstacle { pose, grid, .. } => {
            let p = band.poses()[*pose];
            let res = grid.resolution();
            let (ox, oy) = grid.origin();
            let line = |u: f64| (u - u.round()).abs() * res;
            vec![
                line((p.x() - ox) / res - 0.5),
                line((p.y() - oy) / res - 0.5),
            ]
        }
        FactorModel::Goal { pose, goal } => vec![wrap(normalize_angle(
            band.poses()[*pose].beta() - goal.beta(),
        ))],
        FactorModel::Hinge { inner, margin } => {
            let mut k = kink_functions(inner, band);
            k.extend(model_residual(inner, band).iter().map(|p| p + margin));
            k
        }
    }
}

/// Smallest coordinate-space distance from `band` to a nonsmooth locus of
/// `f`, estimated as `|g| / |grad g|` with a finite-difference gradient.
pub fn kink_distance(f: &Factor, band: &TimedBand) -> f64 {
    let x = band.to_coordinates();
    let g0 = kink_functions(f.model(), band);
    if g0.is_empty() {
        return f64::INFINITY;
    }
    let h = 1e-7;
    let mut grad2 = vec![0.0; g0.len()];
    for &c in &f.coordinate_indices() {
        let mut y = x.clone();
        y[c] = x[c] + h;
        let plus = with_coords(band, &y).map(|b| kink_functions(f.model(), &b));
        y[c] = x[c] - h;
        let minus = with_coords(band, &y).map(|b| kink_functions(f.model(), &b));
        let (Some(plus), Some(minus)) = (plus, minus) else {
            return 0.0;
        };
        for k in 0..g0.len() {
            grad2[k] += ((plus[k] - minus[k]) / (2.0 * h)).powi(2);
        }
    }
    g0.iter()
        .zip(&grad2)
        .map(|(g, d2)| {
            if *d2 > 0.0 {
                g.abs() / d2.sqrt()
            } else if *g == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Largest entrywise error `|J - J_fd| / max(1, |J_fd|)` over the factor's
/// coordinates, with central differences of step `h`.
pub fn jacobian_error(f: &Factor, band: &TimedBand, h: f64) -> Result<f64> {
    let jac = f.jacobian(band)?;
    let x = band.to_coordinates();
    let mut worst: f64 = 0.0;
    for c in f.coordinate_indices() {
        let mut y = x.clone();
        y[c] = x[c] + h;
        let plus = eval_at(f, band, &y);
        y[c] = x[c] - h;
        let minus = eval_at(f, band, &y);
        let (Some(plus), Some(minus)) = (plus, minus) else {
            return Ok(f64::INFINITY);
        };
        for r in 0..f.dim() {
            let fd = (plus[r] - minus[r]) / (2.0 * h);
            worst = worst.max((jac.get(r, c) - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Analytic Jacobians against central differences on random bands, skipping
/// factors within 1e-4 of a nonsmooth locus.
pub fn jacobians(seed: u64, bands: usize, poses: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let grid = check_grid();
    let mut t = Tally::new("jacobian-fd", 1e-5);
    for _ in 0..bands {
        let band = random_band(&mut rng, poses);
        for f in full_factor_set(&mut rng, poses, &grid) {
            if kink_distance(&f, &band) < 1e-4 {
                t.result.skipped += 1;
                continue;
            }
            t.record(jacobian_error(&f, &band, 1e-6)?);
        }
    }
    Ok(t.result)
}

fn one_pose_band(x: f64) -> TimedBand {
    TimedBand::new(
        Pose2::new(0.0, 0.0, 0.0),
        vec![Pose2::new(x, 0.0, 0.0)],
        vec![1.0],
    )
    .expect("one-pose band")
}

/// `min (x-2)^2 s.t. x <= 1` and `min x^2 s.t. x = 1`: solution 1 with
/// multipliers 2 and -2, plus a monotone Lagrangian trace.
pub fn kkt_problems() -> Result<CheckResult> {
    let mut t = Tally::new("kkt-canned", 1e-3);
    let config = VsConfig {
        primal_tolerance: 1e-6,
        dual_tolerance: 1e-6,
        ..VsConfig::default()
    };
    let ineq = FactorGraph::from_factors(vec![
        affine_factor(FactorKind::Objective, vec![(0, 1.0)], -2.0, 1.0),
        affine_factor(FactorKind::Inequality, vec![(0, 1.0)], -1.0, 1.0),
    ]);
    let out = outer_solve(&one_pose_band(3.0), &ineq, &config)?;
    let ok = out.status == OuterStatus::Converged && monotonicity_check(&out.trace, 1e-8).passed;
    t.record(if ok {
        (out.band.poses()[0].x() - 1.0).abs() * 10.0
    } else {
        f64::INFINITY
    });
    t.record((out.state.eta[0] - 2.0).abs());

    let eq = FactorGraph::from_factors(vec![
        affine_factor(FactorKind::Objective, vec![(0, 1.0)], 0.0, 1.0),
        affine_factor(FactorKind::Equality, vec![(0, 1.0)], -1.0, 1.0),
    ]);
    let out = outer_solve(&one_pose_band(0.0), &eq, &config)?;
    let ok = out.status == OuterStatus::Converged && monotonicity_check(&out.trace, 1e-8).passed;
    t.record(if ok {
        (out.band.poses()[0].x() - 1.0).abs() * 10.0
    } else {
        f64::INFINITY
    });
    t.record((out.state.zeta[0] + 2.0).abs());
    Ok(t.result)
}

fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> OccupancyGrid {
    let cells = (0..w * h).map(|_| rng.gen_bool(density)).collect();
    OccupancyGrid::new(w, h, 0.1, (0.0, 0.0), cells).expect("random grid is valid")
}

/// Reference uniform-cost search over the same 8-connected graph, with
/// distances kept as exact `(orthogonal, diagonal)` step counts.
fn reference_cost(
    grid: &OccupancyGrid,
    start: Cell,
    goal: Cell,
    inflation: f64,
) -> Option<(usize, usize)> {
    let (w, h) = (grid.width(), grid.height());
    let free =
        |c: usize, r: usize| !grid.is_occupied(c, r) && grid.cell_distance(c, r) >= inflation;
    if !free(start.0, start.1) || !free(goal.0, goal.1) {
        return None;
    }
    let value = |d: (usize, usize)| d.0 as f64 + d.1 as f64 * std::f64::consts::SQRT_2;
    let mut dist: Vec<Option<(usize, usize)>> = vec![None; w * h];
    let mut done = vec![false; w * h];
    dist[start.1 * w + start.0] = Some((0, 0));
    loop {
        let next = (0..w * h)
            .filter(|&i| !done[i] && dist[i].is_some())
            .min_by(|&a, &b| value(dist[a].unwrap()).total_cmp(&value(dist[b].unwrap())));
        let i = next?;
        done[i] = true;
        let (c, r) = (i % w, i / w);
        if (c, r) == goal {
            return dist[i];
        }
        let d = dist[i].unwrap();
        for dc in -1isize..=1 {
            for dr in -1isize..=1 {
                if dc == 0 && dr == 0 {
                    continue;
                }
                let (nc, nr) = (c as isize + dc, r as isize + dr);
                if nc < 0 || nr < 0 || nc >= w as isize || nr >= h as isize {
                    continue;
                }
                let (nc, nr) = (nc as usize, nr as usize);
                if !free(nc, nr) {
                    continue;
                }
                let diagonal = dc != 0 && dr != 0;
                if diagonal && !(free(nc, r) && free(c, nr)) {
                    continue;
                }
                let cand = if diagonal {
                    (d.0, d.1 + 1)
                } else {
                    (d.0 + 1, d.1)
                };
                let j = nr * w + nc;
                if dist[j].is_none_or(|old| value(cand) < value(old)) {
                    dist[j] = Some(cand);
                }
            }
        }
    }
}

/// A* step counts equal those of an independent uniform-cost search.
pub fn astar_vs_dijkstra(seed: u64, n: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let mut t = Tally::new("astar-dijkstra", 0.0);
    for _ in 0..n {
        let density = rng.gen_range(0.1..0.35);
        let grid = random_grid(&mut rng, 32, 32, density);
        let inflation = if rng.gen_bool(0.5) { 0.0 } else { 0.1 };
        let mut pick = || (rng.gen_range(0..32), rng.gen_range(0..32));
        let (start, goal) = (pick(), pick());
        let expected = reference_cost(&grid, start, goal, inflation);
        let got = match astar(&grid, start, goal, inflation) {
            Ok(p) if p.is_empty() => None,
            Ok(p) => Some(step_counts(&p)),
            Err(_) => None,
        };
        t.record(if got == expected { 0.0 } else { 1.0 });
    }
    Ok(t.result)
}

/// Distance field against brute force over all occupied cells.
pub fn distance_field(seed: u64, n: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
    let mut t = Tally::new("distance-field", 0.0);
    for _ in 0..n {
        let (w, h) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
        let density = rng.gen_range(0.005..0.2);
        let grid = random_grid(&mut rng, w, h, density);
        let occupied: Vec<(usize, usize)> = (0..w * h)
            .filter(|&i| grid.cells()[i])
            .map(|i| (i % w, i / w))
            .collect();
        let mut worst: f64 = 0.0;
        for r in 0..h {
            for c in 0..w {
                let brute = occupied
                    .iter()
                    .map(|&(oc, or)| {
                        let (dc, dr) = (oc as f64 - c as f64, or as f64 - r as f64);
                        (dc * dc + dr * dr).sqrt() * grid.resolution()
                    })
                    .fold(f64::INFINITY, f64::min);
                let got = grid.cell_distance(c, r);
                let err = if brute.is_infinite() && got >= 1e19 {
                    0.0
                } else {
                    (got - brute).abs()
                };
                worst = worst.max(err);
            }
        }
        t.record(worst);
    }
    Ok(t.result)
}

/// Exact arc integration against fine-step Euler.
pub fn integrate_vs_euler(seed: u64, n: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
    let mut t = Tally::new("integrate-euler", 1e-4);
    for _ in 0..n {
        let pose = Pose2::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-3.0..3.0),
        );
        let cmd = Twist::new(rng.gen_range(-0.5..0.5), rng.gen_range(-1.5..1.5));
        let dt = rng.gen_range(0.05..0.5);
        let exact = integrate(&RobotState::at_rest(pose), cmd, dt).pose;
        let steps = 100_000;
        let h = dt / steps as f64;
        let (mut x, mut y, mut b) = (pose.x(), pose.y(), pose.beta());
        for _ in 0..steps {
            x += cmd.v * b.cos() * h;
            y += cmd.v * b.sin() * h;
            b += cmd.omega * h;
        }
        let err = (exact.x() - x)
            .abs()
            .max((exact.y() - y).abs())
            .max(normalize_angle(exact.beta() - b).abs());
        t.record(err);
    }
    t.result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        assert!(slack_prox(1, 20).passed());
        assert!(dual_identity(1, 200).passed());
        let j = jacobians(1, 5, 10).unwrap();
        assert!(j.passed(), "{j}");
        assert!(j.cases > 5 * 40);
        assert!(kkt_problems().unwrap().passed());
        assert!(astar_vs_dijkstra(1, 10).unwrap().passed());
        assert!(distance_field(1, 3).unwrap().passed());
        assert!(integrate_vs_euler(1, 5).passed());
    }

    #[test]
    fn kink_distance_finds_zero_twist() {
        let l = KinodynamicLimits::new(0.4, 1.0, 0.5, 1.0, 0.3).unwrap();
        let b = TimedBand::new(
            Pose2::new(0.0, 0.0, 0.0),
            vec![Pose2::new(0.1, 0.0, 0.0)],
            vec![0.5],
        )
        .unwrap();
        // omega is exactly zero
        assert_eq!(kink_distance(&velocity_factor(0, &l), &b), 0.0);
        let b = TimedBand::new(
            Pose2::new(0.0, 0.0, 0.0),
            vec![Pose2::new(0.1, 0.0, 0.01)],
            vec![0.5],
        )
        .unwrap();
        let d = kink_distance(&velocity_factor(0, &l), &b);
        // omega = dbeta / dt over (beta_1, dt); the start pose is fixed
        let exact = 0.01 / (1.0 + (0.01f64 / 0.5).powi(2)).sqrt();
        assert!((d - exact).abs() < 1e-8, "{d}");
        assert_eq!(kink_distance(&time_factor(0, 1.0), &b), f64::INFINITY);
    }

    #[test]
    fn affine_jacobian_and_display() {
        let b = TimedBand::new(
            Pose2::new(0.0, 0.0, 0.0),
            vec![Pose2::new(0.1, 0.2, 0.3)],
            vec![0.5],
        )
        .unwrap();
        let good = affine_factor(FactorKind::Objective, vec![(0, 2.0)], 0.0, 1.0);
        assert!(jacobian_error(&good, &b, 1e-6).unwrap() < 1e-9);
        let display = format!("{}", slack_prox(3, 2));
        assert!(display.starts_with("PASS slack-prox: cases 2"));
    }
}

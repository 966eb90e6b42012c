//! Outer variable-splitting loop: inequality rows `p(x) <= 0` become
//! `p(x) + v = 0` with `v >= 0`, and the augmented Lagrangian is minimized by
//! alternating an x-solve, a closed-form slack update and multiplier ascent.

use std::io::{self, Write};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::band::{normalize_angle, TimedBand};
use crate::error::{Error, Result};
use crate::factors::{constraint_values, stack_constraints, FactorGraph, FactorKind};
use crate::nlls::sparse::SparseMatrix;
use crate::nlls::{lm_solve, LmConfig, SubproblemSpec, Termination};

/// Slacks, multipliers and penalties for one factor registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackState {
    pub v: Vec<f64>,
    pub eta: Vec<f64>,
    pub zeta: Vec<f64>,
    pub rho: f64,
    pub mu: f64,
    /// Completed outer iterations.
    pub n: usize,
}

impl SlackState {
    /// `v = max(0, -p)`, zero multipliers.
    pub fn initial(graph: &FactorGraph, band: &TimedBand, rho: f64, mu: f64) -> Result<Self> {
        check_penalty(rho)?;
        check_penalty(mu)?;
        let (c, p) = constraint_values(graph, band)?;
        Ok(Self {
            v: p.iter().map(|p| (-p).max(0.0)).collect(),
            eta: vec![0.0; p.len()],
            zeta: vec![0.0; c.len()],
            rho,
            mu,
            n: 0,
        })
    }

    fn check_dims(&self, c: &[f64], p: &[f64]) -> Result<()> {
        for (what, expected, got) in [
            ("slack", p.len(), self.v.len()),
            ("eta", p.len(), self.eta.len()),
            ("zeta", c.len(), self.zeta.len()),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }
}

fn check_penalty(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "penalty must be positive, got {x}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VsConfig {
    pub rho0: f64,
    pub mu0: f64,
    pub max_outer: usize,
    /// Bound on `|c|_inf` and `|max(p, 0)|_inf`.
    pub primal_tolerance: f64,
    /// Bound on the outer change `|x_{n+1} - x_n|_inf`.
    pub dual_tolerance: f64,
    /// Multiplies both penalties when the primal residual fails to halve.
    pub penalty_growth: Option<f64>,
    pub lemma1_tolerance: f64,
    /// Compute smallest singular values of the constraint Jacobians per record.
    pub lemma_constants: bool,
    pub inner: LmConfig,
}

impl Default for VsConfig {
    fn default() -> Self {
        Self {
            rho0: 10.0,
            mu0: 10.0,
            max_outer: 30,
            primal_tolerance: 1e-3,
            dual_tolerance: 1e-3,
            penalty_growth: None,
            lemma1_tolerance: 1e-8,
            lemma_constants: false,
            inner: LmConfig::default(),
        }
    }
}

impl VsConfig {
    pub fn validate(&self) -> Result<()> {
        check_penalty(self.rho0)?;
        check_penalty(self.mu0)?;
        let ok = self.max_outer >= 1
            && self.primal_tolerance > 0.0
            && self.dual_tolerance > 0.0
            && self.lemma1_tolerance > 0.0
            && self.penalty_growth.is_none_or(|g| g > 1.0);
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "invalid outer-loop config {self:?}"
            )));
        }
        self.inner.validate()
    }
}

/// One completed outer iteration. Serialized field order is declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    /// Augmented Lagrangian at the updated iterate, slacks and multipliers.
    pub lagrangian: f64,
    pub objective: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub step: f64,
    pub inner_iterations: usize,
    pub inner_termination: Termination,
    pub inner_capped: bool,
    pub rho: f64,
    pub mu: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lemma: Option<LemmaConstants>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OuterTrace {
    pub records: Vec<OuterRecord>,
}

impl OuterTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lagrangian_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lagrangian).collect()
    }

    pub fn capped_count(&self) -> usize {
        self.records.iter().filter(|r| r.inner_capped).count()
    }

    /// One JSON object per line. `wall_ms` is zeroed when `timing` is false.
    pub fn write_jsonl<W: Write>(&self, mut w: W, timing: bool) -> io::Result<()> {
        for r in &self.records {
            let mut r = r.clone();
            if !timing {
                r.wall_ms = 0.0;
            }
            serde_json::to_writer(&mut w, &r)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterStatus {
    Converged,
    MaxIterations,
    InnerFailure(String),
}

#[derive(Debug, Clone)]
pub struct OuterResult {
    pub band: TimedBand,
    pub state: SlackState,
    pub trace: OuterTrace,
    pub status: OuterStatus,
}

/// `F + eta.(p + v) + rho/2 |p + v|^2 + zeta.c + mu/2 |c|^2`.
pub fn augmented_lagrangian_value(
    band: &TimedBand,
    graph: &FactorGraph,
    state: &SlackState,
) -> Result<f64> {
    let (c, p) = constraint_values(graph, band)?;
    state.check_dims(&c, &p)?;
    let mut total = graph.objective_value(band)?;
    for ((p, v), eta) in p.iter().zip(&state.v).zip(&state.eta) {
        let s = p + v;
        total += eta * s + 0.5 * state.rho * s * s;
    }
    for (c, zeta) in c.iter().zip(&state.zeta) {
        total += zeta * c + 0.5 * state.mu * c * c;
    }
    Ok(total)
}

/// `v = max(0, -p - eta / rho)` componentwise.
pub fn slack_update(p: &[f64], eta: &[f64], rho: f64) -> Result<Vec<f64>> {
    check_penalty(rho)?;
    if p.len() != eta.len() {
        return Err(Error::DimensionMismatch {
            what: "eta",
            expected: p.len(),
            got: eta.len(),
        });
    }
    Ok(p.iter()
        .zip(eta)
        .map(|(p, e)| (-p - e / rho).max(0.0))
        .collect())
}

/// `eta += rho (p + v)` using the current slacks.
pub fn dual_update_eta(state: &mut SlackState, p: &[f64]) -> Result<()> {
    if p.len() != state.eta.len() || p.len() != state.v.len() {
        return Err(Error::DimensionMismatch {
            what: "inequality rows",
            expected: state.eta.len(),
            got: p.len(),
        });
    }
    for ((eta, p), v) in state.eta.iter_mut().zip(p).zip(&state.v) {
        *eta += state.rho * (p + v);
    }
    Ok(())
}

/// `zeta += mu c`.
pub fn dual_update_zeta(state: &mut SlackState, c: &[f64]) -> Result<()> {
    if c.len() != state.zeta.len() {
        return Err(Error::DimensionMismatch {
            what: "equality rows",
            expected: state.zeta.len(),
            got: c.len(),
        });
    }
    for (zeta, c) in state.zeta.iter_mut().zip(c) {
        *zeta += state.mu * c;
    }
    Ok(())
}

fn inf_norm<'a>(v: impl IntoIterator<Item = &'a f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn positive_part_norm(p: &[f64]) -> f64 {
    p.iter().fold(0.0, |m, x| m.max(x.max(0.0)))
}

/// Outer change, with heading differences wrapped.
fn band_step(a: &TimedBand, b: &TimedBand) -> f64 {
    a.to_coordinates()
        .iter()
        .zip(b.to_coordinates())
        .enumerate()
        .map(|(i, (x, y))| {
            if i % 4 == 2 {
                normalize_angle(y - x).abs()
            } else {
                (y - x).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Smallest singular values of the stacked constraint Jacobians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaConstants {
    pub e_c: f64,
    pub e_p: f64,
}

fn smallest_singular_value(m: &SparseMatrix) -> f64 {
    if m.rows() == 0 || m.cols() == 0 {
        return 0.0;
    }
    let dense = m.to_dense();
    let mat = DMatrix::from_fn(m.rows(), m.cols(), |i, j| dense[i][j]);
    mat.singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Diagnostic estimates only; never used as a gate.
pub fn lemma_constants(band: &TimedBand, graph: &FactorGraph) -> Result<LemmaConstants> {
    let s = stack_constraints(graph, band)?;
    Ok(LemmaConstants {
        e_c: smallest_singular_value(&s.jc),
        e_p: smallest_singular_value(&s.jp),
    })
}

/// Runs the outer loop from `band0` with a fresh state.
pub fn outer_solve(
    band0: &TimedBand,
    graph: &FactorGraph,
    config: &VsConfig,
) -> Result<OuterResult> {
    outer_solve_observed(band0, graph, config, |_| {})
}

/// As [`outer_solve`], handing each record to `observer` as it is appended.
pub fn outer_solve_observed<F: FnMut(&OuterRecord)>(
    band0: &TimedBand,
    graph: &FactorGraph,
    config: &VsConfig,
    mut observer: F,
) -> Result<OuterResult> {
    config.validate()?;
    let mut state = SlackState::initial(graph, band0, config.rho0, config.mu0)?;
    let mut band = band0.clone();
    let mut trace = OuterTrace::default();
    let mut status = OuterStatus::MaxIterations;
    let mut last_primal = f64::INFINITY;
    for iteration in 0..config.max_outer {
        let clock = Instant::now();
        let spec = SubproblemSpec::new(
            graph,
            state.v.clone(),
            state.eta.clone(),
            state.zeta.clone(),
            state.rho,
            state.mu,
        )?;
        let (next, stats) = match lm_solve(&spec, &band, &config.inner) {
            Ok(out) => out,
            Err(e) => {
                status = OuterStatus::InnerFailure(e.to_string());
                break;
            }
        };
        let (c, p) = constraint_values(graph, &next)?;
        state.v = slack_update(&p, &state.eta, state.rho)?;
        dual_update_eta(&mut state, &p)?;
        dual_update_zeta(&mut state, &c)?;
        state.n += 1;

        let step = band_step(&band, &next);
        let primal_eq = inf_norm(&c);
        let primal_ineq = positive_part_norm(&p);
        let lemma = if config.lemma_constants {
            Some(lemma_constants(&next, graph)?)
        } else {
            None
        };
        let record = OuterRecord {
            iteration,
            lagrangian: augmented_lagrangian_value(&next, graph, &state)?,
            objective: graph.objective_value(&next)?,
            primal_eq,
            primal_ineq,
            step,
            inner_iterations: stats.iterations,
            inner_termination: stats.termination,
            inner_capped: stats.termination == Termination::MaxIterations,
            rho: state.rho,
            mu: state.mu,
            lemma,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        };
        observer(&record);
        trace.records.push(record);
        band = next;

        let primal = primal_eq.max(primal_ineq);
        if primal <= config.primal_tolerance && step <= config.dual_tolerance {
            status = OuterStatus::Converged;
            break;
        }
        if let Some(g) = config.penalty_growth {
            if primal > 0.5 * last_primal {
                state.rho *= g;
                state.mu *= g;
            }
        }
        last_primal = primal;
    }
    Ok(OuterResult {
        band,
        state,
        trace,
        status,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    /// `(n, L_{n+1} - L_n)` for each pair that rises by more than the tolerance.
    pub violations: Vec<(usize, f64)>,
    pub max_violation: f64,
    /// Records skipped because the inner solve hit its iteration cap.
    pub flagged: Vec<usize>,
    pub passed: bool,
}

/// Checks `L_{n+1} <= L_n + tol` over consecutive records, skipping any pair
/// that involves a capped inner solve.
pub fn monotonicity_check(trace: &OuterTrace, tol: f64) -> MonotonicityReport {
    let flagged: Vec<usize> = trace
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.inner_capped)
        .map(|(i, _)| i)
        .collect();
    let mut violations = Vec::new();
    let mut max_violation: f64 = 0.0;
    for (n, pair) in trace.records.windows(2).enumerate() {
        if pair[0].inner_capped || pair[1].inner_capped {
            continue;
        }
        let rise = pair[1].lagrangian - pair[0].lagrangian;
        if rise > tol || rise.is_nan() {
            violations.push((n, rise));
            max_violation = max_violation.max(rise);
        }
    }
    MonotonicityReport {
        passed: violations.is_empty(),
        violations,
        max_violation,
        flagged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub comp_slack: f64,
    pub dual_sign: f64,
}

pub fn kkt_residuals(
    band: &TimedBand,
    graph: &FactorGraph,
    state: &SlackState,
) -> Result<KktResiduals> {
    let (c, p) = constraint_values(graph, band)?;
    state.check_dims(&c, &p)?;
    let comp_slack = p
        .iter()
        .zip(&state.v)
        .zip(&state.eta)
        .map(|((p, v), eta)| (eta * (p + v)).abs())
        .fold(0.0, f64::max);
    Ok(KktResiduals {
        primal_eq: inf_norm(&c),
        primal_ineq: positive_part_norm(&p),
        comp_slack,
        dual_sign: state.eta.iter().fold(0.0, |m, e| m.max((-e).max(0.0))),
    })
}

/// Number of inequality and equality rows in `graph`.
pub fn constraint_dims(graph: &FactorGraph) -> (usize, usize) {
    (
        graph.dim_of(FactorKind::Inequality),
        graph.dim_of(FactorKind::Equality),
    )
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::band::Pose2;
    use crate::factors::affine_factor;

    fn unit_band(x: f64) -> TimedBand {
        TimedBand::new(
            Pose2::new(0.0, 0.0, 0.0),
            vec![Pose2::new(x, 0.0, 0.0)],
            vec![1.0],
        )
        .unwrap()
    }

    fn inequality_problem() -> FactorGraph {
        // (x - 2)^2 subject to x - 1 <= 0
        FactorGraph::from_factors(vec![
            affine_factor(FactorKind::Objective, vec![(0, 1.0)], -2.0, 1.0),
            affine_factor(FactorKind::Inequality, vec![(0, 1.0)], -1.0, 1.0),
        ])
    }

    fn equality_problem() -> FactorGraph {
        FactorGraph::from_factors(vec![
            affine_factor(FactorKind::Objective, vec![(0, 1.0)], 0.0, 1.0),
            affine_factor(FactorKind::Equality, vec![(0, 1.0)], -1.0, 1.0),
        ])
    }

    fn tight() -> VsConfig {
        VsConfig {
            primal_tolerance: 1e-6,
            dual_tolerance: 1e-6,
            ..VsConfig::default()
        }
    }

    fn state(v: f64, eta: f64, zeta: Option<f64>, rho: f64, mu: f64) -> SlackState {
        SlackState {
            v: vec![v],
            eta: vec![eta],
            zeta: zeta.into_iter().collect(),
            rho,
            mu,
            n: 0,
        }
    }

    #[test]
    fn lagrangian_examples() {
        let g = FactorGraph::from_factors(vec![affine_factor(
            FactorKind::Inequality,
            vec![(0, 1.0)],
            -1.0,
            1.0,
        )]);
        let b = unit_band(0.5);
        assert_eq!(
            augmented_lagrangian_value(&b, &g, &state(0.5, 0.0, None, 10.0, 10.0)).unwrap(),
            0.0
        );
        assert_eq!(
            augmented_lagrangian_value(&b, &g, &state(0.5, 3.0, None, 10.0, 10.0)).unwrap(),
            0.0
        );

        // F = 1, p = 0.2, c = 0.1
        let g = FactorGraph::from_factors(vec![
            affine_factor(FactorKind::Objective, vec![(1, 1.0)], 1.0, 1.0),
            affine_factor(FactorKind::Inequality, vec![(0, 1.0)], -0.3, 1.0),
            affine_factor(FactorKind::Equality, vec![(0, 1.0)], -0.4, 1.0),
        ]);
        let l = augmented_lagrangian_value(&b, &g, &state(0.0, 1.0, Some(0.5), 2.0, 4.0)).unwrap();
        assert!((l - 1.31).abs() < 1e-12);
        assert!(augmented_lagrangian_value(&b, &g, &state(0.0, 1.0, None, 2.0, 4.0)).is_err());
    }

    #[test]
    fn lagrangian_at_initial_state_is_penalty_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = FactorGraph::from_factors(vec![
            affine_factor(FactorKind::Objective, vec![(1, 1.0)], 0.3, 1.0),
            affine_factor(FactorKind::Inequality, vec![(0, 1.0)], -0.3, 1.0),
            affine_factor(FactorKind::Inequality, vec![(0, -1.0), (1, 2.0)], 0.1, 1.0),
            affine_factor(FactorKind::Equality, vec![(0, 1.0)], -0.4, 1.0),
        ]);
        for _ in 0..100 {
            let b = TimedBand::new(
                Pose2::new(0.0, 0.0, 0.0),
                vec![Pose2::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    0.0,
                )],
                vec![1.0],
            )
            .unwrap();
            let s = SlackState::initial(&g, &b, 10.0, 7.0).unwrap();
            let (c, p) = constraint_values(&g, &b).unwrap();
            let oracle = g.objective_value(&b).unwrap()
                + 3.5 * c.iter().map(|c| c * c).sum::<f64>()
                + 5.0 * p.iter().map(|p| p.max(0.0).powi(2)).sum::<f64>();
            assert!((augmented_lagrangian_value(&b, &g, &s).unwrap() - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn slack_examples() {
        assert_eq!(slack_update(&[-2.0], &[0.0], 1.0).unwrap(), vec![2.0]);
        assert_eq!(slack_update(&[1.0], &[0.0], 1.0).unwrap(), vec![0.0]);
        assert_eq!(slack_update(&[-1.0], &[3.0], 2.0).unwrap(), vec![0.0]);
        assert!(slack_update(&[1.0], &[0.0], 0.0).is_err());
        assert!(slack_update(&[1.0], &[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn slack_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (p, eta, rho) = (
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.1..10.0),
            );
            let v = slack_update(&[p], &[eta], rho).unwrap()[0];
            let objective = |v: f64| eta * (p + v) + 0.5 * rho * (p + v) * (p + v);
            let best = (0..=100_000)
                .map(|k| k as f64 * 1e-4)
                .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
                .unwrap();
            assert!((v - best).abs() < 1e-3);
        }
    }

    #[test]
    fn dual_updates() {
        let mut s = state(0.5, 1.0, Some(0.0), 2.0, 4.0);
        dual_update_eta(&mut s, &[-0.5]).unwrap();
        assert_eq!(s.eta, vec![1.0]);
        let mut s = state(0.0, 0.0, Some(0.0), 2.0, 4.0);
        dual_update_eta(&mut s, &[0.3]).unwrap();
        assert!((s.eta[0] - 0.6).abs() < 1e-15);
        dual_update_zeta(&mut s, &[0.0]).unwrap();
        assert_eq!(s.zeta, vec![0.0]);
        dual_update_zeta(&mut s, &[0.25]).unwrap();
        assert_eq!(s.zeta, vec![1.0]);
        dual_update_zeta(&mut s, &[0.25]).unwrap();
        assert_eq!(s.zeta, vec![2.0]);
        assert!(dual_update_zeta(&mut s, &[0.25, 0.1]).is_err());
    }

    #[test]
    fn slack_then_eta_is_projected_ascent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let (p, eta, rho) = (
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.1..10.0),
            );
            let mut s = state(0.0, eta, None, rho, 1.0);
            s.v = slack_update(&[p], &s.eta, rho).unwrap();
            dual_update_eta(&mut s, &[p]).unwrap();
            assert!((s.eta[0] - (eta + rho * p).max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn inequality_kkt() {
        let g = inequality_problem();
        let out = outer_solve(&unit_band(3.0), &g, &tight()).unwrap();
        assert_eq!(out.status, OuterStatus::Converged);
        let x = out.band.poses()[0].x();
        assert!((x - 1.0).abs() < 1e-4, "x = {x}");
        assert!(
            (out.state.eta[0] - 2.0).abs() < 1e-3,
            "eta = {}",
            out.state.eta[0]
        );
        let k = kkt_residuals(&out.band, &g, &out.state).unwrap();
        assert!(
            k.primal_eq < 1e-3 && k.primal_ineq < 1e-3 && k.comp_slack < 1e-3 && k.dual_sign < 1e-3
        );
        assert!(monotonicity_check(&out.trace, 1e-8).passed);
    }

    #[test]
    fn equality_kkt() {
        let g = equality_problem();
        let out = outer_solve(&unit_band(0.0), &g, &tight()).unwrap();
        assert_eq!(out.status, OuterStatus::Converged);
        assert!((out.band.poses()[0].x() - 1.0).abs() < 1e-4);
        assert!((out.state.zeta[0] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn stationary_feasible_start_stops_at_once() {
        let g = FactorGraph::from_factors(vec![affine_factor(
            FactorKind::Inequality,
            vec![(0, 1.0)],
            -1.0,
            1.0,
        )]);
        let b = unit_band(0.5);
        let out = outer_solve(&b, &g, &VsConfig::default()).unwrap();
        assert_eq!(out.status, OuterStatus::Converged);
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.band, b);
    }

    #[test]
    fn kkt_examples() {
        let g = FactorGraph::from_factors(vec![
            affine_factor(FactorKind::Inequality, vec![(0, 1.0)], -1.0, 1.0),
            affine_factor(FactorKind::Equality, vec![(1, 1.0)], 0.2, 1.0),
        ]);
        let b = unit_band(0.5);
        let s = SlackState::initial(&g, &b, 10.0, 10.0).unwrap();
        let k = kkt_residuals(&b, &g, &s).unwrap();
        assert_eq!((k.primal_ineq, k.comp_slack, k.dual_sign), (0.0, 0.0, 0.0));
        assert!((k.primal_eq - 0.2).abs() < 1e-15);
    }

    fn trace_of(values: &[f64]) -> OuterTrace {
        OuterTrace {
            records: values
                .iter()
                .enumerate()
                .map(|(i, l)| OuterRecord {
                    iteration: i,
                    lagrangian: *l,
                    objective: 0.0,
                    primal_eq: 0.0,
                    primal_ineq: 0.0,
                    step: 0.0,
                    inner_iterations: 1,
                    inner_termination: Termination::Gradient,
                    inner_capped: false,
                    rho: 1.0,
                    mu: 1.0,
                    lemma: None,
                    wall_ms: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn monotonicity_examples() {
        let r = monotonicity_check(&trace_of(&[3.0, 2.0, 1.0]), 1e-8);
        assert!(r.passed && r.violations.is_empty());
        let r = monotonicity_check(&trace_of(&[3.0, 2.0, 2.0 + 1e-6, 1.0]), 1e-8);
        assert!(!r.passed);
        assert_eq!(r.violations.len(), 1);
        assert!((r.max_violation - 1e-6).abs() < 1e-12);

        let mut t = trace_of(&[3.0, 4.0, 1.0]);
        t.records[1].inner_capped = true;
        let r = monotonicity_check(&t, 1e-8);
        assert!(r.passed);
        assert_eq!(r.flagged, vec![1]);
    }

    #[test]
    fn deterministic_trace() {
        let g = inequality_problem();
        let a = outer_solve(&unit_band(3.0), &g, &VsConfig::default()).unwrap();
        let b = outer_solve(&unit_band(3.0), &g, &VsConfig::default()).unwrap();
        let (mut ta, mut tb) = (Vec::new(), Vec::new());
        a.trace.write_jsonl(&mut ta, false).unwrap();
        b.trace.write_jsonl(&mut tb, false).unwrap();
        assert_eq!(ta, tb);
        let first: serde_json::Value =
            serde_json::from_slice(ta.split(|c| *c == b'\n').next().unwrap()).unwrap();
        assert_eq!(first["iteration"], 0);
    }

    #[test]
    fn lemma_constants_of_identity_rows() {
        let g = FactorGraph::from_factors(vec![
            affine_factor(FactorKind::Inequality, vec![(0, 2.0)], 0.0, 1.0),
            affine_factor(FactorKind::Equality, vec![(1, 3.0)], 0.0, 1.0),
        ]);
        let e = lemma_constants(&unit_band(0.0), &g).unwrap();
        assert!((e.e_p - 2.0).abs() < 1e-12 && (e.e_c - 3.0).abs() < 1e-12);
    }
}

//! Levenberg-Marquardt over band coordinates for the penalized x-subproblem.

pub mod sparse;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::PathBuf;

use crate::band::{Pose2, TimedBand, DT_FLOOR};
use crate::error::{Error, Result};
use crate::factors::{block_coordinates, FactorGraph, FactorKind};
use sparse::{sparse_normal_solve, RowBuilder, SparseMatrix};

/// Flat coordinate vector of the free poses and intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Variables {
    start: Pose2,
    coords: Vec<f64>,
}

impl Variables {
    pub fn from_band(band: &TimedBand) -> Self {
        Self {
            start: *band.start(),
            coords: band.to_coordinates(),
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn start(&self) -> &Pose2 {
        &self.start
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn block_range(&self, block: usize) -> Range<usize> {
        block_coordinates(block)
    }

    pub fn to_band(&self) -> Result<TimedBand> {
        TimedBand::from_coordinates(self.start, &self.coords)
    }

    /// `self + delta`, clamped to the interval floor with headings rewrapped.
    pub fn stepped(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.coords.len() {
            return Err(Error::DimensionMismatch {
                what: "step vector",
                expected: self.coords.len(),
                got: delta.len(),
            });
        }
        let mut coords: Vec<f64> = self.coords.iter().zip(delta).map(|(x, d)| x + d).collect();
        project(&mut coords);
        Ok(Self {
            start: self.start,
            coords,
        })
    }
}

fn project(coords: &mut [f64]) {
    for c in coords.chunks_exact_mut(4) {
        c[2] = crate::band::normalize_angle(c[2]);
        c[3] = c[3].max(DT_FLOOR);
    }
}

/// A least-squares problem over band coordinates with `cost == 0.5 * |r|^2`.
pub trait NllsProblem {
    fn cost(&self, band: &TimedBand) -> Result<f64>;
    fn linearize(&self, band: &TimedBand) -> Result<(SparseMatrix, Vec<f64>)>;
}

/// Objective factors plus the split-constraint penalty terms.
#[derive(Debug, Clone)]
pub struct SubproblemSpec<'a> {
    pub graph: &'a FactorGraph,
    /// Slacks, one per inequality row.
    pub v: Vec<f64>,
    pub eta: Vec<f64>,
    /// Duals, one per equality row.
    pub zeta: Vec<f64>,
    pub rho: f64,
    pub mu: f64,
}

impl<'a> SubproblemSpec<'a> {
    pub fn new(
        graph: &'a FactorGraph,
        v: Vec<f64>,
        eta: Vec<f64>,
        zeta: Vec<f64>,
        rho: f64,
        mu: f64,
    ) -> Result<Self> {
        let spec = Self {
            graph,
            v,
            eta,
            zeta,
            rho,
            mu,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Problem with no constraint rows: plain weighted least squares.
    pub fn unconstrained(graph: &'a FactorGraph) -> Result<Self> {
        let n_p = graph.dim_of(FactorKind::Inequality);
        let n_c = graph.dim_of(FactorKind::Equality);
        Self::new(
            graph,
            vec![0.0; n_p],
            vec![0.0; n_p],
            vec![0.0; n_c],
            1.0,
            1.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.mu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "penalties must be positive (rho {}, mu {})",
                self.rho, self.mu
            )));
        }
        let n_p = self.graph.dim_of(FactorKind::Inequality);
        let n_c = self.graph.dim_of(FactorKind::Equality);
        for (what, expected, got) in [
            ("slack", n_p, self.v.len()),
            ("eta", n_p, self.eta.len()),
            ("zeta", n_c, self.zeta.len()),
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

/// `sum r_f^2 + rho/2 |p + v + eta/rho|^2 + mu/2 |c + zeta/mu|^2`.
pub fn subproblem_cost(spec: &SubproblemSpec<'_>, band: &TimedBand) -> Result<f64> {
    let (rho, mu) = (spec.rho, spec.mu);
    let mut total = 0.0;
    let (mut ip, mut ic) = (0, 0);
    for f in spec.graph.factors() {
        let r = f.eval(band)?;
        match f.kind() {
            FactorKind::Objective => total += r.iter().map(|x| x * x).sum::<f64>(),
            FactorKind::Inequality => {
                for p in r {
                    let e = p + spec.v[ip] + spec.eta[ip] / rho;
                    total += 0.5 * rho * e * e;
                    ip += 1;
                }
            }
            FactorKind::Equality => {
                for c in r {
                    let e = c + spec.zeta[ic] / mu;
                    total += 0.5 * mu * e * e;
                    ic += 1;
                }
            }
        }
    }
    Ok(total)
}

/// Residual rows whose half squared norm is `subproblem_cost`. Objective rows
/// are scaled by `sqrt(2)`, penalty rows by `sqrt(rho)` and `sqrt(mu)`.
pub fn linearize(spec: &SubproblemSpec<'_>, band: &TimedBand) -> Result<(SparseMatrix, Vec<f64>)> {
    let (rho, mu) = (spec.rho, spec.mu);
    let mut rows = RowBuilder::new(band.num_coordinates());
    let mut r = Vec::new();
    let (mut ip, mut ic) = (0, 0);
    for f in spec.graph.factors() {
        let vals = f.eval(band)?;
        let jac = f.jacobian(band)?;
        for (k, val) in vals.into_iter().enumerate() {
            let (scale, value) = match f.kind() {
                FactorKind::Objective => (std::f64::consts::SQRT_2, val),
                FactorKind::Inequality => {
                    let e = val + spec.v[ip] + spec.eta[ip] / rho;
                    ip += 1;
                    (rho.sqrt(), e)
                }
                FactorKind::Equality => {
                    let e = val + spec.zeta[ic] / mu;
                    ic += 1;
                    (mu.sqrt(), e)
                }
            };
            r.push(scale * value);
            rows.push_row(jac.row(k).map(|(c, v)| (c, scale * v)));
        }
    }
    Ok((rows.build(), r))
}

impl NllsProblem for SubproblemSpec<'_> {
    fn cost(&self, band: &TimedBand) -> Result<f64> {
        subproblem_cost(self, band)
    }

    fn linearize(&self, band: &TimedBand) -> Result<(SparseMatrix, Vec<f64>)> {
        linearize(self, band)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    /// Writes `jac_NNN.txt` and `res_NNN.txt` per iteration when set.
    pub dump_dir: Option<PathBuf>,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 1.0 / 3.0,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            cost_tolerance: 1e-10,
            dump_dir: None,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.initial_damping,
            self.damping_up,
            self.damping_down,
            self.gradient_tolerance,
            self.step_tolerance,
            self.cost_tolerance,
        ]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite());
        if !positive
            || self.max_iterations == 0
            || !(self.damping_up > 1.0 && self.damping_down < 1.0)
        {
            return Err(Error::InvalidParameter(format!(
                "invalid LM config {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Step,
    Cost,
    MaxIterations,
    /// Damping grew past its ceiling without an acceptable step.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LmStats {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub termination: Termination,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
}

const MAX_DAMPING: f64 = 1e16;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dump(dir: &std::path::Path, iteration: usize, jac: &SparseMatrix, r: &[f64]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    jac.write_triplets(BufWriter::new(File::create(
        dir.join(format!("jac_{iteration:03}.txt")),
    )?))?;
    let mut w = BufWriter::new(File::create(dir.join(format!("res_{iteration:03}.txt")))?);
    for v in r {
        writeln!(w, "{v:e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Minimizes `problem` from `band0`. The result never costs more than `band0`.
pub fn lm_solve<P: NllsProblem + ?Sized>(
    problem: &P,
    band0: &TimedBand,
    config: &LmConfig,
) -> Result<(TimedBand, LmStats)> {
    config.validate()?;
    let mut vars = Variables::from_band(band0);
    let mut band = band0.clone();
    let mut cost = problem.cost(&band)?;
    if !cost.is_finite() {
        return Err(Error::NonFiniteCost { iteration: 0 });
    }
    let mut stats = LmStats {
        iterations: 0,
        gradient_norm: f64::NAN,
        termination: Termination::MaxIterations,
        initial_cost: cost,
        final_cost: cost,
        cost_trace: vec![cost],
    };
    let mut lambda = config.initial_damping;
    loop {
        let (jac, r) = problem.linearize(&band)?;
        stats.gradient_norm = inf_norm(&jac.transpose_mul_vec(&r));
        if !stats.gradient_norm.is_finite() {
            return Err(Error::NonFiniteCost {
                iteration: stats.iterations,
            });
        }
        if stats.gradient_norm < config.gradient_tolerance {
            stats.termination = Termination::Gradient;
            break;
        }
        if stats.iterations >= config.max_iterations {
            stats.termination = Termination::MaxIterations;
            break;
        }
        if let Some(dir) = &config.dump_dir {
            dump(dir, stats.iterations, &jac, &r)?;
        }
        stats.iterations += 1;

        let accepted = loop {
            let delta = match sparse_normal_solve(&jac, &r, lambda) {
                Ok(d) => d,
                Err(Error::SingularSystem { .. }) if lambda < MAX_DAMPING => {
                    lambda *= config.damping_up;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let trial = vars.stepped(&delta)?;
            let trial_band = trial.to_band();
            let trial_cost = match &trial_band {
                Ok(b) => problem.cost(b)?,
                Err(_) => f64::NAN,
            };
            if trial_cost.is_finite() && trial_cost < cost {
                lambda = (lambda * config.damping_down).max(1e-15);
                break Some((trial, trial_band?, trial_cost));
            }
            lambda *= config.damping_up;
            if lambda > MAX_DAMPING {
                break None;
            }
        };
        let Some((trial, trial_band, trial_cost)) = accepted else {
            stats.termination = Termination::Stalled;
            break;
        };
        let step: Vec<f64> = trial
            .coords()
            .iter()
            .zip(vars.coords())
            .map(|(a, b)| a - b)
            .collect();
        let step_small = inf_norm(&step)
            <= config.step_tolerance * (inf_norm(vars.coords()) + config.step_tolerance);
        let cost_small = (cost - trial_cost) <= config.cost_tolerance * cost.max(f64::MIN_POSITIVE);
        vars = trial;
        band = trial_band;
        cost = trial_cost;
        stats.cost_trace.push(cost);
        if step_small {
            stats.termination = Termination::Step;
            break;
        }
        if cost_small {
            stats.termination = Termination::Cost;
            break;
        }
    }
    stats.final_cost = cost;
    Ok((band, stats))
}

//! Backward dynamic programming for
//! `Y_t = ξ + ∫f(s,Y,Z,V)ds − ∫Z dB − ∫∫V dμ̃ − ∫dM` on the lattice.

mod checks;
pub(crate) mod engine;

pub use checks::{
    apriori_report, comparison_check, convexity_gap, ito_remainder, truncation_study, AprioriReport,
    ComparisonReport, TruncationRow, TruncationStudy,
};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::drivers::{Driver, TerminalCondition};
use crate::error::{Error, Result};
use crate::lattice::{FactorModel, Lattice};
use engine::{backward, Increments, StepRule};

/// Starting point of the one-step Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PicardInit {
    #[default]
    ConditionalMean,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub p: f64,
    pub beta: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub implicit: bool,
    #[serde(default)]
    pub init: PicardInit,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            p: 1.5,
            beta: 0.0,
            picard_tol: 1e-12,
            picard_max_iters: 200,
            implicit: true,
            init: PicardInit::ConditionalMean,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p < 2.0) {
            return Err(Error::InvalidArgument(format!("p must lie in (1,2), got {}", self.p)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("β must be nonnegative, got {}", self.beta)));
        }
        if !(self.picard_tol > 0.0) || self.picard_max_iters == 0 {
            return Err(Error::InvalidArgument("Picard tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// `(2/p)·(p/(2ε) + p/(p−1) + (p−1))`.
pub fn beta_threshold(p: f64, epsilon: f64) -> f64 {
    (2.0 / p) * (p / (2.0 * epsilon) + p / (p - 1.0) + (p - 1.0))
}

/// Default β: 5% above the threshold.
pub fn auto_beta(p: f64, epsilon: f64) -> f64 {
    1.05 * beta_threshold(p, epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PicardStats {
    pub total_iterations: usize,
    pub max_iterations: usize,
    /// Largest measured ratio of successive Picard corrections.
    pub max_contraction: f64,
    /// Largest `θ·dt` over the nodes (the one-step contraction bound).
    pub max_predicted: f64,
}

/// Discrete solution. Mark fields are stored `v[k][s·m + i]` and orthogonal
/// increments `dm[k][s·n_out + o]`; `drift` is the value of the generator
/// used in the one-step equation and `dk` the reflection (or penalty) push.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub(crate) model: FactorModel,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub dm: Vec<Vec<f64>>,
    pub drift: Vec<Vec<f64>>,
    pub dk: Option<Vec<Vec<f64>>>,
    pub stats: PicardStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantReport {
    pub terminal_mismatch: f64,
    pub identity_residual: f64,
    pub orthogonality_db: f64,
    pub orthogonality_jump: f64,
    pub orthogonality_mean: f64,
    pub max_abs_dm: f64,
    pub min_dk: f64,
}

impl InvariantReport {
    pub fn pass(&self) -> bool {
        self.terminal_mismatch == 0.0
            && self.identity_residual <= 1e-10
            && self.orthogonality_db <= 1e-12
            && self.orthogonality_jump <= 1e-12
            && self.orthogonality_mean <= 1e-12
            && self.min_dk >= 0.0
    }
}

impl Solution {
    pub fn model(&self) -> &FactorModel {
        &self.model
    }

    pub fn y0(&self) -> f64 {
        self.y[0][0]
    }

    pub fn steps(&self) -> usize {
        self.z.len()
    }

    pub fn n_marks(&self) -> usize {
        self.model.n_marks()
    }

    pub fn v_at(&self, k: usize, s: usize) -> &[f64] {
        let m = self.n_marks();
        &self.v[k][s * m..(s + 1) * m]
    }

    fn ensure_same_model(&self, other: &Solution) -> Result<()> {
        if self.model != other.model {
            return Err(Error::InvalidArgument("solutions live on different models".into()));
        }
        Ok(())
    }

    /// Componentwise `self − other`.
    pub fn difference(&self, other: &Solution) -> Result<Solution> {
        self.ensure_same_model(other)?;
        let sub = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
                .collect()
        };
        let zeros = |a: &[Vec<f64>]| -> Vec<Vec<f64>> { a.iter().map(|r| vec![0.0; r.len()]).collect() };
        let dk = match (&self.dk, &other.dk) {
            (None, None) => None,
            (Some(a), Some(b)) => Some(sub(a, b)),
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(sub(&zeros(b), b)),
        };
        Ok(Solution {
            model: self.model.clone(),
            y: sub(&self.y, &other.y),
            z: sub(&self.z, &other.z),
            v: sub(&self.v, &other.v),
            dm: sub(&self.dm, &other.dm),
            drift: sub(&self.drift, &other.drift),
            dk,
            stats: PicardStats::default(),
        })
    }

    /// Largest nodewise `|Y − Y′|`.
    pub fn max_y_gap(&self, other: &Solution) -> Result<f64> {
        self.ensure_same_model(other)?;
        Ok(self
            .y
            .iter()
            .zip(&other.y)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max))
    }

    /// Terminal match, one-step identity and conditional orthogonality of `ΔM`.
    pub fn check_invariants(&self, lattice: &Lattice, terminal: &[f64]) -> Result<InvariantReport> {
        if lattice.model() != &self.model {
            return Err(Error::InvalidArgument("solution and lattice differ".into()));
        }
        let n = lattice.steps();
        let m = lattice.n_marks();
        let n_out = lattice.n_outcomes();
        let dt = lattice.dt();
        let probs = lattice.outcome_probs();
        let db = lattice.db();
        let mut r = InvariantReport {
            terminal_mismatch: self.y[n]
                .iter()
                .zip(terminal)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            identity_residual: 0.0,
            orthogonality_db: 0.0,
            orthogonality_jump: 0.0,
            orthogonality_mean: 0.0,
            max_abs_dm: 0.0,
            min_dk: 0.0,
        };
        for k in 0..n {
            for s in 0..lattice.n_states(k) {
                let dk = self.dk.as_ref().map_or(0.0, |d| d[k][s]);
                r.min_dk = r.min_dk.min(dk);
                let v = self.v_at(k, s);
                let dm = &self.dm[k][s * n_out..(s + 1) * n_out];
                let (mut e_db, mut e_mean) = (0.0, 0.0);
                let mut e_jump = vec![0.0; m];
                for o in 0..n_out {
                    let mut rhs = self.y[k][s] - self.drift[k][s] * dt - dk + self.z[k][s] * db[o] + dm[o];
                    for (i, vi) in v.iter().enumerate() {
                        rhs += vi * lattice.jump_increment(o, i);
                    }
                    let next = self.y[k + 1][lattice.successor(k, s, o)];
                    r.identity_residual = r.identity_residual.max((next - rhs).abs());
                    r.max_abs_dm = r.max_abs_dm.max(dm[o].abs());
                    e_db += probs[o] * dm[o] * db[o];
                    e_mean += probs[o] * dm[o];
                    for (i, e) in e_jump.iter_mut().enumerate() {
                        *e += probs[o] * dm[o] * lattice.jump_increment(o, i);
                    }
                }
                r.orthogonality_db = r.orthogonality_db.max(e_db.abs());
                r.orthogonality_mean = r.orthogonality_mean.max(e_mean.abs());
                for e in e_jump {
                    r.orthogonality_jump = r.orthogonality_jump.max(e.abs());
                }
            }
        }
        Ok(r)
    }

    /// Columnar CSV: `k,state,Y,Z,V_1..V_m,dK` (blank `Z`, `V`, `dK` at `k = N`).
    pub fn to_csv(&self) -> String {
        let m = self.n_marks();
        let n = self.steps();
        let mut out = String::from("k,state,Y,Z");
        for i in 0..m {
            let _ = write!(out, ",V_{}", i + 1);
        }
        out.push_str(",dK\n");
        for k in 0..=n {
            for s in 0..self.y[k].len() {
                let _ = write!(out, "{k},{s},{:.16e}", self.y[k][s]);
                if k < n {
                    let _ = write!(out, ",{:.16e}", self.z[k][s]);
                    for x in self.v_at(k, s) {
                        let _ = write!(out, ",{x:.16e}");
                    }
                    let dk = self.dk.as_ref().map_or(0.0, |d| d[k][s]);
                    let _ = writeln!(out, ",{dk:.16e}");
                } else {
                    out.push_str(&",".repeat(m + 2));
                    out.push('\n');
                }
            }
        }
        out
    }
}

/// Result of projecting a successor field on the factor increments.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub cond_mean: f64,
    pub z: f64,
    pub v: Vec<f64>,
    pub dm: Vec<f64>,
}

/// `project_increment(next)`: conditional mean, `Z`, `V` and the orthogonal
/// residual for values indexed by outcome. Marks with zero intensity get
/// `V = 0`.
pub fn project_increment(lattice: &Lattice, next: &[f64]) -> Result<Projection> {
    if next.len() != lattice.n_outcomes() {
        return Err(Error::InvalidArgument(format!(
            "expected {} outcome values, got {}",
            lattice.n_outcomes(),
            next.len()
        )));
    }
    let mut v = vec![0.0; lattice.n_marks()];
    let mut dm = vec![0.0; next.len()];
    let (cond_mean, z) = Increments::new(lattice).project(lattice, next, &mut v, &mut dm);
    Ok(Projection { cond_mean, z, v, dm })
}

/// `solve(model, f, ξ, params)`.
pub fn solve(lattice: &Lattice, f: &dyn Driver, xi: &TerminalCondition, params: &SolverParams) -> Result<Solution> {
    backward(lattice, f, xi.values(lattice), params, StepRule::Plain)
}

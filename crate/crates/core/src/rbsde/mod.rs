//! Reflected equations: `Y ≥ L` enforced by a nondecreasing `K` with
//! `∫(Y − L)dK = 0`, solved by reflected dynamic programming and by
//! penalization.

mod studies;

pub use studies::{
    contraction_study, first_hitting_value, penalization_study, policy_value, snell_envelope, stopping_value,
    ContractionStudy, PenalizationStudy, PenaltyRow,
};

use std::fmt;

use serde::Serialize;

use crate::bsde::engine::{backward, StepRule};
use crate::bsde::{Solution, SolverParams};
use crate::drivers::{Driver, TerminalCondition};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, Node, WeightProcesses};
use crate::paths::{evaluate, Evaluation, Field, PathFunctional};

/// Level used for an obstacle that never binds.
pub const NEVER_BINDING: f64 = -1e9;

/// Lower barrier `L` per node. Built from functions of the Markov state, so
/// its jumps in time happen only through the state's own increments.
#[derive(Clone)]
pub struct Obstacle {
    values: Vec<Vec<f64>>,
    label: String,
}

impl Obstacle {
    pub fn new<F>(lattice: &Lattice, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&Node<'_>) -> f64,
    {
        let values = (0..=lattice.steps())
            .map(|k| (0..lattice.n_states(k)).map(|s| f(&lattice.node(k, s))).collect())
            .collect();
        Self {
            values,
            label: label.into(),
        }
    }

    pub fn never(lattice: &Lattice) -> Self {
        Self::new(lattice, "never", |_| NEVER_BINDING)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn at(&self, k: usize, s: usize) -> f64 {
        self.values[k][s]
    }

    /// `L_N ≤ ξ` on every terminal state.
    pub fn validate(&self, lattice: &Lattice, terminal: &[f64]) -> Result<()> {
        let n = lattice.steps();
        if self.values.len() != n + 1 || (0..=n).any(|k| self.values[k].len() != lattice.n_states(k)) {
            return Err(Error::InvalidArgument("obstacle does not match the lattice".into()));
        }
        for (s, (l, x)) in self.values[n].iter().zip(terminal).enumerate() {
            if l > x {
                return Err(Error::InvalidObstacle {
                    state: lattice.node(n, s).state.to_string(),
                    obstacle: *l,
                    terminal: *x,
                });
            }
        }
        Ok(())
    }

    /// `max e^{(q/2)βA}·L⁺` over all nodes.
    pub fn positive_part_bound(&self, weights: &WeightProcesses, beta: f64) -> f64 {
        let mut out: f64 = 0.0;
        for (k, row) in self.values.iter().enumerate() {
            for (s, l) in row.iter().enumerate() {
                out = out.max((0.5 * weights.q * beta * weights.cumulative[k][s]).exp() * l.max(0.0));
            }
        }
        out
    }
}

impl fmt::Debug for Obstacle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Obstacle({})", self.label)
    }
}

/// Reflected dynamic programming: `Y = max(Ỹ, L)`, pushing by `ΔK` exactly
/// when the obstacle binds.
pub fn solve_dp(
    lattice: &Lattice,
    f: &dyn Driver,
    xi: &TerminalCondition,
    obstacle: &Obstacle,
    params: &SolverParams,
) -> Result<Solution> {
    let terminal = xi.values(lattice);
    obstacle.validate(lattice, &terminal)?;
    backward(lattice, f, terminal, params, StepRule::Reflected { obstacle: &obstacle.values })
}

/// Penalized equation with driver `f + n·(y − L)⁻`. The returned `dk` holds
/// the penalty increments `n·(Y − L)⁻·dt`, so `K^n` is their running sum.
pub fn solve_penalized(
    lattice: &Lattice,
    f: &dyn Driver,
    xi: &TerminalCondition,
    obstacle: &Obstacle,
    n: f64,
    params: &SolverParams,
) -> Result<Solution> {
    if !(n >= 0.0) {
        return Err(Error::InvalidArgument(format!("penalty level must be nonnegative, got {n}")));
    }
    let terminal = xi.values(lattice);
    obstacle.validate(lattice, &terminal)?;
    backward(
        lattice,
        f,
        terminal,
        params,
        StepRule::Penalized {
            obstacle: &obstacle.values,
            n,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SkorokhodReport {
    /// `max |(Y_k − L_k)·ΔK_k|` over nodes.
    pub node_max: f64,
    /// `max` over paths of `Σ_k |(Y_k − L_k)·ΔK_k|`.
    pub path_max: f64,
}

pub fn skorokhod_check(lattice: &Lattice, sol: &Solution, obstacle: &Obstacle) -> Result<SkorokhodReport> {
    let dk = sol
        .dk
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("solution carries no K".into()))?;
    let n = lattice.steps();
    let mut node_max: f64 = 0.0;
    let mut best = vec![0.0; lattice.n_states(n)];
    for k in (0..n).rev() {
        let mut row = Vec::with_capacity(lattice.n_states(k));
        for s in 0..lattice.n_states(k) {
            let r = ((sol.y[k][s] - obstacle.at(k, s)) * dk[k][s]).abs();
            node_max = node_max.max(r);
            let tail = (0..lattice.n_outcomes())
                .filter(|&o| lattice.outcome_probs()[o] > 0.0)
                .map(|o| best[lattice.successor(k, s, o)])
                .fold(0.0, f64::max);
            row.push(r + tail);
        }
        best = row;
    }
    Ok(SkorokhodReport {
        node_max,
        path_max: best[0],
    })
}

/// `(E[K_N^p])^{1/p}` for the pushes stored in `sol`.
pub fn k_norm(lattice: &Lattice, sol: &Solution, p: f64, evaluation: Evaluation) -> Result<f64> {
    let dk = sol
        .dk
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("solution carries no K".into()))?;
    let mut pf = PathFunctional::new();
    let slot = pf.sum_pow(Field::Node(dk), p);
    let e = evaluate(lattice, &pf, evaluation)?.sum(slot);
    Ok(if e > 0.0 { e.powf(1.0 / p) } else { 0.0 })
}

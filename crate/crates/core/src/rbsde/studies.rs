use serde::Serialize;

use super::{k_norm, skorokhod_check, solve_dp, solve_penalized, Obstacle};
use crate::bsde::{Solution, SolverParams};
use crate::drivers::{Driver, FrozenDriver, TerminalCondition};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, WeightProcesses};
use crate::paths::Evaluation;
use crate::spaces::weighted_norm_report;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltyRow {
    pub n: f64,
    pub y0: f64,
    /// `max (Y^n − L)⁻` over nodes.
    pub shortfall: f64,
    /// `𝔅`-norm of `Y^n − Y`.
    pub b_error: f64,
    /// `max |Y^n − Y|` over nodes.
    pub sup_error: f64,
    /// `max |(Y^n − L)ΔK^n|` over nodes.
    pub skorokhod: f64,
    /// `(E[(K^n_T)^p])^{1/p}`.
    pub k_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenalizationStudy {
    pub reference_y0: f64,
    pub reference_k_norm: f64,
    pub rows: Vec<PenaltyRow>,
    /// Largest `Y^{n_j} − Y^{n_{j+1}}` over nodes and consecutive levels;
    /// nonpositive when the approximations increase nodewise.
    pub monotonicity_violation: f64,
}

impl PenalizationStudy {
    pub fn monotone(&self) -> bool {
        self.monotonicity_violation <= 1e-12
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,y0,shortfall,b_error,sup_error,skorokhod,k_norm\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.n, r.y0, r.shortfall, r.b_error, r.sup_error, r.skorokhod, r.k_norm
            ));
        }
        out
    }
}

/// Penalized solutions along an increasing schedule against the reflected
/// dynamic-programming solution.
#[allow(clippy::too_many_arguments)]
pub fn penalization_study(
    lattice: &Lattice,
    f: &dyn Driver,
    xi: &TerminalCondition,
    obstacle: &Obstacle,
    schedule: &[f64],
    params: &SolverParams,
    weights: &WeightProcesses,
    evaluation: Evaluation,
) -> Result<PenalizationStudy> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("penalty schedule is empty".into()));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("penalty schedule must increase".into()));
    }
    let p = weights.p;
    let reference = solve_dp(lattice, f, xi, obstacle, params)?;
    let reference_k_norm = k_norm(lattice, &reference, p, evaluation)?;
    let mut rows = Vec::with_capacity(schedule.len());
    let mut violation = f64::NEG_INFINITY;
    let mut prev: Option<Solution> = None;
    for &n in schedule {
        let sol = solve_penalized(lattice, f, xi, obstacle, n, params)?;
        let mut shortfall: f64 = 0.0;
        for (k, row) in sol.y.iter().enumerate() {
            for (s, y) in row.iter().enumerate() {
                shortfall = shortfall.max(obstacle.at(k, s) - y);
            }
        }
        let diff = sol.difference(&reference)?;
        let b_error = weighted_norm_report(lattice, &diff, weights, params.beta, evaluation)?.b_p_beta();
        if let Some(pr) = &prev {
            for (a, b) in pr.y.iter().zip(&sol.y) {
                for (x, y) in a.iter().zip(b) {
                    violation = violation.max(x - y);
                }
            }
        }
        rows.push(PenaltyRow {
            n,
            y0: sol.y0(),
            shortfall,
            b_error,
            sup_error: sol.max_y_gap(&reference)?,
            skorokhod: skorokhod_check(lattice, &sol, obstacle)?.node_max,
            k_norm: k_norm(lattice, &sol, p, evaluation)?,
        });
        prev = Some(sol);
    }
    Ok(PenalizationStudy {
        reference_y0: reference.y0(),
        reference_k_norm,
        rows,
        monotonicity_violation: if violation.is_finite() { violation } else { 0.0 },
    })
}

fn require_exogenous(lattice: &Lattice, f: &dyn Driver) -> Result<()> {
    if f.is_exogenous() {
        return Ok(());
    }
    Err(Error::Inapplicable {
        hypothesis: "optimal stopping needs a driver that ignores (y, z, v)",
        k: 0,
        state: lattice.node(0, 0).state.to_string(),
        detail: format!("{f:?}"),
    })
}

/// Backward recursion for `stop(k, s)`-rules: stopping at `k < N` pays
/// `L_k`, running costs accrue as `f·dt`, and `ξ` is paid at the horizon.
fn stopped_value<S>(lattice: &Lattice, f: &dyn Driver, xi: &TerminalCondition, obstacle: &Obstacle, stop: S) -> Vec<Vec<f64>>
where
    S: Fn(usize, usize, f64, f64) -> Option<f64>,
{
    let n = lattice.steps();
    let dt = lattice.dt();
    let mut w = vec![Vec::new(); n + 1];
    w[n] = xi.values(lattice);
    for k in (0..n).rev() {
        let next = &w[k + 1];
        let row = (0..lattice.n_states(k))
            .map(|s| {
                let cont = lattice.conditional_mean(k, s, next) + f.eval(&lattice.node(k, s), 0.0, 0.0, &[]) * dt;
                stop(k, s, cont, obstacle.at(k, s)).unwrap_or(cont)
            })
            .collect();
        w[k] = row;
    }
    w
}

/// Discrete Snell envelope `W_k = max(L_k, E_k[W_{k+1}] + f·dt)`, `W_N = ξ`.
pub fn snell_envelope(
    lattice: &Lattice,
    f: &dyn Driver,
    xi: &TerminalCondition,
    obstacle: &Obstacle,
) -> Result<Vec<Vec<f64>>> {
    require_exogenous(lattice, f)?;
    obstacle.validate(lattice, &xi.values(lattice))?;
    Ok(stopped_value(lattice, f, xi, obstacle, |_, _, cont, l| Some(cont.max(l))))
}

/// Optimal stopping value `sup_τ E[∫_0^τ f dt + L_τ 1{τ<T} + ξ 1{τ=T}]`.
pub fn stopping_value(lattice: &Lattice, f: &dyn Driver, xi: &TerminalCondition, obstacle: &Obstacle) -> Result<f64> {
    Ok(snell_envelope(lattice, f, xi, obstacle)?[0][0])
}

/// Value of the Markov rule that stops at node `(k, s)`, `k < N`, iff
/// `stop(k, s)`.
pub fn policy_value<S>(
    lattice: &Lattice,
    f: &dyn Driver,
    xi: &TerminalCondition,
    obstacle: &Obstacle,
    stop: S,
) -> Result<f64>
where
    S: Fn(usize, usize) -> bool,
{
    require_exogenous(lattice, f)?;
    obstacle.validate(lattice, &xi.values(lattice))?;
    let w = stopped_value(lattice, f, xi, obstacle, |k, s, _, l| stop(k, s).then_some(l));
    Ok(w[0][0])
}

/// Value of the first time the envelope touches the obstacle.
pub fn first_hitting_value(
    lattice: &Lattice,
    f: &dyn Driver,
    xi: &TerminalCondition,
    obstacle: &Obstacle,
) -> Result<f64> {
    let w = snell_envelope(lattice, f, xi, obstacle)?;
    policy_value(lattice, f, xi, obstacle, |k, s| w[k][s] == obstacle.at(k, s))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionStudy {
    /// `‖U^{j+1} − U^j‖` in `S^{p,A}_β × H × 𝔏 × ℳ`.
    pub differences: Vec<f64>,
    /// Successive ratios, kept while the denominator exceeds `1e-9·D_0`.
    pub ratios: Vec<f64>,
    pub median_ratio: f64,
    pub iterations: usize,
    pub converged: bool,
    pub y0: f64,
}

/// Iterates `Ψ`: freeze `f` at the previous `(Y, Z, V)` and solve the reflected
/// equation with that exogenous driver, starting from zero.
#[allow(clippy::too_many_arguments)]
pub fn contraction_study(
    lattice: &Lattice,
    f: &dyn Driver,
    xi: &TerminalCondition,
    obstacle: &Obstacle,
    params: &SolverParams,
    weights: &WeightProcesses,
    evaluation: Evaluation,
    max_iterations: usize,
) -> Result<ContractionStudy> {
    let n = lattice.steps();
    let m = lattice.n_marks();
    let zeros = |len: usize, w: usize| -> Vec<Vec<f64>> { (0..len).map(|k| vec![0.0; lattice.n_states(k) * w]).collect() };
    let frozen = FrozenDriver::freeze(lattice, f, &zeros(n + 1, 1), &zeros(n, 1), &zeros(n, m));
    let mut current = solve_dp(lattice, &frozen, xi, obstacle, params)?;
    let mut differences = Vec::new();
    let mut converged = false;
    for _ in 0..max_iterations {
        let frozen = FrozenDriver::freeze(lattice, f, &current.y, &current.z, &current.v);
        let next = solve_dp(lattice, &frozen, xi, obstacle, params)?;
        let d = weighted_norm_report(lattice, &next.difference(&current)?, weights, params.beta, evaluation)?
            .product_norm();
        differences.push(d);
        current = next;
        if d <= 1e-10 * differences[0] {
            converged = true;
            break;
        }
    }
    let d0 = differences.first().copied().unwrap_or(0.0);
    let mut ratios: Vec<f64> = differences
        .windows(2)
        .filter(|w| w[0] > 1e-9 * d0)
        .map(|w| w[1] / w[0])
        .collect();
    let median_ratio = if ratios.is_empty() {
        0.0
    } else {
        let mut sorted = ratios.clone();
        sorted.sort_by(f64::total_cmp);
        let h = sorted.len() / 2;
        if sorted.len() % 2 == 1 {
            sorted[h]
        } else {
            0.5 * (sorted[h - 1] + sorted[h])
        }
    };
    ratios.shrink_to_fit();
    Ok(ContractionStudy {
        iterations: differences.len(),
        differences,
        ratios,
        median_ratio,
        converged,
        y0: current.y0(),
    })
}

use serde::Serialize;

use super::{beta_threshold, solve, Solution, SolverParams};
use crate::drivers::{truncate, Driver, DriverRef, TerminalCondition};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, WeightProcesses};
use crate::paths::{evaluate, slice_expectation, Evaluation, Field, PathFunctional};
use crate::spaces::{weighted_norm_report, NormReport};

const COMPARISON_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub max_gap: f64,
    pub worst_k: usize,
    pub worst_state: String,
    pub pass: bool,
}

/// Checks `ξ¹ ≤ ξ²` and `f₁ ≤ f₂` along the first solution, then reports
/// `max (Y¹ − Y²)` over all nodes.
#[allow(clippy::too_many_arguments)]
pub fn comparison_check(
    lattice: &Lattice,
    sol1: &Solution,
    f1: &dyn Driver,
    xi1: &TerminalCondition,
    sol2: &Solution,
    f2: &dyn Driver,
    xi2: &TerminalCondition,
) -> Result<ComparisonReport> {
    sol1.ensure_same_model(sol2)?;
    let n = lattice.steps();
    for s in 0..lattice.n_states(n) {
        let node = lattice.node(n, s);
        let (a, b) = (xi1.value(&node), xi2.value(&node));
        if a > b + COMPARISON_TOL {
            return Err(Error::Inapplicable {
                hypothesis: "terminal ordering ξ¹ ≤ ξ²",
                k: n,
                state: node.state.to_string(),
                detail: format!("ξ¹ = {a}, ξ² = {b}"),
            });
        }
    }
    for k in 0..n {
        for s in 0..lattice.n_states(k) {
            let node = lattice.node(k, s);
            let (y, z, v) = (sol1.y[k][s], sol1.z[k][s], sol1.v_at(k, s));
            let (a, b) = (f1.eval(&node, y, z, v), f2.eval(&node, y, z, v));
            if a > b + COMPARISON_TOL {
                return Err(Error::Inapplicable {
                    hypothesis: "driver ordering f₁ ≤ f₂ along the first solution",
                    k,
                    state: node.state.to_string(),
                    detail: format!("f₁ = {a}, f₂ = {b}"),
                });
            }
        }
    }
    let mut report = ComparisonReport {
        max_gap: f64::NEG_INFINITY,
        worst_k: 0,
        worst_state: String::new(),
        pass: true,
    };
    for k in 0..=n {
        for s in 0..lattice.n_states(k) {
            let gap = sol1.y[k][s] - sol2.y[k][s];
            if gap > report.max_gap {
                report.max_gap = gap;
                report.worst_k = k;
                report.worst_state = lattice.node(k, s).state.to_string();
            }
        }
    }
    report.pass = report.max_gap <= COMPARISON_TOL;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriReport {
    /// Sum of the five `p`-th power terms for the differences.
    pub lhs: f64,
    /// `E[e^{(p/2)βA_T}|ξ̄|^p] + E[(∫e^{βA}|f̄/a|²ds)^{p/2}]`.
    pub rhs: f64,
    pub xi_term: f64,
    pub driver_term: f64,
    pub norms: NormReport,
}

/// Both sides of the a priori estimate for two solved data sets.
#[allow(clippy::too_many_arguments)]
pub fn apriori_report(
    lattice: &Lattice,
    sol: &Solution,
    f: &dyn Driver,
    xi: &TerminalCondition,
    sol2: &Solution,
    f2: &dyn Driver,
    xi2: &TerminalCondition,
    weights: &WeightProcesses,
    beta: f64,
    evaluation: Evaluation,
) -> Result<AprioriReport> {
    let p = weights.p;
    let threshold = beta_threshold(p, weights.epsilon);
    if !(beta > threshold) {
        return Err(Error::BetaBelowThreshold { beta, threshold });
    }
    let diff = sol.difference(sol2)?;
    let norms = weighted_norm_report(lattice, &diff, weights, beta, evaluation)?;
    let lhs = norms.lhs_sum();

    let n = lattice.steps();
    let (a, b) = (xi.values(lattice), xi2.values(lattice));
    let xi_field: Vec<f64> = (0..lattice.n_states(n))
        .map(|s| (0.5 * p * beta * weights.cumulative[n][s]).exp() * (a[s] - b[s]).abs().powf(p))
        .collect();
    let xi_term = slice_expectation(lattice, n, &xi_field);

    let dt = lattice.dt();
    let f_field: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..lattice.n_states(k))
                .map(|s| {
                    let node = lattice.node(k, s);
                    let (y, z, v) = (sol2.y[k][s], sol2.z[k][s], sol2.v_at(k, s));
                    let fbar = f.eval(&node, y, z, v) - f2.eval(&node, y, z, v);
                    (beta * weights.cumulative[k][s]).exp() * fbar * fbar / weights.a2[k][s] * dt
                })
                .collect()
        })
        .collect();
    let mut pf = PathFunctional::new();
    let slot = pf.sum_pow(Field::Node(&f_field), p / 2.0);
    let driver_term = evaluate(lattice, &pf, evaluation)?.sum(slot);
    Ok(AprioriReport {
        lhs,
        rhs: xi_term + driver_term,
        xi_term,
        driver_term,
        norms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationRow {
    pub level: f64,
    pub y0: f64,
    /// ℰ-distance to the previous level's solution.
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationStudy {
    pub rows: Vec<TruncationRow>,
    /// `max |ξ|` over terminal nodes.
    pub max_abs_xi: f64,
}

/// Solves with `truncate(ξ, f, n_j)` along the schedule and measures
/// consecutive distances.
#[allow(clippy::too_many_arguments)]
pub fn truncation_study(
    lattice: &Lattice,
    f: DriverRef,
    xi: &TerminalCondition,
    schedule: &[f64],
    params: &SolverParams,
    weights: &WeightProcesses,
    evaluation: Evaluation,
) -> Result<TruncationStudy> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("truncation schedule is empty".into()));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("truncation schedule must increase".into()));
    }
    let max_abs_xi = xi.values(lattice).iter().fold(0.0, |a: f64, x| a.max(x.abs()));
    let mut rows = Vec::with_capacity(schedule.len());
    let mut prev: Option<Solution> = None;
    for &level in schedule {
        let (xi_n, f_n) = truncate(xi, f.clone(), level)?;
        let sol = solve(lattice, f_n.as_ref(), &xi_n, params)?;
        let distance = match &prev {
            None => None,
            Some(p) => {
                let d = sol.difference(p)?;
                Some(weighted_norm_report(lattice, &d, weights, params.beta, evaluation)?.e_norm())
            }
        };
        rows.push(TruncationRow {
            level,
            y0: sol.y0(),
            distance,
        });
        prev = Some(sol);
    }
    Ok(TruncationStudy { rows, max_abs_xi })
}

/// Largest per-edge remainder, relative to the terms' scale, of
/// `e^{βA_{k+1}}Y²_{k+1} − e^{βA_k}Y²_k = (e^{βA_{k+1}} − e^{βA_k})Y²_k
///  + e^{βA_{k+1}}(2Y_kΔY + ΔY²)` with `ΔY` rebuilt from the decomposition.
pub fn ito_remainder(lattice: &Lattice, sol: &Solution, weights: &WeightProcesses, beta: f64) -> f64 {
    let dt = lattice.dt();
    let n_out = lattice.n_outcomes();
    let db = lattice.db();
    let mut worst: f64 = 0.0;
    for k in 0..lattice.steps() {
        for s in 0..lattice.n_states(k) {
            let y = sol.y[k][s];
            let w0 = (beta * weights.cumulative[k][s]).exp();
            let dk = sol.dk.as_ref().map_or(0.0, |d| d[k][s]);
            for o in 0..n_out {
                let s2 = lattice.successor(k, s, o);
                let w1 = (beta * weights.cumulative[k + 1][s2]).exp();
                let mut dy = -sol.drift[k][s] * dt - dk + sol.z[k][s] * db[o] + sol.dm[k][s * n_out + o];
                for (i, v) in sol.v_at(k, s).iter().enumerate() {
                    dy += v * lattice.jump_increment(o, i);
                }
                let y1 = sol.y[k + 1][s2];
                let lhs = w1 * y1 * y1 - w0 * y * y;
                let rhs = (w1 - w0) * y * y + w1 * (2.0 * y * dy + dy * dy);
                let scale = w1 * y1 * y1 + w0 * y * y + 1.0;
                worst = worst.max((lhs - rhs).abs() / scale);
            }
        }
    }
    worst
}

/// Smallest value of `|y+v|^p − |y|^p − p|y|^{p−1}sign(y)v` over all
/// nodes and marks with positive intensity (`y = Y_k`, `v = V_k(e_i)`).
pub fn convexity_gap(lattice: &Lattice, sol: &Solution, p: f64) -> f64 {
    let lambda = lattice.model().marks().intensities();
    let mut worst = f64::INFINITY;
    for k in 0..lattice.steps() {
        for s in 0..lattice.n_states(k) {
            let y = sol.y[k][s];
            for (i, v) in sol.v_at(k, s).iter().enumerate() {
                if lambda[i] == 0.0 {
                    continue;
                }
                let gap = (y + v).abs().powf(p)
                    - y.abs().powf(p)
                    - p * y.abs().powf(p - 1.0) * crate::numeric::sign0(y) * v;
                worst = worst.min(gap);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::bsde::solve;
    use crate::drivers::{AffineDriver, CompositeDriver, Coefficient, ZeroDriver};
    use crate::lattice::{build_grid, build_model, compute_weights, Mark, MarkSpace};

    fn lattice(n: usize, t: f64, coin: bool) -> Lattice {
        let g = build_grid(t, n).unwrap();
        let ms = MarkSpace::new(vec![Mark { value: 1.0, intensity: 0.6 }]).unwrap();
        Lattice::build(&build_model(g, ms, coin).unwrap()).unwrap()
    }

    fn composite(c: f64) -> CompositeDriver {
        CompositeDriver {
            alpha: 0.3,
            sine: 0.2,
            gamma: Coefficient::constant(0.2),
            eta: Coefficient::constant(0.3),
            weights: vec![-0.8],
            intensities: vec![0.6],
            c,
            c_walk: 0.1,
        }
    }

    #[test]
    fn comparison_examples() {
        let lat = lattice(6, 1.0, true);
        let f = composite(0.0);
        let xi = TerminalCondition::new("w", |n| n.state.brownian(n.dt));
        let xi2 = xi.map("w+1", |x| x + 1.0);
        let p = SolverParams::default();
        let s1 = solve(&lat, &f, &xi, &p).unwrap();
        let same = comparison_check(&lat, &s1, &f, &xi, &s1, &f, &xi).unwrap();
        assert_eq!(same.max_gap, 0.0);
        let s2 = solve(&lat, &f, &xi2, &p).unwrap();
        assert!(comparison_check(&lat, &s1, &f, &xi, &s2, &f, &xi2).unwrap().pass);
        let crossed = comparison_check(&lat, &s2, &f, &xi2, &s1, &f, &xi);
        assert!(matches!(crossed, Err(Error::Inapplicable { .. })));
        let f_low = composite(0.5);
        let crossed = comparison_check(&lat, &s1, &f_low, &xi, &s2, &f, &xi2);
        assert!(matches!(crossed, Err(Error::Inapplicable { .. })));
    }

    #[test]
    fn apriori_identical_and_positive() {
        let lat = lattice(5, 1.0, true);
        let f = composite(0.1);
        let w = compute_weights(&lat, |_| 0.5, |_| 0.2, |_| 0.3, 1.5, 0.1).unwrap();
        let beta = crate::bsde::auto_beta(1.5, 0.1);
        let xi = TerminalCondition::new("w", |n| n.state.brownian(n.dt).cos());
        let p = SolverParams { beta, ..Default::default() };
        let s = solve(&lat, &f, &xi, &p).unwrap();
        let ev = Evaluation::default();
        let r = apriori_report(&lat, &s, &f, &xi, &s, &f, &xi, &w, beta, ev).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        let xi2 = xi.map("shift", |x| x + 0.3);
        let s2 = solve(&lat, &f, &xi2, &p).unwrap();
        let r = apriori_report(&lat, &s, &f, &xi, &s2, &f, &xi2, &w, beta, ev).unwrap();
        assert!(r.lhs > 0.0 && r.rhs > 0.0 && (r.lhs / r.rhs).is_finite());
        assert!(matches!(
            apriori_report(&lat, &s, &f, &xi, &s2, &f, &xi2, &w, 1.0, ev),
            Err(Error::BetaBelowThreshold { .. })
        ));
    }

    #[test]
    fn truncation_of_bounded_data_is_inert() {
        let lat = lattice(5, 1.0, false);
        let w = compute_weights(&lat, |_| 1.0, |_| 0.0, |_| 0.0, 1.5, 0.1).unwrap();
        let xi = TerminalCondition::new("w", |n| n.state.brownian(n.dt).sin());
        let p = SolverParams::default();
        let study = truncation_study(&lat, Arc::new(ZeroDriver), &xi, &[1.0, 2.0, 4.0], &p, &w, Evaluation::default()).unwrap();
        assert!(study.rows.iter().skip(1).all(|r| r.distance == Some(0.0)));
        assert!(truncation_study(&lat, Arc::new(ZeroDriver), &xi, &[], &p, &w, Evaluation::default()).is_err());
    }

    #[test]
    fn exp_walk_distances_shrink_to_zero() {
        // T = 0.25, N = 16: max ξ = e² ≈ 7.39
        let g = build_grid(0.25, 16).unwrap();
        let lat = Lattice::build(&build_model(g, MarkSpace::empty(), false).unwrap()).unwrap();
        let w = compute_weights(&lat, |_| 1.0, |_| 0.0, |_| 0.0, 1.5, 0.1).unwrap();
        let xi = TerminalCondition::exp_walk(1.0);
        let p = SolverParams::default();
        let schedule: Vec<f64> = (0..9).map(|j| 2f64.powi(j)).collect();
        let study = truncation_study(&lat, Arc::new(ZeroDriver), &xi, &schedule, &p, &w, Evaluation::default()).unwrap();
        assert!((study.max_abs_xi - 2f64.exp()).abs() < 1e-12);
        let d: Vec<f64> = study.rows.iter().filter_map(|r| r.distance).collect();
        for pair in d.windows(2) {
            assert!(pair[1] <= pair[0], "{d:?}");
        }
        for (row, dist) in study.rows.iter().skip(1).zip(&d) {
            if row.level / 2.0 >= study.max_abs_xi {
                assert_eq!(*dist, 0.0);
            }
        }
    }

    #[test]
    fn exp_walk_on_unit_horizon_trends_down() {
        // on T = 1 the distances rise before they fall; only the trend holds
        let g = build_grid(1.0, 16).unwrap();
        let lat = Lattice::build(&build_model(g, MarkSpace::empty(), false).unwrap()).unwrap();
        let w = compute_weights(&lat, |_| 1.0, |_| 0.0, |_| 0.0, 1.5, 0.1).unwrap();
        let xi = TerminalCondition::exp_walk(1.0);
        let schedule: Vec<f64> = (0..9).map(|j| 2f64.powi(j)).collect();
        let study =
            truncation_study(&lat, Arc::new(ZeroDriver), &xi, &schedule, &SolverParams::default(), &w, Evaluation::default())
                .unwrap();
        let d: Vec<f64> = study.rows.iter().filter_map(|r| r.distance).collect();
        assert!(d.last().unwrap() < &d[0]);
        assert_eq!(*d.last().unwrap(), 0.0);
    }

    #[test]
    fn ito_identity_and_convexity() {
        let lat = lattice(6, 1.0, true);
        let f = composite(0.2);
        let w = compute_weights(&lat, |_| 0.5, |_| 0.2, |_| 0.3, 1.5, 0.1).unwrap();
        let xi = TerminalCondition::new("w", |n| n.state.brownian(n.dt) + n.state.coin_sum.unwrap() as f64 * 0.2);
        let s = solve(&lat, &f, &xi, &SolverParams::default()).unwrap();
        assert!(ito_remainder(&lat, &s, &w, 2.0) < 1e-13);
        for p in [1.2, 1.5, 1.8] {
            assert!(convexity_gap(&lat, &s, p) >= -1e-12);
        }
        let s = solve(&lat, &AffineDriver { alpha: 0.1, c: 0.0 }, &xi, &SolverParams::default()).unwrap();
        assert!(ito_remainder(&lat, &s, &w, 0.0) < 1e-13);
    }
}

//! Mark-space norms, the sum spaces `L^p_λ + L^2_λ` and
//! `L^p(L^2_ν) + L^p(L^p_ν)`, and the weighted solution-space norms.

mod report;

pub use report::{weighted_norm_report, NormReport};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, PathSample};
use crate::numeric::{compensated_sum, minimize_scalar};

/// `(Σ_i λ_i |v_i|^p)^{1/p}`.
pub fn lp_lambda_norm(v: &[f64], lambda: &[f64], p: f64) -> f64 {
    debug_assert_eq!(v.len(), lambda.len());
    if p == 2.0 {
        return compensated_sum(v.iter().zip(lambda).map(|(x, l)| l * x * x)).sqrt();
    }
    if p == 1.0 {
        return compensated_sum(v.iter().zip(lambda).map(|(x, l)| l * x.abs()));
    }
    compensated_sum(v.iter().zip(lambda).map(|(x, l)| l * x.abs().powf(p))).powf(1.0 / p)
}

fn check_exponent(p: f64, lo: f64, hi: f64) -> Result<()> {
    if p >= lo && p <= hi {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("exponent {p} outside [{lo}, {hi}]")))
    }
}

const SEARCH_TOL: f64 = 1e-10;

/// Norm of `v` in `L^p_λ + L^2_λ`, `1 ≤ p ≤ 2`.
///
/// For `p = 1` the infimum is attained in the truncation family and is
/// evaluated in closed form over its breakpoints. For `1 < p < 2` the
/// optimal split satisfies `|ψ²_i| = κ|ψ¹_i|^{p−1}` coordinatewise; the
/// one-parameter curve in `κ` is searched together with the truncation
/// family and the smaller value is returned.
pub fn sum_norm(v: &[f64], lambda: &[f64], p: f64) -> Result<f64> {
    check_exponent(p, 1.0, 2.0)?;
    if v.len() != lambda.len() {
        return Err(Error::InvalidArgument(format!(
            "mark field has {} values for {} marks",
            v.len(),
            lambda.len()
        )));
    }
    let (abs, lam): (Vec<f64>, Vec<f64>) = v
        .iter()
        .zip(lambda)
        .filter(|(x, l)| **x != 0.0 && **l > 0.0)
        .map(|(x, l)| (x.abs(), *l))
        .unzip();
    if abs.is_empty() {
        return Ok(0.0);
    }
    if p == 2.0 {
        return Ok(lp_lambda_norm(&abs, &lam, 2.0));
    }
    if p == 1.0 {
        return Ok(sum_norm_l1(&abs, &lam));
    }
    let top = abs.iter().copied().fold(0.0, f64::max);
    let tol = SEARCH_TOL * top.max(1.0);
    let (_, by_level) = minimize_scalar(|c| truncation_split(&abs, &lam, c, p), 0.0, top, 64, tol);
    let (_, by_power) = minimize_scalar(|x| power_split(&abs, &lam, x, top, p), 0.0, top, 64, tol);
    Ok(by_level.min(by_power))
}

/// `‖(|v|−c)⁺‖_p + ‖min(|v|, c)‖_2` for nonnegative `abs`.
fn truncation_split(abs: &[f64], lam: &[f64], c: f64, p: f64) -> f64 {
    let excess = compensated_sum(abs.iter().zip(lam).map(|(a, l)| l * (a - c).max(0.0).powf(p)));
    let clamp = compensated_sum(abs.iter().zip(lam).map(|(a, l)| l * a.min(c).powi(2)));
    excess.powf(1.0 / p) + clamp.sqrt()
}

/// Split on the stationarity curve, parametrized by the `L^p` part `x` of
/// the largest coordinate `top`.
fn power_split(abs: &[f64], lam: &[f64], x: f64, top: f64, p: f64) -> f64 {
    if x <= 0.0 {
        return lp_lambda_norm(abs, lam, 2.0);
    }
    let kappa = (top - x) / x.powf(p - 1.0);
    let mut lp = Vec::with_capacity(abs.len());
    let mut l2 = Vec::with_capacity(abs.len());
    for &a in abs {
        let psi = if kappa == 0.0 { a } else { power_root(a, kappa, p) };
        lp.push(psi);
        l2.push(a - psi);
    }
    lp_lambda_norm(&lp, lam, p) + lp_lambda_norm(&l2, lam, 2.0)
}

/// Root of `ψ + κψ^{p−1} = a` on `[0, a]`.
fn power_root(a: f64, kappa: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, a);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return mid;
        }
        if mid + kappa * mid.powf(p - 1.0) < a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Exact `L^1_λ + L^2_λ` norm: the optimal split truncates at a level `c`
/// and the objective is explicit between consecutive breakpoints.
fn sum_norm_l1(abs: &[f64], lam: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&i, &j| abs[i].total_cmp(&abs[j]));
    let value = |c: f64| {
        compensated_sum(abs.iter().zip(lam).map(|(a, l)| l * (a - c).max(0.0)))
            + compensated_sum(abs.iter().zip(lam).map(|(a, l)| l * a.min(c).powi(2))).sqrt()
    };
    let mut best = value(0.0);
    let mut below_sq = 0.0;
    let mut lower = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        // segment (lower, abs[i]): marks order[pos..] lie above the level
        let upper = abs[i];
        let above: f64 = order[pos..].iter().map(|&j| lam[j]).sum();
        if above < 1.0 {
            let c = (below_sq / (1.0 - above)).sqrt();
            if c > lower && c < upper {
                best = best.min(value(c));
            }
        }
        best = best.min(value(upper));
        below_sq += lam[i] * abs[i] * abs[i];
        lower = upper;
    }
    best
}

/// Mark fields along sampled paths, together with the realized jumps.
///
/// `values` is laid out `[path][k][mark]`; `jumps[path][k]` is 0 for no jump
/// and `i + 1` for mark `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VEnsemble {
    intensities: Vec<f64>,
    dt: f64,
    n_paths: usize,
    n_steps: usize,
    values: Vec<f64>,
    jumps: Vec<u16>,
}

impl VEnsemble {
    pub fn new(
        intensities: Vec<f64>,
        dt: f64,
        n_paths: usize,
        n_steps: usize,
        values: Vec<f64>,
        jumps: Vec<u16>,
    ) -> Result<Self> {
        let m = intensities.len();
        if n_paths == 0 || n_steps == 0 {
            return Err(Error::InvalidArgument("ensemble must be nonempty".into()));
        }
        if values.len() != n_paths * n_steps * m || jumps.len() != n_paths * n_steps {
            return Err(Error::InvalidArgument("ensemble dimensions do not match".into()));
        }
        if jumps.iter().any(|&j| j as usize > m) {
            return Err(Error::InvalidArgument("realized jump refers to an unknown mark".into()));
        }
        Ok(Self {
            intensities,
            dt,
            n_paths,
            n_steps,
            values,
            jumps,
        })
    }

    /// Evaluates a per-node mark field (`field[k][s * m + i]`) along sampled paths.
    pub fn from_lattice(lattice: &Lattice, sample: &PathSample, field: &[Vec<f64>]) -> Result<Self> {
        let m = lattice.n_marks();
        let n = lattice.steps();
        if sample.n_steps() != n || field.len() < n {
            return Err(Error::InvalidArgument("sample and field do not match the lattice".into()));
        }
        let mut values = Vec::with_capacity(sample.n_paths() * n * m);
        let mut jumps = Vec::with_capacity(sample.n_paths() * n);
        for i in 0..sample.n_paths() {
            let states = sample.state_indices(lattice, i);
            for (k, &o) in sample.path(i).iter().enumerate() {
                let s = states[k];
                values.extend_from_slice(&field[k][s * m..(s + 1) * m]);
                jumps.push(lattice.outcomes()[o as usize].jump.map_or(0, |j| j as u16 + 1));
            }
        }
        Self::new(
            lattice.model().marks().intensities(),
            lattice.dt(),
            sample.n_paths(),
            n,
            values,
            jumps,
        )
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    fn path_values(&self, i: usize) -> &[f64] {
        let w = self.n_steps * self.intensities.len();
        &self.values[i * w..(i + 1) * w]
    }

    fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `[N]_T` per path: squared values at realized jumps.
    pub fn quadratic_variation(&self, i: usize) -> f64 {
        let m = self.intensities.len();
        let vals = self.path_values(i);
        compensated_sum(
            self.jumps[i * self.n_steps..(i + 1) * self.n_steps]
                .iter()
                .enumerate()
                .filter(|(_, &j)| j > 0)
                .map(|(k, &j)| vals[k * m + j as usize - 1].powi(2)),
        )
    }

    /// The two ensemble terms for level `c`, with the excess over `c`
    /// placed in `L^p(L^2_ν)` when `excess_in_l2`, else in `L^p(L^p_ν)`.
    fn split_terms(&self, c: f64, p: f64, excess_in_l2: bool) -> f64 {
        let m = self.intensities.len();
        let n = self.n_paths as f64;
        let mut l2_term = Vec::with_capacity(self.n_paths);
        let mut lp_term = Vec::with_capacity(self.n_paths);
        for i in 0..self.n_paths {
            let vals = self.path_values(i);
            let (mut sq, mut pw) = (0.0, 0.0);
            for (idx, v) in vals.iter().enumerate() {
                let l = self.intensities[idx % m] * self.dt;
                let a = v.abs();
                let (hi, lo) = ((a - c).max(0.0), a.min(c));
                let (to_l2, to_lp) = if excess_in_l2 { (hi, lo) } else { (lo, hi) };
                sq += l * to_l2 * to_l2;
                if to_lp > 0.0 {
                    pw += l * to_lp.powf(p);
                }
            }
            l2_term.push(if sq > 0.0 { sq.powf(p / 2.0) } else { 0.0 });
            lp_term.push(pw);
        }
        (compensated_sum(l2_term) / n).powf(1.0 / p) + (compensated_sum(lp_term) / n).powf(1.0 / p)
    }

    /// Objective of `sum_norm_nu` at level `c`, both orientations.
    pub fn split_value(&self, c: f64, p: f64) -> f64 {
        self.split_terms(c, p, true).min(self.split_terms(c, p, false))
    }
}

/// `‖V‖_{L^p(L^2_ν)+L^p(L^p_ν)}` over the ensemble, restricted to splits by
/// one truncation level shared by all paths. Both assignments of the excess
/// part are searched.
pub fn sum_norm_nu(ensemble: &VEnsemble, p: f64) -> Result<f64> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::InvalidArgument(format!("exponent {p} outside (1, 2)")));
    }
    let top = ensemble.max_abs();
    if top == 0.0 {
        return Ok(0.0);
    }
    let tol = SEARCH_TOL * top.max(1.0);
    let (_, a) = minimize_scalar(|c| ensemble.split_terms(c, p, true), 0.0, top, 128, tol);
    let (_, b) = minimize_scalar(|c| ensemble.split_terms(c, p, false), 0.0, top, 128, tol);
    Ok(a.min(b))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BjReport {
    pub ratios: Vec<f64>,
    pub lower_ratio: f64,
    pub upper_ratio: f64,
}

/// `sum_norm_nu(V) / E[[N]_T^{p/2}]^{1/p}` per batch, with its extremes.
pub fn bj_sandwich(batches: &[VEnsemble], p: f64) -> Result<BjReport> {
    if batches.is_empty() {
        return Err(Error::InvalidArgument("no batches".into()));
    }
    let ratios = batches
        .par_iter()
        .enumerate()
        .map(|(b, ens)| {
            let moment = compensated_sum((0..ens.n_paths).map(|i| ens.quadratic_variation(i).powf(p / 2.0)))
                / ens.n_paths as f64;
            if !(moment > 0.0) {
                return Err(Error::DegenerateSample(format!("batch {b} realizes no nonzero jump")));
            }
            Ok(sum_norm_nu(ens, p)? / moment.powf(1.0 / p))
        })
        .collect::<Result<Vec<f64>>>()?;
    let lower_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let upper_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(BjReport {
        ratios,
        lower_ratio,
        upper_ratio,
    })
}

/// Both sides of `(Σ e^{βA}h² dt)^{p/2} ≥ t^{p/2−1} Σ e^{(p/2)βA}|h|^p dt`
/// over `t = len·dt`.
pub fn jensen_sides(h: &[f64], a: &[f64], beta: f64, p: f64, dt: f64) -> (f64, f64) {
    let t = h.len() as f64 * dt;
    let lhs = compensated_sum(h.iter().zip(a).map(|(x, a)| (beta * a).exp() * x * x * dt)).powf(p / 2.0);
    let rhs = t.powf(p / 2.0 - 1.0)
        * compensated_sum(h.iter().zip(a).map(|(x, a)| (0.5 * p * beta * a).exp() * x.abs().powf(p) * dt));
    (lhs, rhs)
}

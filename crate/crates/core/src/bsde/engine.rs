//! Backward sweep shared by the plain, reflected and penalized solvers.

use rayon::prelude::*;

use super::{PicardInit, PicardStats, Solution, SolverParams};
use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::lattice::{Lattice, Node};
use crate::numeric::monotone_root;

/// How `Y_k` is obtained from the conditional mean at one node.
#[derive(Debug, Clone, Copy)]
pub(crate) enum StepRule<'a> {
    Plain,
    /// `Y = max(Ỹ, L)` with the push `ΔK` recorded.
    Reflected { obstacle: &'a [Vec<f64>] },
    /// Driver `f + n·(y − L)⁻`; the penalty increment is recorded as `ΔK`.
    Penalized { obstacle: &'a [Vec<f64>], n: f64 },
}

/// Per-lattice constants of the projection.
pub(crate) struct Increments {
    /// Jump class per outcome: 0 none, `i + 1` mark `i`.
    class: Vec<usize>,
    lam_dt: Vec<f64>,
}

impl Increments {
    pub(crate) fn new(lattice: &Lattice) -> Self {
        let dt = lattice.dt();
        Self {
            class: lattice.outcomes().iter().map(|o| o.jump.map_or(0, |i| i + 1)).collect(),
            lam_dt: lattice.model().marks().intensities().iter().map(|l| l * dt).collect(),
        }
    }

    /// Writes `V` and `ΔM`; returns `(E[x], Z)`.
    pub(crate) fn project(&self, lattice: &Lattice, next: &[f64], v: &mut [f64], dm: &mut [f64]) -> (f64, f64) {
        let probs = lattice.outcome_probs();
        let db = lattice.db();
        let dt = lattice.dt();
        let m = self.lam_dt.len();
        let mut mean = 0.0;
        let mut zdt = 0.0;
        let mut class_p = vec![0.0; m + 1];
        let mut class_s = vec![0.0; m + 1];
        for o in 0..next.len() {
            let q = probs[o];
            let x = next[o];
            mean += q * x;
            zdt += q * x * db[o];
            class_p[self.class[o]] += q;
            class_s[self.class[o]] += q * x;
        }
        let z = zdt / dt;
        let base = class_s[0] / class_p[0];
        for i in 0..m {
            v[i] = if class_p[i + 1] > 0.0 {
                class_s[i + 1] / class_p[i + 1] - base
            } else {
                0.0
            };
        }
        for o in 0..next.len() {
            let mut r = next[o] - mean - z * db[o];
            for i in 0..m {
                let ind = if self.class[o] == i + 1 { 1.0 } else { 0.0 };
                r -= v[i] * (ind - self.lam_dt[i]);
            }
            dm[o] = r;
        }
        (mean, z)
    }
}

struct NodeOut {
    y: f64,
    z: f64,
    v: Vec<f64>,
    dm: Vec<f64>,
    drift: f64,
    dk: f64,
    iterations: usize,
    contraction: f64,
    predicted: f64,
}

struct OneStep {
    y: f64,
    drift: f64,
    iterations: usize,
    contraction: f64,
}

fn picard(node: &Node<'_>, f: &dyn Driver, mean: f64, z: f64, v: &[f64], params: &SolverParams) -> Result<OneStep> {
    let dt = node.dt;
    let mut y = match params.init {
        PicardInit::ConditionalMean => mean,
        PicardInit::Zero => 0.0,
    };
    let mut prev: Option<f64> = None;
    let mut contraction: f64 = 0.0;
    for it in 1..=params.picard_max_iters {
        let fy = f.eval(node, y, z, v);
        let next = mean + fy * dt;
        let diff = (next - y).abs();
        if let Some(pd) = prev {
            if pd > 1e-7 * (1.0 + y.abs()) {
                contraction = contraction.max(diff / pd);
            }
        }
        y = next;
        if diff <= params.picard_tol {
            return Ok(OneStep {
                y,
                drift: fy,
                iterations: it,
                contraction,
            });
        }
        prev = Some(diff);
    }
    Err(Error::NoConvergence {
        k: node.k,
        state: node.index,
        iterations: params.picard_max_iters,
        contraction,
        hint: "reduce dt or use the explicit scheme",
    })
}

fn unconstrained(node: &Node<'_>, f: &dyn Driver, mean: f64, z: f64, v: &[f64], params: &SolverParams) -> Result<OneStep> {
    if params.implicit && !f.is_exogenous() {
        picard(node, f, mean, z, v, params)
    } else {
        let fy = f.eval(node, mean, z, v);
        Ok(OneStep {
            y: mean + fy * node.dt,
            drift: fy,
            iterations: 0,
            contraction: 0.0,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn step(
    node: &Node<'_>,
    f: &dyn Driver,
    mean: f64,
    z: f64,
    v: &[f64],
    params: &SolverParams,
    rule: StepRule<'_>,
) -> Result<(OneStep, f64)> {
    let dt = node.dt;
    match rule {
        StepRule::Plain => Ok((unconstrained(node, f, mean, z, v, params)?, 0.0)),
        StepRule::Reflected { obstacle } => {
            let l = obstacle[node.k][node.index];
            let free = unconstrained(node, f, mean, z, v, params)?;
            if free.y >= l {
                return Ok((free, 0.0));
            }
            // Ỹ < L: hold Y at the obstacle and push by the shortfall
            let drift = if params.implicit { f.eval(node, l, z, v) } else { free.drift };
            let dk = (l - mean - drift * dt).max(0.0);
            Ok((OneStep { y: l, drift, ..free }, dk))
        }
        StepRule::Penalized { obstacle, n } => {
            let l = obstacle[node.k][node.index];
            if n == 0.0 {
                return Ok((unconstrained(node, f, mean, z, v, params)?, 0.0));
            }
            if params.implicit {
                let g = |y: f64| y - mean - dt * f.eval(node, y, z, v) - dt * n * (l - y).max(0.0);
                let y = monotone_root(g, mean);
                let drift = f.eval(node, y, z, v);
                let dk = n * (l - y).max(0.0) * dt;
                Ok((
                    OneStep {
                        y,
                        drift,
                        iterations: 0,
                        contraction: 0.0,
                    },
                    dk,
                ))
            } else {
                // explicit in f, implicit in the penalty
                let drift = f.eval(node, mean, z, v);
                let y0 = mean + drift * dt;
                let y = if y0 >= l { y0 } else { (y0 + n * dt * l) / (1.0 + n * dt) };
                let dk = n * (l - y).max(0.0) * dt;
                Ok((
                    OneStep {
                        y,
                        drift,
                        iterations: 0,
                        contraction: 0.0,
                    },
                    dk,
                ))
            }
        }
    }
}

/// Backward dynamic programming from terminal values.
pub(crate) fn backward(
    lattice: &Lattice,
    f: &dyn Driver,
    terminal: Vec<f64>,
    params: &SolverParams,
    rule: StepRule<'_>,
) -> Result<Solution> {
    params.validate()?;
    let n = lattice.steps();
    if terminal.len() != lattice.n_states(n) {
        return Err(Error::InvalidArgument("terminal values do not match the lattice".into()));
    }
    if let StepRule::Reflected { obstacle } | StepRule::Penalized { obstacle, .. } = rule {
        if obstacle.len() != n + 1 || (0..=n).any(|k| obstacle[k].len() != lattice.n_states(k)) {
            return Err(Error::InvalidArgument("obstacle does not match the lattice".into()));
        }
    }
    let m = lattice.n_marks();
    let n_out = lattice.n_outcomes();
    let inc = Increments::new(lattice);
    let dt = lattice.dt();

    let mut y: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n];
    let mut v = vec![Vec::new(); n];
    let mut dm = vec![Vec::new(); n];
    let mut drift = vec![Vec::new(); n];
    let mut dk = vec![Vec::new(); n];
    let mut stats = PicardStats::default();
    y[n] = terminal;

    for k in (0..n).rev() {
        let next_y = &y[k + 1];
        let outs: Vec<Result<NodeOut>> = (0..lattice.n_states(k))
            .into_par_iter()
            .map(|s| {
                let node = lattice.node(k, s);
                let next: Vec<f64> = (0..n_out).map(|o| next_y[lattice.successor(k, s, o)]).collect();
                let mut vv = vec![0.0; m];
                let mut dmm = vec![0.0; n_out];
                let (mean, zz) = inc.project(lattice, &next, &mut vv, &mut dmm);
                let theta = f.coefficients(&node).theta;
                if params.implicit && !f.is_exogenous() && theta * dt >= 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "implicit step needs θ·dt < 1, got {} at step {k} ({})",
                        theta * dt,
                        node.state
                    )));
                }
                let (one, push) = step(&node, f, mean, zz, &vv, params, rule)?;
                Ok(NodeOut {
                    y: one.y,
                    z: zz,
                    v: vv,
                    dm: dmm,
                    drift: one.drift,
                    dk: push,
                    iterations: one.iterations,
                    contraction: one.contraction,
                    predicted: theta * dt,
                })
            })
            .collect();
        let len = outs.len();
        let (mut yk, mut zk, mut vk, mut dmk, mut drk, mut dkk) = (
            Vec::with_capacity(len),
            Vec::with_capacity(len),
            Vec::with_capacity(len * m),
            Vec::with_capacity(len * n_out),
            Vec::with_capacity(len),
            Vec::with_capacity(len),
        );
        for out in outs {
            let out = out?;
            yk.push(out.y);
            zk.push(out.z);
            vk.extend_from_slice(&out.v);
            dmk.extend_from_slice(&out.dm);
            drk.push(out.drift);
            dkk.push(out.dk);
            stats.total_iterations += out.iterations;
            stats.max_iterations = stats.max_iterations.max(out.iterations);
            stats.max_contraction = stats.max_contraction.max(out.contraction);
            stats.max_predicted = stats.max_predicted.max(out.predicted);
        }
        y[k] = yk;
        z[k] = zk;
        v[k] = vk;
        dm[k] = dmk;
        drift[k] = drk;
        dk[k] = dkk;
    }
    let dk = match rule {
        StepRule::Plain => None,
        _ => Some(dk),
    };
    Ok(Solution {
        model: lattice.model().clone(),
        y,
        z,
        v,
        dm,
        drift,
        dk,
        stats,
    })
}

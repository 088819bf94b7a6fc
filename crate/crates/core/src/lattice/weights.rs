use serde::Serialize;

use super::{Lattice, Node};
use crate::error::{Error, Result};

/// Stochastic-Lipschitz coefficients per node and the derived weights
/// `a² = θ + γ^q + η^q`, `A_k = Σ_{j<k} a²_j·dt`.
#[derive(Debug, Clone, Serialize)]
pub struct WeightProcesses {
    pub p: f64,
    pub q: f64,
    pub epsilon: f64,
    pub theta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    /// `A` per node, `k = 0..=N`.
    pub cumulative: Vec<Vec<f64>>,
    /// Largest terminal value of `A` (the bound 𝔠).
    pub cap: f64,
}

impl WeightProcesses {
    /// Conjugate exponent `q = p/(p−1)`.
    pub fn conjugate(p: f64) -> f64 {
        p / (p - 1.0)
    }

    pub fn a2_max(&self) -> f64 {
        self.a2.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn a(&self, k: usize, s: usize) -> f64 {
        self.a2[k][s].sqrt()
    }
}

/// `compute_weights(θ, γ, η, p, ε)` on a built lattice.
///
/// `A` must be a function of the node: if two predecessors of a state carry
/// different accumulated weights the weights are path-dependent and are
/// rejected.
pub fn compute_weights<T, G, E>(
    lattice: &Lattice,
    theta_fn: T,
    gamma_fn: G,
    eta_fn: E,
    p: f64,
    epsilon: f64,
) -> Result<WeightProcesses>
where
    T: Fn(&Node<'_>) -> f64,
    G: Fn(&Node<'_>) -> f64,
    E: Fn(&Node<'_>) -> f64,
{
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (1,2), got {p}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("floor ε must be positive, got {epsilon}")));
    }
    let q = WeightProcesses::conjugate(p);
    let n = lattice.steps();
    let dt = lattice.dt();
    let mut theta = Vec::with_capacity(n + 1);
    let mut gamma = Vec::with_capacity(n + 1);
    let mut eta = Vec::with_capacity(n + 1);
    let mut a2 = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let len = lattice.n_states(k);
        let (mut th, mut ga, mut et, mut aa) = (
            Vec::with_capacity(len),
            Vec::with_capacity(len),
            Vec::with_capacity(len),
            Vec::with_capacity(len),
        );
        for s in 0..len {
            let node = lattice.node(k, s);
            let (t, g, e) = (theta_fn(&node), gamma_fn(&node), eta_fn(&node));
            if !(t >= 0.0 && g >= 0.0 && e >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "coefficients must be nonnegative at step {k} ({}): θ={t}, γ={g}, η={e}",
                    node.state
                )));
            }
            let v = t + g.powf(q) + e.powf(q);
            if v < epsilon {
                return Err(Error::FloorViolation {
                    k,
                    state: node.state.to_string(),
                    a2: v,
                    epsilon,
                });
            }
            th.push(t);
            ga.push(g);
            et.push(e);
            aa.push(v);
        }
        theta.push(th);
        gamma.push(ga);
        eta.push(et);
        a2.push(aa);
    }

    let mut cumulative: Vec<Vec<f64>> = vec![vec![0.0]];
    for k in 0..n {
        let mut next: Vec<Option<f64>> = vec![None; lattice.n_states(k + 1)];
        for s in 0..lattice.n_states(k) {
            let value = cumulative[k][s] + a2[k][s] * dt;
            for o in 0..lattice.n_outcomes() {
                let j = lattice.successor(k, s, o);
                match next[j] {
                    None => next[j] = Some(value),
                    Some(prev) => {
                        if (prev - value).abs() > 1e-12 * prev.abs().max(1.0) {
                            return Err(Error::PathDependentWeights { k: k + 1 });
                        }
                    }
                }
            }
        }
        cumulative.push(next.into_iter().map(|v| v.unwrap_or(0.0)).collect());
    }
    let cap = cumulative[n].iter().copied().fold(0.0, f64::max);
    Ok(WeightProcesses {
        p,
        q,
        epsilon,
        theta,
        gamma,
        eta,
        a2,
        cumulative,
        cap,
    })
}

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Coefficients, Driver, DriverRef, TerminalCondition};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, Node, WeightProcesses};
use crate::paths::{evaluate, Evaluation, Field, PathFunctional};
use crate::spaces::sum_norm;

/// `q_n(x) = x·n/(|x| ∨ n)`.
pub fn truncation(x: f64, n: f64) -> f64 {
    if x.abs() <= n {
        x
    } else {
        n.copysign(x)
    }
}

/// `f_n(t,y,z,v) = f(t,y,z,v) − f(t,0,0,0) + q_n(f(t,0,0,0))`.
#[derive(Debug, Clone)]
pub struct TruncatedDriver {
    pub inner: DriverRef,
    pub level: f64,
}

impl Driver for TruncatedDriver {
    fn eval(&self, node: &Node<'_>, y: f64, z: f64, v: &[f64]) -> f64 {
        let f0 = self.inner.zero_value(node);
        let f = self.inner.eval(node, y, z, v);
        if f0.abs() <= self.level {
            f
        } else {
            f - f0 + truncation(f0, self.level)
        }
    }

    fn coefficients(&self, node: &Node<'_>) -> Coefficients {
        self.inner.coefficients(node)
    }

    fn zero_value(&self, node: &Node<'_>) -> f64 {
        truncation(self.inner.zero_value(node), self.level)
    }

    fn is_exogenous(&self) -> bool {
        self.inner.is_exogenous()
    }
}

/// `truncate(ξ, f, n) = (q_n(ξ), f_n)`.
pub fn truncate(xi: &TerminalCondition, f: DriverRef, n: f64) -> Result<(TerminalCondition, DriverRef)> {
    if !(n >= 1.0) {
        return Err(Error::InvalidArgument(format!("truncation level must be at least 1, got {n}")));
    }
    let xi_n = xi.map(format!("q_{n}({})", xi.label()), move |x| truncation(x, n));
    let f_n: DriverRef = Arc::new(TruncatedDriver { inner: f, level: n });
    Ok((xi_n, f_n))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub k: usize,
    pub state: usize,
    pub y: [f64; 2],
    pub z: [f64; 2],
    pub v: [Vec<f64>; 2],
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub probes: usize,
    pub max_slack: f64,
    pub pass: bool,
    pub worst: Option<Probe>,
}

const AUDIT_TOL: f64 = 1e-12;

fn draw(rng: &mut ChaCha8Rng) -> f64 {
    let scale = [1.0, 10.0, 100.0][rng.gen_range(0..3)];
    scale * rng.gen_range(-1.0..1.0)
}

/// Probes `|Δf| − θ|Δy| − γ|Δz| − η‖Δv‖_{L¹_λ+L²_λ}` at random nodes and
/// arguments. Every probed node also gets the saturating probe
/// `y = θ + 1, y′ = 0`.
pub fn lipschitz_audit(lattice: &Lattice, f: &dyn Driver, probes: usize, seed: u64) -> Result<AuditReport> {
    if probes == 0 {
        return Err(Error::InvalidArgument("audit needs at least one probe".into()));
    }
    let m = lattice.n_marks();
    let lambda = lattice.model().marks().intensities();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<Probe> = None;
    let mut count = 0;
    for i in 0..probes {
        let k = rng.gen_range(0..lattice.steps());
        let s = rng.gen_range(0..lattice.n_states(k));
        let node = lattice.node(k, s);
        let c = f.coefficients(&node);
        let mut cases = vec![(
            [draw(&mut rng), draw(&mut rng)],
            [draw(&mut rng), draw(&mut rng)],
            [
                (0..m).map(|_| draw(&mut rng)).collect::<Vec<_>>(),
                (0..m).map(|_| draw(&mut rng)).collect::<Vec<_>>(),
            ],
        )];
        if i % 4 == 0 {
            cases.push(([c.theta + 1.0, 0.0], [0.0, 0.0], [vec![0.0; m], vec![0.0; m]]));
        }
        for (y, z, v) in cases {
            count += 1;
            let df = (f.eval(&node, y[0], z[0], &v[0]) - f.eval(&node, y[1], z[1], &v[1])).abs();
            let dv: Vec<f64> = v[0].iter().zip(&v[1]).map(|(a, b)| a - b).collect();
            let bound = c.theta * (y[0] - y[1]).abs() + c.gamma * (z[0] - z[1]).abs() + c.eta * sum_norm(&dv, &lambda, 1.0)?;
            let slack = df - bound;
            if worst.as_ref().is_none_or(|w| slack > w.slack) {
                worst = Some(Probe {
                    k,
                    state: s,
                    y,
                    z,
                    v,
                    slack,
                });
            }
        }
    }
    let max_slack = worst.as_ref().map_or(f64::NEG_INFINITY, |w| w.slack);
    Ok(AuditReport {
        probes: count,
        max_slack,
        pass: max_slack <= AUDIT_TOL,
        worst,
    })
}

/// `E[(Σ_k e^{βA_k}|f(t_k,0,0,0)/a_k|² dt)^{p/2}]`.
pub fn integrability_report(
    lattice: &Lattice,
    f: &dyn Driver,
    weights: &WeightProcesses,
    beta: f64,
    p: f64,
    evaluation: Evaluation,
) -> Result<f64> {
    let dt = lattice.dt();
    let field: Vec<Vec<f64>> = (0..lattice.steps())
        .map(|k| {
            (0..lattice.n_states(k))
                .map(|s| {
                    let f0 = f.zero_value(&lattice.node(k, s));
                    (beta * weights.cumulative[k][s]).exp() * f0 * f0 / weights.a2[k][s] * dt
                })
                .collect()
        })
        .collect();
    let mut pf = PathFunctional::new();
    let slot = pf.sum_pow(Field::Node(&field), p / 2.0);
    Ok(evaluate(lattice, &pf, evaluation)?.sum(slot))
}

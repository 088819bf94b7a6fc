//! Generators `f(t, y, z, v)` with stochastic-Lipschitz coefficients,
//! terminal conditions, the truncation scheme and assumption audits.

mod audit;
mod terminal;

pub use audit::{integrability_report, lipschitz_audit, truncate, truncation, AuditReport, Probe};
pub use terminal::TerminalCondition;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::lattice::{Lattice, Node};

/// Claimed Lipschitz coefficients `(θ, γ, η)` at a node.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Coefficients {
    pub theta: f64,
    pub gamma: f64,
    pub eta: f64,
}

pub trait Driver: Send + Sync + fmt::Debug {
    fn eval(&self, node: &Node<'_>, y: f64, z: f64, v: &[f64]) -> f64;

    /// Coefficients for which the driver claims `|Δf| ≤ θ|Δy| + γ|Δz| + η‖Δv‖`.
    fn coefficients(&self, node: &Node<'_>) -> Coefficients;

    /// `f(t, 0, 0, 0)`.
    fn zero_value(&self, node: &Node<'_>) -> f64 {
        let zeros = vec![0.0; node.state.jump_counts.len()];
        self.eval(node, 0.0, 0.0, &zeros)
    }

    /// True when `f` depends on the node only.
    fn is_exogenous(&self) -> bool {
        false
    }
}

pub type DriverRef = Arc<dyn Driver>;

/// A deterministic coefficient process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Coefficient {
    Constant { value: f64 },
    /// `scale / √(t + t0)`: unbounded as `t0 → 0`, integrable on `[0, T]`.
    InverseSqrt { scale: f64, t0: f64 },
}

impl Coefficient {
    pub fn constant(value: f64) -> Self {
        Coefficient::Constant { value }
    }

    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Coefficient::Constant { value } => value,
            Coefficient::InverseSqrt { scale, t0 } => scale / (t + t0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDriver;

impl Driver for ZeroDriver {
    fn eval(&self, _: &Node<'_>, _: f64, _: f64, _: &[f64]) -> f64 {
        0.0
    }

    fn coefficients(&self, _: &Node<'_>) -> Coefficients {
        Coefficients::default()
    }

    fn is_exogenous(&self) -> bool {
        true
    }
}

/// `f = α·y + c`.
#[derive(Debug, Clone, Copy)]
pub struct AffineDriver {
    pub alpha: f64,
    pub c: f64,
}

impl Driver for AffineDriver {
    fn eval(&self, _: &Node<'_>, y: f64, _: f64, _: &[f64]) -> f64 {
        self.alpha * y + self.c
    }

    fn coefficients(&self, _: &Node<'_>) -> Coefficients {
        Coefficients {
            theta: self.alpha.abs(),
            ..Default::default()
        }
    }

    fn is_exogenous(&self) -> bool {
        self.alpha == 0.0
    }
}

/// `f = γ_t·z`.
#[derive(Debug, Clone, Copy)]
pub struct ZDriver {
    pub gamma: Coefficient,
}

impl Driver for ZDriver {
    fn eval(&self, node: &Node<'_>, _: f64, z: f64, _: &[f64]) -> f64 {
        self.gamma.at(node.t) * z
    }

    fn coefficients(&self, node: &Node<'_>) -> Coefficients {
        Coefficients {
            gamma: self.gamma.at(node.t).abs(),
            ..Default::default()
        }
    }
}

/// `‖w‖_∞ ∨ ‖w‖_{L²_λ}`: the constant in `|Σ w_i v_i λ_i| ≤ C‖v‖_{L¹_λ+L²_λ}`.
fn jump_weight_bound(weights: &[f64], intensities: &[f64]) -> f64 {
    let sup = weights.iter().fold(0.0, |a: f64, w| a.max(w.abs()));
    let l2 = crate::spaces::lp_lambda_norm(weights, intensities, 2.0);
    sup.max(l2)
}

/// `f = η_t·Σ_i w_i v(e_i) λ_i` with `w_i ∈ [−1, 1]`.
#[derive(Debug, Clone)]
pub struct JumpDriver {
    pub eta: Coefficient,
    pub weights: Vec<f64>,
    pub intensities: Vec<f64>,
}

impl JumpDriver {
    fn integral(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.weights)
            .zip(&self.intensities)
            .map(|((v, w), l)| v * w * l)
            .sum()
    }
}

impl Driver for JumpDriver {
    fn eval(&self, node: &Node<'_>, _: f64, _: f64, v: &[f64]) -> f64 {
        self.eta.at(node.t) * self.integral(v)
    }

    fn coefficients(&self, node: &Node<'_>) -> Coefficients {
        Coefficients {
            eta: self.eta.at(node.t).abs() * jump_weight_bound(&self.weights, &self.intensities),
            ..Default::default()
        }
    }
}

/// `f = θ_t·ρ(B_t)·y` with `θ_t = scale/√(t + t0)` and
/// `ρ(b) = 1 − modulation/(1 + b²) ∈ [1 − modulation, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct StochasticCoefficientDriver {
    pub scale: f64,
    pub t0: f64,
    pub modulation: f64,
}

impl StochasticCoefficientDriver {
    fn theta(&self, t: f64) -> f64 {
        self.scale / (t + self.t0).sqrt()
    }
}

impl Driver for StochasticCoefficientDriver {
    fn eval(&self, node: &Node<'_>, y: f64, _: f64, _: &[f64]) -> f64 {
        let b = node.state.brownian(node.dt);
        self.theta(node.t) * (1.0 - self.modulation / (1.0 + b * b)) * y
    }

    fn coefficients(&self, node: &Node<'_>) -> Coefficients {
        Coefficients {
            theta: self.theta(node.t).abs(),
            ..Default::default()
        }
    }
}

/// `f = α·y + b·sin(y) + γ_t·z + η_t·Σ w_i v_i λ_i + c + c_walk·B_t`.
#[derive(Debug, Clone)]
pub struct CompositeDriver {
    pub alpha: f64,
    pub sine: f64,
    pub gamma: Coefficient,
    pub eta: Coefficient,
    pub weights: Vec<f64>,
    pub intensities: Vec<f64>,
    pub c: f64,
    pub c_walk: f64,
}

impl CompositeDriver {
    pub fn offset(&self, node: &Node<'_>) -> f64 {
        self.c + self.c_walk * node.state.brownian(node.dt)
    }
}

impl Driver for CompositeDriver {
    fn eval(&self, node: &Node<'_>, y: f64, z: f64, v: &[f64]) -> f64 {
        let jump: f64 = v
            .iter()
            .zip(&self.weights)
            .zip(&self.intensities)
            .map(|((v, w), l)| v * w * l)
            .sum();
        self.alpha * y
            + self.sine * y.sin()
            + self.gamma.at(node.t) * z
            + self.eta.at(node.t) * jump
            + self.offset(node)
    }

    fn coefficients(&self, node: &Node<'_>) -> Coefficients {
        Coefficients {
            theta: self.alpha.abs() + self.sine.abs(),
            gamma: self.gamma.at(node.t).abs(),
            eta: self.eta.at(node.t).abs() * jump_weight_bound(&self.weights, &self.intensities),
        }
    }

    fn is_exogenous(&self) -> bool {
        self.alpha == 0.0
            && self.sine == 0.0
            && self.gamma == Coefficient::constant(0.0)
            && (self.eta == Coefficient::constant(0.0) || self.weights.iter().all(|w| *w == 0.0))
    }
}

/// `f = y²` with a claimed (wrong) coefficient: a misdeclared driver for audits.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticDriver {
    pub claimed_theta: f64,
}

impl Driver for QuadraticDriver {
    fn eval(&self, _: &Node<'_>, y: f64, _: f64, _: &[f64]) -> f64 {
        y * y
    }

    fn coefficients(&self, _: &Node<'_>) -> Coefficients {
        Coefficients {
            theta: self.claimed_theta,
            ..Default::default()
        }
    }
}

/// Driver depending on the node only.
#[derive(Clone)]
pub struct NodeDriver {
    f: Arc<dyn Fn(&Node<'_>) -> f64 + Send + Sync>,
    label: String,
}

impl NodeDriver {
    pub fn new<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&Node<'_>) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            label: label.into(),
        }
    }
}

impl fmt::Debug for NodeDriver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeDriver({})", self.label)
    }
}

impl Driver for NodeDriver {
    fn eval(&self, node: &Node<'_>, _: f64, _: f64, _: &[f64]) -> f64 {
        (self.f)(node)
    }

    fn coefficients(&self, _: &Node<'_>) -> Coefficients {
        Coefficients::default()
    }

    fn is_exogenous(&self) -> bool {
        true
    }
}

/// Values fixed per lattice node (`values[k][s]`), e.g. `f(t, y_prev, z_prev, v_prev)`.
#[derive(Debug, Clone)]
pub struct FrozenDriver {
    pub values: Vec<Vec<f64>>,
}

impl FrozenDriver {
    /// Freezes `f` at the given per-node arguments (`v[k][s * m + i]`).
    pub fn freeze(lattice: &Lattice, f: &dyn Driver, y: &[Vec<f64>], z: &[Vec<f64>], v: &[Vec<f64>]) -> Self {
        let m = lattice.n_marks();
        let values = (0..lattice.steps())
            .map(|k| {
                (0..lattice.n_states(k))
                    .map(|s| f.eval(&lattice.node(k, s), y[k][s], z[k][s], &v[k][s * m..(s + 1) * m]))
                    .collect()
            })
            .collect();
        Self { values }
    }
}

impl Driver for FrozenDriver {
    fn eval(&self, node: &Node<'_>, _: f64, _: f64, _: &[f64]) -> f64 {
        self.values.get(node.k).map_or(0.0, |row| row[node.index])
    }

    fn coefficients(&self, _: &Node<'_>) -> Coefficients {
        Coefficients::default()
    }

    fn is_exogenous(&self) -> bool {
        true
    }
}

/// Adds a nonnegative node-dependent shift: `f + δ(node)`.
#[derive(Clone)]
pub struct ShiftedDriver {
    pub inner: DriverRef,
    shift: Arc<dyn Fn(&Node<'_>) -> f64 + Send + Sync>,
}

impl ShiftedDriver {
    pub fn new<F>(inner: DriverRef, shift: F) -> Self
    where
        F: Fn(&Node<'_>) -> f64 + Send + Sync + 'static,
    {
        Self {
            inner,
            shift: Arc::new(shift),
        }
    }
}

impl fmt::Debug for ShiftedDriver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ShiftedDriver({:?})", self.inner)
    }
}

impl Driver for ShiftedDriver {
    fn eval(&self, node: &Node<'_>, y: f64, z: f64, v: &[f64]) -> f64 {
        self.inner.eval(node, y, z, v) + (self.shift)(node)
    }

    fn coefficients(&self, node: &Node<'_>) -> Coefficients {
        self.inner.coefficients(node)
    }

    fn is_exogenous(&self) -> bool {
        self.inner.is_exogenous()
    }
}

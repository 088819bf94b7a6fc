use std::fmt;
use std::sync::Arc;

use crate::lattice::{Lattice, Node};

/// `ξ` as a function of the terminal node.
#[derive(Clone)]
pub struct TerminalCondition {
    f: Arc<dyn Fn(&Node<'_>) -> f64 + Send + Sync>,
    label: String,
}

impl TerminalCondition {
    pub fn new<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&Node<'_>) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            label: label.into(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant({c})"), move |_| c)
    }

    /// `exp(scale·B_T)`.
    pub fn exp_walk(scale: f64) -> Self {
        Self::new(format!("exp-walk({scale})"), move |n| (scale * n.state.brownian(n.dt)).exp())
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, node: &Node<'_>) -> f64 {
        (self.f)(node)
    }

    /// Values on the terminal slice.
    pub fn values(&self, lattice: &Lattice) -> Vec<f64> {
        let n = lattice.steps();
        (0..lattice.n_states(n)).map(|s| self.value(&lattice.node(n, s))).collect()
    }

    /// Pointwise image under `g`.
    pub fn map<G>(&self, label: impl Into<String>, g: G) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let f = self.f.clone();
        Self::new(label, move |n| g(f(n)))
    }
}

impl fmt::Debug for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TerminalCondition({})", self.label)
    }
}

//! Expectations of path functionals on the lattice.
//!
//! Weighted norms need quantities such as `E[max_k X_k]` or
//! `E[(Σ_k X_k)^{p/2}]` that do not recombine. They are evaluated either
//! exactly, by enumerating every path of the (non-recombining) tree, or by
//! Monte Carlo over a sampled ensemble. Partial sums are reduced in a fixed
//! order with compensated summation so results do not depend on the thread
//! count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{sample_paths, Lattice, PathSample};
use crate::numeric::CompensatedSum;

/// Per-node (`[k][s]`) or per-edge (`[k][s * n_out + o]`) values.
#[derive(Debug, Clone, Copy)]
pub enum Field<'a> {
    Node(&'a [Vec<f64>]),
    Edge(&'a [Vec<f64>]),
}

impl Field<'_> {
    #[inline]
    fn edge_value(&self, k: usize, s: usize, o: usize, n_out: usize) -> f64 {
        match self {
            Field::Node(v) => v[k][s],
            Field::Edge(v) => v[k][s * n_out + o],
        }
    }
}

/// A batch of path functionals evaluated in one sweep: running maxima of
/// node fields over `k = 0..=N`, and powers of path sums over `k < N`.
#[derive(Debug, Clone, Default)]
pub struct PathFunctional<'a> {
    pub sups: Vec<&'a [Vec<f64>]>,
    pub sums: Vec<(Field<'a>, f64)>,
}

impl<'a> PathFunctional<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `E[max_k X_k]`; returns its slot in the result vector.
    pub fn sup(&mut self, field: &'a [Vec<f64>]) -> usize {
        self.sups.push(field);
        self.sups.len() - 1
    }

    /// Adds `E[(Σ_{k<N} X_k)^exponent]`; returns its slot (after all sups).
    pub fn sum_pow(&mut self, field: Field<'a>, exponent: f64) -> SumSlot {
        self.sums.push((field, exponent));
        SumSlot(self.sums.len() - 1)
    }

    fn channels(&self) -> usize {
        self.sups.len() + self.sums.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SumSlot(usize);

/// How path expectations are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Evaluation {
    ExactTree { path_limit: u64 },
    MonteCarlo { n_paths: usize, seed: u64 },
    /// Exact when the tree has at most `path_limit` paths, else Monte Carlo.
    Auto { path_limit: u64, n_paths: usize, seed: u64 },
}

impl Default for Evaluation {
    fn default() -> Self {
        Evaluation::ExactTree { path_limit: DEFAULT_PATH_LIMIT }
    }
}

pub const DEFAULT_PATH_LIMIT: u64 = 1 << 22;

/// The mode that actually produced a set of expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum EvaluationMode {
    ExactTree,
    MonteCarlo { n_paths: usize, seed: u64 },
}

impl EvaluationMode {
    pub fn tag(&self) -> &'static str {
        match self {
            EvaluationMode::ExactTree => "exact-tree",
            EvaluationMode::MonteCarlo { .. } => "monte-carlo",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Expectations {
    pub sups: Vec<f64>,
    pub sums: Vec<f64>,
    pub mode: EvaluationMode,
}

impl Expectations {
    pub fn sum(&self, slot: SumSlot) -> f64 {
        self.sums[slot.0]
    }
}

pub fn evaluate(lattice: &Lattice, functional: &PathFunctional<'_>, evaluation: Evaluation) -> Result<Expectations> {
    match evaluation {
        Evaluation::ExactTree { path_limit } => exact(lattice, functional, path_limit),
        Evaluation::MonteCarlo { n_paths, seed } => {
            let sample = sample_paths(lattice.model(), n_paths, seed)?;
            Ok(monte_carlo(lattice, functional, &sample, seed))
        }
        Evaluation::Auto {
            path_limit,
            n_paths,
            seed,
        } => {
            if lattice.path_count() <= path_limit as f64 {
                exact(lattice, functional, path_limit)
            } else {
                evaluate(lattice, functional, Evaluation::MonteCarlo { n_paths, seed })
            }
        }
    }
}

struct Walker<'a, 'b> {
    lattice: &'a Lattice,
    functional: &'a PathFunctional<'b>,
    n_sup: usize,
    channels: usize,
    n_out: usize,
    steps: usize,
}

impl Walker<'_, '_> {
    fn advance(&self, k: usize, s: usize, o: usize, s2: usize, from: &[f64], to: &mut [f64]) {
        for (c, field) in self.functional.sups.iter().enumerate() {
            to[c] = from[c].max(field[k + 1][s2]);
        }
        for (c, (field, _)) in self.functional.sums.iter().enumerate() {
            to[self.n_sup + c] = from[self.n_sup + c] + field.edge_value(k, s, o, self.n_out);
        }
    }

    fn leaf(&self, prob: f64, acc: &[f64], out: &mut [CompensatedSum]) {
        for c in 0..self.n_sup {
            out[c].add(prob * acc[c]);
        }
        for (c, (_, e)) in self.functional.sums.iter().enumerate() {
            let x = acc[self.n_sup + c];
            let v = if *e == 1.0 {
                x
            } else if x <= 0.0 {
                // sums are nonnegative up to rounding
                0.0
            } else {
                x.powf(*e)
            };
            out[self.n_sup + c].add(prob * v);
        }
    }

    fn visit(&self, k: usize, s: usize, prob: f64, scratch: &mut [f64], out: &mut [CompensatedSum]) {
        let c = self.channels;
        if k == self.steps {
            let acc = &scratch[k * c..(k + 1) * c];
            self.leaf(prob, acc, out);
            return;
        }
        let probs = self.lattice.outcome_probs();
        for o in 0..self.n_out {
            let q = probs[o];
            if q == 0.0 {
                continue;
            }
            let s2 = self.lattice.successor(k, s, o);
            let (head, tail) = scratch.split_at_mut((k + 1) * c);
            self.advance(k, s, o, s2, &head[k * c..], &mut tail[..c]);
            self.visit(k + 1, s2, prob * q, scratch, out);
        }
    }
}

fn walker<'a, 'b>(lattice: &'a Lattice, functional: &'a PathFunctional<'b>) -> Walker<'a, 'b> {
    Walker {
        lattice,
        functional,
        n_sup: functional.sups.len(),
        channels: functional.channels(),
        n_out: lattice.n_outcomes(),
        steps: lattice.steps(),
    }
}

fn root_acc(functional: &PathFunctional<'_>) -> Vec<f64> {
    let mut acc: Vec<f64> = functional.sups.iter().map(|f| f[0][0]).collect();
    acc.extend(std::iter::repeat_n(0.0, functional.sums.len()));
    acc
}

fn split(functional: &PathFunctional<'_>, sums: Vec<f64>, mode: EvaluationMode) -> Expectations {
    let n_sup = functional.sups.len();
    Expectations {
        sups: sums[..n_sup].to_vec(),
        sums: sums[n_sup..].to_vec(),
        mode,
    }
}

fn exact(lattice: &Lattice, functional: &PathFunctional<'_>, path_limit: u64) -> Result<Expectations> {
    let paths = lattice.path_count();
    if paths > path_limit as f64 {
        return Err(Error::PathLimit { paths, limit: path_limit });
    }
    let w = walker(lattice, functional);
    let c = w.channels;

    // Expand a prefix frontier so subtrees can be walked in parallel.
    struct Prefix {
        k: usize,
        s: usize,
        prob: f64,
        acc: Vec<f64>,
    }
    let mut frontier = vec![Prefix {
        k: 0,
        s: 0,
        prob: 1.0,
        acc: root_acc(functional),
    }];
    while frontier.len() < 256 && frontier[0].k < w.steps {
        let mut next = Vec::with_capacity(frontier.len() * w.n_out);
        for p in &frontier {
            for o in 0..w.n_out {
                let q = lattice.outcome_probs()[o];
                if q == 0.0 {
                    continue;
                }
                let s2 = lattice.successor(p.k, p.s, o);
                let mut acc = vec![0.0; c];
                w.advance(p.k, p.s, o, s2, &p.acc, &mut acc);
                next.push(Prefix {
                    k: p.k + 1,
                    s: s2,
                    prob: p.prob * q,
                    acc,
                });
            }
        }
        frontier = next;
    }

    let partials: Vec<Vec<f64>> = frontier
        .par_iter()
        .map(|p| {
            let mut scratch = vec![0.0; (w.steps + 1) * c];
            scratch[p.k * c..(p.k + 1) * c].copy_from_slice(&p.acc);
            let mut out = vec![CompensatedSum::new(); c];
            w.visit(p.k, p.s, p.prob, &mut scratch, &mut out);
            out.iter().map(CompensatedSum::value).collect()
        })
        .collect();
    let mut total = vec![CompensatedSum::new(); c];
    for part in &partials {
        for (t, v) in total.iter_mut().zip(part) {
            t.add(*v);
        }
    }
    Ok(split(
        functional,
        total.iter().map(CompensatedSum::value).collect(),
        EvaluationMode::ExactTree,
    ))
}

const MC_CHUNK: usize = 512;

/// Monte Carlo means of the functionals over a sampled ensemble.
pub fn monte_carlo(lattice: &Lattice, functional: &PathFunctional<'_>, sample: &PathSample, seed: u64) -> Expectations {
    let w = walker(lattice, functional);
    let c = w.channels;
    let n = sample.n_paths();
    let chunks: Vec<usize> = (0..n).step_by(MC_CHUNK).collect();
    let partials: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|&start| {
            let mut out = vec![CompensatedSum::new(); c];
            let mut acc = vec![0.0; c];
            let mut nxt = vec![0.0; c];
            for i in start..(start + MC_CHUNK).min(n) {
                acc.copy_from_slice(&root_acc(functional));
                let mut s = 0;
                for (k, &o) in sample.path(i).iter().enumerate() {
                    let o = o as usize;
                    let s2 = lattice.successor(k, s, o);
                    w.advance(k, s, o, s2, &acc, &mut nxt);
                    std::mem::swap(&mut acc, &mut nxt);
                    s = s2;
                }
                w.leaf(1.0, &acc, &mut out);
            }
            out.iter().map(CompensatedSum::value).collect()
        })
        .collect();
    let mut total = vec![CompensatedSum::new(); c];
    for part in &partials {
        for (t, v) in total.iter_mut().zip(part) {
            t.add(*v);
        }
    }
    split(
        functional,
        total.iter().map(|t| t.value() / n as f64).collect(),
        EvaluationMode::MonteCarlo { n_paths: n, seed },
    )
}

/// Exact `E[g(X_k)]` for a node field at a single step.
pub fn slice_expectation(lattice: &Lattice, k: usize, values: &[f64]) -> f64 {
    let slice = lattice.slice(k);
    slice
        .probs
        .iter()
        .zip(values)
        .map(|(p, v)| p * v)
        .collect::<CompensatedSum>()
        .value()
}

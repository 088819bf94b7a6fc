//! Discrete stochastic basis: time grid, factor law, recombining Markov
//! states and the transition tables the backward solvers sweep over.
//!
//! Per step the factors are a Brownian proxy `ΔB = ±√dt` (probability 1/2
//! each), a jump outcome that is either "no jump" or exactly one mark `i`
//! with probability `λ_i·dt`, and, when enabled, an orthogonal Rademacher
//! coin `ΔO = ±1`. The three families are independent of each other and
//! across steps.

mod sampling;
mod weights;

pub use sampling::{sample_paths, PathSample};
pub use weights::{compute_weights, WeightProcesses};

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_k = k·T/N` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node time; `time(N)` is exactly the horizon.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

/// `build_grid(T, N)`.
pub fn build_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub value: f64,
    pub intensity: f64,
}

/// Finite support of the jump measure: distinct nonzero mark values with
/// nonnegative intensities.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Mark>", into = "Vec<Mark>")]
pub struct MarkSpace {
    marks: Vec<Mark>,
}

impl MarkSpace {
    pub fn new(marks: Vec<Mark>) -> Result<Self> {
        for (i, m) in marks.iter().enumerate() {
            if m.value == 0.0 || !m.value.is_finite() {
                return Err(Error::InvalidArgument(format!("mark {i} has value {}; marks must be nonzero", m.value)));
            }
            if !(m.intensity >= 0.0) || !m.intensity.is_finite() {
                return Err(Error::InvalidArgument(format!("mark {i} has intensity {}", m.intensity)));
            }
            if marks[..i].iter().any(|o| o.value == m.value) {
                return Err(Error::InvalidArgument(format!("duplicate mark value {}", m.value)));
            }
        }
        Ok(Self { marks })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn marks(&self) -> &[Mark] {
        &self.marks
    }

    pub fn values(&self) -> Vec<f64> {
        self.marks.iter().map(|m| m.value).collect()
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.marks.iter().map(|m| m.intensity).collect()
    }

    pub fn total_intensity(&self) -> f64 {
        self.marks.iter().map(|m| m.intensity).sum()
    }
}

impl TryFrom<Vec<Mark>> for MarkSpace {
    type Error = Error;
    fn try_from(marks: Vec<Mark>) -> Result<Self> {
        MarkSpace::new(marks)
    }
}

impl From<MarkSpace> for Vec<Mark> {
    fn from(space: MarkSpace) -> Self {
        space.marks
    }
}

/// One joint realization of the per-step factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Outcome {
    pub up: bool,
    /// `None` for no jump, `Some(i)` for mark `i`.
    pub jump: Option<usize>,
    /// Present iff the model carries the orthogonal coin.
    pub coin: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    grid: TimeGrid,
    marks: MarkSpace,
    orthogonal: bool,
}

impl FactorModel {
    pub fn new(grid: TimeGrid, marks: MarkSpace, orthogonal: bool) -> Result<Self> {
        let total_rate_dt = marks.total_intensity() * grid.dt();
        if total_rate_dt >= 1.0 {
            return Err(Error::IntensityTooLarge { total_rate_dt });
        }
        Ok(Self { grid, marks, orthogonal })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn marks(&self) -> &MarkSpace {
        &self.marks
    }

    pub fn orthogonal(&self) -> bool {
        self.orthogonal
    }

    pub fn n_marks(&self) -> usize {
        self.marks.len()
    }

    fn coin_outcomes(&self) -> usize {
        if self.orthogonal {
            2
        } else {
            1
        }
    }

    /// `2·(m+1)·(orthogonal ? 2 : 1)`.
    pub fn outcome_count(&self) -> usize {
        2 * (self.n_marks() + 1) * self.coin_outcomes()
    }

    /// Probability of no jump during one step.
    pub fn no_jump_probability(&self) -> f64 {
        1.0 - self.marks.total_intensity() * self.grid.dt()
    }

    /// Outcomes in canonical index order: jump slowest, then walk, then coin.
    pub fn outcomes(&self) -> Vec<Outcome> {
        let nc = self.coin_outcomes();
        let mut out = Vec::with_capacity(self.outcome_count());
        for j in 0..=self.n_marks() {
            for b in 0..2 {
                for c in 0..nc {
                    out.push(Outcome {
                        up: b == 1,
                        jump: if j == 0 { None } else { Some(j - 1) },
                        coin: if self.orthogonal { Some(c == 1) } else { None },
                    });
                }
            }
        }
        out
    }

    fn validate_outcome(&self, outcome: &Outcome) -> Result<()> {
        if let Some(i) = outcome.jump {
            if i >= self.n_marks() {
                return Err(Error::InvalidArgument(format!(
                    "jump mark index {i} out of range for {} marks",
                    self.n_marks()
                )));
            }
        }
        if outcome.coin.is_some() != self.orthogonal {
            return Err(Error::InvalidArgument(
                "coin outcome must be present exactly when the orthogonal factor is on".into(),
            ));
        }
        Ok(())
    }

    pub fn outcome_index(&self, outcome: &Outcome) -> Result<usize> {
        self.validate_outcome(outcome)?;
        let j = outcome.jump.map_or(0, |i| i + 1);
        let c = outcome.coin.map_or(0, usize::from);
        Ok((j * 2 + usize::from(outcome.up)) * self.coin_outcomes() + c)
    }

    pub fn outcome_probability(&self, outcome: &Outcome) -> Result<f64> {
        self.validate_outcome(outcome)?;
        let dt = self.grid.dt();
        let pj = match outcome.jump {
            None => self.no_jump_probability(),
            Some(i) => self.marks.marks[i].intensity * dt,
        };
        let pc = if self.orthogonal { 0.5 } else { 1.0 };
        Ok(0.5 * pj * pc)
    }

    /// `transition(model, state, outcome)`.
    pub fn transition(&self, state: &MarkovState, outcome: &Outcome) -> Result<(MarkovState, f64)> {
        let prob = self.outcome_probability(outcome)?;
        if state.jump_counts.len() != self.n_marks() || state.coin_sum.is_some() != self.orthogonal {
            return Err(Error::InvalidArgument("state does not belong to this model".into()));
        }
        if state.step >= self.grid.steps() {
            return Err(Error::InvalidArgument(format!("state at step {} has no successor", state.step)));
        }
        let mut next = state.clone();
        next.step += 1;
        next.walk_sum += if outcome.up { 1 } else { -1 };
        if let Some(i) = outcome.jump {
            next.jump_counts[i] += 1;
        }
        if let (Some(c), Some(up)) = (next.coin_sum.as_mut(), outcome.coin) {
            *c += if up { 1 } else { -1 };
        }
        Ok((next, prob))
    }

    pub fn root_state(&self) -> MarkovState {
        MarkovState {
            step: 0,
            walk_sum: 0,
            jump_counts: vec![0; self.n_marks()],
            coin_sum: self.orthogonal.then_some(0),
        }
    }

    /// Recombined states at step `k` with their probabilities.
    pub fn enumerate_states(&self, k: usize) -> Result<Vec<(MarkovState, f64)>> {
        if k > self.grid.steps() {
            return Err(Error::InvalidArgument(format!(
                "step {k} outside 0..={}",
                self.grid.steps()
            )));
        }
        let outcomes = self.outcomes();
        let mut level = vec![(self.root_state(), 1.0)];
        for _ in 0..k {
            let mut index: HashMap<MarkovState, usize> = HashMap::new();
            let mut next: Vec<(MarkovState, f64)> = Vec::new();
            for (state, p) in &level {
                for o in &outcomes {
                    let (succ, q) = self.transition(state, o)?;
                    match index.get(&succ) {
                        Some(&i) => next[i].1 += p * q,
                        None => {
                            index.insert(succ.clone(), next.len());
                            next.push((succ, p * q));
                        }
                    }
                }
            }
            level = next;
        }
        Ok(level)
    }
}

/// `build_model(grid, marks, orthogonal)`.
pub fn build_model(grid: TimeGrid, marks: MarkSpace, orthogonal: bool) -> Result<FactorModel> {
    FactorModel::new(grid, marks, orthogonal)
}

/// Recombining state: walk imbalance, per-mark jump counts, coin imbalance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MarkovState {
    pub step: usize,
    pub walk_sum: i32,
    pub jump_counts: Vec<u32>,
    pub coin_sum: Option<i32>,
}

impl MarkovState {
    pub fn total_jumps(&self) -> u32 {
        self.jump_counts.iter().sum()
    }

    /// Brownian proxy value `B_k = walk_sum·√dt`.
    pub fn brownian(&self, dt: f64) -> f64 {
        self.walk_sum as f64 * dt.sqrt()
    }

    /// Orthogonal martingale proxy `O_k = coin_sum·√dt` (0 without the coin).
    pub fn orthogonal_value(&self, dt: f64) -> f64 {
        self.coin_sum.unwrap_or(0) as f64 * dt.sqrt()
    }
}

impl fmt::Display for MarkovState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k={} w={} j=[", self.step, self.walk_sum)?;
        for (i, c) in self.jump_counts.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")?;
        if let Some(c) = self.coin_sum {
            write!(f, " o={c}")?;
        }
        Ok(())
    }
}

/// A lattice node handed to drivers, terminal conditions and obstacles.
#[derive(Debug, Clone, Copy)]
pub struct Node<'a> {
    pub k: usize,
    pub t: f64,
    pub dt: f64,
    pub index: usize,
    pub state: &'a MarkovState,
}

#[derive(Debug, Clone)]
pub struct Slice {
    pub states: Vec<MarkovState>,
    pub probs: Vec<f64>,
    /// Successor index per `(state, outcome)`, row-major; empty on the last slice.
    pub succ: Vec<u32>,
}

impl Slice {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Fully built recombining lattice with per-outcome increment tables.
#[derive(Debug, Clone)]
pub struct Lattice {
    model: FactorModel,
    outcomes: Vec<Outcome>,
    outcome_probs: Vec<f64>,
    db: Vec<f64>,
    slices: Vec<Slice>,
}

impl Lattice {
    pub fn build(model: &FactorModel) -> Result<Self> {
        let outcomes = model.outcomes();
        let n_out = outcomes.len();
        let outcome_probs = outcomes
            .iter()
            .map(|o| model.outcome_probability(o))
            .collect::<Result<Vec<_>>>()?;
        let sdt = model.grid().dt().sqrt();
        let db = outcomes.iter().map(|o| if o.up { sdt } else { -sdt }).collect();

        let mut slices = Vec::with_capacity(model.grid().steps() + 1);
        slices.push(Slice {
            states: vec![model.root_state()],
            probs: vec![1.0],
            succ: Vec::new(),
        });
        for _ in 0..model.grid().steps() {
            let cur = slices.last_mut().expect("root slice");
            let mut index: HashMap<MarkovState, u32> = HashMap::with_capacity(cur.len() * 2);
            let mut states = Vec::new();
            let mut probs: Vec<f64> = Vec::new();
            let mut succ = Vec::with_capacity(cur.len() * n_out);
            for (state, &p) in cur.states.iter().zip(&cur.probs) {
                for (o, q) in outcomes.iter().zip(&outcome_probs) {
                    let (next, _) = model.transition(state, o)?;
                    let idx = match index.get(&next) {
                        Some(&i) => i,
                        None => {
                            let i = states.len() as u32;
                            index.insert(next.clone(), i);
                            states.push(next);
                            probs.push(0.0);
                            i
                        }
                    };
                    probs[idx as usize] += p * q;
                    succ.push(idx);
                }
            }
            cur.succ = succ;
            slices.push(Slice { states, probs, succ: Vec::new() });
        }
        Ok(Self {
            model: model.clone(),
            outcomes,
            outcome_probs,
            db,
            slices,
        })
    }

    pub fn model(&self) -> &FactorModel {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        self.model.grid()
    }

    pub fn steps(&self) -> usize {
        self.model.grid().steps()
    }

    pub fn dt(&self) -> f64 {
        self.model.grid().dt()
    }

    pub fn n_marks(&self) -> usize {
        self.model.n_marks()
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn outcome_probs(&self) -> &[f64] {
        &self.outcome_probs
    }

    /// `ΔB` per outcome.
    pub fn db(&self) -> &[f64] {
        &self.db
    }

    /// Compensated jump increment `1_{mark i} − λ_i·dt` for outcome `o`.
    pub fn jump_increment(&self, o: usize, i: usize) -> f64 {
        let ind = if self.outcomes[o].jump == Some(i) { 1.0 } else { 0.0 };
        ind - self.model.marks().marks()[i].intensity * self.dt()
    }

    /// `ΔO` per outcome (0 without the coin).
    pub fn coin_increment(&self, o: usize) -> f64 {
        match self.outcomes[o].coin {
            Some(true) => 1.0,
            Some(false) => -1.0,
            None => 0.0,
        }
    }

    pub fn slice(&self, k: usize) -> &Slice {
        &self.slices[k]
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn n_states(&self, k: usize) -> usize {
        self.slices[k].len()
    }

    pub fn total_states(&self) -> usize {
        self.slices.iter().map(Slice::len).sum()
    }

    #[inline]
    pub fn successor(&self, k: usize, s: usize, o: usize) -> usize {
        self.slices[k].succ[s * self.outcomes.len() + o] as usize
    }

    pub fn node(&self, k: usize, s: usize) -> Node<'_> {
        Node {
            k,
            t: self.grid().time(k),
            dt: self.dt(),
            index: s,
            state: &self.slices[k].states[s],
        }
    }

    /// Number of distinct positive-probability paths.
    pub fn path_count(&self) -> f64 {
        let live = self.outcome_probs.iter().filter(|&&q| q > 0.0).count() as f64;
        live.powi(self.steps() as i32)
    }

    /// Exact conditional expectation of a successor field from `(k, s)`.
    pub fn conditional_mean(&self, k: usize, s: usize, next: &[f64]) -> f64 {
        let n_out = self.outcomes.len();
        let row = &self.slices[k].succ[s * n_out..(s + 1) * n_out];
        row.iter()
            .zip(&self.outcome_probs)
            .map(|(&i, q)| q * next[i as usize])
            .sum()
    }
}

//! JSON run configuration: parsing, validation and construction of the
//! model objects it names.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use bsde_lab::bsde::{auto_beta, beta_threshold, PicardInit, SolverParams};
use bsde_lab::drivers::{
    AffineDriver, Coefficient, CompositeDriver, Driver, DriverRef, JumpDriver, StochasticCoefficientDriver,
    TerminalCondition, ZDriver, ZeroDriver,
};
use bsde_lab::lattice::{build_grid, build_model, compute_weights, Lattice, Mark, MarkSpace, Node, WeightProcesses};
use bsde_lab::paths::Evaluation;
use bsde_lab::rbsde::Obstacle;

use crate::CliError;

/// Factor applied to the β threshold by `"beta": "auto"`.
pub const AUTO_BETA_FACTOR: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub driver: DriverConfig,
    pub terminal: TerminalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<ObstacleConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub experiment: Experiment,
    #[serde(default)]
    pub evaluation: Evaluation,
    #[serde(default)]
    pub seed: u64,
    /// Not echoed in reports, so artifacts do not depend on where they are written.
    #[serde(default = "default_output", skip_serializing)]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub horizon: f64,
    pub steps: usize,
    #[serde(default)]
    pub marks: Vec<Mark>,
    #[serde(default)]
    pub orthogonal: bool,
    #[serde(default)]
    pub weights: WeightConfig,
    /// Floor `ε` for `a²`, also used by the automatic β rule.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightConfig {
    /// The driver's claimed coefficients, with `θ` raised to `ε`.
    #[default]
    Driver,
    Constant { theta: f64, gamma: f64, eta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverConfig {
    Zero,
    Affine {
        alpha: f64,
        #[serde(default)]
        c: f64,
    },
    Z {
        gamma: Coefficient,
    },
    Jump {
        eta: Coefficient,
        weights: Vec<f64>,
    },
    StochasticCoefficient {
        scale: f64,
        t0: f64,
        #[serde(default)]
        modulation: f64,
    },
    Composite {
        #[serde(default)]
        alpha: f64,
        #[serde(default)]
        sine: f64,
        #[serde(default = "zero_coefficient")]
        gamma: Coefficient,
        #[serde(default = "zero_coefficient")]
        eta: Coefficient,
        #[serde(default)]
        weights: Vec<f64>,
        #[serde(default)]
        c: f64,
        #[serde(default)]
        c_walk: f64,
    },
}

fn zero_coefficient() -> Coefficient {
    Coefficient::constant(0.0)
}

/// Functions of the terminal state `(B_N, jump counts, O_N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalConfig {
    Constant {
        value: f64,
    },
    /// `exp(scale·B_N)`.
    ExpWalk {
        scale: f64,
    },
    /// `c + a_walk·B + Σ a_jumps[i]·n_i + a_coin·O`.
    Linear {
        #[serde(default)]
        c: f64,
        #[serde(default)]
        a_walk: f64,
        #[serde(default)]
        a_jumps: Vec<f64>,
        #[serde(default)]
        a_coin: f64,
    },
    /// `amplitude·sin(frequency·B + coin·O) + offset`.
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        coin: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `(strike − S)⁺ + shift` with `S = exp(vol·B + Σ jump_scale[i]·n_i)`.
    Put {
        strike: f64,
        vol: f64,
        #[serde(default)]
        jump_scale: Vec<f64>,
        #[serde(default)]
        shift: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObstacleConfig {
    Never,
    Constant {
        value: f64,
    },
    Put {
        strike: f64,
        vol: f64,
        #[serde(default)]
        jump_scale: Vec<f64>,
        #[serde(default)]
        shift: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    Auto,
    Value(f64),
}

impl Serialize for Beta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Beta::Auto => s.serialize_str("auto"),
            Beta::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = Beta;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or \"auto\"")
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Beta, E> {
                if v == "auto" {
                    Ok(Beta::Auto)
                } else {
                    Err(E::invalid_value(serde::de::Unexpected::Str(v), &self))
                }
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Beta, E> {
                Ok(Beta::Value(v))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Beta, E> {
                Ok(Beta::Value(v as f64))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Beta, E> {
                Ok(Beta::Value(v as f64))
            }
        }
        d.deserialize_any(Visitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_beta")]
    pub beta: Beta,
    #[serde(default = "default_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_true")]
    pub implicit: bool,
    #[serde(default)]
    pub init: PicardInit,
}

fn default_p() -> f64 {
    1.5
}
fn default_beta() -> Beta {
    Beta::Auto
}
fn default_tol() -> f64 {
    1e-12
}
fn default_iters() -> usize {
    200
}
fn default_true() -> bool {
    true
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            p: default_p(),
            beta: default_beta(),
            picard_tol: default_tol(),
            max_iters: default_iters(),
            implicit: true,
            init: PicardInit::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    Solve,
    Reflect,
    PenalizeStudy {
        #[serde(default = "default_penalties")]
        schedule: Vec<f64>,
    },
    TruncationStudy {
        #[serde(default = "default_levels")]
        schedule: Vec<f64>,
    },
    VerifyEstimates {
        #[serde(default = "default_pairs")]
        pairs: usize,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    VerifyNorms {
        #[serde(default = "default_probes")]
        probes: usize,
        #[serde(default = "default_batches")]
        batches: usize,
        #[serde(default = "default_batch_paths")]
        batch_paths: usize,
    },
    ComparisonCheck {
        driver2: DriverConfig,
        terminal2: TerminalConfig,
    },
}

fn default_penalties() -> Vec<f64> {
    vec![4.0, 16.0, 64.0, 256.0]
}
fn default_levels() -> Vec<f64> {
    (0..9).map(|j| 2f64.powi(j)).collect()
}
fn default_pairs() -> usize {
    20
}
fn default_scale() -> f64 {
    0.1
}
fn default_probes() -> usize {
    2000
}
fn default_batches() -> usize {
    20
}
fn default_batch_paths() -> usize {
    500
}

/// Parses and validates a configuration; `"auto"` β is resolved.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("at `{path}`: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    if cfg.solver.beta == Beta::Auto {
        cfg.solver.beta = Beta::Value(auto_beta(cfg.solver.p, cfg.model.epsilon));
    }
    Ok(cfg)
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("at `{field}`: {msg}"))
}

impl RunConfig {
    fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        if !(m.horizon > 0.0 && m.horizon.is_finite()) {
            return Err(config_err("model.horizon", format!("must be positive, got {}", m.horizon)));
        }
        if m.steps == 0 {
            return Err(config_err("model.steps", "must be at least 1"));
        }
        if !(m.epsilon > 0.0) {
            return Err(config_err("model.epsilon", format!("must be positive, got {}", m.epsilon)));
        }
        MarkSpace::new(m.marks.clone()).map_err(|e| config_err("model.marks", e))?;
        let p = self.solver.p;
        if !(p > 1.0 && p < 2.0) {
            return Err(config_err("solver.p", format!("must lie in (1, 2), got {p}")));
        }
        if let Beta::Value(b) = self.solver.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(config_err("solver.beta", format!("must be nonnegative, got {b}")));
            }
        }
        if !(self.solver.picard_tol > 0.0) || self.solver.max_iters == 0 {
            return Err(config_err("solver", "picard_tol and max_iters must be positive"));
        }
        check_driver("driver", &self.driver, m.marks.len())?;
        check_terminal("terminal", &self.terminal, m.marks.len())?;
        if let Some(ObstacleConfig::Put { jump_scale, .. }) = &self.obstacle {
            if jump_scale.len() > m.marks.len() {
                return Err(config_err("obstacle.jump_scale", "longer than the mark list"));
            }
        }
        match &self.experiment {
            Experiment::Reflect | Experiment::PenalizeStudy { .. } if self.obstacle.is_none() => {
                return Err(config_err("obstacle", "required by this experiment"));
            }
            _ => {}
        }
        match &self.experiment {
            Experiment::PenalizeStudy { schedule } => check_schedule("experiment.schedule", schedule, 0.0)?,
            Experiment::TruncationStudy { schedule } => check_schedule("experiment.schedule", schedule, 1.0)?,
            Experiment::VerifyEstimates { pairs, scale } => {
                if *pairs == 0 || !(*scale > 0.0) {
                    return Err(config_err("experiment", "pairs and scale must be positive"));
                }
            }
            Experiment::VerifyNorms { probes, batches, batch_paths } => {
                if *probes == 0 || *batches == 0 || *batch_paths == 0 {
                    return Err(config_err("experiment", "probes, batches and batch_paths must be positive"));
                }
            }
            Experiment::ComparisonCheck { driver2, terminal2 } => {
                check_driver("experiment.driver2", driver2, m.marks.len())?;
                check_terminal("experiment.terminal2", terminal2, m.marks.len())?;
            }
            Experiment::Solve | Experiment::Reflect => {}
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        match self.solver.beta {
            Beta::Value(b) => b,
            Beta::Auto => auto_beta(self.solver.p, self.model.epsilon),
        }
    }

    pub fn solver_params(&self) -> SolverParams {
        SolverParams {
            p: self.solver.p,
            beta: self.beta(),
            picard_tol: self.solver.picard_tol,
            picard_max_iters: self.solver.max_iters,
            implicit: self.solver.implicit,
            init: self.solver.init,
        }
    }

    pub fn beta_threshold(&self) -> f64 {
        beta_threshold(self.solver.p, self.model.epsilon)
    }

    pub fn lattice(&self) -> Result<Lattice, CliError> {
        let grid = build_grid(self.model.horizon, self.model.steps).map_err(CliError::runtime)?;
        let marks = MarkSpace::new(self.model.marks.clone()).map_err(CliError::runtime)?;
        let model = build_model(grid, marks, self.model.orthogonal).map_err(CliError::runtime)?;
        Lattice::build(&model).map_err(CliError::runtime)
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.model.marks.iter().map(|m| m.intensity).collect()
    }

    pub fn weights(&self, lattice: &Lattice, f: &dyn Driver) -> Result<WeightProcesses, CliError> {
        let (p, eps) = (self.solver.p, self.model.epsilon);
        match self.model.weights {
            WeightConfig::Driver => compute_weights(
                lattice,
                |n| f.coefficients(n).theta.max(eps),
                |n| f.coefficients(n).gamma,
                |n| f.coefficients(n).eta,
                p,
                eps,
            ),
            WeightConfig::Constant { theta, gamma, eta } => {
                compute_weights(lattice, |_| theta, |_| gamma, |_| eta, p, eps)
            }
        }
        .map_err(CliError::runtime)
    }

    pub fn obstacle(&self, lattice: &Lattice) -> Option<Obstacle> {
        self.obstacle.as_ref().map(|o| match o {
            ObstacleConfig::Never => Obstacle::never(lattice),
            ObstacleConfig::Constant { value } => {
                let v = *value;
                Obstacle::new(lattice, "constant", move |_| v)
            }
            ObstacleConfig::Put { strike, vol, jump_scale, shift } => {
                let f = put(*strike, *vol, jump_scale.clone(), *shift);
                Obstacle::new(lattice, "put", f)
            }
        })
    }
}

fn check_schedule(field: &str, schedule: &[f64], min: f64) -> Result<(), CliError> {
    if schedule.is_empty() {
        return Err(config_err(field, "must not be empty"));
    }
    if schedule.iter().any(|x| !(*x >= min) || !x.is_finite()) {
        return Err(config_err(field, format!("entries must be finite and at least {min}")));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config_err(field, "must be strictly increasing"));
    }
    Ok(())
}

fn check_driver(field: &str, d: &DriverConfig, m: usize) -> Result<(), CliError> {
    match d {
        DriverConfig::Jump { weights, .. } | DriverConfig::Composite { weights, .. } => {
            if !weights.is_empty() && weights.len() != m {
                return Err(config_err(
                    &format!("{field}.weights"),
                    format!("needs one weight per mark ({m}), got {}", weights.len()),
                ));
            }
        }
        DriverConfig::StochasticCoefficient { t0, .. } if !(*t0 > 0.0) => {
            return Err(config_err(&format!("{field}.t0"), "must be positive"));
        }
        _ => {}
    }
    Ok(())
}

fn check_terminal(field: &str, t: &TerminalConfig, m: usize) -> Result<(), CliError> {
    let extra = match t {
        TerminalConfig::Linear { a_jumps, .. } => a_jumps.len(),
        TerminalConfig::Put { jump_scale, .. } => jump_scale.len(),
        _ => 0,
    };
    if extra > m {
        return Err(config_err(field, "has more jump coefficients than marks"));
    }
    Ok(())
}

fn jump_sum(node: &Node<'_>, coeffs: &[f64]) -> f64 {
    node.state
        .jump_counts
        .iter()
        .zip(coeffs)
        .map(|(n, a)| *n as f64 * a)
        .sum()
}

fn put(strike: f64, vol: f64, jump_scale: Vec<f64>, shift: f64) -> impl Fn(&Node<'_>) -> f64 + Send + Sync + 'static {
    move |n| {
        let s = (vol * n.state.brownian(n.dt) + jump_sum(n, &jump_scale)).exp();
        (strike - s).max(0.0) + shift
    }
}

pub fn build_driver(d: &DriverConfig, intensities: &[f64]) -> DriverRef {
    let pad = |w: &[f64]| if w.is_empty() { vec![0.0; intensities.len()] } else { w.to_vec() };
    match d {
        DriverConfig::Zero => Arc::new(ZeroDriver),
        DriverConfig::Affine { alpha, c } => Arc::new(AffineDriver { alpha: *alpha, c: *c }),
        DriverConfig::Z { gamma } => Arc::new(ZDriver { gamma: *gamma }),
        DriverConfig::Jump { eta, weights } => Arc::new(JumpDriver {
            eta: *eta,
            weights: pad(weights),
            intensities: intensities.to_vec(),
        }),
        DriverConfig::StochasticCoefficient { scale, t0, modulation } => Arc::new(StochasticCoefficientDriver {
            scale: *scale,
            t0: *t0,
            modulation: *modulation,
        }),
        DriverConfig::Composite { alpha, sine, gamma, eta, weights, c, c_walk } => Arc::new(CompositeDriver {
            alpha: *alpha,
            sine: *sine,
            gamma: *gamma,
            eta: *eta,
            weights: pad(weights),
            intensities: intensities.to_vec(),
            c: *c,
            c_walk: *c_walk,
        }),
    }
}

pub fn build_terminal(t: &TerminalConfig) -> TerminalCondition {
    match t.clone() {
        TerminalConfig::Constant { value } => TerminalCondition::constant(value),
        TerminalConfig::ExpWalk { scale } => TerminalCondition::exp_walk(scale),
        TerminalConfig::Linear { c, a_walk, a_jumps, a_coin } => TerminalCondition::new("linear", move |n| {
            c + a_walk * n.state.brownian(n.dt) + jump_sum(n, &a_jumps) + a_coin * n.state.orthogonal_value(n.dt)
        }),
        TerminalConfig::Sine { amplitude, frequency, coin, offset } => TerminalCondition::new("sine", move |n| {
            amplitude * (frequency * n.state.brownian(n.dt) + coin * n.state.orthogonal_value(n.dt)).sin() + offset
        }),
        TerminalConfig::Put { strike, vol, jump_scale, shift } => {
            TerminalCondition::new("put", put(strike, vol, jump_scale, shift))
        }
    }
}

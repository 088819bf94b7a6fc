//! Experiment dispatch.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use bsde_lab::bsde::{apriori_report, comparison_check, solve, truncation_study, Solution};
use bsde_lab::drivers::{integrability_report, lipschitz_audit, DriverRef, ShiftedDriver, TerminalCondition};
use bsde_lab::lattice::{sample_paths, Lattice};
use bsde_lab::paths::slice_expectation;
use bsde_lab::rbsde::{penalization_study, skorokhod_check, solve_dp};
use bsde_lab::spaces::{bj_sandwich, weighted_norm_report, NormReport, VEnsemble};
use bsde_lab::Error;

use crate::config::{build_driver, build_terminal, Experiment, RunConfig};
use crate::CliError;

/// What an experiment produced: JSON results, CSV tables and failed checks.
#[derive(Debug, Default)]
pub struct Outcome {
    pub results: Value,
    pub tables: Vec<(String, String)>,
    pub failures: Vec<String>,
}

impl Outcome {
    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(msg());
        }
    }
}

fn norms_csv(r: &NormReport) -> String {
    format!("{}\n{}\n", NormReport::csv_header(), r.csv_row())
}

fn runtime(e: Error) -> CliError {
    CliError::runtime(e)
}

pub fn run_experiment(cfg: &RunConfig, seed: u64) -> Result<Outcome, CliError> {
    let lattice = cfg.lattice()?;
    let intensities = cfg.intensities();
    let f = build_driver(&cfg.driver, &intensities);
    let xi = build_terminal(&cfg.terminal);
    let params = cfg.solver_params();
    let beta = params.beta;
    let evaluation = cfg.evaluation;
    let mut out = Outcome::default();

    match &cfg.experiment {
        Experiment::Solve => {
            let sol = solve(&lattice, f.as_ref(), &xi, &params).map_err(runtime)?;
            let weights = cfg.weights(&lattice, f.as_ref())?;
            let norms = weighted_norm_report(&lattice, &sol, &weights, beta, evaluation).map_err(runtime)?;
            let terminal = xi.values(&lattice);
            let inv = sol.check_invariants(&lattice, &terminal).map_err(runtime)?;
            out.check(inv.pass(), || format!("solution invariants failed: {inv:?}"));
            out.results = json!({
                "y0": sol.y0(),
                "terminal_mean": slice_expectation(&lattice, lattice.steps(), &terminal),
                "invariants": inv,
                "picard": sol.stats,
                "norms": norms,
            });
            out.tables.push(("solution.csv".into(), sol.to_csv()));
            out.tables.push(("norms.csv".into(), norms_csv(&norms)));
        }
        Experiment::Reflect => {
            let obstacle = cfg.obstacle(&lattice).expect("validated");
            let sol = solve_dp(&lattice, f.as_ref(), &xi, &obstacle, &params).map_err(runtime)?;
            let weights = cfg.weights(&lattice, f.as_ref())?;
            let norms = weighted_norm_report(&lattice, &sol, &weights, beta, evaluation).map_err(runtime)?;
            let sk = skorokhod_check(&lattice, &sol, &obstacle).map_err(runtime)?;
            let inv = sol.check_invariants(&lattice, &xi.values(&lattice)).map_err(runtime)?;
            let mut below: f64 = 0.0;
            for (k, row) in sol.y.iter().enumerate() {
                for (s, y) in row.iter().enumerate() {
                    below = below.max(obstacle.at(k, s) - y);
                }
            }
            out.check(below <= 0.0, || format!("Y falls below L by {below:e}"));
            out.check(sk.node_max == 0.0, || format!("Skorokhod residual {:e}", sk.node_max));
            out.check(inv.pass(), || format!("solution invariants failed: {inv:?}"));
            out.results = json!({
                "y0": sol.y0(),
                "shortfall": below.max(0.0),
                "skorokhod": sk,
                "invariants": inv,
                "picard": sol.stats,
                "norms": norms,
            });
            out.tables.push(("solution.csv".into(), sol.to_csv()));
            out.tables.push(("norms.csv".into(), norms_csv(&norms)));
        }
        Experiment::PenalizeStudy { schedule } => {
            let obstacle = cfg.obstacle(&lattice).expect("validated");
            let weights = cfg.weights(&lattice, f.as_ref())?;
            let st = penalization_study(&lattice, f.as_ref(), &xi, &obstacle, schedule, &params, &weights, evaluation)
                .map_err(runtime)?;
            out.check(st.monotone(), || {
                format!("penalized solutions decrease in n by {:e}", st.monotonicity_violation)
            });
            out.tables.push(("penalization.csv".into(), st.to_csv()));
            out.results = serde_json::to_value(&st).expect("serializable");
        }
        Experiment::TruncationStudy { schedule } => {
            let weights = cfg.weights(&lattice, f.as_ref())?;
            let st = truncation_study(&lattice, f.clone(), &xi, schedule, &params, &weights, evaluation)
                .map_err(runtime)?;
            let d: Vec<f64> = st.rows.iter().filter_map(|r| r.distance).collect();
            let nonincreasing = d.windows(2).all(|w| w[1] <= w[0]);
            out.check(nonincreasing, || format!("consecutive distances increase: {d:?}"));
            let mut csv = String::from("level,y0,distance\n");
            for r in &st.rows {
                let dist = r.distance.map_or(String::new(), |x| format!("{x:.16e}"));
                let _ = writeln!(csv, "{:.16e},{:.16e},{dist}", r.level, r.y0);
            }
            out.tables.push(("truncation.csv".into(), csv));
            out.results = json!({ "study": st, "nonincreasing": nonincreasing });
        }
        Experiment::VerifyEstimates { pairs, scale } => {
            verify_estimates(cfg, &lattice, &f, &xi, *pairs, *scale, seed, &mut out)?;
        }
        Experiment::VerifyNorms { probes, batches, batch_paths } => {
            let audit = lipschitz_audit(&lattice, f.as_ref(), *probes, seed).map_err(runtime)?;
            out.check(audit.pass, || format!("Lipschitz audit slack {:e}", audit.max_slack));
            let weights = cfg.weights(&lattice, f.as_ref())?;
            let integrability =
                integrability_report(&lattice, f.as_ref(), &weights, beta, params.p, evaluation).map_err(runtime)?;
            let sol = solve(&lattice, f.as_ref(), &xi, &params).map_err(runtime)?;
            let norms = weighted_norm_report(&lattice, &sol, &weights, beta, evaluation).map_err(runtime)?;
            out.tables.push(("norms.csv".into(), norms_csv(&norms)));
            let mut bj = Value::Null;
            if lattice.n_marks() > 0 {
                let mut ensembles = Vec::with_capacity(*batches);
                for b in 0..*batches {
                    let sample = sample_paths(lattice.model(), *batch_paths, seed.wrapping_add(b as u64)).map_err(runtime)?;
                    ensembles.push(VEnsemble::from_lattice(&lattice, &sample, &sol.v).map_err(runtime)?);
                }
                match bj_sandwich(&ensembles, params.p) {
                    Ok(r) => {
                        out.check(r.ratios.iter().all(|x| x.is_finite() && *x > 0.0), || {
                            "nonpositive sandwich ratio".into()
                        });
                        let mut csv = String::from("batch,ratio\n");
                        for (i, x) in r.ratios.iter().enumerate() {
                            let _ = writeln!(csv, "{i},{x:.16e}");
                        }
                        out.tables.push(("sandwich.csv".into(), csv));
                        bj = json!({ "lower_ratio": r.lower_ratio, "upper_ratio": r.upper_ratio });
                    }
                    Err(Error::DegenerateSample(msg)) => bj = json!({ "degenerate": msg }),
                    Err(e) => return Err(runtime(e)),
                }
            }
            out.results = json!({
                "audit": audit,
                "integrability": integrability,
                "norms": norms,
                "sandwich": bj,
            });
        }
        Experiment::ComparisonCheck { driver2, terminal2 } => {
            let f2 = build_driver(driver2, &intensities);
            let xi2 = build_terminal(terminal2);
            let s1 = solve(&lattice, f.as_ref(), &xi, &params).map_err(runtime)?;
            let s2 = solve(&lattice, f2.as_ref(), &xi2, &params).map_err(runtime)?;
            out.tables.push(("comparison.csv".into(), comparison_csv(&s1, &s2)));
            match comparison_check(&lattice, &s1, f.as_ref(), &xi, &s2, f2.as_ref(), &xi2) {
                Ok(r) => {
                    out.check(r.pass, || {
                        format!("Y1 exceeds Y2 by {:e} at step {} ({})", r.max_gap, r.worst_k, r.worst_state)
                    });
                    out.results = json!({ "comparison": r, "y0": [s1.y0(), s2.y0()] });
                }
                Err(e @ Error::Inapplicable { .. }) => {
                    out.failures.push(e.to_string());
                    out.results = json!({ "comparison": Value::Null, "y0": [s1.y0(), s2.y0()] });
                }
                Err(e) => return Err(runtime(e)),
            }
        }
    }
    Ok(out)
}

fn comparison_csv(s1: &Solution, s2: &Solution) -> String {
    let mut csv = String::from("k,state,Y1,Y2,gap\n");
    for (k, (a, b)) in s1.y.iter().zip(&s2.y).enumerate() {
        for (s, (y1, y2)) in a.iter().zip(b).enumerate() {
            let _ = writeln!(csv, "{k},{s},{y1:.16e},{y2:.16e},{:.16e}", y1 - y2);
        }
    }
    csv
}

/// Random perturbations `(ξ + δξ, f + δf)` of the configured data and both
/// sides of the a priori estimate for each.
#[allow(clippy::too_many_arguments)]
fn verify_estimates(
    cfg: &RunConfig,
    lattice: &Lattice,
    f: &DriverRef,
    xi: &TerminalCondition,
    pairs: usize,
    scale: f64,
    seed: u64,
    out: &mut Outcome,
) -> Result<(), CliError> {
    let params = cfg.solver_params();
    let beta = params.beta;
    let weights = cfg.weights(lattice, f.as_ref())?;
    let base = solve(lattice, f.as_ref(), xi, &params).map_err(runtime)?;
    let same = apriori_report(lattice, &base, f.as_ref(), xi, &base, f.as_ref(), xi, &weights, beta, cfg.evaluation)
        .map_err(runtime)?;
    out.check(same.rhs == 0.0 && same.lhs <= 1e-10, || {
        format!("identical data give lhs {:e}, rhs {:e}", same.lhs, same.rhs)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut csv = String::from("pair,lhs,rhs,ratio,xi_term,driver_term\n");
    let mut k_hat: f64 = 0.0;
    for i in 0..pairs {
        let s = scale * rng.gen_range(0.01..1.0);
        let (a, b, c) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let xi2 = xi.map("perturbed", move |x| x + s * (a + b * x.cos()));
        let f2: DriverRef = Arc::new(ShiftedDriver::new(f.clone(), move |n| s * c * (1.0 + n.state.brownian(n.dt).sin())));
        let sol = solve(lattice, f2.as_ref(), &xi2, &params).map_err(runtime)?;
        let r = apriori_report(lattice, &base, f.as_ref(), xi, &sol, f2.as_ref(), &xi2, &weights, beta, cfg.evaluation)
            .map_err(runtime)?;
        let ratio = if r.rhs > 0.0 { r.lhs / r.rhs } else { 0.0 };
        out.check(r.lhs.is_finite() && r.rhs.is_finite(), || format!("pair {i}: non-finite estimate"));
        k_hat = k_hat.max(ratio);
        let _ = writeln!(csv, "{i},{:.16e},{:.16e},{ratio:.16e},{:.16e},{:.16e}", r.lhs, r.rhs, r.xi_term, r.driver_term);
    }
    out.tables.push(("estimates.csv".into(), csv));
    out.results = json!({
        "identical_lhs": same.lhs,
        "k_hat": k_hat,
        "pairs": pairs,
        "base_y0": base.y0(),
    });
    Ok(())
}

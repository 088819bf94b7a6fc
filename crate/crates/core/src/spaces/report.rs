use serde::Serialize;

use crate::bsde::Solution;
use crate::error::{Error, Result};
use crate::lattice::{Lattice, WeightProcesses};
use crate::paths::{evaluate, Evaluation, EvaluationMode, Field, PathFunctional};

/// Weighted norms of a solution (or of a difference of solutions).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    #[serde(flatten)]
    pub mode: EvaluationMode,
    pub p: f64,
    pub beta: f64,
    pub s_p_beta: f64,
    pub s_pa_beta: f64,
    pub h_p_beta: f64,
    pub l_p_mu_beta: f64,
    pub m_p_beta: f64,
    pub k_p: Option<f64>,
}

impl NormReport {
    /// `‖Y‖_𝔅 = (‖Y‖^p_{S^p_β} + ‖Y‖^p_{S^{p,A}_β})^{1/p}`.
    pub fn b_p_beta(&self) -> f64 {
        (self.s_p_beta.powf(self.p) + self.s_pa_beta.powf(self.p)).powf(1.0 / self.p)
    }

    /// Sum of the five `p`-th powers (the left side of the a priori estimate).
    pub fn lhs_sum(&self) -> f64 {
        [self.s_p_beta, self.s_pa_beta, self.h_p_beta, self.l_p_mu_beta, self.m_p_beta]
            .iter()
            .map(|x| x.powf(self.p))
            .sum()
    }

    /// Norm on `ℰ^p_β = 𝔅 × H × 𝔏 × ℳ`.
    pub fn e_norm(&self) -> f64 {
        self.lhs_sum().powf(1.0 / self.p)
    }

    /// Norm on `S^{p,A}_β × H × 𝔏 × ℳ`.
    pub fn product_norm(&self) -> f64 {
        [self.s_pa_beta, self.h_p_beta, self.l_p_mu_beta, self.m_p_beta]
            .iter()
            .map(|x| x.powf(self.p))
            .sum::<f64>()
            .powf(1.0 / self.p)
    }

    pub fn csv_header() -> &'static str {
        "mode,p,beta,s_p_beta,s_pa_beta,h_p_beta,l_p_mu_beta,m_p_beta,k_p"
    }

    pub fn csv_row(&self) -> String {
        let k = self.k_p.map_or(String::new(), |k| format!("{k:.16e}"));
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            self.mode.tag(),
            self.p,
            self.beta,
            self.s_p_beta,
            self.s_pa_beta,
            self.h_p_beta,
            self.l_p_mu_beta,
            self.m_p_beta,
            k
        )
    }
}

fn root(x: f64, p: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x.powf(1.0 / p)
    }
}

/// All weighted norms of `sol`: suprema become maxima over `k`, integrals
/// left-point sums, and the `μ`-integral a sum over realized jumps.
pub fn weighted_norm_report(
    lattice: &Lattice,
    sol: &Solution,
    weights: &WeightProcesses,
    beta: f64,
    evaluation: Evaluation,
) -> Result<NormReport> {
    if sol.model() != lattice.model() {
        return Err(Error::InvalidArgument("solution was computed on another model".into()));
    }
    let n = lattice.steps();
    if weights.cumulative.len() != n + 1 || (0..=n).any(|k| weights.cumulative[k].len() != lattice.n_states(k)) {
        return Err(Error::InvalidArgument("weights were computed on another model".into()));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("β must be nonnegative, got {beta}")));
    }
    let p = weights.p;
    let dt = lattice.dt();
    let m = lattice.n_marks();
    let n_out = lattice.n_outcomes();
    let ew = |k: usize, s: usize| (beta * weights.cumulative[k][s]).exp();
    let ewp = |k: usize, s: usize| (0.5 * p * beta * weights.cumulative[k][s]).exp();

    let sup: Vec<Vec<f64>> = (0..=n)
        .map(|k| (0..lattice.n_states(k)).map(|s| ewp(k, s) * sol.y[k][s].abs().powf(p)).collect())
        .collect();
    let per_a: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..lattice.n_states(k))
                .map(|s| sup[k][s] * weights.a2[k][s] * dt)
                .collect()
        })
        .collect();
    let h: Vec<Vec<f64>> = (0..n)
        .map(|k| (0..lattice.n_states(k)).map(|s| ew(k, s) * sol.z[k][s].powi(2) * dt).collect())
        .collect();
    let l: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut row = vec![0.0; lattice.n_states(k) * n_out];
            for s in 0..lattice.n_states(k) {
                for (o, out) in lattice.outcomes().iter().enumerate() {
                    if let Some(i) = out.jump {
                        row[s * n_out + o] = ew(k, s) * sol.v[k][s * m + i].powi(2);
                    }
                }
            }
            row
        })
        .collect();
    let mm: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..lattice.n_states(k) * n_out)
                .map(|e| ew(k, e / n_out) * sol.dm[k][e].powi(2))
                .collect()
        })
        .collect();

    let mut pf = PathFunctional::new();
    pf.sup(&sup);
    let s_a = pf.sum_pow(Field::Node(&per_a), 1.0);
    let s_h = pf.sum_pow(Field::Node(&h), p / 2.0);
    let s_l = pf.sum_pow(Field::Edge(&l), p / 2.0);
    let s_m = pf.sum_pow(Field::Edge(&mm), p / 2.0);
    let s_k = sol.dk.as_ref().map(|dk| pf.sum_pow(Field::Node(dk), p));
    let e = evaluate(lattice, &pf, evaluation)?;
    Ok(NormReport {
        mode: e.mode,
        p,
        beta,
        s_p_beta: root(e.sups[0], p),
        s_pa_beta: root(e.sum(s_a), p),
        h_p_beta: root(e.sum(s_h), p),
        l_p_mu_beta: root(e.sum(s_l), p),
        m_p_beta: root(e.sum(s_m), p),
        k_p: s_k.map(|slot| root(e.sum(slot), p)),
    })
}

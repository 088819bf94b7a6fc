use bsde_lab::lattice::{build_grid, build_model, sample_paths, Lattice, Mark, MarkSpace};
use proptest::prelude::*;

fn lattice(horizon: f64, steps: usize, rates: &[f64], coin: bool) -> Lattice {
    let marks = MarkSpace::new(
        rates
            .iter()
            .enumerate()
            .map(|(i, &l)| Mark { value: 0.5 + i as f64, intensity: l })
            .collect(),
    )
    .unwrap();
    Lattice::build(&build_model(build_grid(horizon, steps).unwrap(), marks, coin).unwrap()).unwrap()
}

// Expectation over one step of a function of the outcome index.
fn step_mean(l: &Lattice, f: impl Fn(usize) -> f64) -> f64 {
    l.outcome_probs().iter().enumerate().map(|(o, q)| q * f(o)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn increments_are_centered_and_orthogonal(
        steps in 4usize..12,
        rates in proptest::collection::vec(0.0f64..1.0, 0..3),
        coin: bool,
    ) {
        let l = lattice(1.0, steps, &rates, coin);
        let dt = l.dt();
        let m = l.n_marks();
        prop_assert!((step_mean(&l, |_| 1.0) - 1.0).abs() < 1e-14);
        prop_assert!(step_mean(&l, |o| l.db()[o]).abs() < 1e-14);
        prop_assert!((step_mean(&l, |o| l.db()[o].powi(2)) - dt).abs() < 1e-14);
        prop_assert!(step_mean(&l, |o| l.coin_increment(o)).abs() < 1e-14);
        prop_assert!(step_mean(&l, |o| l.coin_increment(o) * l.db()[o]).abs() < 1e-14);
        for i in 0..m {
            let lam = rates[i];
            prop_assert!(step_mean(&l, |o| l.jump_increment(o, i)).abs() < 1e-14);
            prop_assert!(step_mean(&l, |o| l.jump_increment(o, i) * l.db()[o]).abs() < 1e-14);
            prop_assert!(step_mean(&l, |o| l.jump_increment(o, i) * l.coin_increment(o)).abs() < 1e-14);
            let var = step_mean(&l, |o| l.jump_increment(o, i).powi(2));
            prop_assert!((var - lam * dt * (1.0 - lam * dt)).abs() < 1e-14);
        }
    }

    #[test]
    fn slices_carry_probability_one_and_recombine(
        steps in 4usize..10,
        rates in proptest::collection::vec(0.0f64..1.0, 0..3),
        coin: bool,
    ) {
        let l = lattice(1.0, steps, &rates, coin);
        for k in 0..=steps {
            let total: f64 = l.slice(k).probs.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
        // Pushing slice k forward through the successor table reproduces slice k+1.
        for k in 0..steps {
            let mut next = vec![0.0; l.n_states(k + 1)];
            for (s, p) in l.slice(k).probs.iter().enumerate() {
                for (o, q) in l.outcome_probs().iter().enumerate() {
                    next[l.successor(k, s, o)] += p * q;
                }
            }
            for (a, b) in next.iter().zip(&l.slice(k + 1).probs) {
                prop_assert!((a - b).abs() < 1e-13);
            }
        }
        // Recombination: a state is a vector of counts, so the slice grows polynomially.
        let factors = 1 + rates.len() as u32 + coin as u32;
        prop_assert!(l.n_states(steps) <= (steps + 1).pow(factors));
    }

    #[test]
    fn conditional_mean_of_brownian_is_a_martingale(steps in 3usize..10, rate in 0.0f64..1.4, coin: bool) {
        let l = lattice(2.0, steps, &[rate], coin);
        let dt = l.dt();
        for k in 0..steps {
            let next: Vec<f64> = l.slice(k + 1).states.iter().map(|s| s.brownian(dt)).collect();
            for (s, st) in l.slice(k).states.iter().enumerate() {
                prop_assert!((l.conditional_mean(k, s, &next) - st.brownian(dt)).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn sampled_terminal_law_matches_enumeration() {
    let l = lattice(1.0, 8, &[1.0, 0.5], true);
    let n = 100_000;
    let sample = sample_paths(l.model(), n, 11).unwrap();
    let mut counts = vec![0usize; l.n_states(8)];
    for i in 0..n {
        counts[*sample.state_indices(&l, i).last().unwrap()] += 1;
    }
    // Pool cells with small expected counts before the chi-square statistic.
    let (mut chi2, mut cells) = (0.0, 0usize);
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (c, p) in counts.iter().zip(&l.slice(8).probs) {
        let e = p * n as f64;
        if e >= 5.0 {
            chi2 += (*c as f64 - e).powi(2) / e;
            cells += 1;
        } else {
            pooled_obs += *c as f64;
            pooled_exp += e;
        }
    }
    if pooled_exp > 0.0 {
        chi2 += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    }
    let df = (cells - 1) as f64;
    assert!(chi2 < df + 5.0 * (2.0 * df).sqrt(), "chi2 {chi2} with {df} degrees of freedom");
}

#[test]
fn sampling_is_reproducible_per_seed() {
    let l = lattice(1.0, 6, &[0.8], true);
    let a = sample_paths(l.model(), 500, 3).unwrap();
    let b = sample_paths(l.model(), 500, 3).unwrap();
    let c = sample_paths(l.model(), 500, 4).unwrap();
    assert!((0..500).all(|i| a.path(i) == b.path(i)));
    assert!((0..500).any(|i| a.path(i) != c.path(i)));
}

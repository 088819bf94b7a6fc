use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{FactorModel, Lattice, MarkovState};
use crate::error::{Error, Result};

/// Ensemble of sampled factor trajectories, stored as outcome indices
/// (`path * N + k`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSample {
    n_paths: usize,
    n_steps: usize,
    outcomes: Vec<u16>,
}

impl PathSample {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn path(&self, i: usize) -> &[u16] {
        &self.outcomes[i * self.n_steps..(i + 1) * self.n_steps]
    }

    /// Lattice state indices visited by path `i`, `k = 0..=N`.
    pub fn state_indices(&self, lattice: &Lattice, i: usize) -> Vec<usize> {
        let mut s = 0;
        let mut out = Vec::with_capacity(self.n_steps + 1);
        out.push(0);
        for (k, &o) in self.path(i).iter().enumerate() {
            s = lattice.successor(k, s, o as usize);
            out.push(s);
        }
        out
    }

    /// Replays path `i` through the model's transition rule.
    pub fn terminal_state(&self, model: &FactorModel, i: usize) -> MarkovState {
        let outcomes = model.outcomes();
        let mut state = model.root_state();
        for &o in self.path(i) {
            state = model
                .transition(&state, &outcomes[o as usize])
                .expect("sampled outcome is valid")
                .0;
        }
        state
    }
}

/// `sample_paths(model, n_paths, seed)`.
///
/// Path `i` draws from its own ChaCha stream `(seed, i)`, so the ensemble is
/// bitwise reproducible for any thread count.
pub fn sample_paths(model: &FactorModel, n_paths: usize, seed: u64) -> Result<PathSample> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    let n_steps = model.grid().steps();
    let dt = model.grid().dt();
    let rates: Vec<f64> = model.marks().intensities().iter().map(|l| l * dt).collect();
    let coin = model.orthogonal();
    let nc = if coin { 2 } else { 1 };

    let mut outcomes = vec![0u16; n_paths * n_steps];
    outcomes
        .par_chunks_mut(n_steps)
        .enumerate()
        .for_each(|(i, path)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for slot in path.iter_mut() {
                let up = rng.gen::<bool>();
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut jump = 0;
                for (j, r) in rates.iter().enumerate() {
                    acc += r;
                    if u < acc {
                        jump = j + 1;
                        break;
                    }
                }
                let c = if coin { usize::from(rng.gen::<bool>()) } else { 0 };
                *slot = ((jump * 2 + usize::from(up)) * nc + c) as u16;
            }
        });
    Ok(PathSample {
        n_paths,
        n_steps,
        outcomes,
    })
}

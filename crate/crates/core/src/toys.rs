//! Small synthetic models for tests, benchmarks and solver cross-checks.

use rand::Rng;

use crate::pomdp::{BeliefState, DiscretePomdp, SparseMatrix};
use crate::rng::stream_rng;

/// Two hidden states, two actions, two observations; time-augmented to
/// `horizon` decision layers plus a terminal state.
pub fn layered_toy(horizon: usize, seed: u64) -> DiscretePomdp {
    let mut rng = stream_rng(seed, 0);
    let mut p = || rng.random_range(0.05..0.95);
    let t: Vec<[[f64; 2]; 2]> = (0..2)
        .map(|_| {
            let (x, y) = (p(), p());
            [[x, 1.0 - x], [y, 1.0 - y]]
        })
        .collect();
    let z: Vec<[[f64; 2]; 2]> = (0..2)
        .map(|_| {
            let (x, y) = (p(), p());
            [[x, 1.0 - x], [y, 1.0 - y]]
        })
        .collect();
    let r: Vec<[f64; 2]> = (0..2).map(|_| [p() * 4.0 - 2.0, p() * 4.0 - 2.0]).collect();
    let b0 = p();
    let n = 2 * horizon + 1;
    let term = n - 1;
    let idx = |t: usize, s: usize| 2 * t + s;
    let mut transition = vec![];
    let mut observation = vec![];
    let mut reward = vec![];
    for a in 0..2 {
        let mut rows = vec![];
        let mut zrows = vec![];
        let mut rw = vec![];
        for layer in 0..horizon {
            for s in 0..2 {
                if layer + 1 < horizon {
                    rows.push(vec![
                        (idx(layer + 1, 0), t[a][s][0]),
                        (idx(layer + 1, 1), t[a][s][1]),
                    ]);
                } else {
                    rows.push(vec![(term, 1.0)]);
                }
                zrows.push(vec![(0, z[a][s][0]), (1, z[a][s][1])]);
                rw.push(r[a][s]);
            }
        }
        rows.push(vec![(term, 1.0)]);
        zrows.push(vec![(0, 0.5), (1, 0.5)]);
        rw.push(0.0);
        transition.push(SparseMatrix::from_rows(n, rows).unwrap());
        observation.push(SparseMatrix::from_rows(2, zrows).unwrap());
        reward.push(rw);
    }
    let mut init = vec![0.0; n];
    init[0] = b0;
    init[1] = 1.0 - b0;
    DiscretePomdp {
        num_states: n,
        num_actions: 2,
        num_observations: 2,
        transition,
        observation,
        reward,
        discount: 0.9,
        initial_belief: BeliefState::new(init).unwrap(),
        failure_states: vec![],
        terminal_states: vec![term],
        horizon: Some(horizon),
        action_names: vec!["a".into(), "b".into()],
    }
}

/// A dense random infinite-horizon model. Every transition and observation
/// row is strictly positive, so every observation is possible from every
/// belief.
pub fn random_pomdp(states: usize, actions: usize, observations: usize, seed: u64) -> DiscretePomdp {
    let mut rng = stream_rng(seed, 1);
    let row = |n: usize, rng: &mut crate::rng::StreamRng| -> Vec<(usize, f64)> {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = w.iter().sum();
        w.into_iter().map(|x| x / sum).enumerate().collect()
    };
    let transition = (0..actions)
        .map(|_| SparseMatrix::from_rows(states, (0..states).map(|_| row(states, &mut rng)).collect()).unwrap())
        .collect();
    let observation = (0..actions)
        .map(|_| {
            SparseMatrix::from_rows(observations, (0..states).map(|_| row(observations, &mut rng)).collect())
                .unwrap()
        })
        .collect();
    let reward = (0..actions)
        .map(|_| (0..states).map(|_| rng.random_range(-10.0..0.0)).collect())
        .collect();
    let init: Vec<f64> = row(states, &mut rng).into_iter().map(|(_, p)| p).collect();
    DiscretePomdp {
        num_states: states,
        num_actions: actions,
        num_observations: observations,
        transition,
        observation,
        reward,
        discount: 0.95,
        initial_belief: BeliefState::from_unnormalized(init).unwrap(),
        failure_states: vec![states - 1],
        terminal_states: vec![],
        horizon: None,
        action_names: (0..actions).map(|a| format!("a{a}")).collect(),
    }
}

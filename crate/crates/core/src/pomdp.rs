//! Discrete POMDP language: sparse stochastic matrices, beliefs, alpha vectors
//! and the model tuple itself.
//!
//! Transition matrices are stored per action in compressed-row form with rows
//! indexed by the pre-transition state. Observation matrices are stored per
//! action with rows indexed by the *post-transition* state `s'` and columns by
//! observation, so `Z[a]` row `s'` is the distribution `P(o | s', a)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums and belief sums must match one within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Compressed sparse row matrix of `f64`.
///
/// Identical long rows (a reset to the initial belief, uninformative
/// observation rows) are stored once and shared, which keeps rank-one
/// blocks cheap in memory and in products.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    /// `(start, end)` of every row in `col_idx` / `values`.
    ranges: Vec<(usize, usize)>,
    /// Index into `segments` for shared rows, `NOT_SHARED` otherwise.
    shared: Vec<u32>,
    segments: Vec<(usize, usize)>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

const NOT_SHARED: u32 = u32::MAX;
/// Rows at least this long are candidates for sharing.
const SHARE_MIN_LEN: usize = 8;

impl PartialEq for SparseMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && (0..self.n_rows).all(|i| self.row(i) == other.row(i))
    }
}

impl SparseMatrix {
    /// Builds a matrix from per-row `(column, value)` lists. Entries within a
    /// row are sorted by column, duplicate columns are summed and explicit
    /// zeros are dropped.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n_rows = rows.len();
        let mut m = Self {
            n_rows,
            n_cols,
            ranges: Vec::with_capacity(n_rows),
            shared: Vec::with_capacity(n_rows),
            segments: Vec::new(),
            col_idx: Vec::new(),
            values: Vec::new(),
        };
        // Most recent long row, as (range, segment id if already shared).
        let mut last_long: Option<((usize, usize), u32)> = None;
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let begin = m.col_idx.len();
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if c >= n_cols {
                    return Err(Error::OutOfRange {
                        what: "column",
                        index: c,
                        limit: n_cols,
                    });
                }
                if v == 0.0 {
                    continue;
                }
                if last == Some(c) {
                    *m.values.last_mut().unwrap() += v;
                } else {
                    m.col_idx.push(c);
                    m.values.push(v);
                    last = Some(c);
                }
            }
            let end = m.col_idx.len();
            if end - begin < SHARE_MIN_LEN {
                m.ranges.push((begin, end));
                m.shared.push(NOT_SHARED);
                continue;
            }
            if let Some(((a, b), id)) = last_long {
                if b - a == end - begin
                    && m.col_idx[a..b] == m.col_idx[begin..end]
                    && m.values[a..b] == m.values[begin..end]
                {
                    m.col_idx.truncate(begin);
                    m.values.truncate(begin);
                    let id = if id == NOT_SHARED {
                        m.segments.push((a, b));
                        let id = (m.segments.len() - 1) as u32;
                        // The row that first stored the entries joins the segment.
                        for k in (0..m.ranges.len()).rev() {
                            if m.ranges[k] == (a, b) {
                                m.shared[k] = id;
                                break;
                            }
                        }
                        last_long = Some(((a, b), id));
                        id
                    } else {
                        id
                    };
                    m.ranges.push((a, b));
                    m.shared.push(id);
                    continue;
                }
            }
            m.ranges.push((begin, end));
            m.shared.push(NOT_SHARED);
            last_long = Some(((begin, end), NOT_SHARED));
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect()).expect("in range")
    }

    /// Every row equal to `row`.
    pub fn repeated_row(n_rows: usize, row: &[f64]) -> Self {
        let entries: Vec<(usize, f64)> = row
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(c, &v)| (c, v))
            .collect();
        let k = entries.len();
        Self {
            n_rows,
            n_cols: row.len(),
            ranges: vec![(0, k); n_rows],
            shared: vec![0; n_rows],
            segments: vec![(0, k)],
            col_idx: entries.iter().map(|e| e.0).collect(),
            values: entries.iter().map(|e| e.1).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Number of structurally non-zero entries (shared rows counted once per
    /// row).
    pub fn nnz(&self) -> usize {
        self.ranges.iter().map(|(a, b)| b - a).sum()
    }

    /// Entries actually held in memory.
    pub fn stored(&self) -> usize {
        self.values.len()
    }

    /// Fraction of non-zero entries over the full dense size.
    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n_rows as f64 * self.n_cols as f64)
    }

    /// Columns and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = self.ranges[i];
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    /// Row-vector product `x · M`.
    pub fn left_multiply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_rows);
        let mut out = vec![0.0; self.n_cols];
        let mut mass = vec![0.0; self.segments.len()];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            if self.shared[i] != NOT_SHARED {
                mass[self.shared[i] as usize] += xi;
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += xi * v;
            }
        }
        for (&(a, b), &w) in self.segments.iter().zip(&mass) {
            if w != 0.0 {
                for k in a..b {
                    out[self.col_idx[k]] += w * self.values[k];
                }
            }
        }
        out
    }

    /// Column-vector product `M · y`.
    pub fn right_multiply(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.n_cols);
        let dot = |a: usize, b: usize| -> f64 {
            (a..b).map(|k| self.values[k] * y[self.col_idx[k]]).sum()
        };
        let seg: Vec<f64> = self.segments.iter().map(|&(a, b)| dot(a, b)).collect();
        (0..self.n_rows)
            .map(|i| {
                if self.shared[i] != NOT_SHARED {
                    seg[self.shared[i] as usize]
                } else {
                    let (a, b) = self.ranges[i];
                    dot(a, b)
                }
            })
            .collect()
    }

    /// Dense copy of column `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[usize], &[f64])> {
        (0..self.n_rows).map(move |i| self.row(i))
    }
}

/// Probability vector over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    probs: Vec<f64>,
}

impl BeliefState {
    /// Validates non-negativity and unit mass.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidBelief("empty belief".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, &p)| !(p >= 0.0)) {
            return Err(Error::InvalidBelief(format!("entry {i} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidBelief(format!("mass {sum} differs from 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes a non-negative vector with positive mass.
    pub fn from_unnormalized(mut probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if !(sum > 0.0) || probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidBelief(format!(
                "cannot normalize vector with mass {sum}"
            )));
        }
        probs.iter_mut().for_each(|p| *p /= sum);
        Ok(Self { probs })
    }

    /// Wraps a vector without validation. Used for deserialized models that
    /// are validated later.
    pub fn new_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn point_mass(n: usize, s: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[s] = 1.0;
        Self { probs }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.probs
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.probs.iter().zip(v).map(|(p, x)| p * x).sum()
    }

    /// Total probability on the given states.
    pub fn mass_on(&self, states: &[usize]) -> f64 {
        states.iter().map(|&s| self.probs[s]).sum()
    }

    pub fn l1_distance(&self, other: &BeliefState) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// A linear function over states paired with the action that generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector {
    pub values: Vec<f64>,
    pub action: usize,
}

impl AlphaVector {
    pub fn new(values: Vec<f64>, action: usize) -> Self {
        Self { values, action }
    }

    #[inline]
    pub fn dot(&self, b: &[f64]) -> f64 {
        self.values.iter().zip(b).map(|(a, p)| a * p).sum()
    }
}

/// Piecewise-linear lower bound of the value function.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlphaVectorSet {
    pub vectors: Vec<AlphaVector>,
}

impl AlphaVectorSet {
    pub fn new(vectors: Vec<AlphaVector>) -> Self {
        Self { vectors }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Maximum of `α · b` and the action of the maximizing vector. Ties go to
    /// the lowest vector index.
    pub fn value_at(&self, b: &BeliefState) -> Result<(f64, usize)> {
        self.best_index(b.probs())
            .map(|(i, v)| (v, self.vectors[i].action))
    }

    /// Index and value of the maximizing vector at a dense belief.
    pub fn best_index(&self, b: &[f64]) -> Result<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, alpha) in self.vectors.iter().enumerate() {
            let v = alpha.dot(b);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((i, v));
            }
        }
        best.ok_or(Error::UninitializedPolicy)
    }
}

/// The discrete partially observable decision model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePomdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_observations: usize,
    /// `transition[a]`: rows `s`, columns `s'`.
    pub transition: Vec<SparseMatrix>,
    /// `observation[a]`: rows `s'`, columns `o`.
    pub observation: Vec<SparseMatrix>,
    /// `reward[a][s]`.
    pub reward: Vec<Vec<f64>>,
    pub discount: f64,
    pub initial_belief: BeliefState,
    pub failure_states: Vec<usize>,
    pub terminal_states: Vec<usize>,
    /// `None` for infinite-horizon models.
    pub horizon: Option<usize>,
    pub action_names: Vec<String>,
}

/// A single broken invariant reported by [`DiscretePomdp::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension(String),
    TransitionRow {
        action: usize,
        row: usize,
        deviation: f64,
    },
    ObservationRow {
        action: usize,
        row: usize,
        deviation: f64,
    },
    NegativeEntry {
        matrix: &'static str,
        action: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    BeliefEntry {
        state: usize,
        value: f64,
    },
    BeliefMass {
        deviation: f64,
    },
    StateIndex {
        set: &'static str,
        state: usize,
    },
    Discount(f64),
    NonFiniteReward {
        action: usize,
        state: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension(m) => write!(f, "dimension mismatch: {m}"),
            Violation::TransitionRow {
                action,
                row,
                deviation,
            } => write!(
                f,
                "transition[{action}] row {row} sums to 1{deviation:+.3e}"
            ),
            Violation::ObservationRow {
                action,
                row,
                deviation,
            } => write!(
                f,
                "observation[{action}] row {row} sums to 1{deviation:+.3e}"
            ),
            Violation::NegativeEntry {
                matrix,
                action,
                row,
                col,
                value,
            } => write!(f, "{matrix}[{action}] entry ({row},{col}) is {value}"),
            Violation::BeliefEntry { state, value } => {
                write!(f, "initial belief entry {state} is {value}")
            }
            Violation::BeliefMass { deviation } => {
                write!(f, "initial belief mass is 1{deviation:+.3e}")
            }
            Violation::StateIndex { set, state } => {
                write!(f, "{set} state {state} out of range")
            }
            Violation::Discount(g) => write!(f, "discount {g} outside allowed range"),
            Violation::NonFiniteReward { action, state } => {
                write!(f, "reward[{action}][{state}] is not finite")
            }
        }
    }
}

impl DiscretePomdp {
    /// Lists every broken invariant; an empty list means the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (ns, na, no) = (self.num_states, self.num_actions, self.num_observations);
        if self.transition.len() != na
            || self.observation.len() != na
            || self.reward.len() != na
        {
            out.push(Violation::Dimension(format!(
                "{na} actions but {} transition, {} observation, {} reward entries",
                self.transition.len(),
                self.observation.len(),
                self.reward.len()
            )));
            return out;
        }
        for (a, t) in self.transition.iter().enumerate() {
            if t.n_rows() != ns || t.n_cols() != ns {
                out.push(Violation::Dimension(format!(
                    "transition[{a}] is {}x{}, expected {ns}x{ns}",
                    t.n_rows(),
                    t.n_cols()
                )));
                continue;
            }
            check_stochastic(t, "transition", a, &mut out, |action, row, deviation| {
                Violation::TransitionRow {
                    action,
                    row,
                    deviation,
                }
            });
        }
        for (a, z) in self.observation.iter().enumerate() {
            if z.n_rows() != ns || z.n_cols() != no {
                out.push(Violation::Dimension(format!(
                    "observation[{a}] is {}x{}, expected {ns}x{no}",
                    z.n_rows(),
                    z.n_cols()
                )));
                continue;
            }
            check_stochastic(z, "observation", a, &mut out, |action, row, deviation| {
                Violation::ObservationRow {
                    action,
                    row,
                    deviation,
                }
            });
        }
        for (a, r) in self.reward.iter().enumerate() {
            if r.len() != ns {
                out.push(Violation::Dimension(format!(
                    "reward[{a}] has length {}, expected {ns}",
                    r.len()
                )));
                continue;
            }
            if let Some(s) = r.iter().position(|v| !v.is_finite()) {
                out.push(Violation::NonFiniteReward {
                    action: a,
                    state: s,
                });
            }
        }
        let b = self.initial_belief.probs();
        if b.len() != ns {
            out.push(Violation::Dimension(format!(
                "initial belief has length {}, expected {ns}",
                b.len()
            )));
        } else {
            for (s, &p) in b.iter().enumerate() {
                if !(p >= 0.0) {
                    out.push(Violation::BeliefEntry { state: s, value: p });
                }
            }
            let dev = b.iter().sum::<f64>() - 1.0;
            if dev.abs() > STOCHASTIC_TOL {
                out.push(Violation::BeliefMass { deviation: dev });
            }
        }
        for &s in &self.failure_states {
            if s >= ns {
                out.push(Violation::StateIndex {
                    set: "failure",
                    state: s,
                });
            }
        }
        for &s in &self.terminal_states {
            if s >= ns {
                out.push(Violation::StateIndex {
                    set: "terminal",
                    state: s,
                });
            }
        }
        let g = self.discount;
        let infinite = self.horizon.is_none() && self.terminal_states.is_empty();
        if !(g > 0.0 && g <= 1.0) || (infinite && g >= 1.0) {
            out.push(Violation::Discount(g));
        }
        out
    }

    /// Returns an error listing every violation when the model is invalid.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = v.iter().take(5).map(|x| x.to_string()).collect();
            Err(Error::InvalidModel(format!(
                "{} violation(s): {}",
                v.len(),
                msgs.join("; ")
            )))
        }
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.num_actions {
            return Err(Error::OutOfRange {
                what: "action",
                index: a,
                limit: self.num_actions,
            });
        }
        Ok(())
    }

    /// Belief after action `a`, before any observation.
    pub fn predict(&self, b: &BeliefState, a: usize) -> Result<Vec<f64>> {
        self.check_action(a)?;
        Ok(self.transition[a].left_multiply(b.probs()))
    }

    /// Bayes filter step. Returns the posterior and the normalizer
    /// `P(o | b, a)`.
    pub fn belief_update(
        &self,
        b: &BeliefState,
        a: usize,
        o: usize,
    ) -> Result<(BeliefState, f64)> {
        self.check_action(a)?;
        if o >= self.num_observations {
            return Err(Error::OutOfRange {
                what: "observation",
                index: o,
                limit: self.num_observations,
            });
        }
        if b.len() != self.num_states {
            return Err(Error::InvalidBelief(format!(
                "belief length {} for {} states",
                b.len(),
                self.num_states
            )));
        }
        let mut post = self.transition[a].left_multiply(b.probs());
        let z = &self.observation[a];
        let mut norm = 0.0;
        for (s, p) in post.iter_mut().enumerate() {
            if *p != 0.0 {
                *p *= z.get(s, o);
                norm += *p;
            }
        }
        if !(norm > 0.0) {
            return Err(Error::ImpossibleObservation {
                action: a,
                observation: o,
            });
        }
        post.iter_mut().for_each(|p| *p /= norm);
        Ok((BeliefState { probs: post }, norm))
    }

    /// Expected immediate reward `Σ_s b(s) R(s,a)`.
    pub fn belief_reward(&self, b: &BeliefState, a: usize) -> Result<f64> {
        self.check_action(a)?;
        Ok(b.dot(&self.reward[a]))
    }

    /// `P(o | s', a)` as a dense vector over `s'`.
    pub fn observation_likelihood(&self, a: usize, o: usize) -> Vec<f64> {
        self.observation[a].column(o)
    }

    pub fn failure_probability(&self, b: &BeliefState) -> f64 {
        b.mass_on(&self.failure_states)
    }
}

fn check_stochastic(
    m: &SparseMatrix,
    name: &'static str,
    action: usize,
    out: &mut Vec<Violation>,
    row_violation: impl Fn(usize, usize, f64) -> Violation,
) {
    for i in 0..m.n_rows() {
        let (cols, vals) = m.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            if !(v >= 0.0) {
                out.push(Violation::NegativeEntry {
                    matrix: name,
                    action,
                    row: i,
                    col: c,
                    value: v,
                });
            }
        }
        let dev = vals.iter().sum::<f64>() - 1.0;
        if dev.abs() > STOCHASTIC_TOL {
            out.push(row_violation(action, i, dev));
        }
    }
}

/// Free-function form of [`DiscretePomdp::belief_update`].
pub fn belief_update(
    model: &DiscretePomdp,
    b: &BeliefState,
    a: usize,
    o: usize,
) -> Result<(BeliefState, f64)> {
    model.belief_update(b, a, o)
}

/// Free-function form of [`DiscretePomdp::belief_reward`].
pub fn belief_reward(model: &DiscretePomdp, b: &BeliefState, a: usize) -> Result<f64> {
    model.belief_reward(b, a)
}

/// Free-function form of [`AlphaVectorSet::value_at`].
pub fn value_at(set: &AlphaVectorSet, b: &BeliefState) -> Result<(f64, usize)> {
    set.value_at(b)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Two states, one or two actions, two observations.
    pub(crate) fn two_state_model(t: [[f64; 2]; 2], z_detect: [f64; 2]) -> DiscretePomdp {
        let trans = SparseMatrix::from_rows(
            2,
            (0..2)
                .map(|i| vec![(0, t[i][0]), (1, t[i][1])])
                .collect(),
        )
        .unwrap();
        let obs = SparseMatrix::from_rows(
            2,
            (0..2)
                .map(|s| vec![(0, 1.0 - z_detect[s]), (1, z_detect[s])])
                .collect(),
        )
        .unwrap();
        DiscretePomdp {
            num_states: 2,
            num_actions: 1,
            num_observations: 2,
            transition: vec![trans],
            observation: vec![obs],
            reward: vec![vec![-4.0, -6.0]],
            discount: 0.95,
            initial_belief: BeliefState::point_mass(2, 0),
            failure_states: vec![1],
            terminal_states: vec![],
            horizon: None,
            action_names: vec!["do-nothing".into()],
        }
    }

    #[test]
    fn identity_with_uninformative_observations_keeps_belief() {
        let mut m = two_state_model([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5]);
        m.observation[0] = SparseMatrix::repeated_row(2, &[0.5, 0.5]);
        let b = BeliefState::new(vec![0.3, 0.7]).unwrap();
        let (b2, p) = m.belief_update(&b, 0, 1).unwrap();
        assert_abs_diff_eq!(b2.probs()[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn point_mass_propagates() {
        let m = two_state_model([[0.0, 1.0], [0.0, 1.0]], [0.3, 0.9]);
        let (b2, p) = m
            .belief_update(&BeliefState::point_mass(2, 0), 0, 1)
            .unwrap();
        assert_eq!(b2.probs(), &[0.0, 1.0]);
        assert_abs_diff_eq!(p, 0.9, epsilon = 1e-15);
    }

    #[test]
    fn two_state_detection_update_matches_hand_value() {
        // b·T = (0.7, 0.3); likelihood (0.1, 0.632) gives (0.07, 0.1896) / 0.2596.
        let m = two_state_model([[0.7, 0.3], [0.0, 1.0]], [0.1, 0.632]);
        let (b2, p) = m
            .belief_update(&BeliefState::point_mass(2, 0), 0, 1)
            .unwrap();
        assert_abs_diff_eq!(p, 0.2596, epsilon = 1e-12);
        assert_abs_diff_eq!(b2.probs()[0], 0.2696, epsilon = 1e-4);
        assert_abs_diff_eq!(b2.probs()[1], 0.7303, epsilon = 1e-4);
    }

    #[test]
    fn impossible_observation_is_signalled() {
        let m = two_state_model([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.5]);
        let err = m
            .belief_update(&BeliefState::point_mass(2, 0), 0, 1)
            .unwrap_err();
        assert!(matches!(err, Error::ImpossibleObservation { .. }));
    }

    #[test]
    fn belief_reward_examples() {
        let mut m = two_state_model([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5]);
        assert_eq!(
            m.belief_reward(&BeliefState::point_mass(2, 1), 0).unwrap(),
            -6.0
        );
        assert_eq!(m.belief_reward(&BeliefState::uniform(2), 0).unwrap(), -5.0);
        m.reward[0] = vec![-50.0, -50.0];
        let b = BeliefState::new(vec![0.8, 0.2]).unwrap();
        assert_abs_diff_eq!(m.belief_reward(&b, 0).unwrap(), -50.0, epsilon = 1e-12);
    }

    #[test]
    fn value_at_examples() {
        let b = BeliefState::new(vec![0.3, 0.7]).unwrap();
        let zero = AlphaVectorSet::new(vec![AlphaVector::new(vec![0.0, 0.0], 0)]);
        assert_eq!(zero.value_at(&b).unwrap(), (0.0, 0));

        let corners = AlphaVectorSet::new(vec![
            AlphaVector::new(vec![1.0, 0.0], 0),
            AlphaVector::new(vec![0.0, 1.0], 1),
        ]);
        let (v, a) = corners.value_at(&b).unwrap();
        assert_abs_diff_eq!(v, 0.7, epsilon = 1e-15);
        assert_eq!(a, 1);

        let tied = AlphaVectorSet::new(vec![
            AlphaVector::new(vec![1.0, 1.0], 3),
            AlphaVector::new(vec![1.0, 1.0], 2),
        ]);
        assert_eq!(tied.value_at(&b).unwrap().1, 3);

        assert_eq!(
            AlphaVectorSet::default().value_at(&b).unwrap_err(),
            Error::UninitializedPolicy
        );
    }

    #[test]
    fn validate_examples() {
        let m = two_state_model([[0.7, 0.3], [0.0, 1.0]], [0.1, 0.632]);
        assert!(m.validate().is_empty());

        let mut bad = m.clone();
        bad.transition[0] =
            SparseMatrix::from_rows(2, vec![vec![(0, 0.68), (1, 0.3)], vec![(1, 1.0)]]).unwrap();
        let v = bad.validate();
        assert_eq!(v.len(), 1);
        match v[0] {
            Violation::TransitionRow {
                action,
                row,
                deviation,
            } => {
                assert_eq!((action, row), (0, 0));
                assert_abs_diff_eq!(deviation, -0.02, epsilon = 1e-12);
            }
            ref other => panic!("unexpected {other:?}"),
        }

        let mut neg = m.clone();
        neg.initial_belief = BeliefState::new_unchecked(vec![1.2, -0.2]);
        let v = neg.validate();
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::BeliefEntry { state: 1, .. }));
    }

    #[test]
    fn undiscounted_infinite_model_is_rejected() {
        let mut m = two_state_model([[0.7, 0.3], [0.0, 1.0]], [0.1, 0.632]);
        m.discount = 1.0;
        assert_eq!(m.validate(), vec![Violation::Discount(1.0)]);
        m.terminal_states = vec![1];
        assert!(m.validate().is_empty());
    }

    #[test]
    fn sparse_matrix_products() {
        let m = SparseMatrix::from_rows(
            3,
            vec![vec![(2, 1.0), (0, 2.0)], vec![], vec![(1, 3.0), (1, 1.0)]],
        )
        .unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(2, 1), 4.0);
        assert_eq!(m.left_multiply(&[1.0, 1.0, 1.0]), vec![2.0, 4.0, 1.0]);
        assert_eq!(m.right_multiply(&[1.0, 1.0, 1.0]), vec![3.0, 0.0, 4.0]);
        let r = SparseMatrix::repeated_row(2, &[0.0, 0.25, 0.75]);
        assert_eq!(r.row(1).0, &[1, 2]);
    }

    #[test]
    fn repeated_long_rows_are_stored_once() {
        let long: Vec<(usize, f64)> = (0..10).map(|c| (c, 0.1)).collect();
        let rows = vec![long.clone(), vec![(3, 1.0)], long.clone(), long.clone(), vec![(9, 1.0)]];
        let m = SparseMatrix::from_rows(10, rows.clone()).unwrap();
        assert_eq!(m.stored(), 12);
        assert_eq!(m.nnz(), 32);
        let x = [0.1, 0.2, 0.3, 0.15, 0.25];
        let dense_left: Vec<f64> = (0..10)
            .map(|c| (0..5).map(|i| x[i] * m.get(i, c)).sum())
            .collect();
        for (a, b) in m.left_multiply(&x).iter().zip(&dense_left) {
            assert!((a - b).abs() < 1e-15);
        }
        let y: Vec<f64> = (0..10).map(|c| c as f64).collect();
        assert!((m.right_multiply(&y)[2] - 4.5).abs() < 1e-12);
        assert_eq!(m.right_multiply(&y)[1], 3.0);
        let plain = SparseMatrix::from_rows(10, rows).unwrap();
        assert_eq!(m, plain);
    }
}

//! Discretized deterioration models. The continuous crack process is compiled
//! into a Markov chain over either (damage, K) cells, where K is the combined
//! time-invariant growth parameter, or (damage, rate) cells, where the rate
//! index counts years of deterioration.
//!
//! Joint states are laid out as `s = theta * n_d + d`, with `theta` the K cell
//! or the rate index and `d` the damage cell. The top damage cell `[d_c, ∞)`
//! is the failure cell.

use std::fmt::{self, Write as _};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::container;
use crate::error::{Error, Result};
use crate::fatigue::{
    grow_with_k, CrackGrowthParams, Inspection, InspectionEvent, TrajectorySampler, TrajectorySet,
};
use crate::pomdp::{BeliefState, SparseMatrix};
use crate::rng::{derive_seed, stream_rng};

/// Lower end of the log-spaced damage grid.
pub const PARAMETRIC_D_LOW: f64 = 1e-1;
pub const RATE_D_LOW: f64 = 1e-4;
pub const K_LOW: f64 = 1e-5;
pub const K_HIGH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Parametric,
    DeteriorationRate,
}

/// Point of a damage cell at which inspection likelihoods and expected
/// damage are evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representative {
    /// `sqrt(lo * hi)`.
    GeometricMidpoint,
    /// `(lo + hi) / 2`.
    #[default]
    ArithmeticMidpoint,
}

/// Distribution of damage within a cell when sampling parametric rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InCellMeasure {
    LogUniform,
    #[default]
    Uniform,
}

/// Interval boundaries for damage and for the second state variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationScheme {
    pub variant: Variant,
    #[serde(default)]
    pub representative: Representative,
    /// `{0, interior..., ∞}`; `n_d + 1` entries.
    pub d_boundaries: Vec<f64>,
    /// Parametric only; `n_k + 1` entries.
    pub k_boundaries: Option<Vec<f64>>,
    /// Rate only: number of rate values `0..tau_count`.
    pub tau_count: Option<usize>,
}

/// `{0, exp(linspace(ln lo, ln hi, n - 1)), ∞}` with exact end points.
fn log_boundaries(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let k = n - 1;
    let (a, b) = (lo.ln(), hi.ln());
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    for i in 0..k {
        let x = if i == 0 {
            lo
        } else if i == k - 1 {
            hi
        } else {
            (a + (b - a) * i as f64 / (k - 1) as f64).exp()
        };
        out.push(x);
    }
    out.push(f64::INFINITY);
    out
}

pub fn build_scheme(
    variant: Variant,
    n_d: usize,
    n_k: Option<usize>,
    params: &CrackGrowthParams,
) -> Result<DiscretizationScheme> {
    if n_d < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 damage cells, got {n_d}"
        )));
    }
    match variant {
        Variant::Parametric => {
            let n_k = n_k.ok_or_else(|| {
                Error::InvalidParameter("parametric scheme needs a K cell count".into())
            })?;
            if n_k < 3 {
                return Err(Error::InvalidParameter(format!(
                    "need at least 3 K cells, got {n_k}"
                )));
            }
            Ok(DiscretizationScheme {
                variant,
                representative: Representative::default(),
                d_boundaries: log_boundaries(n_d, PARAMETRIC_D_LOW, params.d_c),
                k_boundaries: Some(log_boundaries(n_k, K_LOW, K_HIGH)),
                tau_count: None,
            })
        }
        Variant::DeteriorationRate => Ok(DiscretizationScheme {
            variant,
            representative: Representative::default(),
            d_boundaries: log_boundaries(n_d, RATE_D_LOW, params.d_c),
            k_boundaries: None,
            tau_count: Some(params.t_n + 1),
        }),
    }
}

impl DiscretizationScheme {
    /// Parses names such as `DR_d30` or `PAR_K100-d160`.
    pub fn from_name(name: &str, params: &CrackGrowthParams) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unrecognized scheme name `{name}`"));
        if let Some(rest) = name.strip_prefix("DR_d") {
            let n_d = rest.parse().map_err(|_| bad())?;
            build_scheme(Variant::DeteriorationRate, n_d, None, params)
        } else if let Some(rest) = name.strip_prefix("PAR_K") {
            let (k, d) = rest.split_once("-d").ok_or_else(bad)?;
            let n_k = k.parse().map_err(|_| bad())?;
            let n_d = d.parse().map_err(|_| bad())?;
            build_scheme(Variant::Parametric, n_d, Some(n_k), params)
        } else {
            Err(bad())
        }
    }

    pub fn name(&self) -> String {
        match self.variant {
            Variant::DeteriorationRate => format!("DR_d{}", self.n_d()),
            Variant::Parametric => format!("PAR_K{}-d{}", self.n_theta(), self.n_d()),
        }
    }

    pub fn n_d(&self) -> usize {
        self.d_boundaries.len() - 1
    }

    /// Number of K cells or rate values.
    pub fn n_theta(&self) -> usize {
        match self.variant {
            Variant::Parametric => self.k_boundaries.as_ref().map_or(0, |k| k.len() - 1),
            Variant::DeteriorationRate => self.tau_count.unwrap_or(0),
        }
    }

    pub fn num_states(&self) -> usize {
        self.n_d() * self.n_theta()
    }

    #[inline]
    pub fn index(&self, d: usize, theta: usize) -> usize {
        theta * self.n_d() + d
    }

    #[inline]
    pub fn split(&self, s: usize) -> (usize, usize) {
        (s % self.n_d(), s / self.n_d())
    }

    pub fn failure_cell(&self) -> usize {
        self.n_d() - 1
    }

    /// Damage cell containing `x`.
    #[inline]
    pub fn d_cell(&self, x: f64) -> usize {
        cell_of(&self.d_boundaries, x)
    }

    pub fn d_interval(&self, i: usize) -> (f64, f64) {
        (self.d_boundaries[i], self.d_boundaries[i + 1])
    }

    /// Damage value used for inspection likelihoods of cell `i`. The first
    /// cell `[0, hi)` uses `hi / 2` and the open top cell its lower end.
    pub fn d_representative(&self, i: usize) -> f64 {
        let (lo, hi) = self.d_interval(i);
        if hi.is_infinite() {
            lo
        } else if lo == 0.0 {
            hi / 2.0
        } else {
            match self.representative {
                Representative::GeometricMidpoint => (lo * hi).sqrt(),
                Representative::ArithmeticMidpoint => 0.5 * (lo + hi),
            }
        }
    }

    pub fn with_representative(mut self, r: Representative) -> Self {
        self.representative = r;
        self
    }

    pub fn failure_states(&self) -> Vec<usize> {
        let f = self.failure_cell();
        (0..self.n_theta()).map(|t| self.index(f, t)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let check = |b: &[f64], what: &str| -> Result<()> {
            if b.len() < 3 || b[0] != 0.0 || *b.last().unwrap() != f64::INFINITY {
                return Err(Error::InvalidParameter(format!(
                    "{what} boundaries must run from 0 to infinity"
                )));
            }
            if b.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidParameter(format!(
                    "{what} boundaries must be strictly increasing"
                )));
            }
            Ok(())
        };
        check(&self.d_boundaries, "damage")?;
        match self.variant {
            Variant::Parametric => check(
                self.k_boundaries
                    .as_deref()
                    .ok_or_else(|| Error::InvalidParameter("missing K boundaries".into()))?,
                "K",
            ),
            Variant::DeteriorationRate => match self.tau_count {
                Some(n) if n >= 2 => Ok(()),
                _ => Err(Error::InvalidParameter("rate count must be at least 2".into())),
            },
        }
    }
}

#[inline]
fn cell_of(boundaries: &[f64], x: f64) -> usize {
    let n = boundaries.len() - 1;
    boundaries.partition_point(|&b| b <= x).saturating_sub(1).min(n - 1)
}

/// Sampling effort for compilation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompileConfig {
    /// Parametric variant: samples per (damage cell, K cell) row.
    pub samples_per_cell: usize,
    /// Rate variant: number of simulated trajectories.
    pub trajectories: usize,
    pub seed: u64,
    #[serde(default)]
    pub in_cell: InCellMeasure,
}

impl Default for CompileConfig {
    fn default() -> Self {
        Self {
            samples_per_cell: 10_000,
            trajectories: 1_000_000,
            seed: 2021,
            in_cell: InCellMeasure::default(),
        }
    }
}

/// A cell whose transition row could not be estimated from samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedCell {
    /// `None` when the whole K cell is affected.
    pub d_cell: Option<usize>,
    pub theta: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub scheme: String,
    pub num_states: usize,
    pub nnz: usize,
    pub density: f64,
    pub samples_per_cell: Option<usize>,
    pub trajectories: Option<usize>,
    pub seed: u64,
    pub flagged: Vec<FlaggedCell>,
}

impl fmt::Display for BuildReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scheme: {}", self.scheme)?;
        writeln!(f, "states: {}", self.num_states)?;
        writeln!(f, "nonzeros: {} (density {:.3e})", self.nnz, self.density)?;
        if let Some(n) = self.samples_per_cell {
            writeln!(f, "samples per cell: {n}")?;
        }
        if let Some(n) = self.trajectories {
            writeln!(f, "trajectories: {n}")?;
        }
        writeln!(f, "seed: {}", self.seed)?;
        writeln!(f, "flagged cells: {}", self.flagged.len())?;
        for c in &self.flagged {
            match c.d_cell {
                Some(d) => writeln!(f, "  d={d} theta={}: {}", c.theta, c.reason)?,
                None => writeln!(f, "  theta={}: {}", c.theta, c.reason)?,
            }
        }
        Ok(())
    }
}

/// A compiled do-nothing deterioration chain with its prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledDbn {
    pub scheme: DiscretizationScheme,
    pub params: CrackGrowthParams,
    pub transition: SparseMatrix,
    pub initial_belief: BeliefState,
    pub failure_states: Vec<usize>,
    pub report: BuildReport,
}

const DBN_KIND: [u8; 4] = *b"DBN ";
const DBN_VERSION: u32 = 1;

impl CompiledDbn {
    pub fn num_states(&self) -> usize {
        self.scheme.num_states()
    }

    pub fn horizon(&self) -> usize {
        self.params.t_n
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(DBN_KIND, DBN_VERSION, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        container::decode(DBN_KIND, DBN_VERSION, bytes)
    }

    /// Representative damage of every joint state.
    pub fn damage_per_state(&self) -> Vec<f64> {
        (0..self.num_states())
            .map(|s| self.scheme.d_representative(self.scheme.split(s).0))
            .collect()
    }

    /// Per-state outcome likelihoods of an inspection, evaluated at each
    /// cell's representative damage. Rows are states, columns outcomes.
    pub fn observation_matrix(&self, inspection: &Inspection) -> SparseMatrix {
        let n_o = inspection.num_outcomes();
        let per_cell: Vec<Vec<(usize, f64)>> = (0..self.scheme.n_d())
            .map(|i| {
                inspection
                    .likelihoods(self.scheme.d_representative(i))
                    .into_iter()
                    .enumerate()
                    .collect()
            })
            .collect();
        let rows = (0..self.num_states())
            .map(|s| per_cell[self.scheme.split(s).0].clone())
            .collect();
        SparseMatrix::from_rows(n_o, rows).expect("outcome indices are in range")
    }

    /// Likelihood vector of one inspection outcome over states.
    pub fn likelihood(&self, inspection: &Inspection, outcome: usize) -> Vec<f64> {
        let per_cell: Vec<f64> = (0..self.scheme.n_d())
            .map(|i| inspection.likelihood(self.scheme.d_representative(i), outcome))
            .collect();
        (0..self.num_states())
            .map(|s| per_cell[self.scheme.split(s).0])
            .collect()
    }
}

/// Compiles the do-nothing transition for a scheme, drawing fresh samples.
pub fn compile_transition(
    scheme: &DiscretizationScheme,
    params: &CrackGrowthParams,
    config: &CompileConfig,
) -> Result<CompiledDbn> {
    scheme.validate()?;
    params.validate()?;
    match scheme.variant {
        Variant::Parametric => compile_parametric(scheme, params, config),
        Variant::DeteriorationRate => {
            if config.trajectories == 0 {
                return Err(Error::InvalidParameter("trajectory count must be positive".into()));
            }
            let sampler = TrajectorySampler::new(params)?;
            let w = params.t_n + 1;
            let seed = config.seed;
            let n = config.trajectories;
            let blocks = n.div_ceil(RATE_BLOCK);
            let counts = (0..blocks)
                .into_par_iter()
                .map(|b| {
                    let mut c = RateCounts::new(scheme);
                    let mut row = vec![0.0; w];
                    for i in b * RATE_BLOCK..((b + 1) * RATE_BLOCK).min(n) {
                        sampler.fill(seed, i as u64, &mut row);
                        c.add(scheme, &row);
                    }
                    c
                })
                .reduce(|| RateCounts::new(scheme), RateCounts::merge);
            Ok(finish_rate(scheme, params, counts, Some(n), seed))
        }
    }
}

/// Compiles a rate-variant chain from an existing trajectory pool.
pub fn compile_rate_from_pool(
    scheme: &DiscretizationScheme,
    params: &CrackGrowthParams,
    pool: &TrajectorySet,
) -> Result<CompiledDbn> {
    scheme.validate()?;
    if scheme.variant != Variant::DeteriorationRate {
        return Err(Error::InvalidParameter("pool compilation needs a rate scheme".into()));
    }
    if pool.horizon() + 1 < scheme.n_theta() {
        return Err(Error::InvalidParameter(
            "trajectory pool shorter than the rate range".into(),
        ));
    }
    let counts = pool
        .blocks(RATE_BLOCK)
        .map(|block| {
            let mut c = RateCounts::new(scheme);
            for tr in block.chunks_exact(pool.horizon() + 1) {
                c.add(scheme, tr);
            }
            c
        })
        .reduce(|| RateCounts::new(scheme), RateCounts::merge);
    Ok(finish_rate(scheme, params, counts, Some(pool.num_samples()), 0))
}

const RATE_BLOCK: usize = 4096;

/// Transition counts `[tau][d][d']` for `tau` in `0..n_tau - 1`.
struct RateCounts {
    n_d: usize,
    counts: Vec<u64>,
}

impl RateCounts {
    fn new(scheme: &DiscretizationScheme) -> Self {
        let n_d = scheme.n_d();
        let n_tau = scheme.n_theta();
        Self {
            n_d,
            counts: vec![0; (n_tau - 1) * n_d * n_d],
        }
    }

    fn add(&mut self, scheme: &DiscretizationScheme, traj: &[f64]) {
        let n_d = self.n_d;
        let n_steps = self.counts.len() / (n_d * n_d);
        let mut cur = scheme.d_cell(traj[0]);
        for tau in 0..n_steps {
            let next = scheme.d_cell(traj[tau + 1]);
            self.counts[(tau * n_d + cur) * n_d + next] += 1;
            cur = next;
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        self
    }
}

fn finish_rate(
    scheme: &DiscretizationScheme,
    params: &CrackGrowthParams,
    counts: RateCounts,
    trajectories: Option<usize>,
    seed: u64,
) -> CompiledDbn {
    let n_d = scheme.n_d();
    let n_tau = scheme.n_theta();
    let fail = scheme.failure_cell();
    let mean_k = params.mean_k();
    let mut flagged = Vec::new();
    let mut rows = Vec::with_capacity(n_d * n_tau);
    for tau in 0..n_tau {
        for d in 0..n_d {
            let s = scheme.index(d, tau);
            if d == fail || tau == n_tau - 1 {
                rows.push(vec![(s, 1.0)]);
                continue;
            }
            let c = &counts.counts[(tau * n_d + d) * n_d..(tau * n_d + d + 1) * n_d];
            let total: u64 = c.iter().sum();
            if total == 0 {
                let mid = scheme.d_representative(d);
                let next = scheme.d_cell(grow_with_k(params, mid, mean_k));
                rows.push(vec![(scheme.index(next, tau + 1), 1.0)]);
                flagged.push(FlaggedCell {
                    d_cell: Some(d),
                    theta: tau,
                    reason: "no trajectories; mean-parameter growth of cell midpoint".into(),
                });
                continue;
            }
            rows.push(
                c.iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .map(|(j, &k)| (scheme.index(j, tau + 1), k as f64 / total as f64))
                    .collect(),
            );
        }
    }
    let transition =
        SparseMatrix::from_rows(scheme.num_states(), rows).expect("indices within state space");
    let mut b0 = vec![0.0; scheme.num_states()];
    let prior = d0_cell_masses(scheme, params);
    b0[..n_d].copy_from_slice(&prior);
    finish(scheme, params, transition, b0, flagged, None, trajectories, seed)
}

/// Prior mass of each damage cell under the initial crack distribution.
fn d0_cell_masses(scheme: &DiscretizationScheme, params: &CrackGrowthParams) -> Vec<f64> {
    let n_d = scheme.n_d();
    let mut out: Vec<f64> = (0..n_d)
        .map(|i| {
            let (lo, hi) = scheme.d_interval(i);
            if hi.is_infinite() {
                params.d0_survival(lo)
            } else {
                params.d0_cdf(hi) - params.d0_cdf(lo)
            }
        })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

#[allow(clippy::too_many_arguments)]
fn finish(
    scheme: &DiscretizationScheme,
    params: &CrackGrowthParams,
    transition: SparseMatrix,
    b0: Vec<f64>,
    flagged: Vec<FlaggedCell>,
    samples_per_cell: Option<usize>,
    trajectories: Option<usize>,
    seed: u64,
) -> CompiledDbn {
    let report = BuildReport {
        scheme: scheme.name(),
        num_states: scheme.num_states(),
        nnz: transition.nnz(),
        density: transition.density(),
        samples_per_cell,
        trajectories,
        seed,
        flagged,
    };
    CompiledDbn {
        scheme: scheme.clone(),
        params: *params,
        transition,
        initial_belief: BeliefState::from_unnormalized(b0).expect("prior has positive mass"),
        failure_states: scheme.failure_states(),
        report,
    }
}

/// Standard normal helper with tail-accurate interval masses.
struct StdNormal(Normal);

impl StdNormal {
    fn new() -> Self {
        Self(Normal::new(0.0, 1.0).unwrap())
    }

    /// `P(a ≤ Z < b)`.
    fn interval(&self, a: f64, b: f64) -> f64 {
        if a >= b {
            return 0.0;
        }
        if a > 0.0 {
            self.0.sf(a) - self.0.sf(b)
        } else {
            self.0.cdf(b) - self.0.cdf(a)
        }
    }

    /// Inverse-CDF draw from `Z` truncated to `[a, b]`.
    fn truncated(&self, a: f64, b: f64, u: f64) -> f64 {
        if a > 0.0 {
            return -self.truncated(-b, -a, 1.0 - u);
        }
        let (pa, pb) = (self.0.cdf(a), self.0.cdf(b));
        let z = self.0.inverse_cdf(pa + u * (pb - pa));
        if z.is_finite() {
            z.clamp(a, b)
        } else {
            a.max(-40.0).min(b)
        }
    }
}

/// Decomposition `ln K = ln C + m ln S + offset`.
struct LnK {
    offset: f64,
    m: f64,
    mu_c: f64,
    sigma_c: f64,
    mu_s: f64,
    sigma_s: f64,
}

impl LnK {
    fn new(p: &CrackGrowthParams) -> Self {
        Self {
            offset: (p.m / 2.0) * std::f64::consts::PI.ln() + p.n_cycles.ln(),
            m: p.m,
            mu_c: p.ln_c_mean,
            sigma_c: p.ln_c_std,
            mu_s: p.s_mean,
            sigma_s: p.s_std,
        }
    }

    /// Probability that `K ∈ [lo, hi)` given the stress range `s`.
    fn window_mass(&self, n: &StdNormal, s: f64, lo: f64, hi: f64) -> f64 {
        if s <= 0.0 {
            return if lo == 0.0 { 1.0 } else { 0.0 };
        }
        let shift = self.m * s.ln() + self.offset + self.mu_c;
        if self.sigma_c == 0.0 {
            let k = shift.exp();
            return if k >= lo && k < hi { 1.0 } else { 0.0 };
        }
        let za = if lo == 0.0 {
            f64::NEG_INFINITY
        } else {
            (lo.ln() - shift) / self.sigma_c
        };
        let zb = if hi.is_infinite() {
            f64::INFINITY
        } else {
            (hi.ln() - shift) / self.sigma_c
        };
        n.interval(za, zb)
    }

    /// Prior mass of a K cell, integrating over the stress range.
    fn cell_mass(&self, n: &StdNormal, lo: f64, hi: f64) -> f64 {
        if self.sigma_s == 0.0 {
            return self.window_mass(n, self.mu_s, lo, hi);
        }
        // Simpson's rule on the standardized stress over ±10 sd.
        const M: usize = 4000;
        let (a, b) = (-10.0, 10.0);
        let h = (b - a) / M as f64;
        let mut acc = 0.0;
        for i in 0..=M {
            let z = a + h * i as f64;
            let w = if i == 0 || i == M {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            acc += w * pdf * self.window_mass(n, self.mu_s + self.sigma_s * z, lo, hi);
        }
        acc * h / 3.0
    }
}

/// Weighted K draws from the prior truncated to one K cell, or log-uniform
/// draws when the cell carries no prior mass.
fn k_cell_draws(
    lnk: &LnK,
    n: &StdNormal,
    lo: f64,
    hi: f64,
    count: usize,
    seed: u64,
    cell: usize,
) -> (Vec<(f64, f64)>, bool) {
    let mut rng = stream_rng(seed, cell as u64);
    let mut draws = Vec::with_capacity(count);
    for _ in 0..count {
        let s = lnk.mu_s + lnk.sigma_s * n.0.inverse_cdf(rng.random::<f64>().max(1e-300));
        let w = lnk.window_mass(n, s, lo, hi);
        let u: f64 = rng.random();
        if w <= 0.0 || s <= 0.0 {
            draws.push((0.0, 0.0));
            continue;
        }
        let shift = lnk.m * s.ln() + lnk.offset + lnk.mu_c;
        let k = if lnk.sigma_c == 0.0 {
            shift.exp()
        } else {
            let za = if lo == 0.0 {
                f64::NEG_INFINITY
            } else {
                (lo.ln() - shift) / lnk.sigma_c
            };
            let zb = if hi.is_infinite() {
                f64::INFINITY
            } else {
                (hi.ln() - shift) / lnk.sigma_c
            };
            (shift + lnk.sigma_c * n.truncated(za, zb, u)).exp()
        };
        draws.push((k.clamp(lo, hi), w));
    }
    let total: f64 = draws.iter().map(|d| d.1).sum();
    if total > 0.0 && total.is_finite() {
        return (draws, false);
    }
    // Fallback: log-uniform over the cell, with open ends closed two decades
    // below the first boundary and one decade above the last.
    let a = if lo == 0.0 { hi * 1e-2 } else { lo };
    let b = if hi.is_infinite() { lo * 10.0 } else { hi };
    let draws = (0..count)
        .map(|_| {
            let u: f64 = rng.random();
            ((a.ln() + u * (b.ln() - a.ln())).exp(), 1.0)
        })
        .collect();
    (draws, true)
}

fn compile_parametric(
    scheme: &DiscretizationScheme,
    params: &CrackGrowthParams,
    config: &CompileConfig,
) -> Result<CompiledDbn> {
    let n_samples = config.samples_per_cell;
    if n_samples == 0 {
        return Err(Error::InvalidParameter("samples_per_cell must be positive".into()));
    }
    let kb = scheme.k_boundaries.as_ref().unwrap();
    let n_k = kb.len() - 1;
    let n_d = scheme.n_d();
    let fail = scheme.failure_cell();
    let nrm = StdNormal::new();
    let lnk = LnK::new(params);
    let k_seed = derive_seed(config.seed, 1);
    let d_seed = derive_seed(config.seed, 2);

    let k_draws: Vec<(Vec<(f64, f64)>, bool)> = (0..n_k)
        .into_par_iter()
        .map(|j| k_cell_draws(&lnk, &nrm, kb[j], kb[j + 1], n_samples, k_seed, j))
        .collect();
    let k_mass: Vec<f64> = (0..n_k)
        .into_par_iter()
        .map(|j| lnk.cell_mass(&nrm, kb[j], kb[j + 1]))
        .collect();

    let rows: Vec<Vec<(usize, f64)>> = (0..n_k * n_d)
        .into_par_iter()
        .map(|s| {
            let (d, j) = (s % n_d, s / n_d);
            if d == fail {
                return vec![(s, 1.0)];
            }
            let (lo, hi) = scheme.d_interval(d);
            let mut rng = stream_rng(d_seed, s as u64);
            let mut acc = vec![0.0; n_d];
            let draws = &k_draws[j].0;
            for (i, &(k, w)) in draws.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                // Stratified position within the damage cell.
                let u = (i as f64 + rng.random::<f64>()) / draws.len() as f64;
                let x = if lo == 0.0 || config.in_cell == InCellMeasure::Uniform {
                    (lo + u * (hi - lo)).max(f64::MIN_POSITIVE)
                } else {
                    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
                };
                acc[scheme.d_cell(grow_with_k(params, x, k))] += w;
            }
            let total: f64 = acc.iter().sum();
            acc.iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, &p)| (scheme.index(i, j), p / total))
                .collect()
        })
        .collect();

    let flagged = k_draws
        .iter()
        .enumerate()
        .filter(|(_, (_, fb))| *fb)
        .map(|(j, _)| FlaggedCell {
            d_cell: None,
            theta: j,
            reason: "K cell without prior mass; log-uniform K draws".into(),
        })
        .collect();

    let transition = SparseMatrix::from_rows(scheme.num_states(), rows)?;
    let d_mass = d0_cell_masses(scheme, params);
    let k_total: f64 = k_mass.iter().sum();
    let mut b0 = vec![0.0; scheme.num_states()];
    for j in 0..n_k {
        for d in 0..n_d {
            b0[scheme.index(d, j)] = k_mass[j] / k_total * d_mass[d];
        }
    }
    Ok(finish(
        scheme,
        params,
        transition,
        b0,
        flagged,
        Some(n_samples),
        None,
        config.seed,
    ))
}

/// Evidence for one filter step: a state-by-outcome likelihood matrix and the
/// observed outcome.
pub type Evidence<'a> = Option<(&'a SparseMatrix, usize)>;

/// One year of filtering: transition, then an optional Bayes update.
pub fn forward_step(dbn: &CompiledDbn, belief: &BeliefState, evidence: Evidence) -> Result<BeliefState> {
    let mut b = dbn.transition.left_multiply(belief.probs());
    if let Some((z, o)) = evidence {
        let like: Vec<f64> = (0..b.len()).map(|s| z.get(s, o)).collect();
        apply_likelihood(&mut b, &like)?;
    }
    Ok(BeliefState::new_unchecked(b))
}

/// Transition followed by multiplication with a dense likelihood vector.
pub fn forward_step_likelihood(
    dbn: &CompiledDbn,
    belief: &BeliefState,
    likelihood: &[f64],
) -> Result<BeliefState> {
    let mut b = dbn.transition.left_multiply(belief.probs());
    apply_likelihood(&mut b, likelihood)?;
    Ok(BeliefState::new_unchecked(b))
}

/// In-place Bayes update; returns the evidence probability.
pub fn apply_likelihood(b: &mut [f64], likelihood: &[f64]) -> Result<f64> {
    let mut norm = 0.0;
    for (p, l) in b.iter_mut().zip(likelihood) {
        *p *= l;
        norm += *p;
    }
    if !(norm > 0.0) {
        return Err(Error::ImpossibleEvidence);
    }
    b.iter_mut().for_each(|p| *p /= norm);
    Ok(norm)
}

pub fn failure_probability(dbn: &CompiledDbn, belief: &BeliefState) -> f64 {
    belief.mass_on(&dbn.failure_states)
}

/// Cumulative failure probability for years `0..=t_N`, applying the given
/// inspection outcomes as evidence in the year they occur.
pub fn unroll_failure_curve(dbn: &CompiledDbn, inspections: &[InspectionEvent]) -> Result<Vec<f64>> {
    let t_n = dbn.horizon();
    let likes: Vec<(usize, Vec<f64>)> = inspections
        .iter()
        .map(|ev| {
            if ev.year > t_n {
                return Err(Error::OutOfRange {
                    what: "inspection year",
                    index: ev.year,
                    limit: t_n + 1,
                });
            }
            if ev.outcome >= ev.inspection.num_outcomes() {
                return Err(Error::OutOfRange {
                    what: "inspection outcome",
                    index: ev.outcome,
                    limit: ev.inspection.num_outcomes(),
                });
            }
            Ok((ev.year, dbn.likelihood(&ev.inspection, ev.outcome)))
        })
        .collect::<Result<_>>()?;
    let mut b = dbn.initial_belief.probs().to_vec();
    let mut out = Vec::with_capacity(t_n + 1);
    for t in 0..=t_n {
        if t > 0 {
            b = dbn.transition.left_multiply(&b);
        }
        for (_, l) in likes.iter().filter(|(y, _)| *y == t) {
            apply_likelihood(&mut b, l)?;
        }
        out.push(dbn.failure_states.iter().map(|&s| b[s]).sum());
    }
    Ok(out)
}

/// Normalized squared error between a discretized curve and a Monte Carlo
/// reference. Both curves are standardized by the reference mean and
/// (population) standard deviation over time.
pub fn discretization_error(dbn_curve: &[f64], mcs_curve: &[f64]) -> Result<f64> {
    discretization_error_scaled(dbn_curve, mcs_curve, mcs_curve)
}

/// As [`discretization_error`], but standardizing by the spread of a
/// different Monte Carlo curve, typically the unconditioned one.
pub fn discretization_error_scaled(
    dbn_curve: &[f64],
    mcs_curve: &[f64],
    scale_curve: &[f64],
) -> Result<f64> {
    if dbn_curve.len() != mcs_curve.len() || mcs_curve.is_empty() || scale_curve.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "curve lengths differ: {} vs {}",
            dbn_curve.len(),
            mcs_curve.len()
        )));
    }
    let n = scale_curve.len() as f64;
    let mean = scale_curve.iter().sum::<f64>() / n;
    let var = scale_curve.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::InvalidParameter(
            "reference curve has zero standard deviation".into(),
        ));
    }
    Ok(dbn_curve
        .iter()
        .zip(mcs_curve)
        .map(|(a, b)| ((b - a) / sd).powi(2))
        .sum())
}

/// Text summary of a compiled model.
pub fn report_text(dbn: &CompiledDbn) -> String {
    let mut s = dbn.report.to_string();
    let _ = writeln!(
        s,
        "initial failure probability: {:.3e}",
        failure_probability(dbn, &dbn.initial_belief)
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fatigue::{sample_trajectories, PodCurve};
    use approx::assert_abs_diff_eq;

    fn params() -> CrackGrowthParams {
        CrackGrowthParams::default()
    }

    #[test]
    fn scheme_examples() {
        let p = params();
        let s = build_scheme(Variant::DeteriorationRate, 30, None, &p).unwrap();
        assert_eq!(s.d_boundaries.len(), 31);
        assert_eq!(s.d_boundaries[0], 0.0);
        assert_eq!(s.d_boundaries[1], 1e-4);
        assert_eq!(s.d_boundaries[29], 20.0);
        assert_eq!(s.d_boundaries[30], f64::INFINITY);
        assert_eq!(s.tau_count, Some(31));
        assert_eq!(s.num_states(), 930);
        // Log spacing: constant ratio between interior points.
        let r = s.d_boundaries[2] / s.d_boundaries[1];
        for w in s.d_boundaries[1..30].windows(2) {
            assert_abs_diff_eq!(w[1] / w[0], r, epsilon = 1e-12);
        }

        let par = build_scheme(Variant::Parametric, 40, Some(50), &p).unwrap();
        let kb = par.k_boundaries.as_ref().unwrap();
        assert_eq!(kb.len(), 51);
        assert_eq!(kb[1], 1e-5);
        assert_eq!(kb[49], 1.0);
        assert_eq!(par.d_boundaries[1], 0.1);
        assert_eq!(par.name(), "PAR_K50-d40");

        let tiny = build_scheme(Variant::DeteriorationRate, 3, None, &p).unwrap();
        assert_eq!(tiny.d_boundaries, vec![0.0, 1e-4, 20.0, f64::INFINITY]);
        assert!(build_scheme(Variant::DeteriorationRate, 2, None, &p).is_err());
        assert!(build_scheme(Variant::Parametric, 10, Some(2), &p).is_err());

        assert_eq!(DiscretizationScheme::from_name("DR_d15", &p).unwrap().n_d(), 15);
        assert_eq!(
            DiscretizationScheme::from_name("PAR_K100-d160", &p)
                .unwrap()
                .num_states(),
            16_000
        );
        assert!(DiscretizationScheme::from_name("XYZ", &p).is_err());
    }

    #[test]
    fn cell_lookup_and_representatives() {
        let s = build_scheme(Variant::DeteriorationRate, 30, None, &params()).unwrap();
        assert_eq!(s.d_cell(0.0), 0);
        assert_eq!(s.d_cell(5e-5), 0);
        assert_eq!(s.d_cell(1e-4), 1);
        assert_eq!(s.d_cell(20.0), 29);
        assert_eq!(s.d_cell(1e9), 29);
        assert_eq!(s.d_representative(0), 5e-5);
        assert_eq!(s.d_representative(29), 20.0);
        let (lo, hi) = s.d_interval(10);
        assert_abs_diff_eq!(s.d_representative(10), 0.5 * (lo + hi), epsilon = 1e-15);
        let g = s.clone().with_representative(Representative::GeometricMidpoint);
        assert_abs_diff_eq!(g.d_representative(10), (lo * hi).sqrt(), epsilon = 1e-15);
        assert_eq!(g.d_representative(0), 5e-5);
    }

    fn small_rate() -> CompiledDbn {
        let p = params();
        let s = build_scheme(Variant::DeteriorationRate, 30, None, &p).unwrap();
        let cfg = CompileConfig {
            trajectories: 20_000,
            ..Default::default()
        };
        compile_transition(&s, &p, &cfg).unwrap()
    }

    #[test]
    fn rate_chain_structure() {
        let dbn = small_rate();
        let s = &dbn.scheme;
        let t = &dbn.transition;
        for st in 0..dbn.num_states() {
            assert_abs_diff_eq!(t.row_sum(st), 1.0, epsilon = 1e-12);
            let (d, tau) = s.split(st);
            let (cols, vals) = t.row(st);
            if d == s.failure_cell() || tau == 30 {
                assert_eq!((cols, vals), (&[st][..], &[1.0][..]));
            } else {
                assert!(cols.iter().all(|&c| s.split(c).1 == tau + 1));
            }
        }
        assert!(t.density() <= 1.0 / 31.0 + 1e-12);
        // Prior tail above the critical size.
        let pf0 = failure_probability(&dbn, &dbn.initial_belief);
        assert_abs_diff_eq!(pf0, (-20.0f64).exp(), epsilon = 1e-12);
        assert!(!dbn.report.flagged.is_empty());
    }

    #[test]
    fn pool_and_streamed_compilation_agree() {
        let p = params();
        let s = build_scheme(Variant::DeteriorationRate, 15, None, &p).unwrap();
        let cfg = CompileConfig {
            trajectories: 10_000,
            seed: 9,
            ..Default::default()
        };
        let a = compile_transition(&s, &p, &cfg).unwrap();
        let pool = sample_trajectories(&p, 10_000, 9).unwrap();
        let b = compile_rate_from_pool(&s, &p, &pool).unwrap();
        assert_eq!(a.transition, b.transition);
        // With its own pool the unconditional curve is reproduced up to the
        // discretization of the prior.
        let mcs = pool.failure_curve();
        let curve = unroll_failure_curve(&b, &[]).unwrap();
        for (x, y) in curve.iter().zip(&mcs).skip(1) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-3);
        }
    }

    #[test]
    fn parametric_chain_is_block_diagonal() {
        let p = params();
        let s = build_scheme(Variant::Parametric, 20, Some(10), &p).unwrap();
        let cfg = CompileConfig {
            samples_per_cell: 500,
            ..Default::default()
        };
        let dbn = compile_transition(&s, &p, &cfg).unwrap();
        for st in 0..dbn.num_states() {
            let (_, j) = s.split(st);
            let (cols, _) = dbn.transition.row(st);
            assert!(cols.iter().all(|&c| s.split(c).1 == j));
            assert_abs_diff_eq!(dbn.transition.row_sum(st), 1.0, epsilon = 1e-12);
        }
        assert!(dbn.transition.density() <= 1.0 / 10.0 + 1e-12);
        let curve = unroll_failure_curve(&dbn, &[]).unwrap();
        assert!(curve.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        // Determinism.
        assert_eq!(compile_transition(&s, &p, &cfg).unwrap(), dbn);
    }

    #[test]
    fn k_cell_prior_masses_sum_to_one() {
        let p = params();
        let nrm = StdNormal::new();
        let lnk = LnK::new(&p);
        let kb = log_boundaries(50, K_LOW, K_HIGH);
        let total: f64 = kb.windows(2).map(|w| lnk.cell_mass(&nrm, w[0], w[1])).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        // ln K is normal with mean ln(mean K) and variance σ_C² + m²·Var(ln S);
        // the S-linearized check uses the median cell.
        let med = p.mean_k();
        let below = lnk.cell_mass(&nrm, 0.0, med);
        assert!((below - 0.5).abs() < 0.05);
    }

    #[test]
    fn forward_step_examples() {
        let dbn = small_rate();
        let b0 = &dbn.initial_belief;
        let push = forward_step(&dbn, b0, None).unwrap();
        assert_eq!(push.probs(), dbn.transition.left_multiply(b0.probs()).as_slice());
        let ones = vec![1.0; dbn.num_states()];
        let same = forward_step_likelihood(&dbn, b0, &ones).unwrap();
        for (a, b) in same.probs().iter().zip(push.probs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let z = dbn.observation_matrix(&Inspection::Detection(PodCurve::new(8.0).unwrap()));
        let upd = forward_step(&dbn, b0, Some((&z, 0))).unwrap();
        assert_abs_diff_eq!(upd.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);

        let zero = vec![0.0; dbn.num_states()];
        assert_eq!(
            forward_step_likelihood(&dbn, b0, &zero).unwrap_err(),
            Error::ImpossibleEvidence
        );
        let f = dbn.failure_states[3];
        assert_eq!(
            failure_probability(&dbn, &BeliefState::point_mass(dbn.num_states(), f)),
            1.0
        );
    }

    #[test]
    fn inspections_lower_the_conditioned_curve() {
        let dbn = small_rate();
        let base = unroll_failure_curve(&dbn, &[]).unwrap();
        assert!(base.windows(2).all(|w| w[1] >= w[0]));
        let pod = PodCurve::new(8.0).unwrap();
        let cond = unroll_failure_curve(
            &dbn,
            &[
                InspectionEvent::no_detection(18, pod),
                InspectionEvent::no_detection(25, pod),
            ],
        )
        .unwrap();
        assert_eq!(&cond[..18], &base[..18]);
        assert!(cond[18] < base[18] && cond[30] < base[30]);
    }

    #[test]
    fn discretization_error_examples() {
        let c = vec![0.0, 0.1, 0.3, 0.6];
        assert_eq!(discretization_error(&c, &c).unwrap(), 0.0);
        assert!(discretization_error(&c, &[1.0; 4]).is_err());
        assert!(discretization_error(&c, &c[..3]).is_err());
        // Offsetting every point by one reference sd gives one unit per year.
        let n = c.len() as f64;
        let m = c.iter().sum::<f64>() / n;
        let sd = (c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        let shifted: Vec<f64> = c.iter().map(|x| x + sd).collect();
        assert_abs_diff_eq!(discretization_error(&shifted, &c).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn serialization_round_trip() {
        let p = params();
        let s = build_scheme(Variant::DeteriorationRate, 5, None, &p).unwrap();
        let cfg = CompileConfig {
            trajectories: 500,
            ..Default::default()
        };
        let dbn = compile_transition(&s, &p, &cfg).unwrap();
        let bytes = dbn.to_bytes().unwrap();
        assert_eq!(CompiledDbn::from_bytes(&bytes).unwrap(), dbn);
        assert!(report_text(&dbn).contains("DR_d5"));
    }
}

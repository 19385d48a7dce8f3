//! Fatigue crack growth ground truth: Paris-law recursion, Monte Carlo
//! trajectory pools with inspection conditioning, and inspection-quality curves.

use std::f64::consts::PI;

use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Distribution of the initial crack size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialCrack {
    Exponential { mean: f64 },
    Fixed { value: f64 },
}

/// Random variables and constants of the crack-growth model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrackGrowthParams {
    pub ln_c_mean: f64,
    pub ln_c_std: f64,
    /// Stress range, N/mm².
    pub s_mean: f64,
    pub s_std: f64,
    /// Initial crack size, mm.
    pub d0: InitialCrack,
    pub m: f64,
    /// Load cycles per year.
    pub n_cycles: f64,
    /// Horizon in years.
    pub t_n: usize,
    /// Critical crack size, mm.
    pub d_c: f64,
}

impl Default for CrackGrowthParams {
    fn default() -> Self {
        Self {
            ln_c_mean: -35.2,
            ln_c_std: 0.5,
            s_mean: 70.0,
            s_std: 10.0,
            d0: InitialCrack::Exponential { mean: 1.0 },
            m: 3.5,
            n_cycles: 1e6,
            t_n: 30,
            d_c: 20.0,
        }
    }
}

impl CrackGrowthParams {
    /// Checks the model invariants. Zero standard deviations are accepted so
    /// that degenerate (deterministic) pools can be drawn.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if (self.m - 2.0).abs() < 1e-12 {
            return bad("exponent m = 2 makes the growth law singular");
        }
        if !(self.d_c > 0.0) {
            return bad("critical crack size must be positive");
        }
        if !(self.ln_c_std >= 0.0) || !(self.s_std >= 0.0) {
            return bad("standard deviations must be non-negative");
        }
        if !(self.n_cycles >= 0.0) {
            return bad("cycle count must be non-negative");
        }
        match self.d0 {
            InitialCrack::Exponential { mean } if !(mean > 0.0) => {
                bad("initial crack mean must be positive")
            }
            InitialCrack::Fixed { value } if !(value > 0.0 && value <= self.d_c) => {
                bad("fixed initial crack must lie in (0, d_c]")
            }
            _ => Ok(()),
        }
    }

    /// Combined growth parameter `K = C·S^m·π^{m/2}·n`.
    pub fn k_factor(&self, c: f64, s: f64) -> f64 {
        c * s.max(0.0).powf(self.m) * PI.powf(self.m / 2.0) * self.n_cycles
    }

    /// K at the mean of ln C and S.
    pub fn mean_k(&self) -> f64 {
        self.k_factor(self.ln_c_mean.exp(), self.s_mean)
    }

    /// Mean of the initial crack distribution.
    pub fn d0_mean(&self) -> f64 {
        match self.d0 {
            InitialCrack::Exponential { mean } => mean,
            InitialCrack::Fixed { value } => value,
        }
    }

    /// `P(d0 ≤ x)`.
    pub fn d0_cdf(&self, x: f64) -> f64 {
        match self.d0 {
            InitialCrack::Exponential { mean } => {
                if x <= 0.0 {
                    0.0
                } else if x.is_infinite() {
                    1.0
                } else {
                    -(-x / mean).exp_m1()
                }
            }
            InitialCrack::Fixed { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `P(d0 > x)`, accurate in the far tail.
    pub fn d0_survival(&self, x: f64) -> f64 {
        match self.d0 {
            InitialCrack::Exponential { mean } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-x / mean).exp()
                }
            }
            InitialCrack::Fixed { value } => {
                if x >= value {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

/// One year of growth from `d_t` with realized `C` and `S`.
pub fn grow_crack(params: &CrackGrowthParams, d_t: f64, c: f64, s: f64) -> Result<f64> {
    if !(d_t > 0.0) {
        return Err(Error::Domain(format!("crack size {d_t} must be positive")));
    }
    Ok(grow_with_k(params, d_t, params.k_factor(c, s)))
}

/// Growth recursion in terms of the combined parameter K. Assumes `d_t > 0`.
#[inline]
pub fn grow_with_k(params: &CrackGrowthParams, d_t: f64, k: f64) -> f64 {
    let d_c = params.d_c;
    if d_t >= d_c {
        return d_c;
    }
    let e = 1.0 - params.m / 2.0;
    let base = e * k + d_t.powf(e);
    if base <= 0.0 {
        return d_c;
    }
    let d = base.powf(1.0 / e);
    if d >= d_c || !d.is_finite() {
        d_c
    } else {
        d
    }
}

/// A pool of sampled crack trajectories, `d(t)` for `t = 0..=t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    num_samples: usize,
    t_n: usize,
    d_c: f64,
    /// Sample-major: `data[i * (t_n + 1) + t]`.
    data: Vec<f64>,
}

impl TrajectorySet {
    pub fn from_raw(num_samples: usize, t_n: usize, d_c: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_samples * (t_n + 1) {
            return Err(Error::InvalidParameter(format!(
                "trajectory data has {} values, expected {}",
                data.len(),
                num_samples * (t_n + 1)
            )));
        }
        Ok(Self {
            num_samples,
            t_n,
            d_c,
            data,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn horizon(&self) -> usize {
        self.t_n
    }

    pub fn critical_size(&self) -> f64 {
        self.d_c
    }

    pub fn trajectory(&self, i: usize) -> &[f64] {
        let w = self.t_n + 1;
        &self.data[i * w..(i + 1) * w]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.t_n + 1)
    }

    /// Parallel iterator over contiguous blocks of `block` trajectories.
    pub fn blocks(&self, block: usize) -> rayon::slice::Chunks<'_, f64> {
        self.data.par_chunks(block * (self.t_n + 1))
    }

    /// Unconditional cumulative failure probability per year.
    pub fn failure_curve(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.t_n + 1];
        for tr in self.iter() {
            for (c, &d) in counts.iter_mut().zip(tr) {
                if d >= self.d_c {
                    *c += 1;
                }
            }
        }
        counts
            .into_iter()
            .map(|c| c as f64 / self.num_samples as f64)
            .collect()
    }
}

/// Draws individual trajectories from the prior. Trajectory `i` under a seed
/// always comes from RNG stream `i`, so pools of any size and any thread count
/// agree on shared indices.
#[derive(Debug, Clone)]
pub struct TrajectorySampler {
    params: CrackGrowthParams,
    ln_c: Normal<f64>,
    s: Normal<f64>,
    d0: Option<Exp<f64>>,
}

impl TrajectorySampler {
    pub fn new(params: &CrackGrowthParams) -> Result<Self> {
        params.validate()?;
        let map = |e: rand_distr::NormalError| Error::InvalidParameter(e.to_string());
        Ok(Self {
            params: *params,
            ln_c: Normal::new(params.ln_c_mean, params.ln_c_std).map_err(map)?,
            s: Normal::new(params.s_mean, params.s_std).map_err(map)?,
            d0: match params.d0 {
                InitialCrack::Exponential { mean } => Some(
                    Exp::new(1.0 / mean).map_err(|e| Error::InvalidParameter(e.to_string()))?,
                ),
                InitialCrack::Fixed { .. } => None,
            },
        })
    }

    /// Writes `d(0..=t_N)` of trajectory `index` into `row`.
    pub fn fill(&self, seed: u64, index: u64, row: &mut [f64]) {
        let p = &self.params;
        let mut rng = stream_rng(seed, index);
        let c = self.ln_c.sample(&mut rng).exp();
        let s = self.s.sample(&mut rng);
        let d0 = match (self.d0, p.d0) {
            (Some(e), _) => e.sample(&mut rng),
            (None, InitialCrack::Fixed { value }) => value,
            (None, InitialCrack::Exponential { .. }) => unreachable!(),
        };
        let k = p.k_factor(c, s);
        let mut d = d0.clamp(f64::MIN_POSITIVE, p.d_c);
        row[0] = d;
        for slot in row.iter_mut().skip(1) {
            d = grow_with_k(p, d, k);
            *slot = d;
        }
    }
}

/// Draws `num_samples` trajectories.
pub fn sample_trajectories(
    params: &CrackGrowthParams,
    num_samples: usize,
    seed: u64,
) -> Result<TrajectorySet> {
    let sampler = TrajectorySampler::new(params)?;
    if num_samples == 0 {
        return Err(Error::InvalidParameter("num_samples must be at least 1".into()));
    }
    let w = params.t_n + 1;
    let mut data = vec![0.0; num_samples * w];
    data.par_chunks_mut(w)
        .enumerate()
        .for_each(|(i, row)| sampler.fill(seed, i as u64, row));
    TrajectorySet::from_raw(num_samples, params.t_n, params.d_c, data)
}

/// Probability of detection curve `PoD(d) = F0 (1 - exp(-d/λ))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PodCurve {
    pub scale: f64,
    #[serde(default = "unit_plateau")]
    pub plateau: f64,
}

fn unit_plateau() -> f64 {
    1.0
}

impl PodCurve {
    pub fn new(scale: f64) -> Result<Self> {
        Self::with_plateau(scale, 1.0)
    }

    pub fn with_plateau(scale: f64, plateau: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidParameter(format!("PoD scale {scale} must be positive")));
        }
        if !(plateau > 0.0 && plateau <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "PoD plateau {plateau} must lie in (0, 1]"
            )));
        }
        Ok(Self { scale, plateau })
    }

    #[inline]
    pub fn eval(&self, d: f64) -> f64 {
        if d <= 0.0 {
            0.0
        } else {
            -self.plateau * (-d / self.scale).exp_m1()
        }
    }
}

pub fn pod_eval(curve: &PodCurve, d: f64) -> f64 {
    curve.eval(d)
}

/// Indication curve: `k` PoD boundaries split damage into `k + 1` indicators,
/// indicator 0 being "no detection".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiCurve {
    pub boundaries: Vec<PodCurve>,
}

impl PoiCurve {
    pub fn new(boundaries: Vec<PodCurve>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::InvalidParameter("PoI curve needs at least one boundary".into()));
        }
        for w in boundaries.windows(2) {
            if !(w[1].scale > w[0].scale) {
                return Err(Error::InvalidParameter(
                    "PoI boundary scales must be strictly increasing".into(),
                ));
            }
            if w[1].plateau > w[0].plateau {
                return Err(Error::InvalidParameter(
                    "PoI boundary plateaus must be non-increasing".into(),
                ));
            }
        }
        Ok(Self { boundaries })
    }

    /// Boundaries with the given scales and unit plateau.
    pub fn from_scales(scales: &[f64]) -> Result<Self> {
        Self::new(
            scales
                .iter()
                .map(|&s| PodCurve::new(s))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn num_indicators(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn eval(&self, d: f64) -> Vec<f64> {
        let k = self.boundaries.len();
        let pods: Vec<f64> = self.boundaries.iter().map(|c| c.eval(d)).collect();
        let mut out = Vec::with_capacity(k + 1);
        out.push(1.0 - pods[0]);
        for i in 0..k - 1 {
            out.push((pods[i] - pods[i + 1]).max(0.0));
        }
        out.push(pods[k - 1]);
        out
    }
}

pub fn poi_eval(curve: &PoiCurve, d: f64) -> Vec<f64> {
    curve.eval(d)
}

/// An inspection technique: binary detection or multi-level indication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inspection {
    Detection(PodCurve),
    Indication(PoiCurve),
}

impl Inspection {
    pub fn num_outcomes(&self) -> usize {
        match self {
            Inspection::Detection(_) => 2,
            Inspection::Indication(p) => p.num_indicators(),
        }
    }

    /// Outcome probabilities at damage `d`; outcome 0 is no detection.
    pub fn likelihoods(&self, d: f64) -> Vec<f64> {
        match self {
            Inspection::Detection(p) => {
                let q = p.eval(d);
                vec![1.0 - q, q]
            }
            Inspection::Indication(p) => p.eval(d),
        }
    }

    pub fn likelihood(&self, d: f64, outcome: usize) -> f64 {
        match self {
            Inspection::Detection(p) => {
                let q = p.eval(d);
                if outcome == 0 {
                    1.0 - q
                } else {
                    q
                }
            }
            Inspection::Indication(p) => p.eval(d)[outcome],
        }
    }

    /// Probability of any detection (outcome other than 0).
    pub fn detection_probability(&self, d: f64) -> f64 {
        1.0 - self.likelihood(d, 0)
    }
}

/// A recorded inspection outcome at a given year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionEvent {
    pub year: usize,
    pub inspection: Inspection,
    pub outcome: usize,
}

impl InspectionEvent {
    pub fn no_detection(year: usize, pod: PodCurve) -> Self {
        Self {
            year,
            inspection: Inspection::Detection(pod),
            outcome: 0,
        }
    }

    pub fn detection(year: usize, pod: PodCurve) -> Self {
        Self {
            year,
            inspection: Inspection::Detection(pod),
            outcome: 1,
        }
    }
}

/// Trajectories per block in deterministic parallel reductions.
pub const REDUCTION_BLOCK: usize = 4096;

/// Effective sample size floor for reweighted estimates.
pub const DEFAULT_ESS_FLOOR: f64 = 100.0;

/// Failure probability per year conditioned on inspection outcomes by
/// likelihood reweighting. The estimate at year `t` uses the outcomes recorded
/// at years `≤ t`, which is what a forward filter reports.
pub fn conditional_failure_curve(
    trajectories: &TrajectorySet,
    inspections: &[InspectionEvent],
    ess_floor: f64,
) -> Result<Vec<f64>> {
    let t_n = trajectories.horizon();
    for ev in inspections {
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
    }
    if inspections.is_empty() {
        return Ok(trajectories.failure_curve());
    }
    let d_c = trajectories.critical_size();
    // Per sample: cumulative weight after each year, then accumulate weighted
    // failure indicators and weight sums.
    // Partial sums over fixed-size blocks, merged in block order, keep the
    // floating-point result independent of the thread count.
    let partials: Vec<[Vec<f64>; 3]> = trajectories
        .blocks(REDUCTION_BLOCK)
        .map(|block| {
            let mut acc = [vec![0.0; t_n + 1], vec![0.0; t_n + 1], vec![0.0; t_n + 1]];
            for tr in block.chunks_exact(t_n + 1) {
                let mut w = 1.0;
                for t in 0..=t_n {
                    for ev in inspections.iter().filter(|e| e.year == t) {
                        w *= ev.inspection.likelihood(tr[t], ev.outcome);
                    }
                    acc[1][t] += w;
                    acc[2][t] += w * w;
                    if tr[t] >= d_c {
                        acc[0][t] += w;
                    }
                }
            }
            acc
        })
        .collect();
    let mut num = vec![0.0; t_n + 1];
    let mut den = vec![0.0; t_n + 1];
    let mut den2 = vec![0.0; t_n + 1];
    for [a, b, c] in &partials {
        for t in 0..=t_n {
            num[t] += a[t];
            den[t] += b[t];
            den2[t] += c[t];
        }
    }
    let mut out = Vec::with_capacity(t_n + 1);
    for t in 0..=t_n {
        let ess = if den2[t] > 0.0 {
            den[t] * den[t] / den2[t]
        } else {
            0.0
        };
        if !(ess >= ess_floor) {
            return Err(Error::DegenerateConditioning {
                ess,
                floor: ess_floor,
            });
        }
        out.push(num[t] / den[t]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn growth_examples() {
        let p = CrackGrowthParams::default();
        let c = (-35.2f64).exp();
        assert_eq!(grow_crack(&p, 20.0, c, 70.0).unwrap(), 20.0);
        let idle = CrackGrowthParams {
            n_cycles: 0.0,
            ..p
        };
        assert_eq!(grow_crack(&idle, 3.7, c, 70.0).unwrap(), 3.7);
        // Independent evaluation of the recursion.
        let k = c * 70f64.powf(3.5) * PI.powf(1.75) * 1e6;
        let expected = (-0.75 * k + 1.0f64).powf(1.0 / -0.75);
        let d1 = grow_crack(&p, 1.0, c, 70.0).unwrap();
        assert_abs_diff_eq!(d1, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(d1, 1.011, epsilon = 5e-4);
        assert!(grow_crack(&p, 0.0, c, 70.0).is_err());
        assert!(grow_crack(&p, -1.0, c, 70.0).is_err());
    }

    #[test]
    fn runaway_growth_clamps_to_critical_size() {
        let p = CrackGrowthParams::default();
        // Base of the bracket goes negative for large K.
        assert_eq!(grow_with_k(&p, 10.0, 10.0), 20.0);
        assert_eq!(grow_with_k(&p, 19.9, 0.5), 20.0);
    }

    #[test]
    fn trajectories_are_seed_stable_and_monotone() {
        let p = CrackGrowthParams::default();
        let a = sample_trajectories(&p, 1, 7).unwrap();
        let b = sample_trajectories(&p, 1, 7).unwrap();
        assert_eq!(a, b);
        let pool = sample_trajectories(&p, 2000, 3).unwrap();
        for tr in pool.iter() {
            assert!(tr.windows(2).all(|w| w[1] >= w[0]));
        }
        // A larger pool starts with the same samples.
        let big = sample_trajectories(&p, 2500, 3).unwrap();
        assert_eq!(pool.trajectory(1999), big.trajectory(1999));
        let pf = pool.failure_curve();
        assert!(pf.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn deterministic_parameters_give_identical_trajectories() {
        let p = CrackGrowthParams {
            ln_c_std: 0.0,
            s_std: 0.0,
            d0: InitialCrack::Fixed { value: 1.0 },
            ..Default::default()
        };
        let pool = sample_trajectories(&p, 50, 11).unwrap();
        let first = pool.trajectory(0).to_vec();
        assert!(pool.iter().all(|t| t == first.as_slice()));
        assert_abs_diff_eq!(first[1], 1.011, epsilon = 5e-4);
    }

    #[test]
    fn pod_and_poi_examples() {
        let pod = PodCurve::new(8.0).unwrap();
        assert_eq!(pod_eval(&pod, 0.0), 0.0);
        assert_abs_diff_eq!(pod_eval(&pod, 8.0), 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(pod_eval(&pod, 8.0), 0.6321, epsilon = 1e-4);
        let poi = PoiCurve::from_scales(&[4.0, 7.0, 10.0, 13.0]).unwrap();
        let v = poi_eval(&poi, 0.0);
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let v = poi_eval(&poi, 9.0);
        assert_abs_diff_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(PoiCurve::from_scales(&[4.0, 4.0]).is_err());
        assert!(PodCurve::new(0.0).is_err());
    }

    #[test]
    fn conditioning_examples() {
        let p = CrackGrowthParams::default();
        let pool = sample_trajectories(&p, 20_000, 5).unwrap();
        let base = pool.failure_curve();
        assert_eq!(conditional_failure_curve(&pool, &[], 100.0).unwrap(), base);
        // An almost blind inspection leaves the curve essentially unchanged.
        let blind = PodCurve::new(1e12).unwrap();
        let c = conditional_failure_curve(
            &pool,
            &[InspectionEvent::no_detection(10, blind)],
            100.0,
        )
        .unwrap();
        for (x, y) in c.iter().zip(&base) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
        let pod = PodCurve::new(8.0).unwrap();
        let cond = conditional_failure_curve(
            &pool,
            &[
                InspectionEvent::no_detection(18, pod),
                InspectionEvent::no_detection(25, pod),
            ],
            100.0,
        )
        .unwrap();
        assert_eq!(&cond[..18], &base[..18]);
        assert!(cond[30] < base[30]);
        let err = conditional_failure_curve(
            &pool,
            &[InspectionEvent::no_detection(18, pod)],
            1e9,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateConditioning { .. }));
    }
}

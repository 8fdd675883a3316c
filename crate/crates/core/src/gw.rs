//! Critical branching genealogies: simulation, conversion to marked metric
//! measure spaces, and exact generating-function oracles for the population
//! size at a fixed generation.
//!
//! A replicate starts from one root. Each individual draws an offspring
//! count from the offspring law and each child takes a standard normal step
//! from its parent's position. [`to_mmm`] turns the generation-`n`
//! survivors into a space: weights `1/n`, genealogical distance `(n -
//! ancestor generation)/n`, marks `position / sqrt(n)`. An extinct
//! replicate maps to the null space.
//!
//! [`population_stats`] is a streaming path that tracks only the population
//! size, using closed-form sums per generation (negative binomial via a bit
//! buffer for the geometric law, Poisson and binomial sums otherwise), so
//! tens of millions of replicates are cheap. All accumulators are integers,
//! making results independent of thread count.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::law::EmpiricalLaw;
use crate::scalar::{c, Scalar};
use crate::space::FiniteMmmSpace;

/// Offspring distribution of the branching process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OffspringLaw {
    /// `P(k) = (1/2)^(k+1)` for `k >= 0`; critical with variance 2.
    GeometricHalf,
    /// Poisson with mean 1; critical with variance 1.
    Poisson1,
    /// 0 or 2 children with probability 1/2 each; critical with variance 1.
    BinaryHalf,
    /// Finite support `P(k) = pmf[k]`; any mean is allowed.
    Custom { pmf: Vec<f64> },
}

impl OffspringLaw {
    /// Validates finite-support laws; the built-ins are always valid.
    pub fn validate(&self) -> Result<()> {
        if let OffspringLaw::Custom { pmf } = self {
            if pmf.is_empty() {
                return Err(Error::InvalidConfig("custom pmf must be nonempty".into()));
            }
            if pmf.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::InvalidConfig(
                    "custom pmf entries must be finite and nonnegative".into(),
                ));
            }
            let s: f64 = pmf.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "custom pmf sums to {s}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Probability generating function `E[s^X]`.
    pub fn pgf(&self, s: f64) -> f64 {
        match self {
            OffspringLaw::GeometricHalf => 1.0 / (2.0 - s),
            OffspringLaw::Poisson1 => (s - 1.0).exp(),
            OffspringLaw::BinaryHalf => 0.5 + 0.5 * s * s,
            OffspringLaw::Custom { pmf } => pmf.iter().rev().fold(0.0, |acc, &p| acc * s + p),
        }
    }

    /// Raw moments `(E X, E X^2, E X^3)`.
    pub fn raw_moments(&self) -> (f64, f64, f64) {
        match self {
            OffspringLaw::GeometricHalf => (1.0, 3.0, 13.0),
            OffspringLaw::Poisson1 => (1.0, 2.0, 5.0),
            OffspringLaw::BinaryHalf => (1.0, 2.0, 4.0),
            OffspringLaw::Custom { pmf } => {
                let mut m = (0.0, 0.0, 0.0);
                for (k, &p) in pmf.iter().enumerate() {
                    let k = k as f64;
                    m.0 += p * k;
                    m.1 += p * k * k;
                    m.2 += p * k * k * k;
                }
                m
            }
        }
    }
}

/// Exact distribution facts about `Z_n`, the generation-`n` population
/// size, obtained from the generating function and moment recursions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GfOracle {
    /// `P(Z_n > 0)`.
    pub survival: f64,
    /// `E[Z_n]`.
    pub m1: f64,
    /// `E[Z_n^2]`.
    pub m2: f64,
    /// `E[Z_n^3]`.
    pub m3: f64,
}

impl GfOracle {
    /// `n^(1-k) * E[Z_n^k]`, the mass moment of the rescaled tree law.
    pub fn scaled_moment(&self, n: usize, k: usize) -> f64 {
        let m = match k {
            1 => self.m1,
            2 => self.m2,
            3 => self.m3,
            _ => panic!("oracle knows moments 1..=3, asked for {k}"),
        };
        (n as f64).powi(1 - k as i32) * m
    }
}

/// Survival probability and first three moments of `Z_n`, computed by
/// iterating the generating function and the conditional moment recursions
/// from `Z_0 = 1`.
pub fn gf_oracle(off: &OffspringLaw, n: usize) -> Result<GfOracle> {
    off.validate()?;
    let mut extinct = 0.0f64;
    for _ in 0..n {
        extinct = off.pgf(extinct);
    }
    let (u1, u2, u3) = off.raw_moments();
    let (mut m1, mut m2, mut m3) = (1.0f64, 1.0f64, 1.0f64);
    for _ in 0..n {
        // E[Z'(Z'-1)] style factorial expansions of a random sum.
        let f2 = m2 - m1;
        let f3 = m3 - 3.0 * m2 + 2.0 * m1;
        let n3 = u3 * m1 + 3.0 * u2 * u1 * f2 + u1 * u1 * u1 * f3;
        let n2 = u2 * m1 + u1 * u1 * f2;
        let n1 = u1 * m1;
        m1 = n1;
        m2 = n2;
        m3 = n3;
    }
    Ok(GfOracle {
        survival: 1.0 - extinct,
        m1,
        m2,
        m3,
    })
}

/// One simulated genealogy up to generation `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenealogySample {
    n: usize,
    mark_dim: usize,
    /// `parents[g][i]` is the index in generation `g - 1` of individual
    /// `i`'s parent; `parents[0]` is empty.
    parents: Vec<Vec<u32>>,
    /// Positions per generation, flattened as `alive[g] * mark_dim`.
    positions: Vec<Vec<f64>>,
    /// Population size per generation, `0..=n`.
    alive: Vec<usize>,
}

impl GenealogySample {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mark_dim(&self) -> usize {
        self.mark_dim
    }

    pub fn alive(&self) -> &[usize] {
        &self.alive
    }

    /// Number of generation-`n` survivors.
    pub fn survivors(&self) -> usize {
        self.alive[self.n]
    }

    /// Ancestor of survivor `s` at generation `g`.
    pub fn ancestor(&self, s: usize, g: usize) -> usize {
        let mut a = s;
        for gen in ((g + 1)..=self.n).rev() {
            a = self.parents[gen][a] as usize;
        }
        a
    }

    /// Ancestor indices of all survivors at every generation:
    /// `table[g][s]`.
    fn ancestor_table(&self) -> Vec<Vec<u32>> {
        let z = self.survivors();
        let mut table = vec![Vec::new(); self.n + 1];
        table[self.n] = (0..z as u32).collect();
        for g in (0..self.n).rev() {
            table[g] = table[g + 1]
                .iter()
                .map(|&a| self.parents[g + 1][a as usize])
                .collect();
        }
        table
    }
}

fn sample_genealogy(off: &OffspringLaw, n: usize, mark_dim: usize, rng: &mut ChaCha8Rng) -> GenealogySample {
    let mut parents: Vec<Vec<u32>> = vec![Vec::new()];
    let mut positions: Vec<Vec<f64>> = vec![vec![0.0; mark_dim]];
    let mut alive = vec![1usize];
    let pois = Poisson::new(1.0).expect("unit mean is valid");
    let custom = match off {
        OffspringLaw::Custom { pmf } => Some(
            rand::distr::weighted::WeightedIndex::new(pmf.iter().copied())
                .expect("validated pmf"),
        ),
        _ => None,
    };
    let mut bits = BitBuffer::default();
    for g in 1..=n {
        let prev = alive[g - 1];
        let mut par = Vec::new();
        let mut pos = Vec::new();
        for i in 0..prev {
            let kids = match off {
                OffspringLaw::GeometricHalf => bits.geometric_half(rng),
                OffspringLaw::Poisson1 => pois.sample(rng) as u64,
                OffspringLaw::BinaryHalf => {
                    if rng.random::<bool>() {
                        2
                    } else {
                        0
                    }
                }
                OffspringLaw::Custom { .. } => {
                    custom.as_ref().unwrap().sample(rng) as u64
                }
            };
            for _ in 0..kids {
                par.push(i as u32);
                for d in 0..mark_dim {
                    let step: f64 = rng.sample(StandardNormal);
                    pos.push(positions[g - 1][i * mark_dim + d] + step);
                }
            }
        }
        alive.push(par.len());
        parents.push(par);
        positions.push(pos);
        if alive[g] == 0 {
            // Extinct: later generations are empty.
            for _ in (g + 1)..=n {
                alive.push(0);
                parents.push(Vec::new());
                positions.push(Vec::new());
            }
            break;
        }
    }
    GenealogySample {
        n,
        mark_dim,
        parents,
        positions,
        alive,
    }
}

/// Simulates one genealogy to generation `n` from the given seed.
pub fn simulate(off: &OffspringLaw, n: usize, mark_dim: usize, seed: u64) -> Result<GenealogySample> {
    off.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one generation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_genealogy(off, n, mark_dim, &mut rng))
}

/// Simulates independent replicates. Replicate `i` uses stream `i` of the
/// master seed, so results do not depend on thread count or scheduling.
pub fn simulate_replicates(
    off: &OffspringLaw,
    n: usize,
    mark_dim: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<GenealogySample>> {
    off.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one generation".into()));
    }
    Ok((0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample_genealogy(off, n, mark_dim, &mut rng)
        })
        .collect())
}

/// Scaling used when converting a genealogy into a space.
#[derive(Debug, Clone, Copy)]
pub struct MmmScaling {
    pub mass_divisor: f64,
    pub dist_divisor: f64,
    pub mark_divisor: f64,
}

impl MmmScaling {
    /// The convergence-theorem scaling for generation `n`: masses `1/n`,
    /// distances `1/n`, marks `1/sqrt(n)`.
    pub fn critical(n: usize) -> Self {
        MmmScaling {
            mass_divisor: n as f64,
            dist_divisor: n as f64,
            mark_divisor: (n as f64).sqrt(),
        }
    }
}

/// Converts the generation-`n` survivors into a marked metric measure
/// space under the given scaling. Atoms are survivors with equal weights;
/// the distance between two survivors is the number of generations back to
/// their common ancestor, divided by the distance divisor. Extinct
/// replicates give the null space. The output is always ultrametric.
pub fn to_mmm_scaled<T: Scalar>(sample: &GenealogySample, scaling: MmmScaling) -> FiniteMmmSpace<T> {
    let z = sample.survivors();
    let dim = sample.mark_dim;
    if z == 0 {
        return FiniteMmmSpace::zero(dim);
    }
    let n = sample.n;
    let table = sample.ancestor_table();
    let mut dist = vec![T::zero(); z * z];
    for u in 0..z {
        for v in (u + 1)..z {
            // Ancestors agree exactly up to the split generation, so the
            // largest generation with a shared ancestor is found by
            // bisection.
            let (mut lo, mut hi) = (0usize, n);
            while lo < hi {
                let mid = (lo + hi + 1) / 2;
                if table[mid][u] == table[mid][v] {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            let d = c::<T>((n - lo) as f64 / scaling.dist_divisor);
            dist[u * z + v] = d;
            dist[v * z + u] = d;
        }
    }
    let w = c::<T>(1.0 / scaling.mass_divisor);
    let weights = vec![w; z];
    let marks: Vec<T> = sample.positions[n]
        .iter()
        .map(|&p| c::<T>(p / scaling.mark_divisor))
        .collect();
    FiniteMmmSpace::new(dim, weights, marks, dist)
        .expect("genealogical distances are ultrametric")
}

/// [`to_mmm_scaled`] with the convergence-theorem scaling for the sample's
/// generation count.
pub fn to_mmm<T: Scalar>(sample: &GenealogySample) -> FiniteMmmSpace<T> {
    to_mmm_scaled(sample, MmmScaling::critical(sample.n))
}

/// Empirical law of the rescaled genealogy: `(n / replicates) * sum_i
/// delta(X_i)`, extinct replicates dropped with their weights recorded.
pub fn empirical_law<T: Scalar>(
    off: &OffspringLaw,
    n: usize,
    mark_dim: usize,
    replicates: usize,
    seed: u64,
) -> Result<EmpiricalLaw<T>> {
    if replicates == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    off.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one generation".into()));
    }
    let spaces: Vec<FiniteMmmSpace<T>> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            to_mmm(&sample_genealogy(off, n, mark_dim, &mut rng))
        })
        .collect();
    let scale = c::<T>(n as f64 / replicates as f64);
    EmpiricalLaw::new(
        scale,
        spaces
            .into_iter()
            .map(|s| (Arc::new(s), T::one()))
            .collect(),
    )
}

/// Tree approximation operators, applied as survivor selections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutoffKind {
    /// Keep every survivor when `Z_n >= theta * n`, otherwise none.
    MassFloor { theta: f64 },
    /// Keep survivors whose ancestor at generation `floor(n * (1 -
    /// delta))` is shared with at least one other survivor.
    ReducedTree { delta: f64 },
}

/// Indices of the survivors kept by the cutoff. Restricting the converted
/// space to these indices gives the approximating space.
pub fn cutoff(sample: &GenealogySample, kind: &CutoffKind) -> Vec<usize> {
    let z = sample.survivors();
    match kind {
        CutoffKind::MassFloor { theta } => {
            if z as f64 >= theta * sample.n as f64 {
                (0..z).collect()
            } else {
                Vec::new()
            }
        }
        CutoffKind::ReducedTree { delta } => {
            let g0 = ((sample.n as f64) * (1.0 - delta)).floor().max(0.0) as usize;
            let g0 = g0.min(sample.n);
            let anc: Vec<usize> = (0..z).map(|s| sample.ancestor(s, g0)).collect();
            let mut counts = std::collections::HashMap::new();
            for &a in &anc {
                *counts.entry(a).or_insert(0usize) += 1;
            }
            (0..z).filter(|&s| counts[&anc[s]] >= 2).collect()
        }
    }
}

/// Buffered fair bits; a geometric draw consumes on average two bits.
#[derive(Default)]
struct BitBuffer {
    word: u64,
    left: u32,
}

impl BitBuffer {
    /// One draw with `P(k) = (1/2)^(k+1)`: the run of ones before the
    /// first zero.
    fn geometric_half(&mut self, rng: &mut impl Rng) -> u64 {
        let mut ones = 0u64;
        loop {
            if self.left == 0 {
                self.word = rng.random();
                self.left = 64;
            }
            let run = self.word.trailing_ones().min(self.left);
            ones += run as u64;
            self.left -= run;
            self.word = self.word.wrapping_shr(run);
            if self.left > 0 {
                // The next bit is a zero terminating the run.
                self.word >>= 1;
                self.left -= 1;
                return ones;
            }
        }
    }

    /// Sum of `count` independent geometric draws: the ones seen before
    /// the `count`-th zero, consumed word by word via popcounts.
    fn negative_binomial_half(&mut self, rng: &mut impl Rng, count: u64) -> u64 {
        let mut zeros_needed = count;
        let mut ones = 0u64;
        loop {
            if self.left == 0 {
                self.word = rng.random();
                self.left = 64;
            }
            let avail = if self.left == 64 {
                self.word
            } else {
                self.word & ((1u64 << self.left) - 1)
            };
            let ones_in = avail.count_ones();
            let zeros_in = self.left - ones_in;
            if (zeros_in as u64) < zeros_needed {
                ones += ones_in as u64;
                zeros_needed -= zeros_in as u64;
                self.left = 0;
                continue;
            }
            // The final zero lands inside this word; scan bitwise.
            while zeros_needed > 0 {
                if self.word & 1 == 1 {
                    ones += 1;
                } else {
                    zeros_needed -= 1;
                }
                self.word >>= 1;
                self.left -= 1;
            }
            return ones;
        }
    }
}

/// Configuration for the streaming population-size run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZRunCfg {
    /// Generations at which to record statistics; strictly increasing.
    pub checkpoints: Vec<usize>,
    /// Absolute population thresholds tallied at every checkpoint.
    pub thresholds: Vec<u64>,
    pub replicates: u64,
    pub seed: u64,
}

/// Integer accumulators of population-size statistics at the checkpoints.
#[derive(Debug, Clone)]
pub struct ZStats {
    pub checkpoints: Vec<usize>,
    pub thresholds: Vec<u64>,
    pub replicates: u64,
    /// Replicates with `Z > 0`, per checkpoint.
    pub survivors: Vec<u64>,
    /// Sums of `Z^1 ..= Z^6`, per checkpoint.
    pub power_sums: Vec<[u128; 6]>,
    /// Replicates with `Z >= threshold`, per checkpoint and threshold.
    pub tail_counts: Vec<Vec<u64>>,
}

impl ZStats {
    fn zeroed(cfg: &ZRunCfg) -> Self {
        ZStats {
            checkpoints: cfg.checkpoints.clone(),
            thresholds: cfg.thresholds.clone(),
            replicates: 0,
            survivors: vec![0; cfg.checkpoints.len()],
            power_sums: vec![[0; 6]; cfg.checkpoints.len()],
            tail_counts: vec![vec![0; cfg.thresholds.len()]; cfg.checkpoints.len()],
        }
    }

    fn record(&mut self, ci: usize, z: u64) {
        if z == 0 {
            return;
        }
        self.survivors[ci] += 1;
        let mut p = 1u128;
        for slot in &mut self.power_sums[ci] {
            p = p.checked_mul(z as u128).expect("population power overflow");
            *slot += p;
        }
        for (ti, &t) in self.thresholds.iter().enumerate() {
            if z >= t {
                self.tail_counts[ci][ti] += 1;
            }
        }
    }

    fn merge(mut self, other: ZStats) -> ZStats {
        self.replicates += other.replicates;
        for (a, b) in self.survivors.iter_mut().zip(&other.survivors) {
            *a += b;
        }
        for (a, b) in self.power_sums.iter_mut().zip(&other.power_sums) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.tail_counts.iter_mut().zip(&other.tail_counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self
    }

    /// `(estimate, standard error)` of `P(Z > 0)` at checkpoint `ci`.
    pub fn survival_probability(&self, ci: usize) -> (f64, f64) {
        let r = self.replicates as f64;
        let p = self.survivors[ci] as f64 / r;
        (p, (p * (1.0 - p) / r).sqrt())
    }

    /// `(estimate, standard error)` of `P(Z >= thresholds[ti])`.
    pub fn tail_probability(&self, ci: usize, ti: usize) -> (f64, f64) {
        let r = self.replicates as f64;
        let p = self.tail_counts[ci][ti] as f64 / r;
        (p, (p * (1.0 - p) / r).sqrt())
    }

    /// `(estimate, standard error)` of the scaled mass moment `n^(1-k) *
    /// E[Z_n^k]` at checkpoint `ci`, for `k <= 3`.
    pub fn scaled_moment(&self, ci: usize, k: usize) -> (f64, f64) {
        assert!((1..=3).contains(&k), "moment order must be 1..=3");
        let r = self.replicates as f64;
        let n = self.checkpoints[ci] as f64;
        let s1 = self.power_sums[ci][k - 1] as f64;
        let s2 = self.power_sums[ci][2 * k - 1] as f64;
        let mean = s1 / r;
        let var = ((s2 - s1 * s1 / r) / (r - 1.0)).max(0.0);
        let a = n.powi(1 - k as i32);
        (a * mean, a * (var / r).sqrt())
    }
}

/// Streams `replicates` population-size walks and accumulates statistics
/// at the checkpoints. Deterministic for a given configuration regardless
/// of thread count: replicate `i` uses stream `i`, and all accumulators
/// are integers.
pub fn population_stats(off: &OffspringLaw, cfg: &ZRunCfg) -> Result<ZStats> {
    off.validate()?;
    if cfg.replicates == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    if cfg.checkpoints.is_empty() || cfg.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "checkpoints must be nonempty and strictly increasing".into(),
        ));
    }
    if cfg.checkpoints[0] == 0 {
        return Err(Error::InvalidConfig("checkpoints must be positive".into()));
    }
    let last = *cfg.checkpoints.last().unwrap();
    let chunk = 1usize << 14;
    let blocks = (cfg.replicates as usize).div_ceil(chunk);
    let stats = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b as u64 * chunk as u64;
            let hi = (lo + chunk as u64).min(cfg.replicates);
            let mut local = ZStats::zeroed(cfg);
            local.replicates = hi - lo;
            let custom = match off {
                OffspringLaw::Custom { pmf } => Some(
                    rand::distr::weighted::WeightedIndex::new(pmf.iter().copied())
                        .expect("validated pmf"),
                ),
                _ => None,
            };
            for rep in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(rep);
                let mut bits = BitBuffer::default();
                let mut z = 1u64;
                let mut ci = 0usize;
                for g in 1..=last {
                    z = match off {
                        OffspringLaw::GeometricHalf => {
                            bits.negative_binomial_half(&mut rng, z)
                        }
                        OffspringLaw::Poisson1 => {
                            let p = Poisson::new(z as f64).expect("positive mean");
                            p.sample(&mut rng) as u64
                        }
                        OffspringLaw::BinaryHalf => {
                            2 * Binomial::new(z, 0.5).expect("valid").sample(&mut rng)
                        }
                        OffspringLaw::Custom { .. } => {
                            let w = custom.as_ref().unwrap();
                            (0..z).map(|_| w.sample(&mut rng) as u64).sum()
                        }
                    };
                    while ci < cfg.checkpoints.len() && cfg.checkpoints[ci] == g {
                        local.record(ci, z);
                        ci += 1;
                    }
                    if z == 0 {
                        break;
                    }
                }
                // Extinct before the remaining checkpoints: zeros add
                // nothing, so nothing more to record.
            }
            local
        })
        .reduce(
            || {
                let mut s = ZStats::zeroed(cfg);
                s.replicates = 0;
                s
            },
            ZStats::merge,
        );
    Ok(stats)
}

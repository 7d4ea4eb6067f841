//! Deterministic parallel Monte Carlo plumbing.
//!
//! Trials are grouped into fixed-size blocks. Each block is reduced on whatever worker
//! picks it up, and block results are merged sequentially in index order, so the final
//! floating-point result does not depend on the number of threads.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::random_field::RandomSeed;

/// Trials per reduction block. Changing this changes summation order, hence the last bits.
pub const BLOCK_SIZE: u64 = 4096;

/// Streaming mean/variance accumulator (Welford, merged with Chan's formula).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: RunningStats) -> RunningStats {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.count as f64 * other.count as f64) / count as f64;
        RunningStats { count, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn standard_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn estimate(&self, seed: RandomSeed) -> McEstimate {
        McEstimate {
            mean: self.mean(),
            standard_error: self.standard_error(),
            n_samples: self.count,
            seed: seed.master(),
        }
    }
}

/// Monte Carlo estimate with its provenance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub n_samples: u64,
    pub seed: u64,
}

impl McEstimate {
    /// `|mean - reference|` measured in standard errors; infinite if SE is zero and they differ.
    pub fn z_score(&self, reference: f64) -> f64 {
        let gap = (self.mean - reference).abs();
        if gap == 0.0 {
            0.0
        } else if self.standard_error == 0.0 {
            f64::INFINITY
        } else {
            gap / self.standard_error
        }
    }

    pub fn within_sigmas(&self, reference: f64, sigmas: f64) -> bool {
        self.z_score(reference) <= sigmas
    }
}

/// Reduces `n` trials block by block; `per_block` sees the trial index range.
pub fn reduce_blocks<A, B, M>(n: u64, per_block: B, merge: M, identity: A) -> A
where
    A: Send,
    B: Fn(std::ops::Range<u64>) -> A + Sync,
    M: Fn(A, A) -> A,
{
    let blocks = n.div_ceil(BLOCK_SIZE);
    let partials: Vec<A> =
        (0..blocks).into_par_iter().map(|b| per_block(b * BLOCK_SIZE..((b + 1) * BLOCK_SIZE).min(n))).collect();
    partials.into_iter().fold(identity, merge)
}

/// Mean and standard error of `f(trial, rng)` over `n` independent trials.
pub fn estimate_mean<F>(n: u64, seed: RandomSeed, f: F) -> McEstimate
where
    F: Fn(u64, &mut ChaCha8Rng) -> f64 + Sync,
{
    let stats = reduce_blocks(
        n,
        |range| {
            let mut acc = RunningStats::default();
            for trial in range {
                let mut rng = seed.stream(trial);
                acc.push(f(trial, &mut rng));
            }
            acc
        },
        RunningStats::merge,
        RunningStats::default(),
    );
    stats.estimate(seed)
}

/// Per-trial outputs in trial order.
pub fn map_trials<T, F>(n: u64, seed: RandomSeed, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> T + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|trial| {
            let mut rng = seed.stream(trial);
            f(trial, &mut rng)
        })
        .collect()
}

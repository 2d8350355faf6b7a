//! Counter-based noise streams.
//!
//! Every random draw in the toolkit is a pure function of a key
//! `(seed, equation tag, particle index, step index, component)`, so results
//! are bit-identical regardless of scheduling or worker-thread count, and
//! paired runs can share increments exactly (common random numbers).

use serde::{Deserialize, Serialize};

/// Which noise stream a draw belongs to.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    SlowNoise = 1,
    FastNoise = 2,
    InitSlow = 3,
    InitFast = 4,
    FrozenNoise = 5,
    FrozenInit = 6,
    Mollify = 7,
    Probe = 8,
    Subsample = 9,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn mix(words: [u64; 5]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64; // pi fraction, arbitrary fixed IV
    for w in words {
        h = splitmix(h ^ w.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    h
}

#[inline]
fn to_unit(h: u64) -> f64 {
    // (0, 1]: avoids ln(0) in Box-Muller.
    (((h >> 11) as f64) + 1.0) * (1.0 / 9_007_199_254_740_992.0)
}

/// Collapses arbitrary words into one stream identifier; used to key noise
/// streams on intrinsic data (e.g. atom coordinates) rather than positions.
pub fn key_hash(words: &[u64]) -> u64 {
    let mut h = 0x452a_f09b_dd4a_b9b3u64;
    for &w in words {
        h = splitmix(h ^ w.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    h
}

/// One standard normal draw for the given key.
#[inline]
pub fn normal(seed: u64, tag: StreamTag, particle: u64, step: u64, component: u64) -> f64 {
    let base = mix([seed, tag as u64, particle, step, component]);
    let u1 = to_unit(splitmix(base ^ 0x5555_5555_5555_5555));
    let u2 = to_unit(splitmix(base ^ 0xaaaa_aaaa_aaaa_aaaa));
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One uniform draw in [0, 1) for the given key.
#[inline]
pub fn uniform(seed: u64, tag: StreamTag, particle: u64, step: u64, component: u64) -> f64 {
    let h = mix([seed, tag as u64, particle, step, component]);
    ((h >> 11) as f64) * (1.0 / 9_007_199_254_740_992.0)
}

/// Per-coordinate initial samplers for the slow and fast initial conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SamplerSpec {
    Point { v: f64 },
    Gauss { mean: f64, sd: f64 },
    Uniform { a: f64, b: f64 },
    /// Equal-weight atoms; particle i starts at atoms[i % len].
    Atoms { atoms: Vec<f64> },
}

impl SamplerSpec {
    pub fn gauss(mean: f64, sd: f64) -> Self {
        SamplerSpec::Gauss { mean, sd }
    }

    pub fn point(v: f64) -> Self {
        SamplerSpec::Point { v }
    }

    /// Sample one coordinate for particle `particle`, component `component`.
    pub fn sample(&self, seed: u64, tag: StreamTag, particle: u64, component: u64) -> f64 {
        match self {
            SamplerSpec::Point { v } => *v,
            SamplerSpec::Gauss { mean, sd } => {
                mean + sd * normal(seed, tag, particle, 0, component)
            }
            SamplerSpec::Uniform { a, b } => {
                a + (b - a) * uniform(seed, tag, particle, 0, component)
            }
            SamplerSpec::Atoms { atoms } => atoms[(particle as usize) % atoms.len()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_is_deterministic() {
        let a = normal(7, StreamTag::FastNoise, 3, 100, 0);
        let b = normal(7, StreamTag::FastNoise, 3, 100, 0);
        assert_eq!(a.to_bits(), b.to_bits());
        let c = normal(7, StreamTag::FastNoise, 3, 101, 0);
        assert_ne!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn normal_moments() {
        let n = 200_000u64;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for i in 0..n {
            let z = normal(1, StreamTag::Probe, i, 0, 0);
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn streams_are_decorrelated() {
        let n = 100_000u64;
        let mut dot = 0.0;
        for i in 0..n {
            dot += normal(1, StreamTag::SlowNoise, i, 5, 0) * normal(1, StreamTag::FastNoise, i, 5, 0);
        }
        assert!((dot / n as f64).abs() < 0.02);
    }
}

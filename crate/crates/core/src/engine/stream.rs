//! Counter-addressed randomness.
//!
//! Every random quantity in a run is a pure function of a [`NoiseStreamKey`]:
//! the key is hashed into a 64-bit state and the `i`-th draw of the stream is
//! a SplitMix64 finalization of `state + (i + 1) * GOLDEN`. Identical keys give
//! identical draws no matter which thread asks or in which order, so a
//! bootstrap replicate can replay the base run's data without storing it.

use rand::RngCore;
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline(always)]
fn absorb(state: u64, word: u64) -> u64 {
    mix64(state.wrapping_add(GOLDEN) ^ mix64(word.wrapping_add(GOLDEN)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Data,
    BootstrapWeight,
    EnvGeneration,
}

impl Channel {
    fn tag(self) -> u64 {
        match self {
            Channel::Data => 0x6461_7461,
            Channel::BootstrapWeight => 0x7765_6967,
            Channel::EnvGeneration => 0x656e_7667,
        }
    }
}

/// Address of one independent random stream.
///
/// `replicate` salts bootstrap-weight streams per replicate; it is zero on
/// the data channel so every replicate sees the same data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NoiseStreamKey {
    pub seed: u64,
    pub round: u64,
    pub step: u64,
    pub agent: u64,
    pub channel: Channel,
    pub replicate: u64,
}

impl NoiseStreamKey {
    pub fn data(seed: u64, round: usize, step: usize, agent: usize) -> Self {
        NoiseStreamKey {
            seed,
            round: round as u64,
            step: step as u64,
            agent: agent as u64,
            channel: Channel::Data,
            replicate: 0,
        }
    }

    pub fn weight(seed: u64, round: usize, step: usize, agent: usize, replicate: usize) -> Self {
        NoiseStreamKey {
            seed,
            round: round as u64,
            step: step as u64,
            agent: agent as u64,
            channel: Channel::BootstrapWeight,
            replicate: replicate as u64,
        }
    }

    /// Environment-generation streams are addressed by a free-form label in
    /// the `step` slot and an index in the `agent` slot.
    pub fn env(seed: u64, label: u64, index: usize) -> Self {
        NoiseStreamKey {
            seed,
            round: 0,
            step: label,
            agent: index as u64,
            channel: Channel::EnvGeneration,
            replicate: 0,
        }
    }

    #[inline]
    pub fn hash(&self) -> u64 {
        absorb(self.hash_prefix(), self.replicate)
    }

    #[inline]
    fn hash_prefix(&self) -> u64 {
        let mut h = mix64(self.seed ^ 0x5851_F42D_4C95_7F2D);
        h = absorb(h, self.channel.tag());
        h = absorb(h, self.round);
        h = absorb(h, self.step);
        absorb(h, self.agent)
    }

    #[inline]
    pub fn stream(&self) -> CounterStream {
        CounterStream {
            state: self.hash(),
            counter: 0,
        }
    }

    /// First uniform of the stream, in (0, 1).
    #[inline]
    pub fn uniform(&self) -> f64 {
        self.stream().next_uniform()
    }
}

/// Derives a child seed from a parent seed and a label; used to split one
/// experiment seed into per-trajectory data and weight seeds.
pub fn derive_seed(parent: u64, label: u64, index: u64) -> u64 {
    absorb(absorb(mix64(parent), label), index)
}

/// Hash state shared by the weight keys of every replicate at one
/// `(seed, round, step, agent)`; only the replicate index is left to absorb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightKeyPrefix(u64);

impl WeightKeyPrefix {
    pub fn new(seed: u64, round: usize, step: usize, agent: usize) -> Self {
        WeightKeyPrefix(NoiseStreamKey::weight(seed, round, step, agent, 0).hash_prefix())
    }

    /// Same value as `NoiseStreamKey::weight(.., replicate).uniform()`.
    #[inline]
    pub fn uniform(self, replicate: usize) -> f64 {
        CounterStream {
            state: absorb(self.0, replicate as u64),
            counter: 0,
        }
        .next_uniform()
    }
}

#[derive(Debug, Clone)]
pub struct CounterStream {
    state: u64,
    counter: u64,
}

impl CounterStream {
    #[inline(always)]
    pub fn next_word(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.state.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on the open interval (0, 1) with 53 bits of resolution.
    #[inline(always)]
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_word() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Hash identifying the stream, used for draw logging.
    pub fn fingerprint(&self) -> u64 {
        mix64(self.state)
    }
}

impl RngCore for CounterStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let w = self.next_word().to_le_bytes();
            chunk.copy_from_slice(&w[..chunk.len()]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn identical_keys_identical_draws() {
        let k = NoiseStreamKey::data(7, 3, 2, 1);
        let a: Vec<u64> = (0..4).scan(k.stream(), |s, _| Some(s.next_word())).collect();
        let b: Vec<u64> = (0..4).scan(k.stream(), |s, _| Some(s.next_word())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn key_fields_all_matter() {
        let base = NoiseStreamKey::data(7, 3, 2, 1);
        let variants = [
            base,
            NoiseStreamKey { seed: 8, ..base },
            NoiseStreamKey { round: 4, ..base },
            NoiseStreamKey { step: 3, ..base },
            NoiseStreamKey { agent: 2, ..base },
            NoiseStreamKey { channel: Channel::BootstrapWeight, ..base },
            NoiseStreamKey { replicate: 1, ..base },
        ];
        let hashes: HashSet<u64> = variants.iter().map(NoiseStreamKey::hash).collect();
        assert_eq!(hashes.len(), variants.len());
    }

    #[test]
    fn uniforms_look_uniform() {
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let u = NoiseStreamKey::data(1, i, 0, 0).uniform();
            assert!(u > 0.0 && u < 1.0);
            sum += u;
            sum_sq += u * u;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 4.0 * (1.0f64 / 12.0 / n as f64).sqrt());
        assert!((var - 1.0 / 12.0).abs() < 1e-3);
    }

    #[test]
    fn adjacent_keys_uncorrelated() {
        let n = 100_000;
        let mut cross = 0.0;
        for i in 0..n {
            let a = NoiseStreamKey::data(5, i, 0, 0).uniform() - 0.5;
            let b = NoiseStreamKey::data(5, i, 1, 0).uniform() - 0.5;
            cross += a * b;
        }
        // sd of the mean product is 1/12/sqrt(n)
        assert!((cross / n as f64).abs() < 5.0 / 12.0 / (n as f64).sqrt());
    }

    #[test]
    fn weight_prefix_matches_full_key() {
        for b in 0..50 {
            let p = WeightKeyPrefix::new(9, 17, 3, 2);
            assert_eq!(p.uniform(b).to_bits(), NoiseStreamKey::weight(9, 17, 3, 2, b).uniform().to_bits());
        }
    }
}

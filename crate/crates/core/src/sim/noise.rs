use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::llrp::ReadEvent;

/// Per-read RF imperfections: missed reads, duplicate reads, RSSI jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub drop_probability: f64,
    pub duplicate_probability: f64,
    pub rssi_mean_dbm: i8,
    pub rssi_jitter_db: f64,
    pub rng_seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { drop_probability: 0.0, duplicate_probability: 0.0, rssi_mean_dbm: -60, rssi_jitter_db: 0.0, rng_seed: 0 }
    }
}

/// ChaCha words reserved per read; each read draws at most three f64s.
const WORDS_PER_READ: u128 = 16;

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(SimError::Validation(format!("noise.{name} must be within [0,1], got {p}")))
            }
        };
        prob("drop_probability", self.drop_probability)?;
        prob("duplicate_probability", self.duplicate_probability)?;
        if !(self.rssi_jitter_db >= 0.0 && self.rssi_jitter_db.is_finite()) {
            return Err(SimError::Validation(format!("noise.rssi_jitter_db must be >= 0, got {}", self.rssi_jitter_db)));
        }
        Ok(())
    }

    pub fn is_lossless(&self) -> bool {
        self.drop_probability == 0.0 && self.duplicate_probability == 0.0
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

/// Counter-based draw stream for one read: keyed by seed, the ChaCha stream
/// selects the cycle and the word position selects the read, so any
/// (cycle, read) pair can be replayed in isolation.
fn read_rng(seed: u64, cycle_index: u64, read_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cycle_index);
    rng.set_word_pos(read_index as u128 * WORDS_PER_READ);
    rng
}

pub fn apply_noise(reads: &[ReadEvent], noise: &NoiseModel, cycle_index: u64) -> Vec<ReadEvent> {
    let mut out = Vec::with_capacity(reads.len());
    for (i, read) in reads.iter().enumerate() {
        let mut rng = read_rng(noise.rng_seed, cycle_index, i);
        let drop_draw: f64 = rng.gen();
        let dup_draw: f64 = rng.gen();
        let jitter_draw: f64 = rng.gen();
        if drop_draw < noise.drop_probability {
            continue;
        }
        let mut r = read.clone();
        if noise.rssi_jitter_db > 0.0 {
            let jitter = (jitter_draw * 2.0 - 1.0) * noise.rssi_jitter_db;
            r.peak_rssi = (f64::from(r.peak_rssi) + jitter).round().clamp(-128.0, 127.0) as i8;
        }
        if dup_draw < noise.duplicate_probability {
            let mut dup = r.clone();
            dup.seen_count = dup.seen_count.saturating_add(1);
            out.push(r);
            out.push(dup);
        } else {
            out.push(r);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reads(n: usize) -> Vec<ReadEvent> {
        (0..n)
            .map(|i| ReadEvent {
                epc: vec![i as u8; 12],
                data_point_id: Some("DP2".into()),
                antenna_id: 1,
                first_seen_utc_us: 1_000,
                peak_rssi: -60,
                seen_count: 1,
            })
            .collect()
    }

    #[test]
    fn identity_noise() {
        let input = reads(20);
        assert_eq!(apply_noise(&input, &NoiseModel::default(), 3), input);
    }

    #[test]
    fn full_drop() {
        let noise = NoiseModel { drop_probability: 1.0, ..Default::default() };
        assert!(apply_noise(&reads(50), &noise, 0).is_empty());
    }

    #[test]
    fn replay_is_exact_and_per_cycle() {
        let noise = NoiseModel { drop_probability: 0.3, duplicate_probability: 0.3, rssi_jitter_db: 4.0, rng_seed: 42, ..Default::default() };
        let input = reads(200);
        let a = apply_noise(&input, &noise, 7);
        assert_eq!(a, apply_noise(&input, &noise, 7));
        assert_ne!(a, apply_noise(&input, &noise, 8));
        assert!(a.iter().all(|r| (-64..=-56).contains(&r.peak_rssi)));
        assert!(a.iter().any(|r| r.seen_count == 2));
        assert!(a.len() != input.len());
    }

    #[test]
    fn read_draws_do_not_depend_on_list_length() {
        let noise = NoiseModel { drop_probability: 0.5, rng_seed: 9, ..Default::default() };
        let long = apply_noise(&reads(30), &noise, 1);
        let short = apply_noise(&reads(10), &noise, 1);
        let prefix: Vec<_> = long.into_iter().filter(|r| r.epc[0] < 10).collect();
        assert_eq!(prefix, short);
    }

    #[test]
    fn drop_rate_is_roughly_honoured() {
        let noise = NoiseModel { drop_probability: 0.1, rng_seed: 1, ..Default::default() };
        let kept: usize = (0..100).map(|c| apply_noise(&reads(100), &noise, c).len()).sum();
        let rate = 1.0 - kept as f64 / 10_000.0;
        assert!((0.08..0.12).contains(&rate), "drop rate {rate}");
    }

    #[test]
    fn probabilities_validated() {
        assert!(NoiseModel { drop_probability: 1.5, ..Default::default() }.validate().is_err());
        assert!(NoiseModel { rssi_jitter_db: -1.0, ..Default::default() }.validate().is_err());
    }
}

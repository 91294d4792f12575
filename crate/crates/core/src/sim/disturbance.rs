//! Disturbance sequences of the case study.
//!
//! The random tail draws one uniform scalar per step and subsystem from a
//! ChaCha8 stream. Each draw sits at a fixed position of the stream, so any
//! step can be evaluated on its own.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cstr::DISTURBANCE_BOUND;

pub const DEFAULT_SEED: u64 = 42;
/// Last step of the zero-disturbance lead-in.
pub const QUIET_UNTIL: usize = 8;
pub const FIRST_SEGMENT_END: usize = 100;
pub const SECOND_SEGMENT_END: usize = 125;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    #[default]
    Zero,
    /// piecewise table with a random tail
    Tabulated,
}

/// Uniform draw in `[0, 1)` for step `k`, subsystem `i`.
pub fn uniform_draw(seed: u64, k: usize, i: usize, subsystems: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // two 32-bit words per draw
    rng.set_word_pos(2 * (k as u128 * subsystems as u128 + i as u128));
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `w^i(k)` for every subsystem.
pub fn disturbance_schedule(kind: DisturbanceKind, k: usize, seed: u64, subsystems: usize) -> Vec<[f64; 2]> {
    let [a, b] = DISTURBANCE_BOUND;
    (0..subsystems)
        .map(|i| match kind {
            DisturbanceKind::Zero => [0.0, 0.0],
            DisturbanceKind::Tabulated => {
                if k <= QUIET_UNTIL {
                    [0.0, 0.0]
                } else if k <= FIRST_SEGMENT_END {
                    [-a, b]
                } else if k <= SECOND_SEGMENT_END {
                    [a, -b]
                } else {
                    let r = uniform_draw(seed, k, i, subsystems);
                    [a * r, b * r]
                }
            }
        })
        .collect()
}

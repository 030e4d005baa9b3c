//! Deterministic random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream derived
//! from one 64-bit seed. The seed selects the key; a [`Domain`] tag and an
//! index (packet number, chunk number, ...) select the stream, so work can be
//! split across threads without changing any drawn value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent consumers of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Schedule = 1,
    Payload = 2,
    Transmitter = 3,
    ReceiverNoise1 = 4,
    ReceiverNoise2 = 5,
    CarrierPhase = 6,
    ClockWalk1 = 7,
    ClockWalk2 = 8,
    Bootstrap = 9,
    Scratch = 10,
}

impl Domain {
    pub fn receiver_noise(receiver: usize) -> Self {
        match receiver {
            0 => Domain::ReceiverNoise1,
            _ => Domain::ReceiverNoise2,
        }
    }

    pub fn clock_walk(receiver: usize) -> Self {
        match receiver {
            0 => Domain::ClockWalk1,
            _ => Domain::ClockWalk2,
        }
    }
}

/// Stream `index` of `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (domain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

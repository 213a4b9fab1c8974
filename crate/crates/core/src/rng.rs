//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream addressed by
//! `(seed, domain, lane)`. The address is packed verbatim into a ChaCha20
//! key, so distinct addresses give independent streams and the same address
//! always replays the same draws. Clients never share a sequential generator.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// What a stream is used for. Keeps e.g. problem generation and gradient
/// noise from ever colliding under the same seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Gradient,
    Problem,
    Partition,
    Init,
    Probe,
    Harness,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Gradient => 1,
            Domain::Problem => 2,
            Domain::Partition => 3,
            Domain::Init => 4,
            Domain::Probe => 5,
            Domain::Harness => 6,
        }
    }
}

/// Position of a draw in the protocol: client `i`, round `t`, local step `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Lane {
    pub round: u32,
    pub client: u32,
    pub step: u32,
}

impl Lane {
    pub fn new(client: usize, round: usize, step: usize) -> Self {
        Lane {
            round: round as u32,
            client: client as u32,
            step: step as u32,
        }
    }
}

/// A reproducible random stream; the ChaCha block counter plays the role of
/// the per-lane draw counter.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    domain: Domain,
    lane: Lane,
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, domain: Domain, lane: Lane) -> Self {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&domain.tag().to_le_bytes());
        key[16..20].copy_from_slice(&lane.round.to_le_bytes());
        key[20..24].copy_from_slice(&lane.client.to_le_bytes());
        key[24..28].copy_from_slice(&lane.step.to_le_bytes());
        RngStream {
            seed,
            domain,
            lane,
            inner: ChaCha20Rng::from_seed(key),
        }
    }

    /// Stream for a single index in a domain (lane `(i, 0, 0)`).
    pub fn indexed(seed: u64, domain: Domain, index: usize) -> Self {
        Self::new(seed, domain, Lane::new(index, 0, 0))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn lane(&self) -> Lane {
        self.lane
    }

    /// Number of 32-bit words consumed so far.
    pub fn draws(&self) -> u128 {
        self.inner.get_word_pos()
    }
}

impl RngStream {
    pub fn standard_normal(&mut self) -> f64 {
        rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, self)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

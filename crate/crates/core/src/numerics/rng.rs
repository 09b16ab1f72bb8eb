use rand::{seq::index, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NumericsError;

/// A seeded, counter-based random stream.
///
/// Streams are addressed by `(master_seed, stream_id)`: the same pair always
/// yields the same sequence, so replicate `i` of an experiment can use stream
/// `i` no matter which thread runs it or in what order.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh child stream keyed by this stream's address and `label`.
    ///
    /// Independent of how much of the parent has been consumed.
    pub fn derive(&self, label: u64) -> RngStream {
        let seed = splitmix64(self.master_seed ^ splitmix64(self.stream_id.wrapping_add(0xA076_1D64_78BD_642F)));
        RngStream::new(seed, label)
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

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `m` distinct indices drawn uniformly from `0..n`.
pub fn sample_index_without_replacement(
    n: usize,
    m: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>, NumericsError> {
    if m > n {
        return Err(NumericsError::SampleTooLarge { n, m });
    }
    if m == 0 {
        return Err(NumericsError::InvalidParameter(
            "sample size must be at least 1".into(),
        ));
    }
    Ok(index::sample(rng, n, m).into_vec())
}

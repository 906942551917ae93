//! Random-variate generators and densities used by the sampler.
//!
//! Everything here draws from a caller-supplied [`rand::Rng`]; chains use
//! [`ChainRng`] and derive per-individual streams with [`stream_rng`].

mod ks;
pub mod quad;
mod truncnorm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

pub use ks::{ks_cdf, ks_density, logistic_density, logistic_mixture_density, sample_ks};
pub use truncnorm::{sample_truncated_normal, Side};

/// Counter-based generator owned by one chain (or one stream of a chain).
pub type ChainRng = ChaCha8Rng;

/// Stream id reserved for draws that are not tied to an individual.
pub const GLOBAL_STREAM: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, sweep, stream)`.
///
/// The key comes from `seed`, the ChaCha stream id from a hash of
/// `(sweep, stream)`, so results never depend on how work is scheduled.
pub fn stream_rng(seed: u64, sweep: u64, stream: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64(splitmix64(sweep) ^ stream.rotate_left(17)));
    rng
}

/// Draw from Gamma(shape, rate), mean `shape / rate`.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma shape must be positive, got {shape}")));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma rate must be positive, got {rate}")));
    }
    let gamma = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::InvalidArgument(format!("gamma({shape}, {rate}): {e}")))?;
    Ok(gamma.sample(rng))
}

/// Standard normal draw.
#[inline]
pub fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn sample_open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::Open01.sample(rng)
}

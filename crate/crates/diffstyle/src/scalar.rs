//! The floating-point element type used by model tensors.
//!
//! Production code instantiates everything at `f32` (checkpoints are 32-bit
//! and training throughput roughly doubles); gradient checking instantiates
//! the very same code at `f64` so finite differences have headroom.

use ndarray::NdFloat;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Element type for embeddings, activations and parameters.
///
/// `NdFloat` already gives arithmetic, `dot`, and scalar broadcasting; this
/// trait adds the two pieces `ndarray` cannot know about: drawing standard
/// normals and converting through `f64`/`f32` for schedules and checkpoints.
pub trait Scalar: NdFloat {
    /// One standard-normal draw.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossless widening (both implementors fit in an `f64`).
    fn into_f64(self) -> f64;

    /// Narrowing from `f64`. Rounds to nearest; used for schedule
    /// coefficients and config constants, never for round trips.
    fn from_f64(x: f64) -> Self;

    /// Narrowing to the checkpoint payload type.
    fn into_f32(self) -> f32;

    /// Widening from the checkpoint payload type (exact for `f32` and `f64`).
    fn from_f32(x: f32) -> Self;
}

impl Scalar for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn into_f32(self) -> f32 {
        self
    }
    fn from_f32(x: f32) -> Self {
        x
    }
}

impl Scalar for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn into_f64(self) -> f64 {
        self
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn into_f32(self) -> f32 {
        self as f32
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normal_draws_match_distribution_type() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: f64 = Scalar::standard_normal(&mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b: f64 = StandardNormal.sample(&mut rng);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn f32_round_trips_through_f64() {
        for x in [0.0f32, -1.5, 3.25e-7, f32::MAX] {
            assert_eq!(f32::from_f64(x.into_f64()).to_bits(), x.to_bits());
        }
    }
}

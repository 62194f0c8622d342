//! Inputs shared by the benchmarks in `benches/`.

use cloakvit_core::permkey::SplitMix64;
use cloakvit_core::Image;

/// A deterministic noise image.
pub fn noise_image(size: usize, seed: u64) -> Image {
    let mut rng = SplitMix64::new(seed);
    Image::from_fn(size, size, 3, |_, _, _| (rng.next_u64() >> 56) as u8).expect("valid dimensions")
}

//! Keyed permutation derivation.
//!
//! All permutations in this crate use *gather* semantics: applying `p` to
//! `xs` yields `out[i] = xs[p[i]]`. Image encryption and model
//! transformation both rely on this convention, so it is fixed here and
//! nowhere else.
//!
//! Key layout (32 octets):
//!
//! | bytes   | use                                   |
//! |---------|---------------------------------------|
//! | 0..8    | pixel-shuffle stream seed (LE u64)    |
//! | 8..16   | block-scramble stream seed (LE u64)   |
//! | 16..24  | pixel-based baseline keystream seed   |
//! | 24..32  | reserved                              |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const KEY_LEN: usize = 32;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// 256-bit secret key shared between model developer and image owner.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SecretKey([u8; KEY_LEN]);

impl SecretKey {
    pub const fn from_array(bytes: [u8; KEY_LEN]) -> Self {
        SecretKey(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; KEY_LEN] = bytes.try_into().map_err(|_| {
            Error::KeyFormat(format!("expected {KEY_LEN} bytes, got {}", bytes.len()))
        })?;
        Ok(SecretKey(arr))
    }

    /// Parses 64 hex characters. A single trailing newline is tolerated so
    /// that key files can be fed in verbatim.
    pub fn from_hex(text: &str) -> Result<Self> {
        let trimmed = text
            .strip_suffix('\n')
            .map(|t| t.strip_suffix('\r').unwrap_or(t))
            .unwrap_or(text);
        if trimmed.len() != 2 * KEY_LEN {
            return Err(Error::KeyFormat(format!(
                "expected {} hex characters, got {}",
                2 * KEY_LEN,
                trimmed.len()
            )));
        }
        let bytes = hex::decode(trimmed).map_err(|e| Error::KeyFormat(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_hex(&text)
    }

    /// Key-file body: the hex string plus a trailing newline.
    pub fn to_file_contents(&self) -> String {
        format!("{}\n", self.to_hex())
    }

    /// Deterministic key from a 64-bit seed, for reproducible tests and
    /// `keygen --seed`.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut bytes = [0u8; KEY_LEN];
        for chunk in bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&rng.next_u64().to_le_bytes());
        }
        SecretKey(bytes)
    }

    fn le_word(&self, offset: usize) -> u64 {
        let mut word = [0u8; 8];
        word.copy_from_slice(&self.0[offset..offset + 8]);
        u64::from_le_bytes(word)
    }

    /// Seed of the keystream used by the pixel-based baseline scheme.
    pub fn pixel_based_seed(&self) -> StreamSeed {
        StreamSeed(self.le_word(16))
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl FromStr for SecretKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_hex(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamSeed(pub u64);

/// Seeds for the two ViT encryption streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamSeeds {
    pub pixel: StreamSeed,
    pub block: StreamSeed,
}

pub fn derive_seeds(key: &SecretKey) -> StreamSeeds {
    StreamSeeds {
        pixel: StreamSeed(key.le_word(0)),
        block: StreamSeed(key.le_word(8)),
    }
}

/// One SplitMix64 step: returns `(next_state, output)`.
#[inline]
pub fn splitmix64_next(state: u64) -> (u64, u64) {
    let next = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = next;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (next, z ^ (z >> 31))
}

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let (next, out) = splitmix64_next(self.state);
        self.state = next;
        out
    }

    /// Uniform integer in `[0, bound)` by rejection sampling.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        // 2^64 - (2^64 mod bound), computed without 128-bit arithmetic.
        // When bound is a power of two the zone covers everything.
        let rem = (u64::MAX % bound + 1) % bound;
        loop {
            let r = self.next_u64();
            if rem == 0 || r < rem.wrapping_neg() {
                return r % bound;
            }
        }
    }

    /// Uniform float in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// A bijection on `0..n` stored as a gather table.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        if map.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidPermutation(format!(
                    "index {m} is out of range or repeated (n = {})",
                    map.len()
                )));
            }
        }
        Ok(Permutation { map })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            map: (0..n).collect(),
        }
    }

    /// Fisher-Yates over the identity array, driven by SplitMix64.
    pub fn generate(seed: StreamSeed, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDomain);
        }
        let mut rng = SplitMix64::new(seed.0);
        let mut map: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.next_below(i as u64 + 1) as usize;
            map.swap(i, j);
        }
        Ok(Permutation { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Permutation { map: inv }
    }

    /// Permutation equivalent to applying `inner` first and then `self`.
    pub fn compose(&self, inner: &Permutation) -> Result<Self> {
        if self.len() != inner.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: inner.len(),
            });
        }
        Ok(Permutation {
            map: self.map.iter().map(|&i| inner.map[i]).collect(),
        })
    }

    pub fn apply<T: Clone>(&self, xs: &[T]) -> Result<Vec<T>> {
        self.check_len(xs.len())?;
        Ok(self.map.iter().map(|&i| xs[i].clone()).collect())
    }

    /// Gathers `src` into `dst`; both must have the permutation's length.
    pub fn apply_into<T: Copy>(&self, src: &[T], dst: &mut [T]) -> Result<()> {
        self.check_len(src.len())?;
        self.check_len(dst.len())?;
        for (d, &i) in dst.iter_mut().zip(&self.map) {
            *d = src[i];
        }
        Ok(())
    }

    /// Lifts a permutation of `n` positions to one over `n * width`
    /// interleaved scalars, moving each group of `width` as a unit.
    pub fn expand_interleaved(&self, width: usize) -> Self {
        let map = self
            .map
            .iter()
            .flat_map(|&m| (0..width).map(move |k| m * width + k))
            .collect();
        Permutation { map }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.map.len() {
            return Err(Error::LengthMismatch {
                expected: self.map.len(),
                actual: len,
            });
        }
        Ok(())
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Permutation").field(&self.map).finish()
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Permutation::new(map)
    }
}

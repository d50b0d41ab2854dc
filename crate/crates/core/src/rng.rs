//! Deterministic, splittable random streams.
//!
//! The generator is SplitMix64 written in counter form: a stream is a
//! 64-bit `key` and a draw counter, and the `k`-th output is
//! `mix64(key + k * 0x9E3779B97F4A7C15)` with the standard SplitMix64
//! finalizer. Seeding a reference SplitMix64 implementation with `key`
//! yields the same sequence, so any language can reproduce a stream from
//! its seed alone.
//!
//! Every sampler consumes exactly one 64-bit output per variate:
//!
//! * uniforms use the top 53 bits, `(x >> 11) * 2^-53`, in `[0, 1)`;
//! * Bernoulli draws compare one uniform against `p`;
//! * Gaussians push the open-interval uniform `((x >> 11) + 0.5) * 2^-53`
//!   through Wichura's AS241 inverse normal CDF (relative error ~1e-16).
//!
//! Replicate streams come from [`derive_substream`], which hashes
//! `(master_seed, replicate_index, role_tag)` with three rounds of the
//! finalizer:
//!
//! ```text
//! key = mix64(mix64(mix64(master) + index * GAMMA) + role * ROLE_MULT)
//! ```
//!
//! Golden values for seed 42 (first three uniforms) are pinned in the unit
//! tests below and listed in the README.

use crate::error::{Error, Result};

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const ROLE_MULT: u64 = 0xD1B5_4A32_D192_ED03;
const TAG_MULT: u64 = 0xBF58_476D_1CE4_E5B9;
const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 output finalizer (a bijection on `u64`).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngState {
    key: u64,
    counter: u64,
}

impl RngState {
    pub fn from_seed(seed: u64) -> Self {
        RngState { key: seed, counter: 0 }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Number of 64-bit outputs drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * INV_2_53
    }

    /// Uniform in the open interval `(0, 1)`.
    #[inline]
    fn next_open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * INV_2_53
    }

    /// Returns 1 with probability `p`.
    pub fn sample_bernoulli(&mut self, p: f64) -> Result<u8> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("Bernoulli probability {p} outside [0, 1]")));
        }
        Ok(u8::from(self.next_uniform() < p))
    }

    /// Standard normal variate by inversion.
    pub fn sample_gaussian(&mut self) -> f64 {
        inverse_normal_cdf(self.next_open_uniform())
    }

    /// Uniform integer in `0..n` (multiply-shift; bias below 2^-40 for the
    /// sizes used here).
    pub fn uniform_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle, swapping from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_index(i + 1);
            items.swap(i, j);
        }
    }

    /// Child stream keyed on `(self.key, tag)`. Pure: does not advance
    /// `self`, and ignores its counter.
    pub fn substream(&self, tag: u64) -> RngState {
        RngState::from_seed(mix64(
            mix64(self.key ^ GOLDEN_GAMMA).wrapping_add(tag.wrapping_mul(TAG_MULT)),
        ))
    }

    /// Draws one output and uses it as the key of a fresh stream.
    pub fn split(&mut self) -> RngState {
        let k = self.next_u64();
        RngState::from_seed(mix64(k ^ ROLE_MULT))
    }
}

/// Stream for `(master_seed, replicate_index, role_tag)`.
pub fn derive_substream(master_seed: u64, replicate_index: u64, role_tag: u64) -> RngState {
    let k = mix64(mix64(master_seed).wrapping_add(replicate_index.wrapping_mul(GOLDEN_GAMMA)));
    RngState::from_seed(mix64(k.wrapping_add(role_tag.wrapping_mul(ROLE_MULT))))
}

/// Wichura's AS241 (PPND16) inverse of the standard normal CDF.
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_6,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_854_5e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_88e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];

    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

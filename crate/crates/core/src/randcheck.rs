//! Smoke-level randomness checks over streams of generated codes.
//!
//! Two tests from the NIST SP 800-22 family: frequency (monobit) and the
//! serial test with 2-bit patterns. Both use significance 0.01. This is not
//! a certification suite; a single failing stream is statistically possible.

use statrs::function::erf::erfc;
use thiserror::Error;

use crate::codes::{CodeError, Codebook, IndexMac};
use crate::feistel::RoundFunctions;
use crate::scheme::SchemeParams;

pub const SIGNIFICANCE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RandError {
    #[error("need at least {needed} bits, got {got}")]
    TooFewBits { needed: usize, got: usize },
    #[error("word width {0} is outside 1..=128")]
    Width(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitStream {
    bits: Vec<bool>,
}

impl BitStream {
    pub fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        Self {
            bits: bits.into_iter().collect(),
        }
    }

    /// Each value written as a `width`-bit big-endian word.
    pub fn from_words(
        values: impl IntoIterator<Item = u128>,
        width: u32,
    ) -> Result<Self, RandError> {
        if !(1..=128).contains(&width) {
            return Err(RandError::Width(width));
        }
        let mut bits = Vec::new();
        for v in values {
            bits.extend((0..width).rev().map(|b| (v >> b) & 1 == 1));
        }
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// `⌈log₂ A^(λ+ω)⌉`, the width code values are serialized at.
pub fn code_word_width(params: &SchemeParams) -> u32 {
    let space = params.code_space().expect("valid scheme");
    128 - (space - 1).leading_zeros()
}

/// The first `count` code values of `book`, serialized at [`code_word_width`].
pub fn code_stream<M: IndexMac, F: RoundFunctions>(
    book: &Codebook<M, F>,
    count: u64,
) -> Result<BitStream, CodeError> {
    let width = code_word_width(book.params());
    let values = (0..count)
        .map(|i| book.generate_value(i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BitStream::from_words(values, width).expect("code widths are within 1..=127"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

impl TestOutcome {
    fn new(statistic: f64, p_value: f64) -> Self {
        Self {
            statistic,
            p_value,
            pass: p_value >= SIGNIFICANCE,
        }
    }
}

/// Frequency test: `s = |#1 − #0| / √n`, p-value `erfc(s / √2)`.
pub fn monobit(stream: &BitStream) -> Result<TestOutcome, RandError> {
    let n = stream.len();
    if n < 100 {
        return Err(RandError::TooFewBits {
            needed: 100,
            got: n,
        });
    }
    let ones = stream.bits.iter().filter(|b| **b).count() as f64;
    let sum = 2.0 * ones - n as f64;
    let s = sum.abs() / (n as f64).sqrt();
    Ok(TestOutcome::new(s, erfc(s / std::f64::consts::SQRT_2)))
}

/// `ψ²_m` over cyclic overlapping `m`-bit patterns.
fn psi_squared(bits: &[bool], m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let n = bits.len();
    let mut counts = vec![0u64; 1 << m];
    for i in 0..n {
        let mut pattern = 0usize;
        for j in 0..m {
            pattern = (pattern << 1) | usize::from(bits[(i + j) % n]);
        }
        counts[pattern] += 1;
    }
    let sum_sq: f64 = counts.iter().map(|&c| (c as f64).powi(2)).sum();
    sum_sq * (1u64 << m) as f64 / n as f64 - n as f64
}

/// Serial test with 2-bit patterns.
///
/// Reports `∇ψ² = ψ²₂ − ψ²₁` as the statistic. Passes only if both
/// `∇ψ²` (χ², 2 dof) and `∇²ψ² = ψ²₂ − 2ψ²₁ + ψ²₀` (χ², 1 dof) have p-value at
/// least 0.01. The returned p-value is the smaller of the two.
pub fn serial_pairs(stream: &BitStream) -> Result<TestOutcome, RandError> {
    let n = stream.len();
    if n < 200 {
        return Err(RandError::TooFewBits {
            needed: 200,
            got: n,
        });
    }
    let psi2 = psi_squared(&stream.bits, 2);
    let psi1 = psi_squared(&stream.bits, 1);
    let psi0 = psi_squared(&stream.bits, 0);
    let del1 = psi2 - psi1;
    let del2 = psi2 - 2.0 * psi1 + psi0;
    // Upper tails: χ²(2) is exp(−x/2); χ²(1) is erfc(√(x/2)).
    let p1 = (-del1.max(0.0) / 2.0).exp();
    let p2 = erfc((del2.max(0.0) / 2.0).sqrt());
    Ok(TestOutcome::new(del1, p1.min(p2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn alternating(n: usize) -> BitStream {
        BitStream::from_bits((0..n).map(|i| i % 2 == 1))
    }

    #[test]
    fn monobit_examples() {
        let out = monobit(&alternating(1000)).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert!(out.pass);
        assert!(
            !monobit(&BitStream::from_bits(vec![true; 1000]))
                .unwrap()
                .pass
        );
        assert_eq!(
            monobit(&alternating(99)),
            Err(RandError::TooFewBits {
                needed: 100,
                got: 99
            })
        );
    }

    #[test]
    fn monobit_nist_example() {
        // SP 800-22 worked frequency example: 100-bit ε, P-value 0.109599.
        let eps = "1100100100001111110110101010001000100001011010001100001000110100110001001100011001100010100010111000";
        let out = monobit(&BitStream::from_bits(eps.chars().map(|c| c == '1'))).unwrap();
        assert!((out.p_value - 0.109599).abs() < 1e-6);
    }

    #[test]
    fn serial_examples() {
        assert!(!serial_pairs(&alternating(1000)).unwrap().pass);
        assert!(
            !serial_pairs(&BitStream::from_bits(vec![true; 1000]))
                .unwrap()
                .pass
        );
        assert!(serial_pairs(&alternating(199)).is_err());

        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        let stream = BitStream::from_bits((0..100_000).map(|_| rng.gen::<bool>()));
        assert!(serial_pairs(&stream).unwrap().pass);
        assert!(monobit(&stream).unwrap().pass);
    }

    #[test]
    fn serial_nist_example() {
        // SP 800-22 worked serial example with m = 3 on ε = 0011011101:
        // ψ²₃ = 2.8, ψ²₂ = 1.2, ψ²₁ = 0.4.
        let eps: Vec<bool> = "0011011101".chars().map(|c| c == '1').collect();
        assert!((psi_squared(&eps, 3) - 2.8).abs() < 1e-9);
        assert!((psi_squared(&eps, 2) - 1.2).abs() < 1e-9);
        assert!((psi_squared(&eps, 1) - 0.4).abs() < 1e-9);
    }

    #[test]
    fn word_serialization() {
        let s = BitStream::from_words([5u128, 2], 3).unwrap();
        assert_eq!(s.bits(), &[true, false, true, false, true, false]);
        assert_eq!(code_word_width(&SchemeParams::new(8, 10, 26214, 6, 0)), 18);
        assert_eq!(code_word_width(&SchemeParams::new(31, 10, 92352, 4, 0)), 20);
        assert!(BitStream::from_words([1u128], 0).is_err());
    }
}

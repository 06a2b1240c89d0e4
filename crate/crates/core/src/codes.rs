//! Activation code generation and verification, and the base-`A` codec that
//! maps code values to strings.
//!
//! Generation for index `i`:
//!
//! ```text
//! s  = HMAC(i) mod P
//! h  = ⌊s / A^ω⌋        h' = s mod A
//! m  = h·N + i
//! c  = Feistel(m)       over k = A^(λ/2)
//! α  = c·A^ω + ω·h'
//! ```
//!
//! Verification inverts the Feistel step, splits `m` back into `(h, i)` and
//! recomputes the tag. Validity is decided by the tag comparison alone; the
//! Feistel layer only hides the index.

use std::fmt;

use thiserror::Error;

use crate::crypto::{IntegerMac, KeySet, Tag};
use crate::feistel::{FeistelError, FeistelInstance, HmacRounds, RoundFunctions};
use crate::scheme::{bounded_pow, Alphabet, SchemeConfig, SchemeParams};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("character {0:?} is not in the alphabet")]
    ForeignCharacter(char),
    #[error("code has {actual} characters, expected {expected}")]
    WrongLength { expected: usize, actual: usize },
    #[error("value {value} does not fit in {length} digits")]
    Domain { value: u128, length: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodeError {
    #[error("index {index} out of range, scheme has {num_codes} codes")]
    IndexOutOfRange { index: u64, num_codes: u64 },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Feistel(#[from] FeistelError),
    #[error("scheme {0} is not valid")]
    InvalidScheme(SchemeParams),
    #[error("alphabet has {actual} characters but the scheme needs {expected}")]
    AlphabetSize { expected: u32, actual: usize },
    #[error("embedding h·N + i can reach {max_embedding} but the Feistel domain is {domain}")]
    EmbeddingOverflow { max_embedding: u128, domain: u128 },
    #[error("Feistel network has modulus {actual}, scheme needs {expected}")]
    ModulusMismatch { expected: u64, actual: u64 },
}

/// Base-`A` digits of `value`, most significant first, zero-padded to
/// `length`.
pub fn encode_int(alphabet: &Alphabet, value: u128, length: usize) -> Result<String, CodecError> {
    let radix = u128::from(alphabet.size());
    let mut digits = vec![alphabet.digit(0).unwrap(); length];
    let mut rest = value;
    for slot in digits.iter_mut().rev() {
        *slot = alphabet.digit((rest % radix) as u32).unwrap();
        rest /= radix;
    }
    if rest != 0 {
        return Err(CodecError::Domain { value, length });
    }
    Ok(digits.into_iter().collect())
}

/// Inverse of [`encode_int`].
pub fn decode_string(alphabet: &Alphabet, text: &str) -> Result<u128, CodecError> {
    let radix = u128::from(alphabet.size());
    let mut value: u128 = 0;
    for c in text.chars() {
        let d = alphabet
            .value_of(c)
            .ok_or(CodecError::ForeignCharacter(c))?;
        value = value
            .checked_mul(radix)
            .and_then(|v| v.checked_add(u128::from(d)))
            .ok_or(CodecError::Domain {
                value: u128::MAX,
                length: text.chars().count(),
            })?;
    }
    Ok(value)
}

/// Drops whitespace and `-` display separators.
pub fn normalize_input(text: &str) -> String {
    text.chars()
        .filter(|c| !c.is_whitespace() && *c != '-')
        .collect()
}

/// Inserts `-` every `group` characters. `group == 0` returns the text as is.
pub fn group_for_display(text: &str, group: usize) -> String {
    if group == 0 {
        return text.to_string();
    }
    let chars: Vec<char> = text.chars().collect();
    chars
        .chunks(group)
        .map(|c| c.iter().collect::<String>())
        .collect::<Vec<_>>()
        .join("-")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivationCode {
    text: String,
    value: u128,
}

impl ActivationCode {
    pub fn text(&self) -> &str {
        &self.text
    }

    /// The integer `α`.
    pub fn value(&self) -> u128 {
        self.value
    }

    pub fn grouped(&self, group: usize) -> String {
        group_for_display(&self.text, group)
    }
}

impl fmt::Display for ActivationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyOutcome {
    Valid(u64),
    Invalid,
}

impl VerifyOutcome {
    pub fn is_valid(&self) -> bool {
        matches!(self, VerifyOutcome::Valid(_))
    }
}

/// Source of the per-index tag `HMAC(i)`.
pub trait IndexMac {
    fn tag(&self, index: u64) -> Tag;
}

impl IndexMac for IntegerMac {
    fn tag(&self, index: u64) -> Tag {
        IntegerMac::tag(self, index)
    }
}

/// Everything needed to generate and verify codes for one scheme.
#[derive(Debug, Clone)]
pub struct Codebook<M, F> {
    params: SchemeParams,
    alphabet: Alphabet,
    mac: M,
    feistel: FeistelInstance<F>,
    bypass: u64,
}

impl Codebook<IntegerMac, HmacRounds> {
    /// Production codebook from a scheme config and derived keys.
    pub fn from_config(config: &SchemeConfig, keys: &KeySet) -> Result<Self, CodeError> {
        let mac = IntegerMac::new(keys.alg(), keys.hmac_key());
        let feistel = FeistelInstance::from_keys(config.params.derived_k(), keys)?;
        Self::new(config.params, config.alphabet.clone(), mac, feistel)
    }
}

impl<M: IndexMac, F: RoundFunctions> Codebook<M, F> {
    /// Assembles a codebook from parts.
    ///
    /// Besides scheme validity this requires `N·⌈P/A^ω⌉ ≤ A^λ`, so every
    /// embedding `h·N + i` fits the Feistel domain. It always holds when `A`
    /// divides `P` (which the planner guarantees for `ω = 1`).
    pub fn new(
        params: SchemeParams,
        alphabet: Alphabet,
        mac: M,
        feistel: FeistelInstance<F>,
    ) -> Result<Self, CodeError> {
        if !params.is_valid() {
            return Err(CodeError::InvalidScheme(params));
        }
        if alphabet.size() != params.alphabet_size {
            return Err(CodeError::AlphabetSize {
                expected: params.alphabet_size,
                actual: alphabet.len(),
            });
        }
        let k = params.derived_k();
        if feistel.k() != k {
            return Err(CodeError::ModulusMismatch {
                expected: k,
                actual: feistel.k(),
            });
        }
        let max_embedding = u128::from(params.num_codes) * u128::from(params.tag_bound());
        let domain = bounded_pow(params.alphabet_size.into(), params.lambda.into()).unwrap();
        if max_embedding > domain {
            return Err(CodeError::EmbeddingOverflow {
                max_embedding,
                domain,
            });
        }
        Ok(Self {
            params,
            alphabet,
            mac,
            feistel,
            bypass: params.bypass_radix(),
        })
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn feistel(&self) -> &FeistelInstance<F> {
        &self.feistel
    }

    /// `(h, h')` for index `i`.
    fn truncated_tag(&self, index: u64) -> (u64, u64) {
        let s = self.mac.tag(index).reduce(self.params.guess);
        (s / self.bypass, s % u64::from(self.params.alphabet_size))
    }

    /// The code value `α` for index `i`.
    pub fn generate_value(&self, index: u64) -> Result<u128, CodeError> {
        let n = self.params.num_codes;
        if index >= n {
            return Err(CodeError::IndexOutOfRange {
                index,
                num_codes: n,
            });
        }
        let (h, h_bypass) = self.truncated_tag(index);
        let m = u128::from(h) * u128::from(n) + u128::from(index);
        let c = self.feistel.encrypt(m)?;
        let bypass = if self.params.omega == 1 { h_bypass } else { 0 };
        Ok(c * u128::from(self.bypass) + u128::from(bypass))
    }

    pub fn generate(&self, index: u64) -> Result<ActivationCode, CodeError> {
        let value = self.generate_value(index)?;
        let text = encode_int(&self.alphabet, value, self.params.code_length())?;
        Ok(ActivationCode { text, value })
    }

    /// Parses user input: strips separators, checks length and characters.
    pub fn parse(&self, input: &str) -> Result<ActivationCode, CodecError> {
        let text = normalize_input(input);
        let len = text.chars().count();
        if len != self.params.code_length() {
            return Err(CodecError::WrongLength {
                expected: self.params.code_length(),
                actual: len,
            });
        }
        let value = decode_string(&self.alphabet, &text)?;
        let text = encode_int(&self.alphabet, value, len)?;
        Ok(ActivationCode { text, value })
    }

    /// Decides validity of a code value `α < A^(λ+ω)`.
    pub fn verify_value(&self, alpha: u128) -> VerifyOutcome {
        let radix = u128::from(self.bypass);
        let c = alpha / radix;
        let h_bypass = (alpha % radix) as u64;
        let Ok(m) = self.feistel.decrypt(c) else {
            return VerifyOutcome::Invalid;
        };
        let n = u128::from(self.params.num_codes);
        let h = m / n;
        let index = (m % n) as u64;
        if h >= u128::from(self.params.tag_bound()) {
            return VerifyOutcome::Invalid;
        }
        let (h_t, h_bypass_t) = self.truncated_tag(index);
        let bypass_ok = self.params.omega == 0 || h_bypass_t == h_bypass;
        if u128::from(h_t) == h && bypass_ok {
            VerifyOutcome::Valid(index)
        } else {
            VerifyOutcome::Invalid
        }
    }

    pub fn verify(&self, code: &ActivationCode) -> VerifyOutcome {
        self.verify_value(code.value)
    }

    /// Parses then verifies. Malformed input is an error, not `Invalid`.
    pub fn verify_str(&self, input: &str) -> Result<VerifyOutcome, CodecError> {
        Ok(self.verify(&self.parse(input)?))
    }
}

//! Scheme parameters: the tuple `(A, N, P, λ, ω)`, its validity rule, and the
//! planner that turns a desired code count and guess resistance into a valid
//! tuple.
//!
//! All arithmetic is exact and carried out in `u128`. A tuple whose code space
//! `A^(λ+ω)` exceeds 2^127 is treated as unusable.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Largest code space (`A^(λ+ω)`) this implementation accepts.
pub const MAX_CODE_SPACE: u128 = 1 << 127;

/// Default number of Feistel rounds.
pub const DEFAULT_ROUNDS: u8 = 6;

/// Decimal digits.
pub const DECIMAL_ALPHABET: &str = "0123456789";

/// Digits followed by the 21 uppercase consonants. No vowels means no
/// accidental words and no I/O/U look-alikes.
pub const CONSONANT_ALPHABET: &str = "0123456789BCDFGHJKLMNPQRSTVWXYZ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemeError {
    #[error("no valid scheme for A={alphabet_size}, N={num_codes}, P={guess}: {reason}")]
    PlanningFailure {
        alphabet_size: u32,
        num_codes: u64,
        guess: u64,
        reason: &'static str,
    },
    #[error("scheme {0} is not valid")]
    Invalid(SchemeParams),
    #[error("invalid alphabet: {0}")]
    Alphabet(String),
    #[error("alphabet has {actual} characters but the scheme needs {expected}")]
    AlphabetSize { expected: u32, actual: usize },
    #[error("scheme config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("at least {min} rounds are required, got {actual}")]
    TooFewRounds { min: u8, actual: u8 },
}

/// `base^exp`, or `None` once the result passes [`MAX_CODE_SPACE`].
pub(crate) fn bounded_pow(base: u128, exp: u32) -> Option<u128> {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
        if acc > MAX_CODE_SPACE {
            return None;
        }
    }
    Some(acc)
}

/// A scheme tuple `(A, N, P, λ, ω)`.
///
/// `A` is the alphabet size, `N` the number of codes, `P` the guess
/// denominator (a random guess succeeds with probability at most `1/P`),
/// `λ` the even number of characters covered by the Feistel network and `ω`
/// the optional single bypass digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchemeParams {
    pub alphabet_size: u32,
    pub num_codes: u64,
    pub guess: u64,
    pub lambda: u16,
    pub omega: u8,
}

impl SchemeParams {
    pub const fn new(
        alphabet_size: u32,
        num_codes: u64,
        guess: u64,
        lambda: u16,
        omega: u8,
    ) -> Self {
        Self {
            alphabet_size,
            num_codes,
            guess,
            lambda,
            omega,
        }
    }

    /// Checks the validity rule: `λ` even, `ω ∈ {0, 1}`, `A < P` and
    /// `A^(λ+ω) ≥ N·P`. Also rejects degenerate field values and code spaces
    /// beyond [`MAX_CODE_SPACE`].
    pub fn is_valid(&self) -> bool {
        if self.alphabet_size < 2 || self.num_codes < 1 || self.guess < 2 || self.lambda < 2 {
            return false;
        }
        if !self.lambda.is_multiple_of(2) || self.omega > 1 {
            return false;
        }
        if u64::from(self.alphabet_size) >= self.guess {
            return false;
        }
        match self.code_space() {
            Some(space) => space >= u128::from(self.num_codes) * u128::from(self.guess),
            None => false,
        }
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(SchemeError::Invalid(*self))
        }
    }

    /// Number of characters in a code, `λ + ω`.
    pub fn code_length(&self) -> usize {
        usize::from(self.lambda) + usize::from(self.omega)
    }

    /// `A^(λ+ω)`, the number of distinct strings of code length.
    pub fn code_space(&self) -> Option<u128> {
        bounded_pow(self.alphabet_size.into(), self.code_length() as u32)
    }

    /// Feistel block modulus `k = A^(λ/2)`.
    ///
    /// Panics if the scheme's code space is beyond [`MAX_CODE_SPACE`]; always
    /// fine for a valid scheme.
    pub fn derived_k(&self) -> u64 {
        let k = bounded_pow(self.alphabet_size.into(), u32::from(self.lambda / 2))
            .expect("block modulus overflow");
        u64::try_from(k).expect("block modulus exceeds 64 bits")
    }

    /// `A^ω`: 1 or `A`.
    pub fn bypass_radix(&self) -> u64 {
        if self.omega == 1 {
            u64::from(self.alphabet_size)
        } else {
            1
        }
    }

    /// `⌈P / A^ω⌉`, one past the largest truncated tag `h` that generation
    /// can produce.
    pub fn tag_bound(&self) -> u64 {
        self.guess.div_ceil(self.bypass_radix())
    }
}

impl fmt::Display for SchemeParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "A={} N={} P={} lambda={} omega={}",
            self.alphabet_size, self.num_codes, self.guess, self.lambda, self.omega
        )
    }
}

/// Plans a valid scheme for alphabet size `A`, at least `N` codes and guess
/// denominator at least `P`.
///
/// `λ` is the least integer with `A^λ ≥ N·P`, found by exact power
/// comparison. Then `P ← ⌊A^λ / N⌋`. An odd `λ` moves one digit into the
/// bypass slot: `P` is rounded down to a multiple of `A`, `N ← ⌊A^λ / P⌋`
/// and the result is `(A, N, P, λ−1, 1)`. If that fails to validate the
/// planner retries once with `λ + 1`.
pub fn plan_scheme(
    alphabet_size: u32,
    num_codes: u64,
    guess: u64,
) -> Result<SchemeParams, SchemeError> {
    let fail = |reason| SchemeError::PlanningFailure {
        alphabet_size,
        num_codes,
        guess,
        reason,
    };
    if alphabet_size < 2 {
        return Err(fail("alphabet size must be at least 2"));
    }
    if num_codes < 1 {
        return Err(fail("at least one code is required"));
    }
    if guess <= u64::from(alphabet_size) {
        return Err(fail("guess denominator must exceed the alphabet size"));
    }

    let a = u128::from(alphabet_size);
    let target = u128::from(num_codes) * u128::from(guess);
    let mut lambda = 0u32;
    let mut power: u128 = 1;
    while power < target {
        power = power
            .checked_mul(a)
            .filter(|p| *p <= MAX_CODE_SPACE)
            .ok_or_else(|| fail("code space exceeds 2^127"))?;
        lambda += 1;
    }

    if let Some(params) = plan_for_length(alphabet_size, num_codes, guess, lambda)? {
        return Ok(params);
    }
    plan_for_length(alphabet_size, num_codes, guess, lambda + 1)?
        .ok_or_else(|| fail("no valid scheme after retry"))
}

fn plan_for_length(
    alphabet_size: u32,
    num_codes: u64,
    guess_desired: u64,
    lambda: u32,
) -> Result<Option<SchemeParams>, SchemeError> {
    let fail = |reason| SchemeError::PlanningFailure {
        alphabet_size,
        num_codes,
        guess: guess_desired,
        reason,
    };
    let a = u128::from(alphabet_size);
    let space = bounded_pow(a, lambda).ok_or_else(|| fail("code space exceeds 2^127"))?;
    let lambda16 = u16::try_from(lambda).map_err(|_| fail("code length too large"))?;
    let mut guess = space / u128::from(num_codes);

    let params = if lambda % 2 == 1 {
        guess -= guess % a;
        if guess < u128::from(guess_desired) || guess <= a {
            return Ok(None);
        }
        let n = space / guess;
        SchemeParams {
            alphabet_size,
            num_codes: u64::try_from(n).map_err(|_| fail("code count exceeds 64 bits"))?,
            guess: u64::try_from(guess).map_err(|_| fail("guess denominator exceeds 64 bits"))?,
            lambda: lambda16 - 1,
            omega: 1,
        }
    } else {
        SchemeParams {
            alphabet_size,
            num_codes,
            guess: u64::try_from(guess).map_err(|_| fail("guess denominator exceeds 64 bits"))?,
            lambda: lambda16,
            omega: 0,
        }
    };
    Ok(params.is_valid().then_some(params))
}

/// An ordered set of distinct characters; position is digit value.
///
/// No two characters may coincide after case folding, so input can be
/// matched case-insensitively without ambiguity. Whitespace and `-` are
/// reserved for display grouping and are not allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    chars: Vec<char>,
    index: HashMap<char, u32>,
}

impl Alphabet {
    pub fn new(chars: &str) -> Result<Self, SchemeError> {
        let chars: Vec<char> = chars.chars().collect();
        if chars.len() < 2 {
            return Err(SchemeError::Alphabet(
                "needs at least two characters".into(),
            ));
        }
        if u32::try_from(chars.len()).is_err() {
            return Err(SchemeError::Alphabet("too many characters".into()));
        }
        let mut index = HashMap::with_capacity(chars.len());
        let mut folded = HashMap::with_capacity(chars.len());
        for (pos, &c) in chars.iter().enumerate() {
            if c.is_whitespace() || c.is_control() || c == '-' {
                return Err(SchemeError::Alphabet(format!(
                    "character {c:?} is reserved or unprintable"
                )));
            }
            if index.insert(c, pos as u32).is_some() {
                return Err(SchemeError::Alphabet(format!("duplicate character {c:?}")));
            }
            let upper: String = c.to_uppercase().collect();
            if let Some(prev) = folded.insert(upper, c) {
                return Err(SchemeError::Alphabet(format!(
                    "{prev:?} and {c:?} are equal ignoring case"
                )));
            }
        }
        Ok(Self { chars, index })
    }

    /// Built-in alphabet for a few sizes: 10 (decimal) and 31 (digits plus
    /// consonants).
    pub fn default_for(size: u32) -> Option<Self> {
        match size {
            10 => Some(Self::new(DECIMAL_ALPHABET).unwrap()),
            31 => Some(Self::new(CONSONANT_ALPHABET).unwrap()),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn size(&self) -> u32 {
        self.chars.len() as u32
    }

    pub fn digit(&self, value: u32) -> Option<char> {
        self.chars.get(value as usize).copied()
    }

    /// Digit value of `c`, falling back to its other case.
    pub fn value_of(&self, c: char) -> Option<u32> {
        if let Some(v) = self.index.get(&c) {
            return Some(*v);
        }
        let mut alt = c.to_uppercase();
        if let (Some(u), None) = (alt.next(), alt.next()) {
            if let Some(v) = self.index.get(&u) {
                return Some(*v);
            }
        }
        let mut alt = c.to_lowercase();
        match (alt.next(), alt.next()) {
            (Some(l), None) => self.index.get(&l).copied(),
            _ => None,
        }
    }

    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }
}

impl fmt::Display for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.chars {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Everything needed to operate a scheme: the tuple, the concrete alphabet
/// and the round count.
///
/// Serialized as `key=value` lines with exactly the keys `alphabet`,
/// `codes`, `guess`, `lambda`, `omega` and `rounds`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemeConfig {
    pub params: SchemeParams,
    pub alphabet: Alphabet,
    pub rounds: u8,
}

impl SchemeConfig {
    /// Minimum round count accepted for a deployable configuration.
    pub const MIN_ROUNDS: u8 = 6;

    pub fn new(params: SchemeParams, alphabet: Alphabet, rounds: u8) -> Result<Self, SchemeError> {
        if alphabet.size() != params.alphabet_size {
            return Err(SchemeError::AlphabetSize {
                expected: params.alphabet_size,
                actual: alphabet.len(),
            });
        }
        params.validate()?;
        if rounds < Self::MIN_ROUNDS {
            return Err(SchemeError::TooFewRounds {
                min: Self::MIN_ROUNDS,
                actual: rounds,
            });
        }
        Ok(Self {
            params,
            alphabet,
            rounds,
        })
    }

    /// Canonical text form. Parsing it back yields an equal config.
    pub fn to_config_string(&self) -> String {
        format!(
            "alphabet={}\ncodes={}\nguess={}\nlambda={}\nomega={}\nrounds={}\n",
            self.alphabet,
            self.params.num_codes,
            self.params.guess,
            self.params.lambda,
            self.params.omega,
            self.rounds
        )
    }
}

impl FromStr for SchemeConfig {
    type Err = SchemeError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        const KEYS: [&str; 6] = ["alphabet", "codes", "guess", "lambda", "omega", "rounds"];
        let mut values: HashMap<&str, (usize, &str)> = HashMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line_no = no + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SchemeError::Config {
                line: line_no,
                reason: "expected key=value".into(),
            })?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(SchemeError::Config {
                    line: line_no,
                    reason: format!("unknown key {key:?}"),
                });
            }
            if values.insert(key, (line_no, value)).is_some() {
                return Err(SchemeError::Config {
                    line: line_no,
                    reason: format!("duplicate key {key:?}"),
                });
            }
        }

        fn number<T: FromStr>(
            values: &HashMap<&str, (usize, &str)>,
            key: &str,
        ) -> Result<Option<T>, SchemeError> {
            match values.get(key) {
                None => Ok(None),
                Some((line, v)) => v.trim().parse().map(Some).map_err(|_| SchemeError::Config {
                    line: *line,
                    reason: format!("{key} must be a non-negative integer"),
                }),
            }
        }
        let missing = |key: &str| SchemeError::Config {
            line: 0,
            reason: format!("missing key {key:?}"),
        };

        let alphabet = Alphabet::new(values.get("alphabet").ok_or_else(|| missing("alphabet"))?.1)?;
        let params = SchemeParams {
            alphabet_size: alphabet.size(),
            num_codes: number(&values, "codes")?.ok_or_else(|| missing("codes"))?,
            guess: number(&values, "guess")?.ok_or_else(|| missing("guess"))?,
            lambda: number(&values, "lambda")?.ok_or_else(|| missing("lambda"))?,
            omega: number(&values, "omega")?.ok_or_else(|| missing("omega"))?,
        };
        let rounds = number(&values, "rounds")?.unwrap_or(DEFAULT_ROUNDS);
        SchemeConfig::new(params, alphabet, rounds)
    }
}

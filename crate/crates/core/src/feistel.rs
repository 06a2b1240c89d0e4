//! Balanced Feistel permutation over `Z_k × Z_k`.
//!
//! A message `m < k²` splits as `L = m mod k`, `R = ⌊m / k⌋`. Each round maps
//! `(L, R)` to `(R, L + f_j(R) mod k)`. After the last round the halves are
//! recombined as `L*·k + R*` when the round count is odd and `R*·k + L*` when
//! it is even, so all-zero round functions give the identity for either
//! parity.
//!
//! Decryption undoes the rounds in reverse key order with modular
//! subtraction.

use std::fmt;

use thiserror::Error;

use crate::crypto::{IntegerMac, KeySet};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeistelError {
    #[error("value {value} outside the domain [0, {domain})")]
    Domain { value: u128, domain: u128 },
    #[error("block modulus must be at least 2, got {0}")]
    Modulus(u64),
    #[error("at least one round is required")]
    NoRounds,
    #[error("round table {round} has {len} entries, expected {k}")]
    TableSize { round: usize, len: usize, k: u64 },
}

/// A family of round functions `f_1 … f_r : Z_k → Z_k`.
pub trait RoundFunctions {
    fn rounds(&self) -> usize;

    /// `f_round(input)`, with `round` counted from 1.
    fn apply(&self, round: usize, input: u64, k: u64) -> u64;
}

/// Production rounds: `f_j(R) = HMAC(round_key_j, R) mod k`.
#[derive(Clone)]
pub struct HmacRounds {
    macs: Vec<IntegerMac>,
}

impl HmacRounds {
    pub fn new(keys: &KeySet) -> Self {
        Self {
            macs: keys
                .round_keys()
                .iter()
                .map(|k| IntegerMac::new(keys.alg(), k))
                .collect(),
        }
    }
}

impl fmt::Debug for HmacRounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HmacRounds({} rounds)", self.macs.len())
    }
}

impl RoundFunctions for HmacRounds {
    fn rounds(&self) -> usize {
        self.macs.len()
    }

    fn apply(&self, round: usize, input: u64, k: u64) -> u64 {
        self.macs[round - 1].tag(input).reduce(k)
    }
}

/// Round functions given as explicit lookup tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRounds {
    tables: Vec<Vec<u64>>,
}

impl TableRounds {
    pub fn new(tables: Vec<Vec<u64>>) -> Self {
        Self { tables }
    }

    pub fn tables(&self) -> &[Vec<u64>] {
        &self.tables
    }
}

impl RoundFunctions for TableRounds {
    fn rounds(&self) -> usize {
        self.tables.len()
    }

    fn apply(&self, round: usize, input: u64, k: u64) -> u64 {
        self.tables[round - 1][input as usize] % k
    }
}

/// `r` rounds of the zero function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroRounds(pub usize);

impl RoundFunctions for ZeroRounds {
    fn rounds(&self) -> usize {
        self.0
    }

    fn apply(&self, _round: usize, _input: u64, _k: u64) -> u64 {
        0
    }
}

#[derive(Debug, Clone)]
pub struct FeistelInstance<F> {
    k: u64,
    rounds: F,
}

impl FeistelInstance<HmacRounds> {
    pub fn from_keys(k: u64, keys: &KeySet) -> Result<Self, FeistelError> {
        Self::new(k, HmacRounds::new(keys))
    }
}

impl FeistelInstance<TableRounds> {
    /// Table-backed instance; every table must have exactly `k` entries.
    pub fn from_tables(k: u64, tables: Vec<Vec<u64>>) -> Result<Self, FeistelError> {
        for (i, t) in tables.iter().enumerate() {
            if t.len() as u64 != k {
                return Err(FeistelError::TableSize {
                    round: i + 1,
                    len: t.len(),
                    k,
                });
            }
        }
        Self::new(k, TableRounds::new(tables))
    }
}

impl<F: RoundFunctions> FeistelInstance<F> {
    pub fn new(k: u64, rounds: F) -> Result<Self, FeistelError> {
        if k < 2 {
            return Err(FeistelError::Modulus(k));
        }
        if rounds.rounds() == 0 {
            return Err(FeistelError::NoRounds);
        }
        Ok(Self { k, rounds })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn rounds(&self) -> usize {
        self.rounds.rounds()
    }

    pub fn round_functions(&self) -> &F {
        &self.rounds
    }

    /// `k²`.
    pub fn domain(&self) -> u128 {
        u128::from(self.k) * u128::from(self.k)
    }

    fn split(&self, value: u128) -> Result<(u64, u64), FeistelError> {
        if value >= self.domain() {
            return Err(FeistelError::Domain {
                value,
                domain: self.domain(),
            });
        }
        let k = u128::from(self.k);
        Ok(((value % k) as u64, (value / k) as u64))
    }

    fn join(&self, high: u64, low: u64) -> u128 {
        u128::from(high) * u128::from(self.k) + u128::from(low)
    }

    pub fn encrypt(&self, m: u128) -> Result<u128, FeistelError> {
        let k = self.k;
        let (mut l, mut r) = self.split(m)?;
        for j in 1..=self.rounds() {
            let f = self.rounds.apply(j, r, k);
            let tmp = add_mod(l, f, k);
            l = r;
            r = tmp;
        }
        Ok(if self.rounds() % 2 == 1 {
            self.join(l, r)
        } else {
            self.join(r, l)
        })
    }

    pub fn decrypt(&self, c: u128) -> Result<u128, FeistelError> {
        let k = self.k;
        let (low, high) = self.split(c)?;
        // Undo the parity-dependent recombination to get (L*, R*).
        let (mut l, mut r) = if self.rounds() % 2 == 1 {
            (high, low)
        } else {
            (low, high)
        };
        for j in (1..=self.rounds()).rev() {
            let prev_r = l;
            let prev_l = sub_mod(r, self.rounds.apply(j, prev_r, k), k);
            l = prev_l;
            r = prev_r;
        }
        Ok(self.join(r, l))
    }
}

#[inline]
fn add_mod(a: u64, b: u64, k: u64) -> u64 {
    ((u128::from(a) + u128::from(b % k)) % u128::from(k)) as u64
}

#[inline]
fn sub_mod(a: u64, b: u64, k: u64) -> u64 {
    let b = b % k;
    if a >= b {
        a - b
    } else {
        k - (b - a)
    }
}

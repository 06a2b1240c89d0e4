//! Key material: KDF1 key derivation, HMAC tags over code indices, and the
//! keyed round function used by the Feistel network.
//!
//! Integers are fed to the MAC as 8-byte big-endian strings. Digests are read
//! as 256-bit big-endian integers and reduced with a plain modulus; the bias
//! for a modulus `k` is at most `k / 2^256`.

use std::fmt;
use std::str::FromStr;

use hmac::{Hmac, Mac};
use rand::rngs::OsRng;
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

type HmacSha256 = Hmac<Sha256>;

/// Size in bytes of every derived key and every digest.
pub const KEY_LEN: usize = 32;

pub const MIN_MASTER_KEY_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeyError {
    #[error("master key must be at least {MIN_MASTER_KEY_LEN} bytes, got {0}")]
    TooShort(usize),
    #[error("key file is not valid hex: {0}")]
    Hex(#[from] hex::FromHexError),
    #[error("unsupported hash algorithm {0:?}")]
    UnsupportedHash(String),
    #[error("at least one round is required")]
    NoRounds,
}

/// Hash behind KDF1 and HMAC.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum HashAlg {
    #[default]
    Sha256,
}

impl HashAlg {
    pub fn name(self) -> &'static str {
        match self {
            HashAlg::Sha256 => "SHA-256",
        }
    }

    fn digest(self, parts: &[&[u8]]) -> [u8; KEY_LEN] {
        match self {
            HashAlg::Sha256 => {
                let mut h = Sha256::new();
                for p in parts {
                    h.update(p);
                }
                h.finalize().into()
            }
        }
    }
}

impl FromStr for HashAlg {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SHA-256" | "SHA256" => Ok(HashAlg::Sha256),
            _ => Err(KeyError::UnsupportedHash(s.to_string())),
        }
    }
}

/// The long-term secret all other keys derive from.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterKey(Vec<u8>);

impl MasterKey {
    pub fn new(secret: impl Into<Vec<u8>>) -> Result<Self, KeyError> {
        let secret = secret.into();
        if secret.len() < MIN_MASTER_KEY_LEN {
            return Err(KeyError::TooShort(secret.len()));
        }
        Ok(Self(secret))
    }

    /// 32 bytes from the operating system's CSPRNG.
    pub fn generate() -> Self {
        let mut secret = vec![0u8; KEY_LEN];
        OsRng.fill_bytes(&mut secret);
        Self(secret)
    }

    /// Parses the key file format: lowercase hex, optional trailing newline.
    pub fn from_hex(text: &str) -> Result<Self, KeyError> {
        let text = text.strip_suffix('\n').unwrap_or(text);
        let text = text.strip_suffix('\r').unwrap_or(text);
        Self::new(hex::decode(text)?)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MasterKey([{} bytes redacted])", self.0.len())
    }
}

/// KDF1 (ISO 18033-2) with SHA-256.
pub fn kdf1(master: &MasterKey, out_len: usize) -> Vec<u8> {
    kdf1_with(HashAlg::Sha256, master.as_bytes(), out_len)
}

/// KDF1: the first `out_len` bytes of `H(secret ‖ 0) ‖ H(secret ‖ 1) ‖ …`
/// with 32-bit big-endian counters.
pub fn kdf1_with(alg: HashAlg, secret: &[u8], out_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_len.next_multiple_of(KEY_LEN));
    let mut counter: u32 = 0;
    while out.len() < out_len {
        out.extend_from_slice(&alg.digest(&[secret, &counter.to_be_bytes()]));
        counter = counter.checked_add(1).expect("KDF1 counter overflow");
    }
    out.truncate(out_len);
    out
}

/// The HMAC key plus one key per Feistel round.
#[derive(Clone, PartialEq, Eq)]
pub struct KeySet {
    alg: HashAlg,
    hmac_key: [u8; KEY_LEN],
    round_keys: Vec<[u8; KEY_LEN]>,
}

impl KeySet {
    pub fn derive(master: &MasterKey, rounds: usize) -> Result<Self, KeyError> {
        Self::derive_with(HashAlg::Sha256, master, rounds)
    }

    /// Splits `kdf1(master, 32·(r+1))` into the HMAC key followed by the
    /// `r` round keys, in order.
    pub fn derive_with(alg: HashAlg, master: &MasterKey, rounds: usize) -> Result<Self, KeyError> {
        if rounds == 0 {
            return Err(KeyError::NoRounds);
        }
        let material = kdf1_with(alg, master.as_bytes(), KEY_LEN * (rounds + 1));
        let mut chunks = material
            .chunks_exact(KEY_LEN)
            .map(|c| <[u8; KEY_LEN]>::try_from(c).unwrap());
        let hmac_key = chunks.next().unwrap();
        Ok(Self {
            alg,
            hmac_key,
            round_keys: chunks.collect(),
        })
    }

    /// Builds a key set from explicit keys.
    pub fn from_parts(hmac_key: [u8; KEY_LEN], round_keys: Vec<[u8; KEY_LEN]>) -> Self {
        Self {
            alg: HashAlg::Sha256,
            hmac_key,
            round_keys,
        }
    }

    pub fn alg(&self) -> HashAlg {
        self.alg
    }

    pub fn hmac_key(&self) -> &[u8; KEY_LEN] {
        &self.hmac_key
    }

    /// Round keys in round order; index 0 is round 1.
    pub fn round_keys(&self) -> &[[u8; KEY_LEN]] {
        &self.round_keys
    }

    pub fn rounds(&self) -> usize {
        self.round_keys.len()
    }

    /// A one-way digest identifying this key set, safe to store on disk.
    pub fn fingerprint(&self) -> [u8; KEY_LEN] {
        let mut parts: Vec<&[u8]> =
            vec![b"bepac-keyset", self.alg.name().as_bytes(), &self.hmac_key];
        parts.extend(self.round_keys.iter().map(|k| k.as_slice()));
        self.alg.digest(&parts)
    }
}

impl fmt::Debug for KeySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeySet")
            .field("alg", &self.alg)
            .field("rounds", &self.round_keys.len())
            .finish_non_exhaustive()
    }
}

/// A 256-bit MAC output read as a big-endian integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tag(pub [u8; KEY_LEN]);

impl Tag {
    /// Tag whose integer value is `value`.
    pub fn from_u128(value: u128) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        bytes[16..].copy_from_slice(&value.to_be_bytes());
        Tag(bytes)
    }

    /// `self mod modulus`. Horner over 64-bit limbs; every step fits in u128.
    pub fn reduce(&self, modulus: u64) -> u64 {
        assert!(modulus > 0, "modulus must be positive");
        let m = u128::from(modulus);
        let mut acc: u128 = 0;
        for limb in self.0.chunks_exact(8) {
            let limb = u64::from_be_bytes(limb.try_into().unwrap());
            acc = ((acc << 64) | u128::from(limb)) % m;
        }
        acc as u64
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

/// A pre-keyed HMAC over 8-byte big-endian integers.
#[derive(Clone)]
pub struct IntegerMac {
    mac: HmacSha256,
}

impl IntegerMac {
    pub fn new(alg: HashAlg, key: &[u8]) -> Self {
        match alg {
            HashAlg::Sha256 => Self {
                mac: HmacSha256::new_from_slice(key).expect("HMAC accepts keys of any length"),
            },
        }
    }

    pub fn tag(&self, value: u64) -> Tag {
        let mut mac = self.mac.clone();
        mac.update(&value.to_be_bytes());
        Tag(mac.finalize().into_bytes().into())
    }
}

impl fmt::Debug for IntegerMac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("IntegerMac(..)")
    }
}

/// HMAC of the 8-byte big-endian index.
pub fn index_tag(hmac_key: &[u8], index: u64) -> Tag {
    IntegerMac::new(HashAlg::Sha256, hmac_key).tag(index)
}

/// Keyed round function `Z_k → Z_k`: `HMAC(key, R) mod k`.
pub fn round_fn(round_key: &[u8], input: u64, k: u64) -> u64 {
    IntegerMac::new(HashAlg::Sha256, round_key)
        .tag(input)
        .reduce(k)
}

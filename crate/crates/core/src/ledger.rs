//! Persistent clearance ledger: an issuance counter plus one bit per code.
//!
//! Bit `i` records that code `i` has been redeemed. It lives in byte `i / 8`
//! at bit position `i % 8`, least significant bit first.
//!
//! File layout, all integers big-endian:
//!
//! | field              | bytes     |
//! |--------------------|-----------|
//! | magic `"BEPAC"`    | 5         |
//! | version `0x01`     | 1         |
//! | scheme fingerprint | 8         |
//! | A                  | 4         |
//! | N                  | 8         |
//! | P                  | 8         |
//! | λ                  | 2         |
//! | ω                  | 1         |
//! | r                  | 1         |
//! | issued             | 8         |
//! | bitmap             | ⌈N/8⌉     |
//! | SHA-256 of the above | 32      |
//!
//! Every mutation rewrites the whole file to `<path>.tmp`, syncs it and
//! renames it over the ledger. A `<path>.lock` file holds an exclusive
//! advisory lock for as long as a [`Ledger`] is open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codes::{ActivationCode, CodeError, Codebook, CodecError, IndexMac, VerifyOutcome};
use crate::crypto::KeySet;
use crate::feistel::RoundFunctions;
use crate::scheme::{SchemeConfig, SchemeParams};

pub const MAGIC: &[u8; 5] = b"BEPAC";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 46;
pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger {0} already exists")]
    AlreadyExists(PathBuf),
    #[error("ledger {0} is locked by another process")]
    Locked(PathBuf),
    #[error("ledger I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("not a ledger file: {0}")]
    Format(&'static str),
    #[error("ledger belongs to a different scheme or key")]
    FingerprintMismatch,
    #[error("all {0} codes have been issued")]
    Exhausted(u64),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("simulated crash at {0:?}")]
    SimulatedCrash(CrashPoint),
    #[error("ledger handle is unusable after a failed write")]
    Poisoned,
}

/// Points in the write sequence where a test can cut the process off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// Temp file created but only half written.
    MidTempWrite,
    /// Temp file complete and synced, not yet renamed.
    BeforeRename,
    /// Rename done; the caller never hears back.
    AfterRename,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedeemOutcome {
    Redeemed(u64),
    AlreadyUsed(u64),
    NotYetIssued(u64),
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerStats {
    pub issued: u64,
    pub redeemed: u64,
    pub remaining: u64,
}

/// First 8 bytes of `SHA-256(canonical config ‖ key fingerprint)`.
pub fn scheme_fingerprint(config: &SchemeConfig, keys: &KeySet) -> [u8; 8] {
    let digest: [u8; 32] = Sha256::new()
        .chain_update(b"bepac-ledger\n")
        .chain_update(config.to_config_string().as_bytes())
        .chain_update(keys.fingerprint())
        .finalize()
        .into();
    digest[..8].try_into().unwrap()
}

/// The decoded contents of a ledger file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerState {
    pub fingerprint: [u8; 8],
    pub params: SchemeParams,
    pub rounds: u8,
    pub issued: u64,
    pub bitmap: Vec<u8>,
}

fn bitmap_len(n: u64) -> usize {
    n.div_ceil(8) as usize
}

impl LedgerState {
    fn fresh(config: &SchemeConfig, keys: &KeySet) -> Self {
        Self {
            fingerprint: scheme_fingerprint(config, keys),
            params: config.params,
            rounds: config.rounds,
            issued: 0,
            bitmap: vec![0; bitmap_len(config.params.num_codes)],
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.bitmap.len() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.fingerprint);
        out.extend_from_slice(&self.params.alphabet_size.to_be_bytes());
        out.extend_from_slice(&self.params.num_codes.to_be_bytes());
        out.extend_from_slice(&self.params.guess.to_be_bytes());
        out.extend_from_slice(&self.params.lambda.to_be_bytes());
        out.push(self.params.omega);
        out.push(self.rounds);
        out.extend_from_slice(&self.issued.to_be_bytes());
        debug_assert_eq!(out.len(), HEADER_LEN);
        out.extend_from_slice(&self.bitmap);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, LedgerError> {
        if bytes.len() < HEADER_LEN + DIGEST_LEN {
            return Err(LedgerError::Format("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if &body[..5] != MAGIC {
            return Err(LedgerError::Format("bad magic"));
        }
        if body[5] != VERSION {
            return Err(LedgerError::Format("unsupported version"));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(LedgerError::Format("digest mismatch"));
        }
        let mut rd = body;
        let mut take = |n: usize| {
            let (head, tail) = rd.split_at(n);
            rd = tail;
            head
        };
        take(6);
        let fingerprint: [u8; 8] = take(8).try_into().unwrap();
        let alphabet_size = u32::from_be_bytes(take(4).try_into().unwrap());
        let num_codes = u64::from_be_bytes(take(8).try_into().unwrap());
        let guess = u64::from_be_bytes(take(8).try_into().unwrap());
        let lambda = u16::from_be_bytes(take(2).try_into().unwrap());
        let omega = take(1)[0];
        let rounds = take(1)[0];
        let issued = u64::from_be_bytes(take(8).try_into().unwrap());
        let bitmap = rd.to_vec();
        if bitmap.len() != bitmap_len(num_codes) {
            return Err(LedgerError::Format("bitmap length does not match N"));
        }
        if issued > num_codes {
            return Err(LedgerError::Format("issued counter exceeds N"));
        }
        Ok(Self {
            fingerprint,
            params: SchemeParams {
                alphabet_size,
                num_codes,
                guess,
                lambda,
                omega,
            },
            rounds,
            issued,
            bitmap,
        })
    }

    pub fn is_redeemed(&self, index: u64) -> bool {
        self.bitmap[(index / 8) as usize] & (1 << (index % 8)) != 0
    }

    fn set_redeemed(&mut self, index: u64) {
        self.bitmap[(index / 8) as usize] |= 1 << (index % 8);
    }

    pub fn stats(&self) -> LedgerStats {
        LedgerStats {
            issued: self.issued,
            redeemed: self.bitmap.iter().map(|b| u64::from(b.count_ones())).sum(),
            remaining: self.params.num_codes - self.issued,
        }
    }

    /// Reads the last durable snapshot without taking the lock.
    pub fn read(path: &Path) -> Result<Self, LedgerError> {
        Self::decode(&fs::read(path)?)
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// An open, locked ledger.
#[derive(Debug)]
pub struct Ledger {
    path: PathBuf,
    state: LedgerState,
    strict: bool,
    poisoned: bool,
    crash_at: Option<CrashPoint>,
    _lock: File,
}

impl Ledger {
    fn lock(path: &Path) -> Result<File, LedgerError> {
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(sibling(path, ".lock"))?;
        match lock.try_lock() {
            Ok(()) => Ok(lock),
            Err(fs::TryLockError::WouldBlock) => Err(LedgerError::Locked(path.to_path_buf())),
            Err(fs::TryLockError::Error(e)) => Err(e.into()),
        }
    }

    /// Creates a zeroed ledger bound to `config` and `keys`.
    pub fn create(
        path: impl AsRef<Path>,
        config: &SchemeConfig,
        keys: &KeySet,
    ) -> Result<Self, LedgerError> {
        let path = path.as_ref();
        let lock = Self::lock(path)?;
        if path.exists() {
            return Err(LedgerError::AlreadyExists(path.to_path_buf()));
        }
        let mut ledger = Self {
            path: path.to_path_buf(),
            state: LedgerState::fresh(config, keys),
            strict: false,
            poisoned: false,
            crash_at: None,
            _lock: lock,
        };
        ledger.persist(&ledger.state.clone())?;
        Ok(ledger)
    }

    /// Opens an existing ledger, checking it belongs to `config` and `keys`.
    pub fn open(
        path: impl AsRef<Path>,
        config: &SchemeConfig,
        keys: &KeySet,
    ) -> Result<Self, LedgerError> {
        let path = path.as_ref();
        let lock = Self::lock(path)?;
        let state = LedgerState::read(path)?;
        if state.fingerprint != scheme_fingerprint(config, keys)
            || state.params != config.params
            || state.rounds != config.rounds
        {
            return Err(LedgerError::FingerprintMismatch);
        }
        // Leftover from an interrupted write; the ledger itself is intact.
        let _ = fs::remove_file(sibling(path, ".tmp"));
        Ok(Self {
            path: path.to_path_buf(),
            state,
            strict: false,
            poisoned: false,
            crash_at: None,
            _lock: lock,
        })
    }

    /// In strict mode codes with an index at or above the issuance counter
    /// are refused. Off by default: a clearance site usually has no view of
    /// the issuer's counter.
    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn state(&self) -> &LedgerState {
        &self.state
    }

    pub fn stats(&self) -> LedgerStats {
        self.state.stats()
    }

    /// Makes the next write stop at `point`, as if the process died there.
    #[doc(hidden)]
    pub fn inject_crash(&mut self, point: CrashPoint) {
        self.crash_at = Some(point);
    }

    fn persist(&mut self, next: &LedgerState) -> Result<(), LedgerError> {
        if self.poisoned {
            return Err(LedgerError::Poisoned);
        }
        let bytes = next.encode();
        let tmp = sibling(&self.path, ".tmp");
        let crash = self.crash_at.take();
        let result = (|| {
            let mut f = File::create(&tmp)?;
            if crash == Some(CrashPoint::MidTempWrite) {
                f.write_all(&bytes[..bytes.len() / 2])?;
                return Err(LedgerError::SimulatedCrash(CrashPoint::MidTempWrite));
            }
            f.write_all(&bytes)?;
            f.sync_all()?;
            drop(f);
            if crash == Some(CrashPoint::BeforeRename) {
                return Err(LedgerError::SimulatedCrash(CrashPoint::BeforeRename));
            }
            fs::rename(&tmp, &self.path)?;
            if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
                // Directory fsync is best effort; not every platform allows it.
                if let Ok(d) = File::open(dir) {
                    let _ = d.sync_all();
                }
            }
            if crash == Some(CrashPoint::AfterRename) {
                return Err(LedgerError::SimulatedCrash(CrashPoint::AfterRename));
            }
            Ok(())
        })();
        if result.is_err() {
            self.poisoned = matches!(result, Err(LedgerError::SimulatedCrash(_)));
        }
        result
    }

    /// Issues the next code and durably bumps the counter before returning it.
    pub fn issue_next<M: IndexMac, F: RoundFunctions>(
        &mut self,
        codebook: &Codebook<M, F>,
    ) -> Result<(u64, ActivationCode), LedgerError> {
        self.check_codebook(codebook)?;
        let index = self.state.issued;
        if index >= self.state.params.num_codes {
            return Err(LedgerError::Exhausted(self.state.params.num_codes));
        }
        let code = codebook.generate(index)?;
        let mut next = self.state.clone();
        next.issued += 1;
        self.persist(&next)?;
        self.state = next;
        Ok((index, code))
    }

    /// Verifies a code and marks it cleared. A code clears at most once.
    pub fn redeem<M: IndexMac, F: RoundFunctions>(
        &mut self,
        codebook: &Codebook<M, F>,
        input: &str,
    ) -> Result<RedeemOutcome, LedgerError> {
        self.check_codebook(codebook)?;
        let code = codebook.parse(input)?;
        let index = match codebook.verify(&code) {
            VerifyOutcome::Invalid => return Ok(RedeemOutcome::Invalid),
            VerifyOutcome::Valid(i) => i,
        };
        if self.strict && index >= self.state.issued {
            return Ok(RedeemOutcome::NotYetIssued(index));
        }
        if self.state.is_redeemed(index) {
            return Ok(RedeemOutcome::AlreadyUsed(index));
        }
        let mut next = self.state.clone();
        next.set_redeemed(index);
        self.persist(&next)?;
        self.state = next;
        Ok(RedeemOutcome::Redeemed(index))
    }

    fn check_codebook<M: IndexMac, F: RoundFunctions>(
        &self,
        codebook: &Codebook<M, F>,
    ) -> Result<(), LedgerError> {
        if *codebook.params() != self.state.params {
            return Err(LedgerError::FingerprintMismatch);
        }
        Ok(())
    }
}

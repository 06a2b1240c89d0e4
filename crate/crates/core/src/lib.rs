//! Short, human-enterable activation codes.
//!
//! A code for index `i` embeds `i` together with a truncated HMAC of `i` and
//! encrypts the result with a small-domain balanced Feistel network.
//! Authenticity rests on the HMAC alone, so recovering the Feistel
//! permutation (see [`attack`]) reveals indices but does not let anyone
//! forge codes.
//!
//! ```
//! use bepac_core::{plan_scheme, Alphabet, Codebook, KeySet, MasterKey, SchemeConfig, VerifyOutcome};
//!
//! let params = plan_scheme(10, 1000, 10_000).unwrap();
//! let config = SchemeConfig::new(params, Alphabet::default_for(10).unwrap(), 6).unwrap();
//! let keys = KeySet::derive(&MasterKey::generate(), config.rounds.into()).unwrap();
//! let book = Codebook::from_config(&config, &keys).unwrap();
//!
//! let code = book.generate(42).unwrap();
//! assert_eq!(book.verify(&code), VerifyOutcome::Valid(42));
//! ```

pub mod attack;
pub mod codes;
pub mod crypto;
pub mod feistel;
pub mod ledger;
pub mod randcheck;
pub mod scheme;

pub use attack::{
    recover, run_demo, AttackError, AttackReport, ChosenPlaintextOracle, DemoReport, FeistelOracle,
    RecoveredTriple, Triple,
};
pub use codes::{ActivationCode, CodeError, Codebook, CodecError, VerifyOutcome};
pub use crypto::{KeyError, KeySet, MasterKey};
pub use feistel::{FeistelError, FeistelInstance, RoundFunctions};
pub use ledger::{Ledger, LedgerError, LedgerStats, RedeemOutcome};
pub use randcheck::{BitStream, RandError, TestOutcome};
pub use scheme::{plan_scheme, Alphabet, SchemeConfig, SchemeError, SchemeParams};

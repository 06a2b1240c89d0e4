//! Fixed fixtures shared by the benchmarks.

use bepac_core::codes::Codebook;
use bepac_core::crypto::IntegerMac;
use bepac_core::feistel::HmacRounds;
use bepac_core::{plan_scheme, Alphabet, KeySet, MasterKey, SchemeConfig};

pub fn master_key() -> MasterKey {
    MasterKey::new(b"bepac-bench-key-0000".to_vec()).expect("key is long enough")
}

/// A decimal scheme for `num_codes` codes at guess bound `guess`.
pub fn decimal_codebook(num_codes: u64, guess: u64) -> Codebook<IntegerMac, HmacRounds> {
    let params = plan_scheme(10, num_codes, guess).expect("plannable");
    let config =
        SchemeConfig::new(params, Alphabet::default_for(10).expect("decimal"), 6).expect("valid");
    let keys = KeySet::derive(&master_key(), 6).expect("rounds > 0");
    Codebook::from_config(&config, &keys).expect("consistent")
}

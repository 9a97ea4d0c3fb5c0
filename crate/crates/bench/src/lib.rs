//! Inputs shared by the benchmarks.

use cingal_core::deploy::builtin_code;
use cingal_core::security::{PrivateKey, Signer};
use cingal_core::{Bundle, BundleDraft, Datum, EntityId};

pub fn signer() -> Signer {
    Signer::new(EntityId::new("bench").unwrap(), PrivateKey::from_seed([0xBE; 32]))
}

/// A signed bundle carrying `data` text datums of `size` bytes each.
pub fn sample_bundle(data: usize, size: usize) -> Bundle {
    let mut d = BundleDraft::new(builtin_code("demo.Source"));
    for i in 0..data {
        let payload: String = (0..size).map(|j| char::from(b'a' + ((i + j) % 26) as u8)).collect();
        d = d.with_datum(Datum::text(format!("d{i}"), payload));
    }
    signer().sign(d)
}

//! Content hashes used to tie artifacts to the configs that produced them.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the compact JSON serialization. Field order follows the struct
/// definition, so equal values always hash equally.
pub fn json_sha256<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config types serialize"))
}

//! Stable hashing used for seeds, fingerprints and fixture keys.

use sha2::{Digest, Sha256};

/// Hash a sequence of string parts into a stable 64-bit value.
///
/// Parts are length-prefixed so `["ab", "c"]` and `["a", "bc"]` differ.
pub fn stable_hash(parts: &[&str]) -> u64 {
    let digest = digest(parts);
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Hex form of the same digest, truncated to 16 bytes.
pub fn stable_hex(parts: &[&str]) -> String {
    digest(parts)[..16].iter().map(|b| format!("{b:02x}")).collect()
}

fn digest(parts: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part.as_bytes());
    }
    hasher.finalize().into()
}

/// Seed for one agentic attempt of one sample.
pub fn attempt_seed(sample_id: &str, attempt: u32) -> u64 {
    stable_hash(&["attempt", sample_id, &attempt.to_string()])
}

/// Seed for a single-pass (tier 1 / tier 2) request.
pub fn pass_seed(sample_id: &str, tier: u8) -> u64 {
    stable_hash(&["pass", sample_id, &tier.to_string()])
}

//! SHA-256 based checksums for architectures, datasets and artifact files.

use sha2::{Digest, Sha256};

/// First 8 bytes of the SHA-256 digest, read little-endian.
pub fn digest64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// Full SHA-256 digest as lowercase hex.
pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

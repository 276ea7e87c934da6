//! Merkle root over an ordered list of transaction hashes.
//!
//! Each level pairs adjacent digests left to right and hashes their raw
//! concatenation. A level with an odd count pairs its last digest with
//! itself. A single leaf is its own root.

use thiserror::Error;

use crate::crypto::{hash_concat, Digest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MerkleError {
    #[error("cannot compute a merkle root over zero leaves")]
    EmptyInput,
}

pub fn merkle_root(leaves: &[Digest]) -> Result<Digest, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyInput);
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let left = &pair[0];
                let right = pair.get(1).unwrap_or(left);
                hash_concat(&[left.as_bytes(), right.as_bytes()])
            })
            .collect();
    }
    Ok(level[0])
}

// Copyright (c) The redstuff authors
// SPDX-License-Identifier: Apache-2.0

//! Node identities and the signed statements of the protocol.
//!
//! Signatures are Ed25519. Every statement is prefixed with a domain string
//! so a signature over one kind of statement never verifies as another.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::commitments::{sha256, BlobId};
use crate::{Epoch, ShardIndex};

/// Identity of a storage node, a client or the chain in transcripts.
pub type NodeId = u32;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey(pub [u8; 32]);

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pk:{}", &hex::encode(self.0)[..12])
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sig:{}", &hex::encode(self.0)[..12])
    }
}

macro_rules! bytes_serde {
    ($t:ty, $n:expr) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                crate::hex_bytes::serialize(&self.0, s)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let v = crate::hex_bytes::deserialize(d)?;
                let arr: [u8; $n] = v
                    .try_into()
                    .map_err(|_| serde::de::Error::custom(concat!("expected ", $n, " bytes")))?;
                Ok(Self(arr))
            }
        }
    };
}

bytes_serde!(PublicKey, 32);
bytes_serde!(Signature, 64);

impl PublicKey {
    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        key.verify(message, &sig).is_ok()
    }
}

#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Keypair").field(&self.public()).finish()
    }
}

impl Keypair {
    pub fn from_secret(secret: [u8; 32]) -> Self {
        Self {
            signing: SigningKey::from_bytes(&secret),
        }
    }

    /// Deterministic key for `node` under a scenario seed.
    pub fn derive(seed: u64, node: NodeId) -> Self {
        let mut material = b"redstuff/key".to_vec();
        material.extend_from_slice(&seed.to_be_bytes());
        material.extend_from_slice(&node.to_be_bytes());
        Self::from_secret(sha256(&material).0)
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }

    pub fn sign_statement(&self, statement: &Statement) -> Signature {
        self.sign(&statement.to_bytes())
    }
}

/// Everything a node ever signs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statement {
    /// The signer holds verified slivers for `blob` in `epoch`'s committee.
    StorageAck { blob: BlobId, epoch: Epoch },
    /// The signer verified an inconsistency proof for `blob`.
    Inconsistent { blob: BlobId },
    /// The signer has stopped serving reads for `epoch`'s challenge.
    ChallengeAck { epoch: Epoch },
    /// The signer, as owner of shard `verifier`, checked every challenged
    /// symbol `prover` sent it.
    ChallengeConfirm {
        epoch: Epoch,
        prover: ShardIndex,
        verifier: ShardIndex,
    },
    /// The signer holds all of its shards' state for `epoch`.
    Ready { epoch: Epoch },
}

impl Statement {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        match self {
            Statement::StorageAck { blob, epoch } => {
                out.extend_from_slice(b"redstuff/ack");
                out.extend_from_slice(&blob.0 .0);
                out.extend_from_slice(&epoch.to_be_bytes());
            }
            Statement::Inconsistent { blob } => {
                out.extend_from_slice(b"redstuff/inconsistent");
                out.extend_from_slice(&blob.0 .0);
            }
            Statement::ChallengeAck { epoch } => {
                out.extend_from_slice(b"redstuff/challenge-ack");
                out.extend_from_slice(&epoch.to_be_bytes());
            }
            Statement::ChallengeConfirm {
                epoch,
                prover,
                verifier,
            } => {
                out.extend_from_slice(b"redstuff/challenge-confirm");
                out.extend_from_slice(&epoch.to_be_bytes());
                out.extend_from_slice(&(*prover as u64).to_be_bytes());
                out.extend_from_slice(&(*verifier as u64).to_be_bytes());
            }
            Statement::Ready { epoch } => {
                out.extend_from_slice(b"redstuff/ready");
                out.extend_from_slice(&epoch.to_be_bytes());
            }
        }
        out
    }

    pub fn verify(&self, key: &PublicKey, signature: &Signature) -> bool {
        key.verify(&self.to_bytes(), signature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commitments::Digest;

    #[test]
    fn derived_keys_are_deterministic_and_distinct() {
        assert_eq!(Keypair::derive(7, 1).public(), Keypair::derive(7, 1).public());
        assert_ne!(Keypair::derive(7, 1).public(), Keypair::derive(7, 2).public());
        assert_ne!(Keypair::derive(7, 1).public(), Keypair::derive(8, 1).public());
    }

    #[test]
    fn statements_are_domain_separated() {
        let k = Keypair::derive(0, 0);
        let blob = BlobId(Digest([3; 32]));
        let ack = Statement::StorageAck { blob, epoch: 0 };
        let sig = k.sign_statement(&ack);
        assert!(ack.verify(&k.public(), &sig));
        assert!(!Statement::StorageAck { blob, epoch: 1 }.verify(&k.public(), &sig));
        assert!(!Statement::Inconsistent { blob }.verify(&k.public(), &sig));
        assert!(!ack.verify(&Keypair::derive(0, 1).public(), &sig));
        assert_eq!(k.sign_statement(&ack), sig, "signing is deterministic");
    }

    #[test]
    fn serde_round_trip() {
        let k = Keypair::derive(1, 1);
        let sig = k.sign(b"m");
        let json = serde_json::to_string(&(k.public(), sig)).unwrap();
        let back: (PublicKey, Signature) = serde_json::from_str(&json).unwrap();
        assert_eq!(back, (k.public(), sig));
        let bin = bincode::serialize(&sig).unwrap();
        assert_eq!(bincode::deserialize::<Signature>(&bin).unwrap(), sig);
    }
}

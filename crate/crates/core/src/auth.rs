//! Message authentication behind a pluggable signer/verifier interface.
//!
//! Two schemes are provided:
//!
//! * [`KeyedHash`]: HMAC-SHA256 with per-principal keys derived from a
//!   deployment secret. Fast; it models authenticated point-to-point channels
//!   and is the default in simulation.
//! * [`KeyPair`] / [`Ed25519Verifier`]: asymmetric Ed25519 signatures, used
//!   for the key material distributed at deployment.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ed25519_dalek::{Signature, Signer as _, SigningKey, Verifier as _, VerifyingKey};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Produces authentication tags for one principal.
pub trait Signer: Send + Sync {
    fn principal(&self) -> &str;
    fn sign(&self, message: &[u8]) -> Vec<u8>;
}

/// Checks tags claimed to be produced by a principal.
pub trait Verifier: Send + Sync {
    fn verify(&self, principal: &str, message: &[u8], tag: &[u8]) -> bool;
}

pub type SharedSigner = Arc<dyn Signer>;
pub type SharedVerifier = Arc<dyn Verifier>;

type HmacSha256 = Hmac<Sha256>;

/// Keyed-hash scheme: each principal's key is `SHA-256(secret || principal)`.
#[derive(Clone)]
pub struct KeyedHash {
    secret: [u8; 32],
}

impl fmt::Debug for KeyedHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KeyedHash(..)")
    }
}

impl KeyedHash {
    pub fn new(secret: [u8; 32]) -> Self {
        KeyedHash { secret }
    }

    pub fn from_seed(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"keyed-hash-deployment-secret");
        h.update(seed.to_le_bytes());
        KeyedHash {
            secret: h.finalize().into(),
        }
    }

    fn key_for(&self, principal: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.secret);
        h.update(principal.as_bytes());
        h.finalize().into()
    }

    pub fn signer(&self, principal: &str) -> KeyedHashSigner {
        KeyedHashSigner {
            principal: principal.to_string(),
            key: self.key_for(principal),
        }
    }
}

impl Verifier for KeyedHash {
    fn verify(&self, principal: &str, message: &[u8], tag: &[u8]) -> bool {
        let mut mac = HmacSha256::new_from_slice(&self.key_for(principal)).expect("any key length");
        mac.update(message);
        mac.verify_slice(tag).is_ok()
    }
}

#[derive(Clone)]
pub struct KeyedHashSigner {
    principal: String,
    key: [u8; 32],
}

impl fmt::Debug for KeyedHashSigner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyedHashSigner({})", self.principal)
    }
}

impl Signer for KeyedHashSigner {
    fn principal(&self) -> &str {
        &self.principal
    }

    fn sign(&self, message: &[u8]) -> Vec<u8> {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("any key length");
        mac.update(message);
        mac.finalize().into_bytes().to_vec()
    }
}

/// An Ed25519 key pair owned by one principal (a replica or a frontend).
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPair {
    pub owner: String,
    #[serde(with = "hex32")]
    pub secret_key: [u8; 32],
    #[serde(with = "hex32")]
    pub public_key: [u8; 32],
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "KeyPair({}, pk={})",
            self.owner,
            hex::encode(&self.public_key[..4])
        )
    }
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(owner: impl Into<String>, rng: &mut R) -> Self {
        let sk = SigningKey::generate(rng);
        KeyPair {
            owner: owner.into(),
            secret_key: sk.to_bytes(),
            public_key: sk.verifying_key().to_bytes(),
        }
    }

    pub fn signer(&self) -> Ed25519Signer {
        Ed25519Signer {
            principal: self.owner.clone(),
            key: SigningKey::from_bytes(&self.secret_key),
        }
    }

    pub fn public(&self) -> PublicKey {
        PublicKey {
            owner: self.owner.clone(),
            key: self.public_key,
        }
    }
}

/// The public half of a [`KeyPair`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PublicKey {
    pub owner: String,
    #[serde(with = "hex32")]
    pub key: [u8; 32],
}

pub struct Ed25519Signer {
    principal: String,
    key: SigningKey,
}

impl Signer for Ed25519Signer {
    fn principal(&self) -> &str {
        &self.principal
    }

    fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.key.sign(message).to_bytes().to_vec()
    }
}

/// Verifies Ed25519 signatures against a directory of public keys.
#[derive(Clone, Default)]
pub struct Ed25519Verifier {
    keys: BTreeMap<String, VerifyingKey>,
}

impl Ed25519Verifier {
    pub fn new<'a>(keys: impl IntoIterator<Item = &'a PublicKey>) -> Self {
        let keys = keys
            .into_iter()
            .filter_map(|pk| {
                VerifyingKey::from_bytes(&pk.key)
                    .ok()
                    .map(|k| (pk.owner.clone(), k))
            })
            .collect();
        Ed25519Verifier { keys }
    }
}

impl Verifier for Ed25519Verifier {
    fn verify(&self, principal: &str, message: &[u8], tag: &[u8]) -> bool {
        let Some(key) = self.keys.get(principal) else {
            return false;
        };
        let Ok(sig) = Signature::from_slice(tag) else {
            return false;
        };
        key.verify(message, &sig).is_ok()
    }
}

mod hex32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(s).map_err(serde::de::Error::custom)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn keyed_hash_round_trip_and_mutation() {
        let scheme = KeyedHash::from_seed(7);
        let s = scheme.signer("replica:B:0");
        let tag = s.sign(b"hello");
        assert!(scheme.verify("replica:B:0", b"hello", &tag));
        assert!(!scheme.verify("replica:B:1", b"hello", &tag));
        assert!(!scheme.verify("replica:B:0", b"hellp", &tag));
        let mut bad = tag.clone();
        bad[0] ^= 1;
        assert!(!scheme.verify("replica:B:0", b"hello", &bad));
        assert!(!KeyedHash::from_seed(8).verify("replica:B:0", b"hello", &tag));
    }

    #[test]
    fn ed25519_public_key_verifies_own_signatures_only() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = KeyPair::generate("a", &mut rng);
        let b = KeyPair::generate("b", &mut rng);
        let v = Ed25519Verifier::new([&a.public(), &b.public()]);
        let sig = a.signer().sign(b"m");
        assert!(v.verify("a", b"m", &sig));
        assert!(!v.verify("b", b"m", &sig));
        assert!(!v.verify("a", b"n", &sig));
        assert!(!v.verify("c", b"m", &sig));
    }

    #[test]
    fn key_generation_is_seeded() {
        let k1 = KeyPair::generate("x", &mut ChaCha20Rng::seed_from_u64(3));
        let k2 = KeyPair::generate("x", &mut ChaCha20Rng::seed_from_u64(3));
        assert_eq!(k1, k2);
        let json = serde_json::to_string(&k1).unwrap();
        assert_eq!(serde_json::from_str::<KeyPair>(&json).unwrap(), k1);
    }
}

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use super::ChainError;

macro_rules! hex_bytes {
    ($name:ident, $len:expr) => {
        #[derive(Clone, Copy, PartialEq, Eq, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_slice(bytes: &[u8]) -> Result<Self, ChainError> {
                bytes
                    .try_into()
                    .map($name)
                    .map_err(|_| ChainError::MalformedKey(format!("{} must be {} bytes", stringify!($name), $len)))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({}..)", stringify!($name), &self.to_hex()[..12])
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
                $name::from_slice(&bytes).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_bytes!(PublicKey, 32);
hex_bytes!(Signature, 64);

/// Signing credentials for one (device, chain) pair.
///
/// The private half never leaves the wallet; everything else in the simulator
/// only ever sees [`PublicKey`]s.
#[derive(Clone)]
pub struct Wallet {
    key_id: String,
    chain_id: String,
    signing: SigningKey,
}

impl fmt::Debug for Wallet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Wallet")
            .field("key_id", &self.key_id)
            .field("chain_id", &self.chain_id)
            .field("public_key", &self.public_key())
            .finish()
    }
}

impl Wallet {
    pub fn from_secret(key_id: impl Into<String>, chain_id: impl Into<String>, secret: [u8; 32]) -> Self {
        Wallet { key_id: key_id.into(), chain_id: chain_id.into(), signing: SigningKey::from_bytes(&secret) }
    }

    /// Deterministically derives a wallet from a run seed and the key id.
    pub fn derive(key_id: impl Into<String>, chain_id: impl Into<String>, seed: u64) -> Self {
        let key_id = key_id.into();
        let chain_id = chain_id.into();
        let mut h = Sha256::new();
        h.update(b"wallet");
        h.update(seed.to_be_bytes());
        h.update((key_id.len() as u32).to_be_bytes());
        h.update(key_id.as_bytes());
        h.update(chain_id.as_bytes());
        let secret: [u8; 32] = h.finalize().into();
        Self::from_secret(key_id, chain_id, secret)
    }

    /// Conventional key id for a device's wallet on a chain.
    pub fn key_id_for(device_id: &str, chain_id: &str) -> String {
        format!("{device_id}@{chain_id}")
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn chain_id(&self) -> &str {
        &self.chain_id
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }
}

/// Checks an Ed25519 signature. A public key that is not a valid curve point is
/// an error rather than a plain `false`.
pub fn verify_sig(public_key: &PublicKey, message: &[u8], signature: &Signature) -> Result<bool, ChainError> {
    let vk = VerifyingKey::from_bytes(&public_key.0).map_err(|e| ChainError::MalformedKey(e.to_string()))?;
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    Ok(vk.verify(message, &sig).is_ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_verify_round_trip() {
        let w = Wallet::derive("boat-1@eos", "eos", 7);
        let sig = w.sign(b"hello");
        assert!(verify_sig(&w.public_key(), b"hello", &sig).unwrap());
    }

    #[test]
    fn other_wallet_rejects() {
        let a = Wallet::derive("a@eos", "eos", 7);
        let b = Wallet::derive("b@eos", "eos", 7);
        let sig = a.sign(b"hello");
        assert!(!verify_sig(&b.public_key(), b"hello", &sig).unwrap());
    }

    #[test]
    fn any_single_byte_change_rejects() {
        let w = Wallet::derive("a@eos", "eos", 1);
        let msg = b"forensic payload digest".to_vec();
        let sig = w.sign(&msg);
        for i in 0..msg.len() {
            let mut m = msg.clone();
            m[i] ^= 0x01;
            assert!(!verify_sig(&w.public_key(), &m, &sig).unwrap(), "byte {i}");
        }
    }

    #[test]
    fn derivation_is_deterministic() {
        assert_eq!(Wallet::derive("k", "c", 3).public_key(), Wallet::derive("k", "c", 3).public_key());
        assert_ne!(Wallet::derive("k", "c", 3).public_key(), Wallet::derive("k", "c", 4).public_key());
    }

    #[test]
    fn malformed_key_is_an_error() {
        assert!(PublicKey::from_slice(&[1u8; 5]).is_err());
        // y = 2 does not decompress to a curve point
        let mut bad = [0u8; 32];
        bad[0] = 2;
        let sig = Signature([0u8; 64]);
        assert!(verify_sig(&PublicKey(bad), b"m", &sig).is_err());
    }
}

//! Hashing and signature primitives shared by every stage of the workflow.
//!
//! All roles (sensor, evidence, device identity, PKI root) use the same
//! deterministic Schnorr-family scheme, Ed25519. Keys carry their role so
//! that a sensor key can never be used where an evidence key is expected.

use std::fmt;
use std::path::Path;

use ed25519_dalek::{Signature as DalekSignature, Signer, SigningKey, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::CryptoError;

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const PRIVATE_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

/// A 32-byte SHA-256 digest, rendered as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = decode_hex(s)?;
        Self::from_slice(&bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; DIGEST_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::Length { what: "digest", expected: DIGEST_LEN, got: bytes.len() })?;
        Ok(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// SHA-256 of `message`.
pub fn hash(message: &[u8]) -> Digest {
    Digest(Sha256::digest(message).into())
}

/// SHA-256 over the concatenation of `parts`, without materialising it.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Strict lowercase/uppercase hex decoding. Rendering is always lowercase.
pub fn decode_hex(s: &str) -> Result<Vec<u8>, CryptoError> {
    hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))
}

/// Serde adapter for byte strings rendered as lowercase hex.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyRole {
    Sensor,
    Evidence,
    DeviceIdentity,
    PkiRoot,
}

impl KeyRole {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyRole::Sensor => "sensor",
            KeyRole::Evidence => "evidence",
            KeyRole::DeviceIdentity => "device_identity",
            KeyRole::PkiRoot => "pki_root",
        }
    }
}

impl fmt::Display for KeyRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A role-tagged signing key pair.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub role: KeyRole,
    pub public_key: Vec<u8>,
    private_key: Vec<u8>,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("role", &self.role)
            .field("public_key", &hex::encode(&self.public_key))
            .finish_non_exhaustive()
    }
}

/// On-disk key document: `{role, public_key_hex, private_key_hex}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFile {
    pub role: KeyRole,
    pub public_key_hex: String,
    pub private_key_hex: String,
}

impl KeyPair {
    pub fn private_key(&self) -> &[u8] {
        &self.private_key
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        // Construction guarantees a well-formed private key.
        sign(&self.private_key, message).expect("key pair holds a valid private key")
    }

    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        verify(&self.public_key, message, signature)
    }

    pub fn expect_role(&self, role: KeyRole) -> Result<(), CryptoError> {
        if self.role == role {
            Ok(())
        } else {
            Err(CryptoError::WrongRole { expected: role, got: self.role })
        }
    }

    pub fn from_private(role: KeyRole, private_key: &[u8]) -> Result<Self, CryptoError> {
        let signing = signing_key(private_key)?;
        Ok(KeyPair {
            role,
            public_key: signing.verifying_key().to_bytes().to_vec(),
            private_key: private_key.to_vec(),
        })
    }

    pub fn to_file(&self) -> KeyFile {
        KeyFile {
            role: self.role,
            public_key_hex: hex::encode(&self.public_key),
            private_key_hex: hex::encode(&self.private_key),
        }
    }

    pub fn from_file(file: &KeyFile) -> Result<Self, CryptoError> {
        let private = decode_hex(&file.private_key_hex)?;
        let pair = KeyPair::from_private(file.role, &private)?;
        if hex::encode(&pair.public_key) != file.public_key_hex.to_ascii_lowercase() {
            return Err(CryptoError::KeyMismatch);
        }
        Ok(pair)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("key file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, CryptoError> {
        let file: KeyFile = serde_json::from_str(s).map_err(|e| CryptoError::KeyFile(e.to_string()))?;
        KeyPair::from_file(&file)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, CryptoError> {
        let s = std::fs::read_to_string(path).map_err(|e| CryptoError::KeyFile(format!("{}: {e}", path.display())))?;
        KeyPair::from_json(&s)
    }
}

/// Generates a key pair for `role`. With a seed the result is reproducible;
/// without one the OS entropy source is used.
pub fn generate_keypair(role: KeyRole, seed: Option<&[u8]>) -> Result<KeyPair, CryptoError> {
    let secret: [u8; PRIVATE_KEY_LEN] = match seed {
        Some(seed) => seed
            .try_into()
            .map_err(|_| CryptoError::Length { what: "seed", expected: 32, got: seed.len() })?,
        None => {
            let mut buf = [0u8; PRIVATE_KEY_LEN];
            rand::rngs::OsRng.fill_bytes(&mut buf);
            buf
        }
    };
    KeyPair::from_private(role, &secret)
}

fn signing_key(private_key: &[u8]) -> Result<SigningKey, CryptoError> {
    let secret: [u8; PRIVATE_KEY_LEN] = private_key.try_into().map_err(|_| CryptoError::Length {
        what: "private key",
        expected: PRIVATE_KEY_LEN,
        got: private_key.len(),
    })?;
    Ok(SigningKey::from_bytes(&secret))
}

pub fn sign(private_key: &[u8], message: &[u8]) -> Result<Vec<u8>, CryptoError> {
    Ok(signing_key(private_key)?.sign(message).to_bytes().to_vec())
}

/// Malformed keys or signatures verify as `false`.
pub fn verify(public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
    let Ok(pk) = <[u8; PUBLIC_KEY_LEN]>::try_from(public_key) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return false;
    };
    let Ok(sig) = DalekSignature::from_slice(signature) else {
        return false;
    };
    vk.verify_strict(message, &sig).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(b: u8) -> [u8; 32] {
        [b; 32]
    }

    #[test]
    fn empty_string_digest() {
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn hash_parts_matches_concatenation() {
        assert_eq!(hash_parts(&[b"ab", b"", b"cd"]), hash(b"abcd"));
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = generate_keypair(KeyRole::Sensor, Some(&seed(7))).unwrap();
        let b = generate_keypair(KeyRole::Sensor, Some(&seed(7))).unwrap();
        assert_eq!(a, b);
        let c = generate_keypair(KeyRole::Sensor, Some(&seed(8))).unwrap();
        assert_ne!(a.public_key, c.public_key);
    }

    #[test]
    fn malformed_seed_is_rejected() {
        let err = generate_keypair(KeyRole::Sensor, Some(&[1u8; 31])).unwrap_err();
        assert!(matches!(err, CryptoError::Length { what: "seed", .. }));
    }

    #[test]
    fn unseeded_keys_differ() {
        let a = generate_keypair(KeyRole::Evidence, None).unwrap();
        let b = generate_keypair(KeyRole::Evidence, None).unwrap();
        assert_ne!(a.public_key, b.public_key);
    }

    #[test]
    fn every_single_bit_flip_breaks_verification() {
        let kp = generate_keypair(KeyRole::Sensor, Some(&seed(1))).unwrap();
        let msg = b"batch-0001".to_vec();
        let sig = kp.sign(&msg);
        assert!(kp.verify(&msg, &sig));
        for bit in 0..msg.len() * 8 {
            let mut m = msg.clone();
            m[bit / 8] ^= 1 << (bit % 8);
            assert!(!kp.verify(&m, &sig), "message bit {bit}");
        }
        for bit in 0..sig.len() * 8 {
            let mut s = sig.clone();
            s[bit / 8] ^= 1 << (bit % 8);
            assert!(!kp.verify(&msg, &s), "signature bit {bit}");
        }
    }

    #[test]
    fn cross_key_verification_fails() {
        let a = generate_keypair(KeyRole::Sensor, Some(&seed(1))).unwrap();
        let b = generate_keypair(KeyRole::Sensor, Some(&seed(2))).unwrap();
        let sig = a.sign(b"m");
        assert!(!verify(&b.public_key, b"m", &sig));
    }

    #[test]
    fn malformed_inputs_are_false_not_panics() {
        let kp = generate_keypair(KeyRole::Sensor, Some(&seed(3))).unwrap();
        let sig = kp.sign(b"m");
        assert!(!verify(&kp.public_key[..31], b"m", &sig));
        assert!(!verify(&kp.public_key, b"m", &sig[..63]));
        assert!(!verify(&[0xff; 32], b"m", &sig));
        assert!(sign(&[0u8; 5], b"m").is_err());
    }

    #[test]
    fn role_is_checked() {
        let kp = generate_keypair(KeyRole::Evidence, Some(&seed(4))).unwrap();
        assert!(kp.expect_role(KeyRole::Evidence).is_ok());
        assert!(matches!(
            kp.expect_role(KeyRole::Sensor),
            Err(CryptoError::WrongRole { expected: KeyRole::Sensor, got: KeyRole::Evidence })
        ));
    }

    #[test]
    fn key_file_round_trip() {
        let kp = generate_keypair(KeyRole::PkiRoot, Some(&seed(5))).unwrap();
        let json = kp.to_json();
        assert!(json.contains("\"role\": \"pki_root\""));
        let back = KeyPair::from_json(&json).unwrap();
        assert_eq!(back, kp);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn key_file_with_wrong_public_half_is_rejected() {
        let a = generate_keypair(KeyRole::Sensor, Some(&seed(5))).unwrap();
        let b = generate_keypair(KeyRole::Sensor, Some(&seed(6))).unwrap();
        let mut file = a.to_file();
        file.public_key_hex = hex::encode(&b.public_key);
        assert!(matches!(KeyPair::from_file(&file), Err(CryptoError::KeyMismatch)));
    }
}

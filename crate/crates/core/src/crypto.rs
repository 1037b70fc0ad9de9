//! Hash, MAC, AEAD, signature and deterministic randomness primitives
//! shared by every other module.

use aes::Aes128;
use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes128Gcm, Nonce};
use cmac::{Cmac, Mac};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as Sha2Digest, Sha256};

/// 32-byte SHA-256 digest. Doubles as enclave measurement and PCR value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let v = hex::decode(s).ok()?;
        let arr: [u8; 32] = v.try_into().ok()?;
        Some(Digest(arr))
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

/// 16-byte AES-CMAC tag.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MacTag(pub [u8; 16]);

impl MacTag {
    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl std::fmt::Debug for MacTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MacTag({})", hex::encode(self.0))
    }
}

/// 128-bit symmetric key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymKey(pub [u8; 16]);

impl SymKey {
    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl std::fmt::Debug for SymKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // keys are secret; keep them out of debug output and traces
        write!(f, "SymKey(..)")
    }
}

/// SHA-256 over a byte sequence.
pub fn hash(msg: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(msg);
    Digest(h.finalize().into())
}

/// SHA-256 over the concatenation of several parts.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Digests are 32 bytes but CMAC keys are 16; whenever a digest is used
/// as a key it is truncated to its first 16 bytes.
pub fn truncate16(d: &Digest) -> SymKey {
    let mut k = [0u8; 16];
    k.copy_from_slice(&d.0[..16]);
    SymKey(k)
}

/// AES-128 CMAC.
pub fn cmac(key: &SymKey, msg: &[u8]) -> MacTag {
    let mut mac = <Cmac<Aes128> as Mac>::new_from_slice(&key.0).expect("16-byte key");
    mac.update(msg);
    let out = mac.finalize().into_bytes();
    let mut tag = [0u8; 16];
    tag.copy_from_slice(&out);
    MacTag(tag)
}

/// CMAC over the concatenation of several parts.
pub fn cmac_parts(key: &SymKey, parts: &[&[u8]]) -> MacTag {
    let mut mac = <Cmac<Aes128> as Mac>::new_from_slice(&key.0).expect("16-byte key");
    for p in parts {
        mac.update(p);
    }
    let out = mac.finalize().into_bytes();
    let mut tag = [0u8; 16];
    tag.copy_from_slice(&out);
    MacTag(tag)
}

/// AEAD authentication failure: tampering, wrong key, wrong nonce or aad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("authenticated decryption failed")]
pub struct AuthFailure;

/// AES-128-GCM seal. Output is ciphertext followed by the 16-byte tag.
pub fn aead_seal(key: &SymKey, nonce: &[u8; 12], plaintext: &[u8], aad: &[u8]) -> Vec<u8> {
    let cipher = Aes128Gcm::new_from_slice(&key.0).expect("16-byte key");
    cipher
        .encrypt(
            Nonce::from_slice(nonce),
            Payload {
                msg: plaintext,
                aad,
            },
        )
        .expect("gcm encryption is infallible for in-memory buffers")
}

/// AES-128-GCM open.
pub fn aead_open(
    key: &SymKey,
    nonce: &[u8; 12],
    ciphertext: &[u8],
    aad: &[u8],
) -> Result<Vec<u8>, AuthFailure> {
    let cipher = Aes128Gcm::new_from_slice(&key.0).expect("16-byte key");
    cipher
        .decrypt(
            Nonce::from_slice(nonce),
            Payload {
                msg: ciphertext,
                aad,
            },
        )
        .map_err(|_| AuthFailure)
}

/// Seeded, reproducible random stream. All randomness in the simulator
/// flows through one of these; there is no ambient entropy.
pub struct DeterministicRng(ChaCha20Rng);

impl DeterministicRng {
    pub fn from_seed(seed: u64) -> Self {
        DeterministicRng(ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn bytes(&mut self, n: usize) -> Vec<u8> {
        let mut v = vec![0u8; n];
        self.0.fill_bytes(&mut v);
        v
    }

    pub fn bytes32(&mut self) -> [u8; 32] {
        let mut v = [0u8; 32];
        self.0.fill_bytes(&mut v);
        v
    }

    pub fn bytes16(&mut self) -> [u8; 16] {
        let mut v = [0u8; 16];
        self.0.fill_bytes(&mut v);
        v
    }

    pub fn inner(&mut self) -> &mut ChaCha20Rng {
        &mut self.0
    }
}

/// Ed25519 signature, opaque to callers.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub(crate) ed25519_dalek::Signature);

impl Signature {
    pub fn to_bytes(&self) -> [u8; 64] {
        self.0.to_bytes()
    }

    pub fn from_bytes(b: &[u8; 64]) -> Signature {
        Signature(ed25519_dalek::Signature::from_bytes(b))
    }
}

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0.to_bytes()[..8]))
    }
}

/// Public half of a signature key pair.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct VerifyKey(pub(crate) ed25519_dalek::VerifyingKey);

impl VerifyKey {
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        use ed25519_dalek::Verifier;
        self.0.verify(msg, &sig.0).is_ok()
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn from_bytes(b: &[u8; 32]) -> Option<VerifyKey> {
        ed25519_dalek::VerifyingKey::from_bytes(b).ok().map(VerifyKey)
    }
}

impl std::fmt::Debug for VerifyKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VerifyKey({})", hex::encode(&self.0.to_bytes()[..8]))
    }
}

/// Ed25519 key pair. The signing half never leaves this struct.
pub struct SigKeyPair {
    signing: ed25519_dalek::SigningKey,
}

impl SigKeyPair {
    pub fn generate(rng: &mut DeterministicRng) -> Self {
        SigKeyPair {
            signing: ed25519_dalek::SigningKey::generate(rng.inner()),
        }
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        use ed25519_dalek::Signer;
        Signature(self.signing.sign(msg))
    }

    pub fn public(&self) -> VerifyKey {
        VerifyKey(self.signing.verifying_key())
    }
}

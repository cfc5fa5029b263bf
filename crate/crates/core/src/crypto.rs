//! Hash and signature primitives.
//!
//! Two things come out of hashing a block: a full SHA-256 [`Digest`], used
//! for hash links and identity, and a profile-dependent [`HashValue`], the
//! first `bits` bits of that digest read as a big-endian unsigned integer.
//! Mining thresholds compare against the `HashValue`, so a narrow profile
//! makes real mining finish in milliseconds without weakening the links.
//!
//! Signatures are Ed25519 in every profile.

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use num_bigint::BigUint;
use num_traits::One;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SECRET_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

/// Smallest hash width a profile may use.
pub const MIN_PROFILE_BITS: u32 = 8;
/// Width of the production profile, the full SHA-256 output.
pub const PRODUCTION_BITS: u32 = 256;
/// Default width of the test profile.
pub const DEFAULT_TEST_BITS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("secret key must be {SECRET_KEY_LEN} bytes, got {0}")]
    SecretKeyLength(usize),
    #[error("public key must be {PUBLIC_KEY_LEN} bytes, got {0}")]
    PublicKeyLength(usize),
    #[error("signature must be {SIGNATURE_LEN} bytes, got {0}")]
    SignatureLength(usize),
    #[error("digest must be {DIGEST_LEN} bytes, got {0}")]
    DigestLength(usize),
    #[error("hash profile width must be in [{MIN_PROFILE_BITS}, {PRODUCTION_BITS}] bits, got {0}")]
    ProfileBits(u32),
    #[error("invalid hex: {0}")]
    Hex(String),
    #[error("hex must be lowercase")]
    HexCase,
}

fn decode_hex_exact<const N: usize>(s: &str) -> Result<[u8; N], CryptoError> {
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err(CryptoError::HexCase);
    }
    let bytes = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
    bytes
        .as_slice()
        .try_into()
        .map_err(|_| CryptoError::Hex(format!("expected {N} bytes, got {}", bytes.len())))
}

/// Full SHA-256 output of some canonical bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    /// The all-zero digest, used as the genesis block's predecessor.
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn of(data: &[u8]) -> Self {
        Digest(Sha256::digest(data).into())
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl FromStr for Digest {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_hex_exact(s).map(Digest)
    }
}

/// An unsigned hash value in `[0, M]` for the profile that produced it.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct HashValue(BigUint);

impl HashValue {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn into_inner(self) -> BigUint {
        self.0
    }
}

impl fmt::Display for HashValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Hash width in use. `M = 2^bits - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HashProfile {
    bits: u32,
}

impl HashProfile {
    pub const PRODUCTION: HashProfile = HashProfile { bits: PRODUCTION_BITS };

    pub fn production() -> Self {
        Self::PRODUCTION
    }

    pub fn test(bits: u32) -> Result<Self, CryptoError> {
        if !(MIN_PROFILE_BITS..=PRODUCTION_BITS).contains(&bits) {
            return Err(CryptoError::ProfileBits(bits));
        }
        Ok(HashProfile { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn is_production(&self) -> bool {
        self.bits == PRODUCTION_BITS
    }

    /// The maximum hash value `M`.
    pub fn max_hash(&self) -> BigUint {
        (BigUint::one() << self.bits) - BigUint::one()
    }

    /// First `bits` bits of the digest, big-endian.
    pub fn value_of(&self, digest: &Digest) -> HashValue {
        let whole_bytes = self.bits.div_ceil(8) as usize;
        let v = BigUint::from_bytes_be(&digest.0[..whole_bytes]);
        let excess = whole_bytes as u32 * 8 - self.bits;
        HashValue(v >> excess)
    }

    pub fn hash(&self, data: &[u8]) -> HashValue {
        self.value_of(&Digest::of(data))
    }
}

impl Default for HashProfile {
    fn default() -> Self {
        HashProfile {
            bits: DEFAULT_TEST_BITS,
        }
    }
}

impl fmt::Display for HashProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_production() {
            f.write_str("production")
        } else {
            write!(f, "test-{}", self.bits)
        }
    }
}

/// A public key; the identity that mines blocks and holds balances.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Account(pub [u8; PUBLIC_KEY_LEN]);

impl Account {
    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Short prefix for logs and CSV output.
    pub fn short(&self) -> String {
        self.to_hex()[..8].to_string()
    }
}

impl fmt::Display for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Account({})", self.short())
    }
}

impl FromStr for Account {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_hex_exact(s).map(Account)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &self.to_hex()[..16])
    }
}

impl FromStr for Signature {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_hex_exact(s).map(Signature)
    }
}

/// Ed25519 key pair. The public half is derived from the secret.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_secret(secret: &[u8]) -> Result<Self, CryptoError> {
        let bytes: [u8; SECRET_KEY_LEN] = secret
            .try_into()
            .map_err(|_| CryptoError::SecretKeyLength(secret.len()))?;
        Ok(KeyPair {
            signing: SigningKey::from_bytes(&bytes),
        })
    }

    /// Deterministic key pair for tests, simulations and fixtures.
    pub fn from_seed_label(label: &str) -> Self {
        let secret = Digest::of(format!("pom-key:{label}").as_bytes());
        KeyPair {
            signing: SigningKey::from_bytes(&secret.0),
        }
    }

    pub fn account(&self) -> Account {
        Account(self.signing.verifying_key().to_bytes())
    }

    pub fn secret(&self) -> [u8; SECRET_KEY_LEN] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("account", &self.account())
            .finish_non_exhaustive()
    }
}

pub fn sign(secret: &[u8], message: &[u8]) -> Result<Signature, CryptoError> {
    Ok(KeyPair::from_secret(secret)?.sign(message))
}

/// Malformed keys or signatures verify as false.
pub fn verify(public: &Account, message: &[u8], sig: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&public.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    key.verify(message, &sig).is_ok()
}

//! Multi-authority ciphertext-policy encryption of EHR payloads.
//!
//! The five operations (initial setup, authority setup, key generation,
//! encryption, decryption) are realized as a hybrid construction:
//!
//! 1. the policy is compiled to an LSSS program ([`lsss`]);
//! 2. a random secret `s` is split into one share per row;
//! 3. each share is masked with a hashed-ElGamal key encapsulation under the
//!    row attribute's public key `PKᵢ = g₁^{xᵢ}`;
//! 4. the payload key is derived from `s` with HKDF-SHA256 and the EHR bytes
//!    are sealed with XChaCha20-Poly1305 in fixed-size chunks, with the
//!    header digest as associated data.
//!
//! A user key for attribute `i` carries the decapsulation secret `xᵢ` tagged
//! with the holder's GID. Collusion between different users is prevented
//! only by the same-GID check in [`abe_decrypt`]; keys are not
//! cryptographically bound to a GID.
//!
//! Decryption fails with the single error [`AbeError::AccessDenied`] whether
//! the key set does not satisfy the policy or a key is wrong. A payload that
//! fails authentication after the key checked out is reported as
//! [`AbeError::Integrity`].

pub mod container;
pub mod lsss;
pub mod policy;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use bls12_381::{G1Affine, G1Projective, Scalar};
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::abms::GidDirectory;
use crate::attribute::AttributeId;
use crate::pairing::{
    self, decode_g1, hex_codec, random_nonzero_scalar, strip_header, with_header, CurveId, PairingError, PairingParams,
};

pub use container::{EhrCiphertext, RowEncapsulation, DEFAULT_CHUNK_SIZE};
pub use lsss::{policy_to_lsss, LsssProgram};
pub use policy::{policy_parse, policy_satisfied, AccessPolicy, PolicyNode, PolicyParseError};

const ROW_WRAP_SALT: &[u8] = b"abmse/v1/row-wrap";
const PAYLOAD_KEY_INFO: &[u8] = b"abmse/v1/payload-key";
const KEY_CHECK_INFO: &[u8] = b"abmse/v1/key-check";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AbeError {
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error("attribute {0} is already registered for encryption")]
    DuplicateAttribute(AttributeId),
    #[error("authority {authority} does not own attribute {attribute}")]
    ForeignAttribute { authority: String, attribute: AttributeId },
    #[error("unknown gid {0:?}")]
    UnknownGid(String),
    #[error("plaintext must be non-empty")]
    EmptyPlaintext,
    #[error("no public key published for policy attribute {0}")]
    MissingPublicKey(AttributeId),
    #[error("decryption keys belong to different gids")]
    MixedGids,
    #[error("decryption failed: keys do not satisfy the access policy")]
    AccessDenied,
    #[error("ciphertext payload failed authentication")]
    Integrity,
    #[error("malformed ciphertext: {0}")]
    Malformed(String),
}

/// `PKᵢ = g₁^{xᵢ}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AbePublicKey(G1Affine);

impl AbePublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        with_header(&self.0.to_compressed())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PairingError> {
        let p = decode_g1("abe public key", strip_header("abe public key", bytes, 48)?)?;
        if bool::from(p.is_identity()) {
            return Err(PairingError::Malformed { what: "abe public key", reason: "identity point" });
        }
        Ok(Self(p))
    }
}

hex_codec!(AbePublicKey, "abe public key");

/// Decapsulation secret `xᵢ`.
#[derive(Clone, PartialEq, Eq)]
pub struct AbeSecret(Scalar);

impl AbeSecret {
    pub fn to_bytes(&self) -> Vec<u8> {
        with_header(&self.0.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PairingError> {
        let body: [u8; 32] = strip_header("abe secret", bytes, 32)?.try_into().expect("length checked");
        let s: Option<Scalar> = Scalar::from_bytes(&body).into();
        match s {
            Some(s) if s != Scalar::zero() => Ok(Self(s)),
            _ => Err(PairingError::InvalidScalar),
        }
    }
}

impl fmt::Debug for AbeSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AbeSecret(<redacted>)")
    }
}

hex_codec!(AbeSecret, "abe secret");

/// `(PKᵢ, SKᵢ)` for one attribute.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbeAuthorityKeys {
    pub attribute: AttributeId,
    pub public_key: AbePublicKey,
    pub master_secret: AbeSecret,
}

/// `Kᵢ,GID`: decryption capability for one attribute, tagged with its holder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbeUserKey {
    pub attribute: AttributeId,
    pub gid: String,
    pub key_material: AbeSecret,
}

pub trait PublicKeyLookup {
    fn public_key(&self, attribute: &AttributeId) -> Option<AbePublicKey>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKeyRegistry {
    keys: BTreeMap<AttributeId, AbePublicKey>,
}

impl PublicKeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&mut self, attribute: AttributeId, pk: AbePublicKey) -> Result<(), AbeError> {
        if self.keys.contains_key(&attribute) {
            return Err(AbeError::DuplicateAttribute(attribute));
        }
        self.keys.insert(attribute, pk);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl PublicKeyLookup for PublicKeyRegistry {
    fn public_key(&self, attribute: &AttributeId) -> Option<AbePublicKey> {
        self.keys.get(attribute).copied()
    }
}

/// Encryption-side attribute authority.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncryptionAuthority {
    authority_id: String,
    keys: BTreeMap<String, AbeAuthorityKeys>,
}

impl EncryptionAuthority {
    pub fn new(authority_id: impl Into<String>) -> Self {
        Self { authority_id: authority_id.into(), keys: BTreeMap::new() }
    }

    pub fn authority_id(&self) -> &str {
        &self.authority_id
    }

    pub fn setup_attribute<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        params: &PairingParams,
        attribute: &AttributeId,
        rng: &mut R,
    ) -> Result<&AbeAuthorityKeys, AbeError> {
        self.check_owned(attribute)?;
        if self.keys.contains_key(attribute.name()) {
            return Err(AbeError::DuplicateAttribute(attribute.clone()));
        }
        let keys = abe_authority_setup(params, attribute, rng)?;
        Ok(self.keys.entry(attribute.name().to_owned()).or_insert(keys))
    }

    pub fn attribute_keys(&self, name: &str) -> Option<&AbeAuthorityKeys> {
        self.keys.get(name)
    }

    pub fn attributes(&self) -> impl Iterator<Item = &AbeAuthorityKeys> {
        self.keys.values()
    }

    pub fn keygen(
        &self,
        params: &PairingParams,
        attribute: &AttributeId,
        gid: &str,
        directory: &impl GidDirectory,
    ) -> Result<AbeUserKey, AbeError> {
        self.check_owned(attribute)?;
        let master = self.keys.get(attribute.name()).ok_or_else(|| AbeError::ForeignAttribute {
            authority: self.authority_id.clone(),
            attribute: attribute.clone(),
        })?;
        abe_keygen(params, attribute, gid, master, directory)
    }

    fn check_owned(&self, attribute: &AttributeId) -> Result<(), AbeError> {
        if attribute.authority_id() != self.authority_id {
            return Err(AbeError::ForeignAttribute {
                authority: self.authority_id.clone(),
                attribute: attribute.clone(),
            });
        }
        Ok(())
    }
}

pub fn abe_initial_setup(security_bits: u32) -> Result<PairingParams, AbeError> {
    Ok(pairing::setup(security_bits)?)
}

pub fn abe_authority_setup<R: RngCore + CryptoRng + ?Sized>(
    params: &PairingParams,
    attribute: &AttributeId,
    rng: &mut R,
) -> Result<AbeAuthorityKeys, AbeError> {
    let x = random_nonzero_scalar(rng)?;
    Ok(AbeAuthorityKeys {
        attribute: attribute.clone(),
        public_key: AbePublicKey(G1Affine::from(G1Projective::from(params.g1_generator()) * x)),
        master_secret: AbeSecret(x),
    })
}

pub fn abe_keygen(
    _params: &PairingParams,
    attribute: &AttributeId,
    gid: &str,
    master: &AbeAuthorityKeys,
    directory: &impl GidDirectory,
) -> Result<AbeUserKey, AbeError> {
    if gid.is_empty() || !directory.is_registered(gid) {
        return Err(AbeError::UnknownGid(gid.to_owned()));
    }
    if master.attribute != *attribute {
        return Err(AbeError::ForeignAttribute {
            authority: master.attribute.authority_id().to_owned(),
            attribute: attribute.clone(),
        });
    }
    Ok(AbeUserKey { attribute: attribute.clone(), gid: gid.to_owned(), key_material: master.master_secret.clone() })
}

fn row_pad(shared: &G1Affine, ephemeral: &[u8; 48], row: usize, label: &AttributeId) -> [u8; 32] {
    let mut ikm = Vec::with_capacity(96);
    ikm.extend_from_slice(&shared.to_compressed());
    ikm.extend_from_slice(ephemeral);
    let hk = Hkdf::<Sha256>::new(Some(ROW_WRAP_SALT), &ikm);
    let mut info = (row as u32).to_be_bytes().to_vec();
    info.extend_from_slice(label.to_string().as_bytes());
    let mut pad = [0u8; 32];
    hk.expand(&info, &mut pad).expect("32 bytes is a valid HKDF length");
    pad
}

fn xor32(a: &[u8; 32], b: &[u8; 32]) -> [u8; 32] {
    std::array::from_fn(|i| a[i] ^ b[i])
}

fn derive_payload_keys(secret: &Scalar, nonce_prefix: &[u8]) -> ([u8; 32], [u8; 32]) {
    let hk = Hkdf::<Sha256>::new(Some(nonce_prefix), &secret.to_bytes());
    let mut key = [0u8; 32];
    let mut check = [0u8; 32];
    hk.expand(PAYLOAD_KEY_INFO, &mut key).expect("valid length");
    hk.expand(KEY_CHECK_INFO, &mut check).expect("valid length");
    (key, check)
}

fn chunk_nonce(prefix: &[u8; container::NONCE_PREFIX_LEN], index: u32, last: bool) -> XNonce {
    let mut n = [0u8; 24];
    n[..container::NONCE_PREFIX_LEN].copy_from_slice(prefix);
    n[19..23].copy_from_slice(&index.to_be_bytes());
    n[23] = u8::from(last);
    XNonce::from(n)
}

/// Encrypt with the default chunk size.
pub fn abe_encrypt<R: RngCore + CryptoRng + ?Sized>(
    params: &PairingParams,
    plaintext: &[u8],
    policy: &AccessPolicy,
    pks: &impl PublicKeyLookup,
    rng: &mut R,
) -> Result<EhrCiphertext, AbeError> {
    abe_encrypt_chunked(params, plaintext, policy, pks, DEFAULT_CHUNK_SIZE, rng)
}

pub fn abe_encrypt_chunked<R: RngCore + CryptoRng + ?Sized>(
    params: &PairingParams,
    plaintext: &[u8],
    policy: &AccessPolicy,
    pks: &impl PublicKeyLookup,
    chunk_size: u32,
    rng: &mut R,
) -> Result<EhrCiphertext, AbeError> {
    if plaintext.is_empty() {
        return Err(AbeError::EmptyPlaintext);
    }
    assert!(chunk_size > 0, "chunk size must be positive");
    let program = LsssProgram::from_policy(policy);
    let row_keys = program
        .row_labels()
        .iter()
        .map(|label| pks.public_key(label).ok_or_else(|| AbeError::MissingPublicKey(label.clone())))
        .collect::<Result<Vec<_>, _>>()?;

    let secret = random_nonzero_scalar(rng)?;
    let shares = program.share(secret, rng)?;
    let g1 = G1Projective::from(params.g1_generator());
    let mut encapsulations = Vec::with_capacity(shares.len());
    for (row, (share, pk)) in shares.iter().zip(&row_keys).enumerate() {
        let r = random_nonzero_scalar(rng)?;
        let ephemeral = G1Affine::from(g1 * r).to_compressed();
        let shared = G1Affine::from(G1Projective::from(pk.0) * r);
        let pad = row_pad(&shared, &ephemeral, row, &program.row_labels()[row]);
        encapsulations.push(RowEncapsulation { ephemeral, wrapped_share: xor32(&share.to_bytes(), &pad) });
    }

    let mut payload_nonce = [0u8; container::NONCE_PREFIX_LEN];
    rng.try_fill_bytes(&mut payload_nonce).map_err(|e| PairingError::Entropy(e.to_string()))?;
    let (payload_key, key_check) = derive_payload_keys(&secret, &payload_nonce);

    let mut ct = EhrCiphertext {
        version: container::CONTAINER_VERSION,
        curve: CurveId::Bls12_381,
        policy: policy.clone(),
        encapsulations,
        key_check,
        payload_nonce,
        chunk_size,
        plaintext_len: plaintext.len() as u64,
        payload: Vec::new(),
    };
    let chunk_count = container::expected_chunks(ct.plaintext_len, chunk_size);
    // header_bytes() encodes the chunk count from payload.len(); reserve the slots first
    ct.payload = vec![Vec::new(); chunk_count as usize];
    let aad = ct.header_digest();
    let aead = XChaCha20Poly1305::new((&payload_key).into());
    for (i, chunk) in plaintext.chunks(chunk_size as usize).enumerate() {
        let nonce = chunk_nonce(&payload_nonce, i as u32, i as u64 + 1 == chunk_count);
        ct.payload[i] = aead
            .encrypt(&nonce, Payload { msg: chunk, aad: &aad })
            .map_err(|_| AbeError::Malformed("payload encryption failed".into()))?;
    }
    Ok(ct)
}

/// Recover the plaintext if the attributes of `keys` satisfy the policy.
pub fn abe_decrypt(params: &PairingParams, ct: &EhrCiphertext, keys: &[AbeUserKey]) -> Result<Vec<u8>, AbeError> {
    let _ = params;
    if let Some(first) = keys.first() {
        if keys.iter().any(|k| k.gid != first.gid) {
            return Err(AbeError::MixedGids);
        }
    }
    let program = LsssProgram::from_policy(&ct.policy);
    if program.rows() != ct.encapsulations.len() {
        return Err(AbeError::Malformed("encapsulation count does not match policy".into()));
    }
    let mut by_attr: BTreeMap<&AttributeId, &AbeSecret> = BTreeMap::new();
    for k in keys {
        by_attr.entry(&k.attribute).or_insert(&k.key_material);
    }
    let held: BTreeSet<AttributeId> = by_attr.keys().map(|a| (*a).clone()).collect();
    let rows = program.rows_for(&held);

    // decapsulate every row we hold a key for, whether or not it is needed
    let mut shares = Vec::with_capacity(rows.len());
    let mut bad_share = false;
    for &row in &rows {
        let label = &program.row_labels()[row];
        let enc = &ct.encapsulations[row];
        let ephemeral = decode_g1("ephemeral point", &enc.ephemeral).map_err(|_| AbeError::AccessDenied)?;
        let secret = by_attr[label];
        let shared = G1Affine::from(G1Projective::from(ephemeral) * secret.0);
        let bytes = xor32(&enc.wrapped_share, &row_pad(&shared, &enc.ephemeral, row, label));
        let share: Option<Scalar> = Scalar::from_bytes(&bytes).into();
        bad_share |= share.is_none();
        shares.push(share.unwrap_or(Scalar::zero()));
    }

    let omega = program.reconstruction_coefficients(&rows).ok_or(AbeError::AccessDenied)?;
    if bad_share {
        return Err(AbeError::AccessDenied);
    }
    let secret = shares.iter().zip(&omega).fold(Scalar::zero(), |acc, (s, w)| acc + s * w);
    let (payload_key, key_check) = derive_payload_keys(&secret, &ct.payload_nonce);
    if !bool::from(key_check.ct_eq(&ct.key_check)) {
        return Err(AbeError::AccessDenied);
    }

    let expected = container::expected_chunks(ct.plaintext_len, ct.chunk_size);
    if ct.payload.len() as u64 != expected {
        return Err(AbeError::Malformed("chunk count does not match plaintext length".into()));
    }
    let aad = ct.header_digest();
    let aead = XChaCha20Poly1305::new((&payload_key).into());
    let mut out = Vec::with_capacity(ct.plaintext_len as usize);
    for (i, chunk) in ct.payload.iter().enumerate() {
        let nonce = chunk_nonce(&ct.payload_nonce, i as u32, i as u64 + 1 == expected);
        let plain = aead.decrypt(&nonce, Payload { msg: chunk, aad: &aad }).map_err(|_| AbeError::Integrity)?;
        out.extend_from_slice(&plain);
    }
    if out.len() as u64 != ct.plaintext_len {
        return Err(AbeError::Integrity);
    }
    Ok(out)
}

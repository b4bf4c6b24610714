//! BLS short signatures over BLS12-381.
//!
//! Signatures live in G1 (48-byte compressed points) and verification keys in
//! G2 (96 bytes). A signature on `m` under signing scalar `x` is
//! `σ = H(m)^x`, where `H` is the RFC 9380 hash-to-curve suite
//! `BLS12381G1_XMD:SHA-256_SSWU_RO_` with a project-specific domain tag.
//! Verification checks `e(σ, g₂) = e(H(m), vk)` with a shared final
//! exponentiation, i.e. two Miller loops.
//!
//! Every serialized artifact starts with a format version byte followed by
//! the curve id byte, then the compressed point or scalar.

use std::fmt;

use bls12_381::hash_to_curve::{ExpandMsgXmd, HashToCurve};
use bls12_381::{multi_miller_loop, G1Affine, G1Projective, G2Affine, G2Prepared, G2Projective, Gt, Scalar};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Wire format version for every encoding in this module.
pub const ENCODING_VERSION: u8 = 1;

/// Domain separation tag for hashing messages into G1.
pub const HASH_TO_G1_DST: &[u8] = b"ABMSE-V01-CS01-with-BLS12381G1_XMD:SHA-256_SSWU_RO_";

/// The only supported security level, in bits.
pub const SUPPORTED_SECURITY_BITS: u32 = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PairingError {
    #[error("unsupported security level: {0} bits (only 128 is supported)")]
    UnsupportedSecurityLevel(u32),
    #[error("entropy source failed: {0}")]
    Entropy(String),
    #[error("message must be non-empty")]
    EmptyMessage,
    #[error("invalid signing scalar")]
    InvalidScalar,
    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: &'static str },
}

/// Outcome of a well-formed verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        self == Verdict::Accept
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CurveId {
    #[serde(rename = "bls12-381")]
    Bls12_381,
}

impl CurveId {
    pub fn as_byte(self) -> u8 {
        match self {
            CurveId::Bls12_381 => 0x01,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(CurveId::Bls12_381),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CurveId::Bls12_381 => "bls12-381",
        }
    }
}

impl fmt::Display for CurveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn strip_header<'a>(what: &'static str, bytes: &'a [u8], body_len: usize) -> Result<&'a [u8], PairingError> {
    if bytes.len() != body_len + 2 {
        return Err(PairingError::Malformed { what, reason: "wrong length" });
    }
    if bytes[0] != ENCODING_VERSION {
        return Err(PairingError::Malformed { what, reason: "unknown version" });
    }
    if CurveId::from_byte(bytes[1]).is_none() {
        return Err(PairingError::Malformed { what, reason: "unknown curve" });
    }
    Ok(&bytes[2..])
}

pub(crate) fn with_header(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 2);
    out.push(ENCODING_VERSION);
    out.push(CurveId::Bls12_381.as_byte());
    out.extend_from_slice(body);
    out
}

pub(crate) fn decode_g1(what: &'static str, body: &[u8]) -> Result<G1Affine, PairingError> {
    let arr: &[u8; 48] = body.try_into().map_err(|_| PairingError::Malformed { what, reason: "wrong length" })?;
    Option::from(G1Affine::from_compressed(arr)).ok_or(PairingError::Malformed { what, reason: "not a subgroup point" })
}

fn decode_g2(what: &'static str, body: &[u8]) -> Result<G2Affine, PairingError> {
    let arr: &[u8; 96] = body.try_into().map_err(|_| PairingError::Malformed { what, reason: "wrong length" })?;
    Option::from(G2Affine::from_compressed(arr)).ok_or(PairingError::Malformed { what, reason: "not a subgroup point" })
}

/// Sample a uniformly random non-zero scalar.
pub(crate) fn random_nonzero_scalar<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Result<Scalar, PairingError> {
    loop {
        let mut wide = [0u8; 64];
        rng.try_fill_bytes(&mut wide).map_err(|e| PairingError::Entropy(e.to_string()))?;
        let s = Scalar::from_bytes_wide(&wide);
        if s != Scalar::zero() {
            return Ok(s);
        }
    }
}

/// Hex `Display`/`FromStr` and hex-string serde for types with
/// `to_bytes`/`from_bytes`.
macro_rules! hex_codec {
    ($ty:ty, $what:literal) => {
        impl ::std::fmt::Display for $ty {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(&::hex::encode(self.to_bytes()))
            }
        }

        impl ::std::str::FromStr for $ty {
            type Err = $crate::pairing::PairingError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let bytes = ::hex::decode(s.trim())
                    .map_err(|_| $crate::pairing::PairingError::Malformed { what: $what, reason: "invalid hex" })?;
                Self::from_bytes(&bytes)
            }
        }

        impl ::serde::Serialize for $ty {
            fn serialize<S: ::serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.to_string())
            }
        }

        impl<'de> ::serde::Deserialize<'de> for $ty {
            fn deserialize<D: ::serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = <String as ::serde::Deserialize>::deserialize(deserializer)?;
                s.parse().map_err(::serde::de::Error::custom)
            }
        }
    };
}
pub(crate) use hex_codec;

/// System parameters: the curve and its fixed published generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairingParams {
    curve: CurveId,
    g1: G1Affine,
    g2: G2Affine,
}

impl PairingParams {
    /// Deterministic parameters for the requested security level.
    pub fn setup(security_bits: u32) -> Result<Self, PairingError> {
        if security_bits != SUPPORTED_SECURITY_BITS {
            return Err(PairingError::UnsupportedSecurityLevel(security_bits));
        }
        Ok(Self { curve: CurveId::Bls12_381, g1: G1Affine::generator(), g2: G2Affine::generator() })
    }

    pub fn curve_id(&self) -> CurveId {
        self.curve
    }

    pub fn g1_generator(&self) -> &G1Affine {
        &self.g1
    }

    pub fn g2_generator(&self) -> &G2Affine {
        &self.g2
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::with_capacity(144);
        body.extend_from_slice(&self.g1.to_compressed());
        body.extend_from_slice(&self.g2.to_compressed());
        with_header(&body)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PairingError> {
        let body = strip_header("params", bytes, 144)?;
        let g1 = decode_g1("params", &body[..48])?;
        let g2 = decode_g2("params", &body[48..])?;
        if bool::from(g1.is_identity()) || bool::from(g2.is_identity()) {
            return Err(PairingError::Malformed { what: "params", reason: "identity generator" });
        }
        Ok(Self { curve: CurveId::Bls12_381, g1, g2 })
    }
}

hex_codec!(PairingParams, "params");

/// Secret signing scalar in `[1, r-1]`.
#[derive(Clone, PartialEq, Eq)]
pub struct SigningKey(Scalar);

impl SigningKey {
    pub fn from_scalar(s: Scalar) -> Result<Self, PairingError> {
        if s == Scalar::zero() {
            return Err(PairingError::InvalidScalar);
        }
        Ok(Self(s))
    }

    pub fn verification_key(&self, params: &PairingParams) -> VerificationKey {
        VerificationKey(G2Affine::from(G2Projective::from(params.g2) * self.0))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        with_header(&self.0.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PairingError> {
        let body = strip_header("signing key", bytes, 32)?;
        let arr: [u8; 32] = body.try_into().expect("length checked");
        let s: Option<Scalar> = Scalar::from_bytes(&arr).into();
        Self::from_scalar(s.ok_or(PairingError::InvalidScalar)?)
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SigningKey(<redacted>)")
    }
}

hex_codec!(SigningKey, "signing key");

/// Public verification point `g₂^x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerificationKey(G2Affine);

impl VerificationKey {
    pub fn point(&self) -> &G2Affine {
        &self.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        with_header(&self.0.to_compressed())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PairingError> {
        let p = decode_g2("verification key", strip_header("verification key", bytes, 96)?)?;
        if bool::from(p.is_identity()) {
            return Err(PairingError::Malformed { what: "verification key", reason: "identity point" });
        }
        Ok(Self(p))
    }
}

hex_codec!(VerificationKey, "verification key");

#[derive(Debug, Clone)]
pub struct BlsKeyPair {
    pub signing_key: SigningKey,
    pub verification_key: VerificationKey,
}

/// A signature: one point of G1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSignature(G1Affine);

impl GroupSignature {
    pub fn point(&self) -> &G1Affine {
        &self.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        with_header(&self.0.to_compressed())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PairingError> {
        decode_g1("signature", strip_header("signature", bytes, 48)?).map(Self)
    }

    /// Projective rendering `(X : Y : Z)` of the signature point, with the
    /// affine representative `Z = 1`. Only for display.
    pub fn projective_display(&self) -> String {
        let raw = self.0.to_uncompressed();
        let mut x = [0u8; 48];
        x.copy_from_slice(&raw[..48]);
        // top three bits of the uncompressed x coordinate carry flags
        x[0] &= 0x1f;
        let z = if bool::from(self.0.is_identity()) { "0" } else { "1" };
        format!("(0x{} : 0x{} : 0x{})", hex::encode(x), hex::encode(&raw[48..]), z)
    }

    /// Scalar multiple of this signature. Useful for fault injection: the
    /// result is a valid subgroup point that no longer verifies.
    pub fn scaled(&self, by: u64) -> Self {
        Self(G1Affine::from(G1Projective::from(self.0) * Scalar::from(by)))
    }
}

hex_codec!(GroupSignature, "signature");

pub fn setup(security_bits: u32) -> Result<PairingParams, PairingError> {
    PairingParams::setup(security_bits)
}

pub fn keygen<R: RngCore + CryptoRng + ?Sized>(
    params: &PairingParams,
    rng: &mut R,
) -> Result<BlsKeyPair, PairingError> {
    let signing_key = SigningKey(random_nonzero_scalar(rng)?);
    let verification_key = signing_key.verification_key(params);
    Ok(BlsKeyPair { signing_key, verification_key })
}

pub fn hash_to_group(_params: &PairingParams, message: &[u8]) -> Result<G1Affine, PairingError> {
    if message.is_empty() {
        return Err(PairingError::EmptyMessage);
    }
    let p = <G1Projective as HashToCurve<ExpandMsgXmd<sha2::Sha256>>>::hash_to_curve([message], HASH_TO_G1_DST);
    Ok(G1Affine::from(p))
}

pub fn bls_sign(params: &PairingParams, key: &SigningKey, message: &[u8]) -> Result<GroupSignature, PairingError> {
    if key.0 == Scalar::zero() {
        return Err(PairingError::InvalidScalar);
    }
    let h = hash_to_group(params, message)?;
    Ok(GroupSignature(G1Affine::from(G1Projective::from(h) * key.0)))
}

/// Accepts iff `e(σ, g₂) = e(H(m), vk)`. A well-formed wrong signature is a
/// `Reject`, never an error.
pub fn bls_verify(
    params: &PairingParams,
    vk: &VerificationKey,
    message: &[u8],
    sig: &GroupSignature,
) -> Result<Verdict, PairingError> {
    let h = hash_to_group(params, message)?;
    if bool::from(sig.0.is_identity()) || bool::from(vk.0.is_identity()) {
        return Ok(Verdict::Reject);
    }
    let neg_g2 = G2Prepared::from(-params.g2);
    let vk_prepared = G2Prepared::from(vk.0);
    let product = multi_miller_loop(&[(&sig.0, &neg_g2), (&h, &vk_prepared)]).final_exponentiation();
    Ok(if product == Gt::identity() { Verdict::Accept } else { Verdict::Reject })
}

/// Verification straight from wire encodings; malformed input is an error
/// distinct from `Reject`.
pub fn bls_verify_encoded(
    params: &PairingParams,
    vk: &[u8],
    message: &[u8],
    sig: &[u8],
) -> Result<Verdict, PairingError> {
    let vk = VerificationKey::from_bytes(vk)?;
    let sig = GroupSignature::from_bytes(sig)?;
    bls_verify(params, &vk, message, &sig)
}

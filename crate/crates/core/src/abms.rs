//! Attribute-based multi-signatures with (t, n)-threshold authentication.
//!
//! Each attribute authority holds one BLS keypair per attribute it issues.
//! A data owner obtains the signing key for each of their attributes from
//! the issuing authority (`extract`), signs the hashed attribute value, and
//! stores the resulting per-attribute signatures in their profile. A verifier
//! checks every signature against the issuing authority's public
//! verification key and authenticates the owner when at least `t` of the `n`
//! presented signatures are valid.
//!
//! The verification side never takes an identity: [`verify_attribute`] and
//! [`verify_threshold`] see only signatures, digests and verification keys.
//!
//! The binding between an extracted key and a GID is administrative: the
//! authority hands out its per-attribute signing scalar and records the
//! issuance. It is not cryptographic, so two owners holding the same
//! attribute hold the same signing key.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attribute::{AttributeDescriptor, AttributeId};
use crate::pairing::{
    self, BlsKeyPair, CurveId, GroupSignature, PairingError, PairingParams, SigningKey, Verdict, VerificationKey,
};

/// Domain tag prepended to attribute values before hashing.
pub const ATTRIBUTE_DIGEST_TAG: &[u8] = b"ABMSE-ATTR-V1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AbmsError {
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error("attribute {0} is already registered")]
    DuplicateAttribute(AttributeId),
    #[error("authority {authority} does not own attribute {attribute}")]
    ForeignAttribute { authority: String, attribute: AttributeId },
    #[error("unknown gid {0:?}")]
    UnknownGid(String),
    #[error("gid must be non-empty")]
    EmptyGid,
    #[error("value does not match the attested value for {0}")]
    ValueMismatch(AttributeId),
    #[error("{attribute} was already attested with a different value for this gid")]
    ConflictingValue { attribute: AttributeId },
    #[error("invalid threshold: need 1 <= t <= n, got t={t}, n={n}")]
    InvalidThreshold { t: usize, n: usize },
    #[error("threshold expects n={expected} signatures, {presented} presented")]
    SignatureCountMismatch { expected: usize, presented: usize },
    #[error("freshly produced signature failed self-verification")]
    SelfVerification,
}

/// `(t, n)`: at least `t` of `n` presented signatures must verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawThreshold", into = "RawThreshold")]
pub struct ThresholdSpec {
    t: usize,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct RawThreshold {
    t: usize,
    n: usize,
}

impl TryFrom<RawThreshold> for ThresholdSpec {
    type Error = AbmsError;

    fn try_from(raw: RawThreshold) -> Result<Self, Self::Error> {
        ThresholdSpec::new(raw.t, raw.n)
    }
}

impl From<ThresholdSpec> for RawThreshold {
    fn from(s: ThresholdSpec) -> Self {
        RawThreshold { t: s.t, n: s.n }
    }
}

impl ThresholdSpec {
    pub fn new(t: usize, n: usize) -> Result<Self, AbmsError> {
        if t == 0 || t > n {
            return Err(AbmsError::InvalidThreshold { t, n });
        }
        Ok(Self { t, n })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

impl std::fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.t, self.n)
    }
}

impl std::str::FromStr for ThresholdSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (t, n) = s.split_once('/').ok_or_else(|| format!("expected t/n, got {s:?}"))?;
        let t = t.trim().parse().map_err(|_| format!("bad t in {s:?}"))?;
        let n = n.trim().parse().map_err(|_| format!("bad n in {s:?}"))?;
        ThresholdSpec::new(t, n).map_err(|e| e.to_string())
    }
}

/// `H(Aᵢ)`: SHA-256 over the domain tag, the length-prefixed attribute id,
/// and the value.
pub fn attribute_digest(attribute: &AttributeId, value: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(ATTRIBUTE_DIGEST_TAG);
    for part in [attribute.authority_id(), attribute.name()] {
        h.update((part.len() as u32).to_be_bytes());
        h.update(part.as_bytes());
    }
    h.update(value.as_bytes());
    h.finalize().into()
}

/// Source of truth for which GIDs are registered participants.
pub trait GidDirectory {
    fn is_registered(&self, gid: &str) -> bool;
}

impl GidDirectory for std::collections::BTreeSet<String> {
    fn is_registered(&self, gid: &str) -> bool {
        self.contains(gid)
    }
}

impl GidDirectory for std::collections::HashSet<String> {
    fn is_registered(&self, gid: &str) -> bool {
        self.contains(gid)
    }
}

/// Lookup of published verification keys.
pub trait VerificationKeyLookup {
    fn verification_key(&self, attribute: &AttributeId) -> Option<VerificationKey>;
}

/// Per-attribute signature and verification keys held by an authority.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthorityAttributeKeys {
    pub attribute: AttributeId,
    pub signature_key: SigningKey,
    pub verification_key: VerificationKey,
}

/// Audit row kept by the authority for every extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuanceRecord {
    pub authority_id: String,
    pub gid: String,
    pub attribute: AttributeDescriptor,
    pub issued_at: DateTime<Utc>,
}

/// `SKᵢ,GID`: signing material handed to one data owner for one attribute.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractedSigningKey {
    pub attribute: AttributeDescriptor,
    pub gid: String,
    pub signing_key: SigningKey,
    pub verification_key: VerificationKey,
    pub issuance_record: IssuanceRecord,
}

/// `σᵢ` together with the hashed value it signs. Carries the attribute id but
/// not the value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSignature {
    pub attribute: AttributeId,
    pub signature: GroupSignature,
    #[serde(with = "hex_digest")]
    pub hashed_value_digest: [u8; 32],
}

pub(crate) mod hex_digest {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        v.try_into().map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))
    }
}

/// An attribute authority on the signing side: a registry of its attribute
/// keypairs plus the issuance log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignatureAuthority {
    authority_id: String,
    keys: BTreeMap<String, AuthorityAttributeKeys>,
    issuance_log: Vec<IssuanceRecord>,
    /// (gid, attribute name) -> attested value
    #[serde(with = "attested_entries")]
    attested: BTreeMap<(String, String), String>,
}

/// JSON object keys must be strings, so the attestation map is stored as a
/// list of `{gid, attribute, value}` rows.
mod attested_entries {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Row {
        gid: String,
        attribute: String,
        value: String,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<(String, String), String>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Row> = m
            .iter()
            .map(|((gid, attribute), value)| Row {
                gid: gid.clone(),
                attribute: attribute.clone(),
                value: value.clone(),
            })
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(String, String), String>, D::Error> {
        let rows = Vec::<Row>::deserialize(d)?;
        Ok(rows.into_iter().map(|r| ((r.gid, r.attribute), r.value)).collect())
    }
}

impl SignatureAuthority {
    pub fn new(authority_id: impl Into<String>) -> Self {
        Self {
            authority_id: authority_id.into(),
            keys: BTreeMap::new(),
            issuance_log: Vec::new(),
            attested: BTreeMap::new(),
        }
    }

    pub fn authority_id(&self) -> &str {
        &self.authority_id
    }

    /// Authority Setup: fresh `(SIKᵢ, VKᵢ)` for one attribute.
    pub fn setup_attribute<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        params: &PairingParams,
        attribute: &AttributeId,
        rng: &mut R,
    ) -> Result<&AuthorityAttributeKeys, AbmsError> {
        self.check_owned(attribute)?;
        if self.keys.contains_key(attribute.name()) {
            return Err(AbmsError::DuplicateAttribute(attribute.clone()));
        }
        let keys = authority_setup(params, attribute, rng)?;
        Ok(self.keys.entry(attribute.name().to_owned()).or_insert(keys))
    }

    pub fn attribute_keys(&self, name: &str) -> Option<&AuthorityAttributeKeys> {
        self.keys.get(name)
    }

    pub fn attributes(&self) -> impl Iterator<Item = &AuthorityAttributeKeys> {
        self.keys.values()
    }

    pub fn issuance_log(&self) -> &[IssuanceRecord] {
        &self.issuance_log
    }

    fn check_owned(&self, attribute: &AttributeId) -> Result<(), AbmsError> {
        if attribute.authority_id() != self.authority_id {
            return Err(AbmsError::ForeignAttribute {
                authority: self.authority_id.clone(),
                attribute: attribute.clone(),
            });
        }
        Ok(())
    }

    /// Extract: hand `gid` the signing key for `attribute` and log the
    /// issuance. Repeated calls for the same `(gid, attribute)` return the
    /// same key; the authority attests one value per gid and attribute.
    pub fn extract(
        &mut self,
        params: &PairingParams,
        gid: &str,
        attribute: &AttributeDescriptor,
        directory: &impl GidDirectory,
        now: DateTime<Utc>,
    ) -> Result<ExtractedSigningKey, AbmsError> {
        if gid.is_empty() {
            return Err(AbmsError::EmptyGid);
        }
        if !directory.is_registered(gid) {
            return Err(AbmsError::UnknownGid(gid.to_owned()));
        }
        self.check_owned(attribute.id())?;
        let keys = self.keys.get(attribute.name()).ok_or_else(|| AbmsError::ForeignAttribute {
            authority: self.authority_id.clone(),
            attribute: attribute.id().clone(),
        })?;
        let slot = (gid.to_owned(), attribute.name().to_owned());
        if let Some(prev) = self.attested.get(&slot) {
            if prev != attribute.value() {
                return Err(AbmsError::ConflictingValue { attribute: attribute.id().clone() });
            }
        }
        let extracted = extract(params, gid, attribute, keys, &self.authority_id, now)?;
        self.attested.insert(slot, attribute.value().to_owned());
        self.issuance_log.push(extracted.issuance_record.clone());
        Ok(extracted)
    }
}

/// Authority Setup for a single attribute, without registry bookkeeping.
pub fn authority_setup<R: RngCore + CryptoRng + ?Sized>(
    params: &PairingParams,
    attribute: &AttributeId,
    rng: &mut R,
) -> Result<AuthorityAttributeKeys, AbmsError> {
    let BlsKeyPair { signing_key, verification_key } = pairing::keygen(params, rng)?;
    Ok(AuthorityAttributeKeys { attribute: attribute.clone(), signature_key: signing_key, verification_key })
}

fn extract(
    params: &PairingParams,
    gid: &str,
    attribute: &AttributeDescriptor,
    keys: &AuthorityAttributeKeys,
    authority_id: &str,
    now: DateTime<Utc>,
) -> Result<ExtractedSigningKey, AbmsError> {
    if keys.attribute != *attribute.id() {
        return Err(AbmsError::ForeignAttribute {
            authority: authority_id.to_owned(),
            attribute: attribute.id().clone(),
        });
    }
    debug_assert_eq!(keys.signature_key.verification_key(params), keys.verification_key);
    Ok(ExtractedSigningKey {
        attribute: attribute.clone(),
        gid: gid.to_owned(),
        signing_key: keys.signature_key.clone(),
        verification_key: keys.verification_key,
        issuance_record: IssuanceRecord {
            authority_id: authority_id.to_owned(),
            gid: gid.to_owned(),
            attribute: attribute.clone(),
            issued_at: now,
        },
    })
}

pub fn abms_initial_setup(security_bits: u32) -> Result<PairingParams, AbmsError> {
    Ok(pairing::setup(security_bits)?)
}

/// Sign: `σᵢ = H(Aᵢ)^{SKᵢ,GID}`. The value must be the one the authority
/// attested.
pub fn sign_attribute(
    params: &PairingParams,
    key: &ExtractedSigningKey,
    attribute_value: &str,
) -> Result<AttributeSignature, AbmsError> {
    if attribute_value != key.attribute.value() {
        return Err(AbmsError::ValueMismatch(key.attribute.id().clone()));
    }
    let digest = attribute_digest(key.attribute.id(), attribute_value);
    let signature = pairing::bls_sign(params, &key.signing_key, &digest)?;
    if !pairing::bls_verify(params, &key.verification_key, &digest, &signature)?.is_accept() {
        return Err(AbmsError::SelfVerification);
    }
    Ok(AttributeSignature { attribute: key.attribute.id().clone(), signature, hashed_value_digest: digest })
}

/// Verify one attribute signature against `VKᵢ`.
pub fn verify_attribute(
    params: &PairingParams,
    sig: &AttributeSignature,
    vk: &VerificationKey,
) -> Result<Verdict, AbmsError> {
    Ok(pairing::bls_verify(params, vk, &sig.hashed_value_digest, &sig.signature)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ThresholdOutcome {
    Authenticated { valid_count: usize },
    Rejected { valid_count: usize },
}

impl ThresholdOutcome {
    pub fn valid_count(&self) -> usize {
        match *self {
            ThresholdOutcome::Authenticated { valid_count } | ThresholdOutcome::Rejected { valid_count } => valid_count,
        }
    }

    pub fn is_authenticated(&self) -> bool {
        matches!(self, ThresholdOutcome::Authenticated { .. })
    }
}

/// Count valid signatures and compare against `t`. Every signature is
/// checked even after the threshold is reached. Signatures whose attribute
/// has no published key count as invalid.
pub fn verify_threshold(
    params: &PairingParams,
    sigs: &[AttributeSignature],
    vks: &impl VerificationKeyLookup,
    spec: ThresholdSpec,
) -> Result<ThresholdOutcome, AbmsError> {
    if sigs.len() != spec.n() {
        return Err(AbmsError::SignatureCountMismatch { expected: spec.n(), presented: sigs.len() });
    }
    let mut valid_count = 0usize;
    for sig in sigs {
        let ok = match vks.verification_key(&sig.attribute) {
            Some(vk) => verify_attribute(params, sig, &vk)?.is_accept(),
            None => false,
        };
        valid_count += usize::from(ok);
    }
    Ok(if valid_count >= spec.t() {
        ThresholdOutcome::Authenticated { valid_count }
    } else {
        ThresholdOutcome::Rejected { valid_count }
    })
}

/// In-memory map of published verification keys.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationKeyRegistry {
    keys: BTreeMap<AttributeId, VerificationKey>,
}

impl VerificationKeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&mut self, attribute: AttributeId, vk: VerificationKey) -> Result<(), AbmsError> {
        if self.keys.contains_key(&attribute) {
            return Err(AbmsError::DuplicateAttribute(attribute));
        }
        self.keys.insert(attribute, vk);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AttributeId, &VerificationKey)> {
        self.keys.iter()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl VerificationKeyLookup for VerificationKeyRegistry {
    fn verification_key(&self, attribute: &AttributeId) -> Option<VerificationKey> {
        self.keys.get(attribute).copied()
    }
}

/// Profile bundle and verification-key registry file formats.
pub mod bundle {
    use super::*;

    pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct BundleEntry {
        pub attribute: String,
        pub authority_id: String,
        pub signature: GroupSignature,
        #[serde(with = "hex_digest")]
        pub digest: [u8; 32],
    }

    /// Versioned container of one owner's attribute signatures. The gid is
    /// optional and is stripped before the bundle is handed to verifiers.
    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct ProfileBundle {
        pub schema_version: u32,
        pub curve: CurveId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub gid: Option<String>,
        pub signatures: Vec<BundleEntry>,
    }

    #[derive(Debug, Error)]
    pub enum BundleError {
        #[error("unsupported bundle schema version {0}")]
        Version(u32),
        #[error("bad attribute in bundle: {0}")]
        Attribute(#[from] crate::attribute::AttributeError),
        #[error(transparent)]
        Json(#[from] serde_json::Error),
    }

    impl ProfileBundle {
        pub fn new(gid: Option<String>, sigs: &[AttributeSignature]) -> Self {
            Self {
                schema_version: BUNDLE_SCHEMA_VERSION,
                curve: CurveId::Bls12_381,
                gid,
                signatures: sigs
                    .iter()
                    .map(|s| BundleEntry {
                        attribute: s.attribute.name().to_owned(),
                        authority_id: s.attribute.authority_id().to_owned(),
                        signature: s.signature,
                        digest: s.hashed_value_digest,
                    })
                    .collect(),
            }
        }

        pub fn stripped(&self) -> Self {
            Self { gid: None, ..self.clone() }
        }

        pub fn signatures(&self) -> Result<Vec<AttributeSignature>, BundleError> {
            self.signatures
                .iter()
                .map(|e| {
                    Ok(AttributeSignature {
                        attribute: AttributeId::new(e.authority_id.clone(), e.attribute.clone())?,
                        signature: e.signature,
                        hashed_value_digest: e.digest,
                    })
                })
                .collect()
        }

        pub fn to_json(&self) -> String {
            serde_json::to_string_pretty(self).expect("bundle serializes")
        }

        pub fn from_json(s: &str) -> Result<Self, BundleError> {
            let b: Self = serde_json::from_str(s)?;
            if b.schema_version != BUNDLE_SCHEMA_VERSION {
                return Err(BundleError::Version(b.schema_version));
            }
            Ok(b)
        }
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct RegistryRow {
        pub authority_id: String,
        pub attribute: String,
        pub verification_key: VerificationKey,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct RegistryFile {
        pub schema_version: u32,
        pub curve: CurveId,
        pub rows: Vec<RegistryRow>,
    }

    impl RegistryFile {
        pub fn from_registry(reg: &VerificationKeyRegistry) -> Self {
            Self {
                schema_version: BUNDLE_SCHEMA_VERSION,
                curve: CurveId::Bls12_381,
                rows: reg
                    .iter()
                    .map(|(id, vk)| RegistryRow {
                        authority_id: id.authority_id().to_owned(),
                        attribute: id.name().to_owned(),
                        verification_key: *vk,
                    })
                    .collect(),
            }
        }

        pub fn into_registry(self) -> Result<VerificationKeyRegistry, BundleError> {
            if self.schema_version != BUNDLE_SCHEMA_VERSION {
                return Err(BundleError::Version(self.schema_version));
            }
            let mut reg = VerificationKeyRegistry::new();
            for row in self.rows {
                let id = AttributeId::new(row.authority_id, row.attribute)?;
                // later rows win; the file is a snapshot, not a log
                reg.keys.insert(id, row.verification_key);
            }
            Ok(reg)
        }
    }
}

//! Embedded append-only ledger holding the participant registry, patient
//! profiles, access rules, and the audit trail of authentication events.
//!
//! A directory holds three things:
//!
//! * `chain.log`: length-prefixed transaction records (see [`chain`]);
//! * `payloads/<digest>.json`: the salted payload each transaction commits
//!   to. Only the digest is on the chain;
//! * `state.json`: a snapshot of [`WorldState`], always reproducible by
//!   replaying the chain against the payload store.
//!
//! Auth events and access activities name participants only through random
//! per-participant tags, never by gid. Truncating the tail of `chain.log` is
//! not detected; every other single-field change is.

pub mod chain;
pub mod state;

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;

use crate::abms::{
    verify_attribute, verify_threshold, AbmsError, AttributeSignature, ThresholdOutcome, VerificationKeyLookup,
};
use crate::attribute::AttributeId;
use crate::clock::Clock;
use crate::edge_store::{EdgeError, EdgeStore, IssuedToken, ObjectId};
use crate::maabe::AbePublicKey;
use crate::pairing::{PairingParams, VerificationKey};

pub use chain::{parse_records, verify_transactions, ChainStatus, LedgerTransaction, TxKind};
pub use state::{
    AccessActivityRecord, AclRule, AuthEventRecord, AuthResult, EhrRef, Grantee, Participant, PatientProfile, Payload,
    PayloadBody, Permission, ReadResult, Role, WorldState,
};

const CHAIN_FILE: &str = "chain.log";
const STATE_FILE: &str = "state.json";
const PAYLOAD_DIR: &str = "payloads";

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("gid {0:?} is already registered")]
    DuplicateGid(String),
    #[error("unknown participant {0:?}")]
    UnknownParticipant(String),
    #[error("gid must be non-empty")]
    EmptyGid,
    #[error("{gid:?} is not a {expected}")]
    WrongRole { gid: String, expected: &'static str },
    #[error("only the profile owner may do this")]
    NotOwner,
    #[error("signature for {0} does not verify against the registry")]
    InvalidSignature(AttributeId),
    #[error("no verification key published for {0}")]
    UnpublishedKey(AttributeId),
    #[error("{attribute} is outside the namespace of authority {authority:?}")]
    ForeignAttribute { authority: String, attribute: AttributeId },
    #[error("key for {0} is already published")]
    DuplicateKey(AttributeId),
    #[error("{0:?} has no profile")]
    NoProfile(String),
    #[error("grantee {0} is not a registered provider")]
    InvalidGrantee(String),
    #[error("access denied by the profile's access rules")]
    AccessDenied,
    #[error("profile has no EHR object")]
    NoEhrObject,
    #[error("authentication rejected: {valid_count} valid signatures, threshold {threshold}")]
    AuthRejected { valid_count: usize, threshold: crate::abms::ThresholdSpec },
    #[error("provider threshold does not fit the profile: {0}")]
    Threshold(#[from] AbmsError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error("ledger broken at seq {seq}: {reason}")]
    Broken { seq: u64, reason: String },
    #[error("ledger i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger state file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Returned for every appended transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub seq: u64,
    pub event_id: Uuid,
    pub timestamp: DateTime<Utc>,
    pub kind: TxKind,
    pub this_hash: String,
}

impl Receipt {
    fn of(tx: &LedgerTransaction) -> Self {
        Self {
            seq: tx.seq,
            event_id: tx.event_id,
            timestamp: tx.timestamp,
            kind: tx.tx_kind().expect("appended transactions have a known kind"),
            this_hash: hex::encode(tx.this_hash),
        }
    }
}

/// What a non-owner sees of a profile: the owner's gid and name are
/// withheld.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileView {
    pub gid: Option<String>,
    pub name: Option<String>,
    pub signatures: Vec<AttributeSignature>,
    pub ehr_objects: Vec<ObjectId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessGrant {
    pub url: String,
    pub token: IssuedToken,
    pub outcome: ThresholdOutcome,
    pub receipt: Receipt,
}

/// Source of one-time URLs for `request_access`.
pub trait TokenIssuer {
    fn issue(&self, object_id: &ObjectId) -> Result<IssuedToken, EdgeError>;
}

impl TokenIssuer for EdgeStore {
    fn issue(&self, object_id: &ObjectId) -> Result<IssuedToken, EdgeError> {
        self.issue_token(object_id, None)
    }
}

impl VerificationKeyLookup for WorldState {
    fn verification_key(&self, attribute: &AttributeId) -> Option<VerificationKey> {
        self.verification_keys.verification_key(attribute)
    }
}

impl crate::abms::GidDirectory for WorldState {
    fn is_registered(&self, gid: &str) -> bool {
        self.participants.contains_key(gid)
    }
}

impl crate::maabe::PublicKeyLookup for WorldState {
    fn public_key(&self, attribute: &AttributeId) -> Option<AbePublicKey> {
        crate::maabe::PublicKeyLookup::public_key(&self.encryption_keys, attribute)
    }
}

pub struct Ledger {
    dir: PathBuf,
    params: PairingParams,
    clock: Arc<dyn Clock>,
    rng: Box<dyn RngCore + Send>,
    chain: File,
    txs: Vec<LedgerTransaction>,
    state: WorldState,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger").field("dir", &self.dir).field("height", &self.txs.len()).finish_non_exhaustive()
    }
}

impl Ledger {
    /// Open or create a ledger. An existing chain is verified and replayed;
    /// a new one starts with a genesis transaction at seq 0.
    pub fn open(
        dir: impl AsRef<Path>,
        params: PairingParams,
        clock: Arc<dyn Clock>,
        rng: Box<dyn RngCore + Send>,
    ) -> Result<Self, LedgerError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(PAYLOAD_DIR))?;
        let chain_path = dir.join(CHAIN_FILE);
        let (txs, state) = if chain_path.exists() { replay(&dir)? } else { (Vec::new(), WorldState::default()) };
        let chain = OpenOptions::new().create(true).append(true).open(&chain_path)?;
        let mut ledger = Self { dir, params, clock, rng, chain, txs, state };
        if ledger.txs.is_empty() {
            ledger.append(PayloadBody::Genesis { curve: params.curve_id() })?;
        } else {
            ledger.save_state()?;
        }
        Ok(ledger)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn height(&self) -> u64 {
        self.txs.len() as u64
    }

    pub fn transactions(&self) -> &[LedgerTransaction] {
        &self.txs
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn params(&self) -> &PairingParams {
        &self.params
    }

    /// Payload committed to by `tx`, read from the private store.
    pub fn payload(&self, tx: &LedgerTransaction) -> Result<Payload, LedgerError> {
        load_payload(&self.dir, tx)
    }

    /// Decoded bodies of every auth event, in chain order.
    pub fn auth_events(&self) -> Result<Vec<AuthEventRecord>, LedgerError> {
        let mut out = Vec::new();
        for tx in self.txs.iter().filter(|t| t.tx_kind() == Some(TxKind::AuthEvent)) {
            if let PayloadBody::AuthEvent(ev) = self.payload(tx)?.body {
                out.push(ev);
            }
        }
        Ok(out)
    }

    fn append(&mut self, body: PayloadBody) -> Result<Receipt, LedgerError> {
        let mut probe = self.state.clone();
        probe.apply(&body).map_err(|reason| LedgerError::Broken { seq: self.height(), reason })?;

        let mut salt = [0u8; 16];
        self.rng.fill_bytes(&mut salt);
        let mut id = [0u8; 16];
        self.rng.fill_bytes(&mut id);
        let kind = body.kind();
        let payload = Payload { salt: hex::encode(salt), body };
        let bytes = payload.to_bytes();
        let digest: [u8; 32] = Sha256::digest(&bytes).into();
        write_atomic(&self.dir.join(PAYLOAD_DIR).join(format!("{}.json", hex::encode(digest))), &bytes)?;

        let prev = self.txs.last().map_or([0u8; 32], |t| t.this_hash);
        let tx = LedgerTransaction::new(
            self.height(),
            self.clock.now(),
            kind,
            uuid::Builder::from_random_bytes(id).into_uuid(),
            digest,
            prev,
        );
        self.chain.write_all(&tx.to_record())?;
        self.chain.sync_data()?;
        let receipt = Receipt::of(&tx);
        self.txs.push(tx);
        self.state = probe;
        self.save_state()?;
        Ok(receipt)
    }

    fn save_state(&self) -> Result<(), LedgerError> {
        let json = serde_json::to_vec_pretty(&self.state)?;
        write_atomic(&self.dir.join(STATE_FILE), &json)?;
        Ok(())
    }

    fn new_tag(&mut self) -> String {
        let mut t = [0u8; 16];
        self.rng.fill_bytes(&mut t);
        hex::encode(t)
    }

    fn participant(&self, gid: &str) -> Result<&Participant, LedgerError> {
        self.state.participants.get(gid).ok_or_else(|| LedgerError::UnknownParticipant(gid.to_owned()))
    }

    pub fn register_participant(&mut self, p: Participant) -> Result<Receipt, LedgerError> {
        if p.gid.is_empty() {
            return Err(LedgerError::EmptyGid);
        }
        if self.state.participants.contains_key(&p.gid) {
            return Err(LedgerError::DuplicateGid(p.gid));
        }
        let tag = self.new_tag();
        self.append(PayloadBody::RegisterParticipant { participant: p, tag })
    }

    fn check_authority(&self, authority_gid: &str, attribute: &AttributeId) -> Result<(), LedgerError> {
        let p = self.participant(authority_gid)?;
        if p.role != Role::Authority {
            return Err(LedgerError::WrongRole { gid: authority_gid.to_owned(), expected: "authority" });
        }
        if attribute.authority_id() != authority_gid {
            return Err(LedgerError::ForeignAttribute {
                authority: authority_gid.to_owned(),
                attribute: attribute.clone(),
            });
        }
        Ok(())
    }

    /// Add `VKᵢ` to the on-ledger registry used by `request_access`.
    pub fn publish_verification_key(
        &mut self,
        authority_gid: &str,
        attribute: &AttributeId,
        vk: VerificationKey,
    ) -> Result<Receipt, LedgerError> {
        self.check_authority(authority_gid, attribute)?;
        if self.state.verification_key(attribute).is_some() {
            return Err(LedgerError::DuplicateKey(attribute.clone()));
        }
        self.append(PayloadBody::PublishVerificationKey { attribute: attribute.clone(), verification_key: vk })
    }

    pub fn publish_encryption_key(
        &mut self,
        authority_gid: &str,
        attribute: &AttributeId,
        pk: AbePublicKey,
    ) -> Result<Receipt, LedgerError> {
        self.check_authority(authority_gid, attribute)?;
        if crate::maabe::PublicKeyLookup::public_key(&self.state, attribute).is_some() {
            return Err(LedgerError::DuplicateKey(attribute.clone()));
        }
        self.append(PayloadBody::PublishEncryptionKey { attribute: attribute.clone(), public_key: pk })
    }

    /// Store or replace the caller's profile name and signatures. Attached
    /// EHR objects are kept. Every signature must verify now.
    pub fn write_profile(&mut self, caller_gid: &str, profile: PatientProfile) -> Result<Receipt, LedgerError> {
        let caller = self.participant(caller_gid)?;
        if caller_gid != profile.gid {
            return Err(LedgerError::NotOwner);
        }
        if !caller.role.is_patient() {
            return Err(LedgerError::WrongRole { gid: caller_gid.to_owned(), expected: "patient" });
        }
        for sig in &profile.signatures {
            let vk = self
                .state
                .verification_key(&sig.attribute)
                .ok_or_else(|| LedgerError::UnpublishedKey(sig.attribute.clone()))?;
            let ok = verify_attribute(&self.params, sig, &vk).map(|v| v.is_accept()).unwrap_or(false);
            if !ok {
                return Err(LedgerError::InvalidSignature(sig.attribute.clone()));
            }
        }
        self.append(PayloadBody::WriteProfile { gid: profile.gid, name: profile.name, signatures: profile.signatures })
    }

    pub fn set_acl(&mut self, caller_gid: &str, rule: AclRule) -> Result<Receipt, LedgerError> {
        let caller = self.participant(caller_gid)?;
        if rule.profile_owner_gid != caller_gid {
            return Err(LedgerError::NotOwner);
        }
        if !caller.role.is_patient() {
            return Err(LedgerError::WrongRole { gid: caller_gid.to_owned(), expected: "patient" });
        }
        if let Grantee::Gid(g) = &rule.grantee {
            if !matches!(self.state.participants.get(g).map(|p| &p.role), Some(Role::Provider { .. })) {
                return Err(LedgerError::InvalidGrantee(g.clone()));
            }
        }
        self.append(PayloadBody::SetAcl { rule })
    }

    /// Link an edge object to the caller's profile.
    pub fn attach_ehr(&mut self, caller_gid: &str, object_id: ObjectId) -> Result<Receipt, LedgerError> {
        self.participant(caller_gid)?;
        if !self.state.profiles.contains_key(caller_gid) {
            return Err(LedgerError::NoProfile(caller_gid.to_owned()));
        }
        self.append(PayloadBody::AttachEhr { gid: caller_gid.to_owned(), object_id })
    }

    /// Owners see everything. Anyone else needs a `read_profile` rule and
    /// gets a view without gid and name. Every non-owner read is logged.
    pub fn read_profile(&mut self, caller_gid: &str, owner_gid: &str) -> Result<ProfileView, LedgerError> {
        let caller = self.participant(caller_gid)?.clone();
        self.participant(owner_gid)?;
        let profile =
            self.state.profiles.get(owner_gid).cloned().ok_or_else(|| LedgerError::NoProfile(owner_gid.to_owned()))?;
        let objects = profile.ehr_refs.iter().map(|r| r.object_id).collect();
        if caller_gid == owner_gid {
            return Ok(ProfileView {
                gid: Some(profile.gid),
                name: Some(profile.name),
                signatures: profile.signatures,
                ehr_objects: objects,
            });
        }
        let granted = self.state.permits(&caller, owner_gid, Permission::ReadProfile);
        let record = AccessActivityRecord {
            action: "read_profile".into(),
            actor_tag: self.state.tags.get(caller_gid).cloned(),
            actor_role: caller.role.label(),
            subject_tag: self.state.tags.get(owner_gid).cloned(),
            outcome: if granted { ReadResult::Granted } else { ReadResult::Denied },
        };
        self.append(PayloadBody::AccessActivity(record))?;
        if !granted {
            return Err(LedgerError::AccessDenied);
        }
        Ok(ProfileView { gid: None, name: None, signatures: profile.signatures, ehr_objects: objects })
    }

    /// The access contract: check the ACL, authenticate the owner's profile
    /// signatures with the caller's threshold, and hand back a one-time URL
    /// for the newest attached EHR object. Exactly one auth event is
    /// appended per call, whatever the outcome.
    pub fn request_access(
        &mut self,
        caller_gid: &str,
        owner_gid: &str,
        issuer: &impl TokenIssuer,
    ) -> Result<AccessGrant, LedgerError> {
        let mut ev = AuthEventRecord {
            caller_role: "unknown".into(),
            caller_tag: self.state.tags.get(caller_gid).cloned(),
            subject_tag: self.state.tags.get(owner_gid).cloned(),
            outcome: AuthResult::UnknownParticipant,
            valid_count: None,
            threshold: None,
            token_digest: None,
            object_id: None,
        };
        let decided = self.decide_access(caller_gid, owner_gid, issuer, &mut ev);
        let receipt = self.append(PayloadBody::AuthEvent(ev))?;
        decided.map(|(token, outcome)| AccessGrant { url: token.url.clone(), token, outcome, receipt })
    }

    fn decide_access(
        &self,
        caller_gid: &str,
        owner_gid: &str,
        issuer: &impl TokenIssuer,
        ev: &mut AuthEventRecord,
    ) -> Result<(IssuedToken, ThresholdOutcome), LedgerError> {
        let caller = self.participant(caller_gid)?;
        ev.caller_role = caller.role.label();
        self.participant(owner_gid)?;
        let Role::Provider { threshold, .. } = &caller.role else {
            ev.outcome = AuthResult::NotProvider;
            return Err(LedgerError::WrongRole { gid: caller_gid.to_owned(), expected: "provider" });
        };
        let threshold = *threshold;
        ev.threshold = Some(threshold);
        if !self.state.permits(caller, owner_gid, Permission::RequestAccess) {
            ev.outcome = AuthResult::AclDenied;
            return Err(LedgerError::AccessDenied);
        }
        let profile = self.state.profiles.get(owner_gid);
        let Some(object_id) = profile.and_then(|p| p.ehr_refs.last()).map(|r| r.object_id) else {
            ev.outcome = AuthResult::NoEhrObject;
            return Err(LedgerError::NoEhrObject);
        };
        let sigs = &profile.expect("checked above").signatures;
        let outcome = match verify_threshold(&self.params, sigs, &self.state, threshold) {
            Ok(o) => o,
            Err(e) => {
                ev.outcome = AuthResult::ThresholdMismatch;
                return Err(e.into());
            }
        };
        ev.valid_count = Some(outcome.valid_count());
        if !outcome.is_authenticated() {
            ev.outcome = AuthResult::Rejected;
            return Err(LedgerError::AuthRejected { valid_count: outcome.valid_count(), threshold });
        }
        let token = match issuer.issue(&object_id) {
            Ok(t) => t,
            Err(e) => {
                ev.outcome = AuthResult::EdgeFailure;
                return Err(e.into());
            }
        };
        ev.outcome = AuthResult::Granted;
        ev.token_digest = Some(hex::encode(token.token_digest()));
        ev.object_id = Some(object_id);
        Ok((token, outcome))
    }

    /// Re-read the chain file and payload store from disk and audit them.
    pub fn verify_chain(&self) -> Result<ChainStatus, LedgerError> {
        verify_dir(&self.dir)
    }

    /// Overwrite one stored profile signature with a different valid group
    /// element, bypassing the chain. Simulates storage corruption in tests.
    #[doc(hidden)]
    pub fn inject_signature_fault(&mut self, owner_gid: &str, index: usize) -> bool {
        let Some(sig) = self.state.profiles.get_mut(owner_gid).and_then(|p| p.signatures.get_mut(index)) else {
            return false;
        };
        sig.signature = sig.signature.scaled(2);
        true
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

fn load_payload(dir: &Path, tx: &LedgerTransaction) -> Result<Payload, LedgerError> {
    let broken = |reason: String| LedgerError::Broken { seq: tx.seq, reason };
    let path = dir.join(PAYLOAD_DIR).join(format!("{}.json", hex::encode(tx.payload_digest)));
    let bytes = fs::read(&path).map_err(|e| broken(format!("payload unavailable: {e}")))?;
    if Sha256::digest(&bytes).as_slice() != tx.payload_digest {
        return Err(broken("payload does not match its digest".into()));
    }
    let payload: Payload =
        serde_json::from_slice(&bytes).map_err(|e| broken(format!("payload does not parse: {e}")))?;
    if Some(payload.body.kind()) != tx.tx_kind() {
        return Err(broken("payload type does not match transaction kind".into()));
    }
    Ok(payload)
}

/// Decoded transactions plus the first decoding failure, if any.
type ParsedChain = (Vec<LedgerTransaction>, Option<(u64, String)>);

fn read_chain(dir: &Path) -> Result<ParsedChain, LedgerError> {
    let bytes = fs::read(dir.join(CHAIN_FILE))?;
    Ok(parse_records(&bytes))
}

/// Audit a ledger directory: record decoding, hash links, and payload
/// digests. Reports the earliest failure.
pub fn verify_dir(dir: impl AsRef<Path>) -> Result<ChainStatus, LedgerError> {
    let dir = dir.as_ref();
    let (txs, parse_err) = read_chain(dir)?;
    if let s @ ChainStatus::Broken { .. } = verify_transactions(&txs) {
        return Ok(s);
    }
    for tx in &txs {
        if let Err(LedgerError::Broken { seq, reason }) = load_payload(dir, tx) {
            return Ok(ChainStatus::Broken { seq, reason });
        }
    }
    if let Some((seq, reason)) = parse_err {
        return Ok(ChainStatus::Broken { seq, reason });
    }
    Ok(ChainStatus::Ok { height: txs.len() as u64 })
}

/// Rebuild the world state from the chain and payload store alone.
pub fn replay(dir: impl AsRef<Path>) -> Result<(Vec<LedgerTransaction>, WorldState), LedgerError> {
    let dir = dir.as_ref();
    if let ChainStatus::Broken { seq, reason } = verify_dir(dir)? {
        return Err(LedgerError::Broken { seq, reason });
    }
    let (txs, _) = read_chain(dir)?;
    let mut state = WorldState::default();
    for tx in &txs {
        let payload = load_payload(dir, tx)?;
        state.apply(&payload.body).map_err(|reason| LedgerError::Broken { seq: tx.seq, reason })?;
    }
    Ok((txs, state))
}

/// The `state.json` snapshot as last written.
pub fn load_state_snapshot(dir: impl AsRef<Path>) -> Result<WorldState, LedgerError> {
    Ok(serde_json::from_slice(&fs::read(dir.as_ref().join(STATE_FILE))?)?)
}

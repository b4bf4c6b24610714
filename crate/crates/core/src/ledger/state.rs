//! Participants, profiles, access rules, and the payload bodies whose
//! digests the chain commits to. [`WorldState::apply`] is the only way state
//! changes, both when appending and when replaying.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::chain::TxKind;
use crate::abms::{AttributeSignature, ThresholdOutcome, ThresholdSpec, VerificationKeyRegistry};
use crate::attribute::AttributeId;
use crate::edge_store::ObjectId;
use crate::maabe::{AbePublicKey, PublicKeyRegistry};
use crate::pairing::{CurveId, VerificationKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Role {
    Patient,
    /// `threshold` is the rule this provider applies when authenticating a
    /// patient.
    Provider {
        kind: String,
        threshold: ThresholdSpec,
    },
    Authority,
}

impl Role {
    pub fn label(&self) -> String {
        match self {
            Role::Patient => "patient".into(),
            Role::Provider { kind, .. } => format!("provider:{kind}"),
            Role::Authority => "authority".into(),
        }
    }

    pub fn is_patient(&self) -> bool {
        matches!(self, Role::Patient)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub gid: String,
    pub display_name: String,
    #[serde(flatten)]
    pub role: Role,
}

impl Participant {
    pub fn patient(gid: impl Into<String>, display_name: impl Into<String>) -> Self {
        Self { gid: gid.into(), display_name: display_name.into(), role: Role::Patient }
    }

    pub fn provider(
        gid: impl Into<String>,
        display_name: impl Into<String>,
        kind: impl Into<String>,
        threshold: ThresholdSpec,
    ) -> Self {
        Self {
            gid: gid.into(),
            display_name: display_name.into(),
            role: Role::Provider { kind: kind.into(), threshold },
        }
    }

    pub fn authority(gid: impl Into<String>, display_name: impl Into<String>) -> Self {
        Self { gid: gid.into(), display_name: display_name.into(), role: Role::Authority }
    }
}

/// An EHR object attached to a profile and the digests of every token issued
/// for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EhrRef {
    pub object_id: ObjectId,
    pub token_digests: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub gid: String,
    pub name: String,
    pub signatures: Vec<AttributeSignature>,
    #[serde(default)]
    pub ehr_refs: Vec<EhrRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "grantee", content = "value", rename_all = "snake_case")]
pub enum Grantee {
    AnyProvider,
    ProviderKind(String),
    Gid(String),
}

impl fmt::Display for Grantee {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grantee::AnyProvider => f.write_str("provider:*"),
            Grantee::ProviderKind(k) => write!(f, "provider:{k}"),
            Grantee::Gid(g) => write!(f, "gid:{g}"),
        }
    }
}

impl std::str::FromStr for Grantee {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("provider", "*")) => Ok(Grantee::AnyProvider),
            Some(("provider", k)) if !k.is_empty() => Ok(Grantee::ProviderKind(k.to_owned())),
            Some(("gid", g)) if !g.is_empty() => Ok(Grantee::Gid(g.to_owned())),
            _ => Err(format!("grantee must be provider:*, provider:<kind>, or gid:<gid>, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Permission {
    ReadProfile,
    RequestAccess,
}

impl std::str::FromStr for Permission {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read_profile" => Ok(Permission::ReadProfile),
            "request_access" => Ok(Permission::RequestAccess),
            _ => Err(format!("permission must be read_profile or request_access, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AclRule {
    pub profile_owner_gid: String,
    #[serde(flatten)]
    pub grantee: Grantee,
    pub permission: Permission,
}

impl AclRule {
    pub fn new(owner: impl Into<String>, grantee: Grantee, permission: Permission) -> Self {
        Self { profile_owner_gid: owner.into(), grantee, permission }
    }

    pub(crate) fn admits(&self, caller: &Participant) -> bool {
        match (&self.grantee, &caller.role) {
            (_, Role::Patient | Role::Authority) => false,
            (Grantee::AnyProvider, Role::Provider { .. }) => true,
            (Grantee::ProviderKind(k), Role::Provider { kind, .. }) => k == kind,
            (Grantee::Gid(g), Role::Provider { .. }) => *g == caller.gid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthResult {
    Granted,
    Rejected,
    AclDenied,
    UnknownParticipant,
    NotProvider,
    NoEhrObject,
    ThresholdMismatch,
    EdgeFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadResult {
    Granted,
    Denied,
}

/// Logged body of an access request. Participants appear only as their
/// random pseudonymous tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthEventRecord {
    pub caller_role: String,
    pub caller_tag: Option<String>,
    pub subject_tag: Option<String>,
    pub outcome: AuthResult,
    pub valid_count: Option<usize>,
    pub threshold: Option<ThresholdSpec>,
    pub token_digest: Option<String>,
    pub object_id: Option<ObjectId>,
}

impl AuthEventRecord {
    pub fn threshold_outcome(&self) -> Option<ThresholdOutcome> {
        let valid_count = self.valid_count?;
        match self.outcome {
            AuthResult::Granted => Some(ThresholdOutcome::Authenticated { valid_count }),
            AuthResult::Rejected => Some(ThresholdOutcome::Rejected { valid_count }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessActivityRecord {
    pub action: String,
    pub actor_tag: Option<String>,
    pub actor_role: String,
    pub subject_tag: Option<String>,
    pub outcome: ReadResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PayloadBody {
    Genesis { curve: CurveId },
    RegisterParticipant { participant: Participant, tag: String },
    PublishVerificationKey { attribute: AttributeId, verification_key: VerificationKey },
    PublishEncryptionKey { attribute: AttributeId, public_key: AbePublicKey },
    WriteProfile { gid: String, name: String, signatures: Vec<AttributeSignature> },
    SetAcl { rule: AclRule },
    AttachEhr { gid: String, object_id: ObjectId },
    AuthEvent(AuthEventRecord),
    AccessActivity(AccessActivityRecord),
}

impl PayloadBody {
    pub fn kind(&self) -> TxKind {
        match self {
            PayloadBody::Genesis { .. }
            | PayloadBody::RegisterParticipant { .. }
            | PayloadBody::PublishVerificationKey { .. }
            | PayloadBody::PublishEncryptionKey { .. } => TxKind::Register,
            PayloadBody::WriteProfile { .. } | PayloadBody::SetAcl { .. } | PayloadBody::AttachEhr { .. } => {
                TxKind::ProfileWrite
            }
            PayloadBody::AuthEvent(_) => TxKind::AuthEvent,
            PayloadBody::AccessActivity(_) => TxKind::AccessActivity,
        }
    }
}

/// What the chain commits to: the body plus a random salt, so a digest
/// cannot be confirmed by guessing a low-entropy body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub salt: String,
    pub body: PayloadBody,
}

impl Payload {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("payload serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub participants: BTreeMap<String, Participant>,
    /// Pseudonymous tag of each participant, used in logged events.
    pub tags: BTreeMap<String, String>,
    pub verification_keys: VerificationKeyRegistry,
    pub encryption_keys: PublicKeyRegistry,
    pub profiles: BTreeMap<String, PatientProfile>,
    pub acl: Vec<AclRule>,
    pub auth_events: u64,
    pub access_activities: u64,
}

impl WorldState {
    pub fn participant(&self, gid: &str) -> Option<&Participant> {
        self.participants.get(gid)
    }

    pub fn gid_for_tag(&self, tag: &str) -> Option<&str> {
        self.tags.iter().find(|(_, t)| t.as_str() == tag).map(|(g, _)| g.as_str())
    }

    pub fn permits(&self, caller: &Participant, owner: &str, permission: Permission) -> bool {
        self.acl.iter().any(|r| r.profile_owner_gid == owner && r.permission == permission && r.admits(caller))
    }

    /// Apply one payload. Checks here are structural; the ledger validates
    /// requests with friendlier errors before it builds a payload.
    pub fn apply(&mut self, body: &PayloadBody) -> Result<(), String> {
        match body {
            PayloadBody::Genesis { .. } => {
                if !self.participants.is_empty() {
                    return Err("genesis after other transactions".into());
                }
            }
            PayloadBody::RegisterParticipant { participant, tag } => {
                if self.participants.contains_key(&participant.gid) {
                    return Err(format!("duplicate gid {}", participant.gid));
                }
                self.tags.insert(participant.gid.clone(), tag.clone());
                self.participants.insert(participant.gid.clone(), participant.clone());
            }
            PayloadBody::PublishVerificationKey { attribute, verification_key } => {
                self.verification_keys.publish(attribute.clone(), *verification_key).map_err(|e| e.to_string())?;
            }
            PayloadBody::PublishEncryptionKey { attribute, public_key } => {
                self.encryption_keys.publish(attribute.clone(), *public_key).map_err(|e| e.to_string())?;
            }
            PayloadBody::WriteProfile { gid, name, signatures } => {
                if !self.participants.get(gid).is_some_and(|p| p.role.is_patient()) {
                    return Err(format!("profile for non-patient {gid}"));
                }
                let profile = self.profiles.entry(gid.clone()).or_insert_with(|| PatientProfile {
                    gid: gid.clone(),
                    name: String::new(),
                    signatures: Vec::new(),
                    ehr_refs: Vec::new(),
                });
                profile.name = name.clone();
                profile.signatures = signatures.clone();
            }
            PayloadBody::SetAcl { rule } => {
                if !self.acl.contains(rule) {
                    self.acl.push(rule.clone());
                }
            }
            PayloadBody::AttachEhr { gid, object_id } => {
                let profile = self.profiles.get_mut(gid).ok_or_else(|| format!("no profile for {gid}"))?;
                if !profile.ehr_refs.iter().any(|r| r.object_id == *object_id) {
                    profile.ehr_refs.push(EhrRef { object_id: *object_id, token_digests: Vec::new() });
                }
            }
            PayloadBody::AuthEvent(ev) => {
                self.auth_events += 1;
                if let (Some(subject), Some(object_id), Some(token)) =
                    (&ev.subject_tag, &ev.object_id, &ev.token_digest)
                {
                    let gid = self.gid_for_tag(subject).ok_or("auth event for unknown subject")?.to_owned();
                    let r = self
                        .profiles
                        .get_mut(&gid)
                        .and_then(|p| p.ehr_refs.iter_mut().find(|r| r.object_id == *object_id))
                        .ok_or("auth event for an unattached object")?;
                    r.token_digests.push(token.clone());
                }
            }
            PayloadBody::AccessActivity(_) => {
                self.access_activities += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grantee_text_round_trip() {
        for g in [Grantee::AnyProvider, Grantee::ProviderKind("doctor".into()), Grantee::Gid("dr_lee".into())] {
            assert_eq!(g.to_string().parse::<Grantee>().unwrap(), g);
        }
        assert!("patient:x".parse::<Grantee>().is_err());
    }

    #[test]
    fn patients_and_authorities_are_never_admitted() {
        let spec = ThresholdSpec::new(1, 1).unwrap();
        let rule = AclRule::new("annie", Grantee::AnyProvider, Permission::ReadProfile);
        assert!(rule.admits(&Participant::provider("dr", "Dr", "doctor", spec)));
        assert!(!rule.admits(&Participant::patient("bob", "Bob")));
        assert!(!rule.admits(&Participant::authority("dmv", "DMV")));
        let by_gid = AclRule::new("annie", Grantee::Gid("bob".into()), Permission::ReadProfile);
        assert!(!by_gid.admits(&Participant::patient("bob", "Bob")));
        let kind = AclRule::new("annie", Grantee::ProviderKind("nurse".into()), Permission::ReadProfile);
        assert!(!kind.admits(&Participant::provider("dr", "Dr", "doctor", spec)));
    }

    #[test]
    fn payload_kinds() {
        assert_eq!(PayloadBody::Genesis { curve: CurveId::Bls12_381 }.kind(), TxKind::Register);
        let rule = AclRule::new("a", Grantee::AnyProvider, Permission::RequestAccess);
        assert_eq!(PayloadBody::SetAcl { rule }.kind(), TxKind::ProfileWrite);
    }
}

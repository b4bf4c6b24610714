//! Scripted walk through the whole sharing flow with the patient Annie
//! Foster: three authorities attest her hospital patient id, driver license,
//! and insurance id; she signs all three, publishes her profile, and uploads
//! an encrypted record; a laboratory scientist (3 of 3) and a research
//! scientist (1 of 3) each authenticate her, redeem a one-time URL, and
//! decrypt.

use std::fs;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::workspace::Workspace;
use super::WorkflowError;
use crate::abms::ThresholdSpec;
use crate::attribute::{AttributeDescriptor, AttributeId};
use crate::ledger::{replay, ChainStatus, Grantee, Permission, Receipt};
use crate::maabe::AccessPolicy;

pub const ANNIE_GID: &str = "annie";
pub const ANNIE_NAME: &str = "Annie Foster";
pub const LAB_GID: &str = "lab-scientist-01";
pub const RESEARCH_GID: &str = "research-scientist-01";
pub const LAB_KIND: &str = "medical_lab_scientist";
pub const RESEARCH_KIND: &str = "medical_research_scientist";
pub const DEFAULT_EHR_SIZE: usize = 1024 * 1024;
pub const DEFAULT_POLICY: &str = "lab_scientist@hospital OR research_scientist@hospital";

/// Annie's three attested attributes.
pub fn annie_attributes() -> [AttributeDescriptor; 3] {
    [
        AttributeDescriptor::new("hospital", "patient_id", "0003231").expect("valid"),
        AttributeDescriptor::new("dmv", "driver_license", "9907184").expect("valid"),
        AttributeDescriptor::new("insurer", "insurance_id", "1EG4-TE5-MK72").expect("valid"),
    ]
}

/// Stand-in for an imaging file: `len` bytes from a fixed ChaCha20 stream,
/// identical on every machine.
pub fn sample_ehr(len: usize) -> Vec<u8> {
    let mut rng = ChaCha20Rng::from_seed(Sha256::digest(b"abmse/v1/sample-ehr").into());
    let mut out = vec![0u8; len];
    rng.fill_bytes(&mut out);
    out
}

#[derive(Debug, Clone)]
pub struct ScenarioOptions {
    pub ehr_size: usize,
    pub policy: String,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self { ehr_size: DEFAULT_EHR_SIZE, policy: DEFAULT_POLICY.to_owned() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TranscriptEntry {
    pub step: String,
    pub detail: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Receipt>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub steps: Vec<TranscriptEntry>,
    pub ledger_height: u64,
    pub object_id: String,
    pub ehr_sha256: String,
}

impl ScenarioReport {
    pub fn event_ids(&self) -> Vec<String> {
        self.steps.iter().flat_map(|s| s.events.iter().map(|r| r.event_id.to_string())).collect()
    }
}

struct Run<'a> {
    ws: &'a mut Workspace,
    steps: Vec<TranscriptEntry>,
}

impl Run<'_> {
    fn record(&mut self, step: &str, detail: impl Into<String>, events: Vec<Receipt>) {
        self.steps.push(TranscriptEntry { step: step.to_owned(), detail: detail.into(), events });
    }
}

fn step<T>(name: &str, r: Result<T, WorkflowError>) -> Result<T, WorkflowError> {
    r.map_err(|e| e.at_step(name))
}

/// Run the scenario against `ws`, which should be freshly initialized.
/// Running twice on one workspace fails at the first registration.
pub fn run_annie(ws: &mut Workspace, opts: &ScenarioOptions) -> Result<ScenarioReport, WorkflowError> {
    let mut run = Run { ws, steps: Vec::new() };
    let policy: AccessPolicy =
        step("parse-policy", AccessPolicy::parse(&opts.policy).map_err(|e| WorkflowError::Invalid(e.to_string())))?;

    let authorities: [(&str, &str, Vec<String>, Vec<String>); 3] = [
        (
            "hospital",
            "General Hospital",
            vec!["patient_id".into()],
            vec!["lab_scientist".into(), "research_scientist".into()],
        ),
        ("dmv", "Department of Motor Vehicles", vec!["driver_license".into()], vec![]),
        ("insurer", "Health Insurer", vec!["insurance_id".into()], vec![]),
    ];
    for (id, name, sign, abe) in &authorities {
        let label = format!("authority-{id}");
        let receipts = step(&label, run.ws.add_authority(id, name, sign, abe))?;
        run.record(&label, format!("{name}: {} signing, {} encryption attributes", sign.len(), abe.len()), receipts);
    }

    let r = step("register-annie", run.ws.register_patient(ANNIE_GID, ANNIE_NAME))?;
    run.record("register-annie", "patient registered", vec![r]);

    for attr in annie_attributes() {
        let label = format!("extract-{}", attr.name());
        step(&label, run.ws.extract(ANNIE_GID, &attr))?;
        run.record(&label, format!("{} issued a signing key for {}", attr.authority_id(), attr.id()), vec![]);
    }
    for attr in annie_attributes() {
        let label = format!("sign-{}", attr.name());
        let sig = step(&label, run.ws.sign(ANNIE_GID, attr.id(), attr.value()))?;
        run.record(&label, sig.signature.projective_display(), vec![]);
    }

    let r = step("profile-write", run.ws.write_profile(ANNIE_GID, None))?;
    run.record("profile-write", "3 signatures verified and stored", vec![r]);
    for kind in [LAB_KIND, RESEARCH_KIND] {
        let label = format!("acl-{kind}");
        let r = step(&label, run.ws.grant(ANNIE_GID, Grantee::ProviderKind(kind.into()), Permission::RequestAccess))?;
        run.record(&label, format!("request_access granted to provider:{kind}"), vec![r]);
    }

    let ehr = sample_ehr(opts.ehr_size);
    let ehr_digest = hex::encode(Sha256::digest(&ehr));
    let ct = step("ehr-encrypt", run.ws.encrypt(&ehr, &policy))?.to_bytes();
    let dir = run.ws.root().join("scenario");
    step("ehr-encrypt", fs::create_dir_all(&dir).map_err(WorkflowError::io("creating scenario dir")))?;
    step("ehr-encrypt", fs::write(dir.join("annie_ehr.bin"), &ehr).map_err(WorkflowError::io("writing sample")))?;
    run.record("ehr-encrypt", format!("{} bytes under {policy}", ehr.len()), vec![]);
    let (object_id, r) = step("ehr-upload", run.ws.upload(ANNIE_GID, &ct))?;
    run.record("ehr-upload", format!("object {object_id}"), vec![r]);

    let providers = [
        (LAB_GID, "Medical Laboratory Scientist", LAB_KIND, ThresholdSpec::new(3, 3)?, "lab_scientist"),
        (RESEARCH_GID, "Medical Research Scientist", RESEARCH_KIND, ThresholdSpec::new(1, 3)?, "research_scientist"),
    ];
    for (gid, name, kind, spec, _) in &providers {
        let label = format!("register-{gid}");
        let r = step(&label, run.ws.register_provider(gid, name, kind, *spec))?;
        run.record(&label, format!("{kind} with threshold {spec}"), vec![r]);
    }
    for (gid, _, _, _, abe_attr) in &providers {
        let label = format!("abe-issue-{gid}");
        let attr = AttributeId::new("hospital", *abe_attr)?;
        step(&label, run.ws.abe_issue(gid, &attr))?;
        run.record(&label, format!("decryption key for {attr}"), vec![]);
    }

    let mut urls = Vec::new();
    for (gid, _, _, spec, _) in &providers {
        let label = format!("access-{gid}");
        let grant = step(&label, run.ws.request_access(gid, ANNIE_GID))?;
        run.record(
            &label,
            format!("{} of {} valid, threshold {spec}: {}", grant.outcome.valid_count(), spec.n(), grant.url),
            vec![grant.receipt.clone()],
        );
        urls.push((*gid, grant.url));
    }

    for (gid, url) in &urls {
        let label = format!("redeem-{gid}");
        let bytes = step(&label, run.ws.fetch(url))?;
        run.record(&label, format!("{} bytes retrieved", bytes.len()), vec![]);
        let again = format!("redeem-again-{gid}");
        match run.ws.fetch(url) {
            Err(WorkflowError::Gone) => run.record(&again, "gone", vec![]),
            Ok(_) => return Err(WorkflowError::Unexpected("one-time URL redeemed twice".into()).at_step(&again)),
            Err(e) => return Err(e.at_step(&again)),
        }
        let label = format!("decrypt-{gid}");
        let plain = step(&label, run.ws.decrypt(gid, &bytes))?;
        if plain != ehr {
            return Err(WorkflowError::Unexpected("decrypted record differs from the original".into()).at_step(&label));
        }
        run.record(&label, format!("sha256 {}", hex::encode(Sha256::digest(&plain))), vec![]);
    }

    match step("verify-chain", run.ws.verify_ledger())? {
        ChainStatus::Ok { height } => run.record("verify-chain", format!("ok, height {height}"), vec![]),
        ChainStatus::Broken { seq, reason } => {
            return Err(WorkflowError::ChainBroken { seq, reason }.at_step("verify-chain"));
        }
    }
    let (_, replayed) = step("replay", replay(run.ws.ledger().dir()).map_err(WorkflowError::from))?;
    if &replayed != run.ws.ledger().state() {
        return Err(WorkflowError::Unexpected("replayed state differs from live state".into()).at_step("replay"));
    }
    run.record("replay", "registry and profiles reconstructed identically", vec![]);

    let ledger_height = run.ws.ledger().height();
    Ok(ScenarioReport { steps: run.steps, ledger_height, object_id: object_id.to_string(), ehr_sha256: ehr_digest })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_is_stable() {
        let a = sample_ehr(64);
        assert_eq!(a, sample_ehr(64));
        assert_eq!(&sample_ehr(128)[..64], &a[..]);
    }
}

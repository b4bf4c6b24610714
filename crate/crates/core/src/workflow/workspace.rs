//! On-disk workspace shared by all CLI invocations.
//!
//! ```text
//! <data_dir>/config.json
//! <data_dir>/authorities/<authority>.json   signing and encryption master keys
//! <data_dir>/wallets/<gid>.json             keys and signatures held by a participant
//! <data_dir>/ledger/                        chain, payload store, state snapshot
//! <data_dir>/edge/                          objects and token journal
//! ```
//!
//! In seeded mode every random draw comes from a ChaCha20 stream keyed by
//! `SHA-256(seed ‖ invocation ‖ draw index ‖ label)`, so a scripted sequence
//! of commands produces byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::WorkflowError;
use crate::abms::{sign_attribute, AttributeSignature, ExtractedSigningKey, SignatureAuthority, ThresholdSpec};
use crate::attribute::{AttributeDescriptor, AttributeId};
use crate::clock::{Clock, FixedClock, SystemClock};
use crate::edge_store::{token_from_url, EdgeStore, ObjectId, Redemption};
use crate::ledger::{
    AccessGrant, AclRule, ChainStatus, Grantee, Ledger, Participant, PatientProfile, Permission, Receipt,
};
use crate::maabe::{abe_decrypt, abe_encrypt, AbeUserKey, AccessPolicy, EhrCiphertext, EncryptionAuthority};
use crate::pairing::{CurveId, PairingParams};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const DATA_DIR_ENV: &str = "ABMSE_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClockMode {
    Real,
    Fixed { at: DateTime<Utc> },
}

/// Seeded mode exists for reproducible tests and demos; keys drawn from a
/// known seed are not secret.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RngMode {
    Os,
    Seeded { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    pub schema_version: u32,
    pub curve: CurveId,
    pub default_ttl_secs: i64,
    pub clock: ClockMode,
    pub rng: RngMode,
    /// Bumped by every open so seeded runs never reuse a random stream.
    pub invocations: u64,
}

/// Per-invocation overrides from global flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkspaceOptions {
    pub seed: Option<u64>,
    pub fixed_clock: Option<DateTime<Utc>>,
    pub ttl: Option<Duration>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthorityRecord {
    pub authority_id: String,
    pub signing: SignatureAuthority,
    pub encryption: EncryptionAuthority,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Wallet {
    pub gid: String,
    pub signing_keys: Vec<ExtractedSigningKey>,
    pub signatures: Vec<AttributeSignature>,
    pub abe_keys: Vec<AbeUserKey>,
}

enum RandomSource {
    Os,
    Seeded { root: [u8; 32], draws: u64 },
}

pub struct Workspace {
    root: PathBuf,
    config: WorkspaceConfig,
    params: PairingParams,
    clock: Arc<dyn Clock>,
    random: RandomSource,
    ledger: Ledger,
    edge: EdgeStore,
}

impl std::fmt::Debug for Workspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workspace").field("root", &self.root).field("config", &self.config).finish_non_exhaustive()
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, WorkflowError> {
    let bytes = fs::read(path).map_err(WorkflowError::io(format!("reading {}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(WorkflowError::json(format!("parsing {}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), WorkflowError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(WorkflowError::json("encoding json"))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(WorkflowError::io(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(WorkflowError::io(format!("writing {}", path.display())))
}

fn check_name(kind: &str, s: &str) -> Result<(), WorkflowError> {
    if s.is_empty() || !s.chars().all(crate::attribute::is_token_char) {
        return Err(WorkflowError::Invalid(format!(
            "{kind} {s:?} must be non-empty and use only letters, digits, '_', '-', '.'"
        )));
    }
    Ok(())
}

impl Workspace {
    /// Create a workspace. Fails if one already exists at `root`.
    pub fn init(root: impl AsRef<Path>, opts: WorkspaceOptions) -> Result<Self, WorkflowError> {
        let root = root.as_ref().to_path_buf();
        if root.join("config.json").exists() {
            return Err(WorkflowError::Duplicate(format!("workspace at {}", root.display())));
        }
        for sub in ["authorities", "wallets"] {
            fs::create_dir_all(root.join(sub)).map_err(WorkflowError::io(format!("creating {}", root.display())))?;
        }
        let config = WorkspaceConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            curve: CurveId::Bls12_381,
            default_ttl_secs: opts.ttl.unwrap_or_else(crate::edge_store::default_ttl).num_seconds(),
            clock: opts.fixed_clock.map_or(ClockMode::Real, |at| ClockMode::Fixed { at }),
            rng: opts.seed.map_or(RngMode::Os, |seed| RngMode::Seeded { seed }),
            invocations: 0,
        };
        write_json(&root.join("config.json"), &config)?;
        Self::open(root, WorkspaceOptions::default())
    }

    /// Open an existing workspace. Flags in `opts` override the stored
    /// clock and rng modes for this invocation only.
    pub fn open(root: impl AsRef<Path>, opts: WorkspaceOptions) -> Result<Self, WorkflowError> {
        let root = root.as_ref().to_path_buf();
        let cfg_path = root.join("config.json");
        if !cfg_path.exists() {
            return Err(WorkflowError::Workspace(format!("no workspace at {} (run `abmse setup`)", root.display())));
        }
        let mut config: WorkspaceConfig = read_json(&cfg_path)?;
        if config.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(WorkflowError::Workspace(format!("unsupported config schema {}", config.schema_version)));
        }
        config.invocations += 1;
        write_json(&cfg_path, &config)?;

        let clock: Arc<dyn Clock> = match opts.fixed_clock.map(|at| ClockMode::Fixed { at }).unwrap_or(config.clock) {
            ClockMode::Real => Arc::new(SystemClock),
            ClockMode::Fixed { at } => Arc::new(FixedClock(at)),
        };
        let random = match opts.seed.map(|seed| RngMode::Seeded { seed }).unwrap_or(config.rng) {
            RngMode::Os => RandomSource::Os,
            RngMode::Seeded { seed } => {
                let mut h = Sha256::new();
                h.update(b"abmse/v1/workspace-rng");
                h.update(seed.to_be_bytes());
                h.update(config.invocations.to_be_bytes());
                RandomSource::Seeded { root: h.finalize().into(), draws: 0 }
            }
        };
        let params = PairingParams::setup(128)?;
        let mut ws_random = random;
        let ledger_rng = Self::draw(&mut ws_random, "ledger");
        let edge_rng = Self::draw(&mut ws_random, "edge");
        let ledger = Ledger::open(root.join("ledger"), params, clock.clone(), Box::new(ledger_rng))?;
        let edge = EdgeStore::open_with(root.join("edge"), clock.clone(), Box::new(edge_rng))?
            .with_default_ttl(Duration::seconds(config.default_ttl_secs));
        Ok(Self { root, config, params, clock, random: ws_random, ledger, edge })
    }

    /// Open, or create when absent.
    pub fn open_or_init(root: impl AsRef<Path>, opts: WorkspaceOptions) -> Result<Self, WorkflowError> {
        if root.as_ref().join("config.json").exists() {
            Self::open(root, opts)
        } else {
            Self::init(root, opts)
        }
    }

    fn draw(random: &mut RandomSource, label: &str) -> ChaCha20Rng {
        match random {
            RandomSource::Os => ChaCha20Rng::from_entropy(),
            RandomSource::Seeded { root, draws } => {
                let mut h = Sha256::new();
                h.update(*root);
                h.update(draws.to_be_bytes());
                h.update(label.as_bytes());
                *draws += 1;
                ChaCha20Rng::from_seed(h.finalize().into())
            }
        }
    }

    /// A fresh random stream for one labeled purpose.
    pub fn rng(&mut self, label: &str) -> ChaCha20Rng {
        Self::draw(&mut self.random, label)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &WorkspaceConfig {
        &self.config
    }

    pub fn params(&self) -> &PairingParams {
        &self.params
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut Ledger {
        &mut self.ledger
    }

    pub fn edge(&self) -> &EdgeStore {
        &self.edge
    }

    fn authority_path(&self, id: &str) -> PathBuf {
        self.root.join("authorities").join(format!("{id}.json"))
    }

    fn wallet_path(&self, gid: &str) -> PathBuf {
        self.root.join("wallets").join(format!("{gid}.json"))
    }

    pub fn authority(&self, id: &str) -> Result<AuthorityRecord, WorkflowError> {
        let path = self.authority_path(id);
        if !path.exists() {
            return Err(WorkflowError::NotFound(format!("authority {id:?}")));
        }
        read_json(&path)
    }

    fn save_authority(&self, rec: &AuthorityRecord) -> Result<(), WorkflowError> {
        write_json(&self.authority_path(&rec.authority_id), rec)
    }

    pub fn wallet(&self, gid: &str) -> Result<Wallet, WorkflowError> {
        let path = self.wallet_path(gid);
        if !path.exists() {
            return Ok(Wallet { gid: gid.to_owned(), ..Wallet::default() });
        }
        read_json(&path)
    }

    fn save_wallet(&self, w: &Wallet) -> Result<(), WorkflowError> {
        write_json(&self.wallet_path(&w.gid), w)
    }

    /// Register an authority, set up its attributes, and publish every
    /// verification and encryption key on the ledger.
    pub fn add_authority(
        &mut self,
        id: &str,
        display_name: &str,
        sign_attrs: &[String],
        abe_attrs: &[String],
    ) -> Result<Vec<Receipt>, WorkflowError> {
        check_name("authority id", id)?;
        if self.authority_path(id).exists() {
            return Err(WorkflowError::Duplicate(format!("authority {id:?}")));
        }
        let mut receipts = vec![self.ledger.register_participant(Participant::authority(id, display_name))?];
        let mut rec = AuthorityRecord {
            authority_id: id.to_owned(),
            signing: SignatureAuthority::new(id),
            encryption: EncryptionAuthority::new(id),
        };
        let mut rng = self.rng(&format!("authority/{id}"));
        for name in sign_attrs {
            let attr = AttributeId::new(id, name.as_str())?;
            let vk = rec.signing.setup_attribute(&self.params, &attr, &mut rng)?.verification_key;
            receipts.push(self.ledger.publish_verification_key(id, &attr, vk)?);
        }
        for name in abe_attrs {
            let attr = AttributeId::new(id, name.as_str())?;
            let pk = rec.encryption.setup_attribute(&self.params, &attr, &mut rng)?.public_key;
            receipts.push(self.ledger.publish_encryption_key(id, &attr, pk)?);
        }
        self.save_authority(&rec)?;
        Ok(receipts)
    }

    pub fn register_patient(&mut self, gid: &str, name: &str) -> Result<Receipt, WorkflowError> {
        check_name("gid", gid)?;
        Ok(self.ledger.register_participant(Participant::patient(gid, name))?)
    }

    pub fn register_provider(
        &mut self,
        gid: &str,
        name: &str,
        kind: &str,
        threshold: ThresholdSpec,
    ) -> Result<Receipt, WorkflowError> {
        check_name("gid", gid)?;
        check_name("provider kind", kind)?;
        Ok(self.ledger.register_participant(Participant::provider(gid, name, kind, threshold))?)
    }

    /// The authority issues `gid` a signing key for `attr`; the key lands in
    /// the participant's wallet.
    pub fn extract(&mut self, gid: &str, attr: &AttributeDescriptor) -> Result<ExtractedSigningKey, WorkflowError> {
        let mut rec = self.authority(attr.authority_id())?;
        let now = self.now();
        let key = rec.signing.extract(&self.params, gid, attr, self.ledger.state(), now)?;
        self.save_authority(&rec)?;
        let mut w = self.wallet(gid)?;
        w.signing_keys.retain(|k| k.attribute.id() != attr.id());
        w.signing_keys.push(key.clone());
        self.save_wallet(&w)?;
        Ok(key)
    }

    pub fn abe_issue(&mut self, gid: &str, attr: &AttributeId) -> Result<AbeUserKey, WorkflowError> {
        let rec = self.authority(attr.authority_id())?;
        let key = rec.encryption.keygen(&self.params, attr, gid, self.ledger.state())?;
        let mut w = self.wallet(gid)?;
        w.abe_keys.retain(|k| k.attribute != *attr);
        w.abe_keys.push(key.clone());
        self.save_wallet(&w)?;
        Ok(key)
    }

    /// Sign `value` with the wallet's key for `attr`.
    pub fn sign(&mut self, gid: &str, attr: &AttributeId, value: &str) -> Result<AttributeSignature, WorkflowError> {
        let mut w = self.wallet(gid)?;
        let key = w
            .signing_keys
            .iter()
            .find(|k| k.attribute.id() == attr)
            .ok_or_else(|| WorkflowError::NotFound(format!("signing key for {attr} in wallet {gid:?}")))?;
        let sig = sign_attribute(&self.params, key, value)?;
        w.signatures.retain(|s| s.attribute != *attr);
        w.signatures.push(sig.clone());
        self.save_wallet(&w)?;
        Ok(sig)
    }

    /// Publish the wallet's signatures as the caller's profile.
    pub fn write_profile(&mut self, gid: &str, name: Option<&str>) -> Result<Receipt, WorkflowError> {
        let w = self.wallet(gid)?;
        let name =
            match name {
                Some(n) => n.to_owned(),
                None => self.ledger.state().participant(gid).map(|p| p.display_name.clone()).ok_or_else(|| {
                    WorkflowError::Ledger(crate::ledger::LedgerError::UnknownParticipant(gid.to_owned()))
                })?,
            };
        let profile = PatientProfile { gid: gid.to_owned(), name, signatures: w.signatures, ehr_refs: Vec::new() };
        Ok(self.ledger.write_profile(gid, profile)?)
    }

    pub fn grant(&mut self, owner: &str, grantee: Grantee, permission: Permission) -> Result<Receipt, WorkflowError> {
        Ok(self.ledger.set_acl(owner, AclRule::new(owner, grantee, permission))?)
    }

    pub fn encrypt(&mut self, plaintext: &[u8], policy: &AccessPolicy) -> Result<EhrCiphertext, WorkflowError> {
        let mut rng = self.rng("encrypt");
        Ok(abe_encrypt(&self.params, plaintext, policy, self.ledger.state(), &mut rng)?)
    }

    /// Store a container on the edge and attach it to the owner's profile.
    pub fn upload(&mut self, owner: &str, ciphertext: &[u8]) -> Result<(ObjectId, Receipt), WorkflowError> {
        let id = self.edge.put_object(owner, ciphertext)?;
        let receipt = self.ledger.attach_ehr(owner, id)?;
        Ok((id, receipt))
    }

    pub fn request_access(&mut self, caller: &str, owner: &str) -> Result<AccessGrant, WorkflowError> {
        Ok(self.ledger.request_access(caller, owner, &self.edge)?)
    }

    /// Redeem a one-time URL (or bare token).
    pub fn fetch(&self, url: &str) -> Result<Vec<u8>, WorkflowError> {
        match self.edge.redeem(token_from_url(url))? {
            Redemption::Ciphertext(bytes) => Ok(bytes),
            Redemption::Gone => Err(WorkflowError::Gone),
        }
    }

    pub fn decrypt(&self, gid: &str, ciphertext: &[u8]) -> Result<Vec<u8>, WorkflowError> {
        let ct = EhrCiphertext::from_bytes(ciphertext)?;
        let w = self.wallet(gid)?;
        Ok(abe_decrypt(&self.params, &ct, &w.abe_keys)?)
    }

    pub fn verify_ledger(&self) -> Result<ChainStatus, WorkflowError> {
        Ok(self.ledger.verify_chain()?)
    }
}

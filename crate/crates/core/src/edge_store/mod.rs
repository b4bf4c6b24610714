//! Off-chain object store with one-time retrieval tokens.
//!
//! Objects are ABE ciphertext containers addressed by the SHA-256 of their
//! bytes. A token is 32 random bytes rendered as hex; the store keeps only
//! the digest of each token, so neither the object files nor the journal can
//! be used to mint a working URL.
//!
//! Every state change is appended to a JSON-lines journal and synced before
//! it becomes visible. Opening a store replays the journal, so a token
//! redeemed before a crash stays redeemed afterwards.

#[cfg(feature = "http")]
pub mod http;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::{millis_to_utc, Clock, SystemClock};
use crate::maabe::{AbeError, EhrCiphertext};

pub const DEFAULT_BASE_URL: &str = "https://edge.local";
pub const TOKEN_BYTES: usize = 32;

pub fn default_ttl() -> Duration {
    Duration::hours(24)
}

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("not a valid ciphertext container: {0}")]
    Malformed(#[from] AbeError),
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("ttl must be positive")]
    InvalidTtl,
    #[error("edge store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt journal at line {line}: {reason}")]
    Journal { line: usize, reason: String },
}

/// SHA-256 of the stored ciphertext bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(pub [u8; 32]);

impl ObjectId {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for ObjectId {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Self(out))
    }
}

impl Serialize for ObjectId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ObjectId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub object_id: ObjectId,
    pub owner_gid: String,
    pub created_at: DateTime<Utc>,
    pub len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenState {
    Unredeemed,
    Redeemed,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRecord {
    pub object_id: ObjectId,
    pub state: TokenState,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub redeemed_at: Option<DateTime<Utc>>,
}

/// Returned once per issue. The plaintext token exists only here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuedToken {
    pub token: String,
    pub url: String,
    pub object_id: ObjectId,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

impl IssuedToken {
    pub fn token_digest(&self) -> [u8; 32] {
        token_digest(&self.token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Redemption {
    Ciphertext(Vec<u8>),
    Gone,
}

impl Redemption {
    pub fn is_gone(&self) -> bool {
        matches!(self, Redemption::Gone)
    }
}

/// Digest under which a token is stored and logged.
pub fn token_digest(token: &str) -> [u8; 32] {
    Sha256::digest(token.as_bytes()).into()
}

/// Pull the token out of `scheme://host/once/<token>` or accept a bare token.
pub fn token_from_url(url_or_token: &str) -> &str {
    match url_or_token.rsplit_once("/once/") {
        Some((_, t)) => t,
        None => url_or_token,
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum JournalEntry {
    Put { object_id: ObjectId, owner_gid: String, created_at_ms: i64, len: u64 },
    Issue { token_digest: String, object_id: ObjectId, issued_at_ms: i64, expires_at_ms: i64 },
    Redeem { token_digest: String, at_ms: i64 },
    Expire { token_digest: String, at_ms: i64 },
}

struct Inner {
    objects: BTreeMap<ObjectId, ObjectMeta>,
    tokens: HashMap<[u8; 32], TokenRecord>,
    journal: File,
    rng: Box<dyn RngCore + Send>,
}

pub struct EdgeStore {
    root: PathBuf,
    base_url: String,
    default_ttl: Duration,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
}

impl fmt::Debug for EdgeStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EdgeStore").field("root", &self.root).field("base_url", &self.base_url).finish_non_exhaustive()
    }
}

impl EdgeStore {
    /// Open with the system clock and OS randomness.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, EdgeError> {
        Self::open_with(root, Arc::new(SystemClock), Box::new(OsRng))
    }

    pub fn open_with(
        root: impl AsRef<Path>,
        clock: Arc<dyn Clock>,
        rng: Box<dyn RngCore + Send>,
    ) -> Result<Self, EdgeError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("objects"))?;
        let journal_path = root.join("journal.jsonl");
        let mut objects = BTreeMap::new();
        let mut tokens = HashMap::new();
        if journal_path.exists() {
            let reader = BufReader::new(File::open(&journal_path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: JournalEntry = serde_json::from_str(&line)
                    .map_err(|e| EdgeError::Journal { line: i + 1, reason: e.to_string() })?;
                apply(&mut objects, &mut tokens, entry).map_err(|reason| EdgeError::Journal { line: i + 1, reason })?;
            }
        }
        let journal = OpenOptions::new().create(true).append(true).open(&journal_path)?;
        Ok(Self {
            root,
            base_url: DEFAULT_BASE_URL.to_owned(),
            default_ttl: default_ttl(),
            clock,
            inner: Mutex::new(Inner { objects, tokens, journal, rng }),
        })
    }

    pub fn with_base_url(mut self, base_url: impl Into<String>) -> Self {
        self.base_url = base_url.into().trim_end_matches('/').to_owned();
        self
    }

    pub fn with_default_ttl(mut self, ttl: Duration) -> Self {
        self.default_ttl = ttl;
        self
    }

    pub fn default_ttl(&self) -> Duration {
        self.default_ttl
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn object_path(&self, id: &ObjectId) -> PathBuf {
        self.root.join("objects").join(id.to_string())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Store a ciphertext container. Same bytes give the same id and one copy.
    pub fn put_object(&self, owner_gid: &str, ciphertext: &[u8]) -> Result<ObjectId, EdgeError> {
        EhrCiphertext::from_bytes(ciphertext)?;
        let id = ObjectId::of(ciphertext);
        let mut inner = self.lock();
        if inner.objects.contains_key(&id) {
            return Ok(id);
        }
        let path = self.object_path(&id);
        let tmp = path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(ciphertext)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        let now = self.clock.now();
        let entry = JournalEntry::Put {
            object_id: id,
            owner_gid: owner_gid.to_owned(),
            created_at_ms: now.timestamp_millis(),
            len: ciphertext.len() as u64,
        };
        commit(&mut inner, entry)?;
        Ok(id)
    }

    pub fn object_meta(&self, id: &ObjectId) -> Option<ObjectMeta> {
        self.lock().objects.get(id).cloned()
    }

    pub fn objects(&self) -> Vec<ObjectMeta> {
        self.lock().objects.values().cloned().collect()
    }

    /// Read stored bytes directly; used by the owner and by tests, not by
    /// requesters, who go through [`EdgeStore::redeem`].
    pub fn get_object(&self, id: &ObjectId) -> Result<Vec<u8>, EdgeError> {
        if !self.lock().objects.contains_key(id) {
            return Err(EdgeError::UnknownObject(*id));
        }
        Ok(fs::read(self.object_path(id))?)
    }

    pub fn issue_token(&self, object_id: &ObjectId, ttl: Option<Duration>) -> Result<IssuedToken, EdgeError> {
        let ttl = ttl.unwrap_or(self.default_ttl);
        if ttl <= Duration::zero() {
            return Err(EdgeError::InvalidTtl);
        }
        let mut inner = self.lock();
        if !inner.objects.contains_key(object_id) {
            return Err(EdgeError::UnknownObject(*object_id));
        }
        let mut raw = [0u8; TOKEN_BYTES];
        inner.rng.fill_bytes(&mut raw);
        let token = hex::encode(raw);
        let digest = token_digest(&token);
        let issued_at = self.clock.now();
        let expires_at = issued_at + ttl;
        let entry = JournalEntry::Issue {
            token_digest: hex::encode(digest),
            object_id: *object_id,
            issued_at_ms: issued_at.timestamp_millis(),
            expires_at_ms: expires_at.timestamp_millis(),
        };
        commit(&mut inner, entry)?;
        Ok(IssuedToken {
            url: format!("{}/once/{}", self.base_url, token),
            token,
            object_id: *object_id,
            // round-trip through millis so the returned values match a replay
            issued_at: millis_to_utc(issued_at.timestamp_millis()),
            expires_at: millis_to_utc(expires_at.timestamp_millis()),
        })
    }

    /// Exactly-once retrieval. Unknown, used, and expired tokens all give
    /// [`Redemption::Gone`].
    pub fn redeem(&self, token: &str) -> Result<Redemption, EdgeError> {
        let digest = token_digest(token);
        let mut inner = self.lock();
        let now = self.clock.now();
        let Some(rec) = inner.tokens.get(&digest).cloned() else {
            return Ok(Redemption::Gone);
        };
        if rec.state != TokenState::Unredeemed {
            return Ok(Redemption::Gone);
        }
        let hex_digest = hex::encode(digest);
        if now >= rec.expires_at {
            commit(&mut inner, JournalEntry::Expire { token_digest: hex_digest, at_ms: now.timestamp_millis() })?;
            return Ok(Redemption::Gone);
        }
        let bytes = fs::read(self.object_path(&rec.object_id))?;
        commit(&mut inner, JournalEntry::Redeem { token_digest: hex_digest, at_ms: now.timestamp_millis() })?;
        Ok(Redemption::Ciphertext(bytes))
    }

    /// Mark every unredeemed token whose ttl has elapsed as expired.
    pub fn expire_sweep(&self, now: DateTime<Utc>) -> Result<usize, EdgeError> {
        let mut inner = self.lock();
        let mut stale: Vec<[u8; 32]> = inner
            .tokens
            .iter()
            .filter(|(_, r)| r.state == TokenState::Unredeemed && r.expires_at < now)
            .map(|(d, _)| *d)
            .collect();
        stale.sort_unstable();
        for d in &stale {
            commit(&mut inner, JournalEntry::Expire { token_digest: hex::encode(d), at_ms: now.timestamp_millis() })?;
        }
        Ok(stale.len())
    }

    pub fn token_state(&self, token: &str) -> Option<TokenRecord> {
        self.lock().tokens.get(&token_digest(token)).cloned()
    }

    pub fn token_count(&self) -> usize {
        self.lock().tokens.len()
    }
}

fn commit(inner: &mut Inner, entry: JournalEntry) -> Result<(), EdgeError> {
    let mut line = serde_json::to_vec(&entry).expect("journal entries serialize");
    line.push(b'\n');
    inner.journal.write_all(&line)?;
    inner.journal.sync_data()?;
    apply(&mut inner.objects, &mut inner.tokens, entry).map_err(|reason| EdgeError::Journal { line: 0, reason })
}

fn parse_digest(s: &str) -> Result<[u8; 32], String> {
    let mut out = [0u8; 32];
    hex::decode_to_slice(s, &mut out).map_err(|e| e.to_string())?;
    Ok(out)
}

fn apply(
    objects: &mut BTreeMap<ObjectId, ObjectMeta>,
    tokens: &mut HashMap<[u8; 32], TokenRecord>,
    entry: JournalEntry,
) -> Result<(), String> {
    match entry {
        JournalEntry::Put { object_id, owner_gid, created_at_ms, len } => {
            objects.entry(object_id).or_insert(ObjectMeta {
                object_id,
                owner_gid,
                created_at: millis_to_utc(created_at_ms),
                len,
            });
        }
        JournalEntry::Issue { token_digest, object_id, issued_at_ms, expires_at_ms } => {
            if !objects.contains_key(&object_id) {
                return Err(format!("token for unknown object {object_id}"));
            }
            let d = parse_digest(&token_digest)?;
            if tokens.contains_key(&d) {
                return Err("token issued twice".into());
            }
            tokens.insert(
                d,
                TokenRecord {
                    object_id,
                    state: TokenState::Unredeemed,
                    issued_at: millis_to_utc(issued_at_ms),
                    expires_at: millis_to_utc(expires_at_ms),
                    redeemed_at: None,
                },
            );
        }
        JournalEntry::Redeem { token_digest, at_ms } => {
            let rec = tokens.get_mut(&parse_digest(&token_digest)?).ok_or("redeem of unknown token")?;
            if rec.state != TokenState::Unredeemed {
                return Err("token left a terminal state".into());
            }
            rec.state = TokenState::Redeemed;
            rec.redeemed_at = Some(millis_to_utc(at_ms));
        }
        JournalEntry::Expire { token_digest, .. } => {
            let rec = tokens.get_mut(&parse_digest(&token_digest)?).ok_or("expiry of unknown token")?;
            if rec.state != TokenState::Unredeemed {
                return Err("token left a terminal state".into());
            }
            rec.state = TokenState::Expired;
        }
    }
    Ok(())
}

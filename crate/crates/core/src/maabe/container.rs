//! Binary layout of an encrypted EHR object.
//!
//! All integers are big-endian.
//!
//! ```text
//! u8        format version (1)
//! u8        curve id
//! u32       policy length, then canonical policy text (UTF-8)
//! u32       row count, then per row: u32 blob length (80),
//!           48-byte ephemeral G1 point ‖ 32-byte wrapped share
//! [32]      key-check value
//! [19]      payload nonce prefix
//! u32       chunk size
//! u64       plaintext length
//! u32       chunk count, then per chunk: u32 length, sealed bytes
//! ```
//!
//! Everything before the first chunk is the header; its SHA-256 digest is the
//! associated data of every payload chunk.

use sha2::{Digest, Sha256};

use super::policy::AccessPolicy;
use super::AbeError;
use crate::pairing::{CurveId, ENCODING_VERSION};

pub const CONTAINER_VERSION: u8 = ENCODING_VERSION;
pub const NONCE_PREFIX_LEN: usize = 19;
pub const ROW_BLOB_LEN: usize = 80;
pub const TAG_LEN: usize = 16;
pub const DEFAULT_CHUNK_SIZE: u32 = 64 * 1024;

/// One per LSSS row: ephemeral point and the share masked under the row's
/// attribute public key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowEncapsulation {
    pub ephemeral: [u8; 48],
    pub wrapped_share: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EhrCiphertext {
    pub version: u8,
    pub curve: CurveId,
    pub policy: AccessPolicy,
    pub encapsulations: Vec<RowEncapsulation>,
    pub key_check: [u8; 32],
    pub payload_nonce: [u8; NONCE_PREFIX_LEN],
    pub chunk_size: u32,
    pub plaintext_len: u64,
    pub payload: Vec<Vec<u8>>,
}

fn malformed(msg: impl Into<String>) -> AbeError {
    AbeError::Malformed(msg.into())
}

pub(crate) fn expected_chunks(plaintext_len: u64, chunk_size: u32) -> u64 {
    plaintext_len.div_ceil(u64::from(chunk_size))
}

impl EhrCiphertext {
    pub fn header_bytes(&self) -> Vec<u8> {
        let policy = self.policy.to_string();
        let mut out = Vec::with_capacity(64 + policy.len() + self.encapsulations.len() * (ROW_BLOB_LEN + 4));
        out.push(self.version);
        out.push(self.curve.as_byte());
        out.extend_from_slice(&(policy.len() as u32).to_be_bytes());
        out.extend_from_slice(policy.as_bytes());
        out.extend_from_slice(&(self.encapsulations.len() as u32).to_be_bytes());
        for row in &self.encapsulations {
            out.extend_from_slice(&(ROW_BLOB_LEN as u32).to_be_bytes());
            out.extend_from_slice(&row.ephemeral);
            out.extend_from_slice(&row.wrapped_share);
        }
        out.extend_from_slice(&self.key_check);
        out.extend_from_slice(&self.payload_nonce);
        out.extend_from_slice(&self.chunk_size.to_be_bytes());
        out.extend_from_slice(&self.plaintext_len.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out
    }

    pub fn header_digest(&self) -> [u8; 32] {
        Sha256::digest(self.header_bytes()).into()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header_bytes();
        for chunk in &self.payload {
            out.extend_from_slice(&(chunk.len() as u32).to_be_bytes());
            out.extend_from_slice(chunk);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader { bytes, pos: 0 };
        let version = r.u8()?;
        if version != CONTAINER_VERSION {
            return Err(malformed(format!("unsupported container version {version}")));
        }
        let curve = CurveId::from_byte(r.u8()?).ok_or_else(|| malformed("unknown curve id"))?;
        let policy_len = r.u32()? as usize;
        let policy_text = std::str::from_utf8(r.take(policy_len)?).map_err(|_| malformed("policy is not UTF-8"))?;
        let policy = AccessPolicy::parse(policy_text).map_err(|e| malformed(format!("embedded policy: {e}")))?;
        if policy.to_string() != policy_text {
            return Err(malformed("policy text is not in canonical form"));
        }

        let rows = r.u32()? as usize;
        if rows != policy.leaves().len() {
            return Err(malformed(format!("{rows} encapsulations for a {}-row policy", policy.leaves().len())));
        }
        let mut encapsulations = Vec::with_capacity(rows);
        for _ in 0..rows {
            if r.u32()? as usize != ROW_BLOB_LEN {
                return Err(malformed("bad encapsulation length"));
            }
            encapsulations.push(RowEncapsulation { ephemeral: r.array()?, wrapped_share: r.array()? });
        }
        let key_check = r.array()?;
        let payload_nonce = r.array()?;
        let chunk_size = r.u32()?;
        if chunk_size == 0 {
            return Err(malformed("zero chunk size"));
        }
        let plaintext_len = r.u64()?;
        let chunk_count = r.u32()?;
        if u64::from(chunk_count) != expected_chunks(plaintext_len, chunk_size) {
            return Err(malformed("chunk count does not match plaintext length"));
        }
        let mut payload = Vec::with_capacity(chunk_count as usize);
        let mut remaining = plaintext_len;
        for _ in 0..chunk_count {
            let want = remaining.min(u64::from(chunk_size));
            remaining -= want;
            let len = r.u32()? as usize;
            if len as u64 != want + TAG_LEN as u64 {
                return Err(malformed("chunk length mismatch"));
            }
            payload.push(r.take(len)?.to_vec());
        }
        if r.pos != bytes.len() {
            return Err(malformed("trailing bytes after payload"));
        }
        Ok(Self {
            version,
            curve,
            policy,
            encapsulations,
            key_check,
            payload_nonce,
            chunk_size,
            plaintext_len,
            payload,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AbeError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| malformed("truncated container"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], AbeError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8, AbeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, AbeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, AbeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }
}

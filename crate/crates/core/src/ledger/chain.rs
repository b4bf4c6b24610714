//! Hash-chained transaction records and their on-disk encoding.
//!
//! ```text
//! this_hash = SHA-256(seq u64 ‖ timestamp_ms i64 ‖ kind u8 ‖ event_id [16]
//!                     ‖ payload_digest [32] ‖ prev_hash [32])
//! ```
//!
//! A transaction is encoded as `version u8` followed by the same fields and
//! then `this_hash`, 130 bytes in total. The record file is a sequence of
//! `u32 length ‖ encoding` records. All integers are big-endian.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uuid::Uuid;

use crate::clock::millis_to_utc;

pub const TX_ENCODING_VERSION: u8 = 1;
pub const TX_ENCODED_LEN: usize = 1 + 8 + 8 + 1 + 16 + 32 + 32 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Register = 1,
    ProfileWrite = 2,
    AuthEvent = 3,
    AccessActivity = 4,
}

impl TxKind {
    pub fn as_byte(self) -> u8 {
        self as u8
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(TxKind::Register),
            2 => Some(TxKind::ProfileWrite),
            3 => Some(TxKind::AuthEvent),
            4 => Some(TxKind::AccessActivity),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TxKind::Register => "register",
            TxKind::ProfileWrite => "profile_write",
            TxKind::AuthEvent => "auth_event",
            TxKind::AccessActivity => "access_activity",
        }
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerTransaction {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    /// Raw kind byte, so a corrupted value survives decoding and is caught
    /// by the hash check instead of a parse error.
    pub kind: u8,
    pub event_id: Uuid,
    pub payload_digest: [u8; 32],
    pub prev_hash: [u8; 32],
    pub this_hash: [u8; 32],
}

impl LedgerTransaction {
    pub fn new(
        seq: u64,
        timestamp: DateTime<Utc>,
        kind: TxKind,
        event_id: Uuid,
        payload_digest: [u8; 32],
        prev_hash: [u8; 32],
    ) -> Self {
        let timestamp = millis_to_utc(timestamp.timestamp_millis());
        let mut tx =
            Self { seq, timestamp, kind: kind.as_byte(), event_id, payload_digest, prev_hash, this_hash: [0; 32] };
        tx.this_hash = tx.compute_hash();
        tx
    }

    pub fn tx_kind(&self) -> Option<TxKind> {
        TxKind::from_byte(self.kind)
    }

    pub fn compute_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seq.to_be_bytes());
        h.update(self.timestamp.timestamp_millis().to_be_bytes());
        h.update([self.kind]);
        h.update(self.event_id.as_bytes());
        h.update(self.payload_digest);
        h.update(self.prev_hash);
        h.finalize().into()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TX_ENCODED_LEN);
        out.push(TX_ENCODING_VERSION);
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.timestamp.timestamp_millis().to_be_bytes());
        out.push(self.kind);
        out.extend_from_slice(self.event_id.as_bytes());
        out.extend_from_slice(&self.payload_digest);
        out.extend_from_slice(&self.prev_hash);
        out.extend_from_slice(&self.this_hash);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, String> {
        if b.len() != TX_ENCODED_LEN {
            return Err(format!("transaction encoding is {} bytes, expected {TX_ENCODED_LEN}", b.len()));
        }
        if b[0] != TX_ENCODING_VERSION {
            return Err(format!("unsupported transaction version {}", b[0]));
        }
        let arr = |r: std::ops::Range<usize>| -> [u8; 32] { b[r].try_into().expect("fixed slice") };
        Ok(Self {
            seq: u64::from_be_bytes(b[1..9].try_into().expect("fixed slice")),
            timestamp: millis_to_utc(i64::from_be_bytes(b[9..17].try_into().expect("fixed slice"))),
            kind: b[17],
            event_id: Uuid::from_bytes(b[18..34].try_into().expect("fixed slice")),
            payload_digest: arr(34..66),
            prev_hash: arr(66..98),
            this_hash: arr(98..130),
        })
    }

    /// `u32 length ‖ encoding`.
    pub fn to_record(&self) -> Vec<u8> {
        let body = self.to_bytes();
        let mut out = (body.len() as u32).to_be_bytes().to_vec();
        out.extend_from_slice(&body);
        out
    }
}

/// Split a record file into transactions. A record that cannot be decoded
/// stops the scan; its index is returned with the reason.
pub fn parse_records(bytes: &[u8]) -> (Vec<LedgerTransaction>, Option<(u64, String)>) {
    let mut txs = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let idx = txs.len() as u64;
        let Some(len_bytes) = bytes.get(pos..pos + 4) else {
            return (txs, Some((idx, "truncated record length".into())));
        };
        let len = u32::from_be_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        pos += 4;
        let Some(body) = pos.checked_add(len).and_then(|end| bytes.get(pos..end)) else {
            return (txs, Some((idx, "truncated record body".into())));
        };
        match LedgerTransaction::from_bytes(body) {
            Ok(tx) => txs.push(tx),
            Err(e) => return (txs, Some((idx, e))),
        }
        pos += len;
    }
    (txs, None)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainStatus {
    Ok { height: u64 },
    Broken { seq: u64, reason: String },
}

impl ChainStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainStatus::Ok { .. })
    }

    pub fn broken_at(&self) -> Option<u64> {
        match self {
            ChainStatus::Broken { seq, .. } => Some(*seq),
            ChainStatus::Ok { .. } => None,
        }
    }
}

/// Recompute every hash and link; report the first position that fails.
/// Positions are list indices, which equal `seq` on an intact chain.
pub fn verify_transactions(txs: &[LedgerTransaction]) -> ChainStatus {
    let mut prev = [0u8; 32];
    for (i, tx) in txs.iter().enumerate() {
        let at = i as u64;
        let broken = |reason: &str| ChainStatus::Broken { seq: at, reason: reason.to_owned() };
        if tx.seq != at {
            return broken("sequence number out of order");
        }
        if tx.prev_hash != prev {
            return broken("prev_hash does not match the preceding transaction");
        }
        if tx.tx_kind().is_none() {
            return broken("unknown transaction kind");
        }
        if tx.compute_hash() != tx.this_hash {
            return broken("this_hash does not match the transaction fields");
        }
        prev = tx.this_hash;
    }
    ChainStatus::Ok { height: txs.len() as u64 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: u64) -> Vec<LedgerTransaction> {
        let mut prev = [0u8; 32];
        (0..n)
            .map(|i| {
                let tx = LedgerTransaction::new(
                    i,
                    millis_to_utc(1_700_000_000_000 + i as i64),
                    TxKind::Register,
                    Uuid::from_u128(i as u128),
                    [i as u8; 32],
                    prev,
                );
                prev = tx.this_hash;
                tx
            })
            .collect()
    }

    #[test]
    fn intact_chain_verifies() {
        assert_eq!(verify_transactions(&chain(5)), ChainStatus::Ok { height: 5 });
        assert_eq!(verify_transactions(&[]), ChainStatus::Ok { height: 0 });
    }

    #[test]
    fn payload_digest_mutation_breaks_at_that_seq() {
        let mut c = chain(6);
        c[3].payload_digest[0] ^= 1;
        assert_eq!(verify_transactions(&c).broken_at(), Some(3));
    }

    #[test]
    fn truncation_is_not_detected() {
        let c = chain(6);
        assert!(verify_transactions(&c[..5]).is_ok());
    }

    #[test]
    fn record_round_trip() {
        let c = chain(3);
        let bytes: Vec<u8> = c.iter().flat_map(|t| t.to_record()).collect();
        let (parsed, err) = parse_records(&bytes);
        assert!(err.is_none());
        assert_eq!(parsed, c);
        let (parsed, err) = parse_records(&bytes[..bytes.len() - 3]);
        assert_eq!(parsed.len(), 2);
        assert_eq!(err.unwrap().0, 2);
    }
}

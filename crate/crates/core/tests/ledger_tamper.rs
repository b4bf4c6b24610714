mod common;

use std::fs;

use abmse::ledger::{
    load_state_snapshot, replay, verify_dir, verify_transactions, ChainStatus, LedgerTransaction, TxKind,
};
use chrono::Duration;
use common::{annie_ledger, AnnieLedger, LAB, RESEARCH};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use uuid::Uuid;

const HEIGHT: u64 = 50;
const MUTATIONS: usize = 100;
const RECORD: usize = 4 + 130;

fn fifty(dir: &std::path::Path) -> AnnieLedger {
    let mut f = annie_ledger(dir, 40);
    let mut i = 0;
    while f.ledger.height() < HEIGHT {
        f.clock.advance(Duration::seconds(7));
        let caller = if i % 2 == 0 { LAB } else { RESEARCH };
        f.ledger.request_access(caller, "annie", &f.edge).unwrap();
        i += 1;
    }
    assert_eq!(f.ledger.height(), HEIGHT);
    f
}

fn mutate(tx: &mut LedgerTransaction, field: usize, rng: &mut ChaCha20Rng) {
    let mut flip = |b: &mut [u8]| {
        let i = rng.gen_range(0..b.len());
        b[i] ^= 1 << rng.gen_range(0..8);
    };
    match field {
        0 => tx.seq ^= 1 << rng.gen_range(0..8),
        1 => tx.timestamp += Duration::seconds(rng.gen_range(1..86_400)),
        2 => tx.kind ^= 1 << rng.gen_range(0..8),
        3 => {
            let mut b = *tx.event_id.as_bytes();
            flip(&mut b);
            tx.event_id = Uuid::from_bytes(b);
        }
        4 => flip(&mut tx.payload_digest),
        5 => flip(&mut tx.prev_hash),
        _ => flip(&mut tx.this_hash),
    }
}

#[test]
fn single_field_mutations_are_detected_at_or_before_the_mutation() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fifty(tmp.path());
    let txs = f.ledger.transactions().to_vec();
    assert_eq!(verify_transactions(&txs), ChainStatus::Ok { height: HEIGHT });
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    for _ in 0..MUTATIONS {
        let at = rng.gen_range(0..txs.len());
        let field = rng.gen_range(0..7);
        let mut copy = txs.clone();
        mutate(&mut copy[at], field, &mut rng);
        let got = verify_transactions(&copy).broken_at();
        assert!(got.is_some_and(|s| s <= at as u64), "tx {at} field {field}: {got:?}");
    }
}

#[test]
fn on_disk_byte_flips_are_detected_at_or_before_the_record() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fifty(tmp.path());
    let dir = f.ledger.dir().to_path_buf();
    let path = dir.join("chain.log");
    let orig = fs::read(&path).unwrap();
    assert_eq!(orig.len(), HEIGHT as usize * RECORD);
    let mut rng = ChaCha20Rng::seed_from_u64(42);
    for _ in 0..MUTATIONS {
        let pos = rng.gen_range(0..orig.len());
        let mut bytes = orig.clone();
        bytes[pos] ^= 1 << rng.gen_range(0..8);
        fs::write(&path, &bytes).unwrap();
        let got = verify_dir(&dir).unwrap().broken_at();
        assert!(got.is_some_and(|s| s <= (pos / RECORD) as u64), "byte {pos}: {got:?}");
    }
    fs::write(&path, &orig).unwrap();
    assert!(verify_dir(&dir).unwrap().is_ok());
}

#[test]
fn payload_edits_are_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fifty(tmp.path());
    let dir = f.ledger.dir().to_path_buf();
    let tx = &f.ledger.transactions()[17];
    let p = dir.join("payloads").join(format!("{}.json", hex::encode(tx.payload_digest)));
    let orig = fs::read(&p).unwrap();
    fs::write(&p, String::from_utf8(orig.clone()).unwrap().replace("granted", "rejected")).unwrap();
    assert_eq!(verify_dir(&dir).unwrap().broken_at(), Some(17));
    fs::remove_file(&p).unwrap();
    assert_eq!(verify_dir(&dir).unwrap().broken_at(), Some(17));
}

#[test]
fn replay_reconstructs_the_state_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fifty(tmp.path());
    let dir = f.ledger.dir().to_path_buf();
    let live = f.ledger.state().clone();
    let (txs, replayed) = replay(&dir).unwrap();
    assert_eq!(txs.len() as u64, HEIGHT);
    assert_eq!(replayed, live);
    assert_eq!(load_state_snapshot(&dir).unwrap(), live);
    let auth_txs = txs.iter().filter(|t| t.tx_kind() == Some(TxKind::AuthEvent)).count();
    assert_eq!(f.ledger.auth_events().unwrap().len(), auth_txs);

    fs::remove_file(dir.join("state.json")).unwrap();
    assert_eq!(replay(&dir).unwrap().1, live);
}

#[test]
fn chain_and_event_payloads_carry_no_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fifty(tmp.path());
    let chain = fs::read(f.ledger.dir().join("chain.log")).unwrap();
    let needles = ["annie", "Annie Foster", "0003231", "9907184", "1EG4-TE5-MK72", LAB, RESEARCH];
    for n in needles {
        assert!(!chain.windows(n.len()).any(|w| w == n.as_bytes()), "{n} in chain");
    }
    for tx in f.ledger.transactions() {
        if tx.tx_kind() == Some(TxKind::AuthEvent) {
            let text = serde_json::to_string(&f.ledger.payload(tx).unwrap()).unwrap();
            for n in needles {
                assert!(!text.contains(n), "{n} in {text}");
            }
        }
    }
}

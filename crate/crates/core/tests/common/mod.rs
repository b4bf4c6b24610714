//! Helpers shared by the integration tests: an independent policy model,
//! a big-integer linear-algebra oracle, and a populated ledger fixture.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use abmse::abms::{sign_attribute, AttributeSignature, SignatureAuthority, ThresholdSpec};
use abmse::attribute::{AttributeDescriptor, AttributeId};
use abmse::clock::ManualClock;
use abmse::edge_store::{EdgeStore, ObjectId};
use abmse::ledger::{AclRule, Grantee, Ledger, Participant, PatientProfile, Permission};
use abmse::maabe::{AccessPolicy, EncryptionAuthority, PublicKeyRegistry};
use abmse::pairing::PairingParams;
use bls12_381::Scalar;
use chrono::{DateTime, Utc};
use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const LABELS: [&str; 4] = ["a", "b", "c", "d"];
pub const AUTHORITY: &str = "clinic";

/// Test-side policy tree, evaluated by brute force.
#[derive(Debug, Clone)]
pub enum Tree {
    Leaf(usize),
    Gate(usize, Vec<Tree>),
}

impl Tree {
    pub fn eval(&self, held: u8) -> bool {
        match self {
            Tree::Leaf(i) => held & (1 << i) != 0,
            Tree::Gate(k, cs) => cs.iter().filter(|c| c.eval(held)).count() >= *k,
        }
    }

    /// Always written in `k of (...)` form, so the parser's AND/OR sugar is
    /// not assumed.
    pub fn text(&self) -> String {
        match self {
            Tree::Leaf(i) => format!("{}@{AUTHORITY}", LABELS[*i]),
            Tree::Gate(k, cs) => {
                let inner: Vec<String> = cs.iter().map(Tree::text).collect();
                format!("{k} of ({})", inner.join(", "))
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Gate(_, cs) => cs.iter().map(Tree::leaf_count).sum(),
        }
    }

    fn relabel(&self, labels: &mut impl Iterator<Item = usize>) -> Tree {
        match self {
            Tree::Leaf(_) => Tree::Leaf(labels.next().expect("enough labels")),
            Tree::Gate(k, cs) => Tree::Gate(*k, cs.iter().map(|c| c.relabel(labels)).collect()),
        }
    }

    pub fn policy(&self) -> AccessPolicy {
        AccessPolicy::parse(&self.text()).unwrap_or_else(|e| panic!("{}: {e}", self.text()))
    }
}

fn compositions(n: usize) -> Vec<Vec<usize>> {
    // ordered splits of n into at least two positive parts
    fn go(n: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 0 {
            if prefix.len() >= 2 {
                out.push(prefix.clone());
            }
            return;
        }
        for first in 1..=n {
            prefix.push(first);
            go(n - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(n, &mut Vec::new(), &mut out);
    out
}

/// Every tree shape with exactly `n` leaves, gates of two or more
/// children, and every threshold `1..=children`. Leaves are placeholders.
pub fn shapes(n: usize) -> Vec<Tree> {
    if n == 1 {
        return vec![Tree::Leaf(0)];
    }
    let mut out = Vec::new();
    for comp in compositions(n) {
        let mut combos: Vec<Vec<Tree>> = vec![Vec::new()];
        for &part in &comp {
            let subs = shapes(part);
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    subs.iter().map(move |s| {
                        let mut v = prefix.clone();
                        v.push(s.clone());
                        v
                    })
                })
                .collect();
        }
        for children in combos {
            for k in 1..=children.len() {
                out.push(Tree::Gate(k, children.clone()));
            }
        }
    }
    out
}

/// Shapes with up to four leaves labeled `a, b, c, d` left to right, plus
/// variants of the four-leaf shapes where a label repeats.
pub fn policy_family() -> Vec<Tree> {
    let mut out = Vec::new();
    for n in 1..=4 {
        for s in shapes(n) {
            out.push(s.relabel(&mut (0..n)));
        }
    }
    for s in shapes(4) {
        out.push(s.relabel(&mut [0usize, 1, 0, 2].into_iter()));
        out.push(s.relabel(&mut [3usize, 3, 3, 1].into_iter()));
    }
    out
}

pub fn attr(i: usize) -> AttributeId {
    AttributeId::new(AUTHORITY, LABELS[i]).unwrap()
}

pub fn held_set(mask: u8) -> BTreeSet<AttributeId> {
    (0..4).filter(|i| mask & (1 << i) != 0).map(attr).collect()
}

pub fn p_modulus() -> BigUint {
    BigUint::parse_bytes(b"73eda753299d7d483339d80809a1d80553bda402fffe5bfeffffffff00000001", 16).unwrap()
}

pub fn to_big(s: &Scalar) -> BigUint {
    BigUint::from_bytes_le(&s.to_bytes())
}

/// Rank of `rows` over GF(p), by plain Gaussian elimination on big integers.
pub fn rank_mod_p(rows: &[Vec<BigUint>], p: &BigUint) -> usize {
    let mut m: Vec<Vec<BigUint>> = rows.iter().map(|r| r.iter().map(|x| x % p).collect()).collect();
    let cols = m.first().map_or(0, Vec::len);
    let zero = BigUint::from(0u32);
    let exp = p - BigUint::from(2u32);
    let mut rank = 0;
    for c in 0..cols {
        let Some(pivot) = (rank..m.len()).find(|&r| m[r][c] != zero) else { continue };
        m.swap(rank, pivot);
        let inv = m[rank][c].modpow(&exp, p);
        for x in m[rank].iter_mut() {
            *x = (&*x * &inv) % p;
        }
        let pivot = m[rank].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != rank && row[c] != zero {
                let f = row[c].clone();
                for (x, q) in row.iter_mut().zip(&pivot) {
                    *x = (&*x + p - (&f * q) % p) % p;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Whether `(1, 0, …, 0)` lies in the span of the selected rows.
pub fn target_in_span(matrix: &[Vec<Scalar>], rows: &[usize]) -> bool {
    let p = p_modulus();
    let cols = matrix.first().map_or(1, Vec::len);
    let sel: Vec<Vec<BigUint>> = rows.iter().map(|&r| matrix[r].iter().map(to_big).collect()).collect();
    let mut with_target = sel.clone();
    let mut e1 = vec![BigUint::from(0u32); cols];
    e1[0] = BigUint::from(1u32);
    with_target.push(e1);
    rank_mod_p(&sel, &p) == rank_mod_p(&with_target, &p)
}

/// Encryption authority over `a..d@clinic` with published keys.
pub fn abe_world(seed: u64) -> (PairingParams, EncryptionAuthority, PublicKeyRegistry, BTreeSet<String>, ChaCha20Rng) {
    let params = PairingParams::setup(128).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut auth = EncryptionAuthority::new(AUTHORITY);
    let mut reg = PublicKeyRegistry::new();
    for i in 0..4 {
        let k = auth.setup_attribute(&params, &attr(i), &mut rng).unwrap();
        reg.publish(attr(i), k.public_key).unwrap();
    }
    let dir = BTreeSet::from(["user".to_owned(), "other".to_owned()]);
    (params, auth, reg, dir, rng)
}

pub fn start() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2026-03-01T09:00:00Z").unwrap().with_timezone(&Utc)
}

pub fn annie_attrs() -> [AttributeDescriptor; 3] {
    [
        AttributeDescriptor::new("hospital", "patient_id", "0003231").unwrap(),
        AttributeDescriptor::new("dmv", "driver_license", "9907184").unwrap(),
        AttributeDescriptor::new("insurer", "insurance_id", "1EG4-TE5-MK72").unwrap(),
    ]
}

pub const LAB: &str = "lab-scientist-07";
pub const RESEARCH: &str = "research-scientist-07";

pub struct AnnieLedger {
    pub ledger: Ledger,
    pub edge: EdgeStore,
    pub clock: Arc<ManualClock>,
    pub signatures: Vec<AttributeSignature>,
    pub object: ObjectId,
    pub ciphertext: Vec<u8>,
}

/// Annie with three verified signatures, an attached record, both provider
/// kinds registered (3/3 and 1/3), and `request_access` granted to any
/// provider.
pub fn annie_ledger(dir: &Path, seed: u64) -> AnnieLedger {
    let params = PairingParams::setup(128).unwrap();
    let clock = Arc::new(ManualClock::new(start()));
    let mut ledger =
        Ledger::open(dir.join("ledger"), params, clock.clone(), Box::new(ChaCha20Rng::seed_from_u64(seed))).unwrap();
    let edge =
        EdgeStore::open_with(dir.join("edge"), clock.clone(), Box::new(ChaCha20Rng::seed_from_u64(seed + 1))).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed + 2);

    ledger.register_participant(Participant::patient("annie", "Annie Foster")).unwrap();
    let mut signatures = Vec::new();
    for a in annie_attrs() {
        ledger.register_participant(Participant::authority(a.authority_id(), a.authority_id())).unwrap();
        let mut auth = SignatureAuthority::new(a.authority_id());
        let vk = auth.setup_attribute(&params, a.id(), &mut rng).unwrap().verification_key;
        ledger.publish_verification_key(a.authority_id(), a.id(), vk).unwrap();
        let sk = auth.extract(&params, "annie", &a, ledger.state(), start()).unwrap();
        signatures.push(sign_attribute(&params, &sk, a.value()).unwrap());
    }
    ledger
        .write_profile(
            "annie",
            PatientProfile {
                gid: "annie".into(),
                name: "Annie Foster".into(),
                signatures: signatures.clone(),
                ehr_refs: vec![],
            },
        )
        .unwrap();

    let (abe_params, _, reg, _, mut abe_rng) = abe_world(seed + 3);
    let policy = AccessPolicy::parse(&format!("a@{AUTHORITY} OR b@{AUTHORITY}")).unwrap();
    let ciphertext =
        abmse::maabe::abe_encrypt(&abe_params, b"annie: imaging", &policy, &reg, &mut abe_rng).unwrap().to_bytes();
    let object = edge.put_object("annie", &ciphertext).unwrap();
    ledger.attach_ehr("annie", object).unwrap();

    ledger
        .register_participant(Participant::provider(
            LAB,
            "Lab",
            "medical_lab_scientist",
            ThresholdSpec::new(3, 3).unwrap(),
        ))
        .unwrap();
    ledger
        .register_participant(Participant::provider(
            RESEARCH,
            "Research",
            "medical_research_scientist",
            ThresholdSpec::new(1, 3).unwrap(),
        ))
        .unwrap();
    ledger.set_acl("annie", AclRule::new("annie", Grantee::AnyProvider, Permission::RequestAccess)).unwrap();
    AnnieLedger { ledger, edge, clock, signatures, object, ciphertext }
}

/// A well-formed ciphertext container of `len` plaintext bytes.
pub fn container(seed: u64, len: usize) -> Vec<u8> {
    use rand::RngCore;
    let (params, _, reg, _, mut rng) = abe_world(seed);
    let mut msg = vec![0u8; len];
    rng.fill_bytes(&mut msg);
    let policy = AccessPolicy::parse(&format!("a@{AUTHORITY}")).unwrap();
    abmse::maabe::abe_encrypt(&params, &msg, &policy, &reg, &mut rng).unwrap().to_bytes()
}

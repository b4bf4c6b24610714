use abmse::pairing::{
    bls_sign, bls_verify, bls_verify_encoded, GroupSignature, PairingParams, SigningKey, HASH_TO_G1_DST,
};
use bls12_381::hash_to_curve::{ExpandMsgXmd, HashToCurve};
use bls12_381::{pairing, G1Affine, G1Projective, G2Affine, Scalar};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const TRIALS: usize = 1000;

fn scalar(rng: &mut impl RngCore) -> Scalar {
    let mut wide = [0u8; 64];
    rng.fill_bytes(&mut wide);
    Scalar::from_bytes_wide(&wide)
}

fn oracle_hash(msg: &[u8]) -> G1Affine {
    G1Affine::from(<G1Projective as HashToCurve<ExpandMsgXmd<sha2::Sha256>>>::hash_to_curve([msg], HASH_TO_G1_DST))
}

fn message(rng: &mut impl RngCore) -> Vec<u8> {
    let mut m = vec![0u8; 1 + (rng.next_u32() % 96) as usize];
    rng.fill_bytes(&mut m);
    m
}

#[test]
fn signatures_match_the_pairing_oracle() {
    let params = PairingParams::setup(128).unwrap();
    let g2 = G2Affine::generator();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for _ in 0..TRIALS {
        let x = scalar(&mut rng);
        let sk = SigningKey::from_scalar(x).unwrap();
        let vk = sk.verification_key(&params);
        assert_eq!(*vk.point(), G2Affine::from(g2 * x));
        let m = message(&mut rng);
        let sig = bls_sign(&params, &sk, &m).unwrap();
        let h = oracle_hash(&m);
        assert_eq!(*sig.point(), G1Affine::from(h * x));
        assert_eq!(pairing(sig.point(), &g2), pairing(&h, vk.point()));
        assert!(bls_verify(&params, &vk, &m, &sig).unwrap().is_accept());
    }
}

#[test]
fn wrong_key_message_or_signature_is_rejected() {
    let params = PairingParams::setup(128).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for i in 0..TRIALS {
        let sk = SigningKey::from_scalar(scalar(&mut rng)).unwrap();
        let vk = sk.verification_key(&params);
        let m = message(&mut rng);
        let sig = bls_sign(&params, &sk, &m).unwrap();
        match i % 3 {
            0 => {
                let other = SigningKey::from_scalar(scalar(&mut rng)).unwrap().verification_key(&params);
                assert!(!bls_verify(&params, &other, &m, &sig).unwrap().is_accept());
            }
            1 => {
                let mut m2 = m.clone();
                let pos = rng.gen_range(0..m2.len());
                m2[pos] ^= 1 << rng.gen_range(0..8);
                assert!(!bls_verify(&params, &vk, &m2, &sig).unwrap().is_accept());
            }
            _ => {
                // a valid group element that is not the signature
                let bumped = GroupSignature::from_bytes(&sig.scaled(1 + rng.gen_range(1..1000u64)).to_bytes()).unwrap();
                assert!(!bls_verify(&params, &vk, &m, &bumped).unwrap().is_accept());
                // or a byte-level corruption, which is either undecodable or rejected
                let mut enc = sig.to_bytes();
                let pos = rng.gen_range(0..enc.len());
                enc[pos] ^= 1 << rng.gen_range(0..8);
                if let Ok(v) = bls_verify_encoded(&params, &vk.to_bytes(), &m, &enc) {
                    assert!(!v.is_accept());
                }
            }
        }
    }
}

#[test]
fn identity_signature_and_empty_message_are_refused() {
    let params = PairingParams::setup(128).unwrap();
    let sk = SigningKey::from_scalar(Scalar::from(7u64)).unwrap();
    let vk = sk.verification_key(&params);
    assert!(bls_sign(&params, &sk, b"").is_err());
    assert!(SigningKey::from_scalar(Scalar::zero()).is_err());
    let mut identity = bls_sign(&params, &sk, b"m").unwrap().to_bytes()[..2].to_vec();
    identity.extend_from_slice(&G1Affine::identity().to_compressed());
    if let Ok(sig) = GroupSignature::from_bytes(&identity) {
        assert!(!bls_verify(&params, &vk, b"m", &sig).unwrap().is_accept());
    }
}

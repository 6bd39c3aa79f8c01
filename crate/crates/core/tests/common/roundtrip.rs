//! Encrypt/decrypt round trips over random keys and messages, driven by a
//! proptest runner so failures shrink to a minimal case.

use cpalab_core::crypto::{CascadePair, CascadeSpec, RsaKeyPair, SymmetricAlgorithm, SymmetricScheme};
use cpalab_core::kem::KemProvider;
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn messages() -> impl Strategy<Value = (u64, Vec<u8>)> {
    (any::<u64>(), vec(any::<u8>(), 1..=64))
}

/// Pads or trims to a length the algorithm accepts.
fn fit(alg: SymmetricAlgorithm, mut pt: Vec<u8>) -> Vec<u8> {
    if let Some(b) = alg.block_len() {
        let len = pt.len().div_ceil(b) * b;
        pt.resize(len, 0);
    }
    pt
}

pub fn symmetric(alg: SymmetricAlgorithm, cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&messages(), |(seed, pt)| {
            let pt = fit(alg, pt);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let s = SymmetricScheme::generate(alg, &mut rng);
            let ct = s.encrypt(&pt, &mut rng).unwrap();
            prop_assert_eq!(ct.len(), alg.ciphertext_len(pt.len()).unwrap());
            prop_assert_eq!(s.decrypt(&ct).unwrap(), pt);
            Ok(())
        })
        .map_err(|e| format!("{alg}: {e}"))
}

pub fn cascade(pair: CascadePair, cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&messages(), |(seed, pt)| {
            let mut pt = pt;
            pt.resize(pair.aligned_plaintext_len(pt.len()), 0);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let c = CascadeSpec::generate(pair, &mut rng).unwrap();
            let ct = c.encrypt(&pt, &mut rng).unwrap();
            prop_assert_eq!(ct.len(), pair.ciphertext_len(pt.len()).unwrap());
            prop_assert_eq!(c.decrypt(&ct).unwrap(), pt);
            Ok(())
        })
        .map_err(|e| format!("{}: {e}", pair.label()))
}

pub fn rsa_textbook(key: &RsaKeyPair, cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&vec(any::<u8>(), 1..=64), |pt| {
            let ct = key.encrypt_textbook(&pt).unwrap();
            prop_assert_eq!(ct.len(), key.modulus_len());
            prop_assert_eq!(key.decrypt_textbook(&ct, pt.len()).unwrap(), pt);
            Ok(())
        })
        .map_err(|e| format!("textbook RSA: {e}"))
}

pub fn rsa_oaep(key: &RsaKeyPair, cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(any::<u64>(), vec(any::<u8>(), 0..=key.oaep_max_message_len(32))), |(seed, pt)| {
            let ct = key.encrypt_oaep(&pt, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(ct.len(), key.modulus_len());
            prop_assert_eq!(key.decrypt_oaep(&ct).unwrap(), pt);
            Ok(())
        })
        .map_err(|e| format!("RSA-OAEP: {e}"))
}

/// Textbook-RSA KEM: decrypting the encapsulation recovers the shared secret.
pub fn rsa_kem(key: &RsaKeyPair, cases: u32) -> Result<(), String> {
    let kem = std::cell::RefCell::new(KemProvider::rsa_kem(key.clone(), 32).unwrap());
    runner(cases)
        .run(&any::<u64>(), |seed| {
            let s = kem
                .borrow_mut().encapsulate(&mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(s.ciphertext.len(), key.modulus_len());
            prop_assert_eq!(key.decrypt_textbook(&s.ciphertext, 32).unwrap(), s.shared_secret);
            Ok(())
        })
        .map_err(|e| format!("rsa-kem: {e}"))
}

/// Every scheme in the suite, `cases` round trips each.
pub fn all(key: &RsaKeyPair, cases: u32) -> Result<usize, String> {
    let mut schemes = 0;
    for alg in SymmetricAlgorithm::ALL {
        symmetric(alg, cases)?;
        schemes += 1;
    }
    for pair in CascadePair::selection() {
        cascade(pair, cases)?;
        schemes += 1;
    }
    rsa_textbook(key, cases)?;
    rsa_oaep(key, cases)?;
    rsa_kem(key, cases)?;
    Ok(schemes + 3)
}

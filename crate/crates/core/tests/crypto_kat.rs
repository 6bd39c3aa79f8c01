//! Published known-answer vectors for every cipher in the suite.

mod common;

use common::kat;
use cpalab_core::crypto::{RsaKeyPair, SymmetricAlgorithm};
use num_bigint::BigUint;

#[test]
fn aes128_ecb_cavs() {
    assert_eq!(kat::symmetric("aes128_ecb.txt", SymmetricAlgorithm::AesEcb), 166);
}

#[test]
fn aes128_cbc_cavs() {
    assert!(kat::symmetric("aes128_cbc.txt", SymmetricAlgorithm::AesCbc) >= 30);
}

#[test]
fn aes128_ctr_rfc3686_sp800_38a() {
    assert_eq!(kat::symmetric("aes128_ctr.txt", SymmetricAlgorithm::AesCtr), 4);
}

#[test]
fn des_ecb_cavs() {
    assert!(kat::symmetric("des_ecb.txt", SymmetricAlgorithm::DesEcb) > 200);
}

#[test]
fn chacha20_rfc7539() {
    assert!(kat::chacha20() >= 3);
}

#[test]
fn rsa_oaep_sha1_pkcs1_vectors_with_seeds() {
    assert_eq!(kat::oaep_sha1(), 12);
}

#[test]
fn rsa_oaep_sha256_vectors_decrypt() {
    assert!(kat::oaep_sha256() >= 6);
}

#[test]
fn rsa_oaep_matches_reference_implementation() {
    use rsa::traits::PublicKeyParts;
    use rsa::{BigUint as RefUint, Oaep, RsaPrivateKey};

    let key = RsaKeyPair::from_seed(2048, 2024).unwrap();
    let (p, q) = key.primes().unwrap();
    let conv = |x: &BigUint| RefUint::from_bytes_be(&x.to_bytes_be());
    let reference = RsaPrivateKey::from_components(
        conv(key.modulus()),
        conv(key.public_exponent()),
        conv(key.private_exponent()),
        vec![conv(p), conv(q)],
    )
    .unwrap();
    assert_eq!(reference.n().bits(), 2048);

    // pinned seed: the reference draws exactly one hash-length seed from its RNG
    struct Pinned([u8; 32]);
    impl rand::RngCore for Pinned {
        fn next_u32(&mut self) -> u32 {
            unimplemented!()
        }
        fn next_u64(&mut self) -> u64 {
            unimplemented!()
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            dest.copy_from_slice(&self.0[..dest.len()]);
        }
        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
            self.fill_bytes(dest);
            Ok(())
        }
    }
    impl rand::CryptoRng for Pinned {}

    let seed: [u8; 32] = core::array::from_fn(|i| (i as u8).wrapping_mul(37).wrapping_add(5));
    let msg = b"sixteen byte msg";
    let ours = key.encrypt_oaep_with_seed::<sha2::Sha256>(msg, &seed).unwrap();
    let theirs = reference
        .to_public_key()
        .encrypt(&mut Pinned(seed), Oaep::new::<sha2::Sha256>(), msg)
        .unwrap();
    assert_eq!(ours, theirs);
    let back = reference.decrypt(Oaep::new::<sha2::Sha256>(), &ours).unwrap();
    assert_eq!(back, msg);
}

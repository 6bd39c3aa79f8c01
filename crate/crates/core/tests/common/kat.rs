//! Known-answer checks shared by the KAT suite and the acceptance run.
//! Each function panics on the first mismatch and returns the record count.

use cpalab_core::crypto::{chacha20_xor, RsaKeyPair, SymmetricAlgorithm, SymmetricScheme};
use num_bigint::BigUint;

use super::hex_records;

pub fn symmetric(file: &str, alg: SymmetricAlgorithm) -> usize {
    let records = hex_records(file);
    assert!(!records.is_empty(), "{file} is empty");
    for (i, r) in records.iter().enumerate() {
        let (key, iv, pt, ct) = (&r[0], &r[1], &r[2], &r[3]);
        let scheme = SymmetricScheme::new(alg, key.clone()).unwrap();
        let out = scheme.encrypt_with_iv(iv, pt).unwrap();
        assert_eq!(&out[..iv.len()], &iv[..]);
        assert_eq!(hex::encode(&out[iv.len()..]), hex::encode(ct), "{file} record {i}");
        assert_eq!(&scheme.decrypt(&out).unwrap(), pt, "{file} record {i} decrypt");
    }
    records.len()
}

pub fn chacha20() -> usize {
    let records = hex_records("chacha20.txt");
    for r in &records {
        let key: [u8; 32] = r[0].as_slice().try_into().unwrap();
        let counter = u32::from_le_bytes(r[1][..4].try_into().unwrap());
        let nonce: [u8; 12] = r[1][4..].try_into().unwrap();
        let mut buf = r[2].clone();
        chacha20_xor(&key, &nonce, counter, &mut buf);
        assert_eq!(hex::encode(&buf), hex::encode(&r[3]));
        if counter == 0 {
            // the scheme itself starts the block counter at zero
            let s = SymmetricScheme::new(SymmetricAlgorithm::ChaCha20, key.to_vec()).unwrap();
            let out = s.encrypt_with_iv(&nonce, &r[2]).unwrap();
            assert_eq!(&out[12..], &r[3][..]);
        }
    }
    records.len()
}

fn oaep_key(r: &[Vec<u8>]) -> RsaKeyPair {
    RsaKeyPair::from_components(
        BigUint::from_bytes_be(&r[0]),
        BigUint::from_bytes_be(&r[1]),
        BigUint::from_bytes_be(&r[2]),
    )
    .unwrap()
}

/// PKCS #1 vectors with their published seeds: encryption is bit-exact.
pub fn oaep_sha1() -> usize {
    let records = hex_records("rsa_oaep_sha1.txt");
    for r in &records {
        let key = oaep_key(r);
        let ct = key.encrypt_oaep_with_seed::<sha1::Sha1>(&r[3], &r[4]).unwrap();
        assert_eq!(hex::encode(&ct), hex::encode(&r[5]));
        assert_eq!(key.decrypt_oaep_with::<sha1::Sha1>(&r[5]).unwrap(), r[3]);
    }
    records.len()
}

/// SHA-256 vectors publish no seed, so only decryption is checked.
pub fn oaep_sha256() -> usize {
    let records = hex_records("rsa_oaep_sha256.txt");
    for r in &records {
        assert_eq!(oaep_key(r).decrypt_oaep(&r[5]).unwrap(), r[3]);
    }
    records.len()
}

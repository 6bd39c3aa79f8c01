use std::fmt;
use std::str::FromStr;

use aes::Aes128;
use cipher::generic_array::GenericArray;
use cipher::{BlockDecrypt, BlockEncrypt, KeyInit, KeyIvInit, StreamCipher, StreamCipherSeek};
use des::Des;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The symmetric ciphers available as distinguishing-game data sources.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SymmetricAlgorithm {
    #[serde(rename = "aes-cbc")]
    AesCbc,
    #[serde(rename = "aes-ctr")]
    AesCtr,
    #[serde(rename = "aes-ecb")]
    AesEcb,
    #[serde(rename = "chacha20")]
    ChaCha20,
    #[serde(rename = "des-ecb")]
    DesEcb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IvPolicy {
    None,
    FreshRandomPerEncryption,
}

impl SymmetricAlgorithm {
    /// Row/column order of the cascade tables.
    pub const ALL: [SymmetricAlgorithm; 5] = [
        SymmetricAlgorithm::AesCbc,
        SymmetricAlgorithm::AesCtr,
        SymmetricAlgorithm::AesEcb,
        SymmetricAlgorithm::ChaCha20,
        SymmetricAlgorithm::DesEcb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SymmetricAlgorithm::AesCbc => "aes-cbc",
            SymmetricAlgorithm::AesCtr => "aes-ctr",
            SymmetricAlgorithm::AesEcb => "aes-ecb",
            SymmetricAlgorithm::ChaCha20 => "chacha20",
            SymmetricAlgorithm::DesEcb => "des-ecb",
        }
    }

    /// Display label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            SymmetricAlgorithm::AesCbc => "AES-CBC",
            SymmetricAlgorithm::AesCtr => "AES-CTR",
            SymmetricAlgorithm::AesEcb => "AES-ECB",
            SymmetricAlgorithm::ChaCha20 => "ChaCha20",
            SymmetricAlgorithm::DesEcb => "DES",
        }
    }

    pub fn key_len(self) -> usize {
        match self {
            SymmetricAlgorithm::AesCbc | SymmetricAlgorithm::AesCtr | SymmetricAlgorithm::AesEcb => 16,
            SymmetricAlgorithm::ChaCha20 => 32,
            SymmetricAlgorithm::DesEcb => 8,
        }
    }

    /// Block size for block modes; `None` for the stream modes, which take any length.
    pub fn block_len(self) -> Option<usize> {
        match self {
            SymmetricAlgorithm::AesCbc | SymmetricAlgorithm::AesEcb => Some(16),
            SymmetricAlgorithm::DesEcb => Some(8),
            SymmetricAlgorithm::AesCtr | SymmetricAlgorithm::ChaCha20 => None,
        }
    }

    /// Bytes of IV or nonce prepended to every ciphertext.
    pub fn iv_len(self) -> usize {
        match self {
            SymmetricAlgorithm::AesCbc | SymmetricAlgorithm::AesCtr => 16,
            SymmetricAlgorithm::ChaCha20 => 12,
            SymmetricAlgorithm::AesEcb | SymmetricAlgorithm::DesEcb => 0,
        }
    }

    pub fn iv_policy(self) -> IvPolicy {
        if self.iv_len() == 0 {
            IvPolicy::None
        } else {
            IvPolicy::FreshRandomPerEncryption
        }
    }

    pub fn is_deterministic(self) -> bool {
        self.iv_policy() == IvPolicy::None
    }

    pub fn is_stream(self) -> bool {
        self.block_len().is_none()
    }

    /// Checks the plaintext length precondition and returns the ciphertext length.
    pub fn ciphertext_len(self, plaintext_len: usize) -> Result<usize> {
        if let Some(block) = self.block_len() {
            if plaintext_len == 0 || plaintext_len % block != 0 {
                return Err(Error::BlockAlignment {
                    algorithm: self.name(),
                    len: plaintext_len,
                    block,
                });
            }
        }
        Ok(plaintext_len + self.iv_len())
    }
}

impl fmt::Display for SymmetricAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SymmetricAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        SymmetricAlgorithm::ALL
            .into_iter()
            .find(|a| a.name() == lower || (lower == "des" && *a == SymmetricAlgorithm::DesEcb))
            .ok_or_else(|| Error::param(format!("unknown symmetric algorithm `{s}`")))
    }
}

#[derive(Clone)]
enum Engine {
    Aes(Box<Aes128>),
    Des(Des),
    ChaCha([u8; 32]),
}

/// A keyed symmetric cipher. The IV policy follows from the algorithm.
#[derive(Clone)]
pub struct SymmetricScheme {
    algorithm: SymmetricAlgorithm,
    key: Vec<u8>,
    engine: Engine,
}

impl fmt::Debug for SymmetricScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricScheme")
            .field("algorithm", &self.algorithm)
            .field("iv_policy", &self.iv_policy())
            .finish_non_exhaustive()
    }
}

impl SymmetricScheme {
    pub fn new(algorithm: SymmetricAlgorithm, key: impl Into<Vec<u8>>) -> Result<Self> {
        let key = key.into();
        if key.len() != algorithm.key_len() {
            return Err(Error::KeyLength {
                algorithm: algorithm.name(),
                expected: algorithm.key_len(),
                actual: key.len(),
            });
        }
        let engine = match algorithm {
            SymmetricAlgorithm::AesCbc | SymmetricAlgorithm::AesCtr | SymmetricAlgorithm::AesEcb => {
                Engine::Aes(Box::new(Aes128::new(GenericArray::from_slice(&key))))
            }
            SymmetricAlgorithm::DesEcb => Engine::Des(Des::new(GenericArray::from_slice(&key))),
            SymmetricAlgorithm::ChaCha20 => Engine::ChaCha(key.as_slice().try_into().unwrap()),
        };
        Ok(SymmetricScheme {
            algorithm,
            key,
            engine,
        })
    }

    /// Draws a fresh key. DES keys are parity-adjusted.
    pub fn generate<R: RngCore + ?Sized>(algorithm: SymmetricAlgorithm, rng: &mut R) -> Self {
        let mut key = vec![0u8; algorithm.key_len()];
        rng.fill_bytes(&mut key);
        if algorithm == SymmetricAlgorithm::DesEcb {
            for b in &mut key {
                *b = with_odd_parity(*b);
            }
        }
        SymmetricScheme::new(algorithm, key).expect("generated key has the right length")
    }

    pub fn algorithm(&self) -> SymmetricAlgorithm {
        self.algorithm
    }

    pub fn key(&self) -> &[u8] {
        &self.key
    }

    pub fn iv_policy(&self) -> IvPolicy {
        self.algorithm.iv_policy()
    }

    pub fn ciphertext_len(&self, plaintext_len: usize) -> Result<usize> {
        self.algorithm.ciphertext_len(plaintext_len)
    }

    /// Encrypts under a fresh IV/nonce drawn from `rng`; the IV is prepended.
    pub fn encrypt<R: RngCore + ?Sized>(&self, plaintext: &[u8], rng: &mut R) -> Result<Vec<u8>> {
        let mut iv = [0u8; 16];
        let iv = &mut iv[..self.algorithm.iv_len()];
        rng.fill_bytes(iv);
        self.encrypt_with_iv(iv, plaintext)
    }

    /// Encrypts under a caller-chosen IV/nonce (empty for ECB). Output is `iv || ciphertext`.
    pub fn encrypt_with_iv(&self, iv: &[u8], plaintext: &[u8]) -> Result<Vec<u8>> {
        let total = self.algorithm.ciphertext_len(plaintext.len())?;
        self.check_iv(iv)?;
        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(iv);
        out.extend_from_slice(plaintext);
        let body = &mut out[iv.len()..];
        match self.algorithm {
            SymmetricAlgorithm::AesEcb | SymmetricAlgorithm::DesEcb => self.ecb(body, true),
            SymmetricAlgorithm::AesCbc => self.cbc_encrypt(iv, body),
            SymmetricAlgorithm::AesCtr | SymmetricAlgorithm::ChaCha20 => self.xor_keystream(iv, body),
        }
        Ok(out)
    }

    pub fn decrypt(&self, ciphertext: &[u8]) -> Result<Vec<u8>> {
        let iv_len = self.algorithm.iv_len();
        let block = self.algorithm.block_len();
        let truncated = Error::Truncated {
            len: ciphertext.len(),
            needed: iv_len + block.unwrap_or(0),
        };
        if ciphertext.len() < iv_len {
            return Err(truncated);
        }
        let (iv, body) = ciphertext.split_at(iv_len);
        if let Some(block) = block {
            if body.is_empty() || body.len() % block != 0 {
                return Err(truncated);
            }
        }
        let mut out = body.to_vec();
        match self.algorithm {
            SymmetricAlgorithm::AesEcb | SymmetricAlgorithm::DesEcb => self.ecb(&mut out, false),
            SymmetricAlgorithm::AesCbc => self.cbc_decrypt(iv, &mut out),
            SymmetricAlgorithm::AesCtr | SymmetricAlgorithm::ChaCha20 => self.xor_keystream(iv, &mut out),
        }
        Ok(out)
    }

    /// Raw keystream application for the stream modes, with nothing prepended.
    pub fn apply_keystream(&self, iv: &[u8], data: &mut [u8]) -> Result<()> {
        if !self.algorithm.is_stream() {
            return Err(Error::param(format!("{} is not a stream mode", self.algorithm)));
        }
        self.check_iv(iv)?;
        self.xor_keystream(iv, data);
        Ok(())
    }

    fn check_iv(&self, iv: &[u8]) -> Result<()> {
        if iv.len() != self.algorithm.iv_len() {
            return Err(Error::LengthMismatch {
                what: "IV/nonce",
                expected: self.algorithm.iv_len(),
                actual: iv.len(),
            });
        }
        Ok(())
    }

    fn ecb(&self, data: &mut [u8], encrypt: bool) {
        match &self.engine {
            Engine::Aes(aes) => {
                for block in data.chunks_exact_mut(16) {
                    let b = GenericArray::from_mut_slice(block);
                    if encrypt {
                        aes.encrypt_block(b)
                    } else {
                        aes.decrypt_block(b)
                    }
                }
            }
            Engine::Des(des) => {
                for block in data.chunks_exact_mut(8) {
                    let b = GenericArray::from_mut_slice(block);
                    if encrypt {
                        des.encrypt_block(b)
                    } else {
                        des.decrypt_block(b)
                    }
                }
            }
            Engine::ChaCha(_) => unreachable!("ECB on a stream cipher"),
        }
    }

    fn aes(&self) -> &Aes128 {
        match &self.engine {
            Engine::Aes(aes) => aes,
            _ => unreachable!("AES mode without an AES key schedule"),
        }
    }

    fn cbc_encrypt(&self, iv: &[u8], data: &mut [u8]) {
        let aes = self.aes();
        let mut prev = [0u8; 16];
        prev.copy_from_slice(iv);
        for block in data.chunks_exact_mut(16) {
            xor_in_place(block, &prev);
            aes.encrypt_block(GenericArray::from_mut_slice(block));
            prev.copy_from_slice(block);
        }
    }

    fn cbc_decrypt(&self, iv: &[u8], data: &mut [u8]) {
        let aes = self.aes();
        let mut prev = [0u8; 16];
        prev.copy_from_slice(iv);
        for block in data.chunks_exact_mut(16) {
            let mut saved = [0u8; 16];
            saved.copy_from_slice(block);
            aes.decrypt_block(GenericArray::from_mut_slice(block));
            xor_in_place(block, &prev);
            prev = saved;
        }
    }

    fn xor_keystream(&self, iv: &[u8], data: &mut [u8]) {
        match &self.engine {
            Engine::Aes(aes) => aes_ctr_with(aes, iv.try_into().unwrap(), data),
            Engine::ChaCha(key) => chacha20_xor(key, iv.try_into().unwrap(), 0, data),
            Engine::Des(_) => unreachable!("keystream on DES"),
        }
    }
}

/// AES-128-CTR keystream XOR; the 16-byte counter block increments as a big-endian integer.
pub fn aes_ctr_xor(key: &[u8; 16], counter_block: &[u8; 16], data: &mut [u8]) {
    let aes = Aes128::new(GenericArray::from_slice(key));
    aes_ctr_with(&aes, counter_block, data);
}

fn aes_ctr_with(aes: &Aes128, counter_block: &[u8; 16], data: &mut [u8]) {
    let mut counter = u128::from_be_bytes(*counter_block);
    for chunk in data.chunks_mut(16) {
        let mut ks = GenericArray::from(counter.to_be_bytes());
        aes.encrypt_block(&mut ks);
        xor_in_place(chunk, &ks[..chunk.len()]);
        counter = counter.wrapping_add(1);
    }
}

/// IETF ChaCha20 (96-bit nonce, 32-bit block counter) keystream XOR.
pub fn chacha20_xor(key: &[u8; 32], nonce: &[u8; 12], initial_counter: u32, data: &mut [u8]) {
    let mut c = chacha20::ChaCha20::new(key.into(), nonce.into());
    c.seek(u64::from(initial_counter) * 64);
    c.apply_keystream(data);
}

fn xor_in_place(dst: &mut [u8], src: &[u8]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

fn with_odd_parity(b: u8) -> u8 {
    let high = b & 0xfe;
    if high.count_ones() % 2 == 0 {
        high | 1
    } else {
        high
    }
}

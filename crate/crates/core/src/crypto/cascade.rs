use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::symmetric::{SymmetricAlgorithm, SymmetricScheme};
use crate::error::{Error, Result};

/// An (outer, inner) algorithm pair; encryption is `outer(inner(m))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CascadePair {
    pub outer: SymmetricAlgorithm,
    pub inner: SymmetricAlgorithm,
}

/// Whether a pair belongs to the tested cascade selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellStatus {
    Accepted,
    SkippedSelf,
    SkippedDeterministic,
    SkippedCommuting,
}

impl CascadePair {
    pub fn new(outer: SymmetricAlgorithm, inner: SymmetricAlgorithm) -> Self {
        CascadePair { outer, inner }
    }

    /// Validity as a cascade: no self-combination and not both deterministic ECB ciphers.
    pub fn validate(self) -> Result<()> {
        match self.status() {
            CellStatus::SkippedSelf => Err(Error::InvalidCascade(format!(
                "{} combined with itself",
                self.outer
            ))),
            CellStatus::SkippedDeterministic => Err(Error::InvalidCascade(format!(
                "{} over {} is deterministic",
                self.outer, self.inner
            ))),
            CellStatus::Accepted | CellStatus::SkippedCommuting => Ok(()),
        }
    }

    pub fn status(self) -> CellStatus {
        use SymmetricAlgorithm::*;
        if self.outer == self.inner {
            CellStatus::SkippedSelf
        } else if self.outer.is_deterministic() && self.inner.is_deterministic() {
            CellStatus::SkippedDeterministic
        } else if self.inner == AesCtr && self.outer == ChaCha20 {
            // same cipher as ChaCha20 inner / AES-CTR outer
            CellStatus::SkippedCommuting
        } else {
            CellStatus::Accepted
        }
    }

    /// The accepted cells in row-major (inner, outer) table order.
    pub fn selection() -> Vec<CascadePair> {
        let mut cells = Vec::new();
        for inner in SymmetricAlgorithm::ALL {
            for outer in SymmetricAlgorithm::ALL {
                let pair = CascadePair::new(outer, inner);
                if pair.status() == CellStatus::Accepted {
                    cells.push(pair);
                }
            }
        }
        cells
    }

    pub fn ciphertext_len(self, plaintext_len: usize) -> Result<usize> {
        let mid = self.inner.ciphertext_len(plaintext_len)?;
        self.outer.ciphertext_len(mid).map_err(|_| {
            Error::InvalidCascade(format!(
                "inner {} output of {mid} bytes does not fit the {}-byte block of outer {}",
                self.inner,
                self.outer.block_len().unwrap_or(1),
                self.outer
            ))
        })
    }

    /// Smallest plaintext length `>= at_least` accepted end to end.
    pub fn aligned_plaintext_len(self, at_least: usize) -> usize {
        (at_least.max(1)..)
            .find(|&l| self.ciphertext_len(l).is_ok())
            .expect("some length aligns")
    }

    pub fn label(self) -> String {
        format!("{}∘{}", self.outer.label(), self.inner.label())
    }
}

/// Two independently keyed schemes applied as `outer(inner(m))`.
#[derive(Clone, Debug)]
pub struct CascadeSpec {
    outer: SymmetricScheme,
    inner: SymmetricScheme,
}

impl CascadeSpec {
    pub fn new(outer: SymmetricScheme, inner: SymmetricScheme) -> Result<Self> {
        CascadePair::new(outer.algorithm(), inner.algorithm()).validate()?;
        Ok(CascadeSpec { outer, inner })
    }

    pub fn generate<R: RngCore + ?Sized>(pair: CascadePair, rng: &mut R) -> Result<Self> {
        pair.validate()?;
        let inner = SymmetricScheme::generate(pair.inner, rng);
        let outer = SymmetricScheme::generate(pair.outer, rng);
        CascadeSpec::new(outer, inner)
    }

    pub fn pair(&self) -> CascadePair {
        CascadePair::new(self.outer.algorithm(), self.inner.algorithm())
    }

    pub fn outer(&self) -> &SymmetricScheme {
        &self.outer
    }

    pub fn inner(&self) -> &SymmetricScheme {
        &self.inner
    }

    pub fn ciphertext_len(&self, plaintext_len: usize) -> Result<usize> {
        self.pair().ciphertext_len(plaintext_len)
    }

    pub fn encrypt<R: RngCore + ?Sized>(&self, plaintext: &[u8], rng: &mut R) -> Result<Vec<u8>> {
        self.ciphertext_len(plaintext.len())?;
        let mid = self.inner.encrypt(plaintext, rng)?;
        self.outer.encrypt(&mid, rng)
    }

    pub fn decrypt(&self, ciphertext: &[u8]) -> Result<Vec<u8>> {
        let mid = self.outer.decrypt(ciphertext)?;
        self.inner.decrypt(&mid)
    }
}

//! Labelled corpus generation for the single-cipher and hybrid-KEM games,
//! class-balanced splitting, and the `ICPA` dataset file format.
//!
//! Single-cipher game: class 0 holds encryptions of uniform `l`-byte
//! plaintexts, class 1 encryptions of `0^l`, all under one key fixed for the
//! corpus. Hybrid game: class 0 rows are `kem_ct || enc(ss)` for the secret
//! `ss` of the same encapsulation, class 1 rows are `kem_ct' || enc(u)` with
//! `u` uniform and independent of `kem_ct'`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crypto::{CascadePair, CascadeSpec, RsaKeyPair, SymmetricAlgorithm, SymmetricScheme};
use crate::error::{Error, Result};
use crate::kem::{load_kem_corpus, KemKind, KemProvider, DEFAULT_MOCK_CT_LEN, DEFAULT_SS_LEN};
use crate::seed::rng_for;

const DATASET_MAGIC: &[u8; 4] = b"ICPA";
const DATASET_VERSION: u16 = 1;
const DATASET_HEADER_LEN: usize = 4 + 2 + 4 + 8 + 8 + 8 + 8;

pub const DEFAULT_PLAINTEXT_LEN: usize = 16;
pub const DEFAULT_RSA_BITS: usize = 2048;

/// Byte-valued feature matrix with binary labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDataset {
    feature_len: usize,
    features: Vec<u8>,
    labels: Vec<u8>,
    seed: u64,
}

impl LabeledDataset {
    pub fn new(feature_len: usize, features: Vec<u8>, labels: Vec<u8>, seed: u64) -> Result<Self> {
        if features.len() != labels.len() * feature_len {
            return Err(Error::Shape(format!(
                "{} feature bytes for {} rows of {feature_len}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::format(format!("label {bad} outside {{0,1}}")));
        }
        Ok(LabeledDataset {
            feature_len,
            features,
            labels,
            seed,
        })
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn features(&self) -> &[u8] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.features[i * self.feature_len..(i + 1) * self.feature_len]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[u8], u8)> {
        self.features
            .chunks_exact(self.feature_len.max(1))
            .zip(self.labels.iter().copied())
    }

    /// `(class 0 count, class 1 count)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - ones, ones)
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.feature_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            feature_len: self.feature_len,
            features,
            labels,
            seed: self.seed,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (c0, c1) = self.class_counts();
        let mut out = Vec::with_capacity(DATASET_HEADER_LEN + self.features.len() + self.labels.len());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.feature_len as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(c0 as u64).to_le_bytes());
        out.extend_from_slice(&(c1 as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for (row, label) in self.rows() {
            out.push(label);
            out.extend_from_slice(row);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < DATASET_HEADER_LEN {
            return Err(Error::format("dataset header truncated"));
        }
        if &bytes[..4] != DATASET_MAGIC {
            return Err(Error::format("bad dataset magic"));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != DATASET_VERSION {
            return Err(Error::format(format!("unsupported dataset version {version}")));
        }
        let feature_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let n = u64_at(10);
        let (c0, c1, seed) = (u64_at(18), u64_at(26), u64_at(34));
        if c0.checked_add(c1) != Some(n) {
            return Err(Error::format(format!("class counts {c0}+{c1} do not sum to {n}")));
        }
        let body = &bytes[DATASET_HEADER_LEN..];
        let record = feature_len + 1;
        if (body.len() as u128) != (n as u128) * (record as u128) {
            return Err(Error::format(format!(
                "{n} records of {feature_len} features need {} bytes, found {}",
                (n as u128) * (record as u128),
                body.len()
            )));
        }
        let n = n as usize;
        let mut features = Vec::with_capacity(n * feature_len);
        let mut labels = Vec::with_capacity(n);
        for r in body.chunks_exact(record) {
            labels.push(r[0]);
            features.extend_from_slice(&r[1..]);
        }
        let d = LabeledDataset::new(feature_len, features, labels, seed)?;
        if d.class_counts() != (c0 as usize, c1 as usize) {
            return Err(Error::format("header class counts disagree with records"));
        }
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized file, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// `label,features_hex` lines with a header, for inspection.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,features\n");
        for (row, label) in self.rows() {
            out.push_str(&format!("{label},{}\n", hex::encode(row)));
        }
        out
    }
}

/// Declarative encryption pipeline for the single-cipher game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CipherSpec {
    Symmetric { algorithm: SymmetricAlgorithm },
    Cascade { outer: SymmetricAlgorithm, inner: SymmetricAlgorithm },
    RsaTextbook {
        #[serde(default = "default_rsa_bits")]
        modulus_bits: usize,
    },
    RsaOaep {
        #[serde(default = "default_rsa_bits")]
        modulus_bits: usize,
    },
}

fn default_rsa_bits() -> usize {
    DEFAULT_RSA_BITS
}

fn default_plaintext_len() -> usize {
    DEFAULT_PLAINTEXT_LEN
}

fn default_true() -> bool {
    true
}

impl CipherSpec {
    pub fn label(&self) -> String {
        match self {
            CipherSpec::Symmetric { algorithm } => algorithm.label().to_string(),
            CipherSpec::Cascade { outer, inner } => CascadePair::new(*outer, *inner).label(),
            CipherSpec::RsaTextbook { .. } => "Plain RSA".into(),
            CipherSpec::RsaOaep { .. } => "RSA-OAEP".into(),
        }
    }

    pub fn output_len(&self, plaintext_len: usize) -> Result<usize> {
        match *self {
            CipherSpec::Symmetric { algorithm } => algorithm.ciphertext_len(plaintext_len),
            CipherSpec::Cascade { outer, inner } => {
                let pair = CascadePair::new(outer, inner);
                pair.validate()?;
                pair.ciphertext_len(plaintext_len)
            }
            CipherSpec::RsaTextbook { modulus_bits } | CipherSpec::RsaOaep { modulus_bits } => {
                Ok(modulus_bits.div_ceil(8))
            }
        }
    }

    /// IV/nonce bytes at the front of each ciphertext (the outer layer's, for cascades).
    pub fn leading_iv_len(&self) -> usize {
        match *self {
            CipherSpec::Symmetric { algorithm } => algorithm.iv_len(),
            CipherSpec::Cascade { outer, .. } => outer.iv_len(),
            _ => 0,
        }
    }

    /// Smallest plaintext length `>= at_least` the pipeline accepts.
    pub fn aligned_plaintext_len(&self, at_least: usize) -> usize {
        (at_least.max(1)..at_least.max(1) + 64)
            .find(|&l| self.output_len(l).is_ok())
            .unwrap_or(at_least)
    }
}

/// A keyed instance of a [`CipherSpec`].
#[derive(Clone, Debug)]
pub enum Cipher {
    Symmetric(SymmetricScheme),
    Cascade(CascadeSpec),
    RsaTextbook(RsaKeyPair),
    RsaOaep(RsaKeyPair),
}

impl Cipher {
    pub fn generate<R: RngCore + ?Sized>(spec: &CipherSpec, rng: &mut R) -> Result<Self> {
        Ok(match *spec {
            CipherSpec::Symmetric { algorithm } => Cipher::Symmetric(SymmetricScheme::generate(algorithm, rng)),
            CipherSpec::Cascade { outer, inner } => {
                Cipher::Cascade(CascadeSpec::generate(CascadePair::new(outer, inner), rng)?)
            }
            CipherSpec::RsaTextbook { modulus_bits } => {
                Cipher::RsaTextbook(RsaKeyPair::generate(modulus_bits, rng)?)
            }
            CipherSpec::RsaOaep { modulus_bits } => Cipher::RsaOaep(RsaKeyPair::generate(modulus_bits, rng)?),
        })
    }

    pub fn encrypt<R: RngCore + ?Sized>(&self, plaintext: &[u8], rng: &mut R) -> Result<Vec<u8>> {
        match self {
            Cipher::Symmetric(s) => s.encrypt(plaintext, rng),
            Cipher::Cascade(c) => c.encrypt(plaintext, rng),
            Cipher::RsaTextbook(k) => k.encrypt_textbook(plaintext),
            Cipher::RsaOaep(k) => k.encrypt_oaep(plaintext, rng),
        }
    }

    pub fn decrypt(&self, ciphertext: &[u8], plaintext_len: usize) -> Result<Vec<u8>> {
        match self {
            Cipher::Symmetric(s) => s.decrypt(ciphertext),
            Cipher::Cascade(c) => c.decrypt(ciphertext),
            Cipher::RsaTextbook(k) => k.decrypt_textbook(ciphertext, plaintext_len),
            Cipher::RsaOaep(k) => k.decrypt_oaep(ciphertext),
        }
    }
}

/// The encryption applied to the shared secret in the hybrid game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AsymComponent {
    RsaOaep,
    RsaTextbook,
    /// ciphertext = plaintext
    PlaintextIdentity,
}

impl AsymComponent {
    pub fn label(self) -> &'static str {
        match self {
            AsymComponent::RsaOaep => "RSA OAEP",
            AsymComponent::RsaTextbook => "Plain RSA",
            AsymComponent::PlaintextIdentity => "Plaintext",
        }
    }
}

/// Where the hybrid game's KEM encapsulations come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KemSource {
    pub kind: KemKind,
    #[serde(default = "default_ss_len")]
    pub ss_len: usize,
    /// Ciphertext length for the mock providers.
    #[serde(default = "default_ct_len")]
    pub ct_len: usize,
    /// Modulus size for `rsa-kem`.
    #[serde(default = "default_rsa_bits")]
    pub modulus_bits: usize,
    /// File for `external-corpus`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
}

fn default_ss_len() -> usize {
    DEFAULT_SS_LEN
}

fn default_ct_len() -> usize {
    DEFAULT_MOCK_CT_LEN
}

impl KemSource {
    pub fn mock(kind: KemKind) -> Self {
        KemSource {
            kind,
            ss_len: DEFAULT_SS_LEN,
            ct_len: DEFAULT_MOCK_CT_LEN,
            modulus_bits: DEFAULT_RSA_BITS,
            corpus: None,
        }
    }

    pub fn label(&self) -> String {
        match (&self.kind, &self.corpus) {
            (KemKind::RsaKem, _) => "Plain RSA".into(),
            (KemKind::ExternalCorpus, Some(p)) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "external".into()),
            (kind, _) => kind.name().into(),
        }
    }

    pub fn instantiate<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<KemProvider> {
        match self.kind {
            KemKind::RsaKem => KemProvider::rsa_kem(RsaKeyPair::generate(self.modulus_bits, rng)?, self.ss_len),
            KemKind::IdealMock => KemProvider::ideal_mock(self.ss_len, self.ct_len),
            KemKind::DegenerateMock => KemProvider::degenerate_mock(self.ss_len, self.ct_len),
            KemKind::LeakyMock => KemProvider::leaky_mock(self.ss_len, self.ct_len),
            KemKind::ExternalCorpus => {
                let path = self
                    .corpus
                    .as_ref()
                    .ok_or_else(|| Error::Config("external-corpus KEM needs a corpus path".into()))?;
                Ok(KemProvider::from_corpus(self.label(), load_kem_corpus(path)?))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "game")]
pub enum Game {
    /// Uniform plaintexts against `0^l` under one cipher.
    #[serde(rename = "alg1-single", alias = "single")]
    Single {
        cipher: CipherSpec,
        #[serde(default = "default_plaintext_len")]
        plaintext_len: usize,
        /// Keep the outer IV/nonce in the features.
        #[serde(default = "default_true")]
        include_iv: bool,
    },
    /// KEM ciphertext concatenated with an encryption of its secret or of an independent value.
    #[serde(rename = "alg2-hybrid", alias = "hybrid")]
    Hybrid {
        kem: KemSource,
        asym: AsymComponent,
        #[serde(default = "default_rsa_bits")]
        asym_modulus_bits: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameSpec {
    #[serde(flatten)]
    pub game: Game,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Game {
    pub fn name(&self) -> &'static str {
        match self {
            Game::Single { .. } => "alg1-single",
            Game::Hybrid { .. } => "alg2-hybrid",
        }
    }

    /// Scheme names for reports: the cipher, or the KEM and the asymmetric component.
    pub fn schemes(&self) -> Vec<String> {
        match self {
            Game::Single { cipher, .. } => vec![cipher.label()],
            Game::Hybrid { kem, asym, .. } => vec![kem.label(), asym.label().to_string()],
        }
    }
}

impl GameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class == 0 {
            return Err(Error::param("samples_per_class must be at least 1"));
        }
        if let Game::Single { plaintext_len, .. } = self.game {
            if plaintext_len == 0 {
                return Err(Error::param("plaintext_len must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<LabeledDataset> {
        match self.game {
            Game::Single { .. } => build_alg1_dataset(self),
            Game::Hybrid { .. } => build_alg2_dataset(self),
        }
    }
}

/// Class-0 plaintext `i` of the single-cipher game.
pub fn alg1_plaintext(seed: u64, index: usize, len: usize) -> Vec<u8> {
    let mut pt = vec![0u8; len];
    rng_for(seed, "alg1-plaintext", index as u64).fill_bytes(&mut pt);
    pt
}

pub fn build_alg1_dataset(spec: &GameSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let Game::Single {
        cipher: cipher_spec,
        plaintext_len,
        include_iv,
    } = spec.game
    else {
        return Err(Error::param("build_alg1_dataset needs a single-cipher game"));
    };
    let seed = spec.seed;
    let n = spec.samples_per_class;
    let full_len = cipher_spec.output_len(plaintext_len)?;
    let skip = if include_iv { 0 } else { cipher_spec.leading_iv_len() };
    let feature_len = full_len - skip;

    let cipher = Cipher::generate(&cipher_spec, &mut rng_for(seed, "alg1-key", 0))?;
    let zeros = vec![0u8; plaintext_len];
    let mut rows: Vec<(Vec<u8>, u8)> = Vec::with_capacity(2 * n);
    for i in 0..n {
        let pt = alg1_plaintext(seed, i, plaintext_len);
        let c0 = cipher.encrypt(&pt, &mut rng_for(seed, "alg1-enc0", i as u64))?;
        let c1 = cipher.encrypt(&zeros, &mut rng_for(seed, "alg1-enc1", i as u64))?;
        rows.push((c0[skip..].to_vec(), 0));
        rows.push((c1[skip..].to_vec(), 1));
    }
    assemble(rows, feature_len, seed)
}

pub fn build_alg2_dataset(spec: &GameSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let Game::Hybrid {
        ref kem,
        asym,
        asym_modulus_bits,
    } = spec.game
    else {
        return Err(Error::param("build_alg2_dataset needs a hybrid game"));
    };
    let seed = spec.seed;
    let n = spec.samples_per_class;
    let mut provider = kem.instantiate(&mut rng_for(seed, "alg2-kem-key", 0))?;
    if let Some(available) = provider.remaining() {
        if available < 2 * n {
            return Err(Error::CorpusExhausted { available });
        }
    }
    let asym_key = match asym {
        AsymComponent::PlaintextIdentity => None,
        _ => Some(RsaKeyPair::generate(asym_modulus_bits, &mut rng_for(seed, "alg2-asym-key", 0))?),
    };
    let ss_len = provider.ss_len();
    let encrypt = |m: &[u8], role: &str, i: usize| -> Result<Vec<u8>> {
        match (asym, &asym_key) {
            (AsymComponent::PlaintextIdentity, _) => Ok(m.to_vec()),
            (AsymComponent::RsaTextbook, Some(k)) => k.encrypt_textbook(m),
            (AsymComponent::RsaOaep, Some(k)) => k.encrypt_oaep(m, &mut rng_for(seed, role, i as u64)),
            _ => unreachable!("RSA component without a key"),
        }
    };

    let mut class0 = Vec::with_capacity(n);
    for i in 0..n {
        let s = provider.encapsulate(&mut rng_for(seed, "alg2-encap0", i as u64))?;
        let mut row = s.ciphertext;
        row.extend(encrypt(&s.shared_secret, "alg2-asym0", i)?);
        class0.push(row);
    }
    let mut class1 = Vec::with_capacity(n);
    for i in 0..n {
        let s = provider.encapsulate(&mut rng_for(seed, "alg2-encap1", i as u64))?;
        let mut u = vec![0u8; ss_len];
        rng_for(seed, "alg2-uniform1", i as u64).fill_bytes(&mut u);
        let mut row = s.ciphertext;
        row.extend(encrypt(&u, "alg2-asym1", i)?);
        class1.push(row);
    }
    let feature_len = class0.first().map(Vec::len).unwrap_or(0);
    let rows = class0
        .into_iter()
        .zip(class1)
        .flat_map(|(a, b)| [(a, 0u8), (b, 1u8)])
        .collect();
    assemble(rows, feature_len, seed)
}

fn assemble(mut rows: Vec<(Vec<u8>, u8)>, feature_len: usize, seed: u64) -> Result<LabeledDataset> {
    rows.shuffle(&mut rng_for(seed, "dataset-shuffle", 0));
    let mut features = Vec::with_capacity(rows.len() * feature_len);
    let mut labels = Vec::with_capacity(rows.len());
    for (row, label) in rows {
        if row.len() != feature_len {
            return Err(Error::LengthMismatch {
                what: "ciphertext row",
                expected: feature_len,
                actual: row.len(),
            });
        }
        features.extend_from_slice(&row);
        labels.push(label);
    }
    LabeledDataset::new(feature_len, features, labels, seed)
}

/// Row indices of a class-balanced train/validation/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class counts for each split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn per_class_total(&self) -> usize {
        self.train + self.val + self.test
    }
}

pub fn split_indices(d: &LabeledDataset, sizes: SplitSizes, seed: u64) -> Result<SplitIndices> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in d.labels().iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let available = by_class[0].len().min(by_class[1].len());
    if sizes.per_class_total() > available {
        return Err(Error::InsufficientSamples {
            requested: sizes.per_class_total(),
            available,
        });
    }
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng_for(seed, "split-class", c as u64));
    }
    let take = |from: usize, count: usize, role: u64| {
        let mut v: Vec<usize> = by_class
            .iter()
            .flat_map(|idx| idx[from..from + count].iter().copied())
            .collect();
        v.shuffle(&mut rng_for(seed, "split-order", role));
        v
    };
    Ok(SplitIndices {
        train: take(0, sizes.train, 0),
        val: take(sizes.train, sizes.val, 1),
        test: take(sizes.train + sizes.val, sizes.test, 2),
    })
}

pub fn save_dataset(d: &LabeledDataset, path: &Path) -> Result<()> {
    d.save(path)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    LabeledDataset::load(path)
}

pub fn split_dataset(
    d: &LabeledDataset,
    sizes: SplitSizes,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let idx = split_indices(d, sizes, seed)?;
    Ok((d.subset(&idx.train), d.subset(&idx.val), d.subset(&idx.test)))
}

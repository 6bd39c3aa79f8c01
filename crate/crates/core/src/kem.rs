//! KEM providers, the `F(k1, c) xor F(k2, c)` combiner, and external corpus ingestion.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::crypto::RsaKeyPair;
use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};

/// Shared-secret length used by every built-in provider.
pub const DEFAULT_SS_LEN: usize = 32;
/// Ciphertext length of the mock providers.
pub const DEFAULT_MOCK_CT_LEN: usize = 64;

const CORPUS_MAGIC: &[u8; 4] = b"ICKS";
const CORPUS_VERSION: u16 = 1;
const CORPUS_HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KemSample {
    pub shared_secret: Vec<u8>,
    pub ciphertext: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KemKind {
    RsaKem,
    IdealMock,
    DegenerateMock,
    LeakyMock,
    ExternalCorpus,
}

impl KemKind {
    pub fn name(self) -> &'static str {
        match self {
            KemKind::RsaKem => "rsa-kem",
            KemKind::IdealMock => "ideal-mock",
            KemKind::DegenerateMock => "degenerate-mock",
            KemKind::LeakyMock => "leaky-mock",
            KemKind::ExternalCorpus => "external-corpus",
        }
    }
}

impl fmt::Display for KemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            KemKind::RsaKem,
            KemKind::IdealMock,
            KemKind::DegenerateMock,
            KemKind::LeakyMock,
            KemKind::ExternalCorpus,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::param(format!("unknown KEM kind `{s}`")))
    }
}

#[derive(Clone, Debug)]
enum Backend {
    Rsa(Box<RsaKeyPair>),
    Ideal,
    Degenerate,
    Leaky,
    Corpus { samples: Vec<KemSample>, cursor: usize },
}

/// A source of `(shared_secret, ciphertext)` encapsulations.
///
/// Stateful only through the corpus cursor of external providers.
#[derive(Clone, Debug)]
pub struct KemProvider {
    name: String,
    ss_len: usize,
    ct_len: usize,
    backend: Backend,
}

impl KemProvider {
    /// Textbook RSA of a uniform secret; the ciphertext is the modulus width.
    pub fn rsa_kem(key: RsaKeyPair, ss_len: usize) -> Result<Self> {
        if ss_len == 0 || ss_len >= key.modulus_len() {
            return Err(Error::param(format!(
                "rsa-kem shared secret of {ss_len} bytes does not fit a {}-bit modulus",
                key.modulus_bits()
            )));
        }
        Ok(KemProvider {
            name: KemKind::RsaKem.name().into(),
            ss_len,
            ct_len: key.modulus_len(),
            backend: Backend::Rsa(Box::new(key)),
        })
    }

    /// Secret and ciphertext independent and uniform: the null control.
    pub fn ideal_mock(ss_len: usize, ct_len: usize) -> Result<Self> {
        Self::mock(KemKind::IdealMock, Backend::Ideal, ss_len, ct_len)
    }

    /// All-zero secret with a uniform ciphertext: the separable control.
    pub fn degenerate_mock(ss_len: usize, ct_len: usize) -> Result<Self> {
        Self::mock(KemKind::DegenerateMock, Backend::Degenerate, ss_len, ct_len)
    }

    /// Secret equal to the ciphertext prefix.
    pub fn leaky_mock(ss_len: usize, ct_len: usize) -> Result<Self> {
        if ct_len < ss_len {
            return Err(Error::param("leaky-mock needs ct_len >= ss_len"));
        }
        Self::mock(KemKind::LeakyMock, Backend::Leaky, ss_len, ct_len)
    }

    fn mock(kind: KemKind, backend: Backend, ss_len: usize, ct_len: usize) -> Result<Self> {
        if ss_len == 0 || ct_len == 0 {
            return Err(Error::param("KEM lengths must be positive"));
        }
        Ok(KemProvider {
            name: kind.name().into(),
            ss_len,
            ct_len,
            backend,
        })
    }

    /// Replays externally generated encapsulations in file order.
    pub fn from_corpus(name: impl Into<String>, corpus: KemCorpus) -> Self {
        KemProvider {
            name: name.into(),
            ss_len: corpus.ss_len,
            ct_len: corpus.ct_len,
            backend: Backend::Corpus {
                samples: corpus.samples,
                cursor: 0,
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> KemKind {
        match self.backend {
            Backend::Rsa(_) => KemKind::RsaKem,
            Backend::Ideal => KemKind::IdealMock,
            Backend::Degenerate => KemKind::DegenerateMock,
            Backend::Leaky => KemKind::LeakyMock,
            Backend::Corpus { .. } => KemKind::ExternalCorpus,
        }
    }

    pub fn ss_len(&self) -> usize {
        self.ss_len
    }

    pub fn ct_len(&self) -> usize {
        self.ct_len
    }

    /// Remaining encapsulations, or `None` for providers that never run out.
    pub fn remaining(&self) -> Option<usize> {
        match &self.backend {
            Backend::Corpus { samples, cursor } => Some(samples.len() - cursor),
            _ => None,
        }
    }

    pub fn rsa_key(&self) -> Option<&RsaKeyPair> {
        match &self.backend {
            Backend::Rsa(k) => Some(k),
            _ => None,
        }
    }

    pub fn encapsulate<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> Result<KemSample> {
        let mut uniform = |len: usize| {
            let mut v = vec![0u8; len];
            rng.fill_bytes(&mut v);
            v
        };
        let sample = match &mut self.backend {
            Backend::Rsa(key) => {
                let shared_secret = uniform(self.ss_len);
                let ciphertext = key.encrypt_textbook(&shared_secret)?;
                KemSample {
                    shared_secret,
                    ciphertext,
                }
            }
            Backend::Ideal => {
                let shared_secret = uniform(self.ss_len);
                KemSample {
                    shared_secret,
                    ciphertext: uniform(self.ct_len),
                }
            }
            Backend::Degenerate => KemSample {
                shared_secret: vec![0u8; self.ss_len],
                ciphertext: uniform(self.ct_len),
            },
            Backend::Leaky => {
                let ciphertext = uniform(self.ct_len);
                KemSample {
                    shared_secret: ciphertext[..self.ss_len].to_vec(),
                    ciphertext,
                }
            }
            Backend::Corpus { samples, cursor } => {
                let s = samples
                    .get(*cursor)
                    .cloned()
                    .ok_or(Error::CorpusExhausted { available: samples.len() })?;
                *cursor += 1;
                s
            }
        };
        Ok(sample)
    }
}

/// The PRF slot `F` of the combiner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombinerFunction {
    /// `F(k, c) = k`, giving the plain XOR combiner.
    IdentityOnKey,
    /// `F(k, c) = HMAC-SHA-256_k(c)`, truncated or expanded to the output length.
    HmacSha256,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinerSpec {
    pub function: CombinerFunction,
    pub output_len: usize,
}

impl CombinerSpec {
    pub fn new(function: CombinerFunction, output_len: usize) -> Self {
        CombinerSpec { function, output_len }
    }

    /// `k = F(k1, c) xor F(k2, c)`, where `c` is the concatenated component ciphertext.
    pub fn combine(&self, k1: &[u8], k2: &[u8], c: &[u8]) -> Result<Vec<u8>> {
        if k1.len() != k2.len() {
            return Err(Error::LengthMismatch {
                what: "combiner keys",
                expected: k1.len(),
                actual: k2.len(),
            });
        }
        if self.output_len == 0 {
            return Err(Error::param("combiner output length must be positive"));
        }
        let mut out = self.prf(k1, c)?;
        for (o, b) in out.iter_mut().zip(self.prf(k2, c)?) {
            *o ^= b;
        }
        Ok(out)
    }

    fn prf(&self, k: &[u8], c: &[u8]) -> Result<Vec<u8>> {
        match self.function {
            CombinerFunction::IdentityOnKey => {
                if k.len() != self.output_len {
                    return Err(Error::LengthMismatch {
                        what: "identity combiner key",
                        expected: self.output_len,
                        actual: k.len(),
                    });
                }
                Ok(k.to_vec())
            }
            CombinerFunction::HmacSha256 => Ok(hmac_expand(k, c, self.output_len)),
        }
    }
}

/// Block 0 is `HMAC(k, c)`; block `i > 0` is `HMAC(k, c || i_be32)`.
fn hmac_expand(key: &[u8], msg: &[u8], len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len.next_multiple_of(32));
    let mut block = 0u32;
    while out.len() < len {
        let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("HMAC accepts any key length");
        mac.update(msg);
        if block > 0 {
            mac.update(&block.to_be_bytes());
        }
        out.extend_from_slice(&mac.finalize().into_bytes());
        block += 1;
    }
    out.truncate(len);
    out
}

/// Encapsulations read from an external tool's output.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KemCorpus {
    pub ss_len: usize,
    pub ct_len: usize,
    pub samples: Vec<KemSample>,
}

impl KemCorpus {
    pub fn new(ss_len: usize, ct_len: usize, samples: Vec<KemSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.shared_secret.len() != ss_len || s.ciphertext.len() != ct_len {
                return Err(Error::format(format!(
                    "record {i}: expected {ss_len}+{ct_len} bytes, got {}+{}",
                    s.shared_secret.len(),
                    s.ciphertext.len()
                )));
            }
        }
        Ok(KemCorpus {
            ss_len,
            ct_len,
            samples,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CORPUS_HEADER_LEN + self.samples.len() * (self.ss_len + self.ct_len));
        out.extend_from_slice(CORPUS_MAGIC);
        out.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.ss_len as u32).to_le_bytes());
        out.extend_from_slice(&(self.ct_len as u32).to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        for s in &self.samples {
            out.extend_from_slice(&s.shared_secret);
            out.extend_from_slice(&s.ciphertext);
        }
        out
    }

    /// Decodes either the binary `ICKS` format or the `hex_ss hex_ct` line format.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(CORPUS_MAGIC) {
            Self::from_binary(bytes)
        } else {
            let text = std::str::from_utf8(bytes)
                .map_err(|_| Error::format("KEM corpus is neither ICKS binary nor UTF-8 text"))?;
            Self::from_text(text)
        }
    }

    fn from_binary(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CORPUS_HEADER_LEN {
            return Err(Error::format("KEM corpus header truncated"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CORPUS_VERSION {
            return Err(Error::format(format!("unsupported KEM corpus version {version}")));
        }
        let ss_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let ct_len = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
        let record = ss_len + ct_len;
        let body = &bytes[CORPUS_HEADER_LEN..];
        let expected = (count as u128) * (record as u128);
        if (body.len() as u128) != expected {
            return Err(Error::format(format!(
                "KEM corpus declares {count} records of {record} bytes but carries {} bytes",
                body.len()
            )));
        }
        let samples = if record == 0 {
            Vec::new()
        } else {
            body.chunks_exact(record)
                .map(|r| KemSample {
                    shared_secret: r[..ss_len].to_vec(),
                    ciphertext: r[ss_len..].to_vec(),
                })
                .collect()
        };
        Ok(KemCorpus {
            ss_len,
            ct_len,
            samples,
        })
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let (Some(ss), Some(ct), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::format(format!("line {}: expected `hex_ss hex_ct`", lineno + 1)));
            };
            let decode = |h: &str| {
                hex::decode(h).map_err(|e| Error::format(format!("line {}: {e}", lineno + 1)))
            };
            samples.push(KemSample {
                shared_secret: decode(ss)?,
                ciphertext: decode(ct)?,
            });
        }
        let (ss_len, ct_len) = samples
            .first()
            .map(|s| (s.shared_secret.len(), s.ciphertext.len()))
            .unwrap_or((0, 0));
        KemCorpus::new(ss_len, ct_len, samples)
    }

    pub fn to_text(&self) -> String {
        self.samples
            .iter()
            .map(|s| format!("{} {}\n", hex::encode(&s.shared_secret), hex::encode(&s.ciphertext)))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_kem_corpus(path: &Path) -> Result<KemCorpus> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    KemCorpus::from_bytes(&bytes)
}

/// Reads a labelled PKE ciphertext corpus produced by an outside tool (dataset format).
pub fn load_labeled_ciphertext_corpus(path: &Path) -> Result<LabeledDataset> {
    LabeledDataset::load(path)
}

//! RSA key generation, textbook RSA, and RSAES-OAEP (RFC 8017) over `num-bigint`.

use std::sync::OnceLock;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, RngCore};
use sha2::digest::{Digest, FixedOutputReset};
use sha2::Sha256;

use crate::error::{Error, Result};
use crate::seed;

pub const PUBLIC_EXPONENT: u32 = 65537;
pub const SUPPORTED_MODULUS_BITS: [usize; 2] = [1024, 2048];

#[derive(Clone, Debug, PartialEq, Eq)]
struct Crt {
    p: BigUint,
    q: BigUint,
    dp: BigUint,
    dq: BigUint,
    qinv: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RsaKeyPair {
    n: BigUint,
    e: BigUint,
    d: BigUint,
    modulus_bits: usize,
    crt: Option<Crt>,
}

impl RsaKeyPair {
    /// Generates a key pair with `e = 65537` whose modulus has exactly `modulus_bits` bits.
    pub fn generate<R: RngCore + ?Sized>(modulus_bits: usize, rng: &mut R) -> Result<Self> {
        if !SUPPORTED_MODULUS_BITS.contains(&modulus_bits) {
            return Err(Error::param(format!(
                "modulus_bits must be one of {SUPPORTED_MODULUS_BITS:?}, got {modulus_bits}"
            )));
        }
        let e = BigUint::from(PUBLIC_EXPONENT);
        let half = modulus_bits / 2;
        loop {
            let p = random_prime(half, &e, rng);
            let q = random_prime(half, &e, rng);
            if p == q {
                continue;
            }
            let n = &p * &q;
            debug_assert_eq!(n.bits() as usize, modulus_bits);
            let one = BigUint::one();
            let lambda = (&p - &one).lcm(&(&q - &one));
            let Some(d) = e.modinv(&lambda) else { continue };
            let (p, q) = if p > q { (p, q) } else { (q, p) };
            let crt = Crt {
                dp: &d % (&p - &one),
                dq: &d % (&q - &one),
                qinv: q.modinv(&p).expect("distinct primes are coprime"),
                p,
                q,
            };
            return Ok(RsaKeyPair {
                n,
                e,
                d,
                modulus_bits,
                crt: Some(crt),
            });
        }
    }

    /// Deterministic key generation from a 64-bit seed.
    pub fn from_seed(modulus_bits: usize, seed: u64) -> Result<Self> {
        Self::generate(modulus_bits, &mut seed::rng_for(seed, "rsa-keygen", 0))
    }

    /// Builds a key from published components; decryption then uses `d` directly.
    pub fn from_components(n: BigUint, e: BigUint, d: BigUint) -> Result<Self> {
        if n.is_zero() || e.is_zero() {
            return Err(Error::param("RSA components must be non-zero"));
        }
        let modulus_bits = n.bits() as usize;
        Ok(RsaKeyPair {
            n,
            e,
            d,
            modulus_bits,
            crt: None,
        })
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn public_exponent(&self) -> &BigUint {
        &self.e
    }

    pub fn private_exponent(&self) -> &BigUint {
        &self.d
    }

    pub fn primes(&self) -> Option<(&BigUint, &BigUint)> {
        self.crt.as_ref().map(|c| (&c.p, &c.q))
    }

    pub fn modulus_bits(&self) -> usize {
        self.modulus_bits
    }

    /// Fixed ciphertext width in bytes.
    pub fn modulus_len(&self) -> usize {
        self.modulus_bits.div_ceil(8)
    }

    /// Carmichael function of `n`, when the factorization is known.
    pub fn carmichael(&self) -> Option<BigUint> {
        let c = self.crt.as_ref()?;
        let one = BigUint::one();
        Some((&c.p - &one).lcm(&(&c.q - &one)))
    }

    fn rsaep(&self, m: &BigUint) -> Result<BigUint> {
        if m >= &self.n {
            return Err(Error::MessageOutOfRange);
        }
        Ok(m.modpow(&self.e, &self.n))
    }

    fn rsadp(&self, c: &BigUint) -> Result<BigUint> {
        if c >= &self.n {
            return Err(Error::MessageOutOfRange);
        }
        Ok(match &self.crt {
            Some(k) => {
                let m1 = c.modpow(&k.dp, &k.p);
                let m2 = c.modpow(&k.dq, &k.q);
                let diff = if m1 >= m2 {
                    &m1 - &m2
                } else {
                    &k.p - ((&m2 - &m1) % &k.p)
                };
                let h = (&k.qinv * diff) % &k.p;
                m2 + h * &k.q
            }
            None => c.modpow(&self.d, &self.n),
        })
    }

    /// `c = m^e mod n`, with `m` the big-endian integer of `plaintext`.
    pub fn encrypt_textbook(&self, plaintext: &[u8]) -> Result<Vec<u8>> {
        let c = self.rsaep(&BigUint::from_bytes_be(plaintext))?;
        Ok(i2osp(&c, self.modulus_len()))
    }

    /// Inverse of [`encrypt_textbook`](Self::encrypt_textbook), returning `len` bytes.
    pub fn decrypt_textbook(&self, ciphertext: &[u8], len: usize) -> Result<Vec<u8>> {
        let m = self.rsadp(&BigUint::from_bytes_be(ciphertext))?;
        if (m.bits() as usize).div_ceil(8) > len {
            return Err(Error::MessageTooLong {
                len: (m.bits() as usize).div_ceil(8),
                max: len,
            });
        }
        Ok(i2osp(&m, len))
    }

    /// Largest OAEP message for hash output length `hash_len`.
    pub fn oaep_max_message_len(&self, hash_len: usize) -> usize {
        self.modulus_len().saturating_sub(2 * hash_len + 2)
    }

    /// RSAES-OAEP with SHA-256, MGF1-SHA-256 and an empty label; the seed is drawn from `rng`.
    pub fn encrypt_oaep<R: RngCore + ?Sized>(&self, plaintext: &[u8], rng: &mut R) -> Result<Vec<u8>> {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        self.encrypt_oaep_with_seed::<Sha256>(plaintext, &seed)
    }

    pub fn decrypt_oaep(&self, ciphertext: &[u8]) -> Result<Vec<u8>> {
        self.decrypt_oaep_with::<Sha256>(ciphertext)
    }

    /// RSAES-OAEP-ENCRYPT with an explicit seed of the digest's output length.
    pub fn encrypt_oaep_with_seed<D: Digest + FixedOutputReset>(
        &self,
        plaintext: &[u8],
        seed: &[u8],
    ) -> Result<Vec<u8>> {
        let h_len = <D as Digest>::output_size();
        let k = self.modulus_len();
        let max = self.oaep_max_message_len(h_len);
        if plaintext.len() > max || k < 2 * h_len + 2 {
            return Err(Error::MessageTooLong {
                len: plaintext.len(),
                max,
            });
        }
        if seed.len() != h_len {
            return Err(Error::LengthMismatch {
                what: "OAEP seed",
                expected: h_len,
                actual: seed.len(),
            });
        }
        let db_len = k - h_len - 1;
        let mut db = Vec::with_capacity(db_len);
        db.extend_from_slice(&D::digest([]));
        db.resize(db_len - plaintext.len() - 1, 0);
        db.push(0x01);
        db.extend_from_slice(plaintext);

        let mut em = vec![0u8; k];
        let (masked_seed, masked_db) = em[1..].split_at_mut(h_len);
        masked_db.copy_from_slice(&db);
        mgf1_xor::<D>(seed, masked_db);
        masked_seed.copy_from_slice(seed);
        mgf1_xor::<D>(masked_db, masked_seed);

        let c = self.rsaep(&BigUint::from_bytes_be(&em))?;
        Ok(i2osp(&c, k))
    }

    pub fn decrypt_oaep_with<D: Digest + FixedOutputReset>(&self, ciphertext: &[u8]) -> Result<Vec<u8>> {
        let h_len = <D as Digest>::output_size();
        let k = self.modulus_len();
        if ciphertext.len() != k || k < 2 * h_len + 2 {
            return Err(Error::Decoding);
        }
        let m = self.rsadp(&BigUint::from_bytes_be(ciphertext)).map_err(|_| Error::Decoding)?;
        let mut em = i2osp(&m, k);
        if em[0] != 0 {
            return Err(Error::Decoding);
        }
        let (masked_seed, masked_db) = em[1..].split_at_mut(h_len);
        mgf1_xor::<D>(masked_db, masked_seed);
        mgf1_xor::<D>(masked_seed, masked_db);
        let db = masked_db;
        if db[..h_len] != D::digest([])[..] {
            return Err(Error::Decoding);
        }
        let rest = &db[h_len..];
        let sep = rest.iter().position(|&b| b != 0).ok_or(Error::Decoding)?;
        if rest[sep] != 0x01 {
            return Err(Error::Decoding);
        }
        Ok(rest[sep + 1..].to_vec())
    }
}

/// Big-endian, fixed-width integer encoding. Panics if `x` does not fit.
pub fn i2osp(x: &BigUint, len: usize) -> Vec<u8> {
    let bytes = if x.is_zero() { Vec::new() } else { x.to_bytes_be() };
    assert!(bytes.len() <= len, "integer too large for {len} bytes");
    let mut out = vec![0u8; len - bytes.len()];
    out.extend_from_slice(&bytes);
    out
}

/// XORs MGF1(seed) into `out`.
fn mgf1_xor<D: Digest + FixedOutputReset>(seed: &[u8], out: &mut [u8]) {
    let mut hasher = D::new();
    let h_len = <D as Digest>::output_size();
    for (counter, chunk) in out.chunks_mut(h_len).enumerate() {
        Digest::update(&mut hasher, seed);
        Digest::update(&mut hasher, (counter as u32).to_be_bytes());
        let block = hasher.finalize_reset();
        for (o, m) in chunk.iter_mut().zip(block.iter()) {
            *o ^= m;
        }
    }
}

fn small_primes() -> &'static [u32] {
    static PRIMES: OnceLock<Vec<u32>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        const LIMIT: usize = 4096;
        let mut sieve = vec![true; LIMIT];
        let mut out = Vec::new();
        for i in 2..LIMIT {
            if sieve[i] {
                out.push(i as u32);
                for j in (i * i..LIMIT).step_by(i) {
                    sieve[j] = false;
                }
            }
        }
        out
    })
}

fn random_prime<R: RngCore + ?Sized>(bits: usize, e: &BigUint, rng: &mut R) -> BigUint {
    let nbytes = bits.div_ceil(8);
    let excess = nbytes * 8 - bits;
    let mut buf = vec![0u8; nbytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xff >> excess;
        // top two bits set so the product has exactly 2*bits bits
        buf[0] |= 0xc0 >> excess;
        if excess >= 7 {
            buf[1] |= 0x80;
        }
        buf[nbytes - 1] |= 1;
        let candidate = BigUint::from_bytes_be(&buf);
        if candidate.bits() as usize != bits {
            continue;
        }
        if !is_probable_prime(&candidate, 24, rng) {
            continue;
        }
        if (&candidate - 1u32).gcd(e).is_one() {
            return candidate;
        }
    }
}

/// Trial division followed by Miller-Rabin with base 2 and `rounds` random bases.
pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &p in small_primes() {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    let nbytes = (n.bits() as usize).div_ceil(8);
    let witness = |a: &BigUint| -> bool {
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_one {
            return true;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                return true;
            }
            if x == one {
                return false;
            }
        }
        false
    };
    if !witness(&two) {
        return false;
    }
    let mut buf = vec![0u8; nbytes];
    for _ in 0..rounds {
        let a = loop {
            rng.fill(buf.as_mut_slice());
            let a = BigUint::from_bytes_be(&buf) % n;
            if a > one && a < n_minus_one {
                break a;
            }
        };
        if !witness(&a) {
            return false;
        }
    }
    true
}

//! Cipher suite used as data sources for the distinguishing games.

mod cascade;
mod rsa;
mod symmetric;

pub use cascade::{CascadePair, CascadeSpec, CellStatus};
pub use rsa::{i2osp, is_probable_prime, RsaKeyPair, PUBLIC_EXPONENT, SUPPORTED_MODULUS_BITS};
pub use symmetric::{aes_ctr_xor, chacha20_xor, IvPolicy, SymmetricAlgorithm, SymmetricScheme};

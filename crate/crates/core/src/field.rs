//! Prime-field arithmetic and domain-separated hashing into the field.
//!
//! Every secret, share coordinate, nullifier and tree node in this crate is a
//! [`FieldElement`]. Three moduli ship with the crate:
//!
//! - the 254-bit BN254 scalar field (the default, as used by RLN deployments),
//! - the Mersenne prime 2^61 - 1 for mid-scale randomized tests,
//! - p = 97 so that tests can enumerate the whole field.
//!
//! The hash is SHA-256 over a length-prefixed encoding, reduced modulo p. It is
//! the single place to swap in an algebraic hash such as Poseidon.

use std::cell::Cell;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;
use std::sync::LazyLock;

use rand::RngCore;
use ruint::aliases::U256;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Decimal form of the BN254 scalar field modulus.
pub const BN254_SCALAR_MODULUS: &str =
    "21888242871839275222246405745257275088548364400416034343698204186575808495617";

/// Payload bytes absorbed per field element when hashing a message.
pub const PAYLOAD_CHUNK_BYTES: usize = 31;

/// Domain tag for the message evaluation point.
pub const DOMAIN_X: &[u8] = b"rln/x";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FieldError {
    #[error("field modulus mismatch: {left} vs {right}")]
    ModulusMismatch { left: String, right: String },
    #[error("inverse of zero requested")]
    ZeroInverse,
    #[error("value {0} is not reduced modulo p")]
    NotReduced(String),
    #[error("modulus {0} is not a prime greater than 3")]
    NotPrime(u64),
    #[error("cannot parse field element: {0}")]
    Parse(String),
    #[error("malformed hash preimage: {0}")]
    MalformedPreimage(&'static str),
}

/// A prime modulus together with its fixed serialization width.
#[derive(Debug, PartialEq, Eq, Hash)]
pub struct FieldModulus {
    p: U256,
    name: &'static str,
    byte_len: usize,
    bits: usize,
}

static BN254: LazyLock<FieldModulus> = LazyLock::new(|| {
    let p = U256::from_str(BN254_SCALAR_MODULUS).expect("valid constant");
    FieldModulus::from_parts(p, "default")
});

static P61: LazyLock<FieldModulus> =
    LazyLock::new(|| FieldModulus::from_parts(U256::from((1u64 << 61) - 1), "p61"));

static P97: LazyLock<FieldModulus> = LazyLock::new(|| {
    let mut m = FieldModulus::from_prime_u64(97).expect("97 is prime");
    m.name = "p97";
    m
});

impl FieldModulus {
    fn from_parts(p: U256, name: &'static str) -> Self {
        let bits = p.bit_len();
        FieldModulus {
            p,
            name,
            byte_len: bits.div_ceil(8),
            bits,
        }
    }

    /// Builds a small modulus, checking primality by trial division.
    pub fn from_prime_u64(p: u64) -> Result<Self, FieldError> {
        if p <= 3 || !is_prime_trial_division(p) {
            return Err(FieldError::NotPrime(p));
        }
        Ok(Self::from_parts(U256::from(p), "custom"))
    }

    pub fn bn254() -> &'static FieldModulus {
        &BN254
    }

    pub fn p61() -> &'static FieldModulus {
        &P61
    }

    pub fn p97() -> &'static FieldModulus {
        &P97
    }

    pub fn value(&self) -> U256 {
        self.p
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Width in bytes of one serialized element.
    pub fn byte_len(&self) -> usize {
        self.byte_len
    }

    pub fn bits(&self) -> usize {
        self.bits
    }
}

impl fmt::Display for FieldModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.p)
    }
}

fn is_prime_trial_division(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d.saturating_mul(d) <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Named modulus selection used by scenarios and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulusChoice {
    #[default]
    Default,
    P61,
    P97,
}

impl ModulusChoice {
    pub fn modulus(self) -> &'static FieldModulus {
        match self {
            ModulusChoice::Default => FieldModulus::bn254(),
            ModulusChoice::P61 => FieldModulus::p61(),
            ModulusChoice::P97 => FieldModulus::p97(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModulusChoice::Default => "default",
            ModulusChoice::P61 => "p61",
            ModulusChoice::P97 => "p97",
        }
    }
}

impl FromStr for ModulusChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(ModulusChoice::Default),
            "p61" => Ok(ModulusChoice::P61),
            "p97" => Ok(ModulusChoice::P97),
            other => Err(format!(
                "unknown modulus {other:?} (expected default, p61 or p97)"
            )),
        }
    }
}

/// An element of a prime field, tagged with the modulus it lives in.
///
/// The `std::ops` impls panic on a modulus mismatch; use the `checked_*`
/// methods where the operands come from untrusted or mixed sources.
#[derive(Clone, Copy)]
pub struct FieldElement {
    value: U256,
    modulus: &'static FieldModulus,
}

impl FieldElement {
    /// Wraps an already-reduced value.
    pub fn new(value: U256, modulus: &'static FieldModulus) -> Result<Self, FieldError> {
        if value >= modulus.p {
            return Err(FieldError::NotReduced(value.to_string()));
        }
        Ok(FieldElement { value, modulus })
    }

    pub fn reduce(value: U256, modulus: &'static FieldModulus) -> Self {
        FieldElement {
            value: value.reduce_mod(modulus.p),
            modulus,
        }
    }

    pub fn from_u64(value: u64, modulus: &'static FieldModulus) -> Self {
        Self::reduce(U256::from(value), modulus)
    }

    pub fn zero(modulus: &'static FieldModulus) -> Self {
        FieldElement {
            value: U256::ZERO,
            modulus,
        }
    }

    pub fn one(modulus: &'static FieldModulus) -> Self {
        FieldElement {
            value: U256::from(1u64),
            modulus,
        }
    }

    /// Uniform sample by rejection over the modulus bit length.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R, modulus: &'static FieldModulus) -> Self {
        let mask = if modulus.bits >= 256 {
            U256::MAX
        } else {
            (U256::from(1u64) << modulus.bits) - U256::from(1u64)
        };
        loop {
            let mut buf = [0u8; 32];
            rng.fill_bytes(&mut buf);
            let candidate = U256::from_be_bytes(buf) & mask;
            if candidate < modulus.p {
                return FieldElement {
                    value: candidate,
                    modulus,
                };
            }
        }
    }

    pub fn parse_decimal(s: &str, modulus: &'static FieldModulus) -> Result<Self, FieldError> {
        let value = U256::from_str(s).map_err(|e| FieldError::Parse(format!("{s:?}: {e}")))?;
        Self::new(value, modulus)
    }

    pub fn value(&self) -> U256 {
        self.value
    }

    pub fn modulus(&self) -> &'static FieldModulus {
        self.modulus
    }

    pub fn is_zero(&self) -> bool {
        self.value.is_zero()
    }

    /// Low 64 bits of the value; exact for the small test moduli.
    pub fn as_u64(&self) -> u64 {
        self.value.as_limbs()[0]
    }

    pub fn to_decimal(&self) -> String {
        self.value.to_string()
    }

    /// Fixed-width big-endian encoding (`modulus.byte_len()` bytes).
    pub fn to_be_bytes(&self) -> Vec<u8> {
        let full: [u8; 32] = self.value.to_be_bytes();
        full[32 - self.modulus.byte_len..].to_vec()
    }

    pub fn from_be_bytes(bytes: &[u8], modulus: &'static FieldModulus) -> Result<Self, FieldError> {
        if bytes.len() != modulus.byte_len {
            return Err(FieldError::MalformedPreimage("wrong element width"));
        }
        let mut full = [0u8; 32];
        full[32 - bytes.len()..].copy_from_slice(bytes);
        Self::new(U256::from_be_bytes(full), modulus)
    }

    fn same_field(&self, other: &Self) -> Result<(), FieldError> {
        if self.modulus.p != other.modulus.p {
            return Err(FieldError::ModulusMismatch {
                left: self.modulus.to_string(),
                right: other.modulus.to_string(),
            });
        }
        Ok(())
    }

    pub fn checked_add(&self, rhs: &Self) -> Result<Self, FieldError> {
        self.same_field(rhs)?;
        Ok(FieldElement {
            value: self.value.add_mod(rhs.value, self.modulus.p),
            modulus: self.modulus,
        })
    }

    pub fn checked_sub(&self, rhs: &Self) -> Result<Self, FieldError> {
        self.same_field(rhs)?;
        self.checked_add(&-*rhs)
    }

    pub fn checked_mul(&self, rhs: &Self) -> Result<Self, FieldError> {
        self.same_field(rhs)?;
        Ok(FieldElement {
            value: self.value.mul_mod(rhs.value, self.modulus.p),
            modulus: self.modulus,
        })
    }

    pub fn inv(&self) -> Result<Self, FieldError> {
        if self.is_zero() {
            return Err(FieldError::ZeroInverse);
        }
        let value = self
            .value
            .inv_mod(self.modulus.p)
            .ok_or(FieldError::ZeroInverse)?;
        Ok(FieldElement {
            value,
            modulus: self.modulus,
        })
    }
}

impl PartialEq for FieldElement {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value && self.modulus.p == other.modulus.p
    }
}

impl Eq for FieldElement {}

impl std::hash::Hash for FieldElement {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.value.hash(state);
        self.modulus.p.hash(state);
    }
}

impl PartialOrd for FieldElement {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FieldElement {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.modulus.p, self.value).cmp(&(other.modulus.p, other.value))
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fe({} mod {})", self.value, self.modulus.name)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl Add for FieldElement {
    type Output = FieldElement;

    fn add(self, rhs: Self) -> Self {
        self.checked_add(&rhs).expect("field modulus mismatch")
    }
}

impl Sub for FieldElement {
    type Output = FieldElement;

    fn sub(self, rhs: Self) -> Self {
        self.checked_sub(&rhs).expect("field modulus mismatch")
    }
}

impl Mul for FieldElement {
    type Output = FieldElement;

    fn mul(self, rhs: Self) -> Self {
        self.checked_mul(&rhs).expect("field modulus mismatch")
    }
}

impl Neg for FieldElement {
    type Output = FieldElement;

    fn neg(self) -> Self {
        let value = if self.value.is_zero() {
            U256::ZERO
        } else {
            self.modulus.p - self.value
        };
        FieldElement {
            value,
            modulus: self.modulus,
        }
    }
}

thread_local! {
    static HASH_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of `hash_to_field` evaluations on the current thread.
pub fn hash_call_count() -> u64 {
    HASH_CALLS.with(Cell::get)
}

pub fn reset_hash_call_count() {
    HASH_CALLS.with(|c| c.set(0));
}

/// Canonical preimage: `u32 len(domain) ‖ domain ‖ u32 count ‖ values`, each
/// value fixed-width big-endian.
pub fn encode_preimage(domain: &[u8], inputs: &[FieldElement]) -> Vec<u8> {
    let width = inputs.first().map_or(0, |fe| fe.modulus.byte_len);
    let mut out = Vec::with_capacity(8 + domain.len() + width * inputs.len());
    out.extend_from_slice(&(domain.len() as u32).to_be_bytes());
    out.extend_from_slice(domain);
    out.extend_from_slice(&(inputs.len() as u32).to_be_bytes());
    for fe in inputs {
        out.extend_from_slice(&fe.to_be_bytes());
    }
    out
}

/// Inverse of [`encode_preimage`] for a known modulus.
pub fn decode_preimage(
    bytes: &[u8],
    modulus: &'static FieldModulus,
) -> Result<(Vec<u8>, Vec<FieldElement>), FieldError> {
    fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8], FieldError> {
        if buf.len() < n {
            return Err(FieldError::MalformedPreimage("truncated"));
        }
        let (head, tail) = buf.split_at(n);
        *buf = tail;
        Ok(head)
    }
    let mut buf = bytes;
    let dlen = u32::from_be_bytes(take(&mut buf, 4)?.try_into().expect("4 bytes")) as usize;
    let domain = take(&mut buf, dlen)?.to_vec();
    let count = u32::from_be_bytes(take(&mut buf, 4)?.try_into().expect("4 bytes")) as usize;
    let mut inputs = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        inputs.push(FieldElement::from_be_bytes(
            take(&mut buf, modulus.byte_len)?,
            modulus,
        )?);
    }
    if !buf.is_empty() {
        return Err(FieldError::MalformedPreimage("trailing bytes"));
    }
    Ok((domain, inputs))
}

/// Domain-separated hash into the field of `modulus`.
///
/// Panics if `domain` is empty or an input belongs to another field.
pub fn hash_to_field(
    domain: &[u8],
    inputs: &[FieldElement],
    modulus: &'static FieldModulus,
) -> FieldElement {
    assert!(!domain.is_empty(), "hash domain must be non-empty");
    assert!(
        inputs.iter().all(|fe| fe.modulus.p == modulus.p),
        "hash input from a different field"
    );
    HASH_CALLS.with(|c| c.set(c.get() + 1));
    let digest = Sha256::digest(encode_preimage(domain, inputs));
    let raw: [u8; 32] = digest.into();
    FieldElement::reduce(U256::from_be_bytes(raw), modulus)
}

/// Splits a payload into field blocks: the byte length first, then 31-byte
/// big-endian chunks (reduced modulo p, which is a no-op for the default field).
pub fn payload_to_field_blocks(
    payload: &[u8],
    modulus: &'static FieldModulus,
) -> Vec<FieldElement> {
    let mut blocks = Vec::with_capacity(1 + payload.len().div_ceil(PAYLOAD_CHUNK_BYTES));
    blocks.push(FieldElement::from_u64(payload.len() as u64, modulus));
    for chunk in payload.chunks(PAYLOAD_CHUNK_BYTES) {
        let mut full = [0u8; 32];
        full[32 - chunk.len()..].copy_from_slice(chunk);
        blocks.push(FieldElement::reduce(U256::from_be_bytes(full), modulus));
    }
    blocks
}

/// The evaluation point `x` for a message payload.
pub fn hash_message_to_x(payload: &[u8], modulus: &'static FieldModulus) -> FieldElement {
    hash_to_field(
        DOMAIN_X,
        &payload_to_field_blocks(payload, modulus),
        modulus,
    )
}

//! Rate-limiting nullifier primitive.
//!
//! A member with secret `a0` publishing in epoch `e` evaluates the line
//! `A(x) = a0 + a1·x` with `a1 = H(a0, e)` at `x = H(message)`. The share
//! `(x, y)` travels with the message together with the nullifier `H(a1)`.
//! One share says nothing about `a0`; two shares under one nullifier fix the
//! line and therefore the secret.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::field::{hash_message_to_x, hash_to_field, FieldElement, FieldError, FieldModulus};

pub const DOMAIN_LEAF: &[u8] = b"rln/leaf";
pub const DOMAIN_A1: &[u8] = b"rln/a1";
pub const DOMAIN_NULLIFIER: &[u8] = b"rln/nul";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShareError {
    #[error("shares belong to different epochs ({0} vs {1})")]
    EpochMismatch(u64, u64),
    #[error("shares carry different nullifiers")]
    NullifierMismatch,
    #[error("shares have identical x; duplicate, not a rate violation")]
    IdenticalX,
    #[error("malformed share encoding: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Rate-limit period index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Epoch(pub u64);

impl Epoch {
    /// The bare index embedded into the field (reduced for the small test moduli).
    pub fn as_field(self, modulus: &'static FieldModulus) -> FieldElement {
        FieldElement::from_u64(self.0, modulus)
    }
}

/// Member secret `a0` and its public commitment `H(a0)`.
#[derive(Clone, PartialEq, Eq)]
pub struct IdentityKeypair {
    secret: FieldElement,
    commitment: FieldElement,
}

impl std::fmt::Debug for IdentityKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IdentityKeypair")
            .field("commitment", &self.commitment)
            .finish_non_exhaustive()
    }
}

impl IdentityKeypair {
    /// Deterministic key generation from a seed.
    pub fn generate(seed: u64, modulus: &'static FieldModulus) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Self::generate_with(&mut rng, modulus)
    }

    /// Key generation from system entropy.
    pub fn generate_random(modulus: &'static FieldModulus) -> Self {
        Self::generate_with(&mut rand::rng(), modulus)
    }

    pub fn generate_with<R: RngCore + ?Sized>(rng: &mut R, modulus: &'static FieldModulus) -> Self {
        loop {
            let secret = FieldElement::random(rng, modulus);
            if !secret.is_zero() {
                return Self::from_secret(secret).expect("nonzero");
            }
        }
    }

    /// Rebuilds a keypair from a known secret. Zero is not a valid secret.
    pub fn from_secret(secret: FieldElement) -> Option<Self> {
        if secret.is_zero() {
            return None;
        }
        Some(IdentityKeypair {
            commitment: commitment_of(secret),
            secret,
        })
    }

    pub fn secret(&self) -> FieldElement {
        self.secret
    }

    pub fn commitment(&self) -> FieldElement {
        self.commitment
    }
}

/// The public leaf value for a secret.
pub fn commitment_of(secret: FieldElement) -> FieldElement {
    hash_to_field(DOMAIN_LEAF, &[secret], secret.modulus())
}

/// Epoch-bound slope `a1 = H(a0, epoch)`.
pub fn derive_a1(secret: FieldElement, epoch: Epoch) -> FieldElement {
    let m = secret.modulus();
    hash_to_field(DOMAIN_A1, &[secret, epoch.as_field(m)], m)
}

pub fn nullifier_of(a1: FieldElement) -> FieldElement {
    hash_to_field(DOMAIN_NULLIFIER, &[a1], a1.modulus())
}

/// One point on a member's epoch line plus the epoch nullifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RlnShare {
    pub epoch: Epoch,
    pub x: FieldElement,
    pub y: FieldElement,
    pub nullifier: FieldElement,
}

impl RlnShare {
    pub fn modulus(&self) -> &'static FieldModulus {
        self.x.modulus()
    }

    /// `epoch (8 bytes BE) ‖ x ‖ y ‖ nullifier`, elements fixed-width BE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 3 * self.modulus().byte_len());
        out.extend_from_slice(&self.epoch.0.to_be_bytes());
        out.extend_from_slice(&self.x.to_be_bytes());
        out.extend_from_slice(&self.y.to_be_bytes());
        out.extend_from_slice(&self.nullifier.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], modulus: &'static FieldModulus) -> Result<Self, ShareError> {
        let w = modulus.byte_len();
        if bytes.len() != Self::encoded_len(modulus) {
            return Err(ShareError::Malformed("wrong length"));
        }
        let epoch = Epoch(u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes")));
        let field =
            |i: usize| FieldElement::from_be_bytes(&bytes[8 + i * w..8 + (i + 1) * w], modulus);
        Ok(RlnShare {
            epoch,
            x: field(0)?,
            y: field(1)?,
            nullifier: field(2)?,
        })
    }

    pub fn encoded_len(modulus: &'static FieldModulus) -> usize {
        8 + 3 * modulus.byte_len()
    }
}

/// Builds a share for `payload` in `epoch`.
pub fn make_share(secret: FieldElement, epoch: Epoch, payload: &[u8]) -> RlnShare {
    let x = hash_message_to_x(payload, secret.modulus());
    share_from_coefficients(secret, derive_a1(secret, epoch), x, epoch)
}

/// Share algebra with `a1` and `x` supplied directly, bypassing the hashes.
///
/// Used by [`make_share`]; exposed so the line evaluation can be checked
/// against closed-form values.
pub fn share_from_coefficients(
    secret: FieldElement,
    a1: FieldElement,
    x: FieldElement,
    epoch: Epoch,
) -> RlnShare {
    RlnShare {
        epoch,
        x,
        y: secret + a1 * x,
        nullifier: nullifier_of(a1),
    }
}

/// Recovers `a0` from two shares on the same line.
pub fn recover_secret(s1: &RlnShare, s2: &RlnShare) -> Result<FieldElement, ShareError> {
    if s1.epoch != s2.epoch {
        return Err(ShareError::EpochMismatch(s1.epoch.0, s2.epoch.0));
    }
    if s1.nullifier != s2.nullifier {
        return Err(ShareError::NullifierMismatch);
    }
    interpolate_at_zero(s1, s2)
}

/// Intercept of the line through `(x1, y1)` and `(x2, y2)`.
fn interpolate_at_zero(s1: &RlnShare, s2: &RlnShare) -> Result<FieldElement, ShareError> {
    let dx = s2.x.checked_sub(&s1.x)?;
    if dx.is_zero() {
        return Err(ShareError::IdenticalX);
    }
    let num =
        s2.x.checked_mul(&s1.y)?
            .checked_sub(&s1.x.checked_mul(&s2.y)?)?;
    Ok(num.checked_mul(&dx.inv()?)?)
}

/// True iff `share` is exactly what `secret` would produce for its `(epoch, x)`.
pub fn verify_share_against_secret(secret: FieldElement, share: &RlnShare) -> bool {
    if secret.modulus() != share.modulus() {
        return false;
    }
    let a1 = derive_a1(secret, share.epoch);
    share.y == secret + a1 * share.x && share.nullifier == nullifier_of(a1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn p97(v: u64) -> FieldElement {
        FieldElement::from_u64(v, FieldModulus::p97())
    }

    #[test]
    fn line_evaluation_closed_form() {
        let s = share_from_coefficients(p97(10), p97(7), p97(3), Epoch(0));
        assert_eq!(s.y, p97(31));
        let s0 = share_from_coefficients(p97(10), p97(7), p97(0), Epoch(0));
        assert_eq!(s0.y, p97(10));
    }

    #[test]
    fn recovery_closed_form() {
        let nul = nullifier_of(p97(7));
        let s1 = RlnShare {
            epoch: Epoch(1),
            x: p97(3),
            y: p97(31),
            nullifier: nul,
        };
        let s2 = RlnShare {
            epoch: Epoch(1),
            x: p97(5),
            y: p97(45),
            nullifier: nul,
        };
        assert_eq!(recover_secret(&s1, &s2).unwrap(), p97(10));
        assert_eq!(recover_secret(&s2, &s1).unwrap(), p97(10));
    }

    #[test]
    fn recovery_of_any_line_p97() {
        for k in 0..97 {
            for m in 0..97 {
                let nul = p97(1);
                let s1 = RlnShare {
                    epoch: Epoch(0),
                    x: p97(1),
                    y: p97(k + m),
                    nullifier: nul,
                };
                let s2 = RlnShare {
                    epoch: Epoch(0),
                    x: p97(2),
                    y: p97(k + 2 * m),
                    nullifier: nul,
                };
                assert_eq!(recover_secret(&s1, &s2).unwrap(), p97(k));
            }
        }
    }

    #[test]
    fn recovery_errors() {
        let m = FieldModulus::bn254();
        let key = IdentityKeypair::generate(1, m);
        let a = make_share(key.secret(), Epoch(4), b"a");
        let b = make_share(key.secret(), Epoch(5), b"b");
        assert_eq!(recover_secret(&a, &b), Err(ShareError::EpochMismatch(4, 5)));
        let mut c = make_share(key.secret(), Epoch(4), b"c");
        c.nullifier = c.nullifier + FieldElement::one(m);
        assert_eq!(recover_secret(&a, &c), Err(ShareError::NullifierMismatch));
        assert_eq!(recover_secret(&a, &a), Err(ShareError::IdenticalX));
    }

    #[test]
    fn forged_equal_nullifiers_recover_garbage() {
        // brute-force over p = 97: two different secrets, shares glued under one
        // nullifier; the interpolated value is neither secret unless the lines
        // happen to meet on the y axis.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0;
        let trials = 2_000;
        for _ in 0..trials {
            let a = FieldElement::random(&mut rng, FieldModulus::p97());
            let b = FieldElement::random(&mut rng, FieldModulus::p97());
            let x1 = FieldElement::random(&mut rng, FieldModulus::p97());
            let x2 = FieldElement::random(&mut rng, FieldModulus::p97());
            if a == b || x1 == x2 {
                continue;
            }
            let s1 = make_share(a, Epoch(0), &[x1.as_u64() as u8]);
            let mut s2 = make_share(b, Epoch(0), &[x2.as_u64() as u8, 1]);
            s2.nullifier = s1.nullifier;
            if let Ok(r) = recover_secret(&s1, &s2) {
                if r == a || r == b {
                    hits += 1;
                }
            }
        }
        // each hit needs a 1/97 coincidence per secret
        assert!(hits < trials / 20, "hits = {hits}");
    }

    #[test]
    fn keygen_is_seeded() {
        let m = FieldModulus::bn254();
        assert_eq!(
            IdentityKeypair::generate(9, m),
            IdentityKeypair::generate(9, m)
        );
        assert_ne!(
            IdentityKeypair::generate(9, m).secret(),
            IdentityKeypair::generate(10, m).secret()
        );
        let k = IdentityKeypair::generate(9, m);
        assert_eq!(k.commitment(), hash_to_field(DOMAIN_LEAF, &[k.secret()], m));
        assert!(IdentityKeypair::from_secret(FieldElement::zero(m)).is_none());
    }

    #[test]
    fn a1_depends_on_epoch_and_secret() {
        let m = FieldModulus::bn254();
        let s = IdentityKeypair::generate(1, m).secret();
        let t = IdentityKeypair::generate(2, m).secret();
        assert_eq!(derive_a1(s, Epoch(3)), derive_a1(s, Epoch(3)));
        assert_ne!(derive_a1(s, Epoch(3)), derive_a1(s, Epoch(4)));
        assert_ne!(derive_a1(s, Epoch(3)), derive_a1(t, Epoch(3)));
    }

    #[test]
    fn same_epoch_shares_share_a_nullifier() {
        let m = FieldModulus::bn254();
        let s = IdentityKeypair::generate(3, m).secret();
        let a = make_share(s, Epoch(8), b"one");
        let b = make_share(s, Epoch(8), b"two");
        assert_eq!(a.nullifier, b.nullifier);
        assert_ne!(a.x, b.x);
    }

    #[test]
    fn share_verification_detects_tampering() {
        let m = FieldModulus::p61();
        let s = IdentityKeypair::generate(4, m).secret();
        let share = make_share(s, Epoch(2), b"payload");
        assert!(verify_share_against_secret(s, &share));
        let mut bad_y = share;
        bad_y.y = bad_y.y + FieldElement::one(m);
        assert!(!verify_share_against_secret(s, &bad_y));
        let mut bad_n = share;
        bad_n.nullifier = bad_n.nullifier + FieldElement::one(m);
        assert!(!verify_share_against_secret(s, &bad_n));
    }

    #[test]
    fn single_share_hides_secret_algebraically() {
        // With a1 free, every candidate a0 explains an observed (x, y) through
        // exactly one slope.
        let x = p97(13);
        let y = p97(58);
        for a0 in 0..97 {
            let matches = (0..97).filter(|a1| p97(a0) + p97(*a1) * x == y).count();
            assert_eq!(matches, 1, "a0 = {a0}");
        }
    }

    #[test]
    fn share_bytes_round_trip() {
        let m = FieldModulus::bn254();
        let s = IdentityKeypair::generate(5, m).secret();
        let share = make_share(s, Epoch(u64::MAX - 1), b"abc");
        let bytes = share.to_bytes();
        assert_eq!(bytes.len(), 8 + 3 * 32);
        assert_eq!(RlnShare::from_bytes(&bytes, m).unwrap(), share);
        assert!(RlnShare::from_bytes(&bytes[1..], m).is_err());
    }
}

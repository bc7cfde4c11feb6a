//! Spam-protected gossip relaying with rate-limiting nullifiers.
//!
//! Members register a commitment (with a deposit) in a Merkle accumulator and
//! attach to every message a degree-1 secret share of their key plus a proof
//! of membership. Publishing twice in one epoch leaks two points on the same
//! line, which lets any relay recover the key and claim the deposit.
//!
//! Modules, bottom-up: [`field`], [`rln`], [`tree`], [`proof`], [`registry`],
//! [`relay`], [`simnet`]. [`vectors`] and [`bench`] back the CLI.

pub mod bench;
pub mod field;
pub mod proof;
pub mod registry;
pub mod relay;
pub mod rln;
pub mod simnet;
pub mod tree;
pub mod vectors;

pub use field::{hash_to_field, FieldElement, FieldModulus, ModulusChoice};
pub use proof::{
    ProofBackend, ProofBundle, RateLimitStatement, RateLimitWitness, SimTransparentBackend,
};
pub use registry::Registry;
pub use relay::{RelayNode, ValidationVerdict};
pub use rln::{Epoch, IdentityKeypair, RlnShare};
pub use simnet::{run, Scenario};
pub use tree::{MembershipTree, MerklePath};

//! Rate-limit proofs attached to every relayed message.
//!
//! The public statement is `(root, epoch, x, y, nullifier)`. A valid witness
//! `(secret, leaf, path)` satisfies, for `a1 = H(secret, epoch)`:
//!
//! 1. `leaf = H(secret)`
//! 2. `path` authenticates `leaf` under `root`
//! 3. `y = secret + a1·x`
//! 4. `nullifier = H(a1)`
//!
//! [`SimTransparentBackend`] ships the witness in the clear and re-checks the
//! four relations on verification. It is neither hiding nor zero-knowledge; a
//! SNARK backend implements the same [`ProofBackend`] trait.

use serde::{Deserialize, Serialize};

use crate::field::{hash_to_field, FieldElement, FieldModulus};
use crate::rln::{commitment_of, derive_a1, nullifier_of, Epoch, RlnShare};
use crate::tree::{verify_path, MerklePath, MAX_DEPTH};

pub const DOMAIN_STATEMENT: &[u8] = b"rln/stmt";
pub const SIM_BACKEND_ID: &str = "sim-transparent";

/// Public inputs of a rate-limit proof.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RateLimitStatement {
    pub merkle_root: FieldElement,
    pub epoch: Epoch,
    pub x: FieldElement,
    pub y: FieldElement,
    pub nullifier: FieldElement,
}

impl RateLimitStatement {
    pub fn new(merkle_root: FieldElement, share: &RlnShare) -> Self {
        RateLimitStatement {
            merkle_root,
            epoch: share.epoch,
            x: share.x,
            y: share.y,
            nullifier: share.nullifier,
        }
    }

    pub fn share(&self) -> RlnShare {
        RlnShare {
            epoch: self.epoch,
            x: self.x,
            y: self.y,
            nullifier: self.nullifier,
        }
    }

    pub fn modulus(&self) -> &'static FieldModulus {
        self.merkle_root.modulus()
    }

    fn single_field(&self) -> bool {
        let m = self.modulus();
        [self.x, self.y, self.nullifier]
            .iter()
            .all(|fe| fe.modulus() == m)
    }

    /// `root ‖ share bytes`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.merkle_root.to_be_bytes();
        out.extend_from_slice(&self.share().to_bytes());
        out
    }

    pub fn encoded_len(modulus: &'static FieldModulus) -> usize {
        modulus.byte_len() + RlnShare::encoded_len(modulus)
    }

    pub fn from_bytes(bytes: &[u8], modulus: &'static FieldModulus) -> Option<Self> {
        if bytes.len() != Self::encoded_len(modulus) {
            return None;
        }
        let (root, rest) = bytes.split_at(modulus.byte_len());
        let root = FieldElement::from_be_bytes(root, modulus).ok()?;
        let share = RlnShare::from_bytes(rest, modulus).ok()?;
        Some(Self::new(root, &share))
    }
}

/// Digest of a statement, used as a logging and deduplication key.
pub fn statement_digest(statement: &RateLimitStatement) -> FieldElement {
    let m = statement.modulus();
    hash_to_field(
        DOMAIN_STATEMENT,
        &[
            statement.merkle_root,
            statement.epoch.as_field(m),
            statement.x,
            statement.y,
            statement.nullifier,
        ],
        m,
    )
}

/// Private inputs: the member secret, the committed leaf and its path.
#[derive(Clone, PartialEq, Eq)]
pub struct RateLimitWitness {
    pub secret: FieldElement,
    pub leaf: FieldElement,
    pub path: MerklePath,
}

impl RateLimitWitness {
    /// Witness for a member whose leaf is `H(secret)`.
    pub fn for_member(secret: FieldElement, path: MerklePath) -> Self {
        RateLimitWitness {
            secret,
            leaf: commitment_of(secret),
            path,
        }
    }
}

impl std::fmt::Debug for RateLimitWitness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RateLimitWitness")
            .field("leaf_index", &self.path.leaf_index)
            .finish_non_exhaustive()
    }
}

/// The relation a witness failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Commitment,
    Membership,
    Share,
    Nullifier,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProveError {
    #[error("witness does not satisfy the {0:?} relation")]
    Unsatisfied(Relation),
    #[error("statement and witness mix fields")]
    FieldMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("unknown proof backend {0:?}")]
    UnknownBackend(String),
}

/// Outcome of checking a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verification {
    Valid,
    Failed(Relation),
    /// Proof bytes could not be decoded.
    Malformed,
}

impl Verification {
    pub fn is_valid(self) -> bool {
        self == Verification::Valid
    }
}

/// Checks the four relations in order, reporting the first failure.
pub fn check_relations(
    statement: &RateLimitStatement,
    witness: &RateLimitWitness,
) -> Result<(), Relation> {
    if witness.leaf != commitment_of(witness.secret) {
        return Err(Relation::Commitment);
    }
    if !verify_path(statement.merkle_root, witness.leaf, &witness.path) {
        return Err(Relation::Membership);
    }
    let a1 = derive_a1(witness.secret, statement.epoch);
    if statement.y != witness.secret + a1 * statement.x {
        return Err(Relation::Share);
    }
    if statement.nullifier != nullifier_of(a1) {
        return Err(Relation::Nullifier);
    }
    Ok(())
}

/// A proving system for rate-limit statements.
pub trait ProofBackend: Send + Sync {
    fn id(&self) -> &'static str;

    fn prove(
        &self,
        statement: &RateLimitStatement,
        witness: &RateLimitWitness,
    ) -> Result<ProofBundle, ProveError>;

    /// Checks a bundle already known to carry this backend's id.
    fn check(&self, bundle: &ProofBundle) -> Verification;
}

/// Proof object carried on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProofBundle {
    pub statement: RateLimitStatement,
    pub backend_id: String,
    pub proof: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("truncated bundle")]
    Truncated,
    #[error("backend id is not ASCII")]
    BadBackendId,
    #[error("bad statement encoding")]
    BadStatement,
    #[error("trailing bytes after bundle")]
    Trailing,
    #[error("backend id longer than 255 bytes")]
    BackendIdTooLong,
}

impl ProofBundle {
    /// `u8 id length ‖ id ‖ statement ‖ u32 proof length ‖ proof`.
    pub fn to_wire(&self) -> Result<Vec<u8>, WireError> {
        let id = self.backend_id.as_bytes();
        if id.len() > u8::MAX as usize {
            return Err(WireError::BackendIdTooLong);
        }
        let mut out = Vec::with_capacity(1 + id.len() + 128 + 4 + self.proof.len());
        out.push(id.len() as u8);
        out.extend_from_slice(id);
        out.extend_from_slice(&self.statement.to_bytes());
        out.extend_from_slice(&(self.proof.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.proof);
        Ok(out)
    }

    pub fn from_wire(bytes: &[u8], modulus: &'static FieldModulus) -> Result<Self, WireError> {
        let id_len = *bytes.first().ok_or(WireError::Truncated)? as usize;
        let mut rest = &bytes[1..];
        if rest.len() < id_len {
            return Err(WireError::Truncated);
        }
        let (id, tail) = rest.split_at(id_len);
        if !id.is_ascii() {
            return Err(WireError::BadBackendId);
        }
        rest = tail;
        let st_len = RateLimitStatement::encoded_len(modulus);
        if rest.len() < st_len + 4 {
            return Err(WireError::Truncated);
        }
        let (st, tail) = rest.split_at(st_len);
        let statement =
            RateLimitStatement::from_bytes(st, modulus).ok_or(WireError::BadStatement)?;
        let (len, proof) = tail.split_at(4);
        let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
        if proof.len() < len {
            return Err(WireError::Truncated);
        }
        if proof.len() > len {
            return Err(WireError::Trailing);
        }
        Ok(ProofBundle {
            statement,
            backend_id: String::from_utf8(id.to_vec()).map_err(|_| WireError::BadBackendId)?,
            proof: proof.to_vec(),
        })
    }

    pub fn wire_len(&self) -> usize {
        1 + self.backend_id.len() + self.statement.to_bytes().len() + 4 + self.proof.len()
    }
}

/// Dispatches to `backend` after checking the bundle's backend id.
pub fn check_bundle(
    backend: &dyn ProofBackend,
    bundle: &ProofBundle,
) -> Result<Verification, VerifyError> {
    if bundle.backend_id != backend.id() {
        return Err(VerifyError::UnknownBackend(bundle.backend_id.clone()));
    }
    Ok(backend.check(bundle))
}

pub fn verify(backend: &dyn ProofBackend, bundle: &ProofBundle) -> Result<bool, VerifyError> {
    check_bundle(backend, bundle).map(Verification::is_valid)
}

pub fn prove(
    backend: &dyn ProofBackend,
    statement: &RateLimitStatement,
    witness: &RateLimitWitness,
) -> Result<ProofBundle, ProveError> {
    backend.prove(statement, witness)
}

/// Transparent backend: the proof is the serialized witness.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimTransparentBackend;

impl SimTransparentBackend {
    /// `secret ‖ leaf ‖ u64 leaf index ‖ u8 depth ‖ siblings`.
    pub fn encode_witness(witness: &RateLimitWitness) -> Vec<u8> {
        let w = witness.secret.modulus().byte_len();
        let mut out = Vec::with_capacity(2 * w + 9 + w * witness.path.depth());
        out.extend_from_slice(&witness.secret.to_be_bytes());
        out.extend_from_slice(&witness.leaf.to_be_bytes());
        out.extend_from_slice(&witness.path.leaf_index.to_be_bytes());
        out.push(witness.path.depth() as u8);
        for s in &witness.path.siblings {
            out.extend_from_slice(&s.to_be_bytes());
        }
        out
    }

    pub fn decode_witness(
        bytes: &[u8],
        modulus: &'static FieldModulus,
    ) -> Option<RateLimitWitness> {
        let w = modulus.byte_len();
        if bytes.len() < 2 * w + 9 {
            return None;
        }
        let secret = FieldElement::from_be_bytes(&bytes[..w], modulus).ok()?;
        let leaf = FieldElement::from_be_bytes(&bytes[w..2 * w], modulus).ok()?;
        let rest = &bytes[2 * w..];
        let leaf_index = u64::from_be_bytes(rest[..8].try_into().ok()?);
        let depth = rest[8] as usize;
        if depth == 0 || depth > MAX_DEPTH || rest.len() != 9 + depth * w {
            return None;
        }
        let siblings = rest[9..]
            .chunks(w)
            .map(|c| FieldElement::from_be_bytes(c, modulus).ok())
            .collect::<Option<Vec<_>>>()?;
        Some(RateLimitWitness {
            secret,
            leaf,
            path: MerklePath {
                leaf_index,
                siblings,
            },
        })
    }

    /// Packs a witness without the prover-side relation check.
    pub fn bundle_unchecked(
        statement: &RateLimitStatement,
        witness: &RateLimitWitness,
    ) -> ProofBundle {
        ProofBundle {
            statement: *statement,
            backend_id: SIM_BACKEND_ID.to_string(),
            proof: Self::encode_witness(witness),
        }
    }
}

impl ProofBackend for SimTransparentBackend {
    fn id(&self) -> &'static str {
        SIM_BACKEND_ID
    }

    fn prove(
        &self,
        statement: &RateLimitStatement,
        witness: &RateLimitWitness,
    ) -> Result<ProofBundle, ProveError> {
        let m = statement.modulus();
        if !statement.single_field()
            || witness.secret.modulus() != m
            || witness.leaf.modulus() != m
            || witness.path.siblings.iter().any(|s| s.modulus() != m)
        {
            return Err(ProveError::FieldMismatch);
        }
        check_relations(statement, witness).map_err(ProveError::Unsatisfied)?;
        Ok(Self::bundle_unchecked(statement, witness))
    }

    fn check(&self, bundle: &ProofBundle) -> Verification {
        if !bundle.statement.single_field() {
            return Verification::Malformed;
        }
        match Self::decode_witness(&bundle.proof, bundle.statement.modulus()) {
            None => Verification::Malformed,
            Some(witness) => match check_relations(&bundle.statement, &witness) {
                Ok(()) => Verification::Valid,
                Err(r) => Verification::Failed(r),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rln::{make_share, IdentityKeypair};
    use crate::tree::MembershipTree;

    struct Fixture {
        tree: MembershipTree,
        key: IdentityKeypair,
        index: u64,
    }

    fn fixture(m: &'static FieldModulus) -> Fixture {
        let mut tree = MembershipTree::new(8, m).unwrap();
        for seed in 100..105 {
            tree.insert(IdentityKeypair::generate(seed, m).commitment())
                .unwrap();
        }
        let key = IdentityKeypair::generate(1, m);
        let index = tree.insert(key.commitment()).unwrap();
        tree.insert(IdentityKeypair::generate(200, m).commitment())
            .unwrap();
        Fixture { tree, key, index }
    }

    fn honest(f: &Fixture, epoch: u64, payload: &[u8]) -> (RateLimitStatement, RateLimitWitness) {
        let share = make_share(f.key.secret(), Epoch(epoch), payload);
        (
            RateLimitStatement::new(f.tree.root(), &share),
            RateLimitWitness::for_member(f.key.secret(), f.tree.prove(f.index).unwrap()),
        )
    }

    #[test]
    fn completeness() {
        let f = fixture(FieldModulus::bn254());
        let (st, wit) = honest(&f, 3, b"hi");
        let bundle = prove(&SimTransparentBackend, &st, &wit).unwrap();
        assert_eq!(bundle.backend_id, SIM_BACKEND_ID);
        assert!(verify(&SimTransparentBackend, &bundle).unwrap());
    }

    #[test]
    fn prover_refuses_broken_witnesses() {
        let m = FieldModulus::bn254();
        let f = fixture(m);
        let (st, wit) = honest(&f, 3, b"hi");

        let mut wrong_secret = wit.clone();
        wrong_secret.secret = IdentityKeypair::generate(77, m).secret();
        assert_eq!(
            prove(&SimTransparentBackend, &st, &wrong_secret),
            Err(ProveError::Unsatisfied(Relation::Commitment))
        );

        let mut other_root = st;
        other_root.merkle_root = MembershipTree::new(8, m).unwrap().root();
        assert_eq!(
            prove(&SimTransparentBackend, &other_root, &wit),
            Err(ProveError::Unsatisfied(Relation::Membership))
        );

        let mut bad_y = st;
        bad_y.y = bad_y.y + FieldElement::one(m);
        assert_eq!(
            prove(&SimTransparentBackend, &bad_y, &wit),
            Err(ProveError::Unsatisfied(Relation::Share))
        );

        let mut bad_nul = st;
        bad_nul.nullifier = bad_nul.nullifier + FieldElement::one(m);
        assert_eq!(
            prove(&SimTransparentBackend, &bad_nul, &wit),
            Err(ProveError::Unsatisfied(Relation::Nullifier))
        );
    }

    #[test]
    fn binding_to_statement() {
        let m = FieldModulus::bn254();
        let f = fixture(m);
        let (st, wit) = honest(&f, 3, b"hi");
        let mut bundle = prove(&SimTransparentBackend, &st, &wit).unwrap();
        bundle.statement.y = bundle.statement.y + FieldElement::one(m);
        assert!(!verify(&SimTransparentBackend, &bundle).unwrap());
    }

    #[test]
    fn strict_root_binding() {
        let m = FieldModulus::bn254();
        let mut f = fixture(m);
        let (st, wit) = honest(&f, 3, b"hi");
        let mut bundle = prove(&SimTransparentBackend, &st, &wit).unwrap();
        // a later root that still contains the leaf
        f.tree
            .insert(IdentityKeypair::generate(300, m).commitment())
            .unwrap();
        assert!(verify_path(
            f.tree.root(),
            f.key.commitment(),
            &f.tree.prove(f.index).unwrap()
        ));
        bundle.statement.merkle_root = f.tree.root();
        assert!(!verify(&SimTransparentBackend, &bundle).unwrap());
    }

    #[test]
    fn unknown_backend_and_malformed_bytes() {
        let f = fixture(FieldModulus::p61());
        let (st, wit) = honest(&f, 1, b"x");
        let mut bundle = prove(&SimTransparentBackend, &st, &wit).unwrap();
        let mut foreign = bundle.clone();
        foreign.backend_id = "groth16".into();
        assert_eq!(
            verify(&SimTransparentBackend, &foreign),
            Err(VerifyError::UnknownBackend("groth16".into()))
        );
        bundle.proof.truncate(5);
        assert_eq!(
            check_bundle(&SimTransparentBackend, &bundle),
            Ok(Verification::Malformed)
        );
        bundle.proof.clear();
        assert!(!verify(&SimTransparentBackend, &bundle).unwrap());
    }

    #[test]
    fn digest_properties() {
        let f = fixture(FieldModulus::bn254());
        let (st, _) = honest(&f, 3, b"hi");
        assert_eq!(statement_digest(&st), statement_digest(&st));
        let mut later = st;
        later.epoch = Epoch(4);
        assert_ne!(statement_digest(&st), statement_digest(&later));
        let back = RateLimitStatement::from_bytes(&st.to_bytes(), FieldModulus::bn254()).unwrap();
        assert_eq!(statement_digest(&back), statement_digest(&st));
    }

    #[test]
    fn wire_round_trip() {
        let m = FieldModulus::bn254();
        let f = fixture(m);
        let (st, wit) = honest(&f, 3, b"hi");
        let bundle = prove(&SimTransparentBackend, &st, &wit).unwrap();
        let wire = bundle.to_wire().unwrap();
        assert_eq!(wire.len(), bundle.wire_len());
        assert_eq!(wire[0] as usize, SIM_BACKEND_ID.len());
        assert_eq!(ProofBundle::from_wire(&wire, m).unwrap(), bundle);
        assert_eq!(
            ProofBundle::from_wire(&wire[..wire.len() - 1], m),
            Err(WireError::Truncated)
        );
        let mut long = wire.clone();
        long.push(0);
        assert_eq!(ProofBundle::from_wire(&long, m), Err(WireError::Trailing));
    }
}

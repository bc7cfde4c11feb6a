//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rln_relay::proof::{verify, SimTransparentBackend};
use rln_relay::rln::{make_share, Epoch};
use rln_relay::tree::hash_node;
use rln_relay::{
    FieldElement, FieldModulus, IdentityKeypair, MembershipTree, ProofBundle, RateLimitStatement,
    RateLimitWitness,
};

/// Root of a depth-`depth` tree by folding every level of the full leaf array.
pub fn rebuild_root(
    depth: usize,
    leaves: &BTreeMap<u64, FieldElement>,
    m: &'static FieldModulus,
) -> FieldElement {
    let mut level = vec![FieldElement::zero(m); 1usize << depth];
    for (i, leaf) in leaves {
        level[*i as usize] = *leaf;
    }
    for _ in 0..depth {
        level = level
            .chunks(2)
            .map(|pair| hash_node(pair[0], pair[1]))
            .collect();
    }
    level[0]
}

/// A random value of the field other than `old`.
pub fn other<R: Rng>(rng: &mut R, old: FieldElement) -> FieldElement {
    loop {
        let v = FieldElement::random(rng, old.modulus());
        if v != old {
            return v;
        }
    }
}

/// A small group with an honest statement/witness pair generator.
pub struct Group {
    pub tree: MembershipTree,
    pub keys: Vec<IdentityKeypair>,
}

impl Group {
    pub fn new<R: Rng>(
        rng: &mut R,
        depth: usize,
        members: usize,
        m: &'static FieldModulus,
    ) -> Self {
        let mut tree = MembershipTree::new(depth, m).unwrap();
        let keys: Vec<IdentityKeypair> = (0..members)
            .map(|_| IdentityKeypair::generate_with(rng, m))
            .collect();
        for k in &keys {
            tree.insert(k.commitment()).unwrap();
        }
        Group { tree, keys }
    }

    pub fn honest<R: Rng>(&self, rng: &mut R) -> (RateLimitStatement, RateLimitWitness) {
        let who = rng.random_range(0..self.keys.len());
        let key = &self.keys[who];
        let payload: Vec<u8> = (0..rng.random_range(0..64)).map(|_| rng.random()).collect();
        let share = make_share(key.secret(), Epoch(rng.random_range(0..1 << 40)), &payload);
        let statement = RateLimitStatement::new(self.tree.root(), &share);
        let witness =
            RateLimitWitness::for_member(key.secret(), self.tree.prove(who as u64).unwrap());
        (statement, witness)
    }
}

pub const STATEMENT_FIELDS: [&str; 5] = ["merkle_root", "epoch", "x", "y", "nullifier"];
pub const WITNESS_PARTS: [&str; 5] = ["secret", "leaf", "leaf_index", "sibling", "proof_byte"];

/// Applies one mutation named by `target` to an honest pair and returns the
/// bundle a cheating prover would send.
pub fn mutated_bundle<R: Rng>(
    rng: &mut R,
    target: &str,
    mut statement: RateLimitStatement,
    mut witness: RateLimitWitness,
) -> ProofBundle {
    match target {
        "merkle_root" => statement.merkle_root = other(rng, statement.merkle_root),
        "epoch" => statement.epoch = Epoch(statement.epoch.0 + rng.random_range(1..1 << 32)),
        "x" => statement.x = other(rng, statement.x),
        "y" => statement.y = other(rng, statement.y),
        "nullifier" => statement.nullifier = other(rng, statement.nullifier),
        "secret" => witness.secret = other(rng, witness.secret),
        "leaf" => witness.leaf = other(rng, witness.leaf),
        "leaf_index" => {
            let depth = witness.path.depth() as u32;
            witness.path.leaf_index ^= rng.random_range(1..1u64 << depth);
        }
        "sibling" => {
            let k = rng.random_range(0..witness.path.siblings.len());
            witness.path.siblings[k] = other(rng, witness.path.siblings[k]);
        }
        "proof_byte" => {
            let mut bundle = SimTransparentBackend::bundle_unchecked(&statement, &witness);
            let k = rng.random_range(0..bundle.proof.len());
            bundle.proof[k] ^= rng.random_range(1..=255u8);
            return bundle;
        }
        other => panic!("unknown mutation target {other}"),
    }
    SimTransparentBackend::bundle_unchecked(&statement, &witness)
}

pub fn accepts(bundle: &ProofBundle) -> bool {
    verify(&SimTransparentBackend, bundle).unwrap()
}

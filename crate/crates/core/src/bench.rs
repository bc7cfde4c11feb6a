//! Desk-scale micro-benchmarks. Each operation is timed individually and the
//! median is reported, which keeps one slow outlier from skewing the result.

use std::hint::black_box;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::{FieldElement, ModulusChoice};
use crate::proof::{
    verify, ProofBackend, RateLimitStatement, RateLimitWitness, SimTransparentBackend,
};
use crate::rln::{make_share, recover_secret, Epoch, IdentityKeypair};
use crate::tree::{MembershipTree, DEFAULT_DEPTH};

pub const BENCH_SCHEMA: &str = "rln-relay/bench/v1";
pub const MIN_ITERATIONS: usize = 100;
pub const OPERATIONS: [&str; 6] = [
    "fe_add",
    "make_share",
    "prove",
    "verify",
    "tree_insert",
    "recover_secret",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpTiming {
    pub name: String,
    pub iterations: usize,
    pub median_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub modulus: ModulusChoice,
    pub tree_depth: usize,
    pub operations: Vec<OpTiming>,
}

impl BenchReport {
    pub fn get(&self, name: &str) -> Option<&OpTiming> {
        self.operations.iter().find(|o| o.name == name)
    }
}

fn time_each<S, T>(
    name: &str,
    iterations: usize,
    mut setup: impl FnMut(usize) -> S,
    mut op: impl FnMut(S) -> T,
) -> OpTiming {
    let mut samples = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let input = setup(i);
        let start = Instant::now();
        black_box(op(black_box(input)));
        samples.push(start.elapsed().as_nanos() as u64);
    }
    samples.sort_unstable();
    OpTiming {
        name: name.to_string(),
        iterations,
        median_ns: samples[samples.len() / 2],
        min_ns: samples[0],
        max_ns: samples[samples.len() - 1],
    }
}

/// Runs every operation in [`OPERATIONS`] `iterations` times (at least
/// [`MIN_ITERATIONS`]).
pub fn run_bench(choice: ModulusChoice, iterations: usize, seed: u64) -> BenchReport {
    let iterations = iterations.max(MIN_ITERATIONS);
    let m = choice.modulus();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = IdentityKeypair::generate_with(&mut rng, m);

    let mut tree = MembershipTree::new(DEFAULT_DEPTH, m).expect("default depth is valid");
    let idx = tree.insert(key.commitment()).expect("empty tree has room");
    for _ in 0..15 {
        tree.insert(IdentityKeypair::generate_with(&mut rng, m).commitment())
            .expect("room");
    }
    let root = tree.root();
    let path = tree.prove(idx).expect("inserted leaf");
    let backend = SimTransparentBackend;

    let mut ops = Vec::new();

    let a = FieldElement::random(&mut rng, m);
    let b = FieldElement::random(&mut rng, m);
    ops.push(time_each("fe_add", iterations, |_| (a, b), |(a, b)| a + b));

    ops.push(time_each(
        "make_share",
        iterations,
        |i| format!("payload {i}"),
        |p| make_share(key.secret(), Epoch(7), p.as_bytes()),
    ));

    let witness = RateLimitWitness::for_member(key.secret(), path);
    let statements: Vec<RateLimitStatement> = (0..iterations)
        .map(|i| {
            RateLimitStatement::new(
                root,
                &make_share(key.secret(), Epoch(7), format!("payload {i}").as_bytes()),
            )
        })
        .collect();
    ops.push(time_each(
        "prove",
        iterations,
        |i| &statements[i],
        |s| backend.prove(s, &witness).expect("honest witness"),
    ));

    let bundles: Vec<_> = statements
        .iter()
        .map(|s| backend.prove(s, &witness).expect("honest witness"))
        .collect();
    ops.push(time_each(
        "verify",
        iterations,
        |i| &bundles[i],
        |bundle| assert!(verify(&backend, bundle).expect("known backend")),
    ));

    let mut insert_tree = MembershipTree::new(DEFAULT_DEPTH, m).expect("default depth is valid");
    let leaves: Vec<FieldElement> = (0..iterations)
        .map(|_| IdentityKeypair::generate_with(&mut rng, m).commitment())
        .collect();
    ops.push(time_each(
        "tree_insert",
        iterations,
        |i| leaves[i],
        |leaf| insert_tree.insert(leaf).expect("room"),
    ));

    let pairs: Vec<_> = (0..iterations)
        .map(|i| {
            let e = Epoch(i as u64);
            (
                make_share(key.secret(), e, b"first"),
                make_share(key.secret(), e, b"second"),
            )
        })
        .collect();
    ops.push(time_each(
        "recover_secret",
        iterations,
        |i| &pairs[i],
        |(s1, s2)| recover_secret(s1, s2).expect("distinct x"),
    ));

    BenchReport {
        schema: BENCH_SCHEMA.to_string(),
        modulus: choice,
        tree_depth: DEFAULT_DEPTH,
        operations: ops,
    }
}

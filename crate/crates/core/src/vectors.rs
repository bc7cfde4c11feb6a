//! Conformance vectors for other implementations: hashes, shares, recovery,
//! tree paths and proof bundles, plus a manifest with per-file counts.
//!
//! Generation is seeded, so two runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::{hash_to_field, FieldElement, FieldModulus, ModulusChoice};
use crate::proof::{
    verify, ProofBackend, ProofBundle, RateLimitStatement, RateLimitWitness, SimTransparentBackend,
};
use crate::rln::{
    make_share, recover_secret, verify_share_against_secret, Epoch, IdentityKeypair, RlnShare,
};
use crate::tree::{verify_path, MembershipTree, MerklePath};

pub const VECTOR_SEED: u64 = 0x726c_6e76;
pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

const HASH_FILE: &str = "hash.jsonl";
const SHARE_FILE: &str = "shares.jsonl";
const RECOVERY_FILE: &str = "recovery.jsonl";
const TREE_FILE: &str = "tree.jsonl";
const BUNDLE_FILE: &str = "bundles.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum VectorError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{file} line {line}: {reason}")]
    Mismatch {
        file: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashVector {
    pub domain: String,
    pub inputs: Vec<String>,
    pub modulus: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareVector {
    pub modulus: String,
    pub secret: String,
    pub epoch: u64,
    pub payload_hex: String,
    pub x: String,
    pub y: String,
    pub nullifier: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryVector {
    pub modulus: String,
    pub epoch: u64,
    pub nullifier: String,
    pub x1: String,
    pub y1: String,
    pub x2: String,
    pub y2: String,
    pub secret: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeVector {
    pub modulus: String,
    pub depth: usize,
    pub root: String,
    pub index: u64,
    pub leaf: String,
    pub siblings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleVector {
    pub modulus: String,
    pub label: String,
    pub wire_hex: String,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub modulus: ModulusChoice,
    pub seed: u64,
    pub files: BTreeMap<String, usize>,
}

/// Generated vector files keyed by file name (manifest included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorSet {
    pub files: BTreeMap<String, String>,
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("vector rows serialize") + "\n")
        .collect()
}

fn dec(fe: FieldElement) -> String {
    fe.to_decimal()
}

pub fn generate(choice: ModulusChoice) -> VectorSet {
    let m = choice.modulus();
    let mstr = m.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(VECTOR_SEED);

    let domains = [
        "rln/leaf",
        "rln/a1",
        "rln/nul",
        "rln/x",
        "rln/node",
        "rln/stmt",
        "conformance",
    ];
    let hashes: Vec<HashVector> = (0..20)
        .map(|i| {
            let domain = domains[i % domains.len()];
            let inputs: Vec<FieldElement> = (0..i % 4)
                .map(|_| FieldElement::random(&mut rng, m))
                .collect();
            HashVector {
                domain: domain.to_string(),
                inputs: inputs.iter().copied().map(dec).collect(),
                modulus: mstr.clone(),
                output: dec(hash_to_field(domain.as_bytes(), &inputs, m)),
            }
        })
        .collect();

    let mut shares = Vec::new();
    let mut recoveries = Vec::new();
    for i in 0..10u64 {
        let key = IdentityKeypair::generate_with(&mut rng, m);
        let epoch = Epoch(rng.random_range(0..1_000_000));
        let p1: Vec<u8> = (0..(i as usize * 7)).map(|_| rng.random()).collect();
        let p2 = [p1.as_slice(), b"!"].concat();
        let s1 = make_share(key.secret(), epoch, &p1);
        let s2 = make_share(key.secret(), epoch, &p2);
        for (payload, s) in [(&p1, s1), (&p2, s2)] {
            shares.push(ShareVector {
                modulus: mstr.clone(),
                secret: dec(key.secret()),
                epoch: epoch.0,
                payload_hex: hex::encode(payload),
                x: dec(s.x),
                y: dec(s.y),
                nullifier: dec(s.nullifier),
            });
        }
        if s1.x != s2.x {
            recoveries.push(RecoveryVector {
                modulus: mstr.clone(),
                epoch: epoch.0,
                nullifier: dec(s1.nullifier),
                x1: dec(s1.x),
                y1: dec(s1.y),
                x2: dec(s2.x),
                y2: dec(s2.y),
                secret: dec(key.secret()),
            });
        }
    }

    let depth = 6;
    let mut tree = MembershipTree::new(depth, m).expect("valid depth");
    let keys: Vec<IdentityKeypair> = (0..12)
        .map(|_| IdentityKeypair::generate_with(&mut rng, m))
        .collect();
    for k in &keys {
        tree.insert(k.commitment()).expect("room");
    }
    tree.delete(3).expect("live leaf");
    let trees: Vec<TreeVector> = [0u64, 3, 7, 11, 40]
        .into_iter()
        .map(|index| {
            let path = tree.prove(index).expect("in range");
            TreeVector {
                modulus: mstr.clone(),
                depth,
                root: dec(tree.root()),
                index,
                leaf: dec(tree.leaf(index).expect("in range")),
                siblings: path.siblings.into_iter().map(dec).collect(),
            }
        })
        .collect();

    let backend = SimTransparentBackend;
    let mut bundles = Vec::new();
    for (n, key) in keys.iter().enumerate().filter(|(n, _)| *n != 3).take(4) {
        let share = make_share(
            key.secret(),
            Epoch(n as u64 + 100),
            format!("message {n}").as_bytes(),
        );
        let statement = RateLimitStatement::new(tree.root(), &share);
        let witness =
            RateLimitWitness::for_member(key.secret(), tree.prove(n as u64).expect("in range"));
        let bundle = backend.prove(&statement, &witness).expect("honest witness");
        bundles.push(bundle_vector(&mstr, format!("honest-{n}"), &bundle, true));
        let mut tampered = bundle.clone();
        tampered.statement.y = tampered.statement.y + FieldElement::one(m);
        bundles.push(bundle_vector(
            &mstr,
            format!("tampered-y-{n}"),
            &tampered,
            false,
        ));
    }
    // the deleted member can still fold its old path, but not to the current root
    let slashed = &keys[3];
    let share = make_share(slashed.secret(), Epoch(7), b"after slash");
    let statement = RateLimitStatement::new(tree.root(), &share);
    let witness = RateLimitWitness::for_member(slashed.secret(), tree.prove(3).expect("in range"));
    let forged = SimTransparentBackend::bundle_unchecked(&statement, &witness);
    bundles.push(bundle_vector(
        &mstr,
        "deleted-member".into(),
        &forged,
        false,
    ));

    let mut files = BTreeMap::new();
    files.insert(HASH_FILE.to_string(), jsonl(&hashes));
    files.insert(SHARE_FILE.to_string(), jsonl(&shares));
    files.insert(RECOVERY_FILE.to_string(), jsonl(&recoveries));
    files.insert(TREE_FILE.to_string(), jsonl(&trees));
    files.insert(BUNDLE_FILE.to_string(), jsonl(&bundles));
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        modulus: choice,
        seed: VECTOR_SEED,
        files: files
            .iter()
            .map(|(k, v)| (k.clone(), v.lines().count()))
            .collect(),
    };
    files.insert(
        MANIFEST.to_string(),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    );
    VectorSet { files }
}

fn bundle_vector(modulus: &str, label: String, bundle: &ProofBundle, valid: bool) -> BundleVector {
    BundleVector {
        modulus: modulus.to_string(),
        label,
        wire_hex: hex::encode(bundle.to_wire().expect("short backend id")),
        valid,
    }
}

impl VectorSet {
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

fn modulus_by_value(s: &str) -> Option<&'static FieldModulus> {
    [
        ModulusChoice::Default,
        ModulusChoice::P61,
        ModulusChoice::P97,
    ]
    .into_iter()
    .map(ModulusChoice::modulus)
    .find(|m| m.to_string() == s)
}

struct Checker<'a> {
    file: &'a str,
    line: usize,
}

impl Checker<'_> {
    fn fail(&self, reason: impl Into<String>) -> VectorError {
        VectorError::Mismatch {
            file: self.file.to_string(),
            line: self.line,
            reason: reason.into(),
        }
    }

    fn modulus(&self, s: &str) -> Result<&'static FieldModulus, VectorError> {
        modulus_by_value(s).ok_or_else(|| self.fail(format!("unknown modulus {s}")))
    }

    fn fe(&self, s: &str, m: &'static FieldModulus) -> Result<FieldElement, VectorError> {
        FieldElement::parse_decimal(s, m).map_err(|e| self.fail(e.to_string()))
    }

    fn ensure(&self, ok: bool, reason: &str) -> Result<(), VectorError> {
        if ok {
            Ok(())
        } else {
            Err(self.fail(reason))
        }
    }
}

fn rows<T: for<'de> Deserialize<'de>>(dir: &Path, file: &str) -> Result<Vec<T>, VectorError> {
    fs::read_to_string(dir.join(file))?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(VectorError::from))
        .collect()
}

/// Re-checks every vector in `dir` against this implementation. Returns the
/// number of rows checked per file.
pub fn verify_dir(dir: &Path) -> Result<BTreeMap<String, usize>, VectorError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let mut counts = BTreeMap::new();

    let hashes: Vec<HashVector> = rows(dir, HASH_FILE)?;
    for (line, v) in hashes.iter().enumerate() {
        let c = Checker {
            file: HASH_FILE,
            line: line + 1,
        };
        let m = c.modulus(&v.modulus)?;
        let inputs = v
            .inputs
            .iter()
            .map(|s| c.fe(s, m))
            .collect::<Result<Vec<_>, _>>()?;
        c.ensure(
            hash_to_field(v.domain.as_bytes(), &inputs, m) == c.fe(&v.output, m)?,
            "hash output differs",
        )?;
    }
    counts.insert(HASH_FILE.to_string(), hashes.len());

    let shares: Vec<ShareVector> = rows(dir, SHARE_FILE)?;
    for (line, v) in shares.iter().enumerate() {
        let c = Checker {
            file: SHARE_FILE,
            line: line + 1,
        };
        let m = c.modulus(&v.modulus)?;
        let secret = c.fe(&v.secret, m)?;
        let share = RlnShare {
            epoch: Epoch(v.epoch),
            x: c.fe(&v.x, m)?,
            y: c.fe(&v.y, m)?,
            nullifier: c.fe(&v.nullifier, m)?,
        };
        let payload = hex::decode(&v.payload_hex).map_err(|e| c.fail(e.to_string()))?;
        c.ensure(
            verify_share_against_secret(secret, &share),
            "share relation fails",
        )?;
        c.ensure(
            make_share(secret, Epoch(v.epoch), &payload) == share,
            "share not reproduced",
        )?;
    }
    counts.insert(SHARE_FILE.to_string(), shares.len());

    let recoveries: Vec<RecoveryVector> = rows(dir, RECOVERY_FILE)?;
    for (line, v) in recoveries.iter().enumerate() {
        let c = Checker {
            file: RECOVERY_FILE,
            line: line + 1,
        };
        let m = c.modulus(&v.modulus)?;
        let nullifier = c.fe(&v.nullifier, m)?;
        let s1 = RlnShare {
            epoch: Epoch(v.epoch),
            x: c.fe(&v.x1, m)?,
            y: c.fe(&v.y1, m)?,
            nullifier,
        };
        let s2 = RlnShare {
            epoch: Epoch(v.epoch),
            x: c.fe(&v.x2, m)?,
            y: c.fe(&v.y2, m)?,
            nullifier,
        };
        let recovered = recover_secret(&s1, &s2).map_err(|e| c.fail(e.to_string()))?;
        c.ensure(recovered == c.fe(&v.secret, m)?, "recovered secret differs")?;
    }
    counts.insert(RECOVERY_FILE.to_string(), recoveries.len());

    let trees: Vec<TreeVector> = rows(dir, TREE_FILE)?;
    for (line, v) in trees.iter().enumerate() {
        let c = Checker {
            file: TREE_FILE,
            line: line + 1,
        };
        let m = c.modulus(&v.modulus)?;
        let path = MerklePath {
            leaf_index: v.index,
            siblings: v
                .siblings
                .iter()
                .map(|s| c.fe(s, m))
                .collect::<Result<_, _>>()?,
        };
        c.ensure(path.depth() == v.depth, "path depth differs")?;
        c.ensure(
            verify_path(c.fe(&v.root, m)?, c.fe(&v.leaf, m)?, &path),
            "path does not verify",
        )?;
    }
    counts.insert(TREE_FILE.to_string(), trees.len());

    let bundles: Vec<BundleVector> = rows(dir, BUNDLE_FILE)?;
    for (line, v) in bundles.iter().enumerate() {
        let c = Checker {
            file: BUNDLE_FILE,
            line: line + 1,
        };
        let m = c.modulus(&v.modulus)?;
        let wire = hex::decode(&v.wire_hex).map_err(|e| c.fail(e.to_string()))?;
        let bundle = ProofBundle::from_wire(&wire, m).map_err(|e| c.fail(e.to_string()))?;
        let ok = verify(&SimTransparentBackend, &bundle).map_err(|e| c.fail(e.to_string()))?;
        c.ensure(ok == v.valid, "bundle verdict differs")?;
    }
    counts.insert(BUNDLE_FILE.to_string(), bundles.len());

    if counts != manifest.files {
        return Err(VectorError::Mismatch {
            file: MANIFEST.to_string(),
            line: 0,
            reason: format!("manifest counts {:?} vs files {:?}", manifest.files, counts),
        });
    }
    Ok(counts)
}

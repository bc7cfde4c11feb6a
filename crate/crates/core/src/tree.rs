//! Fixed-depth incremental Merkle accumulator over member commitments.
//!
//! Leaves are appended left to right and never reused. Deleting a leaf resets
//! it to the zero-leaf constant, so a deleted slot hashes exactly like an
//! untouched one. Only non-default nodes are stored.
//!
//! Mutations take `&mut self`; callers that share a tree must serialize them.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::field::{hash_to_field, FieldElement, FieldModulus};

pub const DOMAIN_NODE: &[u8] = b"rln/node";
pub const MAX_DEPTH: usize = 32;
pub const DEFAULT_DEPTH: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("tree depth {0} outside 1..=32")]
    DepthOutOfRange(usize),
    #[error("tree is full")]
    Full,
    #[error("the zero leaf is reserved for deleted slots")]
    ZeroLeaf,
    #[error("leaf index {0} out of range")]
    IndexOutOfRange(u64),
    #[error("leaf {0} already deleted")]
    AlreadyDeleted(u64),
    #[error("leaf from a different field")]
    WrongField,
    #[error("invalid snapshot: {0}")]
    Snapshot(String),
}

/// Parent hash of two children.
pub fn hash_node(left: FieldElement, right: FieldElement) -> FieldElement {
    hash_to_field(DOMAIN_NODE, &[left, right], left.modulus())
}

/// Authentication path, siblings ordered leaf to root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerklePath {
    pub leaf_index: u64,
    pub siblings: Vec<FieldElement>,
}

impl MerklePath {
    pub fn depth(&self) -> usize {
        self.siblings.len()
    }

    /// Root obtained by folding `leaf` up the path.
    pub fn compute_root(&self, leaf: FieldElement) -> Option<FieldElement> {
        if self.depth() == 0 || self.depth() > MAX_DEPTH {
            return None;
        }
        if self.depth() < 64 && self.leaf_index >> self.depth() != 0 {
            return None;
        }
        let mut node = leaf;
        for (level, sibling) in self.siblings.iter().enumerate() {
            if sibling.modulus() != node.modulus() {
                return None;
            }
            node = if (self.leaf_index >> level) & 1 == 0 {
                hash_node(node, *sibling)
            } else {
                hash_node(*sibling, node)
            };
        }
        Some(node)
    }
}

/// True iff folding `leaf` along `path` reproduces `root`.
pub fn verify_path(root: FieldElement, leaf: FieldElement, path: &MerklePath) -> bool {
    path.compute_root(leaf) == Some(root)
}

#[derive(Debug, Clone)]
pub struct MembershipTree {
    depth: usize,
    modulus: &'static FieldModulus,
    next_index: u64,
    nodes: HashMap<(usize, u64), FieldElement>,
    zeros: Vec<FieldElement>,
}

impl MembershipTree {
    pub fn new(depth: usize, modulus: &'static FieldModulus) -> Result<Self, TreeError> {
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(TreeError::DepthOutOfRange(depth));
        }
        let mut zeros = Vec::with_capacity(depth + 1);
        zeros.push(FieldElement::zero(modulus));
        for level in 0..depth {
            let z = zeros[level];
            zeros.push(hash_node(z, z));
        }
        Ok(MembershipTree {
            depth,
            modulus,
            next_index: 0,
            nodes: HashMap::new(),
            zeros,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn modulus(&self) -> &'static FieldModulus {
        self.modulus
    }

    pub fn capacity(&self) -> u64 {
        1u64 << self.depth
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    /// Default hash of an empty subtree rooted at `level`.
    pub fn zero_at(&self, level: usize) -> FieldElement {
        self.zeros[level]
    }

    pub fn root(&self) -> FieldElement {
        self.node(self.depth, 0)
    }

    fn node(&self, level: usize, pos: u64) -> FieldElement {
        self.nodes
            .get(&(level, pos))
            .copied()
            .unwrap_or(self.zeros[level])
    }

    pub fn leaf(&self, index: u64) -> Result<FieldElement, TreeError> {
        if index >= self.capacity() {
            return Err(TreeError::IndexOutOfRange(index));
        }
        Ok(self.node(0, index))
    }

    /// Appends a commitment, returning its index. Costs `depth` hashes.
    pub fn insert(&mut self, leaf: FieldElement) -> Result<u64, TreeError> {
        if leaf.modulus() != self.modulus {
            return Err(TreeError::WrongField);
        }
        if leaf.is_zero() {
            return Err(TreeError::ZeroLeaf);
        }
        if self.next_index >= self.capacity() {
            return Err(TreeError::Full);
        }
        let index = self.next_index;
        self.set_leaf(index, leaf);
        self.next_index += 1;
        Ok(index)
    }

    /// Resets a live leaf to zero. Indices are never handed out again.
    pub fn delete(&mut self, index: u64) -> Result<(), TreeError> {
        if index >= self.next_index {
            return Err(TreeError::IndexOutOfRange(index));
        }
        if self.node(0, index).is_zero() {
            return Err(TreeError::AlreadyDeleted(index));
        }
        self.set_leaf(index, self.zeros[0]);
        Ok(())
    }

    fn set_leaf(&mut self, index: u64, leaf: FieldElement) {
        let mut pos = index;
        let mut node = leaf;
        self.store(0, pos, node);
        for level in 0..self.depth {
            let sibling = self.node(level, pos ^ 1);
            node = if pos & 1 == 0 {
                hash_node(node, sibling)
            } else {
                hash_node(sibling, node)
            };
            pos >>= 1;
            self.store(level + 1, pos, node);
        }
    }

    fn store(&mut self, level: usize, pos: u64, value: FieldElement) {
        if value == self.zeros[level] {
            self.nodes.remove(&(level, pos));
        } else {
            self.nodes.insert((level, pos), value);
        }
    }

    pub fn prove(&self, index: u64) -> Result<MerklePath, TreeError> {
        if index >= self.capacity() {
            return Err(TreeError::IndexOutOfRange(index));
        }
        let siblings = (0..self.depth)
            .map(|level| self.node(level, (index >> level) ^ 1))
            .collect();
        Ok(MerklePath {
            leaf_index: index,
            siblings,
        })
    }

    /// Non-zero leaves in index order.
    pub fn live_leaves(&self) -> BTreeMap<u64, FieldElement> {
        self.nodes
            .iter()
            .filter(|((level, _), _)| *level == 0)
            .map(|((_, pos), v)| (*pos, *v))
            .collect()
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        TreeSnapshot {
            depth: self.depth,
            modulus: self.modulus.to_string(),
            next_index: self.next_index,
            leaves: self
                .live_leaves()
                .into_iter()
                .map(|(i, v)| (i, v.to_decimal()))
                .collect(),
        }
    }
}

/// JSON form of a tree: depth, modulus and the live leaves by index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub depth: usize,
    pub modulus: String,
    pub next_index: u64,
    pub leaves: BTreeMap<u64, String>,
}

impl TreeSnapshot {
    pub fn restore(&self) -> Result<MembershipTree, TreeError> {
        let modulus = [
            FieldModulus::bn254(),
            FieldModulus::p61(),
            FieldModulus::p97(),
        ]
        .into_iter()
        .find(|m| m.to_string() == self.modulus)
        .ok_or_else(|| TreeError::Snapshot(format!("unknown modulus {}", self.modulus)))?;
        let mut tree = MembershipTree::new(self.depth, modulus)?;
        if self.next_index > tree.capacity() {
            return Err(TreeError::Snapshot("next_index beyond capacity".into()));
        }
        for (index, value) in &self.leaves {
            if *index >= self.next_index {
                return Err(TreeError::Snapshot(format!(
                    "leaf {index} beyond next_index"
                )));
            }
            let leaf = FieldElement::parse_decimal(value, modulus)
                .map_err(|e| TreeError::Snapshot(e.to_string()))?;
            if leaf.is_zero() {
                return Err(TreeError::ZeroLeaf);
            }
            tree.set_leaf(*index, leaf);
        }
        tree.next_index = self.next_index;
        Ok(tree)
    }
}

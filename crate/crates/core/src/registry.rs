//! In-process membership contract: deposits, root history, slashing and
//! withdrawal.
//!
//! A single owner serializes every call, which gives the same atomicity a
//! contract call would. The escrow balance always satisfies
//! `escrow + paid_out == received`.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::field::{FieldElement, FieldModulus};
use crate::rln::commitment_of;
use crate::tree::{MembershipTree, MerklePath, TreeError};

pub const REQUIRED_DEPOSIT: u64 = 1000;
pub const ROOT_WINDOW: usize = 8;

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("deposit must be exactly {required}, got {offered}")]
    WrongDeposit { required: u64, offered: u64 },
    #[error("commitment is already an active member")]
    DuplicateCommitment,
    #[error("no active member for this commitment")]
    NotActiveMember,
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberStatus {
    Active,
    Slashed,
    Withdrawn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberRecord {
    pub leaf_index: u64,
    pub commitment: FieldElement,
    pub deposit: u64,
    pub status: MemberStatus,
    pub owner: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerKind {
    Register,
    Slash,
    Withdraw,
}

/// One economic event. `actor` is the registrant, the slasher or the
/// withdrawing member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub sequence: u64,
    pub kind: LedgerKind,
    pub actor: NodeId,
    pub amount: u64,
    pub leaf_index: u64,
}

/// The last `window` roots, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootHistory {
    window: usize,
    entries: VecDeque<(u64, FieldElement)>,
}

impl RootHistory {
    pub fn new(window: usize, initial: FieldElement) -> Self {
        assert!(window > 0, "root window must be positive");
        let mut entries = VecDeque::with_capacity(window);
        entries.push_back((0, initial));
        RootHistory { window, entries }
    }

    pub fn push(&mut self, sequence: u64, root: FieldElement) {
        if self.entries.len() == self.window {
            self.entries.pop_front();
        }
        self.entries.push_back((sequence, root));
    }

    pub fn contains(&self, root: &FieldElement) -> bool {
        self.entries.iter().any(|(_, r)| r == root)
    }

    pub fn current(&self) -> FieldElement {
        self.entries.back().expect("history never empty").1
    }

    pub fn entries(&self) -> impl Iterator<Item = &(u64, FieldElement)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegistryConfig {
    pub depth: usize,
    pub modulus: &'static FieldModulus,
    pub required_deposit: u64,
    pub root_window: usize,
}

impl RegistryConfig {
    pub fn new(depth: usize, modulus: &'static FieldModulus) -> Self {
        RegistryConfig {
            depth,
            modulus,
            required_deposit: REQUIRED_DEPOSIT,
            root_window: ROOT_WINDOW,
        }
    }
}

/// Result of a successful slash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlashReceipt {
    pub payout: u64,
    pub new_root: FieldElement,
    pub leaf_index: u64,
    pub offender: NodeId,
}

#[derive(Debug, Clone)]
pub struct Registry {
    config: RegistryConfig,
    tree: MembershipTree,
    members: Vec<MemberRecord>,
    active: HashMap<FieldElement, usize>,
    history: RootHistory,
    ledger: Vec<LedgerEntry>,
    sequence: u64,
    received: u64,
    paid_out: u64,
    payouts: BTreeMap<NodeId, u64>,
}

impl Registry {
    pub fn new(config: RegistryConfig) -> Result<Self, RegistryError> {
        let tree = MembershipTree::new(config.depth, config.modulus)?;
        let history = RootHistory::new(config.root_window, tree.root());
        Ok(Registry {
            config,
            tree,
            members: Vec::new(),
            active: HashMap::new(),
            history,
            ledger: Vec::new(),
            sequence: 0,
            received: 0,
            paid_out: 0,
            payouts: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    pub fn register(
        &mut self,
        commitment: FieldElement,
        deposit: u64,
        owner: NodeId,
    ) -> Result<(u64, FieldElement), RegistryError> {
        if deposit != self.config.required_deposit {
            return Err(RegistryError::WrongDeposit {
                required: self.config.required_deposit,
                offered: deposit,
            });
        }
        if self.active.contains_key(&commitment) {
            return Err(RegistryError::DuplicateCommitment);
        }
        let leaf_index = self.tree.insert(commitment)?;
        self.active.insert(commitment, self.members.len());
        self.members.push(MemberRecord {
            leaf_index,
            commitment,
            deposit,
            status: MemberStatus::Active,
            owner,
        });
        self.received += deposit;
        let root = self.record(LedgerKind::Register, owner, deposit, leaf_index);
        Ok((leaf_index, root))
    }

    /// Removes the member whose commitment is `H(revealed_secret)` and pays
    /// their deposit to `beneficiary`.
    pub fn slash(
        &mut self,
        revealed_secret: FieldElement,
        beneficiary: NodeId,
    ) -> Result<SlashReceipt, RegistryError> {
        let (leaf_index, payout, offender) = self.retire(revealed_secret, MemberStatus::Slashed)?;
        *self.payouts.entry(beneficiary).or_default() += payout;
        let new_root = self.record(LedgerKind::Slash, beneficiary, payout, leaf_index);
        Ok(SlashReceipt {
            payout,
            new_root,
            leaf_index,
            offender,
        })
    }

    /// Voluntary exit; the deposit goes back to the member's owner.
    pub fn withdraw(&mut self, secret: FieldElement) -> Result<u64, RegistryError> {
        let (leaf_index, payout, owner) = self.retire(secret, MemberStatus::Withdrawn)?;
        *self.payouts.entry(owner).or_default() += payout;
        self.record(LedgerKind::Withdraw, owner, payout, leaf_index);
        Ok(payout)
    }

    fn retire(
        &mut self,
        secret: FieldElement,
        status: MemberStatus,
    ) -> Result<(u64, u64, NodeId), RegistryError> {
        if secret.modulus() != self.config.modulus {
            return Err(RegistryError::NotActiveMember);
        }
        let commitment = commitment_of(secret);
        let idx = *self
            .active
            .get(&commitment)
            .ok_or(RegistryError::NotActiveMember)?;
        let record = &mut self.members[idx];
        self.tree.delete(record.leaf_index)?;
        self.active.remove(&commitment);
        record.status = status;
        let payout = std::mem::take(&mut record.deposit);
        self.paid_out += payout;
        Ok((record.leaf_index, payout, record.owner))
    }

    fn record(
        &mut self,
        kind: LedgerKind,
        actor: NodeId,
        amount: u64,
        leaf_index: u64,
    ) -> FieldElement {
        self.sequence += 1;
        let root = self.tree.root();
        self.history.push(self.sequence, root);
        self.ledger.push(LedgerEntry {
            sequence: self.sequence,
            kind,
            actor,
            amount,
            leaf_index,
        });
        root
    }

    pub fn is_known_root(&self, root: &FieldElement) -> bool {
        self.history.contains(root)
    }

    pub fn current_root(&self) -> FieldElement {
        self.tree.root()
    }

    pub fn prove(&self, leaf_index: u64) -> Result<MerklePath, RegistryError> {
        Ok(self.tree.prove(leaf_index)?)
    }

    pub fn tree(&self) -> &MembershipTree {
        &self.tree
    }

    pub fn history(&self) -> &RootHistory {
        &self.history
    }

    pub fn members(&self) -> &[MemberRecord] {
        &self.members
    }

    pub fn member_by_commitment(&self, commitment: &FieldElement) -> Option<&MemberRecord> {
        self.members
            .iter()
            .rev()
            .find(|m| &m.commitment == commitment)
    }

    pub fn is_active(&self, commitment: &FieldElement) -> bool {
        self.active.contains_key(commitment)
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    /// Update counter; bumped by every register, slash and withdraw.
    pub fn sequence(&self) -> u64 {
        self.sequence
    }

    pub fn escrow(&self) -> u64 {
        self.members.iter().map(|m| m.deposit).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.received
    }

    pub fn total_paid_out(&self) -> u64 {
        self.paid_out
    }

    pub fn payouts(&self) -> &BTreeMap<NodeId, u64> {
        &self.payouts
    }

    pub fn is_balanced(&self) -> bool {
        self.escrow() + self.paid_out == self.received
            && self.payouts.values().sum::<u64>() == self.paid_out
    }

    /// One JSON object per line.
    pub fn ledger_jsonl(&self) -> String {
        self.ledger
            .iter()
            .map(|e| serde_json::to_string(e).expect("ledger entries serialize") + "\n")
            .collect()
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot {
            members: self
                .members
                .iter()
                .map(|m| MemberSnapshot {
                    leaf_index: m.leaf_index,
                    commitment: m.commitment.to_decimal(),
                    deposit: m.deposit,
                    status: m.status,
                    owner: m.owner,
                })
                .collect(),
            current_root: self.current_root().to_decimal(),
            history: self
                .history
                .entries()
                .map(|(sequence, root)| HistorySnapshot {
                    sequence: *sequence,
                    root: root.to_decimal(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberSnapshot {
    pub leaf_index: u64,
    pub commitment: String,
    pub deposit: u64,
    pub status: MemberStatus,
    pub owner: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistorySnapshot {
    pub sequence: u64,
    pub root: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    pub members: Vec<MemberSnapshot>,
    pub current_root: String,
    pub history: Vec<HistorySnapshot>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rln::IdentityKeypair;

    fn registry() -> Registry {
        Registry::new(RegistryConfig::new(8, FieldModulus::p61())).unwrap()
    }

    fn key(seed: u64) -> IdentityKeypair {
        IdentityKeypair::generate(seed, FieldModulus::p61())
    }

    #[test]
    fn registration() {
        let mut r = registry();
        let (idx, root) = r
            .register(key(1).commitment(), REQUIRED_DEPOSIT, NodeId(0))
            .unwrap();
        assert_eq!(idx, 0);
        assert_eq!(root, r.current_root());
        assert_eq!(
            r.register(key(1).commitment(), REQUIRED_DEPOSIT, NodeId(1)),
            Err(RegistryError::DuplicateCommitment)
        );
        assert_eq!(
            r.register(key(2).commitment(), 999, NodeId(1)),
            Err(RegistryError::WrongDeposit {
                required: 1000,
                offered: 999
            })
        );
        assert!(r.is_balanced());
    }

    #[test]
    fn slashing_pays_the_reporter_once() {
        let mut r = registry();
        let k = key(1);
        r.register(k.commitment(), REQUIRED_DEPOSIT, NodeId(0))
            .unwrap();
        let receipt = r.slash(k.secret(), NodeId(5)).unwrap();
        assert_eq!(receipt.payout, REQUIRED_DEPOSIT);
        assert_eq!(receipt.offender, NodeId(0));
        assert_eq!(receipt.new_root, r.current_root());
        assert_eq!(
            r.slash(k.secret(), NodeId(6)),
            Err(RegistryError::NotActiveMember)
        );
        assert_eq!(r.payouts()[&NodeId(5)], REQUIRED_DEPOSIT);
        assert_eq!(r.members()[0].status, MemberStatus::Slashed);
        assert!(r.is_balanced());
    }

    #[test]
    fn slashing_needs_the_secret() {
        let mut r = registry();
        let k = key(1);
        r.register(k.commitment(), REQUIRED_DEPOSIT, NodeId(0))
            .unwrap();
        // knowing the public commitment is not enough
        assert_eq!(
            r.slash(k.commitment(), NodeId(1)),
            Err(RegistryError::NotActiveMember)
        );
        for seed in 100..200 {
            assert!(r.slash(key(seed).secret(), NodeId(1)).is_err());
        }
    }

    #[test]
    fn withdraw_returns_deposit() {
        let mut r = registry();
        let a = key(1);
        let b = key(2);
        r.register(a.commitment(), REQUIRED_DEPOSIT, NodeId(0))
            .unwrap();
        r.register(b.commitment(), REQUIRED_DEPOSIT, NodeId(1))
            .unwrap();
        assert_eq!(r.withdraw(a.secret()).unwrap(), REQUIRED_DEPOSIT);
        assert!(r.tree().leaf(0).unwrap().is_zero());
        assert_eq!(r.payouts()[&NodeId(0)], REQUIRED_DEPOSIT);
        r.slash(b.secret(), NodeId(3)).unwrap();
        assert_eq!(r.withdraw(b.secret()), Err(RegistryError::NotActiveMember));
        assert!(r.is_balanced());
        // a withdrawn commitment may come back under a fresh leaf
        let (idx, _) = r
            .register(a.commitment(), REQUIRED_DEPOSIT, NodeId(0))
            .unwrap();
        assert_eq!(idx, 2);
    }

    #[test]
    fn root_window() {
        let mut r = registry();
        let genesis = r.current_root();
        assert!(r.is_known_root(&genesis));
        let mut roots = vec![genesis];
        for seed in 1..=(ROOT_WINDOW as u64) {
            let (_, root) = r
                .register(key(seed).commitment(), REQUIRED_DEPOSIT, NodeId(0))
                .unwrap();
            roots.push(root);
        }
        // window holds the current root and the previous W - 1
        assert!(!r.is_known_root(&genesis));
        assert!(roots[1..].iter().all(|root| r.is_known_root(root)));
        assert_eq!(r.history().len(), ROOT_WINDOW);
        assert!(!r.is_known_root(&FieldElement::from_u64(12345, FieldModulus::p61())));
    }

    #[test]
    fn ledger_and_snapshot_export() {
        let mut r = registry();
        let k = key(1);
        r.register(k.commitment(), REQUIRED_DEPOSIT, NodeId(2))
            .unwrap();
        r.slash(k.secret(), NodeId(4)).unwrap();
        let lines: Vec<LedgerEntry> = r
            .ledger_jsonl()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].kind, LedgerKind::Slash);
        assert_eq!(lines[1].actor, NodeId(4));
        assert!(lines[0].sequence < lines[1].sequence);
        let snap = serde_json::to_value(r.snapshot()).unwrap();
        assert_eq!(snap["members"][0]["status"], "slashed");
        assert_eq!(snap["history"].as_array().unwrap().len(), 3);
    }
}

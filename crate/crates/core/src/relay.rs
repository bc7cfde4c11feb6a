//! Per-node relay state machine: attach a share and proof when publishing,
//! and run the routing-time checks on everything received.
//!
//! Validation runs in a fixed order and the first failing check decides:
//!
//! 1. epoch gap against the local clock
//! 2. Merkle root in the registry window
//! 3. proof verification (the only expensive step, at most once per message)
//! 4. nullifier log: replayed share is a duplicate, a second point under a
//!    known nullifier is spam and yields the publisher's secret
//!
//! Spam is never forwarded.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::field::FieldElement;
use crate::proof::{
    check_bundle, ProofBackend, ProofBundle, ProveError, RateLimitStatement, RateLimitWitness,
    SimTransparentBackend, Verification,
};
use crate::registry::{NodeId, Registry, RegistryError, SlashReceipt};
use crate::rln::{make_share, recover_secret, Epoch, IdentityKeypair, RlnShare};
use crate::tree::MerklePath;

pub const DEFAULT_EPOCH_LENGTH: u64 = 10;
pub const DEFAULT_MAX_EPOCH_GAP: u64 = 1;
pub const DEFAULT_LOG_RETENTION: u64 = 2;

/// `floor(time / epoch_length)`.
pub fn current_epoch(time: u64, epoch_length: u64) -> Epoch {
    assert!(epoch_length > 0, "epoch length must be positive");
    Epoch(time / epoch_length)
}

/// Epoch timing as seen by one node. `offset` skews the node's clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeClock {
    pub epoch_length: u64,
    pub max_epoch_gap: u64,
    #[serde(default)]
    pub offset: i64,
}

impl Default for NodeClock {
    fn default() -> Self {
        NodeClock {
            epoch_length: DEFAULT_EPOCH_LENGTH,
            max_epoch_gap: DEFAULT_MAX_EPOCH_GAP,
            offset: 0,
        }
    }
}

impl NodeClock {
    /// Local time; clamps to zero before the clock's origin.
    pub fn local_time(&self, now: u64) -> u64 {
        now.saturating_add_signed(self.offset)
    }

    pub fn epoch_at(&self, now: u64) -> Epoch {
        current_epoch(self.local_time(now), self.epoch_length)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageId(pub [u8; 32]);

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MessageId({})", &hex::encode(self.0)[..12])
    }
}

/// A routed message with its rate-limit proof.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayMessage {
    payload: Vec<u8>,
    bundle: ProofBundle,
    id: MessageId,
}

impl RelayMessage {
    pub fn new(payload: Vec<u8>, bundle: ProofBundle) -> Self {
        let id = Self::compute_id(&payload, &bundle.statement);
        RelayMessage {
            payload,
            bundle,
            id,
        }
    }

    /// SHA-256 of `u32 payload length ‖ payload ‖ statement bytes`.
    pub fn compute_id(payload: &[u8], statement: &RateLimitStatement) -> MessageId {
        let mut h = Sha256::new();
        h.update((payload.len() as u32).to_be_bytes());
        h.update(payload);
        h.update(statement.to_bytes());
        MessageId(h.finalize().into())
    }

    pub fn id(&self) -> MessageId {
        self.id
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn bundle(&self) -> &ProofBundle {
        &self.bundle
    }

    pub fn statement(&self) -> &RateLimitStatement {
        &self.bundle.statement
    }

    pub fn share(&self) -> RlnShare {
        self.bundle.statement.share()
    }

    pub fn epoch(&self) -> Epoch {
        self.bundle.statement.epoch
    }

    /// Bytes on the wire: length-prefixed payload followed by the bundle.
    pub fn wire_len(&self) -> usize {
        4 + self.payload.len() + self.bundle.wire_len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogLookup {
    New,
    /// Same nullifier and same `x`.
    Duplicate,
    /// Same nullifier, different `x`: the stored share.
    Conflict(RlnShare),
}

/// Shares seen per epoch and nullifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NullifierLog {
    retention: u64,
    epochs: BTreeMap<u64, HashMap<FieldElement, Vec<(FieldElement, FieldElement)>>>,
}

impl NullifierLog {
    pub fn new(retention: u64) -> Self {
        assert!(retention > 0, "log retention must keep the current epoch");
        NullifierLog {
            retention,
            epochs: BTreeMap::new(),
        }
    }

    pub fn lookup(&self, share: &RlnShare) -> LogLookup {
        let Some(points) = self
            .epochs
            .get(&share.epoch.0)
            .and_then(|by_nullifier| by_nullifier.get(&share.nullifier))
        else {
            return LogLookup::New;
        };
        if points.iter().any(|(x, _)| *x == share.x) {
            return LogLookup::Duplicate;
        }
        match points.first() {
            Some((x, y)) => LogLookup::Conflict(RlnShare {
                epoch: share.epoch,
                x: *x,
                y: *y,
                nullifier: share.nullifier,
            }),
            None => LogLookup::New,
        }
    }

    /// Records a share; returns false if this exact point was already stored.
    pub fn insert(&mut self, share: &RlnShare) -> bool {
        let points = self
            .epochs
            .entry(share.epoch.0)
            .or_default()
            .entry(share.nullifier)
            .or_default();
        if points.contains(&(share.x, share.y)) {
            return false;
        }
        points.push((share.x, share.y));
        true
    }

    /// Keeps the current epoch, the `retention - 1` before it, and anything newer.
    pub fn prune(&mut self, current: Epoch) {
        let oldest_kept = current.0.saturating_sub(self.retention - 1);
        self.epochs.retain(|epoch, _| *epoch >= oldest_kept);
    }

    pub fn epochs(&self) -> Vec<u64> {
        self.epochs.keys().copied().collect()
    }

    /// Stored shares across all epochs.
    pub fn len(&self) -> usize {
        self.epochs
            .values()
            .flat_map(|m| m.values())
            .map(Vec::len)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValidationVerdict {
    Relay,
    DropStale,
    DropFutureEpoch,
    DropInvalidProof,
    DropUnknownRoot,
    DropDuplicate,
    /// Carries the recovered publisher secret.
    Spam(FieldElement),
}

impl ValidationVerdict {
    pub fn name(&self) -> &'static str {
        match self {
            ValidationVerdict::Relay => "relay",
            ValidationVerdict::DropStale => "drop_stale",
            ValidationVerdict::DropFutureEpoch => "drop_future_epoch",
            ValidationVerdict::DropInvalidProof => "drop_invalid_proof",
            ValidationVerdict::DropUnknownRoot => "drop_unknown_root",
            ValidationVerdict::DropDuplicate => "drop_duplicate",
            ValidationVerdict::Spam(_) => "spam",
        }
    }

    pub const NAMES: [&'static str; 7] = [
        "relay",
        "drop_stale",
        "drop_future_epoch",
        "drop_invalid_proof",
        "drop_unknown_root",
        "drop_duplicate",
        "spam",
    ];
}

/// One line of the verdict log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub time: u64,
    pub node: NodeId,
    pub message_id: String,
    pub verdict: String,
    pub epoch: u64,
    pub nullifier: String,
}

impl VerdictRecord {
    pub fn new(time: u64, node: NodeId, msg: &RelayMessage, verdict: &ValidationVerdict) -> Self {
        VerdictRecord {
            time,
            node,
            message_id: msg.id().to_string(),
            verdict: verdict.name().to_string(),
            epoch: msg.epoch().0,
            nullifier: msg.statement().nullifier.to_decimal(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PublishError {
    #[error("node is not a registered member")]
    NotRegistered,
    #[error("already published in epoch {0}")]
    RateLimited(u64),
    #[error(transparent)]
    Prove(#[from] ProveError),
}

/// What happened to a message handed to [`RelayNode::receive`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    /// Message id already seen; not validated again.
    Suppressed,
    Validated(ValidationVerdict),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlashOutcome {
    Paid(SlashReceipt),
    /// Usually another detector got there first.
    NoOp(RegistryError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub published: u64,
    pub validations: u64,
    pub proof_verifications: u64,
    pub malformed_proofs: u64,
    pub unknown_backend: u64,
    pub suppressed: u64,
    pub verdicts: BTreeMap<String, u64>,
    pub slash_payout: u64,
    pub slash_noops: u64,
    pub log_high_water: usize,
}

#[derive(Debug, Clone)]
struct Membership {
    keypair: IdentityKeypair,
    leaf_index: u64,
}

/// Relay configuration shared by every node of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelayConfig {
    pub clock: NodeClock,
    pub log_retention: u64,
}

impl Default for RelayConfig {
    fn default() -> Self {
        RelayConfig {
            clock: NodeClock::default(),
            log_retention: DEFAULT_LOG_RETENTION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelayNode {
    id: NodeId,
    config: RelayConfig,
    membership: Option<Membership>,
    cached_root: Option<FieldElement>,
    cached_path: Option<MerklePath>,
    last_published: Option<Epoch>,
    log: NullifierLog,
    seen: HashSet<MessageId>,
    stats: NodeStats,
}

impl RelayNode {
    pub fn new(id: NodeId, config: RelayConfig) -> Self {
        RelayNode {
            id,
            config,
            membership: None,
            cached_root: None,
            cached_path: None,
            last_published: None,
            log: NullifierLog::new(config.log_retention),
            seen: HashSet::new(),
            stats: NodeStats::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn clock(&self) -> &NodeClock {
        &self.config.clock
    }

    pub fn current_epoch(&self, now: u64) -> Epoch {
        self.config.clock.epoch_at(now)
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn log(&self) -> &NullifierLog {
        &self.log
    }

    pub fn keypair(&self) -> Option<&IdentityKeypair> {
        self.membership.as_ref().map(|m| &m.keypair)
    }

    pub fn leaf_index(&self) -> Option<u64> {
        self.membership.as_ref().map(|m| m.leaf_index)
    }

    pub fn cached_root(&self) -> Option<FieldElement> {
        self.cached_root
    }

    /// Registers `keypair` with the registry and caches the resulting root.
    pub fn register(
        &mut self,
        keypair: IdentityKeypair,
        registry: &mut Registry,
    ) -> Result<u64, RegistryError> {
        let deposit = registry.config().required_deposit;
        let (leaf_index, _) = registry.register(keypair.commitment(), deposit, self.id)?;
        self.membership = Some(Membership {
            keypair,
            leaf_index,
        });
        self.refresh_root(registry);
        Ok(leaf_index)
    }

    /// Drops the identity after a voluntary withdrawal.
    pub fn withdraw(&mut self, registry: &mut Registry) -> Result<u64, RegistryError> {
        let secret = self
            .keypair()
            .map(IdentityKeypair::secret)
            .ok_or(RegistryError::NotActiveMember)?;
        let payout = registry.withdraw(secret)?;
        self.membership = None;
        self.cached_path = None;
        self.refresh_root(registry);
        Ok(payout)
    }

    /// Re-reads the group root (and this node's path) from the registry.
    pub fn refresh_root(&mut self, registry: &Registry) {
        self.cached_root = Some(registry.current_root());
        if let Some(m) = &self.membership {
            self.cached_path = registry.prove(m.leaf_index).ok();
        }
    }

    /// Builds a statement for `payload` in the current epoch from cached state.
    fn statement_for(
        &self,
        payload: &[u8],
        now: u64,
    ) -> Result<(RateLimitStatement, RateLimitWitness), PublishError> {
        let (Some(m), Some(root), Some(path)) =
            (&self.membership, self.cached_root, &self.cached_path)
        else {
            return Err(PublishError::NotRegistered);
        };
        let epoch = self.current_epoch(now);
        let share = make_share(m.keypair.secret(), epoch, payload);
        Ok((
            RateLimitStatement::new(root, &share),
            RateLimitWitness::for_member(m.keypair.secret(), path.clone()),
        ))
    }

    /// Publishes `payload` with a proof. `override_rate_limit` skips the local
    /// one-per-epoch guard (used to model spammers).
    pub fn publish(
        &mut self,
        payload: &[u8],
        now: u64,
        backend: &dyn ProofBackend,
        override_rate_limit: bool,
    ) -> Result<RelayMessage, PublishError> {
        let epoch = self.current_epoch(now);
        if !override_rate_limit && self.last_published == Some(epoch) {
            return Err(PublishError::RateLimited(epoch.0));
        }
        let (statement, witness) = self.statement_for(payload, now)?;
        let bundle = backend.prove(&statement, &witness)?;
        Ok(self.emit(payload, bundle, now))
    }

    /// Adversarial publish: packs the transparent witness without the
    /// prover-side check. Verifiers reject it whenever a relation fails.
    pub fn publish_unchecked(
        &mut self,
        payload: &[u8],
        now: u64,
    ) -> Result<RelayMessage, PublishError> {
        let (statement, witness) = self.statement_for(payload, now)?;
        let bundle = SimTransparentBackend::bundle_unchecked(&statement, &witness);
        Ok(self.emit(payload, bundle, now))
    }

    fn emit(&mut self, payload: &[u8], bundle: ProofBundle, now: u64) -> RelayMessage {
        let msg = RelayMessage::new(payload.to_vec(), bundle);
        self.prune_log(now);
        self.log.insert(&msg.share());
        self.stats.log_high_water = self.stats.log_high_water.max(self.log.len());
        self.seen.insert(msg.id());
        self.last_published = Some(msg.epoch());
        self.stats.published += 1;
        msg
    }

    /// Relay-once front door: suppresses message ids already seen.
    pub fn receive(
        &mut self,
        msg: &RelayMessage,
        now: u64,
        registry: &Registry,
        backend: &dyn ProofBackend,
    ) -> Reception {
        if !self.seen.insert(msg.id()) {
            self.stats.suppressed += 1;
            return Reception::Suppressed;
        }
        Reception::Validated(self.validate(msg, now, registry, backend))
    }

    /// Runs the validation pipeline. A `Relay` verdict records the share.
    pub fn validate(
        &mut self,
        msg: &RelayMessage,
        now: u64,
        registry: &Registry,
        backend: &dyn ProofBackend,
    ) -> ValidationVerdict {
        self.prune_log(now);
        let verdict = self.run_pipeline(msg, now, registry, backend);
        self.stats.validations += 1;
        *self
            .stats
            .verdicts
            .entry(verdict.name().to_string())
            .or_default() += 1;
        verdict
    }

    fn run_pipeline(
        &mut self,
        msg: &RelayMessage,
        now: u64,
        registry: &Registry,
        backend: &dyn ProofBackend,
    ) -> ValidationVerdict {
        let current = self.current_epoch(now).0;
        let msg_epoch = msg.epoch().0;
        let gap = self.config.clock.max_epoch_gap;
        if msg_epoch < current && current - msg_epoch > gap {
            return ValidationVerdict::DropStale;
        }
        if msg_epoch > current && msg_epoch - current > gap {
            return ValidationVerdict::DropFutureEpoch;
        }

        if !registry.is_known_root(&msg.statement().merkle_root) {
            return ValidationVerdict::DropUnknownRoot;
        }

        self.stats.proof_verifications += 1;
        match check_bundle(backend, msg.bundle()) {
            Ok(Verification::Valid) => {}
            Ok(Verification::Malformed) => {
                self.stats.malformed_proofs += 1;
                return ValidationVerdict::DropInvalidProof;
            }
            Ok(Verification::Failed(_)) => return ValidationVerdict::DropInvalidProof,
            Err(_) => {
                self.stats.unknown_backend += 1;
                return ValidationVerdict::DropInvalidProof;
            }
        }

        let share = msg.share();
        match self.log.lookup(&share) {
            LogLookup::Duplicate => ValidationVerdict::DropDuplicate,
            LogLookup::Conflict(stored) => match recover_secret(&stored, &share) {
                Ok(secret) => ValidationVerdict::Spam(secret),
                Err(_) => ValidationVerdict::DropDuplicate,
            },
            LogLookup::New => {
                self.log.insert(&share);
                self.stats.log_high_water = self.stats.log_high_water.max(self.log.len());
                ValidationVerdict::Relay
            }
        }
    }

    /// Claims the deposit behind a recovered secret. Losing the race to
    /// another detector is recorded as a no-op.
    pub fn on_spam(&mut self, recovered: FieldElement, registry: &mut Registry) -> SlashOutcome {
        match registry.slash(recovered, self.id) {
            Ok(receipt) => {
                self.stats.slash_payout += receipt.payout;
                self.refresh_root(registry);
                SlashOutcome::Paid(receipt)
            }
            Err(e) => {
                self.stats.slash_noops += 1;
                SlashOutcome::NoOp(e)
            }
        }
    }

    pub fn prune_log(&mut self, now: u64) {
        let current = self.current_epoch(now);
        self.log.prune(current);
    }
}

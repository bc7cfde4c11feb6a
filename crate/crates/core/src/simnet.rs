//! Seeded discrete-event simulation of a relay network.
//!
//! Time is an integer logical clock. Everything random (keys, topology,
//! latencies) flows from the scenario seed, so a scenario run twice yields
//! byte-identical outputs. One run is single-threaded; run scenarios in
//! parallel if you need throughput.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use serde::{Deserialize, Serialize};

use crate::field::{FieldElement, ModulusChoice};
use crate::proof::SimTransparentBackend;
use crate::registry::{LedgerEntry, NodeId, Registry, RegistryConfig};
use crate::relay::{
    NodeClock, PublishError, Reception, RelayConfig, RelayMessage, RelayNode, SlashOutcome,
    ValidationVerdict, VerdictRecord, DEFAULT_LOG_RETENTION,
};
use crate::rln::IdentityKeypair;

const MAX_TOPOLOGY_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario needs at least one node")]
    NoNodes,
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("epoch length must be positive")]
    ZeroEpochLength,
    #[error("log retention must cover the epoch gap (retention {retention}, gap {gap})")]
    RetentionTooShort { retention: u64, gap: u64 },
    #[error("actor node {0} out of range")]
    ActorOutOfRange(u32),
    #[error("node {0} listed twice")]
    DuplicateActor(u32),
    #[error("latency range min {0} > max {1}")]
    BadLatency(u64, u64),
    #[error("random-regular({degree}) impossible on {nodes} nodes")]
    RegularImpossible { nodes: usize, degree: usize },
    #[error("topology is disconnected")]
    Disconnected,
    #[error("tree depth {0} outside 1..=32 or too small for the members")]
    BadDepth(usize),
    #[error("registry event at {0} outside the run")]
    EventOutsideRun(u64),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("field too small for {0} distinct member commitments")]
    KeySpace(usize),
    #[error("genesis registration of node {0} failed: {1}")]
    Genesis(u32, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Complete,
    Ring,
    RandomRegular(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latency {
    Fixed(u64),
    Range { min: u64, max: u64 },
}

impl Latency {
    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match *self {
            Latency::Fixed(d) => d,
            Latency::Range { min, max } => rng.random_range(min..=max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// At most one message per scheduled epoch.
    Honest,
    /// Publishes `k` distinct payloads in each of `spam_epochs`, one otherwise.
    Spammer { k: usize, spam_epochs: Vec<u64> },
    /// Honest, with the node clock shifted by `offset` time units.
    LateClock { offset: i64 },
    /// Relays only; never registers.
    Router,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    EveryEpoch,
    Epochs(Vec<u64>),
}

impl Schedule {
    fn includes(&self, epoch: u64) -> bool {
        match self {
            Schedule::EveryEpoch => true,
            Schedule::Epochs(list) => list.contains(&epoch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub node: u32,
    pub behavior: Behavior,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub register_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub withdraw_at: Option<u64>,
}

impl ActorSpec {
    pub fn clock_offset(&self) -> i64 {
        match self.behavior {
            Behavior::LateClock { offset } => offset,
            _ => 0,
        }
    }

    pub fn is_member(&self) -> bool {
        !matches!(self.behavior, Behavior::Router)
    }

    pub fn is_adversarial(&self) -> bool {
        matches!(self.behavior, Behavior::Spammer { .. })
    }
}

fn default_epoch_length() -> u64 {
    crate::relay::DEFAULT_EPOCH_LENGTH
}

fn default_max_gap() -> u64 {
    crate::relay::DEFAULT_MAX_EPOCH_GAP
}

fn default_retention() -> u64 {
    DEFAULT_LOG_RETENTION
}

fn default_depth() -> usize {
    8
}

fn default_offset() -> u64 {
    1
}

/// Declarative description of one simulated network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub node_count: usize,
    pub topology: Topology,
    pub latency: Latency,
    #[serde(default = "default_epoch_length")]
    pub epoch_length: u64,
    #[serde(default = "default_max_gap")]
    pub max_epoch_gap: u64,
    #[serde(default = "default_retention")]
    pub log_retention: u64,
    pub duration: u64,
    #[serde(default)]
    pub modulus: ModulusChoice,
    #[serde(default = "default_depth")]
    pub tree_depth: usize,
    /// Offset into each local epoch at which actors publish.
    #[serde(default = "default_offset")]
    pub publish_offset: u64,
    pub actors: Vec<ActorSpec>,
}

pub const BUNDLED_SCENARIOS: [&str; 5] = [
    "honest-3",
    "spammer-basic",
    "spammer-race",
    "churn",
    "skewed-clock",
];

/// Scenarios shipped with the crate, by name.
pub fn bundled(name: &str) -> Option<Scenario> {
    let text = match name {
        "honest-3" => include_str!("../scenarios/honest-3.json"),
        "spammer-basic" => include_str!("../scenarios/spammer-basic.json"),
        "spammer-race" => include_str!("../scenarios/spammer-race.json"),
        "churn" => include_str!("../scenarios/churn.json"),
        "skewed-clock" => include_str!("../scenarios/skewed-clock.json"),
        _ => return None,
    };
    Some(Scenario::from_json(text).expect("bundled scenarios parse"))
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn epochs(&self) -> u64 {
        self.duration.checked_div(self.epoch_length).unwrap_or(0)
    }

    pub fn actor(&self, node: u32) -> Option<&ActorSpec> {
        self.actors.iter().find(|a| a.node == node)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.node_count == 0 {
            return Err(ScenarioError::NoNodes);
        }
        if self.duration == 0 {
            return Err(ScenarioError::ZeroDuration);
        }
        if self.epoch_length == 0 {
            return Err(ScenarioError::ZeroEpochLength);
        }
        if self.log_retention < self.max_epoch_gap + 1 {
            return Err(ScenarioError::RetentionTooShort {
                retention: self.log_retention,
                gap: self.max_epoch_gap,
            });
        }
        if let Latency::Range { min, max } = self.latency {
            if min > max {
                return Err(ScenarioError::BadLatency(min, max));
            }
        }
        let mut seen = HashSet::new();
        for a in &self.actors {
            if a.node as usize >= self.node_count {
                return Err(ScenarioError::ActorOutOfRange(a.node));
            }
            if !seen.insert(a.node) {
                return Err(ScenarioError::DuplicateActor(a.node));
            }
            for t in std::iter::once(a.register_at).chain(a.withdraw_at) {
                if t >= self.duration {
                    return Err(ScenarioError::EventOutsideRun(t));
                }
            }
        }
        let members = self.actors.iter().filter(|a| a.is_member()).count() as u64;
        if !(1..=crate::tree::MAX_DEPTH).contains(&self.tree_depth)
            || (self.tree_depth < 63 && members > 1u64 << self.tree_depth)
        {
            return Err(ScenarioError::BadDepth(self.tree_depth));
        }
        match self.topology {
            Topology::RandomRegular(d) => {
                let n = self.node_count;
                if n > 1 && (d == 0 || d >= n || !(n * d).is_multiple_of(2)) {
                    return Err(ScenarioError::RegularImpossible {
                        nodes: n,
                        degree: d,
                    });
                }
            }
            Topology::Complete | Topology::Ring => {}
        }
        Ok(())
    }
}

/// Neighbour lists, sorted.
pub fn build_topology(
    topology: Topology,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, ScenarioError> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    match topology {
        Topology::Complete => {
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        adj[i].insert(j);
                    }
                }
            }
        }
        Topology::Ring => {
            for i in 0..n {
                let j = (i + 1) % n;
                if i != j {
                    adj[i].insert(j);
                    adj[j].insert(i);
                }
            }
        }
        Topology::RandomRegular(d) => {
            if n == 1 {
                return Ok(vec![vec![]]);
            }
            if d == 0 || d >= n || !(n * d).is_multiple_of(2) {
                return Err(ScenarioError::RegularImpossible {
                    nodes: n,
                    degree: d,
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7070_7070);
            let mut found = None;
            for _ in 0..MAX_TOPOLOGY_ATTEMPTS {
                if let Some(g) = pair_stubs(n, d, &mut rng) {
                    if is_connected(&g) {
                        found = Some(g);
                        break;
                    }
                }
            }
            adj = found.ok_or(ScenarioError::Disconnected)?;
        }
    }
    let adj: Vec<Vec<usize>> = adj.into_iter().map(|s| s.into_iter().collect()).collect();
    if !is_connected_lists(&adj) {
        return Err(ScenarioError::Disconnected);
    }
    Ok(adj)
}

/// Configuration-model pairing; `None` on self-loops or parallel edges.
fn pair_stubs<R: Rng>(n: usize, d: usize, rng: &mut R) -> Option<Vec<BTreeSet<usize>>> {
    let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, d)).collect();
    stubs.shuffle(rng);
    let mut adj = vec![BTreeSet::new(); n];
    for pair in stubs.chunks(2) {
        let (a, b) = (pair[0], pair[1]);
        if a == b || !adj[a].insert(b) {
            return None;
        }
        adj[b].insert(a);
    }
    Some(adj)
}

fn is_connected(adj: &[BTreeSet<usize>]) -> bool {
    let lists: Vec<Vec<usize>> = adj.iter().map(|s| s.iter().copied().collect()).collect();
    is_connected_lists(&lists)
}

fn is_connected_lists(adj: &[Vec<usize>]) -> bool {
    if adj.is_empty() {
        return true;
    }
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Min-queue on `(time, insertion order)`.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    payloads: HashMap<u64, E>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            payloads: HashMap::new(),
            next_seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: u64, event: E) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse((time, seq)));
        self.payloads.insert(seq, event);
    }

    pub fn pop(&mut self) -> Option<(u64, E)> {
        let Reverse((time, seq)) = self.heap.pop()?;
        let event = self
            .payloads
            .remove(&seq)
            .expect("payload for every heap entry");
        Some((time, event))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// A publish an actor wants to perform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedPublish {
    pub payload: Vec<u8>,
    /// Set for every message beyond the first in an epoch.
    pub over_limit: bool,
}

/// What `actor` publishes at global `time`, judged by its own clock.
pub fn behavior_step(actor: &ActorSpec, time: u64, epoch_length: u64) -> Vec<PlannedPublish> {
    let clock = NodeClock {
        epoch_length,
        max_epoch_gap: 0,
        offset: actor.clock_offset(),
    };
    let epoch = clock.epoch_at(time).0;
    let payload = |i: usize| format!("node-{}/epoch-{}/msg-{}", actor.node, epoch, i).into_bytes();
    let count = match &actor.behavior {
        Behavior::Router => 0,
        Behavior::Spammer { k, spam_epochs } if spam_epochs.contains(&epoch) => *k,
        _ if actor.schedule.includes(epoch) => 1,
        _ => 0,
    };
    (0..count)
        .map(|i| PlannedPublish {
            payload: payload(i),
            over_limit: i > 0,
        })
        .collect()
}

#[derive(Debug, Clone)]
enum Event {
    Register(usize),
    Withdraw(usize),
    Tick(usize),
    Deliver {
        from: usize,
        to: usize,
        msg: usize,
        sent_at: u64,
    },
    RootNotice(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: NodeId,
    pub role: String,
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub published: u64,
    pub validations: u64,
    pub proof_verifications: u64,
    pub suppressed: u64,
    pub log_high_water: usize,
    pub slash_payout: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpamEventReport {
    pub offender: NodeId,
    pub epoch: u64,
    pub messages: usize,
    pub second_publish_time: u64,
    pub first_detection_time: Option<u64>,
    pub detected_by: Option<NodeId>,
    pub time_to_detection: Option<u64>,
    /// Longest publish-to-delivery delay observed for the later message.
    pub max_second_delivery_delay: Option<u64>,
    /// Some honest node received two of the conflicting messages.
    pub reached_common_honest_node: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlashReport {
    pub time: u64,
    pub detector: NodeId,
    pub offender: NodeId,
    pub payout: u64,
    pub offender_honest: bool,
    /// Secret reconstructed from the two conflicting shares, in decimal.
    pub recovered_secret: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub modulus: ModulusChoice,
    pub node_count: usize,
    pub epochs: u64,
    pub messages_published: u64,
    pub forged_publishes: u64,
    pub publish_failures: u64,
    /// Relay verdicts.
    pub messages_relayed: u64,
    pub messages_forwarded: u64,
    pub validations: u64,
    pub verdicts: BTreeMap<String, u64>,
    pub suppressed_duplicates: u64,
    pub proof_verifications: u64,
    pub malformed_proofs: u64,
    pub spam_messages_relayed_by_honest: u64,
    pub spam_events: Vec<SpamEventReport>,
    pub slashes: Vec<SlashReport>,
    pub slash_noops: u64,
    pub false_slashes: u64,
    pub total_payout: u64,
    pub ledger_balanced: bool,
    pub registry_updates: u64,
    pub nodes: Vec<NodeReport>,
    pub invariant_violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicationRecord {
    pub time: u64,
    pub node: NodeId,
    pub message_id: String,
    pub epoch: u64,
    pub forged: bool,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsReport,
    pub verdicts: Vec<VerdictRecord>,
    pub ledger: Vec<LedgerEntry>,
    pub publications: Vec<PublicationRecord>,
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("records serialize") + "\n")
        .collect()
}

impl RunOutput {
    pub fn metrics_json(&self) -> String {
        serde_json::to_string_pretty(&self.metrics).expect("metrics serialize") + "\n"
    }

    pub fn verdicts_jsonl(&self) -> String {
        jsonl(&self.verdicts)
    }

    pub fn ledger_jsonl(&self) -> String {
        jsonl(&self.ledger)
    }

    pub fn publications_jsonl(&self) -> String {
        jsonl(&self.publications)
    }

    /// Writes `metrics.json`, `verdicts.jsonl`, `ledger.jsonl` and
    /// `publications.jsonl` into `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.json"), self.metrics_json())?;
        fs::write(dir.join("verdicts.jsonl"), self.verdicts_jsonl())?;
        fs::write(dir.join("ledger.jsonl"), self.ledger_jsonl())?;
        fs::write(dir.join("publications.jsonl"), self.publications_jsonl())?;
        Ok(())
    }
}

struct Sim<'a> {
    scenario: &'a Scenario,
    adj: Vec<Vec<usize>>,
    nodes: Vec<RelayNode>,
    keys: Vec<Option<IdentityKeypair>>,
    registry: Registry,
    backend: SimTransparentBackend,
    queue: EventQueue<Event>,
    latency_rng: ChaCha8Rng,
    messages: Vec<RelayMessage>,
    publisher_of: Vec<usize>,
    publish_time: Vec<u64>,
    verdicts: Vec<VerdictRecord>,
    publications: Vec<PublicationRecord>,
    forged: u64,
    publish_failures: u64,
    forwarded: u64,
    sent: Vec<(u64, u64)>,
    /// (node, msg) -> delivery times, including suppressed copies.
    deliveries: HashMap<(usize, usize), u64>,
    /// First spam verdict per (offender secret, epoch).
    detections: HashMap<(FieldElement, u64), (u64, usize)>,
    relays_per_nullifier: HashMap<(usize, FieldElement, u64), u64>,
    slashes: Vec<SlashReport>,
}

/// Identity keys the scenario assigns to each node, `None` for non-members.
/// Keys are drawn in node order from the scenario seed; a key whose
/// commitment is already taken is redrawn (this only happens in tiny fields).
pub fn member_keys(scenario: &Scenario) -> Result<Vec<Option<IdentityKeypair>>, ScenarioError> {
    let modulus = scenario.modulus.modulus();
    let mut key_rng = ChaCha20Rng::seed_from_u64(scenario.seed);
    let mut taken = HashSet::new();
    let mut keys = Vec::with_capacity(scenario.node_count);
    for i in 0..scenario.node_count as u32 {
        if !scenario.actor(i).is_some_and(ActorSpec::is_member) {
            keys.push(None);
            continue;
        }
        let key = (0..1000)
            .map(|_| IdentityKeypair::generate_with(&mut key_rng, modulus))
            .find(|k| taken.insert(k.commitment()))
            .ok_or(ScenarioError::KeySpace(taken.len() + 1))?;
        keys.push(Some(key));
    }
    Ok(keys)
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    scenario.validate()?;
    let adj = build_topology(scenario.topology, scenario.node_count, scenario.seed)?;
    let modulus = scenario.modulus.modulus();
    let registry = Registry::new(RegistryConfig::new(scenario.tree_depth, modulus))
        .map_err(|_| ScenarioError::BadDepth(scenario.tree_depth))?;

    let keys = member_keys(scenario)?;
    let mut nodes = Vec::with_capacity(scenario.node_count);
    for i in 0..scenario.node_count {
        let actor = scenario.actor(i as u32);
        let clock = NodeClock {
            epoch_length: scenario.epoch_length,
            max_epoch_gap: scenario.max_epoch_gap,
            offset: actor.map_or(0, ActorSpec::clock_offset),
        };
        nodes.push(RelayNode::new(
            NodeId(i as u32),
            RelayConfig {
                clock,
                log_retention: scenario.log_retention,
            },
        ));
    }

    let mut sim = Sim {
        scenario,
        adj,
        nodes,
        keys,
        registry,
        backend: SimTransparentBackend,
        queue: EventQueue::new(),
        latency_rng: ChaCha8Rng::seed_from_u64(scenario.seed.wrapping_add(0x5eed)),
        messages: Vec::new(),
        publisher_of: Vec::new(),
        publish_time: Vec::new(),
        verdicts: Vec::new(),
        publications: Vec::new(),
        forged: 0,
        publish_failures: 0,
        forwarded: 0,
        sent: vec![(0, 0); scenario.node_count],
        deliveries: HashMap::new(),
        detections: HashMap::new(),
        relays_per_nullifier: HashMap::new(),
        slashes: Vec::new(),
    };
    sim.setup()?;
    sim.drain();
    Ok(sim.finish())
}

impl Sim<'_> {
    fn setup(&mut self) -> Result<(), ScenarioError> {
        let sc = self.scenario;
        // genesis members are known to everyone up front
        for actor in sc
            .actors
            .iter()
            .filter(|a| a.is_member() && a.register_at == 0)
        {
            let i = actor.node as usize;
            let key = self.keys[i].clone().expect("member key");
            self.nodes[i]
                .register(key, &mut self.registry)
                .map_err(|e| ScenarioError::Genesis(actor.node, e.to_string()))?;
        }
        for node in &mut self.nodes {
            node.refresh_root(&self.registry);
        }
        for actor in sc.actors.iter().filter(|a| a.is_member()) {
            let i = actor.node as usize;
            if actor.register_at > 0 {
                self.queue.push(actor.register_at, Event::Register(i));
            }
            if let Some(t) = actor.withdraw_at {
                self.queue.push(t, Event::Withdraw(i));
            }
        }
        let horizon = sc.epochs() * sc.epoch_length;
        for actor in sc.actors.iter().filter(|a| a.is_member()) {
            let i = actor.node as usize;
            for local_epoch in 0.. {
                let local = local_epoch * sc.epoch_length + sc.publish_offset;
                let global = local as i64 - actor.clock_offset();
                if global >= horizon as i64 {
                    break;
                }
                if global >= 0 {
                    self.queue.push(global as u64, Event::Tick(i));
                }
            }
        }
        Ok(())
    }

    fn drain(&mut self) {
        while let Some((time, event)) = self.queue.pop() {
            match event {
                Event::Register(i) => {
                    let key = self.keys[i].clone().expect("member key");
                    if self.nodes[i].register(key, &mut self.registry).is_ok() {
                        self.broadcast_notice(time);
                    }
                }
                Event::Withdraw(i) => {
                    if self.nodes[i].withdraw(&mut self.registry).is_ok() {
                        self.broadcast_notice(time);
                    }
                }
                Event::Tick(i) => self.tick(i, time),
                Event::Deliver {
                    from,
                    to,
                    msg,
                    sent_at,
                } => self.deliver(from, to, msg, sent_at, time),
                Event::RootNotice(i) => self.nodes[i].refresh_root(&self.registry),
            }
        }
    }

    fn broadcast_notice(&mut self, now: u64) {
        for i in 0..self.nodes.len() {
            let delay = self.scenario.latency.sample(&mut self.latency_rng);
            self.queue.push(now + delay, Event::RootNotice(i));
        }
    }

    fn tick(&mut self, i: usize, now: u64) {
        let actor = self
            .scenario
            .actor(i as u32)
            .expect("ticks only for actors");
        let adversarial = actor.is_adversarial();
        for plan in behavior_step(actor, now, self.scenario.epoch_length) {
            let node = &mut self.nodes[i];
            let result = node.publish(&plan.payload, now, &self.backend, plan.over_limit);
            let (msg, forged) = match result {
                Ok(msg) => (msg, false),
                Err(PublishError::Prove(_)) if adversarial => {
                    match node.publish_unchecked(&plan.payload, now) {
                        Ok(msg) => (msg, true),
                        Err(_) => {
                            self.publish_failures += 1;
                            continue;
                        }
                    }
                }
                Err(_) => {
                    self.publish_failures += 1;
                    continue;
                }
            };
            self.forged += forged as u64;
            let idx = self.messages.len();
            self.publications.push(PublicationRecord {
                time: now,
                node: NodeId(i as u32),
                message_id: msg.id().to_string(),
                epoch: msg.epoch().0,
                forged,
            });
            self.messages.push(msg);
            self.publisher_of.push(i);
            self.publish_time.push(now);
            self.send_to_neighbours(i, None, idx, now);
        }
    }

    fn send_to_neighbours(&mut self, from: usize, except: Option<usize>, msg: usize, now: u64) {
        let size = self.messages[msg].wire_len() as u64;
        for k in 0..self.adj[from].len() {
            let to = self.adj[from][k];
            if Some(to) == except {
                continue;
            }
            let delay = self.scenario.latency.sample(&mut self.latency_rng);
            self.sent[from].0 += 1;
            self.sent[from].1 += size;
            self.queue.push(
                now + delay,
                Event::Deliver {
                    from,
                    to,
                    msg,
                    sent_at: now,
                },
            );
        }
    }

    fn is_honest(&self, node: usize) -> bool {
        self.scenario
            .actor(node as u32)
            .is_none_or(|a| !a.is_adversarial())
    }

    fn deliver(&mut self, from: usize, to: usize, msg_idx: usize, _sent_at: u64, now: u64) {
        self.deliveries.entry((to, msg_idx)).or_insert(now);
        let msg = &self.messages[msg_idx];
        let reception = self.nodes[to].receive(msg, now, &self.registry, &self.backend);
        let Reception::Validated(verdict) = reception else {
            return;
        };
        self.verdicts
            .push(VerdictRecord::new(now, NodeId(to as u32), msg, &verdict));
        match verdict {
            ValidationVerdict::Relay => {
                let st = msg.statement();
                *self
                    .relays_per_nullifier
                    .entry((to, st.nullifier, st.epoch.0))
                    .or_default() += 1;
                self.forwarded += self.adj[to].iter().filter(|n| **n != from).count() as u64;
                self.send_to_neighbours(to, Some(from), msg_idx, now);
            }
            ValidationVerdict::Spam(secret) => {
                self.detections
                    .entry((secret, msg.epoch().0))
                    .or_insert((now, to));
                if let SlashOutcome::Paid(receipt) =
                    self.nodes[to].on_spam(secret, &mut self.registry)
                {
                    let offender = receipt.offender.0 as usize;
                    self.slashes.push(SlashReport {
                        time: now,
                        detector: NodeId(to as u32),
                        offender: receipt.offender,
                        payout: receipt.payout,
                        offender_honest: self.is_honest(offender),
                        recovered_secret: secret.to_decimal(),
                    });
                    self.broadcast_notice(now);
                }
            }
            _ => {}
        }
    }

    fn spam_events(&self) -> Vec<SpamEventReport> {
        let mut by_epoch: BTreeMap<(usize, u64), Vec<usize>> = BTreeMap::new();
        for (idx, msg) in self.messages.iter().enumerate() {
            by_epoch
                .entry((self.publisher_of[idx], msg.epoch().0))
                .or_default()
                .push(idx);
        }
        let mut out = Vec::new();
        for ((node, epoch), msgs) in by_epoch {
            if msgs.len() < 2 {
                continue;
            }
            let second = msgs[1];
            let second_time = self.publish_time[second];
            let detection = self.keys[node]
                .as_ref()
                .and_then(|k| self.detections.get(&(k.secret(), epoch)));
            let max_delay = (0..self.nodes.len())
                .filter_map(|n| self.deliveries.get(&(n, second)))
                .map(|t| t - second_time)
                .max();
            let reached_common = (0..self.nodes.len())
                .filter(|n| self.is_honest(*n))
                .any(|n| {
                    msgs.iter()
                        .filter(|m| self.deliveries.contains_key(&(n, **m)))
                        .count()
                        >= 2
                });
            out.push(SpamEventReport {
                offender: NodeId(node as u32),
                epoch,
                messages: msgs.len(),
                second_publish_time: second_time,
                first_detection_time: detection.map(|d| d.0),
                detected_by: detection.map(|d| NodeId(d.1 as u32)),
                time_to_detection: detection.map(|d| d.0.saturating_sub(second_time)),
                max_second_delivery_delay: max_delay,
                reached_common_honest_node: reached_common,
            });
        }
        out
    }

    fn finish(self) -> RunOutput {
        let sc = self.scenario;
        let mut verdicts: BTreeMap<String, u64> = ValidationVerdict::NAMES
            .iter()
            .map(|n| (n.to_string(), 0))
            .collect();
        let mut validations = 0;
        let mut proof_verifications = 0;
        let mut malformed = 0;
        let mut suppressed = 0;
        let mut slash_noops = 0;
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let s = node.stats();
            for (k, v) in &s.verdicts {
                *verdicts.entry(k.clone()).or_default() += v;
            }
            validations += s.validations;
            proof_verifications += s.proof_verifications;
            malformed += s.malformed_proofs;
            suppressed += s.suppressed;
            slash_noops += s.slash_noops;
            let role = match sc.actor(i as u32).map(|a| &a.behavior) {
                None | Some(Behavior::Router) => "router",
                Some(Behavior::Honest) => "honest",
                Some(Behavior::Spammer { .. }) => "spammer",
                Some(Behavior::LateClock { .. }) => "late_clock",
            };
            nodes.push(NodeReport {
                node: node.id(),
                role: role.to_string(),
                messages_sent: self.sent[i].0,
                bytes_sent: self.sent[i].1,
                published: s.published,
                validations: s.validations,
                proof_verifications: s.proof_verifications,
                suppressed: s.suppressed,
                log_high_water: s.log_high_water,
                slash_payout: s.slash_payout,
            });
        }
        let spam_relayed = self
            .relays_per_nullifier
            .iter()
            .filter(|((node, _, _), _)| self.is_honest(*node))
            .map(|(_, count)| count.saturating_sub(1))
            .sum();
        let spam_events = self.spam_events();
        let false_slashes = self.slashes.iter().filter(|s| s.offender_honest).count() as u64;
        let ledger_balanced = self.registry.is_balanced();

        let mut violations = Vec::new();
        if false_slashes > 0 {
            violations.push(format!("{false_slashes} honest member(s) slashed"));
        }
        if spam_relayed > 0 {
            violations.push(format!(
                "honest nodes relayed {spam_relayed} conflicting share(s)"
            ));
        }
        if !ledger_balanced {
            violations.push("ledger balance not conserved".to_string());
        }
        if validations != verdicts.values().sum::<u64>() {
            violations.push("verdict counts do not sum to validations".to_string());
        }
        for ev in &spam_events {
            if ev.reached_common_honest_node && ev.first_detection_time.is_none() {
                violations.push(format!(
                    "spam by {} in epoch {} reached a common honest node undetected",
                    ev.offender, ev.epoch
                ));
            }
        }

        let metrics = MetricsReport {
            scenario: sc.name.clone(),
            seed: sc.seed,
            modulus: sc.modulus,
            node_count: sc.node_count,
            epochs: sc.epochs(),
            messages_published: self.messages.len() as u64,
            forged_publishes: self.forged,
            publish_failures: self.publish_failures,
            messages_relayed: verdicts["relay"],
            messages_forwarded: self.forwarded,
            validations,
            verdicts,
            suppressed_duplicates: suppressed,
            proof_verifications,
            malformed_proofs: malformed,
            spam_messages_relayed_by_honest: spam_relayed,
            spam_events,
            slashes: self.slashes,
            slash_noops,
            false_slashes,
            total_payout: self.registry.total_paid_out(),
            ledger_balanced,
            registry_updates: self.registry.sequence(),
            nodes,
            invariant_violations: violations,
        };
        RunOutput {
            metrics,
            verdicts: self.verdicts,
            ledger: self.registry.ledger().to_vec(),
            publications: self.publications,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn honest(node: u32) -> ActorSpec {
        ActorSpec {
            node,
            behavior: Behavior::Honest,
            schedule: Schedule::EveryEpoch,
            register_at: 0,
            withdraw_at: None,
        }
    }

    fn base(n: usize, topology: Topology, actors: Vec<ActorSpec>) -> Scenario {
        Scenario {
            name: "t".into(),
            seed: 1,
            node_count: n,
            topology,
            latency: Latency::Fixed(2),
            epoch_length: 10,
            max_epoch_gap: 1,
            log_retention: 2,
            duration: 50,
            modulus: ModulusChoice::P61,
            tree_depth: 8,
            publish_offset: 1,
            actors,
        }
    }

    #[test]
    fn queue_orders_by_time_then_insertion() {
        let mut q = EventQueue::new();
        q.push(5, "a");
        q.push(3, "b");
        q.push(5, "c");
        q.push(3, "d");
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).collect();
        assert_eq!(order, vec![(3, "b"), (3, "d"), (5, "a"), (5, "c")]);
        assert!(q.is_empty());
    }

    #[test]
    fn behavior_steps() {
        let h = honest(0);
        let total: usize = (0..5)
            .map(|e| behavior_step(&h, e * 10 + 1, 10).len())
            .sum();
        assert_eq!(total, 5);
        let spammer = ActorSpec {
            behavior: Behavior::Spammer {
                k: 3,
                spam_epochs: vec![2],
            },
            ..honest(1)
        };
        let plans = behavior_step(&spammer, 21, 10);
        assert_eq!(plans.len(), 3);
        assert_eq!(plans.iter().filter(|p| p.over_limit).count(), 2);
        assert_eq!(behavior_step(&spammer, 31, 10).len(), 1);
        let router = ActorSpec {
            behavior: Behavior::Router,
            ..honest(2)
        };
        assert!(behavior_step(&router, 1, 10).is_empty());
        let sparse = ActorSpec {
            schedule: Schedule::Epochs(vec![1]),
            ..honest(3)
        };
        assert!(behavior_step(&sparse, 1, 10).is_empty());
        assert_eq!(behavior_step(&sparse, 11, 10).len(), 1);
    }

    #[test]
    fn three_node_hand_count() {
        let sc = base(3, Topology::Complete, vec![honest(0)]);
        let out = run(&sc).unwrap();
        let m = &out.metrics;
        assert_eq!(m.messages_published, 5);
        assert_eq!(m.messages_relayed, 5 * 2);
        // node 1 and 2 forward to each other; those copies are suppressed
        assert_eq!(m.suppressed_duplicates, 5 * 2);
        assert_eq!(m.validations, m.verdicts.values().sum::<u64>());
        assert!(m.invariant_violations.is_empty());
    }

    #[test]
    fn short_run_is_empty() {
        let mut sc = base(3, Topology::Complete, vec![honest(0)]);
        sc.duration = 9;
        let m = run(&sc).unwrap().metrics;
        assert_eq!(m.messages_published, 0);
        assert_eq!(m.validations, 0);
        assert!(m.verdicts.values().all(|v| *v == 0));
    }

    #[test]
    fn delivery_latency() {
        let mut sc = base(2, Topology::Complete, vec![honest(0)]);
        sc.publish_offset = 5;
        sc.duration = 10;
        let out = run(&sc).unwrap();
        assert_eq!(out.verdicts.len(), 1);
        assert_eq!(out.verdicts[0].time, 7);
    }

    #[test]
    fn ring_flood_takes_shorter_arc() {
        let sc = base(5, Topology::Ring, vec![honest(0)]);
        let out = run(&Scenario { duration: 10, ..sc }).unwrap();
        let mut first: BTreeMap<u32, u64> = BTreeMap::new();
        for v in &out.verdicts {
            first.entry(v.node.0).or_insert(v.time);
        }
        // published at t=1; nodes 1 and 4 are one hop away, 2 and 3 two hops
        assert_eq!(first, BTreeMap::from([(1, 3), (2, 5), (3, 5), (4, 3)]));
        assert_eq!(out.metrics.messages_relayed, 4);
    }

    #[test]
    fn topologies() {
        let ring = build_topology(Topology::Ring, 5, 0).unwrap();
        assert_eq!(ring[0], vec![1, 4]);
        let complete = build_topology(Topology::Complete, 4, 0).unwrap();
        assert!(complete.iter().all(|n| n.len() == 3));
        for seed in 0..10 {
            let g = build_topology(Topology::RandomRegular(3), 10, seed).unwrap();
            assert!(g.iter().all(|n| n.len() == 3));
            assert!(is_connected_lists(&g));
        }
        assert_eq!(
            build_topology(Topology::RandomRegular(3), 5, 0),
            Err(ScenarioError::RegularImpossible {
                nodes: 5,
                degree: 3
            })
        );
        assert_eq!(
            build_topology(Topology::RandomRegular(1), 4, 0),
            Err(ScenarioError::Disconnected)
        );
    }

    #[test]
    fn invalid_scenarios() {
        let mut sc = base(3, Topology::Complete, vec![honest(3)]);
        assert_eq!(run(&sc).unwrap_err(), ScenarioError::ActorOutOfRange(3));
        sc.actors = vec![honest(0), honest(0)];
        assert_eq!(run(&sc).unwrap_err(), ScenarioError::DuplicateActor(0));
        sc.actors = vec![honest(0)];
        sc.duration = 0;
        assert_eq!(run(&sc).unwrap_err(), ScenarioError::ZeroDuration);
        sc.duration = 10;
        sc.log_retention = 1;
        assert!(matches!(
            run(&sc),
            Err(ScenarioError::RetentionTooShort { .. })
        ));
    }

    #[test]
    fn spammer_is_caught_once() {
        let spammer = ActorSpec {
            behavior: Behavior::Spammer {
                k: 2,
                spam_epochs: vec![0],
            },
            ..honest(0)
        };
        let sc = base(4, Topology::Complete, vec![spammer, honest(1), honest(2)]);
        let out = run(&sc).unwrap();
        let m = &out.metrics;
        assert_eq!(m.slashes.len(), 1);
        assert_eq!(m.false_slashes, 0);
        assert_eq!(m.total_payout, 1000);
        assert_eq!(m.spam_messages_relayed_by_honest, 0);
        assert_eq!(m.spam_events.len(), 1);
        assert_eq!(m.spam_events[0].time_to_detection, Some(2));
        assert!(
            m.invariant_violations.is_empty(),
            "{:?}",
            m.invariant_violations
        );
    }

    #[test]
    fn late_clock_beyond_gap_is_rejected() {
        let late = ActorSpec {
            behavior: Behavior::LateClock { offset: -25 },
            ..honest(0)
        };
        let mut sc = base(3, Topology::Complete, vec![late]);
        sc.duration = 100;
        let out = run(&sc).unwrap();
        assert!(out.metrics.messages_published > 0);
        assert_eq!(out.metrics.messages_relayed, 0);
        assert!(out.verdicts.iter().all(|v| v.verdict == "drop_stale"));

        let early = ActorSpec {
            behavior: Behavior::LateClock { offset: 25 },
            ..honest(0)
        };
        sc.actors = vec![early];
        let out = run(&sc).unwrap();
        assert!(!out.verdicts.is_empty());
        assert!(out
            .verdicts
            .iter()
            .all(|v| v.verdict == "drop_future_epoch"));
    }

    #[test]
    fn scenario_json_shape() {
        let json = r#"{
            "seed": 3, "node_count": 4, "topology": {"random_regular": 2},
            "latency": {"range": {"min": 1, "max": 3}}, "duration": 40,
            "actors": [
                {"node": 0, "behavior": {"spammer": {"k": 2, "spam_epochs": [1]}}},
                {"node": 1, "behavior": {"late_clock": {"offset": -4}}, "schedule": {"epochs": [0, 2]}},
                {"node": 2, "behavior": "router"}
            ]
        }"#;
        let sc = Scenario::from_json(json).unwrap();
        assert_eq!(sc.epoch_length, 10);
        assert_eq!(sc.topology, Topology::RandomRegular(2));
        assert_eq!(sc.modulus, ModulusChoice::Default);
        sc.validate().unwrap();
        assert!(Scenario::from_json("{").is_err());
    }
}

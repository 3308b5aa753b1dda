//! Iterated three-step binary Byzantine agreement with supermajority halting
//! and a common coin.
//!
//! Each step is one bus round, so iteration `k` occupies rounds `3k-2..=3k`.
//! An operator that halts broadcasts a signed halt certificate in the next
//! round and then goes quiet; peers count its certificate bit in every later
//! tally.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

use crate::authsim::{AuthError, CanonicalEncoder, CommonCoin, KeyRegistry, SigningKey, Tag};
use crate::model::{operators, quorum, NetworkParams, OperatorId, ParamsError};
use crate::netsim::{
    run_until_done, Adversary, AdversaryStrategy, AdversaryView, Behavior, BusError, Envelope,
    Inbox, Participant, RoundBus, Slot, WireMessage,
};

pub const DEFAULT_ITERATION_CAP: u32 = 64;

/// Step within an iteration, 1 to 3.
pub type Step = u8;

/// Iteration and step of a bus round.
pub fn position(round: u32) -> (u32, Step) {
    let r = round.max(1) - 1;
    (r / 3 + 1, (r % 3 + 1) as Step)
}

fn halt_payload(instance: u64, bit: bool) -> Vec<u8> {
    CanonicalEncoder::new("bba-halt")
        .u64(instance)
        .u8(bit as u8)
        .finish()
}

/// Signed evidence that `signer` halted on `bit`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaltCertificate {
    pub instance: u64,
    pub bit: bool,
    pub signer: OperatorId,
    pub tag: Tag,
}

impl HaltCertificate {
    pub fn sign(key: &SigningKey, instance: u64, bit: bool) -> Self {
        HaltCertificate {
            instance,
            bit,
            signer: key.id(),
            tag: key.sign(&halt_payload(instance, bit)),
        }
    }

    pub fn verify(&self, registry: &KeyRegistry) -> Result<(), AuthError> {
        registry.verify_tag(
            self.signer,
            &halt_payload(self.instance, self.bit),
            &self.tag,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BinaryMsg {
    Step {
        instance: u64,
        iteration: u32,
        step: Step,
        bit: bool,
    },
    Halt(HaltCertificate),
}

impl WireMessage for BinaryMsg {
    fn kind(&self) -> &'static str {
        match self {
            BinaryMsg::Step { .. } => "bba-step",
            BinaryMsg::Halt(_) => "bba-halt",
        }
    }

    fn encode(&self) -> Vec<u8> {
        match self {
            BinaryMsg::Step {
                instance,
                iteration,
                step,
                bit,
            } => CanonicalEncoder::new("bba-step")
                .u64(*instance)
                .u32(*iteration)
                .u8(*step)
                .u8(*bit as u8)
                .finish(),
            BinaryMsg::Halt(cert) => CanonicalEncoder::new("bba-cert")
                .u64(cert.instance)
                .u8(cert.bit as u8)
                .operator(cert.signer)
                .bytes(cert.tag.as_bytes())
                .finish(),
        }
    }
}

/// Counts of zeros and ones received in one step. Always sums to `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub zeros: usize,
    pub ones: usize,
}

impl Tally {
    pub fn of(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut t = Tally::default();
        for b in bits {
            if b {
                t.ones += 1;
            } else {
                t.zeros += 1;
            }
        }
        t
    }

    pub fn count(&self, bit: bool) -> usize {
        if bit {
            self.ones
        } else {
            self.zeros
        }
    }

    pub fn total(&self) -> usize {
        self.zeros + self.ones
    }
}

/// Outcome of one step's clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Halt(bool),
    Set(bool),
    /// Take the common coin and return to step 1.
    Coin,
}

/// The clause of `step` that fires for `tally`, with supermajority
/// `threshold` (`2f + 1` when `N = 3f + 1`).
pub fn apply_clause(step: Step, tally: Tally, threshold: usize) -> Action {
    let zeros = tally.zeros >= threshold;
    let ones = tally.ones >= threshold;
    match step {
        1 if zeros => Action::Halt(false),
        1 if ones => Action::Set(true),
        1 => Action::Set(false),
        2 if ones => Action::Halt(true),
        2 if zeros => Action::Set(false),
        2 => Action::Set(true),
        3 if zeros => Action::Set(false),
        3 if ones => Action::Set(true),
        3 => Action::Coin,
        _ => panic!("step must be 1, 2 or 3, got {step}"),
    }
}

/// One processed step at one operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub round: u32,
    pub iteration: u32,
    pub step: Step,
    pub tally: Tally,
    pub action: Action,
    /// `b_i` after the step.
    pub bit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HaltPoint {
    pub round: u32,
    pub iteration: u32,
    pub step: Step,
    pub bit: bool,
}

/// Per-operator state machine for one binary instance.
#[derive(Debug, Clone)]
pub struct BinaryNode {
    id: OperatorId,
    n: usize,
    threshold: usize,
    instance: u64,
    key: SigningKey,
    registry: KeyRegistry,
    coin: CommonCoin,
    iteration_cap: u32,
    bit: bool,
    halted: Option<HaltPoint>,
    cert_sent: bool,
    exhausted: bool,
    peer_halts: BTreeMap<OperatorId, bool>,
    history: Vec<StepRecord>,
}

impl BinaryNode {
    pub fn new(
        params: &NetworkParams,
        registry: &KeyRegistry,
        instance: u64,
        id: OperatorId,
        input: bool,
        coin: CommonCoin,
    ) -> Result<Self, AuthError> {
        Ok(BinaryNode {
            id,
            n: params.n,
            threshold: params.quorum(),
            instance,
            key: registry.signing_key(id)?,
            registry: registry.clone(),
            coin,
            iteration_cap: DEFAULT_ITERATION_CAP,
            bit: input,
            halted: None,
            cert_sent: false,
            exhausted: false,
            peer_halts: BTreeMap::new(),
            history: Vec::new(),
        })
    }

    pub fn with_iteration_cap(mut self, cap: u32) -> Self {
        self.iteration_cap = cap;
        self
    }

    pub fn bit(&self) -> bool {
        self.bit
    }

    pub fn output(&self) -> Option<bool> {
        self.halted.map(|h| h.bit)
    }

    pub fn halted(&self) -> Option<HaltPoint> {
        self.halted
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    fn tally(&mut self, iteration: u32, step: Step, inbox: &Inbox<BinaryMsg>) -> Tally {
        for (sender, msg) in inbox.messages() {
            if let BinaryMsg::Halt(cert) = msg {
                if cert.signer == sender
                    && cert.instance == self.instance
                    && cert.verify(&self.registry).is_ok()
                {
                    self.peer_halts.entry(sender).or_insert(cert.bit);
                }
            }
        }
        Tally::of(operators(self.n).map(|j| {
            if let Some(&bit) = self.peer_halts.get(&j) {
                return bit;
            }
            match inbox.slot(j) {
                Slot::Received(BinaryMsg::Step {
                    instance,
                    iteration: it,
                    step: st,
                    bit,
                }) if *instance == self.instance && *it == iteration && *st == step => *bit,
                _ => false,
            }
        }))
    }
}

impl Participant for BinaryNode {
    type Msg = BinaryMsg;

    fn id(&self) -> OperatorId {
        self.id
    }

    fn is_done(&self) -> bool {
        self.cert_sent || self.exhausted
    }

    fn outgoing(&mut self, round: u32) -> Vec<Envelope<BinaryMsg>> {
        if self.is_done() {
            return Vec::new();
        }
        if let Some(h) = self.halted {
            self.cert_sent = true;
            let cert = HaltCertificate::sign(&self.key, self.instance, h.bit);
            return vec![Envelope::broadcast(self.id, BinaryMsg::Halt(cert))];
        }
        let (iteration, step) = position(round);
        vec![Envelope::broadcast(
            self.id,
            BinaryMsg::Step {
                instance: self.instance,
                iteration,
                step,
                bit: self.bit,
            },
        )]
    }

    fn incoming(&mut self, round: u32, inbox: &Inbox<BinaryMsg>) {
        if self.halted.is_some() || self.exhausted {
            return;
        }
        let (iteration, step) = position(round);
        let tally = self.tally(iteration, step, inbox);
        let action = apply_clause(step, tally, self.threshold);
        match action {
            Action::Halt(b) => {
                self.bit = b;
                self.halted = Some(HaltPoint {
                    round,
                    iteration,
                    step,
                    bit: b,
                });
            }
            Action::Set(b) => self.bit = b,
            Action::Coin => self.bit = self.coin.flip_for(self.id, self.instance, iteration as u64),
        }
        self.history.push(StepRecord {
            round,
            iteration,
            step,
            tally,
            action,
            bit: self.bit,
        });
        if step == 3 && iteration >= self.iteration_cap && self.halted.is_none() {
            self.exhausted = true;
        }
    }
}

/// Byzantine behavior library for binary agreement.
#[derive(Debug, Clone)]
pub struct BinaryAdversary {
    strategy: AdversaryStrategy,
    registry: KeyRegistry,
    instance: u64,
    threshold: usize,
}

impl BinaryAdversary {
    pub fn new(
        strategy: AdversaryStrategy,
        registry: KeyRegistry,
        instance: u64,
        n: usize,
        f: usize,
    ) -> Self {
        BinaryAdversary {
            strategy,
            registry,
            instance,
            threshold: quorum(n, f),
        }
    }

    fn step_msg(&self, round: u32, bit: bool) -> BinaryMsg {
        let (iteration, step) = position(round);
        BinaryMsg::Step {
            instance: self.instance,
            iteration,
            step,
            bit,
        }
    }

    fn cert(&self, from: OperatorId, bit: bool) -> BinaryMsg {
        let key = self
            .registry
            .signing_key(from)
            .expect("controlled ids are validated");
        BinaryMsg::Halt(HaltCertificate::sign(&key, self.instance, bit))
    }

    /// Bit sent to the lower half of receivers by a split attack: the value
    /// that honest votes alone cannot push over the threshold but the
    /// adversary can.
    fn boundary_bit(&self, honest: &[Envelope<BinaryMsg>], f: usize) -> bool {
        let bits = honest.iter().map(|e| match &e.msg {
            BinaryMsg::Step { bit, .. } => *bit,
            BinaryMsg::Halt(c) => c.bit,
        });
        let t = Tally::of(bits);
        let reachable = |b: bool| t.count(b) < self.threshold && t.count(b) + f >= self.threshold;
        if reachable(true) && !reachable(false) {
            true
        } else if reachable(false) {
            false
        } else {
            t.ones < t.zeros
        }
    }
}

impl Adversary<BinaryMsg> for BinaryAdversary {
    fn controls(&self, id: OperatorId, round: u32) -> bool {
        self.strategy.controls(id, round)
    }

    fn act(&mut self, view: AdversaryView<'_, BinaryMsg>) -> Vec<Envelope<BinaryMsg>> {
        let round = view.round;
        let n = view.n;
        let controlled: Vec<OperatorId> = operators(n)
            .filter(|id| self.controls(*id, round))
            .collect();
        let mut out = Vec::new();
        match self.strategy.behavior {
            Behavior::Crash => {}
            Behavior::BadProposer => out.extend(view.shadow.iter().cloned()),
            Behavior::ValueLiar => {
                for env in view.shadow {
                    let msg = match &env.msg {
                        BinaryMsg::Step { bit, .. } => self.step_msg(round, !bit),
                        BinaryMsg::Halt(c) => self.cert(env.from, !c.bit),
                    };
                    out.push(Envelope { msg, ..env.clone() });
                }
            }
            Behavior::RandomValues => {
                for &c in &controlled {
                    for to in operators(n) {
                        let bit = view.rng.random_bool(0.5);
                        let msg = if view.rng.random_bool(0.05) {
                            self.cert(c, bit)
                        } else {
                            self.step_msg(round, bit)
                        };
                        out.push(Envelope::direct(c, to, msg));
                    }
                }
            }
            Behavior::Equivocate | Behavior::BoundaryAttacker => {
                let low = if self.strategy.behavior == Behavior::Equivocate {
                    false
                } else {
                    self.boundary_bit(view.honest, controlled.len())
                };
                let (iteration, step) = position(round);
                for &c in &controlled {
                    for to in operators(n) {
                        let bit = if to.index() < n / 2 { low } else { !low };
                        // From the second iteration on, equivocate with
                        // conflicting halt certificates as well.
                        let msg = if self.strategy.behavior == Behavior::Equivocate
                            && iteration >= 2
                            && step == 1
                        {
                            self.cert(c, bit)
                        } else {
                            self.step_msg(round, bit)
                        };
                        out.push(Envelope::direct(c, to, msg));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BinaryError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("expected {expected} initial bits, got {got}")]
    Inputs { expected: usize, got: usize },
    #[error("no decision within {0} iterations")]
    IterationCap(u32),
}

/// Everything needed to run one binary instance.
#[derive(Debug, Clone)]
pub struct BinaryConfig {
    pub params: NetworkParams,
    pub instance: u64,
    /// Initial bit per operator, Byzantine slots included (their state
    /// machines run as the adversary's shadow).
    pub inputs: Vec<bool>,
    pub strategy: AdversaryStrategy,
    pub coin: CommonCoin,
    pub key_seed: u64,
    pub bus_seed: u64,
    pub iteration_cap: u32,
    pub frame: Option<usize>,
}

impl BinaryConfig {
    pub fn new(params: NetworkParams, inputs: Vec<bool>, seed: u64) -> Self {
        BinaryConfig {
            params,
            instance: 0,
            inputs,
            strategy: AdversaryStrategy::honest(),
            coin: CommonCoin::new(seed),
            key_seed: seed,
            bus_seed: seed,
            iteration_cap: DEFAULT_ITERATION_CAP,
            frame: None,
        }
    }

    pub fn with_strategy(mut self, strategy: AdversaryStrategy) -> Self {
        self.strategy = strategy;
        self
    }
}

#[derive(Debug, Clone)]
pub struct BinaryOutcome {
    pub honest: BTreeSet<OperatorId>,
    /// Decided bit per operator; Byzantine slots report their shadow.
    pub outputs: Vec<Option<bool>>,
    pub halts: Vec<Option<HaltPoint>>,
    pub histories: Vec<Vec<StepRecord>>,
    pub rounds: u32,
    pub bus: RoundBus<BinaryMsg>,
}

impl BinaryOutcome {
    pub fn honest_outputs(&self) -> impl Iterator<Item = bool> + '_ {
        self.honest
            .iter()
            .map(|id| self.outputs[id.index()].expect("honest operators decide"))
    }

    /// The common honest output, if all honest operators agree.
    pub fn agreed(&self) -> Option<bool> {
        let mut it = self.honest_outputs();
        let first = it.next()?;
        it.all(|b| b == first).then_some(first)
    }

    /// Iteration in which the last honest operator halted.
    pub fn iterations(&self) -> u32 {
        self.honest
            .iter()
            .filter_map(|id| self.halts[id.index()].map(|h| h.iteration))
            .max()
            .unwrap_or(0)
    }

    /// Honest `b_i` values after `round`, for operators still running.
    pub fn honest_bits_after(&self, round: u32) -> Vec<bool> {
        self.honest
            .iter()
            .filter_map(|id| {
                self.histories[id.index()]
                    .iter()
                    .find(|r| r.round == round)
                    .map(|r| r.bit)
            })
            .collect()
    }
}

pub fn run_binary_ba(cfg: &BinaryConfig) -> Result<BinaryOutcome, BinaryError> {
    let p = cfg.params;
    p.validate()?;
    if cfg.inputs.len() != p.n {
        return Err(BinaryError::Inputs {
            expected: p.n,
            got: cfg.inputs.len(),
        });
    }
    cfg.strategy.validate(p.n, p.f)?;
    let registry = KeyRegistry::new(p.n, cfg.key_seed);
    let mut nodes = operators(p.n)
        .map(|id| {
            BinaryNode::new(
                &p,
                &registry,
                cfg.instance,
                id,
                cfg.inputs[id.index()],
                cfg.coin,
            )
            .map(|n| n.with_iteration_cap(cfg.iteration_cap))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut adversary =
        BinaryAdversary::new(cfg.strategy.clone(), registry, cfg.instance, p.n, p.f);
    let mut bus = RoundBus::new(p.n, cfg.bus_seed);
    if let Some(frame) = cfg.frame {
        bus = bus.with_frame(frame);
    }
    let honest: BTreeSet<OperatorId> = operators(p.n)
        .filter(|id| cfg.strategy.is_honest(*id))
        .collect();
    let max_rounds = 3 * cfg.iteration_cap + 1;
    let rounds = run_until_done(&mut bus, &mut nodes, &mut adversary, &honest, max_rounds)?;
    if honest.iter().any(|id| nodes[id.index()].output().is_none()) {
        return Err(BinaryError::IterationCap(cfg.iteration_cap));
    }
    Ok(BinaryOutcome {
        honest,
        outputs: nodes.iter().map(BinaryNode::output).collect(),
        halts: nodes.iter().map(BinaryNode::halted).collect(),
        histories: nodes.iter().map(|n| n.history().to_vec()).collect(),
        rounds,
        bus,
    })
}

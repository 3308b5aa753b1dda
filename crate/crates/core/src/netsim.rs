//! Synchronous lockstep message bus with Byzantine injection and per-operator
//! byte accounting.
//!
//! Every round, each participant emits its messages, the adversary replaces
//! the traffic of the operators it controls, and everything is delivered
//! before the next round starts. Links are authenticated: an envelope's
//! `from` is checked against who actually produced it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{operators, OperatorId};

/// A protocol message with a canonical wire encoding.
pub trait WireMessage: Clone + fmt::Debug {
    /// Short label for transcripts.
    fn kind(&self) -> &'static str;

    fn encode(&self) -> Vec<u8>;

    fn encoded_len(&self) -> usize {
        self.encode().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    /// Every operator, the sender included.
    All,
    Only(OperatorId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<M> {
    pub from: OperatorId,
    pub to: Recipient,
    pub msg: M,
}

impl<M> Envelope<M> {
    pub fn broadcast(from: OperatorId, msg: M) -> Self {
        Envelope {
            from,
            to: Recipient::All,
            msg,
        }
    }

    pub fn direct(from: OperatorId, to: OperatorId, msg: M) -> Self {
        Envelope {
            from,
            to: Recipient::Only(to),
            msg,
        }
    }

    pub fn reaches(&self, receiver: OperatorId) -> bool {
        match self.to {
            Recipient::All => true,
            Recipient::Only(id) => id == receiver,
        }
    }
}

/// What a receiver got from one sender in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot<T> {
    /// Nothing arrived; protocols apply their default-value rule.
    Absent,
    Received(T),
}

impl<T> Slot<T> {
    pub fn received(self) -> Option<T> {
        match self {
            Slot::Absent => None,
            Slot::Received(v) => Some(v),
        }
    }
}

/// Messages delivered to one receiver in one round, grouped by sender in
/// arrival order.
#[derive(Debug, Clone)]
pub struct Inbox<M> {
    receiver: OperatorId,
    by_sender: BTreeMap<OperatorId, Vec<M>>,
}

impl<M> Inbox<M> {
    pub fn new(receiver: OperatorId) -> Self {
        Inbox {
            receiver,
            by_sender: BTreeMap::new(),
        }
    }

    pub fn receiver(&self) -> OperatorId {
        self.receiver
    }

    pub fn push(&mut self, sender: OperatorId, msg: M) {
        self.by_sender.entry(sender).or_default().push(msg);
    }

    /// First message from `sender`, or the absent marker.
    pub fn slot(&self, sender: OperatorId) -> Slot<&M> {
        match self.by_sender.get(&sender).and_then(|v| v.first()) {
            Some(m) => Slot::Received(m),
            None => Slot::Absent,
        }
    }

    pub fn from_sender(&self, sender: OperatorId) -> &[M] {
        self.by_sender.get(&sender).map_or(&[], Vec::as_slice)
    }

    pub fn messages(&self) -> impl Iterator<Item = (OperatorId, &M)> {
        self.by_sender
            .iter()
            .flat_map(|(s, msgs)| msgs.iter().map(move |m| (*s, m)))
    }

    pub fn senders(&self) -> impl Iterator<Item = OperatorId> + '_ {
        self.by_sender.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.by_sender.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A protocol state machine driven by the bus.
pub trait Participant {
    type Msg: WireMessage;

    fn id(&self) -> OperatorId;

    /// True once the participant has nothing more to send.
    fn is_done(&self) -> bool;

    fn outgoing(&mut self, round: u32) -> Vec<Envelope<Self::Msg>>;

    fn incoming(&mut self, round: u32, inbox: &Inbox<Self::Msg>);
}

/// Which operators an adversary controls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Controlled {
    Static(BTreeSet<OperatorId>),
    /// Round `r` controls `per_round` consecutive members of `pool`, starting
    /// at position `(r - 1) * per_round`, wrapping around.
    Rotating {
        pool: Vec<OperatorId>,
        per_round: usize,
    },
}

impl Controlled {
    pub fn none() -> Self {
        Controlled::Static(BTreeSet::new())
    }

    pub fn fixed(ids: impl IntoIterator<Item = OperatorId>) -> Self {
        Controlled::Static(ids.into_iter().collect())
    }

    /// The last `count` operators of an `n`-operator network.
    pub fn last(n: usize, count: usize) -> Self {
        Controlled::fixed(operators(n).skip(n - count))
    }

    pub fn contains(&self, id: OperatorId, round: u32) -> bool {
        match self {
            Controlled::Static(ids) => ids.contains(&id),
            Controlled::Rotating { pool, per_round } => {
                if pool.is_empty() {
                    return false;
                }
                let start = (round.max(1) as usize - 1) * per_round;
                (0..*per_round).any(|j| pool[(start + j) % pool.len()] == id)
            }
        }
    }

    /// Operators that are Byzantine for the whole run.
    pub fn permanent(&self) -> BTreeSet<OperatorId> {
        match self {
            Controlled::Static(ids) => ids.clone(),
            Controlled::Rotating { .. } => BTreeSet::new(),
        }
    }

    pub fn max_at_once(&self) -> usize {
        match self {
            Controlled::Static(ids) => ids.len(),
            Controlled::Rotating { pool, per_round } => (*per_round).min(pool.len()),
        }
    }

    pub fn is_rotating(&self) -> bool {
        matches!(self, Controlled::Rotating { .. })
    }
}

/// Byzantine behaviors in the strategy library. Each protocol module decides
/// what a behavior means for its own messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Behavior {
    /// Sends nothing.
    Crash,
    /// Sends conflicting content to different halves of the network.
    Equivocate,
    /// Sends fresh random content to every recipient.
    RandomValues,
    /// Injects values right at the honest decision boundary.
    BoundaryAttacker,
    /// Follows agreement honestly, misbehaves when proposing to the ledger.
    BadProposer,
    /// Follows the protocol but reports a consistently wrong value.
    ValueLiar,
}

impl Behavior {
    pub const ALL: [Behavior; 6] = [
        Behavior::Crash,
        Behavior::Equivocate,
        Behavior::RandomValues,
        Behavior::BoundaryAttacker,
        Behavior::BadProposer,
        Behavior::ValueLiar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Behavior::Crash => "crash",
            Behavior::Equivocate => "equivocate",
            Behavior::RandomValues => "random-values",
            Behavior::BoundaryAttacker => "boundary-attacker",
            Behavior::BadProposer => "bad-proposer",
            Behavior::ValueLiar => "value-liar",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Behavior::ALL.into_iter().find(|b| b.name() == s)
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Adversary configuration shared by all protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryStrategy {
    pub controlled: Controlled,
    pub behavior: Behavior,
    /// Offset added by value liars and bad proposers.
    pub lie_offset: f64,
    /// Reference point of the boundary attack (e.g. `R_th` or the ground truth).
    pub boundary: f64,
    /// Half-width of the ambiguous band around `boundary`.
    pub boundary_width: f64,
}

impl AdversaryStrategy {
    pub fn honest() -> Self {
        AdversaryStrategy::new(Controlled::none(), Behavior::Crash)
    }

    pub fn new(controlled: Controlled, behavior: Behavior) -> Self {
        AdversaryStrategy {
            controlled,
            behavior,
            lie_offset: 1.0e6,
            boundary: 0.0,
            boundary_width: 1.0,
        }
    }

    pub fn with_lie_offset(mut self, offset: f64) -> Self {
        self.lie_offset = offset;
        self
    }

    pub fn with_boundary(mut self, boundary: f64, width: f64) -> Self {
        self.boundary = boundary;
        self.boundary_width = width;
        self
    }

    pub fn validate(&self, n: usize, f: usize) -> Result<(), BusError> {
        let at_once = self.controlled.max_at_once();
        if at_once > f {
            return Err(BusError::TooManyByzantine {
                controlled: at_once,
                f,
            });
        }
        let ids: Vec<OperatorId> = match &self.controlled {
            Controlled::Static(ids) => ids.iter().copied().collect(),
            Controlled::Rotating { pool, .. } => pool.clone(),
        };
        match ids.into_iter().find(|id| id.0 == 0 || id.0 as usize > n) {
            Some(id) => Err(BusError::UnknownOperator(id)),
            None => Ok(()),
        }
    }

    pub fn controls(&self, id: OperatorId, round: u32) -> bool {
        self.controlled.contains(id, round)
    }

    /// True if `id` is honest for the entire run.
    pub fn is_honest(&self, id: OperatorId) -> bool {
        !self.controlled.permanent().contains(&id)
    }
}

/// What the adversary sees before choosing its round-`round` traffic. The
/// adversary is rushing: it sees honest messages of the current round.
pub struct AdversaryView<'a, M> {
    pub round: u32,
    pub n: usize,
    pub honest: &'a [Envelope<M>],
    /// What the controlled operators' own state machines would have sent.
    pub shadow: &'a [Envelope<M>],
    pub rng: &'a mut ChaCha8Rng,
}

pub trait Adversary<M> {
    fn controls(&self, id: OperatorId, round: u32) -> bool;

    /// Envelopes sent on behalf of controlled operators this round.
    fn act(&mut self, view: AdversaryView<'_, M>) -> Vec<Envelope<M>>;
}

/// Controls nobody.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoAdversary;

impl<M> Adversary<M> for NoAdversary {
    fn controls(&self, _id: OperatorId, _round: u32) -> bool {
        false
    }

    fn act(&mut self, _view: AdversaryView<'_, M>) -> Vec<Envelope<M>> {
        Vec::new()
    }
}

/// Silences the controlled operators.
#[derive(Debug, Clone)]
pub struct CrashAdversary(pub Controlled);

impl<M> Adversary<M> for CrashAdversary {
    fn controls(&self, id: OperatorId, round: u32) -> bool {
        self.0.contains(id, round)
    }

    fn act(&mut self, _view: AdversaryView<'_, M>) -> Vec<Envelope<M>> {
        Vec::new()
    }
}

/// Controls operators but forwards their honest traffic unchanged.
#[derive(Debug, Clone)]
pub struct PassthroughAdversary(pub Controlled);

impl<M: Clone> Adversary<M> for PassthroughAdversary {
    fn controls(&self, id: OperatorId, round: u32) -> bool {
        self.0.contains(id, round)
    }

    fn act(&mut self, view: AdversaryView<'_, M>) -> Vec<Envelope<M>> {
        view.shadow.to_vec()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("operator {id} emitted a message in round {round} after finishing")]
    EmitAfterDone { id: OperatorId, round: u32 },
    #[error("participant {actual} tried to send as {claimed}")]
    SpoofedSender {
        claimed: OperatorId,
        actual: OperatorId,
    },
    #[error("adversary sent as {0}, which it does not control this round")]
    UncontrolledSender(OperatorId),
    #[error("unknown operator {0}")]
    UnknownOperator(OperatorId),
    #[error("adversary controls {controlled} operators at once, f = {f}")]
    TooManyByzantine { controlled: usize, f: usize },
    #[error("bus expects {expected} participants in id order, got {got}")]
    Participants { expected: usize, got: usize },
    #[error("run did not finish within {0} rounds")]
    RoundLimit(u32),
}

/// One delivery in the transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptRecord {
    pub round: u32,
    pub sender: OperatorId,
    pub receiver: OperatorId,
    pub kind: &'static str,
    pub bytes: usize,
}

/// Per-receiver inboxes of one round, indexed by operator position.
#[derive(Debug, Clone)]
pub struct Delivered<M> {
    pub round: u32,
    pub inboxes: Vec<Inbox<M>>,
}

impl<M> Delivered<M> {
    pub fn inbox(&self, id: OperatorId) -> &Inbox<M> {
        &self.inboxes[id.index()]
    }
}

/// Lockstep round bus.
///
/// Byte counters count every delivery to a different operator: the sender is
/// charged for sending and the receiver for receiving. Self-deliveries are
/// local and free. When a frame size is set, each message is charged as a
/// whole number of fixed-size frames.
#[derive(Debug, Clone)]
pub struct RoundBus<M> {
    n: usize,
    round: u32,
    frame: Option<usize>,
    sent: Vec<u64>,
    received: Vec<u64>,
    transcript: Vec<TranscriptRecord>,
    rng: ChaCha8Rng,
    _msg: std::marker::PhantomData<M>,
}

impl<M: WireMessage> RoundBus<M> {
    pub fn new(n: usize, seed: u64) -> Self {
        RoundBus {
            n,
            round: 0,
            frame: None,
            sent: vec![0; n],
            received: vec![0; n],
            transcript: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            _msg: std::marker::PhantomData,
        }
    }

    /// Pads every message to a multiple of `frame` bytes in the accounting.
    pub fn with_frame(mut self, frame: usize) -> Self {
        assert!(frame > 0, "frame size must be positive");
        self.frame = Some(frame);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of completed rounds.
    pub fn round(&self) -> u32 {
        self.round
    }

    fn charged_len(&self, len: usize) -> usize {
        match self.frame {
            Some(frame) => len.div_ceil(frame).max(1) * frame,
            None => len,
        }
    }

    /// Delivers `envelopes` as round `round + 1` without any participant
    /// bookkeeping. Most callers want [`RoundBus::run_round`].
    pub fn deliver(&mut self, envelopes: &[Envelope<M>]) -> Result<Delivered<M>, BusError> {
        self.round += 1;
        let round = self.round;
        let mut inboxes: Vec<Inbox<M>> = operators(self.n).map(Inbox::new).collect();
        for env in envelopes {
            if env.from.0 == 0 || env.from.index() >= self.n {
                return Err(BusError::UnknownOperator(env.from));
            }
            let bytes = self.charged_len(env.msg.encoded_len());
            let receivers: Vec<OperatorId> = match env.to {
                Recipient::All => operators(self.n).collect(),
                Recipient::Only(id) => {
                    if id.0 == 0 || id.index() >= self.n {
                        return Err(BusError::UnknownOperator(id));
                    }
                    vec![id]
                }
            };
            for receiver in receivers {
                inboxes[receiver.index()].push(env.from, env.msg.clone());
                if receiver != env.from {
                    self.sent[env.from.index()] += bytes as u64;
                    self.received[receiver.index()] += bytes as u64;
                }
                self.transcript.push(TranscriptRecord {
                    round,
                    sender: env.from,
                    receiver,
                    kind: env.msg.kind(),
                    bytes,
                });
            }
        }
        Ok(Delivered { round, inboxes })
    }

    /// Runs one synchronous round. `participants` must hold all `N` state
    /// machines in id order. Controlled operators' state machines still run
    /// (their output becomes the adversary's shadow) and still receive.
    pub fn run_round<P>(
        &mut self,
        participants: &mut [P],
        adversary: &mut dyn Adversary<M>,
    ) -> Result<Delivered<M>, BusError>
    where
        P: Participant<Msg = M>,
    {
        if participants.len() != self.n
            || participants
                .iter()
                .enumerate()
                .any(|(i, p)| p.id() != OperatorId::from_index(i))
        {
            return Err(BusError::Participants {
                expected: self.n,
                got: participants.len(),
            });
        }
        let round = self.round + 1;
        let mut honest = Vec::new();
        let mut shadow = Vec::new();
        for p in participants.iter_mut() {
            let id = p.id();
            let finished = p.is_done();
            let out = p.outgoing(round);
            if finished && !out.is_empty() {
                return Err(BusError::EmitAfterDone { id, round });
            }
            if let Some(bad) = out.iter().find(|e| e.from != id) {
                return Err(BusError::SpoofedSender {
                    claimed: bad.from,
                    actual: id,
                });
            }
            if adversary.controls(id, round) {
                shadow.extend(out);
            } else {
                honest.extend(out);
            }
        }
        let forged = adversary.act(AdversaryView {
            round,
            n: self.n,
            honest: &honest,
            shadow: &shadow,
            rng: &mut self.rng,
        });
        if let Some(bad) = forged.iter().find(|e| !adversary.controls(e.from, round)) {
            return Err(BusError::UncontrolledSender(bad.from));
        }
        honest.extend(forged);
        let delivered = self.deliver(&honest)?;
        for p in participants.iter_mut() {
            p.incoming(round, delivered.inbox(p.id()));
        }
        Ok(delivered)
    }

    /// Bytes `op` put on the wire.
    pub fn bytes_sent(&self, op: OperatorId) -> u64 {
        self.sent.get(op.index()).copied().unwrap_or(0)
    }

    /// Bytes delivered to `op` from other operators.
    pub fn bytes_received(&self, op: OperatorId) -> u64 {
        self.received.get(op.index()).copied().unwrap_or(0)
    }

    /// Total bytes sent plus received by `op`.
    pub fn bytes_exchanged(&self, op: OperatorId) -> u64 {
        self.bytes_sent(op) + self.bytes_received(op)
    }

    pub fn transcript(&self) -> &[TranscriptRecord] {
        &self.transcript
    }

    /// `round,sender,receiver,kind,bytes` rows with a header line.
    pub fn transcript_csv(&self) -> String {
        let mut out = String::from("round,sender,receiver,kind,bytes\n");
        for r in &self.transcript {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.round, r.sender, r.receiver, r.kind, r.bytes
            );
        }
        out
    }
}

/// Runs rounds until every operator in `watch` reports done.
pub fn run_until_done<P>(
    bus: &mut RoundBus<P::Msg>,
    participants: &mut [P],
    adversary: &mut dyn Adversary<P::Msg>,
    watch: &BTreeSet<OperatorId>,
    max_rounds: u32,
) -> Result<u32, BusError>
where
    P: Participant,
{
    let start = bus.round();
    while watch.iter().any(|id| !participants[id.index()].is_done()) {
        if bus.round() - start >= max_rounds {
            return Err(BusError::RoundLimit(max_rounds));
        }
        bus.run_round(participants, adversary)?;
    }
    Ok(bus.round() - start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[derive(Debug, Clone, PartialEq)]
    struct Bit(bool);

    impl WireMessage for Bit {
        fn kind(&self) -> &'static str {
            "bit"
        }
        fn encode(&self) -> Vec<u8> {
            vec![self.0 as u8]
        }
    }

    #[derive(Debug, Clone)]
    struct Frame(usize);

    impl WireMessage for Frame {
        fn kind(&self) -> &'static str {
            "frame"
        }
        fn encode(&self) -> Vec<u8> {
            vec![0; self.0]
        }
    }

    /// Broadcasts its bit for a fixed number of rounds.
    struct Beacon {
        id: OperatorId,
        bit: bool,
        rounds_left: u32,
        seen: Vec<usize>,
    }

    impl Participant for Beacon {
        type Msg = Bit;
        fn id(&self) -> OperatorId {
            self.id
        }
        fn is_done(&self) -> bool {
            self.rounds_left == 0
        }
        fn outgoing(&mut self, _round: u32) -> Vec<Envelope<Bit>> {
            if self.rounds_left == 0 {
                return vec![];
            }
            self.rounds_left -= 1;
            vec![Envelope::broadcast(self.id, Bit(self.bit))]
        }
        fn incoming(&mut self, _round: u32, inbox: &Inbox<Bit>) {
            self.seen.push(inbox.len());
        }
    }

    fn beacons(n: usize, rounds: u32) -> Vec<Beacon> {
        operators(n)
            .map(|id| Beacon {
                id,
                bit: true,
                rounds_left: rounds,
                seen: vec![],
            })
            .collect()
    }

    struct SplitEquivocator(OperatorId);

    impl Adversary<Bit> for SplitEquivocator {
        fn controls(&self, id: OperatorId, _round: u32) -> bool {
            id == self.0
        }
        fn act(&mut self, view: AdversaryView<'_, Bit>) -> Vec<Envelope<Bit>> {
            operators(view.n)
                .map(|to| Envelope::direct(self.0, to, Bit(to.index() < view.n / 2)))
                .collect()
        }
    }

    struct Chatty;

    impl Participant for Chatty {
        type Msg = Bit;
        fn id(&self) -> OperatorId {
            OperatorId(1)
        }
        fn is_done(&self) -> bool {
            true
        }
        fn outgoing(&mut self, _round: u32) -> Vec<Envelope<Bit>> {
            vec![Envelope::broadcast(OperatorId(1), Bit(false))]
        }
        fn incoming(&mut self, _round: u32, _inbox: &Inbox<Bit>) {}
    }

    #[test]
    fn full_mesh_delivery() {
        let mut bus = RoundBus::new(4, 1);
        let mut ps = beacons(4, 1);
        let delivered = bus.run_round(&mut ps, &mut NoAdversary).unwrap();
        for inbox in &delivered.inboxes {
            assert_eq!(inbox.len(), 4);
            assert!(inbox.messages().all(|(_, m)| m.0));
        }
        assert_eq!(bus.round(), 1);
    }

    #[test]
    fn crash_sender_is_absent() {
        let mut bus = RoundBus::new(4, 1);
        let mut ps = beacons(4, 1);
        let mut adv = CrashAdversary(Controlled::fixed([OperatorId(3)]));
        let delivered = bus.run_round(&mut ps, &mut adv).unwrap();
        for inbox in &delivered.inboxes {
            assert_eq!(inbox.slot(OperatorId(3)), Slot::Absent);
            assert_eq!(inbox.len(), 3);
        }
    }

    #[test]
    fn equivocator_inboxes_differ_only_on_that_sender() {
        let mut bus = RoundBus::new(4, 1);
        let mut ps = beacons(4, 1);
        let delivered = bus
            .run_round(&mut ps, &mut SplitEquivocator(OperatorId(4)))
            .unwrap();
        let view = |i: usize| -> BTreeMap<OperatorId, bool> {
            delivered.inboxes[i]
                .messages()
                .map(|(s, m)| (s, m.0))
                .collect()
        };
        for i in 0..4 {
            for j in 0..4 {
                let (a, b) = (view(i), view(j));
                let differing: Vec<OperatorId> =
                    a.keys().filter(|k| a[k] != b[k]).copied().collect();
                let expected = if (i < 2) == (j < 2) {
                    vec![]
                } else {
                    vec![OperatorId(4)]
                };
                assert_eq!(differing, expected, "inboxes {i} vs {j}");
            }
        }
    }

    #[test]
    fn emit_after_done_is_flagged() {
        let mut bus = RoundBus::new(1, 0);
        let err = bus.run_round(&mut [Chatty], &mut NoAdversary).unwrap_err();
        assert_eq!(
            err,
            BusError::EmitAfterDone {
                id: OperatorId(1),
                round: 1
            }
        );
    }

    #[test]
    fn adversary_cannot_speak_for_honest() {
        struct Impostor;
        impl Adversary<Bit> for Impostor {
            fn controls(&self, id: OperatorId, _round: u32) -> bool {
                id == OperatorId(4)
            }
            fn act(&mut self, _view: AdversaryView<'_, Bit>) -> Vec<Envelope<Bit>> {
                vec![Envelope::broadcast(OperatorId(1), Bit(false))]
            }
        }
        let mut bus = RoundBus::new(4, 0);
        let err = bus
            .run_round(&mut beacons(4, 1), &mut Impostor)
            .unwrap_err();
        assert_eq!(err, BusError::UncontrolledSender(OperatorId(1)));
    }

    #[test]
    fn no_messages_no_bytes() {
        let bus: RoundBus<Bit> = RoundBus::new(4, 0);
        assert!(operators(4).all(|id| bus.bytes_exchanged(id) == 0));
    }

    #[test]
    fn broadcast_to_four_peers_charges_sender() {
        let mut bus = RoundBus::new(5, 0);
        bus.deliver(&[Envelope::broadcast(OperatorId(1), Frame(200))])
            .unwrap();
        assert_eq!(bus.bytes_sent(OperatorId(1)), 800);
        assert_eq!(bus.bytes_received(OperatorId(1)), 0);
        assert_eq!(bus.bytes_received(OperatorId(2)), 200);
        assert_eq!(bus.bytes_exchanged(OperatorId(2)), 200);
    }

    #[test]
    fn frame_padding_rounds_up() {
        let mut bus = RoundBus::new(2, 0).with_frame(200);
        bus.deliver(&[
            Envelope::direct(OperatorId(1), OperatorId(2), Frame(13)),
            Envelope::direct(OperatorId(1), OperatorId(2), Frame(201)),
        ])
        .unwrap();
        assert_eq!(bus.bytes_sent(OperatorId(1)), 600);
    }

    #[test]
    fn byte_counters_match_transcript() {
        let mut bus = RoundBus::new(4, 3);
        let mut ps = beacons(4, 3);
        let watch = operators(4).collect();
        run_until_done(
            &mut bus,
            &mut ps,
            &mut SplitEquivocator(OperatorId(2)),
            &watch,
            10,
        )
        .unwrap();
        for id in operators(4) {
            let sent: u64 = bus
                .transcript()
                .iter()
                .filter(|r| r.sender == id && r.receiver != id)
                .map(|r| r.bytes as u64)
                .sum();
            assert_eq!(sent, bus.bytes_sent(id));
        }
        assert!(bus
            .transcript_csv()
            .starts_with("round,sender,receiver,kind,bytes\n1,1,1,bit,1\n"));
    }

    #[test]
    fn hundred_instance_message_volume() {
        // 5 operators, 100 instances, 10 rounds, one 200-byte frame broadcast
        // per operator per round.
        struct Flood {
            id: OperatorId,
            left: u32,
        }
        impl Participant for Flood {
            type Msg = Frame;
            fn id(&self) -> OperatorId {
                self.id
            }
            fn is_done(&self) -> bool {
                self.left == 0
            }
            fn outgoing(&mut self, _round: u32) -> Vec<Envelope<Frame>> {
                self.left -= 1;
                vec![Envelope::broadcast(self.id, Frame(48))]
            }
            fn incoming(&mut self, _round: u32, _inbox: &Inbox<Frame>) {}
        }
        let mut bus = RoundBus::new(5, 0).with_frame(200);
        let watch: BTreeSet<_> = operators(5).collect();
        for _ in 0..100 {
            let mut ps: Vec<Flood> = operators(5).map(|id| Flood { id, left: 10 }).collect();
            run_until_done(&mut bus, &mut ps, &mut NoAdversary, &watch, 10).unwrap();
        }
        for id in operators(5) {
            assert_eq!(bus.bytes_sent(id), 800_000);
            assert_eq!(bus.bytes_received(id), 800_000);
        }
    }

    #[test]
    fn rotating_control_moves_each_round() {
        let c = Controlled::Rotating {
            pool: operators(4).collect(),
            per_round: 1,
        };
        let controlled: Vec<u32> = (1..=5)
            .map(|r| operators(4).find(|id| c.contains(*id, r)).unwrap().0)
            .collect();
        assert_eq!(controlled, vec![1, 2, 3, 4, 1]);
        assert!(c.permanent().is_empty());
    }

    #[test]
    fn strategy_validation() {
        let s = AdversaryStrategy::new(Controlled::last(4, 2), Behavior::Crash);
        assert_eq!(
            s.validate(4, 1),
            Err(BusError::TooManyByzantine {
                controlled: 2,
                f: 1
            })
        );
        let s = AdversaryStrategy::new(Controlled::fixed([OperatorId(9)]), Behavior::Crash);
        assert_eq!(
            s.validate(4, 1),
            Err(BusError::UnknownOperator(OperatorId(9)))
        );
        assert_eq!(Behavior::parse("value-liar"), Some(Behavior::ValueLiar));
    }

    #[test]
    fn transcript_is_deterministic() {
        struct Noisy(OperatorId);
        impl Adversary<Bit> for Noisy {
            fn controls(&self, id: OperatorId, _round: u32) -> bool {
                id == self.0
            }
            fn act(&mut self, view: AdversaryView<'_, Bit>) -> Vec<Envelope<Bit>> {
                let n = view.n;
                operators(n)
                    .filter(|_| view.rng.random_bool(0.5))
                    .map(|to| Envelope::direct(self.0, to, Bit(true)))
                    .collect()
            }
        }
        let run = |seed| {
            let mut bus = RoundBus::new(4, seed);
            let mut ps = beacons(4, 5);
            let watch = operators(4).collect();
            run_until_done(&mut bus, &mut ps, &mut Noisy(OperatorId(1)), &watch, 10).unwrap();
            bus.transcript_csv()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }
}

//! Exact multi-valued agreement: every operator reliably broadcasts its value
//! with a signed relay protocol of `f + 1` rounds, so all honest operators end
//! up with the same view vector, and a deterministic aggregate of that vector
//! is the agreed value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::approx_ba::{u_f, ApproxError};
use crate::authsim::{
    AuthError, CanonicalDecoder, CanonicalEncoder, KeyRegistry, SignedMessage, SigningKey,
};
use crate::model::{operators, NetworkParams, OperatorId, ParamsError};
use crate::netsim::{
    run_until_done, Adversary, AdversaryStrategy, AdversaryView, Behavior, BusError, Envelope,
    Inbox, Participant, RoundBus, WireMessage,
};

pub fn value_payload(instance: u64, origin: OperatorId, value: f64) -> Vec<u8> {
    CanonicalEncoder::new("ds-value")
        .u64(instance)
        .operator(origin)
        .f64(value)
        .finish()
}

fn decode_payload(payload: &[u8]) -> Option<(u64, OperatorId, f64)> {
    let mut d = CanonicalDecoder::new(payload, "ds-value").ok()?;
    let instance = d.u64().ok()?;
    let origin = d.operator().ok()?;
    let value = d.f64().ok()?;
    d.end().ok()?;
    value.is_finite().then_some((instance, origin, value))
}

/// A signed value with its relay chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayMsg(pub SignedMessage);

impl WireMessage for RelayMsg {
    fn kind(&self) -> &'static str {
        "ds-relay"
    }

    fn encode(&self) -> Vec<u8> {
        self.0.encode()
    }
}

/// Why a relay message was dropped.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelayReject {
    #[error("malformed or non-finite payload")]
    Payload,
    #[error("payload for another instance")]
    Instance,
    #[error("chain of length {len} in round {round}")]
    ChainLength { len: usize, round: u32 },
    #[error("chain does not start with the origin")]
    Origin,
    #[error("last signer is not the link sender")]
    Sender,
    #[error(transparent)]
    Auth(#[from] AuthError),
}

/// Checks a relay message received in `round` from `sender`, returning the
/// origin and value it carries.
pub fn validate_relay(
    registry: &KeyRegistry,
    instance: u64,
    round: u32,
    sender: OperatorId,
    msg: &SignedMessage,
) -> Result<(OperatorId, f64), RelayReject> {
    let (inst, origin, value) = decode_payload(&msg.payload).ok_or(RelayReject::Payload)?;
    if inst != instance {
        return Err(RelayReject::Instance);
    }
    if msg.signer_chain.len() != round as usize {
        return Err(RelayReject::ChainLength {
            len: msg.signer_chain.len(),
            round,
        });
    }
    if msg.origin() != Some(origin) {
        return Err(RelayReject::Origin);
    }
    if msg.last_signer() != Some(sender) {
        return Err(RelayReject::Sender);
    }
    registry.verify(msg)?;
    Ok((origin, value))
}

/// Per-origin record at one receiver. Two distinct values are enough to know
/// the origin equivocated, so later ones are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BroadcastState {
    pub values: Vec<f64>,
}

impl BroadcastState {
    fn record(&mut self, value: f64) -> bool {
        if self.values.len() >= 2 || self.values.iter().any(|v| v.to_bits() == value.to_bits()) {
            return false;
        }
        self.values.push(value);
        true
    }

    /// The single recorded value, or `None` for the default.
    pub fn decide(&self) -> Option<f64> {
        match self.values.as_slice() {
            [v] => Some(*v),
            _ => None,
        }
    }
}

/// Agreed initial values, `None` where the origin's broadcast failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewVector(pub Vec<Option<f64>>);

impl ViewVector {
    pub fn slots(&self) -> &[Option<f64>] {
        &self.0
    }

    pub fn defaults(&self) -> usize {
        self.0.iter().filter(|v| v.is_none()).count()
    }

    /// Replaces every empty slot by the median of the filled ones (0 if
    /// nothing was filled).
    pub fn filled(&self) -> Vec<f64> {
        let present: Vec<f64> = self.0.iter().flatten().copied().collect();
        let fill = if present.is_empty() {
            0.0
        } else {
            median(&present)
        };
        self.0.iter().map(|v| v.unwrap_or(fill)).collect()
    }

    pub fn to_csv_row(&self) -> String {
        self.0
            .iter()
            .map(|v| v.map_or_else(|| "bottom".to_string(), |x| x.to_string()))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Median; the mean of the two middle values for an even count.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty multiset");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Median,
    /// The trimmed stride average used by approximate agreement.
    TrimmedSelect,
}

impl Aggregation {
    pub fn apply(self, view: &ViewVector, f: usize) -> Result<f64, ApproxError> {
        let filled = view.filled();
        match self {
            Aggregation::Median => Ok(median(&filled)),
            Aggregation::TrimmedSelect => u_f(&filled, f),
        }
    }
}

/// One operator running all `N` parallel broadcasts of an instance.
#[derive(Debug, Clone)]
pub struct ExactNode {
    id: OperatorId,
    n: usize,
    f: usize,
    instance: u64,
    key: SigningKey,
    registry: KeyRegistry,
    value: f64,
    states: Vec<BroadcastState>,
    relays: Vec<SignedMessage>,
    rounds_done: u32,
    /// (round, chain length) of every accepted message.
    accepted: Vec<(u32, usize)>,
}

impl ExactNode {
    pub fn new(
        params: &NetworkParams,
        registry: &KeyRegistry,
        instance: u64,
        id: OperatorId,
        value: f64,
    ) -> Result<Self, AuthError> {
        let mut states = vec![BroadcastState::default(); params.n];
        states[id.index()].record(value);
        Ok(ExactNode {
            id,
            n: params.n,
            f: params.f,
            instance,
            key: registry.signing_key(id)?,
            registry: registry.clone(),
            value,
            states,
            relays: Vec::new(),
            rounds_done: 0,
            accepted: Vec::new(),
        })
    }

    pub fn view(&self) -> ViewVector {
        ViewVector(self.states.iter().map(BroadcastState::decide).collect())
    }

    pub fn states(&self) -> &[BroadcastState] {
        &self.states
    }

    pub fn accepted(&self) -> &[(u32, usize)] {
        &self.accepted
    }

    fn rounds_total(&self) -> u32 {
        self.f as u32 + 1
    }
}

impl Participant for ExactNode {
    type Msg = RelayMsg;

    fn id(&self) -> OperatorId {
        self.id
    }

    fn is_done(&self) -> bool {
        self.rounds_done >= self.rounds_total()
    }

    fn outgoing(&mut self, round: u32) -> Vec<Envelope<RelayMsg>> {
        if self.is_done() {
            return Vec::new();
        }
        if round == 1 {
            let msg =
                SignedMessage::new(&self.key, value_payload(self.instance, self.id, self.value));
            return operators(self.n)
                .filter(|to| *to != self.id)
                .map(|to| Envelope::direct(self.id, to, RelayMsg(msg.clone())))
                .collect();
        }
        let mut out = Vec::new();
        for msg in std::mem::take(&mut self.relays) {
            let signed = msg
                .countersign(&self.key)
                .expect("own id is not yet in the chain");
            for to in operators(self.n).filter(|to| !signed.signer_chain.contains(to)) {
                out.push(Envelope::direct(self.id, to, RelayMsg(signed.clone())));
            }
        }
        out
    }

    fn incoming(&mut self, round: u32, inbox: &Inbox<RelayMsg>) {
        if self.is_done() {
            return;
        }
        for (sender, RelayMsg(msg)) in inbox.messages() {
            let Ok((origin, value)) =
                validate_relay(&self.registry, self.instance, round, sender, msg)
            else {
                continue;
            };
            self.accepted.push((round, msg.signer_chain.len()));
            if self.states[origin.index()].record(value)
                && round < self.rounds_total()
                && !msg.signer_chain.contains(&self.id)
            {
                self.relays.push(msg.clone());
            }
        }
        self.rounds_done = round;
    }
}

/// Byzantine behavior library for the relay broadcasts.
#[derive(Debug, Clone)]
pub struct ExactAdversary {
    strategy: AdversaryStrategy,
    registry: KeyRegistry,
    instance: u64,
    f: usize,
    /// Controlled operators' own inputs, seen in round 1.
    inputs: BTreeMap<OperatorId, f64>,
}

impl ExactAdversary {
    pub fn new(
        strategy: AdversaryStrategy,
        registry: KeyRegistry,
        instance: u64,
        f: usize,
    ) -> Self {
        ExactAdversary {
            strategy,
            registry,
            instance,
            f,
            inputs: BTreeMap::new(),
        }
    }

    fn key(&self, id: OperatorId) -> SigningKey {
        self.registry
            .signing_key(id)
            .expect("controlled ids are validated")
    }

    fn signed(&self, origin: OperatorId, value: f64) -> SignedMessage {
        SignedMessage::new(
            &self.key(origin),
            value_payload(self.instance, origin, value),
        )
    }

    fn own_value(&self, c: OperatorId) -> f64 {
        self.inputs.get(&c).copied().unwrap_or(0.0)
    }
}

impl Adversary<RelayMsg> for ExactAdversary {
    fn controls(&self, id: OperatorId, round: u32) -> bool {
        self.strategy.controls(id, round)
    }

    fn act(&mut self, view: AdversaryView<'_, RelayMsg>) -> Vec<Envelope<RelayMsg>> {
        let round = view.round;
        let n = view.n;
        let controlled: Vec<OperatorId> = operators(n)
            .filter(|id| self.controls(*id, round))
            .collect();
        if round == 1 {
            for e in view.shadow {
                if let Some((_, origin, v)) = decode_payload(&e.msg.0.payload) {
                    self.inputs.insert(origin, v);
                }
            }
        }
        let s = self.strategy.clone();
        let mut out = Vec::new();
        let others = |c: OperatorId| operators(n).filter(move |to| *to != c);
        match s.behavior {
            Behavior::Crash => {}
            Behavior::BadProposer => out.extend(view.shadow.iter().cloned()),
            Behavior::ValueLiar | Behavior::BoundaryAttacker if round == 1 => {
                for &c in &controlled {
                    let v = match s.behavior {
                        Behavior::ValueLiar => self.own_value(c) + s.lie_offset,
                        _ => s.boundary + s.boundary_width,
                    };
                    let msg = self.signed(c, v);
                    out.extend(others(c).map(|to| Envelope::direct(c, to, RelayMsg(msg.clone()))));
                }
            }
            Behavior::ValueLiar | Behavior::BoundaryAttacker => {
                out.extend(view.shadow.iter().cloned())
            }
            Behavior::Equivocate => {
                let own = |c| self.own_value(c);
                let late_chain = self.f >= 2 && controlled.len() == self.f;
                if round == 1 {
                    // The first controlled origin stays quiet and later
                    // appears only through the late chain below.
                    for &c in controlled.iter().skip(late_chain as usize) {
                        let (a, b) = (own(c), own(c) + s.lie_offset);
                        let (ma, mb) = (self.signed(c, a), self.signed(c, b));
                        for to in others(c) {
                            let msg = if to.index() < n / 2 { &ma } else { &mb };
                            out.push(Envelope::direct(c, to, RelayMsg(msg.clone())));
                        }
                    }
                } else {
                    // Relay honest values only to the lower half.
                    out.extend(
                        view.shadow
                            .iter()
                            .filter(|e| matches!(e.to, crate::netsim::Recipient::Only(to) if to.index() < n / 2))
                            .cloned(),
                    );
                }
                // A value carried by a chain of controlled signers only,
                // delivered to a single honest operator in round f.
                if late_chain && round as usize == self.f {
                    let origin = controlled[0];
                    let mut msg = self.signed(origin, own(origin) - s.lie_offset);
                    for &c in &controlled[1..] {
                        msg = msg
                            .countersign(&self.key(c))
                            .expect("distinct controlled signers");
                    }
                    let last = *controlled.last().expect("f >= 2");
                    if let Some(target) = operators(n).find(|id| !controlled.contains(id)) {
                        out.push(Envelope::direct(last, target, RelayMsg(msg)));
                    }
                }
            }
            Behavior::RandomValues => {
                for &c in &controlled {
                    if round == 1 {
                        for to in others(c) {
                            let v = view.rng.random_range(-1000.0..1000.0);
                            out.push(Envelope::direct(c, to, RelayMsg(self.signed(c, v))));
                        }
                    } else {
                        for e in view.shadow.iter().filter(|e| e.from == c) {
                            if view.rng.random_bool(0.5) {
                                out.push(e.clone());
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Aggregate(#[from] ApproxError),
    #[error("expected {expected} initial values, got {got}")]
    Inputs { expected: usize, got: usize },
    #[error("initial value {0} is not finite")]
    NotFinite(f64),
}

#[derive(Debug, Clone)]
pub struct ExactConfig {
    pub params: NetworkParams,
    pub instance: u64,
    pub inputs: Vec<f64>,
    pub strategy: AdversaryStrategy,
    pub aggregation: Aggregation,
    pub key_seed: u64,
    pub bus_seed: u64,
    pub frame: Option<usize>,
}

impl ExactConfig {
    pub fn new(params: NetworkParams, inputs: Vec<f64>, seed: u64) -> Self {
        ExactConfig {
            params,
            instance: 0,
            inputs,
            strategy: AdversaryStrategy::honest(),
            aggregation: Aggregation::Median,
            key_seed: seed,
            bus_seed: seed,
            frame: None,
        }
    }

    pub fn with_strategy(mut self, strategy: AdversaryStrategy) -> Self {
        self.strategy = strategy;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ExactOutcome {
    pub honest: BTreeSet<OperatorId>,
    pub views: Vec<ViewVector>,
    pub outputs: Vec<f64>,
    pub rounds: u32,
    /// (round, chain length) of every message accepted by an honest operator.
    pub accepted: Vec<(u32, usize)>,
    pub bus: RoundBus<RelayMsg>,
}

impl ExactOutcome {
    /// The common honest view, if all honest views are identical.
    pub fn common_view(&self) -> Option<&ViewVector> {
        let mut it = self.honest.iter().map(|id| &self.views[id.index()]);
        let first = it.next()?;
        it.all(|v| v == first).then_some(first)
    }

    pub fn honest_outputs(&self) -> Vec<f64> {
        self.honest
            .iter()
            .map(|id| self.outputs[id.index()])
            .collect()
    }

    /// `operator,v1..vN,output` rows; empty slots print as `bottom`.
    pub fn views_csv(&self) -> String {
        let mut out = String::from("operator");
        for j in operators(self.views.len()) {
            let _ = write!(out, ",v{j}");
        }
        out.push_str(",output\n");
        for id in &self.honest {
            let _ = writeln!(
                out,
                "{},{},{}",
                id,
                self.views[id.index()].to_csv_row(),
                self.outputs[id.index()]
            );
        }
        out
    }
}

pub fn agree_exact(cfg: &ExactConfig) -> Result<ExactOutcome, ExactError> {
    let p = cfg.params;
    p.validate()?;
    if cfg.inputs.len() != p.n {
        return Err(ExactError::Inputs {
            expected: p.n,
            got: cfg.inputs.len(),
        });
    }
    if let Some(&bad) = cfg.inputs.iter().find(|v| !v.is_finite()) {
        return Err(ExactError::NotFinite(bad));
    }
    cfg.strategy.validate(p.n, p.f)?;
    let registry = KeyRegistry::new(p.n, cfg.key_seed);
    let mut nodes = operators(p.n)
        .map(|id| ExactNode::new(&p, &registry, cfg.instance, id, cfg.inputs[id.index()]))
        .collect::<Result<Vec<_>, _>>()?;
    let mut adversary = ExactAdversary::new(cfg.strategy.clone(), registry, cfg.instance, p.f);
    let mut bus = RoundBus::new(p.n, cfg.bus_seed);
    if let Some(frame) = cfg.frame {
        bus = bus.with_frame(frame);
    }
    let honest: BTreeSet<OperatorId> = operators(p.n)
        .filter(|id| cfg.strategy.is_honest(*id))
        .collect();
    let rounds = run_until_done(
        &mut bus,
        &mut nodes,
        &mut adversary,
        &honest,
        p.f as u32 + 1,
    )?;
    let views: Vec<ViewVector> = nodes.iter().map(ExactNode::view).collect();
    let outputs = views
        .iter()
        .map(|v| cfg.aggregation.apply(v, p.f))
        .collect::<Result<Vec<_>, _>>()?;
    let accepted = honest
        .iter()
        .flat_map(|id| nodes[id.index()].accepted().iter().copied())
        .collect();
    Ok(ExactOutcome {
        honest,
        views,
        outputs,
        rounds,
        accepted,
        bus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::Controlled;

    fn params(n: usize) -> NetworkParams {
        NetworkParams::max_tolerance(n).unwrap()
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&[10.1, 10.0, 9.9, 50.0]), 10.05);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn decide_rules() {
        let mut s = BroadcastState::default();
        assert_eq!(s.decide(), None);
        s.record(7.0);
        assert_eq!(s.decide(), Some(7.0));
        s.record(7.0);
        assert_eq!(s.decide(), Some(7.0));
        s.record(9.0);
        assert_eq!(s.decide(), None);
    }

    #[test]
    fn honest_liar_lands_in_view_and_median_holds() {
        let strategy = AdversaryStrategy::new(Controlled::last(4, 1), Behavior::ValueLiar)
            .with_lie_offset(50.0);
        let cfg =
            ExactConfig::new(params(4), vec![10.1, 10.0, 9.9, 0.0], 3).with_strategy(strategy);
        let out = agree_exact(&cfg).unwrap();
        let view = out.common_view().unwrap();
        assert_eq!(view.0, vec![Some(10.1), Some(10.0), Some(9.9), Some(50.0)]);
        assert!(out.honest_outputs().iter().all(|&v| v == 10.05));
    }

    #[test]
    fn unanimous_five() {
        let out = agree_exact(&ExactConfig::new(params(4), vec![5.0; 4], 0)).unwrap();
        assert_eq!(out.honest_outputs(), vec![5.0; 4]);
        assert_eq!(out.rounds, 2);
    }

    #[test]
    fn equivocation_becomes_bottom_everywhere() {
        for n in [4, 7, 10] {
            let f = (n - 1) / 3;
            let strategy = AdversaryStrategy::new(Controlled::last(n, f), Behavior::Equivocate)
                .with_lie_offset(6.0);
            let inputs: Vec<f64> = (0..n).map(|i| 3.0 + i as f64 * 0.01).collect();
            let out = agree_exact(
                &ExactConfig::new(params(n), inputs.clone(), 1).with_strategy(strategy),
            )
            .unwrap();
            let view = out.common_view().expect("identical honest views");
            for id in operators(n) {
                if out.honest.contains(&id) {
                    assert_eq!(view.0[id.index()], Some(inputs[id.index()]));
                } else if f >= 2 && id.index() == n - f {
                    // Late chain from the first controlled origin.
                    assert_eq!(view.0[id.index()], Some(inputs[id.index()] - 6.0));
                } else {
                    assert_eq!(view.0[id.index()], None, "n={n} slot {id}");
                }
            }
            assert_eq!(out.rounds, f as u32 + 1);
            assert!(out
                .accepted
                .iter()
                .all(|&(round, len)| round as usize == len));
        }
    }

    #[test]
    fn crashed_sender_is_bottom() {
        let strategy = AdversaryStrategy::new(Controlled::last(4, 1), Behavior::Crash);
        let out = agree_exact(
            &ExactConfig::new(params(4), vec![1.0, 2.0, 3.0, 4.0], 0).with_strategy(strategy),
        )
        .unwrap();
        let view = out.common_view().unwrap();
        assert_eq!(view.defaults(), 1);
        assert_eq!(view.filled(), vec![1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn duplicate_signer_is_dropped() {
        let registry = KeyRegistry::new(4, 0);
        let k1 = registry.signing_key(OperatorId(1)).unwrap();
        let k2 = registry.signing_key(OperatorId(2)).unwrap();
        let msg = SignedMessage::new(&k1, value_payload(0, OperatorId(1), 7.0));
        let mut chain = msg.countersign(&k2).unwrap();
        assert!(validate_relay(&registry, 0, 2, OperatorId(2), &chain).is_ok());
        chain.signer_chain[1] = OperatorId(1);
        assert!(validate_relay(&registry, 0, 2, OperatorId(1), &chain).is_err());
    }

    #[test]
    fn chain_length_must_match_round() {
        let registry = KeyRegistry::new(4, 0);
        let k1 = registry.signing_key(OperatorId(1)).unwrap();
        let msg = SignedMessage::new(&k1, value_payload(0, OperatorId(1), 7.0));
        assert_eq!(
            validate_relay(&registry, 0, 2, OperatorId(1), &msg),
            Err(RelayReject::ChainLength { len: 1, round: 2 })
        );
        assert_eq!(
            validate_relay(&registry, 0, 1, OperatorId(2), &msg),
            Err(RelayReject::Sender)
        );
    }

    #[test]
    fn trimmed_select_is_available() {
        let view = ViewVector(vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)]);
        assert_eq!(Aggregation::TrimmedSelect.apply(&view, 1).unwrap(), 2.5);
        assert_eq!(Aggregation::Median.apply(&view, 1).unwrap(), 2.5);
    }
}

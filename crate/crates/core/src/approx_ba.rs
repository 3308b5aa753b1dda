//! Approximate agreement: repeated exchange and trimmed averaging until the
//! honest values are within `zeta` of each other.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::authsim::CanonicalEncoder;
use crate::model::{operators, NetworkParams, OperatorId, ParamsError};
use crate::netsim::{
    run_until_done, Adversary, AdversaryStrategy, AdversaryView, Behavior, BusError, Envelope,
    Inbox, Participant, RoundBus, Slot, WireMessage,
};

/// Value used for a peer that sent nothing usable.
pub const DEFAULT_VALUE: f64 = 0.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("multiset of {len} values cannot drop 2f = {} extremes", 2 * f)]
    TooSmallToReduce { len: usize, f: usize },
    #[error("select needs a nonempty multiset and f >= 1 (len {len}, f {f})")]
    BadSelect { len: usize, f: usize },
    #[error("averaging needs at least 3f + 1 = {} values, got {len}", 3 * f + 1)]
    TooFewValues { len: usize, f: usize },
    #[error("shrink factor is undefined for f = 0")]
    NoFaults,
    #[error("value {0} is not finite")]
    NotFinite(f64),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("expected {expected} initial values, got {got}")]
    Inputs { expected: usize, got: usize },
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Sorts `values` and drops the `f` smallest and `f` largest.
pub fn reduce_f(values: &[f64], f: usize) -> Result<Vec<f64>, ApproxError> {
    if values.len() <= 2 * f {
        return Err(ApproxError::TooSmallToReduce {
            len: values.len(),
            f,
        });
    }
    let v = sorted(values);
    Ok(v[f..v.len() - f].to_vec())
}

/// Elements at sorted positions `0, f, 2f, ...`.
pub fn select_f(values: &[f64], f: usize) -> Result<Vec<f64>, ApproxError> {
    if values.is_empty() || f == 0 {
        return Err(ApproxError::BadSelect {
            len: values.len(),
            f,
        });
    }
    Ok(sorted(values).into_iter().step_by(f).collect())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `mean(select_f(reduce_f(V)))`. With `f = 0` this is the plain mean.
pub fn u_f(values: &[f64], f: usize) -> Result<f64, ApproxError> {
    if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(ApproxError::NotFinite(bad));
    }
    if f == 0 {
        if values.is_empty() {
            return Err(ApproxError::TooFewValues { len: 0, f });
        }
        return Ok(mean(values));
    }
    if values.len() < 3 * f + 1 {
        return Err(ApproxError::TooFewValues {
            len: values.len(),
            f,
        });
    }
    Ok(mean(&select_f(&reduce_f(values, f)?, f)?))
}

/// `floor((N - 1) / f) - 1`.
pub fn shrink_factor(n: usize, f: usize) -> Result<u64, ApproxError> {
    if f == 0 {
        return Err(ApproxError::NoFaults);
    }
    Ok(((n - 1) / f) as u64 - 1)
}

/// `ceil(log_c(delta / zeta))`, or 0 when `delta <= zeta`. Computed by
/// repeated multiplication so exact powers do not round up.
pub fn round_count(delta: f64, zeta: f64, c: u64) -> u32 {
    assert!(
        zeta > 0.0 && c >= 2,
        "round_count needs zeta > 0 and c >= 2"
    );
    let mut bound = zeta;
    let mut h = 0;
    while bound < delta {
        bound *= c as f64;
        h += 1;
    }
    h
}

/// Largest minus smallest value.
pub fn spread(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if values.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ApproxMsg {
    Value {
        instance: u64,
        round: u32,
        value: f64,
    },
    Halted {
        instance: u64,
        value: f64,
    },
}

impl WireMessage for ApproxMsg {
    fn kind(&self) -> &'static str {
        match self {
            ApproxMsg::Value { .. } => "approx-value",
            ApproxMsg::Halted { .. } => "approx-halted",
        }
    }

    fn encode(&self) -> Vec<u8> {
        match *self {
            ApproxMsg::Value {
                instance,
                round,
                value,
            } => CanonicalEncoder::new("approx-value")
                .u64(instance)
                .u32(round)
                .f64(value)
                .finish(),
            ApproxMsg::Halted { instance, value } => CanonicalEncoder::new("approx-halted")
                .u64(instance)
                .f64(value)
                .finish(),
        }
    }
}

/// One exchange at one operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxRound {
    pub round: u32,
    pub before: f64,
    pub after: f64,
}

/// Per-operator state machine for one approximate instance.
#[derive(Debug, Clone)]
pub struct ApproxNode {
    id: OperatorId,
    n: usize,
    f: usize,
    zeta: f64,
    instance: u64,
    value: f64,
    initial: f64,
    /// Total exchanges, known after round 1.
    exchanges: Option<u32>,
    delta: Option<f64>,
    completed: u32,
    notice_sent: bool,
    peer_halts: BTreeMap<OperatorId, f64>,
    trace: Vec<ApproxRound>,
}

impl ApproxNode {
    pub fn new(params: &NetworkParams, instance: u64, id: OperatorId, initial: f64) -> Self {
        ApproxNode {
            id,
            n: params.n,
            f: params.f,
            zeta: params.zeta,
            instance,
            value: initial,
            initial,
            exchanges: None,
            delta: None,
            completed: 0,
            notice_sent: false,
            peer_halts: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    /// `H` from this operator's round-1 multiset.
    pub fn rounds_planned(&self) -> Option<u32> {
        self.exchanges
    }

    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    pub fn trace(&self) -> &[ApproxRound] {
        &self.trace
    }

    /// True once the operator has stopped updating.
    pub fn halted(&self) -> bool {
        self.exchanges.is_some_and(|h| self.completed >= h)
    }

    fn collect(&mut self, round: u32, inbox: &Inbox<ApproxMsg>) -> Vec<f64> {
        for (sender, msg) in inbox.messages() {
            if let ApproxMsg::Halted { instance, value } = *msg {
                if instance == self.instance && value.is_finite() {
                    self.peer_halts.entry(sender).or_insert(value);
                }
            }
        }
        operators(self.n)
            .map(|j| {
                if let Some(&v) = self.peer_halts.get(&j) {
                    return v;
                }
                match inbox.slot(j) {
                    Slot::Received(ApproxMsg::Value {
                        instance,
                        round: r,
                        value,
                    }) if *instance == self.instance && *r == round && value.is_finite() => *value,
                    _ => DEFAULT_VALUE,
                }
            })
            .collect()
    }
}

impl Participant for ApproxNode {
    type Msg = ApproxMsg;

    fn id(&self) -> OperatorId {
        self.id
    }

    fn is_done(&self) -> bool {
        self.notice_sent
    }

    fn outgoing(&mut self, round: u32) -> Vec<Envelope<ApproxMsg>> {
        if self.notice_sent {
            return Vec::new();
        }
        let msg = if self.halted() {
            self.notice_sent = true;
            ApproxMsg::Halted {
                instance: self.instance,
                value: self.value,
            }
        } else {
            ApproxMsg::Value {
                instance: self.instance,
                round,
                value: self.value,
            }
        };
        vec![Envelope::broadcast(self.id, msg)]
    }

    fn incoming(&mut self, round: u32, inbox: &Inbox<ApproxMsg>) {
        if self.halted() || self.notice_sent {
            return;
        }
        let values = self.collect(round, inbox);
        let before = self.value;
        self.value = u_f(&values, self.f).expect("N >= 3f + 1 values of finite input");
        self.completed += 1;
        if self.exchanges.is_none() {
            let planned = if self.f == 0 {
                1
            } else {
                let delta = spread(&values);
                self.delta = Some(delta);
                let c = shrink_factor(self.n, self.f).expect("f >= 1");
                round_count(delta, self.zeta, c).max(1)
            };
            self.exchanges = Some(planned);
        }
        self.trace.push(ApproxRound {
            round,
            before,
            after: self.value,
        });
    }
}

/// Byzantine behavior library for approximate agreement. With a rotating
/// controlled set only `Value` messages are corrupted.
#[derive(Debug, Clone)]
pub struct ApproxAdversary {
    strategy: AdversaryStrategy,
    instance: u64,
}

impl ApproxAdversary {
    pub fn new(strategy: AdversaryStrategy, instance: u64) -> Self {
        ApproxAdversary { strategy, instance }
    }

    fn value(&self, round: u32, value: f64) -> ApproxMsg {
        ApproxMsg::Value {
            instance: self.instance,
            round,
            value,
        }
    }
}

impl Adversary<ApproxMsg> for ApproxAdversary {
    fn controls(&self, id: OperatorId, round: u32) -> bool {
        self.strategy.controls(id, round)
    }

    fn act(&mut self, view: AdversaryView<'_, ApproxMsg>) -> Vec<Envelope<ApproxMsg>> {
        let round = view.round;
        let n = view.n;
        let honest_values: Vec<f64> = view
            .honest
            .iter()
            .map(|e| match e.msg {
                ApproxMsg::Value { value, .. } | ApproxMsg::Halted { value, .. } => value,
            })
            .collect();
        let lo = honest_values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = honest_values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (0.0, 0.0) };
        let s = &self.strategy;
        let mut out = Vec::new();
        for env in view.shadow {
            let c = env.from;
            if let ApproxMsg::Halted { .. } = env.msg {
                if s.controlled.is_rotating() {
                    out.push(env.clone());
                    continue;
                }
            }
            let own = match env.msg {
                ApproxMsg::Value { value, .. } | ApproxMsg::Halted { value, .. } => value,
            };
            match s.behavior {
                Behavior::Crash => {}
                Behavior::BadProposer => out.push(env.clone()),
                Behavior::ValueLiar => out.push(Envelope::broadcast(
                    c,
                    self.value(round, own + s.lie_offset),
                )),
                Behavior::Equivocate => {
                    // Extremes of the honest range, split across receivers;
                    // from round 2 on the low half also gets a fake halt.
                    for to in operators(n) {
                        let msg = if to.index() < n / 2 {
                            if round >= 2 && !s.controlled.is_rotating() {
                                ApproxMsg::Halted {
                                    instance: self.instance,
                                    value: lo,
                                }
                            } else {
                                self.value(round, lo)
                            }
                        } else {
                            self.value(round, hi)
                        };
                        out.push(Envelope::direct(c, to, msg));
                    }
                }
                Behavior::BoundaryAttacker => {
                    for to in operators(n) {
                        let v = if to.index() < n / 2 {
                            s.boundary - s.boundary_width
                        } else {
                            s.boundary + s.boundary_width
                        };
                        out.push(Envelope::direct(c, to, self.value(round, v)));
                    }
                }
                Behavior::RandomValues => {
                    let width = (hi - lo).max(1.0);
                    for to in operators(n) {
                        let v = view.rng.random_range(lo - width..hi + width);
                        out.push(Envelope::direct(c, to, self.value(round, v)));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ApproxConfig {
    pub params: NetworkParams,
    pub instance: u64,
    pub inputs: Vec<f64>,
    pub strategy: AdversaryStrategy,
    pub bus_seed: u64,
    pub frame: Option<usize>,
    pub max_rounds: u32,
}

impl ApproxConfig {
    pub fn new(params: NetworkParams, inputs: Vec<f64>, seed: u64) -> Self {
        ApproxConfig {
            params,
            instance: 0,
            inputs,
            strategy: AdversaryStrategy::honest(),
            bus_seed: seed,
            frame: None,
            max_rounds: 4096,
        }
    }

    pub fn with_strategy(mut self, strategy: AdversaryStrategy) -> Self {
        self.strategy = strategy;
        self
    }
}

/// Spread of the well-behaved values around one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadRecord {
    pub round: u32,
    /// Values entering the round, halted ones included.
    pub spread_in: f64,
    /// New values of the operators that updated this round.
    pub spread_out: f64,
    /// Operators that updated.
    pub updated: usize,
}

impl SpreadRecord {
    /// `spread_out <= spread_in / c` up to floating-point rounding.
    pub fn shrinks_by(&self, c: u64) -> bool {
        let slack = 1e-12 * (1.0 + self.spread_in.abs());
        self.spread_out <= self.spread_in / c as f64 + slack
    }
}

#[derive(Debug, Clone)]
pub struct ApproxOutcome {
    /// Operators whose state machines are never corrupted. With a rotating
    /// adversary every operator's state machine runs honestly, so all of
    /// them are listed.
    pub honest: BTreeSet<OperatorId>,
    pub outputs: Vec<f64>,
    pub initials: Vec<f64>,
    pub planned: Vec<Option<u32>>,
    pub traces: Vec<Vec<ApproxRound>>,
    pub spread: Vec<SpreadRecord>,
    pub c: Option<u64>,
    pub rounds: u32,
    pub bus: RoundBus<ApproxMsg>,
}

impl ApproxOutcome {
    pub fn honest_outputs(&self) -> Vec<f64> {
        self.honest
            .iter()
            .map(|id| self.outputs[id.index()])
            .collect()
    }

    pub fn honest_initials(&self) -> Vec<f64> {
        self.honest
            .iter()
            .map(|id| self.initials[id.index()])
            .collect()
    }

    pub fn output_spread(&self) -> f64 {
        spread(&self.honest_outputs())
    }

    /// `round,spread_in,spread_out,updated` rows.
    pub fn spread_csv(&self) -> String {
        let mut out = String::from("round,spread_in,spread_out,updated\n");
        for r in &self.spread {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.round, r.spread_in, r.spread_out, r.updated
            );
        }
        out
    }
}

fn spread_trace(
    honest: &BTreeSet<OperatorId>,
    initials: &[f64],
    traces: &[Vec<ApproxRound>],
) -> Vec<SpreadRecord> {
    let last = honest
        .iter()
        .filter_map(|id| traces[id.index()].last().map(|r| r.round))
        .max()
        .unwrap_or(0);
    (1..=last)
        .map(|round| {
            let mut entering = Vec::new();
            let mut updated = Vec::new();
            for id in honest {
                let trace = &traces[id.index()];
                match trace.iter().find(|r| r.round == round) {
                    Some(r) => {
                        entering.push(r.before);
                        updated.push(r.after);
                    }
                    None => {
                        let held = trace
                            .iter()
                            .rev()
                            .find(|r| r.round < round)
                            .map_or(initials[id.index()], |r| r.after);
                        entering.push(held);
                    }
                }
            }
            SpreadRecord {
                round,
                spread_in: spread(&entering),
                spread_out: spread(&updated),
                updated: updated.len(),
            }
        })
        .collect()
}

pub fn run_approx(cfg: &ApproxConfig) -> Result<ApproxOutcome, ApproxError> {
    let p = cfg.params;
    p.validate()?;
    if cfg.inputs.len() != p.n {
        return Err(ApproxError::Inputs {
            expected: p.n,
            got: cfg.inputs.len(),
        });
    }
    if let Some(&bad) = cfg.inputs.iter().find(|v| !v.is_finite()) {
        return Err(ApproxError::NotFinite(bad));
    }
    cfg.strategy.validate(p.n, p.f)?;
    let mut nodes: Vec<ApproxNode> = operators(p.n)
        .map(|id| ApproxNode::new(&p, cfg.instance, id, cfg.inputs[id.index()]))
        .collect();
    let mut adversary = ApproxAdversary::new(cfg.strategy.clone(), cfg.instance);
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
        cfg.max_rounds,
    )?;
    let traces: Vec<Vec<ApproxRound>> = nodes.iter().map(|n| n.trace().to_vec()).collect();
    let spread = spread_trace(&honest, &cfg.inputs, &traces);
    Ok(ApproxOutcome {
        honest,
        outputs: nodes.iter().map(ApproxNode::value).collect(),
        initials: cfg.inputs.clone(),
        planned: nodes.iter().map(ApproxNode::rounds_planned).collect(),
        traces,
        spread,
        c: shrink_factor(p.n, p.f).ok(),
        rounds,
        bus,
    })
}

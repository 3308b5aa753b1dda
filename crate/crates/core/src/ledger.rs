//! Recording and retrieval of agreed usage tensors: third-party retrieval by
//! matching copies or trimmed averaging, and a hash-linked ledger where a
//! rotating proposer needs a quorum of votes to commit a period's tensor.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::approx_ba::u_f;
use crate::authsim::{
    AuthError, CanonicalDecoder, CanonicalEncoder, Digest32, KeyRegistry, QuorumCertificate,
    SignedMessage, SigningKey, Tag,
};
use crate::model::{
    operators, quorum, NetworkParams, OperatorId, TensorError, UsageTensor, ValueProfile,
};
use crate::netsim::{AdversaryStrategy, Behavior};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("proposal is malformed: {0}")]
    BadProposal(&'static str),
    #[error("block for period {period} does not extend the chain: {reason}")]
    BadBlock { period: u64, reason: &'static str },
    #[error("verdict evidence does not hold: {0}")]
    BadEvidence(&'static str),
    #[error("expected {expected} local tensors, got {got}")]
    Locals { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("no tensor reached {needed} identical copies")]
    NoMatch { needed: usize },
    #[error("responses have different shapes")]
    Shape,
    #[error("averaging failed: {0}")]
    Average(String),
}

/// First tensor with `f + 1` byte-identical copies, scanning responses in
/// order.
pub fn retrieve_exact(
    responses: &[(OperatorId, UsageTensor)],
    f: usize,
) -> Result<UsageTensor, RetrievalError> {
    let mut counts: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
    for (_, tensor) in responses {
        let c = counts.entry(tensor.canonical_bytes()).or_default();
        *c += 1;
        if *c > f {
            return Ok(tensor.clone());
        }
    }
    Err(RetrievalError::NoMatch { needed: f + 1 })
}

/// Element-wise trimmed average over `n` responses. A silent operator counts
/// as the all-default tensor.
pub fn retrieve_approx(
    responses: &[(OperatorId, Option<UsageTensor>)],
    n: usize,
    f: usize,
) -> Result<UsageTensor, RetrievalError> {
    let template = responses
        .iter()
        .find_map(|(_, t)| t.as_ref())
        .ok_or(RetrievalError::NoMatch { needed: 1 })?;
    if responses
        .iter()
        .flat_map(|(_, t)| t)
        .any(|t| !t.same_shape(template))
    {
        return Err(RetrievalError::Shape);
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(n); template.dims().len()];
    for (_, t) in responses {
        let dense = t
            .as_ref()
            .map_or_else(|| vec![0.0; columns.len()], UsageTensor::to_dense);
        for (col, v) in columns.iter_mut().zip(dense) {
            col.push(v);
        }
    }
    let silent = n.saturating_sub(responses.len());
    let values = columns
        .into_iter()
        .map(|mut col| {
            col.extend(std::iter::repeat_n(0.0, silent));
            u_f(&col, f)
        })
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| RetrievalError::Average(e.to_string()))?;
    UsageTensor::from_dense(
        template.period(),
        template.dims(),
        ValueProfile::Real,
        &values,
    )
    .map_err(|e| RetrievalError::Average(e.to_string()))
}

/// Round-robin proposer for `attempt` of `period`.
pub fn proposer_for(n: usize, period: u64, attempt: u32) -> OperatorId {
    OperatorId::from_index(((period + attempt as u64) % n as u64) as usize)
}

/// Digest voters sign: the hash of the tensor's canonical bytes.
pub fn payload_digest(payload: &[u8]) -> Digest32 {
    Digest32::of(payload)
}

fn proposal_payload(period: u64, proposer: OperatorId, tensor: &[u8]) -> Vec<u8> {
    CanonicalEncoder::new("proposal")
        .u64(period)
        .operator(proposer)
        .bytes(tensor)
        .finish()
}

/// A proposer's signed tensor for one period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub signed: SignedMessage,
}

/// A checked proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Opened {
    pub period: u64,
    pub proposer: OperatorId,
    pub tensor: UsageTensor,
    pub payload: Vec<u8>,
    pub digest: Digest32,
}

impl Proposal {
    pub fn new(key: &SigningKey, tensor: &UsageTensor) -> Self {
        let payload = proposal_payload(tensor.period(), key.id(), &tensor.canonical_bytes());
        Proposal {
            signed: SignedMessage::new(key, payload),
        }
    }

    /// Verifies the signature and decodes the tensor.
    pub fn open(&self, registry: &KeyRegistry) -> Result<Opened, LedgerError> {
        if self.signed.signer_chain.len() != 1 {
            return Err(LedgerError::BadProposal(
                "proposal must carry one signature",
            ));
        }
        registry.verify(&self.signed)?;
        let mut d = CanonicalDecoder::new(&self.signed.payload, "proposal")?;
        let period = d.u64()?;
        let proposer = d.operator()?;
        let payload = d.bytes()?.to_vec();
        d.end()?;
        if self.signed.origin() != Some(proposer) {
            return Err(LedgerError::BadProposal("signer is not the named proposer"));
        }
        let text = std::str::from_utf8(&payload)
            .map_err(|_| LedgerError::BadProposal("tensor is not UTF-8"))?;
        let tensor = UsageTensor::parse_canonical(text)?;
        if tensor.period() != period {
            return Err(LedgerError::BadProposal(
                "tensor period differs from proposal period",
            ));
        }
        Ok(Opened {
            period,
            proposer,
            tensor,
            digest: payload_digest(&payload),
            payload,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VoteKind {
    Accept,
    Reject,
}

fn reject_payload(period: u64, proposer: OperatorId, digest: &Digest32) -> Vec<u8> {
    CanonicalEncoder::new("reject")
        .u64(period)
        .operator(proposer)
        .bytes(&digest.0)
        .finish()
}

/// A signed vote. Accept tags are certificate votes over the payload digest;
/// reject tags additionally bind the period and proposer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    pub voter: OperatorId,
    pub period: u64,
    pub proposer: OperatorId,
    pub digest: Digest32,
    pub kind: VoteKind,
    pub tag: Tag,
}

impl Vote {
    pub fn cast(key: &SigningKey, opened: &Opened, kind: VoteKind) -> Self {
        let tag = match kind {
            VoteKind::Accept => QuorumCertificate::vote(key, &opened.digest),
            VoteKind::Reject => key.sign(&reject_payload(
                opened.period,
                opened.proposer,
                &opened.digest,
            )),
        };
        Vote {
            voter: key.id(),
            period: opened.period,
            proposer: opened.proposer,
            digest: opened.digest,
            kind,
            tag,
        }
    }

    pub fn verify(&self, registry: &KeyRegistry) -> bool {
        let payload = match self.kind {
            VoteKind::Accept => crate::authsim::vote_payload(&self.digest),
            VoteKind::Reject => reject_payload(self.period, self.proposer, &self.digest),
        };
        registry.verify_tag(self.voter, &payload, &self.tag).is_ok()
    }
}

/// Accept iff the proposal is byte-identical to the local tensor.
pub fn vote_exact(key: &SigningKey, local: &UsageTensor, opened: &Opened) -> Vote {
    let kind = if opened.payload == local.canonical_bytes() {
        VoteKind::Accept
    } else {
        VoteKind::Reject
    };
    Vote::cast(key, opened, kind)
}

/// Largest element-wise difference, or `None` if the shapes differ.
pub fn max_deviation(a: &UsageTensor, b: &UsageTensor) -> Option<f64> {
    if !a.same_shape(b) {
        return None;
    }
    Some(
        a.to_dense()
            .iter()
            .zip(b.to_dense())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max),
    )
}

/// Accept iff every element is within `alpha` of the local tensor.
pub fn vote_approx(key: &SigningKey, local: &UsageTensor, opened: &Opened, alpha: f64) -> Vote {
    let ok = max_deviation(local, &opened.tensor).is_some_and(|d| d <= alpha);
    Vote::cast(
        key,
        opened,
        if ok {
            VoteKind::Accept
        } else {
            VoteKind::Reject
        },
    )
}

/// Evidence-backed finding against a proposer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// Two different signed proposals for one period.
    Equivocation {
        period: u64,
        proposer: OperatorId,
        first: Proposal,
        second: Proposal,
    },
    /// A signed proposal and a quorum of signed rejections of it.
    RejectedProposal {
        period: u64,
        proposer: OperatorId,
        proposal: Proposal,
        rejections: Vec<Vote>,
    },
}

impl Verdict {
    pub fn proposer(&self) -> OperatorId {
        match self {
            Verdict::Equivocation { proposer, .. } | Verdict::RejectedProposal { proposer, .. } => {
                *proposer
            }
        }
    }

    pub fn period(&self) -> u64 {
        match self {
            Verdict::Equivocation { period, .. } | Verdict::RejectedProposal { period, .. } => {
                *period
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Verdict::Equivocation { .. } => "equivocation",
            Verdict::RejectedProposal { .. } => "rejected-proposal",
        }
    }

    /// Re-checks the evidence from scratch.
    pub fn verify(&self, registry: &KeyRegistry, quorum: usize) -> Result<(), LedgerError> {
        match self {
            Verdict::Equivocation {
                period,
                proposer,
                first,
                second,
            } => {
                let a = first.open(registry)?;
                let b = second.open(registry)?;
                if (a.period, a.proposer) != (*period, *proposer)
                    || (b.period, b.proposer) != (*period, *proposer)
                {
                    return Err(LedgerError::BadEvidence(
                        "proposals are not from the accused period and proposer",
                    ));
                }
                if a.digest == b.digest {
                    return Err(LedgerError::BadEvidence("proposals are identical"));
                }
                Ok(())
            }
            Verdict::RejectedProposal {
                period,
                proposer,
                proposal,
                rejections,
            } => {
                let p = proposal.open(registry)?;
                if (p.period, p.proposer) != (*period, *proposer) {
                    return Err(LedgerError::BadEvidence(
                        "proposal is not from the accused period and proposer",
                    ));
                }
                let voters: BTreeSet<OperatorId> = rejections
                    .iter()
                    .filter(|v| {
                        v.kind == VoteKind::Reject
                            && v.digest == p.digest
                            && v.period == p.period
                            && v.proposer == p.proposer
                            && v.verify(registry)
                    })
                    .map(|v| v.voter)
                    .collect();
                if voters.len() < quorum {
                    return Err(LedgerError::BadEvidence(
                        "fewer than a quorum of valid rejections",
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Committed tensor with its certificate and chain links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub period: u64,
    pub proposer: OperatorId,
    /// Canonical bytes of the tensor.
    pub payload: Vec<u8>,
    pub cert: QuorumCertificate,
    pub prev: Digest32,
    pub digest: Digest32,
}

impl Block {
    pub fn compute_digest(
        prev: &Digest32,
        payload: &[u8],
        period: u64,
        proposer: OperatorId,
        cert: &QuorumCertificate,
    ) -> Digest32 {
        let mut enc = CanonicalEncoder::new("block")
            .bytes(&prev.0)
            .bytes(payload)
            .u64(period)
            .operator(proposer)
            .u32(cert.votes.len() as u32);
        for (id, tag) in &cert.votes {
            enc = enc.operator(*id).bytes(tag.as_bytes());
        }
        Digest32::of(&enc.finish())
    }

    pub fn new(
        period: u64,
        proposer: OperatorId,
        payload: Vec<u8>,
        cert: QuorumCertificate,
        prev: Digest32,
    ) -> Self {
        let digest = Block::compute_digest(&prev, &payload, period, proposer, &cert);
        Block {
            period,
            proposer,
            payload,
            cert,
            prev,
            digest,
        }
    }

    pub fn tensor(&self) -> Result<UsageTensor, LedgerError> {
        let text = std::str::from_utf8(&self.payload)
            .map_err(|_| LedgerError::BadProposal("tensor is not UTF-8"))?;
        Ok(UsageTensor::parse_canonical(text)?)
    }

    /// One export line, without the trailing newline.
    pub fn to_line(&self) -> String {
        let signers: Vec<String> = self.cert.votes.keys().map(|id| id.to_string()).collect();
        let tags: Vec<String> = self.cert.votes.values().map(Tag::to_hex).collect();
        format!(
            "block,{},{},{},{},{},{},{},{}",
            self.period,
            self.proposer,
            payload_digest(&self.payload).to_hex(),
            signers.join(";"),
            tags.join(";"),
            self.prev.to_hex(),
            self.digest.to_hex(),
            hex::encode(&self.payload)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LedgerMode {
    /// Vote iff byte-identical.
    Exact,
    /// Vote iff every element is within `alpha`.
    Approx { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttemptResult {
    Committed,
    Rejected,
    Equivocated,
    /// No valid proposal arrived.
    Silent,
    /// Neither accepts nor rejections reached a quorum.
    Inconclusive,
    /// The honest proposer held a lock on an undecided proposal and stood
    /// aside.
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub proposer: OperatorId,
    pub proposals: usize,
    pub accepts: usize,
    pub rejects: usize,
    pub result: AttemptResult,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PeriodOutcome {
    Committed { proposer: OperatorId, attempt: u32 },
    Stalled,
}

/// Everything that happened in one period, kept for audits and checks.
#[derive(Debug, Clone)]
pub struct PeriodReport {
    pub period: u64,
    pub outcome: PeriodOutcome,
    pub attempts: Vec<AttemptRecord>,
    pub proposals: Vec<Proposal>,
    pub votes: Vec<Vote>,
    pub verdicts: Vec<Verdict>,
}

impl PeriodReport {
    /// Payload digests for which a quorum of valid accept signatures exists
    /// among all votes cast in the period.
    pub fn certifiable(&self, registry: &KeyRegistry, quorum: usize) -> Vec<Digest32> {
        let mut signers: BTreeMap<Digest32, BTreeSet<OperatorId>> = BTreeMap::new();
        for v in &self.votes {
            if v.kind == VoteKind::Accept && v.verify(registry) {
                signers.entry(v.digest).or_default().insert(v.voter);
            }
        }
        signers
            .into_iter()
            .filter(|(_, s)| s.len() >= quorum)
            .map(|(d, _)| d)
            .collect()
    }
}

/// The period's local tensors and adversary.
#[derive(Debug, Clone, Copy)]
pub struct PeriodSetup<'a> {
    pub period: u64,
    /// Local tensor per operator, in id order.
    pub locals: &'a [UsageTensor],
    pub strategy: &'a AdversaryStrategy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub blocks: usize,
    pub head: Digest32,
    /// The verified blocks, oldest first.
    pub chain: Vec<Block>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuditError {
    #[error("ledger header: {0}")]
    Header(String),
    #[error("block {block} (line {line}): {reason}")]
    Block {
        block: usize,
        line: usize,
        reason: String,
    },
}

/// Append-only hash chain of committed tensors.
#[derive(Debug, Clone)]
pub struct TensorLedger {
    n: usize,
    f: usize,
    key_seed: u64,
    registry: KeyRegistry,
    mode: LedgerMode,
    genesis: Digest32,
    blocks: Vec<Block>,
    verdicts: BTreeMap<OperatorId, Vec<Verdict>>,
}

fn genesis_digest(n: usize, f: usize, key_seed: u64) -> Digest32 {
    Digest32::of(
        &CanonicalEncoder::new("genesis")
            .u32(n as u32)
            .u32(f as u32)
            .u64(key_seed)
            .finish(),
    )
}

impl TensorLedger {
    pub fn new(params: &NetworkParams, key_seed: u64, mode: LedgerMode) -> Self {
        TensorLedger {
            n: params.n,
            f: params.f,
            key_seed,
            registry: KeyRegistry::new(params.n, key_seed),
            mode,
            genesis: genesis_digest(params.n, params.f, key_seed),
            blocks: Vec::new(),
            verdicts: BTreeMap::new(),
        }
    }

    pub fn quorum(&self) -> usize {
        quorum(self.n, self.f)
    }

    pub fn registry(&self) -> &KeyRegistry {
        &self.registry
    }

    pub fn genesis(&self) -> Digest32 {
        self.genesis
    }

    pub fn head(&self) -> Digest32 {
        self.blocks.last().map_or(self.genesis, |b| b.digest)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn verdicts(&self) -> &BTreeMap<OperatorId, Vec<Verdict>> {
        &self.verdicts
    }

    pub fn all_verdicts(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.values().flatten()
    }

    /// Appends `block` after checking its link, period order, certificate and
    /// digest.
    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        let bad = |reason| LedgerError::BadBlock {
            period: block.period,
            reason,
        };
        if block.prev != self.head() {
            return Err(bad("previous digest is not the head"));
        }
        if self.blocks.last().is_some_and(|b| b.period >= block.period) {
            return Err(bad("period already committed"));
        }
        if block.cert.digest != payload_digest(&block.payload) {
            return Err(bad("certificate is over another payload"));
        }
        block.cert.verify(&self.registry, self.quorum())?;
        if block.digest
            != Block::compute_digest(
                &block.prev,
                &block.payload,
                block.period,
                block.proposer,
                &block.cert,
            )
        {
            return Err(bad("digest mismatch"));
        }
        if block.tensor()?.period() != block.period {
            return Err(bad("tensor period differs from block period"));
        }
        self.blocks.push(block);
        Ok(())
    }

    fn record_verdict(&mut self, verdict: Verdict) {
        self.verdicts
            .entry(verdict.proposer())
            .or_default()
            .push(verdict);
    }

    /// Runs proposer rotation for one period: at most `f + 1` attempts, each
    /// with a proposal, voting, and commit or verdict.
    pub fn run_period(&mut self, setup: PeriodSetup<'_>) -> Result<PeriodReport, LedgerError> {
        if setup.locals.len() != self.n {
            return Err(LedgerError::Locals {
                expected: self.n,
                got: setup.locals.len(),
            });
        }
        let q = self.quorum();
        let period = setup.period;
        let strategy = setup.strategy;
        let honest: Vec<OperatorId> = operators(self.n)
            .filter(|id| strategy.is_honest(*id))
            .collect();
        let byzantine: Vec<OperatorId> = operators(self.n)
            .filter(|id| !strategy.is_honest(*id))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
        let mut locks: BTreeMap<OperatorId, Digest32> = BTreeMap::new();
        let mut report = PeriodReport {
            period,
            outcome: PeriodOutcome::Stalled,
            attempts: Vec::new(),
            proposals: Vec::new(),
            votes: Vec::new(),
            verdicts: Vec::new(),
        };
        for attempt in 0..=self.f as u32 {
            let p = proposer_for(self.n, period, attempt);
            let key = self.registry.signing_key(p)?;
            let mut record = AttemptRecord {
                attempt,
                proposer: p,
                proposals: 0,
                accepts: 0,
                rejects: 0,
                result: AttemptResult::Silent,
            };
            let proposals = if strategy.is_honest(p) {
                if locks.contains_key(&p) {
                    record.result = AttemptResult::Skipped;
                    report.attempts.push(record);
                    continue;
                }
                vec![Proposal::new(&key, &setup.locals[p.index()])]
            } else {
                self.byzantine_proposals(&key, setup, &honest, &mut rng)?
            };
            // Honest operators echo every proposal they receive, so all of
            // them see the same set.
            let mut opened: Vec<(Proposal, Opened)> = Vec::new();
            for prop in proposals {
                report.proposals.push(prop.clone());
                if let Ok(o) = prop.open(&self.registry) {
                    if o.period == period
                        && o.proposer == p
                        && !opened.iter().any(|(_, x)| x.digest == o.digest)
                    {
                        opened.push((prop, o));
                    }
                }
            }
            record.proposals = opened.len();
            if opened.is_empty() {
                report.attempts.push(record);
                continue;
            }
            let equivocated = opened.len() > 1;
            let mut votes = Vec::new();
            for &i in &honest {
                let vk = self.registry.signing_key(i)?;
                for (_, o) in &opened {
                    let vote = if equivocated {
                        Vote::cast(&vk, o, VoteKind::Reject)
                    } else if locks.get(&i).is_some_and(|d| *d != o.digest) {
                        continue;
                    } else {
                        match self.mode {
                            LedgerMode::Exact => vote_exact(&vk, &setup.locals[i.index()], o),
                            LedgerMode::Approx { alpha } => {
                                vote_approx(&vk, &setup.locals[i.index()], o, alpha)
                            }
                        }
                    };
                    if vote.kind == VoteKind::Accept {
                        locks.insert(i, o.digest);
                    }
                    votes.push(vote);
                }
            }
            for &b in &byzantine {
                let vk = self.registry.signing_key(b)?;
                for (_, o) in &opened {
                    let local = &setup.locals[b.index()];
                    let kind = match strategy.behavior {
                        Behavior::Crash => continue,
                        Behavior::RandomValues => {
                            if rng.random_bool(0.5) {
                                VoteKind::Accept
                            } else {
                                VoteKind::Reject
                            }
                        }
                        Behavior::ValueLiar => {
                            let honest_vote = match self.mode {
                                LedgerMode::Exact => vote_exact(&vk, local, o),
                                LedgerMode::Approx { alpha } => vote_approx(&vk, local, o, alpha),
                            };
                            match honest_vote.kind {
                                VoteKind::Accept => VoteKind::Reject,
                                VoteKind::Reject => VoteKind::Accept,
                            }
                        }
                        Behavior::Equivocate
                        | Behavior::BoundaryAttacker
                        | Behavior::BadProposer => VoteKind::Accept,
                    };
                    votes.push(Vote::cast(&vk, o, kind));
                }
            }
            let count = |digest: &Digest32, kind: VoteKind| -> BTreeSet<OperatorId> {
                votes
                    .iter()
                    .filter(|v| v.digest == *digest && v.kind == kind && v.verify(&self.registry))
                    .map(|v| v.voter)
                    .collect()
            };
            report.votes.extend(votes.iter().cloned());
            if equivocated {
                record.result = AttemptResult::Equivocated;
                for (_, o) in &opened {
                    if count(&o.digest, VoteKind::Reject).len() >= q {
                        locks.retain(|_, d| *d != o.digest);
                    }
                }
                let verdict = Verdict::Equivocation {
                    period,
                    proposer: p,
                    first: opened[0].0.clone(),
                    second: opened[1].0.clone(),
                };
                report.verdicts.push(verdict.clone());
                self.record_verdict(verdict);
                report.attempts.push(record);
                continue;
            }
            let (prop, o) = &opened[0];
            let accepts = count(&o.digest, VoteKind::Accept);
            let rejects = count(&o.digest, VoteKind::Reject);
            record.accepts = accepts.len();
            record.rejects = rejects.len();
            if accepts.len() >= q {
                let mut cert = QuorumCertificate::new(o.digest);
                for v in votes
                    .iter()
                    .filter(|v| v.digest == o.digest && v.kind == VoteKind::Accept)
                {
                    cert.add_vote(v.voter, v.tag.clone());
                }
                let block = Block::new(period, p, o.payload.clone(), cert, self.head());
                self.append(block)?;
                record.result = AttemptResult::Committed;
                report.attempts.push(record);
                report.outcome = PeriodOutcome::Committed {
                    proposer: p,
                    attempt,
                };
                return Ok(report);
            }
            if rejects.len() >= q {
                locks.retain(|_, d| *d != o.digest);
                let verdict = Verdict::RejectedProposal {
                    period,
                    proposer: p,
                    proposal: prop.clone(),
                    rejections: votes
                        .iter()
                        .filter(|v| v.digest == o.digest && v.kind == VoteKind::Reject)
                        .cloned()
                        .collect(),
                };
                report.verdicts.push(verdict.clone());
                self.record_verdict(verdict);
                record.result = AttemptResult::Rejected;
            } else {
                record.result = AttemptResult::Inconclusive;
            }
            report.attempts.push(record);
        }
        Ok(report)
    }

    fn byzantine_proposals(
        &self,
        key: &SigningKey,
        setup: PeriodSetup<'_>,
        honest: &[OperatorId],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Proposal>, LedgerError> {
        let base = &setup.locals[key.id().index()];
        let s = setup.strategy;
        let dims = base.dims();
        let dense = base.to_dense();
        let real = base.profile() == ValueProfile::Real;
        let build = |values: Vec<f64>| {
            UsageTensor::from_dense(base.period(), dims, base.profile(), &values)
        };
        let flip_first = || {
            let mut v = dense.clone();
            if let Some(x) = v.first_mut() {
                *x = if real { *x + s.lie_offset } else { 1.0 - *x };
            }
            build(v)
        };
        let alpha = match self.mode {
            LedgerMode::Approx { alpha } => alpha,
            LedgerMode::Exact => 1.0,
        };
        let tensors = match s.behavior {
            Behavior::Crash => vec![],
            Behavior::BadProposer => vec![flip_first()?],
            Behavior::Equivocate => vec![base.clone(), flip_first()?],
            Behavior::ValueLiar => {
                let v = dense
                    .iter()
                    .map(|x| if real { x + s.lie_offset } else { 1.0 - x })
                    .collect();
                vec![build(v)?]
            }
            Behavior::RandomValues => {
                let v = dense
                    .iter()
                    .map(|&x| match (real, rng.random_bool(0.5)) {
                        (_, false) => x,
                        (true, true) => x + rng.random_range(-3.0 * alpha..3.0 * alpha),
                        (false, true) => rng.random_range(0..2) as f64,
                    })
                    .collect();
                vec![build(v)?]
            }
            Behavior::BoundaryAttacker => match self.mode {
                LedgerMode::Approx { alpha } if real => {
                    // Exactly alpha above the highest honest value everywhere.
                    let mut v = vec![f64::NEG_INFINITY; dense.len()];
                    for id in honest {
                        for (m, x) in v.iter_mut().zip(setup.locals[id.index()].to_dense()) {
                            *m = m.max(x);
                        }
                    }
                    vec![build(v.into_iter().map(|m| m + alpha).collect())?]
                }
                _ => vec![flip_first()?],
            },
        };
        Ok(tensors.iter().map(|t| Proposal::new(key, t)).collect())
    }

    /// Recomputes every link, digest and certificate.
    pub fn verify_chain(&self) -> Result<(), AuditError> {
        audit(&self.export()).map(|_| ())
    }

    /// Canonical text export: a header line, then one line per block.
    ///
    /// ```text
    /// ledger,v1,<N>,<f>,<key seed>,<genesis hex>
    /// block,<period>,<proposer>,<payload digest>,<signers ;-joined>,<tags ;-joined>,<prev>,<digest>,<payload hex>
    /// ```
    pub fn export(&self) -> String {
        let mut out = format!(
            "ledger,v1,{},{},{},{}\n",
            self.n,
            self.f,
            self.key_seed,
            self.genesis.to_hex()
        );
        for b in &self.blocks {
            let _ = writeln!(out, "{}", b.to_line());
        }
        out
    }

    /// `proposer,period,kind` rows.
    pub fn verdicts_csv(&self) -> String {
        let mut rows: Vec<(u64, OperatorId, &str)> = self
            .all_verdicts()
            .map(|v| (v.period(), v.proposer(), v.kind()))
            .collect();
        rows.sort();
        let mut out = String::from("period,proposer,kind\n");
        for (period, proposer, kind) in rows {
            let _ = writeln!(out, "{period},{proposer},{kind}");
        }
        out
    }
}

fn parse_block_line(line: &str) -> Result<Block, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 9 || fields[0] != "block" {
        return Err("expected 9 comma-separated fields starting with 'block'".into());
    }
    let period: u64 = fields[1].parse().map_err(|_| "bad period")?;
    let proposer = OperatorId(fields[2].parse().map_err(|_| "bad proposer")?);
    let payload = hex::decode(fields[8]).map_err(|_| "bad payload hex")?;
    let claimed_payload = Digest32::from_hex(fields[3]).ok_or("bad payload digest")?;
    if claimed_payload != payload_digest(&payload) {
        return Err("payload digest mismatch".into());
    }
    let mut cert = QuorumCertificate::new(claimed_payload);
    if !fields[4].is_empty() || !fields[5].is_empty() {
        let signers: Vec<&str> = fields[4].split(';').collect();
        let tags: Vec<&str> = fields[5].split(';').collect();
        if signers.len() != tags.len() {
            return Err("signer and tag counts differ".into());
        }
        for (s, t) in signers.iter().zip(tags) {
            let id = OperatorId(s.parse().map_err(|_| "bad signer")?);
            cert.add_vote(id, Tag::from_hex(t).ok_or("bad tag")?);
        }
    }
    let prev = Digest32::from_hex(fields[6]).ok_or("bad previous digest")?;
    let digest = Digest32::from_hex(fields[7]).ok_or("bad digest")?;
    Ok(Block {
        period,
        proposer,
        payload,
        cert,
        prev,
        digest,
    })
}

/// Verifies an exported ledger end to end and reports the first broken block.
pub fn audit(text: &str) -> Result<AuditReport, AuditError> {
    let header_err = |s: &str| AuditError::Header(s.to_string());
    if !text.ends_with('\n') {
        return Err(header_err("missing trailing newline"));
    }
    let mut lines = text[..text.len() - 1].split('\n');
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    if header.len() != 6 || header[0] != "ledger" || header[1] != "v1" {
        return Err(header_err(
            "expected 'ledger,v1,<N>,<f>,<key seed>,<genesis>'",
        ));
    }
    let n: usize = header[2].parse().map_err(|_| header_err("bad N"))?;
    let f: usize = header[3].parse().map_err(|_| header_err("bad f"))?;
    let key_seed: u64 = header[4].parse().map_err(|_| header_err("bad key seed"))?;
    let params = NetworkParams::new(n, f).map_err(|e| AuditError::Header(e.to_string()))?;
    let mut ledger = TensorLedger::new(&params, key_seed, LedgerMode::Exact);
    let expected_header = format!(
        "ledger,v1,{},{},{},{}",
        n,
        f,
        key_seed,
        ledger.genesis.to_hex()
    );
    if header.join(",") != expected_header {
        return Err(header_err(
            "header is not canonical or genesis digest differs",
        ));
    }
    for (i, line) in lines.enumerate() {
        let fail = |reason: String| AuditError::Block {
            block: i + 1,
            line: i + 2,
            reason,
        };
        let block = parse_block_line(line).map_err(fail)?;
        if block.to_line() != line {
            return Err(fail("line is not in canonical form".into()));
        }
        ledger.append(block).map_err(|e| fail(e.to_string()))?;
    }
    Ok(AuditReport {
        blocks: ledger.blocks.len(),
        head: ledger.head(),
        chain: ledger.blocks,
    })
}

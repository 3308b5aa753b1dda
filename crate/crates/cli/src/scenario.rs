//! Consensus scenarios: measure every tensor element, agree on it, commit
//! the period's tensor to the ledger, then retrieve it as a third party would.

use std::fmt::Write as _;

use leo_consensus::approx_ba::{run_approx, ApproxConfig};
use leo_consensus::binary_ba::{run_binary_ba, BinaryConfig};
use leo_consensus::checks::{self, Violation};
use leo_consensus::exact_mv::{agree_exact, ExactConfig};
use leo_consensus::ledger::{
    max_deviation, retrieve_approx, retrieve_exact, LedgerMode, PeriodOutcome, PeriodSetup,
    TensorLedger,
};
use leo_consensus::model::{
    binarize, derive_seed, observe, operators, Dims, GroundTruth, Measurement, NetworkParams,
    OperatorId, ResourceBlock, UsageTensor, ValueProfile,
};
use leo_consensus::netsim::{AdversaryStrategy, Behavior};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ConfigError, ProtocolKind, ScenarioConfig};
use crate::Artifacts;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorBytes {
    pub operator: u32,
    pub sent: u64,
    pub received: u64,
    pub exchanged: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodSummary {
    pub period: u64,
    pub committed: bool,
    pub proposer: Option<u32>,
    pub attempts: usize,
    pub verdicts: Vec<String>,
    pub retrieval_ok: bool,
    pub retrieval_max_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusSummary {
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub n: usize,
    pub f: usize,
    pub behavior: Option<String>,
    pub rotating: bool,
    pub instances: u64,
    pub total_rounds: u64,
    pub max_rounds: u32,
    pub bytes: Vec<OperatorBytes>,
    pub max_bytes_sent: u64,
    pub max_bytes_received: u64,
    pub max_bytes_exchanged: u64,
    pub periods: Vec<PeriodSummary>,
    pub blocks: usize,
    pub ledger_head: String,
    pub violations: Vec<String>,
}

pub struct ConsensusRun {
    pub summary: ConsensusSummary,
    pub artifacts: Artifacts,
    pub violations: Vec<Violation>,
}

/// Agreement result of one element, as seen by each operator.
struct Agreed {
    rounds: u32,
    /// One entry per operator; Byzantine entries are placeholders.
    values: Vec<f64>,
    sent: Vec<u64>,
    received: Vec<u64>,
    transcript: String,
    violations: Vec<Violation>,
    spread_rows: Vec<(u32, f64, f64, usize)>,
}

fn truth_values(cfg: &ScenarioConfig, dims: Dims, period: u64, seed: u64) -> Vec<f64> {
    let t = &cfg.tensor;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "activity", period));
    let mut values: Vec<f64> = (0..dims.len())
        .map(|_| {
            if rng.random::<f64>() < t.activity {
                t.active_rssi
            } else {
                t.idle_rssi
            }
        })
        .collect();
    for e in t.events.iter().filter(|e| e.period == period) {
        let key = leo_consensus::model::TensorKey {
            region: e.region,
            subband: e.subband,
            operator: OperatorId(e.operator),
        };
        values[dims.flat_index(&key)] = e.rssi;
    }
    values
}

fn run_element(
    cfg: &ScenarioConfig,
    params: NetworkParams,
    strategy: &AdversaryStrategy,
    instance: u64,
    readings: &[Measurement],
    seed: u64,
    keep_transcript: bool,
) -> Agreed {
    let proto = cfg.protocol.as_ref().expect("validated");
    let n = params.n;
    let failure = |e: String| Agreed {
        rounds: 0,
        values: vec![0.0; n],
        sent: vec![0; n],
        received: vec![0; n],
        transcript: String::new(),
        violations: vec![Violation {
            property: "termination",
            detail: format!("instance {instance}: {e}"),
        }],
        spread_rows: Vec::new(),
    };
    macro_rules! bytes {
        ($bus:expr) => {
            (
                operators(n).map(|i| $bus.bytes_sent(i)).collect(),
                operators(n).map(|i| $bus.bytes_received(i)).collect(),
            )
        };
    }
    let tag = |mut v: Vec<Violation>| {
        for x in &mut v {
            x.detail = format!("instance {instance}: {}", x.detail);
        }
        v
    };
    match proto.kind {
        ProtocolKind::Binary => {
            let bits = readings
                .iter()
                .map(|m| binarize(m, params.r_threshold))
                .collect();
            let mut c = BinaryConfig::new(params, bits, seed).with_strategy(strategy.clone());
            c.instance = instance;
            c.iteration_cap = proto.iteration_cap;
            c.frame = proto.frame_bytes;
            match run_binary_ba(&c) {
                Err(e) => failure(e.to_string()),
                Ok(out) => {
                    let (sent, received) = bytes!(out.bus);
                    Agreed {
                        rounds: out.rounds,
                        values: out
                            .outputs
                            .iter()
                            .map(|o| if *o == Some(true) { 1.0 } else { 0.0 })
                            .collect(),
                        sent,
                        received,
                        transcript: if keep_transcript {
                            out.bus.transcript_csv()
                        } else {
                            String::new()
                        },
                        violations: tag(checks::binary(&c, &out)),
                        spread_rows: Vec::new(),
                    }
                }
            }
        }
        ProtocolKind::Exact => {
            let mut c =
                ExactConfig::new(params, values(readings), seed).with_strategy(strategy.clone());
            c.instance = instance;
            c.aggregation = cfg.aggregation();
            c.frame = proto.frame_bytes;
            match agree_exact(&c) {
                Err(e) => failure(e.to_string()),
                Ok(out) => {
                    let (sent, received) = bytes!(out.bus);
                    Agreed {
                        rounds: out.rounds,
                        values: out.outputs.clone(),
                        sent,
                        received,
                        transcript: if keep_transcript {
                            out.bus.transcript_csv()
                        } else {
                            String::new()
                        },
                        violations: tag(checks::exact(&c, &out)),
                        spread_rows: Vec::new(),
                    }
                }
            }
        }
        ProtocolKind::Approx => {
            let mut c =
                ApproxConfig::new(params, values(readings), seed).with_strategy(strategy.clone());
            c.instance = instance;
            c.frame = proto.frame_bytes;
            match run_approx(&c) {
                Err(e) => failure(e.to_string()),
                Ok(out) => {
                    let (sent, received) = bytes!(out.bus);
                    Agreed {
                        rounds: out.rounds,
                        values: out.outputs.clone(),
                        sent,
                        received,
                        transcript: if keep_transcript {
                            out.bus.transcript_csv()
                        } else {
                            String::new()
                        },
                        violations: tag(checks::approx(&c, &out)),
                        spread_rows: out
                            .spread
                            .iter()
                            .map(|r| (r.round, r.spread_in, r.spread_out, r.updated))
                            .collect(),
                    }
                }
            }
        }
    }
}

fn values(readings: &[Measurement]) -> Vec<f64> {
    readings.iter().map(|m| m.value).collect()
}

/// What a Byzantine operator hands a third party asking for a tensor.
fn byzantine_response(local: &UsageTensor, strategy: &AdversaryStrategy) -> Option<UsageTensor> {
    if strategy.behavior == Behavior::Crash {
        return None;
    }
    let real = local.profile() == ValueProfile::Real;
    let values: Vec<f64> = local
        .to_dense()
        .iter()
        .map(|x| {
            if real {
                x + strategy.lie_offset
            } else {
                1.0 - x
            }
        })
        .collect();
    UsageTensor::from_dense(local.period(), local.dims(), local.profile(), &values).ok()
}

pub fn run_consensus(cfg: &ScenarioConfig) -> Result<ConsensusRun, ConfigError> {
    cfg.validate_consensus()?;
    let params = cfg.params()?;
    let strategy = cfg.strategy(&params)?;
    let proto = cfg.protocol()?.clone();
    let seed = cfg.seed;
    let dims = cfg.dims(&params);
    let n = params.n;
    let profile = match proto.kind {
        ProtocolKind::Binary => ValueProfile::Binary,
        _ => ValueProfile::Real,
    };
    let mode = match proto.kind {
        ProtocolKind::Approx => LedgerMode::Approx {
            alpha: params.alpha,
        },
        _ => LedgerMode::Exact,
    };
    let honest: Vec<OperatorId> = operators(n).filter(|id| strategy.is_honest(*id)).collect();
    let mut ledger = TensorLedger::new(&params, derive_seed(seed, "ledger-keys", 0), mode);

    let mut violations = Vec::new();
    let mut sent = vec![0u64; n];
    let mut received = vec![0u64; n];
    let mut total_rounds = 0u64;
    let mut max_rounds = 0u32;
    let mut instances_csv =
        String::from("period,instance,region,subband,target,truth,rounds,honest_min,honest_max\n");
    let mut spread_csv = String::from("period,instance,round,spread_in,spread_out,updated\n");
    let mut periods_csv = String::from("period,outcome,proposer,attempts,verdicts\n");
    let mut retrieval_csv = String::from("period,exact_match,max_deviation\n");
    let mut period_summaries = Vec::new();
    let mut first_transcript = None;
    let mut violation_transcript = None;

    for period in 1..=cfg.tensor.periods {
        let truth = truth_values(cfg, dims, period, seed);
        let mut columns = vec![vec![0.0; dims.len()]; n];
        for (k, &g) in truth.iter().enumerate() {
            let key = dims.key_at(k);
            let instance = (period - 1) * dims.len() as u64 + k as u64;
            let gt = GroundTruth {
                block: ResourceBlock {
                    region: key.region,
                    subband: key.subband,
                    period,
                },
                target_operator: key.operator,
                value: g,
            };
            let noise = derive_seed(seed, "noise", instance);
            let readings: Vec<Measurement> = operators(n)
                .map(|i| {
                    observe(
                        &gt,
                        params.epsilon,
                        derive_seed(noise, "reader", i.0 as u64),
                    )
                })
                .collect();
            let keep = instance == 0 && cfg.write_transcript();
            let a = run_element(
                cfg,
                params,
                &strategy,
                instance,
                &readings,
                derive_seed(seed, "instance", instance),
                keep,
            );
            if keep {
                first_transcript = Some(a.transcript.clone());
            }
            if !a.violations.is_empty() && violation_transcript.is_none() {
                let redo = run_element(
                    cfg,
                    params,
                    &strategy,
                    instance,
                    &readings,
                    derive_seed(seed, "instance", instance),
                    true,
                );
                violation_transcript = Some(redo.transcript);
            }
            violations.extend(a.violations);
            total_rounds += a.rounds as u64;
            max_rounds = max_rounds.max(a.rounds);
            for i in 0..n {
                sent[i] += a.sent[i];
                received[i] += a.received[i];
                columns[i][k] = a.values[i];
            }
            let hv: Vec<f64> = honest.iter().map(|id| a.values[id.index()]).collect();
            let lo = hv.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = hv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(
                instances_csv,
                "{period},{instance},{},{},{},{g},{},{lo},{hi}",
                key.region, key.subband, key.operator, a.rounds
            );
            for (round, sin, sout, upd) in a.spread_rows {
                let _ = writeln!(spread_csv, "{period},{instance},{round},{sin},{sout},{upd}");
            }
        }

        // Byzantine operators start from a copy of the first honest tensor.
        let reference = honest.first().map_or(0, |id| id.index());
        let locals: Vec<UsageTensor> = operators(n)
            .map(|id| {
                let col = if strategy.is_honest(id) {
                    &columns[id.index()]
                } else {
                    &columns[reference]
                };
                UsageTensor::from_dense(period, dims, profile, col)
                    .expect("agreed values are valid tensor entries")
            })
            .collect();
        let report = ledger
            .run_period(PeriodSetup {
                period,
                locals: &locals,
                strategy: &strategy,
                seed: derive_seed(seed, "ledger", period),
            })
            .expect("locals match the network size");
        violations.extend(checks::ledger_period(
            &ledger, &report, &locals, &strategy, mode,
        ));

        let (committed, proposer) = match report.outcome {
            PeriodOutcome::Committed { proposer, .. } => (true, Some(proposer.0)),
            PeriodOutcome::Stalled => (false, None),
        };
        let verdicts: Vec<String> = report
            .verdicts
            .iter()
            .map(|v| format!("{}:{}", v.kind(), v.proposer()))
            .collect();
        let _ = writeln!(
            periods_csv,
            "{period},{},{},{},{}",
            if committed { "committed" } else { "stalled" },
            proposer.map_or(String::new(), |p| p.to_string()),
            report.attempts.len(),
            verdicts.join(";")
        );

        let mut retrieval_ok = true;
        let mut deviation = None;
        if let Some(block) = ledger.blocks().iter().find(|b| b.period == period) {
            let stored = block.tensor().expect("committed tensors parse");
            let responses: Vec<(OperatorId, Option<UsageTensor>)> = operators(n)
                .map(|id| {
                    let t = &locals[id.index()];
                    let r = if strategy.is_honest(id) {
                        Some(t.clone())
                    } else {
                        byzantine_response(t, &strategy)
                    };
                    (id, r)
                })
                .collect();
            match mode {
                LedgerMode::Exact => {
                    let present: Vec<(OperatorId, UsageTensor)> = responses
                        .iter()
                        .filter_map(|(id, t)| t.clone().map(|t| (*id, t)))
                        .collect();
                    retrieval_ok = retrieve_exact(&present, params.f).is_ok_and(|t| t == stored);
                }
                LedgerMode::Approx { alpha } => match retrieve_approx(&responses, n, params.f) {
                    Ok(t) => {
                        let d = max_deviation(&t, &stored).unwrap_or(f64::INFINITY);
                        deviation = Some(d);
                        retrieval_ok = d <= alpha + params.zeta;
                    }
                    Err(_) => retrieval_ok = false,
                },
            }
            if !retrieval_ok {
                violations.push(Violation {
                    property: "retrieval",
                    detail: format!(
                        "period {period}: retrieved tensor does not match the committed one"
                    ),
                });
            }
        }
        let _ = writeln!(
            retrieval_csv,
            "{period},{},{}",
            if committed {
                retrieval_ok.to_string()
            } else {
                String::new()
            },
            deviation.map_or(String::new(), |d| d.to_string())
        );
        period_summaries.push(PeriodSummary {
            period,
            committed,
            proposer,
            attempts: report.attempts.len(),
            verdicts,
            retrieval_ok,
            retrieval_max_deviation: deviation,
        });
    }

    let bytes: Vec<OperatorBytes> = operators(n)
        .map(|id| OperatorBytes {
            operator: id.0,
            sent: sent[id.index()],
            received: received[id.index()],
            exchanged: sent[id.index()] + received[id.index()],
        })
        .collect();
    let mut bytes_csv = String::from("operator,sent,received,exchanged\n");
    for b in &bytes {
        let _ = writeln!(
            bytes_csv,
            "{},{},{},{}",
            b.operator, b.sent, b.received, b.exchanged
        );
    }
    let summary = ConsensusSummary {
        protocol: proto.kind,
        seed,
        n,
        f: params.f,
        behavior: cfg.adversary.as_ref().map(|a| a.behavior.clone()),
        rotating: strategy.controlled.is_rotating(),
        instances: cfg.tensor.periods * dims.len() as u64,
        total_rounds,
        max_rounds,
        max_bytes_sent: bytes.iter().map(|b| b.sent).max().unwrap_or(0),
        max_bytes_received: bytes.iter().map(|b| b.received).max().unwrap_or(0),
        max_bytes_exchanged: bytes.iter().map(|b| b.exchanged).max().unwrap_or(0),
        bytes,
        periods: period_summaries,
        blocks: ledger.blocks().len(),
        ledger_head: ledger.head().to_hex(),
        violations: violations.iter().map(ToString::to_string).collect(),
    };

    let mut artifacts = Artifacts::default();
    artifacts.insert("instances.csv", instances_csv);
    if proto.kind == ProtocolKind::Approx {
        artifacts.insert("spread.csv", spread_csv);
    }
    artifacts.insert("bytes.csv", bytes_csv);
    artifacts.insert("periods.csv", periods_csv);
    artifacts.insert("verdicts.csv", ledger.verdicts_csv());
    artifacts.insert("retrieval.csv", retrieval_csv);
    artifacts.insert("ledger.txt", ledger.export());
    if let Some(t) = first_transcript {
        artifacts.insert("transcript.csv", t);
    }
    if let Some(t) = violation_transcript {
        artifacts.insert("violation_transcript.csv", t);
    }
    artifacts.insert("summary.json", crate::to_json(&summary));
    artifacts.insert("summary.txt", summary_text(&summary));
    Ok(ConsensusRun {
        summary,
        artifacts,
        violations,
    })
}

fn summary_text(s: &ConsensusSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "protocol      {:?}", s.protocol);
    let _ = writeln!(out, "operators     N={} f={}", s.n, s.f);
    let _ = writeln!(
        out,
        "adversary     {}{}",
        s.behavior.as_deref().unwrap_or("none"),
        if s.rotating { " (rotating)" } else { "" }
    );
    let _ = writeln!(out, "seed          {}", s.seed);
    let _ = writeln!(out, "instances     {}", s.instances);
    let _ = writeln!(
        out,
        "rounds        {} total, {} max per instance",
        s.total_rounds, s.max_rounds
    );
    let _ = writeln!(
        out,
        "bytes/op      sent {} received {} exchanged {} (max over operators)",
        s.max_bytes_sent, s.max_bytes_received, s.max_bytes_exchanged
    );
    let committed = s.periods.iter().filter(|p| p.committed).count();
    let _ = writeln!(
        out,
        "periods       {committed}/{} committed, {} blocks",
        s.periods.len(),
        s.blocks
    );
    for p in &s.periods {
        if !p.verdicts.is_empty() {
            let _ = writeln!(
                out,
                "verdicts      period {}: {}",
                p.period,
                p.verdicts.join(", ")
            );
        }
    }
    let _ = writeln!(out, "ledger head   {}", s.ledger_head);
    if s.violations.is_empty() {
        let _ = writeln!(out, "properties    all hold");
    } else {
        let _ = writeln!(out, "properties    {} violations", s.violations.len());
        for v in s.violations.iter().take(20) {
            let _ = writeln!(out, "  {v}");
        }
    }
    out
}

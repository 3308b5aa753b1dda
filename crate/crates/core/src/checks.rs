//! Property checks over protocol outcomes. Each returns every violation found,
//! so an empty list means the run behaved.

use std::collections::BTreeMap;
use std::fmt;

use crate::approx_ba::{ApproxConfig, ApproxOutcome};
use crate::binary_ba::{BinaryConfig, BinaryOutcome};
use crate::exact_mv::{ExactConfig, ExactOutcome};
use crate::ledger::{max_deviation, LedgerMode, PeriodOutcome, PeriodReport, TensorLedger};
use crate::model::{OperatorId, UsageTensor};
use crate::netsim::AdversaryStrategy;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub property: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.property, self.detail)
    }
}

fn v(property: &'static str, detail: impl Into<String>) -> Violation {
    Violation {
        property,
        detail: detail.into(),
    }
}

/// Agreement, validity, and first-iteration halting on unanimous input.
pub fn binary(cfg: &BinaryConfig, out: &BinaryOutcome) -> Vec<Violation> {
    let mut found = Vec::new();
    let outputs: Vec<(OperatorId, Option<bool>)> = out
        .honest
        .iter()
        .map(|id| (*id, out.outputs[id.index()]))
        .collect();
    if let Some((id, _)) = outputs.iter().find(|(_, o)| o.is_none()) {
        found.push(v("termination", format!("operator {id} has no output")));
        return found;
    }
    if out.agreed().is_none() {
        found.push(v(
            "agreement",
            format!("honest outputs differ: {outputs:?}"),
        ));
    }
    let mut honest_inputs = out.honest.iter().map(|id| cfg.inputs[id.index()]);
    if let Some(first) = honest_inputs.next() {
        if honest_inputs.all(|b| b == first) {
            if let Some((id, _)) = outputs.iter().find(|(_, o)| *o != Some(first)) {
                found.push(v(
                    "validity",
                    format!("operator {id} decided against unanimous {first}"),
                ));
            }
            for id in &out.honest {
                if out.halts[id.index()].is_none_or(|h| h.iteration != 1) {
                    found.push(v(
                        "fast-halt",
                        format!("operator {id} did not halt in iteration 1"),
                    ));
                }
            }
        }
    }
    found
}

/// View consistency, honest-slot validity, round count, chain lengths, and
/// the aggregate lying inside the honest input range.
pub fn exact(cfg: &ExactConfig, out: &ExactOutcome) -> Vec<Violation> {
    let mut found = Vec::new();
    let f = cfg.params.f;
    match out.common_view() {
        None => found.push(v("view-consistency", "honest views differ")),
        Some(view) => {
            for id in &out.honest {
                let slot = view.slots()[id.index()];
                if slot != Some(cfg.inputs[id.index()]) {
                    found.push(v("slot-validity", format!("slot {id} is {slot:?}")));
                }
            }
        }
    }
    if out.rounds != f as u32 + 1 {
        found.push(v(
            "round-count",
            format!("{} rounds, expected {}", out.rounds, f + 1),
        ));
    }
    if let Some((round, len)) = out.accepted.iter().find(|(r, l)| *r as usize != *l) {
        found.push(v(
            "chain-length",
            format!("round {round} message with {len} signatures"),
        ));
    }
    let honest: Vec<f64> = out.honest.iter().map(|id| cfg.inputs[id.index()]).collect();
    let lo = honest.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = honest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (id, o) in out.honest.iter().zip(out.honest_outputs()) {
        if !(lo..=hi).contains(&o) {
            found.push(v(
                "median-range",
                format!("operator {id} output {o} outside [{lo}, {hi}]"),
            ));
        }
    }
    found
}

/// Per-round contraction, final spread, and range containment.
pub fn approx(cfg: &ApproxConfig, out: &ApproxOutcome) -> Vec<Violation> {
    let mut found = Vec::new();
    if let Some(c) = out.c {
        for r in out.spread.iter().filter(|r| !r.shrinks_by(c)) {
            found.push(v(
                "contraction",
                format!(
                    "round {}: {} -> {} with c = {c}",
                    r.round, r.spread_in, r.spread_out
                ),
            ));
        }
    }
    let final_spread = out.output_spread();
    if final_spread > cfg.params.zeta * (1.0 + 1e-12) {
        found.push(v(
            "final-spread",
            format!("{final_spread} > zeta {}", cfg.params.zeta),
        ));
    }
    let init = out.honest_initials();
    let lo = init.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = init.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (id, o) in out.honest.iter().zip(out.honest_outputs()) {
        if !(lo..=hi).contains(&o) {
            found.push(v(
                "range",
                format!("operator {id} output {o} outside [{lo}, {hi}]"),
            ));
        }
    }
    for id in &out.honest {
        let planned = out.planned[id.index()].unwrap_or(0);
        let done = out.traces[id.index()].len() as u32;
        if done > planned.max(1) {
            found.push(v(
                "round-budget",
                format!("operator {id} ran {done} rounds, planned {planned}"),
            ));
        }
    }
    found
}

/// Safety of one ledger period: a single certifiable digest, verdicts that
/// verify and never name an honest proposer, and committed values backed by
/// honest locals.
pub fn ledger_period(
    ledger: &TensorLedger,
    report: &PeriodReport,
    locals: &[UsageTensor],
    strategy: &AdversaryStrategy,
    mode: LedgerMode,
) -> Vec<Violation> {
    let mut found = Vec::new();
    let q = ledger.quorum();
    let certifiable = report.certifiable(ledger.registry(), q);
    if certifiable.len() > 1 {
        found.push(v(
            "conflicting-certificates",
            format!("period {}: {} digests", report.period, certifiable.len()),
        ));
    }
    for verdict in &report.verdicts {
        if let Err(e) = verdict.verify(ledger.registry(), q) {
            found.push(v(
                "verdict-evidence",
                format!("period {}: {e}", report.period),
            ));
        }
        if strategy.is_honest(verdict.proposer()) {
            found.push(v(
                "honest-convicted",
                format!("period {}: operator {}", report.period, verdict.proposer()),
            ));
        }
    }
    if let PeriodOutcome::Committed { .. } = report.outcome {
        let Some(block) = ledger.blocks().iter().find(|b| b.period == report.period) else {
            found.push(v(
                "commit",
                format!(
                    "period {} reported committed but has no block",
                    report.period
                ),
            ));
            return found;
        };
        let Ok(tensor) = block.tensor() else {
            found.push(v("commit", "committed payload does not parse"));
            return found;
        };
        let honest: Vec<&UsageTensor> = locals
            .iter()
            .enumerate()
            .filter(|(i, _)| strategy.is_honest(OperatorId::from_index(*i)))
            .map(|(_, t)| t)
            .collect();
        let f = ledger.registry().n() - q;
        match mode {
            LedgerMode::Exact => {
                let bytes = tensor.canonical_bytes();
                let backers = honest
                    .iter()
                    .filter(|t| t.canonical_bytes() == bytes)
                    .count();
                if backers < f + 1 {
                    found.push(v(
                        "exact-backing",
                        format!("period {}: {backers} honest copies", report.period),
                    ));
                }
            }
            LedgerMode::Approx { alpha } => {
                let dense = tensor.to_dense();
                let columns: Vec<Vec<f64>> = honest.iter().map(|t| t.to_dense()).collect();
                for (k, x) in dense.iter().enumerate() {
                    let near = columns.iter().filter(|c| (c[k] - x).abs() <= alpha).count();
                    if near < f + 1 {
                        found.push(v(
                            "alpha-backing",
                            format!(
                                "period {} element {k}: {x} within {alpha} of {near} honest values",
                                report.period
                            ),
                        ));
                    }
                }
                if honest.iter().all(|t| max_deviation(t, &tensor).is_none()) {
                    found.push(v("alpha-backing", "committed tensor has a different shape"));
                }
            }
        }
    }
    found
}

/// Counts violations by property name.
pub fn tally(violations: &[Violation]) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    for x in violations {
        *out.entry(x.property).or_default() += 1;
    }
    out
}

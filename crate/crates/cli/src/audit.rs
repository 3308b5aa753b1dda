//! Offline verification of an exported ledger and lookups into it.

use std::fmt::Write as _;

use leo_consensus::ledger::{audit, AuditError, AuditReport};
use leo_consensus::model::{OperatorId, TensorKey};

/// A third-party request for one committed value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub period: u64,
    pub key: TensorKey,
}

impl std::str::FromStr for Query {
    type Err = String;

    /// `period:region:subband:operator`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || format!("expected period:region:subband:operator, got '{s}'");
        if parts.len() != 4 {
            return Err(bad());
        }
        let num = |i: usize| parts[i].parse::<u64>().map_err(|_| bad());
        Ok(Query {
            period: num(0)?,
            key: TensorKey {
                region: num(1)? as u32,
                subband: num(2)? as u32,
                operator: OperatorId(num(3)? as u32),
            },
        })
    }
}

/// Verifies `text` and answers `queries` from the verified blocks.
pub fn audit_export(text: &str, queries: &[Query]) -> Result<(AuditReport, String), AuditError> {
    let report = audit(text)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "verified {} blocks, head {}",
        report.blocks,
        report.head.to_hex()
    );
    if queries.is_empty() {
        return Ok((report, out));
    }
    for q in queries {
        match report
            .chain
            .iter()
            .find(|b| b.period == q.period)
            .and_then(|b| b.tensor().ok())
        {
            Some(t) if t.dims().contains(&q.key) => {
                let _ = writeln!(out, "period {} {} = {}", q.period, q.key, t.get(&q.key));
            }
            Some(_) => {
                let _ = writeln!(out, "period {} {}: outside the tensor", q.period, q.key);
            }
            None => {
                let _ = writeln!(out, "period {}: not committed", q.period);
            }
        }
    }
    Ok((report, out))
}

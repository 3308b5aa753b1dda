//! Domain vocabulary shared by the protocol and simulation modules: operators,
//! network parameters, resource blocks, usage tensors and noisy measurements.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Operator identifier. Operators are numbered `1..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OperatorId(pub u32);

impl OperatorId {
    pub fn from_index(index: usize) -> Self {
        OperatorId(index as u32 + 1)
    }

    /// Zero-based position of this operator in per-operator arrays.
    pub fn index(self) -> usize {
        debug_assert!(self.0 >= 1, "operator ids start at 1");
        self.0 as usize - 1
    }
}

impl fmt::Display for OperatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// All operator ids of an `n`-operator network, in ascending order.
pub fn operators(n: usize) -> impl Iterator<Item = OperatorId> + Clone {
    (0..n).map(OperatorId::from_index)
}

/// `N - f` votes, which equals `2f + 1` at `N = 3f + 1`.
pub fn quorum(n: usize, f: usize) -> usize {
    n - f
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("operator count must be positive")]
    NoOperators,
    #[error("N = {n} cannot tolerate f = {f} Byzantine operators (need N >= 3f + 1)")]
    TooFewOperators { n: usize, f: usize },
    #[error("{name} must be {rule}, got {value}")]
    OutOfRange {
        name: &'static str,
        rule: &'static str,
        value: f64,
    },
}

/// Size and tolerance parameters of one operator network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkParams {
    pub n: usize,
    pub f: usize,
    /// Measurement error bound: honest readings lie in `(G - epsilon, G + epsilon)`.
    pub epsilon: f64,
    /// Target margin between honest outputs of approximate agreement.
    pub zeta: f64,
    /// Honest range accepted by the approximate ledger.
    pub alpha: f64,
    /// RSSI decision threshold used to binarize measurements.
    pub r_threshold: f64,
}

impl NetworkParams {
    /// Parameters for `n` operators tolerating `f` faults, with unit noise,
    /// `zeta = 0.1`, `alpha = 1.0` and a -85 dBm threshold.
    pub fn new(n: usize, f: usize) -> Result<Self, ParamsError> {
        let params = NetworkParams {
            n,
            f,
            epsilon: 1.0,
            zeta: 0.1,
            alpha: 1.0,
            r_threshold: -85.0,
        };
        params.validate()?;
        Ok(params)
    }

    /// `n` operators with the largest tolerable `f = floor((n - 1) / 3)`.
    pub fn max_tolerance(n: usize) -> Result<Self, ParamsError> {
        Self::new(n, n.saturating_sub(1) / 3)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self, ParamsError> {
        self.epsilon = epsilon;
        self.validate().map(|()| self)
    }

    pub fn with_zeta(mut self, zeta: f64) -> Result<Self, ParamsError> {
        self.zeta = zeta;
        self.validate().map(|()| self)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self, ParamsError> {
        self.alpha = alpha;
        self.validate().map(|()| self)
    }

    pub fn with_threshold(mut self, r_threshold: f64) -> Result<Self, ParamsError> {
        self.r_threshold = r_threshold;
        self.validate().map(|()| self)
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.n == 0 {
            return Err(ParamsError::NoOperators);
        }
        if self.n < 3 * self.f + 1 {
            return Err(ParamsError::TooFewOperators {
                n: self.n,
                f: self.f,
            });
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(ParamsError::OutOfRange {
                name: "epsilon",
                rule: "finite and >= 0",
                value: self.epsilon,
            });
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(ParamsError::OutOfRange {
                name: "zeta",
                rule: "finite and > 0",
                value: self.zeta,
            });
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ParamsError::OutOfRange {
                name: "alpha",
                rule: "finite and > 0",
                value: self.alpha,
            });
        }
        if !self.r_threshold.is_finite() {
            return Err(ParamsError::OutOfRange {
                name: "r_threshold",
                rule: "finite",
                value: self.r_threshold,
            });
        }
        Ok(())
    }

    /// Supermajority size: `2f + 1` when `N = 3f + 1`, and `N - f` in
    /// general so that any two quorums share an honest operator.
    pub fn quorum(&self) -> usize {
        quorum(self.n, self.f)
    }

    pub fn operators(&self) -> impl Iterator<Item = OperatorId> + Clone {
        operators(self.n)
    }
}

/// One sub-band in one region over one period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourceBlock {
    pub region: u32,
    pub subband: u32,
    pub period: u64,
}

impl ResourceBlock {
    pub fn key(&self, operator: OperatorId) -> TensorKey {
        TensorKey {
            region: self.region,
            subband: self.subband,
            operator,
        }
    }
}

/// Tensor dimensions `R x F x N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub regions: u32,
    pub subbands: u32,
    pub operators: u32,
}

impl Dims {
    pub fn len(&self) -> usize {
        self.regions as usize * self.subbands as usize * self.operators as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &TensorKey) -> bool {
        (1..=self.regions).contains(&key.region)
            && (1..=self.subbands).contains(&key.subband)
            && (1..=self.operators).contains(&key.operator.0)
    }

    /// Row-major position of `key` (region, then sub-band, then operator).
    pub fn flat_index(&self, key: &TensorKey) -> usize {
        let r = key.region as usize - 1;
        let s = key.subband as usize - 1;
        let o = key.operator.index();
        (r * self.subbands as usize + s) * self.operators as usize + o
    }

    pub fn key_at(&self, flat: usize) -> TensorKey {
        let ops = self.operators as usize;
        let subs = self.subbands as usize;
        TensorKey {
            region: (flat / (ops * subs)) as u32 + 1,
            subband: ((flat / ops) % subs) as u32 + 1,
            operator: OperatorId::from_index(flat % ops),
        }
    }
}

/// Tensor coordinate. Ordering is (region, sub-band, operator).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TensorKey {
    pub region: u32,
    pub subband: u32,
    pub operator: OperatorId,
}

impl fmt::Display for TensorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.region, self.subband, self.operator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueProfile {
    /// Every stored value is 0 or 1.
    Binary,
    Real,
}

impl ValueProfile {
    fn as_str(self) -> &'static str {
        match self {
            ValueProfile::Binary => "binary",
            ValueProfile::Real => "real",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("key {key} outside dims {regions}x{subbands}x{operators}", regions = dims.regions, subbands = dims.subbands, operators = dims.operators)]
    OutOfBounds { key: TensorKey, dims: Dims },
    #[error("binary tensor cannot hold value {0}")]
    NotBinary(f64),
    #[error("tensor values must be finite, got {0}")]
    NotFinite(f64),
    #[error("tensor shapes differ: {0}")]
    Mismatch(String),
    #[error("canonical tensor line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Sparse `R x F x N` usage tensor for one period. Absent keys hold the
/// default value 0 ("default allocation, nothing to report").
#[derive(Debug, Clone, PartialEq)]
pub struct UsageTensor {
    period: u64,
    dims: Dims,
    profile: ValueProfile,
    entries: BTreeMap<TensorKey, f64>,
}

impl UsageTensor {
    pub fn new(period: u64, dims: Dims, profile: ValueProfile) -> Self {
        UsageTensor {
            period,
            dims,
            profile,
            entries: BTreeMap::new(),
        }
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn profile(&self) -> ValueProfile {
        self.profile
    }

    pub fn get(&self, key: &TensorKey) -> f64 {
        self.entries.get(key).copied().unwrap_or(0.0)
    }

    /// Stores `value` at `key`. Storing 0 clears the entry, so two tensors
    /// with equal values always have equal canonical bytes.
    pub fn set(&mut self, key: TensorKey, value: f64) -> Result<(), TensorError> {
        if !self.dims.contains(&key) {
            return Err(TensorError::OutOfBounds {
                key,
                dims: self.dims,
            });
        }
        if !value.is_finite() {
            return Err(TensorError::NotFinite(value));
        }
        if self.profile == ValueProfile::Binary && value != 0.0 && value != 1.0 {
            return Err(TensorError::NotBinary(value));
        }
        if value == 0.0 {
            self.entries.remove(&key);
        } else {
            self.entries.insert(key, value);
        }
        Ok(())
    }

    /// Non-default entries in key order.
    pub fn entries(&self) -> impl Iterator<Item = (TensorKey, f64)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    pub fn keys(&self) -> impl Iterator<Item = TensorKey> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn same_shape(&self, other: &UsageTensor) -> bool {
        self.period == other.period && self.dims == other.dims
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dims.len()];
        for (key, value) in &self.entries {
            dense[self.dims.flat_index(key)] = *value;
        }
        dense
    }

    pub fn from_dense(
        period: u64,
        dims: Dims,
        profile: ValueProfile,
        values: &[f64],
    ) -> Result<Self, TensorError> {
        if values.len() != dims.len() {
            return Err(TensorError::Mismatch(format!(
                "dense buffer has {} values, dims need {}",
                values.len(),
                dims.len()
            )));
        }
        let mut tensor = UsageTensor::new(period, dims, profile);
        for (flat, value) in values.iter().enumerate() {
            tensor.set(dims.key_at(flat), *value)?;
        }
        Ok(tensor)
    }

    /// Canonical text record:
    ///
    /// ```text
    /// tensor,<period>,<R>,<F>,<N>,<binary|real>
    /// <region>,<subband>,<operator>,<value>     (one row per non-default entry, key order)
    /// ```
    ///
    /// Values use the shortest decimal form that round-trips (`{}` on `f64`).
    /// Every line ends with `\n`.
    pub fn to_canonical_string(&self) -> String {
        let mut out = format!(
            "tensor,{},{},{},{},{}\n",
            self.period,
            self.dims.regions,
            self.dims.subbands,
            self.dims.operators,
            self.profile.as_str()
        );
        for (key, value) in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                key.region, key.subband, key.operator, value
            ));
        }
        out
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.to_canonical_string().into_bytes()
    }

    pub fn parse_canonical(text: &str) -> Result<Self, TensorError> {
        let parse_err = |line: usize, reason: &str| TensorError::Parse {
            line,
            reason: reason.to_string(),
        };
        if !text.ends_with('\n') {
            return Err(parse_err(0, "missing trailing newline"));
        }
        let mut lines = text[..text.len() - 1].split('\n');
        let header = lines.next().ok_or_else(|| parse_err(1, "empty record"))?;
        let fields: Vec<&str> = header.split(',').collect();
        if fields.len() != 6 || fields[0] != "tensor" {
            return Err(parse_err(1, "bad header"));
        }
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| parse_err(1, "bad header number"))
        };
        let period = num(fields[1])?;
        let dims = Dims {
            regions: num(fields[2])? as u32,
            subbands: num(fields[3])? as u32,
            operators: num(fields[4])? as u32,
        };
        let profile = match fields[5] {
            "binary" => ValueProfile::Binary,
            "real" => ValueProfile::Real,
            _ => return Err(parse_err(1, "unknown profile")),
        };
        let mut tensor = UsageTensor::new(period, dims, profile);
        let mut previous: Option<TensorKey> = None;
        for (i, row) in lines.enumerate() {
            let line = i + 2;
            let cols: Vec<&str> = row.split(',').collect();
            if cols.len() != 4 {
                return Err(parse_err(line, "expected 4 columns"));
            }
            let int = |s: &str| s.parse::<u32>().map_err(|_| parse_err(line, "bad index"));
            let key = TensorKey {
                region: int(cols[0])?,
                subband: int(cols[1])?,
                operator: OperatorId(int(cols[2])?),
            };
            let value: f64 = cols[3].parse().map_err(|_| parse_err(line, "bad value"))?;
            if previous.is_some_and(|p| p >= key) {
                return Err(parse_err(line, "rows out of order"));
            }
            if value == 0.0 {
                return Err(parse_err(line, "default value stored explicitly"));
            }
            previous = Some(key);
            tensor
                .set(key, value)
                .map_err(|e| parse_err(line, &e.to_string()))?;
        }
        // Reject anything that would not re-serialize to the same bytes.
        if tensor.to_canonical_string() != text {
            return Err(parse_err(0, "record is not in canonical form"));
        }
        Ok(tensor)
    }
}

/// One position where two tensors disagree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorDiff {
    pub key: TensorKey,
    pub left: f64,
    pub right: f64,
}

/// Every key whose values differ between `a` and `b`, in key order.
pub fn tensor_diff(a: &UsageTensor, b: &UsageTensor) -> Result<Vec<TensorDiff>, TensorError> {
    if !a.same_shape(b) {
        return Err(TensorError::Mismatch(format!(
            "period/dims {}/{:?} vs {}/{:?}",
            a.period, a.dims, b.period, b.dims
        )));
    }
    let keys: BTreeSet<TensorKey> = a.keys().chain(b.keys()).collect();
    Ok(keys
        .into_iter()
        .filter_map(|key| {
            let (left, right) = (a.get(&key), b.get(&key));
            (left != right).then_some(TensorDiff { key, left, right })
        })
        .collect())
}

/// Hidden true value of a block for a target operator. Only the test harness
/// and adversaries see it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub block: ResourceBlock,
    pub target_operator: OperatorId,
    pub value: f64,
}

/// A noisy scalar reading (e.g. RSSI) of one block for one target operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub block: ResourceBlock,
    pub target_operator: OperatorId,
    pub value: f64,
    pub error_bound: f64,
}

/// Observes `truth` with noise drawn uniformly from the open interval
/// `(-epsilon, epsilon)`. Deterministic per `noise_seed`.
pub fn observe(truth: &GroundTruth, epsilon: f64, noise_seed: u64) -> Measurement {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = if epsilon > 0.0 {
        loop {
            // random::<f64>() is in [0, 1); u == 0 would land on -epsilon.
            let u: f64 = rng.random();
            let candidate = epsilon * (2.0 * u - 1.0);
            if candidate > -epsilon && candidate < epsilon {
                break candidate;
            }
        }
    } else {
        0.0
    };
    Measurement {
        block: truth.block,
        target_operator: truth.target_operator,
        value: truth.value + noise,
        error_bound: epsilon,
    }
}

/// 1 iff the reading is strictly above the threshold; ties read as unused.
pub fn binarize(m: &Measurement, r_threshold: f64) -> bool {
    m.value > r_threshold
}

/// Derives an independent sub-stream seed from a root seed and a label, so
/// each component can be re-run in isolation.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_be_bytes());
    hasher.update((label.len() as u32).to_be_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_be_bytes());
    let out = hasher.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block() -> ResourceBlock {
        ResourceBlock {
            region: 1,
            subband: 1,
            period: 0,
        }
    }

    fn truth(value: f64) -> GroundTruth {
        GroundTruth {
            block: block(),
            target_operator: OperatorId(2),
            value,
        }
    }

    fn dims() -> Dims {
        Dims {
            regions: 3,
            subbands: 2,
            operators: 4,
        }
    }

    #[test]
    fn params_reject_too_many_faults() {
        assert_eq!(
            NetworkParams::new(6, 2),
            Err(ParamsError::TooFewOperators { n: 6, f: 2 })
        );
        assert!(NetworkParams::new(7, 2).is_ok());
        assert_eq!(NetworkParams::max_tolerance(10).unwrap().f, 3);
        assert!(NetworkParams::new(4, 1).unwrap().with_zeta(0.0).is_err());
        assert!(NetworkParams::new(4, 1)
            .unwrap()
            .with_epsilon(-1.0)
            .is_err());
        assert!(NetworkParams::new(4, 1).unwrap().with_alpha(0.0).is_err());
    }

    #[test]
    fn quorum_sizes() {
        assert_eq!(quorum(4, 1), 3);
        assert_eq!(quorum(7, 2), 5);
        assert_eq!(quorum(5, 1), 4);
        // Two quorums always share an honest operator.
        for f in 0..5 {
            for n in 3 * f + 1..3 * f + 6 {
                assert!(2 * quorum(n, f) > n + f);
            }
        }
    }

    #[test]
    fn zero_noise_is_exact() {
        assert_eq!(observe(&truth(-90.0), 0.0, 17).value, -90.0);
    }

    #[test]
    fn noise_stays_inside_bound() {
        for seed in 0..2000 {
            let v = observe(&truth(-90.0), 2.0, seed).value;
            assert!(v > -92.0 && v < -88.0, "seed {seed}: {v}");
        }
    }

    #[test]
    fn observe_is_deterministic() {
        assert_eq!(observe(&truth(1.0), 0.5, 9), observe(&truth(1.0), 0.5, 9));
        assert_ne!(observe(&truth(1.0), 0.5, 9), observe(&truth(1.0), 0.5, 10));
    }

    #[test]
    fn noise_has_zero_mean() {
        let trials = 100_000u64;
        let sum: f64 = (0..trials)
            .map(|s| observe(&truth(0.0), 1.0, s).value)
            .sum();
        let mean = sum / trials as f64;
        assert!(mean.abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn binarize_threshold_and_tie() {
        let m = |value| Measurement {
            block: block(),
            target_operator: OperatorId(1),
            value,
            error_bound: 1.0,
        };
        assert!(binarize(&m(-80.0), -85.0));
        assert!(!binarize(&m(-85.0), -85.0));
    }

    #[test]
    fn binarize_is_unanimous_outside_the_ambiguous_band() {
        // Honest readings span (G - eps, G + eps); check both open-interval
        // extremes approached from inside, plus the sampler itself.
        let (r_th, eps) = (-85.0, 2.0);
        for g in [-90.0, -87.0, -83.0, -80.0] {
            let lo = g - eps * (1.0 - 1e-12);
            let hi = g + eps * (1.0 - 1e-12);
            assert_eq!(lo > r_th, hi > r_th, "G = {g}");
            let first = binarize(&observe(&truth(g), eps, 0), r_th);
            for seed in 1..500 {
                assert_eq!(binarize(&observe(&truth(g), eps, seed), r_th), first);
            }
        }
    }

    #[test]
    fn tensor_rejects_out_of_bounds_and_non_binary() {
        let mut t = UsageTensor::new(0, dims(), ValueProfile::Binary);
        let key = TensorKey {
            region: 4,
            subband: 1,
            operator: OperatorId(1),
        };
        assert!(matches!(
            t.set(key, 1.0),
            Err(TensorError::OutOfBounds { .. })
        ));
        let key = TensorKey { region: 1, ..key };
        assert_eq!(t.set(key, 0.5), Err(TensorError::NotBinary(0.5)));
        t.set(key, 1.0).unwrap();
        assert_eq!(t.len(), 1);
        t.set(key, 0.0).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn diff_of_identical_is_empty() {
        let mut a = UsageTensor::new(3, dims(), ValueProfile::Real);
        a.set(dims().key_at(5), -71.5).unwrap();
        assert!(tensor_diff(&a, &a.clone()).unwrap().is_empty());
    }

    #[test]
    fn diff_against_empty() {
        let mut a = UsageTensor::new(0, dims(), ValueProfile::Binary);
        let key = TensorKey {
            region: 1,
            subband: 1,
            operator: OperatorId(2),
        };
        a.set(key, 1.0).unwrap();
        let b = UsageTensor::new(0, dims(), ValueProfile::Binary);
        assert_eq!(
            tensor_diff(&a, &b).unwrap(),
            vec![TensorDiff {
                key,
                left: 1.0,
                right: 0.0
            }]
        );
    }

    #[test]
    fn diff_rejects_mismatched_period() {
        let a = UsageTensor::new(0, dims(), ValueProfile::Real);
        let b = UsageTensor::new(1, dims(), ValueProfile::Real);
        assert!(matches!(tensor_diff(&a, &b), Err(TensorError::Mismatch(_))));
    }

    #[test]
    fn canonical_form_is_frozen() {
        let mut t = UsageTensor::new(7, dims(), ValueProfile::Real);
        t.set(
            TensorKey {
                region: 2,
                subband: 1,
                operator: OperatorId(3),
            },
            -80.25,
        )
        .unwrap();
        t.set(
            TensorKey {
                region: 1,
                subband: 2,
                operator: OperatorId(1),
            },
            1.0,
        )
        .unwrap();
        assert_eq!(
            t.to_canonical_string(),
            "tensor,7,3,2,4,real\n1,2,1,1\n2,1,3,-80.25\n"
        );
    }

    #[test]
    fn parse_rejects_non_canonical_text() {
        assert!(UsageTensor::parse_canonical("tensor,0,1,1,1,real\n1,1,1,1.0\n").is_err());
        assert!(UsageTensor::parse_canonical("tensor,0,1,1,1,real\n1,1,1,0\n").is_err());
        assert!(UsageTensor::parse_canonical("tensor,0,1,1,1,real").is_err());
        assert!(UsageTensor::parse_canonical("tensor,0,1,1,1,real\n").is_ok());
    }

    #[test]
    fn derived_seeds_differ_by_label_and_index() {
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_eq!(derive_seed(1, "a", 0), derive_seed(1, "a", 0));
    }

    fn sparse_tensor() -> impl Strategy<Value = UsageTensor> {
        let d = dims();
        prop::collection::vec((0..d.len(), -100i32..100, 0u8..4), 0..12).prop_map(move |items| {
            let mut t = UsageTensor::new(2, d, ValueProfile::Real);
            for (flat, whole, frac) in items {
                t.set(d.key_at(flat), whole as f64 + frac as f64 * 0.25)
                    .unwrap();
            }
            t
        })
    }

    proptest! {
        #[test]
        fn sparse_dense_round_trip(t in sparse_tensor()) {
            let dense = t.to_dense();
            let back = UsageTensor::from_dense(t.period(), t.dims(), t.profile(), &dense).unwrap();
            prop_assert_eq!(&back, &t);
            let parsed = UsageTensor::parse_canonical(&t.to_canonical_string()).unwrap();
            prop_assert_eq!(parsed, t);
        }

        #[test]
        fn diff_matches_dense_scan(a in sparse_tensor(), b in sparse_tensor()) {
            let (da, db) = (a.to_dense(), b.to_dense());
            let expected: Vec<TensorDiff> = (0..da.len())
                .filter(|&i| da[i] != db[i])
                .map(|i| TensorDiff { key: dims().key_at(i), left: da[i], right: db[i] })
                .collect();
            prop_assert_eq!(tensor_diff(&a, &b).unwrap(), expected);
        }

        #[test]
        fn observation_respects_bound(g in -120.0f64..0.0, eps in 0.0f64..5.0, seed in any::<u64>()) {
            let m = observe(&truth(g), eps, seed);
            prop_assert!(eps == 0.0 || (m.value - g).abs() < eps);
        }
    }
}

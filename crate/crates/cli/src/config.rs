//! Scenario files. Unknown keys are rejected everywhere.
//!
//! ```toml
//! seed = 7
//!
//! [network]
//! n = 4
//! f = 1                 # defaults to floor((n - 1) / 3)
//! epsilon = 1.0
//! zeta = 0.1
//! alpha = 1.0
//! r_threshold = -85.0
//!
//! [protocol]
//! kind = "approx"       # binary | exact | approx
//! frame_bytes = 200     # pad every message to this size
//!
//! [adversary]
//! behavior = "bad-proposer"
//! controlled = [4]      # defaults to the last f operators
//!
//! [tensor]
//! regions = 1
//! subbands = 1
//! events = [{ period = 1, region = 1, subband = 1, operator = 2, rssi = -70.0 }]
//!
//! [geometry]
//! trials = 10000
//! ```

use std::path::{Path, PathBuf};

use leo_consensus::exact_mv::Aggregation;
use leo_consensus::geo::{DEFAULT_ALTITUDE_KM, DEFAULT_HALF_ANGLE_DEG};
use leo_consensus::model::{operators, Dims, NetworkParams, OperatorId};
use leo_consensus::netsim::{AdversaryStrategy, Behavior, Controlled};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    Binary,
    Exact,
    Approx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationKind {
    Median,
    TrimmedSelect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub n: usize,
    pub f: Option<usize>,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default = "defaults::zeta")]
    pub zeta: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::r_threshold")]
    pub r_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub kind: ProtocolKind,
    pub frame_bytes: Option<usize>,
    #[serde(default = "defaults::aggregation")]
    pub aggregation: AggregationKind,
    #[serde(default = "defaults::iteration_cap")]
    pub iteration_cap: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySection {
    pub behavior: String,
    pub controlled: Option<Vec<u32>>,
    /// Corrupt `f` different operators every round instead of a fixed set.
    #[serde(default)]
    pub rotating: bool,
    #[serde(default = "defaults::lie_offset")]
    pub lie_offset: f64,
    #[serde(default = "defaults::boundary_width")]
    pub boundary_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub period: u64,
    pub region: u32,
    pub subband: u32,
    pub operator: u32,
    pub rssi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSection {
    #[serde(default = "defaults::one")]
    pub regions: u32,
    #[serde(default = "defaults::one")]
    pub subbands: u32,
    #[serde(default = "defaults::one_u64")]
    pub periods: u64,
    #[serde(default)]
    pub events: Vec<Event>,
    /// Chance that a block without an explicit event is in use.
    #[serde(default)]
    pub activity: f64,
    #[serde(default = "defaults::active_rssi")]
    pub active_rssi: f64,
    #[serde(default = "defaults::idle_rssi")]
    pub idle_rssi: f64,
}

impl Default for TensorSection {
    fn default() -> Self {
        TensorSection {
            regions: 1,
            subbands: 1,
            periods: 1,
            events: Vec::new(),
            activity: 0.0,
            active_rssi: defaults::active_rssi(),
            idle_rssi: defaults::idle_rssi(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    /// Sensor densities per 10,000 km² for `detection`.
    pub sensor_densities: Option<Vec<f64>>,
    /// Satellite densities per million km² for `constellation`.
    pub satellite_densities: Option<Vec<f64>>,
    #[serde(default = "defaults::altitude")]
    pub altitude_km: f64,
    #[serde(default = "defaults::half_angle")]
    pub half_angle_deg: f64,
    #[serde(default = "defaults::operators")]
    pub operators: usize,
    #[serde(default = "defaults::subbands")]
    pub subbands: u32,
    #[serde(default = "defaults::trials")]
    pub trials: u64,
    #[serde(default = "defaults::one")]
    pub repetitions: u32,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection {
            sensor_densities: None,
            satellite_densities: None,
            altitude_km: DEFAULT_ALTITUDE_KM,
            half_angle_deg: DEFAULT_HALF_ANGLE_DEG,
            operators: defaults::operators(),
            subbands: defaults::subbands(),
            trials: defaults::trials(),
            repetitions: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Write the per-round transcript of the first instance.
    #[serde(default)]
    pub transcript: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    pub network: Option<NetworkSection>,
    pub protocol: Option<ProtocolSection>,
    pub adversary: Option<AdversarySection>,
    #[serde(default)]
    pub tensor: TensorSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    pub output: Option<OutputSection>,
}

mod defaults {
    use super::AggregationKind;

    pub fn epsilon() -> f64 {
        1.0
    }
    pub fn zeta() -> f64 {
        0.1
    }
    pub fn alpha() -> f64 {
        1.0
    }
    pub fn r_threshold() -> f64 {
        -85.0
    }
    pub fn aggregation() -> AggregationKind {
        AggregationKind::Median
    }
    pub fn iteration_cap() -> u32 {
        leo_consensus::binary_ba::DEFAULT_ITERATION_CAP
    }
    pub fn lie_offset() -> f64 {
        1.0e6
    }
    pub fn boundary_width() -> f64 {
        1.0
    }
    pub fn one() -> u32 {
        1
    }
    pub fn one_u64() -> u64 {
        1
    }
    pub fn active_rssi() -> f64 {
        -70.0
    }
    pub fn idle_rssi() -> f64 {
        -110.0
    }
    pub fn altitude() -> f64 {
        leo_consensus::geo::DEFAULT_ALTITUDE_KM
    }
    pub fn half_angle() -> f64 {
        leo_consensus::geo::DEFAULT_HALF_ANGLE_DEG
    }
    pub fn operators() -> usize {
        4
    }
    pub fn subbands() -> u32 {
        10
    }
    pub fn trials() -> u64 {
        10_000
    }
}

impl ScenarioConfig {
    /// Geometry-only scenario with every default.
    pub fn default_geometry() -> Self {
        ScenarioConfig {
            seed: 0,
            network: None,
            protocol: None,
            adversary: None,
            tensor: TensorSection::default(),
            geometry: GeometrySection::default(),
            output: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        ScenarioConfig::from_toml(&text)
    }

    pub fn params(&self) -> Result<NetworkParams, ConfigError> {
        let net = self
            .network
            .as_ref()
            .ok_or_else(|| invalid("missing [network] section"))?;
        let f = net.f.unwrap_or(net.n.saturating_sub(1) / 3);
        let p = NetworkParams::new(net.n, f)
            .and_then(|p| p.with_epsilon(net.epsilon))
            .and_then(|p| p.with_zeta(net.zeta))
            .and_then(|p| p.with_alpha(net.alpha))
            .and_then(|p| p.with_threshold(net.r_threshold))
            .map_err(|e| invalid(e.to_string()))?;
        Ok(p)
    }

    pub fn protocol(&self) -> Result<&ProtocolSection, ConfigError> {
        self.protocol
            .as_ref()
            .ok_or_else(|| invalid("missing [protocol] section"))
    }

    pub fn aggregation(&self) -> Aggregation {
        match self.protocol.as_ref().map(|p| p.aggregation) {
            Some(AggregationKind::TrimmedSelect) => Aggregation::TrimmedSelect,
            _ => Aggregation::Median,
        }
    }

    pub fn strategy(&self, params: &NetworkParams) -> Result<AdversaryStrategy, ConfigError> {
        let Some(adv) = &self.adversary else {
            return Ok(AdversaryStrategy::honest());
        };
        let behavior = Behavior::parse(&adv.behavior).ok_or_else(|| {
            let names: Vec<&str> = Behavior::ALL.iter().map(|b| b.name()).collect();
            invalid(format!(
                "unknown behavior '{}', expected one of {}",
                adv.behavior,
                names.join(", ")
            ))
        })?;
        let controlled = match (&adv.controlled, adv.rotating) {
            (Some(ids), false) => Controlled::fixed(ids.iter().map(|&i| OperatorId(i))),
            (None, false) => Controlled::last(params.n, params.f),
            (ids, true) => Controlled::Rotating {
                pool: match ids {
                    Some(ids) => ids.iter().map(|&i| OperatorId(i)).collect(),
                    None => operators(params.n).collect(),
                },
                per_round: params.f,
            },
        };
        if !(adv.lie_offset.is_finite()
            && adv.boundary_width.is_finite()
            && adv.boundary_width >= 0.0)
        {
            return Err(invalid(
                "lie_offset and boundary_width must be finite, boundary_width non-negative",
            ));
        }
        let strategy = AdversaryStrategy::new(controlled, behavior)
            .with_lie_offset(adv.lie_offset)
            .with_boundary(params.r_threshold, adv.boundary_width);
        strategy
            .validate(params.n, params.f)
            .map_err(|e| invalid(e.to_string()))?;
        Ok(strategy)
    }

    pub fn dims(&self, params: &NetworkParams) -> Dims {
        Dims {
            regions: self.tensor.regions,
            subbands: self.tensor.subbands,
            operators: params.n as u32,
        }
    }

    /// Everything a consensus run needs, checked up front.
    pub fn validate_consensus(&self) -> Result<(), ConfigError> {
        let params = self.params()?;
        let proto = self.protocol()?;
        self.strategy(&params)?;
        let t = &self.tensor;
        if t.regions == 0 || t.subbands == 0 || t.periods == 0 {
            return Err(invalid(
                "tensor regions, subbands and periods must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&t.activity) {
            return Err(invalid("tensor activity must lie in [0, 1]"));
        }
        if !(t.active_rssi.is_finite() && t.idle_rssi.is_finite()) {
            return Err(invalid("rssi levels must be finite"));
        }
        let dims = self.dims(&params);
        for e in &t.events {
            let key = leo_consensus::model::TensorKey {
                region: e.region,
                subband: e.subband,
                operator: OperatorId(e.operator),
            };
            if !dims.contains(&key) || e.period == 0 || e.period > t.periods || !e.rssi.is_finite()
            {
                return Err(invalid(format!("event {e:?} lies outside the tensor")));
            }
        }
        if proto.frame_bytes == Some(0) {
            return Err(invalid("frame_bytes must be positive"));
        }
        if proto.kind == ProtocolKind::Binary && proto.iteration_cap == 0 {
            return Err(invalid("iteration_cap must be positive"));
        }
        Ok(())
    }

    pub fn validate_geometry(&self) -> Result<(), ConfigError> {
        let g = &self.geometry;
        let all = g
            .sensor_densities
            .iter()
            .flatten()
            .chain(g.satellite_densities.iter().flatten());
        for d in all {
            if !(d.is_finite() && *d >= 0.0) {
                return Err(invalid(format!(
                    "density {d} must be finite and non-negative"
                )));
            }
        }
        if !(g.altitude_km.is_finite() && g.altitude_km > 0.0) {
            return Err(invalid("altitude_km must be positive"));
        }
        if !(g.half_angle_deg > 0.0 && g.half_angle_deg < 90.0) {
            return Err(invalid("half_angle_deg must lie in (0, 90)"));
        }
        if g.operators < 2 || g.subbands == 0 || g.trials == 0 || g.repetitions == 0 {
            return Err(invalid(
                "need at least 2 operators and positive subbands, trials and repetitions",
            ));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> Option<&Path> {
        self.output.as_ref().and_then(|o| o.dir.as_deref())
    }

    pub fn write_transcript(&self) -> bool {
        self.output.as_ref().is_some_and(|o| o.transcript)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 3
[network]
n = 4
[protocol]
kind = "binary"
"#;

    #[test]
    fn minimal_file_parses_with_defaults() {
        let c = ScenarioConfig::from_toml(BASIC).unwrap();
        let p = c.params().unwrap();
        assert_eq!((p.n, p.f, p.zeta), (4, 1, 0.1));
        assert!(c.validate_consensus().is_ok());
        assert_eq!(c.strategy(&p).unwrap(), AdversaryStrategy::honest());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{BASIC}\nspeed = 1\n");
        assert!(matches!(
            ScenarioConfig::from_toml(&text),
            Err(ConfigError::Parse(_))
        ));
        let text = BASIC.replace("n = 4", "n = 4\nfaults = 1");
        assert!(ScenarioConfig::from_toml(&text).is_err());
    }

    #[test]
    fn too_many_faults_is_invalid() {
        let c = ScenarioConfig::from_toml(&BASIC.replace("n = 4", "n = 4\nf = 2")).unwrap();
        assert!(matches!(c.params(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn adversary_defaults_to_last_f() {
        let text = format!("{BASIC}\n[adversary]\nbehavior = \"crash\"\n");
        let c = ScenarioConfig::from_toml(&text).unwrap();
        let s = c.strategy(&c.params().unwrap()).unwrap();
        assert!(!s.is_honest(OperatorId(4)));
        let bad = text.replace("crash", "sneaky");
        let c = ScenarioConfig::from_toml(&bad).unwrap();
        assert!(c.validate_consensus().is_err());
    }

    #[test]
    fn negative_density_is_invalid() {
        let text = "[geometry]\nsensor_densities = [10.0, -1.0]\n";
        let c = ScenarioConfig::from_toml(text).unwrap();
        assert!(c.validate_geometry().is_err());
    }

    #[test]
    fn events_must_fit() {
        let text = format!("{BASIC}\n[tensor]\nevents = [{{ period = 1, region = 2, subband = 1, operator = 1, rssi = -70.0 }}]\n");
        let c = ScenarioConfig::from_toml(&text).unwrap();
        assert!(c.validate_consensus().is_err());
    }
}

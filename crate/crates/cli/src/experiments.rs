//! Constellation interference sweep and sensor detection sweep.

use std::fmt::Write as _;

use leo_consensus::geo::{
    detection_probability_theory, detection_sweep_densities, interference_sweep,
    interference_sweep_densities, simulate_detection, spearman, CellGrid, DetectionSetup,
};
use leo_consensus::model::derive_seed;
use serde::Serialize;

use crate::config::{ConfigError, ScenarioConfig};
use crate::Artifacts;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstellationSummary {
    pub seed: u64,
    pub operators: usize,
    pub subbands: u32,
    pub repetitions: u32,
    pub densities_per_million_km2: Vec<f64>,
    pub mean_incidents: Vec<f64>,
    pub mean_incidents_split: Vec<f64>,
    pub spearman: f64,
    /// Total single-channel incidents over total split incidents.
    pub split_ratio: f64,
    pub incidents_at_max_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionSummary {
    pub seed: u64,
    pub trials: u64,
    pub densities_per_10k_km2: Vec<f64>,
    pub empirical: Vec<f64>,
    pub theory: Vec<f64>,
    pub max_abs_error: f64,
}

pub struct Experiment<S> {
    pub summary: S,
    pub artifacts: Artifacts,
}

pub fn run_constellation(
    cfg: &ScenarioConfig,
) -> Result<Experiment<ConstellationSummary>, ConfigError> {
    cfg.validate_geometry()?;
    let g = &cfg.geometry;
    let densities = g
        .satellite_densities
        .clone()
        .unwrap_or_else(interference_sweep_densities);
    if densities.is_empty() {
        return Err(ConfigError::Invalid("satellite_densities is empty".into()));
    }
    let half_angle = g.half_angle_deg.to_radians();
    let points = interference_sweep(
        &densities,
        g.operators,
        g.subbands,
        g.repetitions,
        g.altitude_km,
        half_angle,
        cfg.seed,
    )
    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut csv = String::from("density_per_million_km2,incident_count,incident_count_split\n");
    for p in &points {
        let _ = writeln!(
            csv,
            "{},{},{}",
            p.density_per_million_km2,
            p.mean_single(),
            p.mean_split()
        );
    }
    let single: Vec<f64> = points.iter().map(|p| p.mean_single()).collect();
    let split: Vec<f64> = points.iter().map(|p| p.mean_split()).collect();
    let total_split: u64 = points.iter().map(|p| p.split).sum();
    let summary = ConstellationSummary {
        seed: cfg.seed,
        operators: g.operators,
        subbands: g.subbands,
        repetitions: g.repetitions,
        spearman: if densities.len() > 1 {
            spearman(&densities, &single)
        } else {
            1.0
        },
        split_ratio: if total_split == 0 {
            f64::INFINITY
        } else {
            points.iter().map(|p| p.single_channel).sum::<u64>() as f64 / total_split as f64
        },
        incidents_at_max_density: points
            .iter()
            .max_by(|a, b| {
                a.density_per_million_km2
                    .total_cmp(&b.density_per_million_km2)
            })
            .map_or(0.0, |p| p.mean_single()),
        densities_per_million_km2: densities,
        mean_incidents: single,
        mean_incidents_split: split,
    };
    let mut text = String::new();
    let _ = writeln!(text, "operators          {}", summary.operators);
    let _ = writeln!(text, "repetitions        {}", summary.repetitions);
    let _ = writeln!(text, "spearman rho       {:.4}", summary.spearman);
    let _ = writeln!(
        text,
        "{}-band reduction  {:.2}x",
        summary.subbands, summary.split_ratio
    );
    let _ = writeln!(
        text,
        "incidents at max   {}",
        summary.incidents_at_max_density
    );
    let mut artifacts = Artifacts::default();
    artifacts.insert("constellation.csv", csv);
    artifacts.insert("summary.json", crate::to_json(&summary));
    artifacts.insert("summary.txt", text);
    Ok(Experiment { summary, artifacts })
}

pub fn run_detection(cfg: &ScenarioConfig) -> Result<Experiment<DetectionSummary>, ConfigError> {
    cfg.validate_geometry()?;
    let g = &cfg.geometry;
    let densities = g
        .sensor_densities
        .clone()
        .unwrap_or_else(detection_sweep_densities);
    let half_angle = g.half_angle_deg.to_radians();
    let honest = g.operators - 1;
    let mut csv = String::from("sensor_density,empirical_rate,theory_rate\n");
    let mut empirical = Vec::new();
    let mut theory = Vec::new();
    for (i, &d) in densities.iter().enumerate() {
        let setup = DetectionSetup {
            honest_densities: vec![d / 1e4; honest],
            altitude_km: g.altitude_km,
            half_angle,
            grid: CellGrid::default(),
        };
        let res = simulate_detection(
            &setup,
            g.trials,
            derive_seed(cfg.seed, "detection", i as u64),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let th = detection_probability_theory(&setup.honest_densities, g.altitude_km, half_angle);
        let _ = writeln!(csv, "{d},{},{th}", res.rate);
        empirical.push(res.rate);
        theory.push(th);
    }
    let max_abs_error = empirical
        .iter()
        .zip(&theory)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let summary = DetectionSummary {
        seed: cfg.seed,
        trials: g.trials,
        densities_per_10k_km2: densities,
        empirical,
        theory,
        max_abs_error,
    };
    let mut text = String::new();
    let _ = writeln!(text, "honest operators  {honest}");
    let _ = writeln!(text, "trials per point  {}", summary.trials);
    for ((d, e), t) in summary
        .densities_per_10k_km2
        .iter()
        .zip(&summary.empirical)
        .zip(&summary.theory)
    {
        let _ = writeln!(text, "density {d:>9.4}  rate {e:.4}  theory {t:.4}");
    }
    let _ = writeln!(text, "max |rate - theory| {:.4}", summary.max_abs_error);
    let mut artifacts = Artifacts::default();
    artifacts.insert("detection.csv", csv);
    artifacts.insert("summary.json", crate::to_json(&summary));
    artifacts.insert("summary.txt", text);
    Ok(Experiment { summary, artifacts })
}

//! Satellites and sensors on a spherical Earth: Poisson deployment, spot-beam
//! overlap counting, and the probability that honest sensors witness an
//! interfering beam.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::model::derive_seed;

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const DEFAULT_ALTITUDE_KM: f64 = 550.0;
/// Half of the 3.5° beam cone.
pub const DEFAULT_HALF_ANGLE_DEG: f64 = 1.75;
pub const AZIMUTH_BINS: usize = 200;
pub const POLAR_BINS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("density must be finite and non-negative, got {0}")]
    Density(f64),
    #[error("altitude must be finite and positive, got {0}")]
    Altitude(f64),
    #[error("half angle must lie in (0, 90) degrees, got {0}")]
    HalfAngle(f64),
    #[error("need at least one sub-band")]
    Subbands,
    #[error("need at least one trial")]
    Trials,
    #[error("operator list is empty")]
    NoOperators,
}

fn check_density(d: f64) -> Result<f64, GeoError> {
    if d.is_finite() && d >= 0.0 {
        Ok(d)
    } else {
        Err(GeoError::Density(d))
    }
}

/// Unit vector; scale by [`EARTH_RADIUS_KM`] for a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        let norm = (x * x + y * y + z * z).sqrt();
        Point {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        }
    }

    /// Azimuth in `[-π, π]` and polar angle from the north pole in `[0, π]`.
    pub fn from_angles(azimuth: f64, polar: f64) -> Self {
        Point {
            x: polar.sin() * azimuth.cos(),
            y: polar.sin() * azimuth.sin(),
            z: polar.cos(),
        }
    }

    pub fn azimuth(&self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn polar(&self) -> f64 {
        self.z.clamp(-1.0, 1.0).acos()
    }

    pub fn dot(&self, o: &Point) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    fn cross(&self, o: &Point) -> (f64, f64, f64) {
        (
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    /// Central angle in radians, stable for nearby points.
    pub fn angle_to(&self, o: &Point) -> f64 {
        let (cx, cy, cz) = self.cross(o);
        (cx * cx + cy * cy + cz * cz).sqrt().atan2(self.dot(o))
    }

    pub fn great_circle_km(&self, o: &Point) -> f64 {
        EARTH_RADIUS_KM * self.angle_to(o)
    }

    fn chord_sq(&self, o: &Point) -> f64 {
        let (dx, dy, dz) = (self.x - o.x, self.y - o.y, self.z - o.z);
        dx * dx + dy * dy + dz * dz
    }

    pub fn antipode(&self) -> Point {
        Point {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

pub fn surface_area_km2() -> f64 {
    4.0 * PI * EARTH_RADIUS_KM * EARTH_RADIUS_KM
}

/// Area of a spherical cap with the given angular radius.
pub fn cap_area_km2(angular_radius: f64) -> f64 {
    2.0 * PI * EARTH_RADIUS_KM * EARTH_RADIUS_KM * (1.0 - angular_radius.cos())
}

/// Ground radius of a nadir-pointing beam: `h·tan θ`.
pub fn footprint_radius_km(altitude_km: f64, half_angle: f64) -> f64 {
    altitude_km * half_angle.tan()
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map_or(0, |p| p.sample(rng) as usize)
}

pub fn uniform_point<R: Rng + ?Sized>(rng: &mut R) -> Point {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(-PI..PI);
    let s = (1.0 - z * z).max(0.0).sqrt();
    Point {
        x: s * phi.cos(),
        y: s * phi.sin(),
        z,
    }
}

/// Uniform point in the cap of `angular_radius` around `center`.
pub fn uniform_in_cap<R: Rng + ?Sized>(center: &Point, angular_radius: f64, rng: &mut R) -> Point {
    let cos_max = angular_radius.cos();
    let cos_b: f64 = 1.0 - rng.random::<f64>() * (1.0 - cos_max);
    let sin_b = (1.0 - cos_b * cos_b).max(0.0).sqrt();
    let phi: f64 = rng.random_range(-PI..PI);
    // Orthonormal frame (u, v, center).
    let helper = if center.x.abs() < 0.9 {
        Point {
            x: 1.0,
            y: 0.0,
            z: 0.0,
        }
    } else {
        Point {
            x: 0.0,
            y: 1.0,
            z: 0.0,
        }
    };
    let (ux, uy, uz) = helper.cross(center);
    let u = Point::new(ux, uy, uz);
    let (vx, vy, vz) = center.cross(&u);
    let (a, b) = (sin_b * phi.cos(), sin_b * phi.sin());
    Point::new(
        a * u.x + b * vx + cos_b * center.x,
        a * u.y + b * vy + cos_b * center.y,
        a * u.z + b * vz + cos_b * center.z,
    )
}

/// Homogeneous Poisson process over the whole sphere, `density` per km².
pub fn deploy_poisson(density: f64, seed: u64) -> Result<Vec<Point>, GeoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    deploy_with(density, &mut rng)
}

fn deploy_with<R: Rng + ?Sized>(density: f64, rng: &mut R) -> Result<Vec<Point>, GeoError> {
    let n = poisson_count(check_density(density)? * surface_area_km2(), rng);
    Ok((0..n).map(|_| uniform_point(rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    pub operator: usize,
    pub position: Point,
    /// In `0..subbands`.
    pub subband: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub altitude_km: f64,
    /// Radians.
    pub half_angle: f64,
    pub subbands: u32,
    pub beams: Vec<Beam>,
}

impl Constellation {
    pub fn empty(altitude_km: f64, half_angle: f64, subbands: u32) -> Result<Self, GeoError> {
        if !(altitude_km.is_finite() && altitude_km > 0.0) {
            return Err(GeoError::Altitude(altitude_km));
        }
        if !(half_angle > 0.0 && half_angle < PI / 2.0) {
            return Err(GeoError::HalfAngle(half_angle.to_degrees()));
        }
        if subbands == 0 {
            return Err(GeoError::Subbands);
        }
        Ok(Constellation {
            altitude_km,
            half_angle,
            subbands,
            beams: Vec::new(),
        })
    }

    /// One Poisson deployment per operator with sub-bands drawn uniformly.
    pub fn generate(
        densities: &[f64],
        altitude_km: f64,
        half_angle: f64,
        subbands: u32,
        seed: u64,
    ) -> Result<Self, GeoError> {
        if densities.is_empty() {
            return Err(GeoError::NoOperators);
        }
        let mut c = Constellation::empty(altitude_km, half_angle, subbands)?;
        for (op, &d) in densities.iter().enumerate() {
            let positions = deploy_poisson(d, derive_seed(seed, "deploy", op as u64))?;
            c.beams.extend(positions.into_iter().map(|position| Beam {
                operator: op,
                position,
                subband: 0,
            }));
        }
        c.assign_subbands(subbands, derive_seed(seed, "subbands", 0))?;
        Ok(c)
    }

    /// Redraws every beam's sub-band, keeping positions.
    pub fn assign_subbands(&mut self, subbands: u32, seed: u64) -> Result<(), GeoError> {
        if subbands == 0 {
            return Err(GeoError::Subbands);
        }
        self.subbands = subbands;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in &mut self.beams {
            b.subband = rng.random_range(0..subbands);
        }
        Ok(())
    }

    pub fn footprint_radius_km(&self) -> f64 {
        footprint_radius_km(self.altitude_km, self.half_angle)
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }
}

/// Unordered pairs of beams from different operators on the same sub-band
/// whose footprint centres are closer than twice the footprint radius.
pub fn count_interference(c: &Constellation) -> u64 {
    let angle = 2.0 * c.footprint_radius_km() / EARTH_RADIUS_KM;
    let chord = 2.0 * (angle / 2.0).sin();
    let chord_sq = chord * chord;
    let mut order: Vec<&Beam> = c.beams.iter().collect();
    order.sort_by(|a, b| a.position.z.total_cmp(&b.position.z));
    let mut count = 0;
    for (i, a) in order.iter().enumerate() {
        for b in &order[i + 1..] {
            if b.position.z - a.position.z >= chord {
                break;
            }
            if a.operator != b.operator
                && a.subband == b.subband
                && a.position.chord_sq(&b.position) < chord_sq
            {
                count += 1;
            }
        }
    }
    count
}

/// Chance that every honest operator has at least one sensor under a beam:
/// the product over operators of `1 - exp(-λ π r²)`.
pub fn detection_probability_theory(lambdas: &[f64], altitude_km: f64, half_angle: f64) -> f64 {
    let r = footprint_radius_km(altitude_km, half_angle);
    lambdas
        .iter()
        .map(|l| 1.0 - (-l * PI * r * r).exp())
        .product()
}

/// One operator's ground sensors, a Poisson process of `density` per km².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorField {
    pub density: f64,
}

impl SensorField {
    pub fn new(density: f64) -> Result<Self, GeoError> {
        Ok(SensorField {
            density: check_density(density)?,
        })
    }

    /// The process restricted to a cap.
    pub fn sample_cap<R: Rng + ?Sized>(
        &self,
        center: &Point,
        angular_radius: f64,
        rng: &mut R,
    ) -> Vec<Point> {
        let n = poisson_count(self.density * cap_area_km2(angular_radius), rng);
        (0..n)
            .map(|_| uniform_in_cap(center, angular_radius, rng))
            .collect()
    }

    pub fn sample_sphere<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Point> {
        deploy_with(self.density, rng).unwrap_or_default()
    }
}

/// Equal-angle grid of 200 azimuth by 100 polar bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellGrid {
    pub azimuth_bins: usize,
    pub polar_bins: usize,
}

impl Default for CellGrid {
    fn default() -> Self {
        CellGrid {
            azimuth_bins: AZIMUTH_BINS,
            polar_bins: POLAR_BINS,
        }
    }
}

impl CellGrid {
    pub fn cells(&self) -> usize {
        self.azimuth_bins * self.polar_bins
    }

    pub fn cell_of(&self, p: &Point) -> usize {
        let a = ((p.azimuth() + PI) / (2.0 * PI) * self.azimuth_bins as f64) as usize;
        let b = (p.polar() / PI * self.polar_bins as f64) as usize;
        b.min(self.polar_bins - 1) * self.azimuth_bins + a.min(self.azimuth_bins - 1)
    }

    pub fn center(&self, cell: usize) -> Point {
        let (b, a) = (cell / self.azimuth_bins, cell % self.azimuth_bins);
        let az = (a as f64 + 0.5) / self.azimuth_bins as f64 * 2.0 * PI - PI;
        let polar = (b as f64 + 0.5) / self.polar_bins as f64 * PI;
        Point::from_angles(az, polar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSetup {
    /// Sensor density per km² for each honest operator.
    pub honest_densities: Vec<f64>,
    pub altitude_km: f64,
    pub half_angle: f64,
    pub grid: CellGrid,
}

impl DetectionSetup {
    /// Three honest operators at one shared density.
    pub fn uniform(density: f64) -> Result<Self, GeoError> {
        Ok(DetectionSetup {
            honest_densities: vec![check_density(density)?; 3],
            altitude_km: DEFAULT_ALTITUDE_KM,
            half_angle: DEFAULT_HALF_ANGLE_DEG.to_radians(),
            grid: CellGrid::default(),
        })
    }

    pub fn theory(&self) -> f64 {
        detection_probability_theory(&self.honest_densities, self.altitude_km, self.half_angle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub trials: u64,
    pub detected: u64,
    pub rate: f64,
    pub theory: f64,
    /// Distinct grid cells where incidents happened.
    pub cells_hit: usize,
}

/// Monte-Carlo estimate of the detection rate. Each trial drops a fresh
/// adversarial beam uniformly on the sphere, locates its cell, and samples
/// every honest operator's sensors around it.
pub fn simulate_detection(
    setup: &DetectionSetup,
    trials: u64,
    seed: u64,
) -> Result<DetectionResult, GeoError> {
    if trials == 0 {
        return Err(GeoError::Trials);
    }
    let fields = setup
        .honest_densities
        .iter()
        .map(|&d| SensorField::new(d))
        .collect::<Result<Vec<_>, _>>()?;
    let r = footprint_radius_km(setup.altitude_km, setup.half_angle);
    let reach = r / EARTH_RADIUS_KM;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = BTreeSet::new();
    let mut detected = 0;
    for _ in 0..trials {
        let incident = uniform_point(&mut rng);
        cells.insert(setup.grid.cell_of(&incident));
        let mut all = true;
        for field in &fields {
            let sensors = field.sample_cap(&incident, 2.0 * reach, &mut rng);
            all &= sensors.iter().any(|s| s.angle_to(&incident) <= reach);
        }
        detected += all as u64;
    }
    Ok(DetectionResult {
        trials,
        detected,
        rate: detected as f64 / trials as f64,
        theory: setup.theory(),
        cells_hit: cells.len(),
    })
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Sensor densities per 10,000 km² for the detection sweep.
pub fn detection_sweep_densities() -> Vec<f64> {
    linspace(0.17, 90.0, 15)
}

/// Satellite densities per million km² for the interference sweep.
pub fn interference_sweep_densities() -> Vec<f64> {
    linspace(2.7, 17.0, 20)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionPoint {
    pub density_per_10k_km2: f64,
    pub rate: f64,
    pub theory: f64,
    pub trials: u64,
}

pub fn detection_sweep(
    densities_per_10k_km2: &[f64],
    trials: u64,
    seed: u64,
) -> Result<Vec<DetectionPoint>, GeoError> {
    densities_per_10k_km2
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let setup = DetectionSetup::uniform(d / 1e4)?;
            let res = simulate_detection(&setup, trials, derive_seed(seed, "detection", i as u64))?;
            Ok(DetectionPoint {
                density_per_10k_km2: d,
                rate: res.rate,
                theory: res.theory,
                trials,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferencePoint {
    pub density_per_million_km2: f64,
    /// Summed over repetitions.
    pub single_channel: u64,
    pub split: u64,
    pub repetitions: u32,
}

impl InterferencePoint {
    pub fn mean_single(&self) -> f64 {
        self.single_channel as f64 / self.repetitions as f64
    }

    pub fn mean_split(&self) -> f64 {
        self.split as f64 / self.repetitions as f64
    }
}

/// Counts incidents for `operators` equal-density constellations at each
/// density, once on a single channel and once with the same positions spread
/// over `subbands`.
pub fn interference_sweep(
    densities_per_million_km2: &[f64],
    operators: usize,
    subbands: u32,
    repetitions: u32,
    altitude_km: f64,
    half_angle: f64,
    seed: u64,
) -> Result<Vec<InterferencePoint>, GeoError> {
    if repetitions == 0 {
        return Err(GeoError::Trials);
    }
    densities_per_million_km2
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let mut point = InterferencePoint {
                density_per_million_km2: d,
                single_channel: 0,
                split: 0,
                repetitions,
            };
            for rep in 0..repetitions {
                let s = derive_seed(seed, "interference", (i as u64) << 32 | rep as u64);
                let mut c = Constellation::generate(
                    &vec![d / 1e6; operators],
                    altitude_km,
                    half_angle,
                    1,
                    s,
                )?;
                point.single_channel += count_interference(&c);
                c.assign_subbands(subbands, derive_seed(s, "split", 0))?;
                point.split += count_interference(&c);
            }
            Ok(point)
        })
        .collect()
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            out[*k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

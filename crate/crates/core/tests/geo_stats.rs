use leo_consensus::geo::{cap_area_km2, interference_sweep, uniform_point};
use leo_consensus::geo::{
    count_interference, detection_probability_theory, simulate_detection, spearman, Constellation,
    DetectionSetup, SensorField, DEFAULT_ALTITUDE_KM, DEFAULT_HALF_ANGLE_DEG, EARTH_RADIUS_KM,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn cap_counts_follow_density() {
    let field = SensorField::new(5e-3).unwrap();
    let radius = 50.0 / EARTH_RADIUS_KM;
    let mean = 5e-3 * cap_area_km2(radius);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let trials = 2000;
    let mut total = 0;
    for _ in 0..trials {
        let c = uniform_point(&mut rng);
        total += field.sample_cap(&c, radius, &mut rng).len();
    }
    let avg = total as f64 / trials as f64;
    assert!(
        (avg - mean).abs() < 3.0 * (mean / trials as f64).sqrt(),
        "{avg} vs {mean}"
    );
}

#[test]
fn detection_tracks_theory() {
    for density in [10.0, 30.0, 60.0, 90.0] {
        let setup = DetectionSetup::uniform(density / 1e4).unwrap();
        let res = simulate_detection(&setup, 10_000, 3).unwrap();
        assert!(
            (res.rate - res.theory).abs() <= 0.03,
            "{density}: {} vs {}",
            res.rate,
            res.theory
        );
        assert!(res.cells_hit > 5_000);
    }
}

#[test]
fn theory_matches_manual_product() {
    let r = DEFAULT_ALTITUDE_KM * DEFAULT_HALF_ANGLE_DEG.to_radians().tan();
    let l: [f64; 3] = [0.001, 0.002, 0.004];
    let want: f64 = l
        .iter()
        .map(|x: &f64| 1.0 - (-x * std::f64::consts::PI * r * r).exp())
        .product();
    let got =
        detection_probability_theory(&l, DEFAULT_ALTITUDE_KM, DEFAULT_HALF_ANGLE_DEG.to_radians());
    assert!((got - want).abs() < 1e-15);
}

#[test]
fn incidents_grow_with_density_and_split_by_subbands() {
    let densities = [3.0, 7.0, 11.0, 15.0];
    let sweep = interference_sweep(
        &densities,
        4,
        10,
        1,
        DEFAULT_ALTITUDE_KM,
        DEFAULT_HALF_ANGLE_DEG.to_radians(),
        17,
    )
    .unwrap();
    let single: Vec<f64> = sweep.iter().map(|p| p.mean_single()).collect();
    assert!(spearman(&densities, &single) > 0.99);
    let ratio = sweep.iter().map(|p| p.single_channel).sum::<u64>() as f64
        / sweep.iter().map(|p| p.split).sum::<u64>() as f64;
    assert!((8.0..=12.0).contains(&ratio), "{ratio}");
}

#[test]
fn single_operator_has_no_incidents() {
    let c = Constellation::generate(
        &[2e-5],
        DEFAULT_ALTITUDE_KM,
        DEFAULT_HALF_ANGLE_DEG.to_radians(),
        1,
        3,
    )
    .unwrap();
    assert!(!c.is_empty());
    assert_eq!(count_interference(&c), 0);
}

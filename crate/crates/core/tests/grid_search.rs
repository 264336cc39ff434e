use roadkf::harness::{grid_search, parallel_grid, perpendicular_grid, Method, PipelineConfig};
use roadkf::kalman::INFINITE_VARIANCE;
use roadkf::roadnet::{RoadDefaults, RoadGraph};
use roadkf::sim::{generate_drive, generate_network, DriveRecord, NetworkConfig, NetworkKind, ScenarioConfig};

/// White pseudorange noise of `sigma` meters and no multipath, so the filter
/// model matches the measurements.
fn white_noise(sigma: f64) -> ScenarioConfig {
    let mut s = ScenarioConfig::open_sky();
    s.gnss.multipath_probability = 0.0;
    s.gnss.range_sigma = sigma;
    s
}

fn parallel_roads(separation: f64, mut scenario: ScenarioConfig, seeds: std::ops::Range<u64>) -> (RoadGraph, Vec<DriveRecord>) {
    scenario.network = NetworkConfig {
        kind: NetworkKind::ParallelRoads,
        separation,
        length: 400.0,
        ..NetworkConfig::default()
    };
    scenario.drive.duration = 200.0;
    let graph = generate_network(&scenario.network, 0)
        .unwrap()
        .build_graph(&RoadDefaults::default())
        .unwrap();
    let drives = seeds.map(|s| generate_drive(&graph, "parallel", &scenario, s).unwrap()).collect();
    (graph, drives)
}

#[test]
fn grid_covers_both_ranges() {
    let perp = perpendicular_grid();
    let par = parallel_grid();
    assert_eq!(perp, (0..=10).map(f64::from).collect::<Vec<_>>());
    assert_eq!(&par[..11], &perp[..]);
    assert_eq!(&par[11..21], &(1..=10).map(|i| 100.0 * f64::from(i)).collect::<Vec<_>>()[..]);
    assert_eq!(par[21], INFINITE_VARIANCE);
    assert_eq!(perp.len() * par.len(), 242);
}

#[test]
fn exact_road_and_noisy_gnss_trust_the_road_laterally() {
    // the second road is far outside the field of view
    let (graph, drives) = parallel_roads(2000.0, white_noise(30.0), 0..2);
    let pairs: Vec<_> = drives.iter().map(|d| (&graph, d)).collect();
    let result = grid_search(Method::Viterbi, &pairs, &PipelineConfig::default()).unwrap();
    assert_eq!(result.points.len(), 242);
    assert_eq!(result.best.variances.perpendicular, 0.0, "{:?}", result.best);
    let min = result.points.iter().map(|p| p.he95).fold(f64::INFINITY, f64::min);
    assert_eq!(result.best.he95, min);
}

#[test]
fn decoy_roads_keep_some_lateral_doubt() {
    // nearest-road selection often picks the decoy a few meters away
    let (graph, drives) = parallel_roads(3.0, white_noise(3.0), 0..2);
    let pairs: Vec<_> = drives.iter().map(|d| (&graph, d)).collect();
    let result = grid_search(Method::Instant, &pairs, &PipelineConfig::default()).unwrap();
    assert!(result.best.variances.perpendicular > 0.0, "{:?}", result.best);
    let snapped = result
        .points
        .iter()
        .filter(|p| p.variances.perpendicular == 0.0)
        .map(|p| p.he95)
        .fold(f64::INFINITY, f64::min);
    assert!(result.best.he95 < 0.8 * snapped, "{} vs {snapped}", result.best.he95);
}

#[test]
fn ties_go_to_smaller_variances() {
    let (graph, drives) = parallel_roads(2000.0, ScenarioConfig::open_sky(), 0..1);
    let pairs: Vec<_> = drives.iter().map(|d| (&graph, d)).collect();
    let result = grid_search(Method::Instant, &pairs, &PipelineConfig::default()).unwrap();
    let first = result
        .points
        .iter()
        .find(|p| p.he95 == result.best.he95)
        .unwrap();
    assert_eq!(first.variances, result.best.variances);
    let (i, j) = (
        perpendicular_grid().iter().position(|&v| v == first.variances.perpendicular).unwrap(),
        parallel_grid().iter().position(|&v| v == first.variances.parallel).unwrap(),
    );
    assert_eq!(result.points.iter().position(|p| p == first).unwrap(), i * 22 + j);
}

#[test]
fn only_classical_selectors_are_tuned() {
    assert!(grid_search(Method::Kf, &[], &PipelineConfig::default()).is_err());
    assert!(grid_search(Method::Viterbi, &[], &PipelineConfig::default()).is_err());
}


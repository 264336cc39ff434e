//! Synthetic scenarios: road networks, vehicle drives along them, and the
//! satellite measurements a receiver in the vehicle would see.
//!
//! Everything is a pure function of the configuration and a seed.

mod measurements;
mod network;
mod trajectory;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geo::EnuPoint;
use crate::kalman::GnssEpoch;
use crate::roadnet::RoadGraph;

pub use measurements::{generate_measurements, satellite_sky, MeasuredEpoch, RangeErrors};
pub use network::generate_network;
pub use trajectory::{generate_trajectory, TruthEpoch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    Grid,
    Radial,
    ParallelRoads,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub kind: NetworkKind,
    /// Side length of the grid, or outer radius of the radial network (m).
    pub extent: f64,
    /// Block size, or ring spacing for radial networks (m).
    pub block_size: f64,
    /// Uniform jitter of grid intersections (m).
    pub jitter: f64,
    pub oneway_fraction: f64,
    pub spokes: usize,
    /// Distance between the two parallel roads (m).
    pub separation: f64,
    /// Length of the parallel roads (m).
    pub length: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            kind: NetworkKind::Grid,
            extent: 600.0,
            block_size: 100.0,
            jitter: 8.0,
            oneway_fraction: 0.3,
            spokes: 8,
            separation: 10.0,
            length: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveConfig {
    /// Hz
    pub epoch_rate: f64,
    /// s
    pub duration: f64,
    /// m/s²
    pub max_accel: f64,
    /// Speed limit through turns sharper than 20° (m/s).
    pub turn_speed: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            epoch_rate: 1.0,
            duration: 600.0,
            max_accel: 2.0,
            turn_speed: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnssConfig {
    pub satellites: usize,
    /// degrees
    pub min_elevation: f64,
    /// degrees
    pub max_elevation: f64,
    /// m
    pub shell_radius: f64,
    /// Azimuth rotation rate of the sky (rad/s).
    pub orbit_rate: f64,
    /// m
    pub range_sigma: f64,
    /// m/s
    pub rate_sigma: f64,
    /// Stationary probability that a satellite is affected by multipath.
    pub multipath_probability: f64,
    /// Range of the positive multipath bias (m), drawn per episode.
    pub multipath_bias: [f64; 2],
    /// Mean length of a multipath episode (epochs).
    pub multipath_duration: f64,
    /// Extra rate noise while multipath is active (m/s).
    pub multipath_rate_sigma: f64,
    /// m
    pub clock_bias: f64,
    /// m/s
    pub clock_drift: f64,
    /// Clock bias random walk (m²/s).
    pub clock_bias_noise: f64,
    /// Clock drift random walk (m²/s³).
    pub clock_drift_noise: f64,
}

impl Default for GnssConfig {
    fn default() -> Self {
        Self {
            satellites: 8,
            min_elevation: 15.0,
            max_elevation: 85.0,
            shell_radius: 2.2e7,
            orbit_rate: 1.46e-4,
            range_sigma: 5.0,
            rate_sigma: 0.1,
            multipath_probability: 0.3,
            multipath_bias: [5.0, 60.0],
            multipath_duration: 8.0,
            multipath_rate_sigma: 0.5,
            clock_bias: 50.0,
            clock_drift: 0.3,
            clock_bias_noise: 1e-2,
            clock_drift_noise: 1e-4,
        }
    }
}

impl GnssConfig {
    /// Dense urban canyon: frequent positively biased multipath ranges.
    pub fn urban() -> Self {
        Self::default()
    }

    /// Clear sky: no multipath, small range noise.
    pub fn open_sky() -> Self {
        Self {
            range_sigma: 1.5,
            multipath_probability: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub network: NetworkConfig,
    pub drive: DriveConfig,
    pub gnss: GnssConfig,
}

impl ScenarioConfig {
    pub fn urban() -> Self {
        Self::default()
    }

    pub fn open_sky() -> Self {
        Self {
            gnss: GnssConfig::open_sky(),
            ..Self::default()
        }
    }
}

/// Receiver truth at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthState {
    pub position: EnuPoint,
    pub velocity: nalgebra::Vector3<f64>,
    pub clock_bias: f64,
    pub clock_drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveEpoch {
    pub truth: TruthState,
    /// Segment the vehicle occupies.
    pub segment: usize,
    pub gnss: GnssEpoch,
}

impl DriveEpoch {
    pub fn time(&self) -> f64 {
        self.gnss.time
    }
}

/// One simulated drive.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveRecord {
    /// Name of the network file the segment ids refer to.
    pub network: String,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub epochs: Vec<DriveEpoch>,
}

/// Independent random stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const TRAJECTORY_STREAM: u64 = 1;
const MEASUREMENT_STREAM: u64 = 2;

/// Trajectory plus measurements for one drive.
pub fn generate_drive(graph: &RoadGraph, network: &str, cfg: &ScenarioConfig, seed: u64) -> Result<DriveRecord> {
    let truth = generate_trajectory(graph, &cfg.drive, seed)?;
    let measured = generate_measurements(&truth, &cfg.gnss, seed);
    let epochs = truth
        .iter()
        .zip(measured)
        .map(|(t, m)| DriveEpoch {
            truth: TruthState {
                position: t.position,
                velocity: t.velocity,
                clock_bias: m.clock_bias,
                clock_drift: m.clock_drift,
            },
            segment: t.segment,
            gnss: m.gnss,
        })
        .collect();
    Ok(DriveRecord {
        network: network.to_string(),
        seed,
        config: cfg.clone(),
        epochs,
    })
}

use std::f64::consts::TAU;

use rand::Rng;

use super::{stream_rng, NetworkConfig, NetworkKind};
use crate::error::{Error, Result};
use crate::geo::EnuPoint;
use crate::roadnet::{PrimalEdge, PrimalNetwork};

fn edge(from: usize, to: usize, road_type: &str, lanes: Option<u32>, max_speed: Option<f64>, oneway: bool) -> PrimalEdge {
    PrimalEdge {
        from,
        to,
        lanes,
        max_speed,
        road_type: road_type.to_string(),
        oneway: Some(oneway),
    }
}

/// Street class by index: outer ring is primary, every third street is
/// secondary, the rest residential (with lanes left unset).
fn street_class(i: usize, last: usize) -> (&'static str, Option<u32>, Option<f64>) {
    if i == 0 || i == last {
        ("primary", Some(2), Some(13.9))
    } else if i % 3 == 0 {
        ("secondary", Some(2), Some(11.1))
    } else {
        ("residential", None, Some(8.3))
    }
}

fn grid(cfg: &NetworkConfig, seed: u64) -> PrimalNetwork {
    let mut rng = stream_rng(seed, 0);
    let blocks = ((cfg.extent / cfg.block_size).round() as usize).max(1);
    let n = blocks + 1;
    let mut nodes = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let mut jitter = || {
                if cfg.jitter > 0.0 {
                    rng.gen_range(-cfg.jitter..cfg.jitter)
                } else {
                    0.0
                }
            };
            let (dx, dy) = (jitter(), jitter());
            nodes.push(EnuPoint::horizontal(
                i as f64 * cfg.block_size + dx,
                j as f64 * cfg.block_size + dy,
            ));
        }
    }
    let id = |i: usize, j: usize| j * n + i;
    // whole interior streets become oneway, alternating direction
    let mut oneway_rows = vec![false; n];
    let mut oneway_cols = vec![false; n];
    for k in 1..blocks {
        oneway_rows[k] = rng.gen_bool(cfg.oneway_fraction.clamp(0.0, 1.0));
        oneway_cols[k] = rng.gen_bool(cfg.oneway_fraction.clamp(0.0, 1.0));
    }
    let mut edges = Vec::new();
    for j in 0..n {
        let (ty, lanes, speed) = street_class(j, blocks);
        for i in 0..blocks {
            let (a, b) = if oneway_rows[j] && j % 2 == 1 {
                (id(i + 1, j), id(i, j))
            } else {
                (id(i, j), id(i + 1, j))
            };
            edges.push(edge(a, b, ty, lanes, speed, oneway_rows[j]));
        }
    }
    for i in 0..n {
        let (ty, lanes, speed) = street_class(i, blocks);
        for j in 0..blocks {
            let (a, b) = if oneway_cols[i] && i % 2 == 1 {
                (id(i, j + 1), id(i, j))
            } else {
                (id(i, j), id(i, j + 1))
            };
            edges.push(edge(a, b, ty, lanes, speed, oneway_cols[i]));
        }
    }
    PrimalNetwork {
        origin: [0.0; 3],
        nodes,
        edges,
    }
}

fn radial(cfg: &NetworkConfig, seed: u64) -> PrimalNetwork {
    let mut rng = stream_rng(seed, 0);
    let rings = ((cfg.extent / cfg.block_size).round() as usize).max(1);
    let spokes = cfg.spokes.max(3);
    let mut nodes = vec![EnuPoint::horizontal(0.0, 0.0)];
    let rotation = rng.gen_range(0.0..TAU);
    for r in 1..=rings {
        for s in 0..spokes {
            let theta = rotation + TAU * s as f64 / spokes as f64;
            let radius = r as f64 * cfg.block_size;
            nodes.push(EnuPoint::horizontal(radius * theta.cos(), radius * theta.sin()));
        }
    }
    let id = |r: usize, s: usize| 1 + (r - 1) * spokes + s % spokes;
    let mut edges = Vec::new();
    for s in 0..spokes {
        edges.push(edge(0, id(1, s), "secondary", Some(2), Some(11.1), false));
        for r in 1..rings {
            edges.push(edge(id(r, s), id(r + 1, s), "secondary", Some(2), Some(11.1), false));
        }
    }
    for r in 1..=rings {
        let outer = r == rings;
        let oneway = !outer && rng.gen_bool(cfg.oneway_fraction.clamp(0.0, 1.0));
        let (ty, speed) = if outer { ("primary", 13.9) } else { ("residential", 8.3) };
        for s in 0..spokes {
            let (a, b) = if oneway && r % 2 == 0 {
                (id(r, s + 1), id(r, s))
            } else {
                (id(r, s), id(r, s + 1))
            };
            edges.push(edge(a, b, ty, None, Some(speed), oneway));
        }
    }
    PrimalNetwork {
        origin: [0.0; 3],
        nodes,
        edges,
    }
}

fn parallel(cfg: &NetworkConfig) -> PrimalNetwork {
    let nodes = vec![
        EnuPoint::horizontal(0.0, 0.0),
        EnuPoint::horizontal(cfg.length, 0.0),
        EnuPoint::horizontal(0.0, cfg.separation),
        EnuPoint::horizontal(cfg.length, cfg.separation),
    ];
    PrimalNetwork {
        origin: [0.0; 3],
        nodes,
        edges: vec![
            edge(0, 1, "primary", Some(3), Some(13.9), false),
            edge(2, 3, "primary", Some(3), Some(13.9), false),
        ],
    }
}

/// Primal road network of the configured kind. Imported networks are read
/// from a file instead and are rejected here.
pub fn generate_network(cfg: &NetworkConfig, seed: u64) -> Result<PrimalNetwork> {
    if !(cfg.extent > 0.0 && cfg.block_size > 0.0 && cfg.length > 0.0 && cfg.separation > 0.0) {
        return Err(Error::Config("network sizes must be positive".into()));
    }
    match cfg.kind {
        NetworkKind::Grid => Ok(grid(cfg, seed)),
        NetworkKind::Radial => Ok(radial(cfg, seed)),
        NetworkKind::ParallelRoads => Ok(parallel(cfg)),
        NetworkKind::Imported => Err(Error::Config(
            "imported networks are loaded from a network file, not generated".into(),
        )),
    }
}

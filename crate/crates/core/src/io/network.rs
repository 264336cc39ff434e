use std::collections::HashMap;
use std::fmt::Write;
use std::path::Path;

use super::records::{float, opt, Records};
use super::{read_text, write_atomic};
use crate::error::FormatError;
use crate::geo::EnuPoint;
use crate::roadnet::{PrimalEdge, PrimalNetwork};

pub const NETWORK_HEADER: &str = "roadkf-network 1";

pub fn format_network(net: &PrimalNetwork) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{NETWORK_HEADER}");
    let [lat, lon, h] = net.origin;
    let _ = writeln!(s, "origin {} {} {}", float(lat), float(lon), float(h));
    for (i, n) in net.nodes.iter().enumerate() {
        let _ = writeln!(s, "node {i} {} {} {}", float(n.east), float(n.north), float(n.up));
    }
    for e in &net.edges {
        let _ = writeln!(
            s,
            "edge {} {} {} {} {} {}",
            e.from,
            e.to,
            e.road_type,
            opt(e.lanes),
            opt(e.max_speed.map(float)),
            opt(e.oneway.map(u8::from)),
        );
    }
    s
}

pub fn parse_network(text: &str) -> Result<PrimalNetwork, FormatError> {
    let mut r = Records::new(text);
    r.header(NETWORK_HEADER)?;
    let o = r.expect("origin")?;
    o.expect_len(3)?;
    let origin = o.floats::<3>(0, "origin")?;
    let mut ids = HashMap::new();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    while let Some(rec) = r.next_record() {
        match rec.tag {
            "node" => {
                if !edges.is_empty() {
                    return Err(rec.error("node records must precede edges"));
                }
                rec.expect_len(4)?;
                let id: u64 = rec.get(0, "node id")?;
                let [e, n, u] = rec.floats::<3>(1, "coordinate")?;
                if ids.insert(id, nodes.len()).is_some() {
                    return Err(rec.error(format!("duplicate node id {id}")));
                }
                nodes.push(EnuPoint::new(e, n, u));
            }
            "edge" => {
                rec.expect_len(6)?;
                let node = |i: usize| -> Result<usize, FormatError> {
                    let id: u64 = rec.get(i, "node id")?;
                    ids.get(&id).copied().ok_or_else(|| rec.reference(format!("unknown node id {id}")))
                };
                let (from, to) = (node(0)?, node(1)?);
                if from == to {
                    return Err(rec.error("edge joins a node to itself"));
                }
                let road_type = rec.str(2)?.to_string();
                let lanes = rec.optional::<u32>(3, "lane count")?;
                let max_speed = rec.optional::<f64>(4, "max speed")?;
                if max_speed.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
                    return Err(rec.error("max speed must be positive"));
                }
                let oneway = match rec.str(5)? {
                    "-" => None,
                    "0" => Some(false),
                    "1" => Some(true),
                    other => return Err(rec.error(format!("invalid oneway flag {other:?}"))),
                };
                edges.push(PrimalEdge {
                    from,
                    to,
                    lanes,
                    max_speed,
                    road_type,
                    oneway,
                });
            }
            other => return Err(rec.error(format!("unknown record {other:?}"))),
        }
    }
    Ok(PrimalNetwork { origin, nodes, edges })
}

pub fn write_network(path: &Path, net: &PrimalNetwork) -> Result<(), FormatError> {
    write_atomic(path, format_network(net).as_bytes())
}

pub fn read_network(path: &Path) -> Result<PrimalNetwork, FormatError> {
    parse_network(&read_text(path)?)
}

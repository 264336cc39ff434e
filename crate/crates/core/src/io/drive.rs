use std::fmt::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::records::{float, opt, push_floats, Records};
use super::{read_text, write_atomic};
use crate::error::FormatError;
use crate::geo::EnuPoint;
use crate::kalman::{GnssEpoch, SatelliteObs};
use crate::roadnet::RoadGraph;
use crate::sim::{DriveEpoch, DriveRecord, ScenarioConfig, TruthState};

pub const DRIVE_HEADER: &str = "roadkf-drive 1";
pub const LABELS_HEADER: &str = "roadkf-labels 1";

pub fn format_drive(drive: &DriveRecord) -> Result<String, FormatError> {
    let mut s = String::new();
    let _ = writeln!(s, "{DRIVE_HEADER}");
    let _ = writeln!(s, "network {}", drive.network);
    let _ = writeln!(s, "seed {}", drive.seed);
    let config = toml::to_string(&drive.config).map_err(|e| FormatError::Parse {
        line: 0,
        message: format!("cannot encode scenario config: {e}"),
    })?;
    for l in config.lines() {
        let _ = writeln!(s, "config {l}");
    }
    let _ = writeln!(s, "epochs {}", drive.epochs.len());
    for e in &drive.epochs {
        let t = &e.truth;
        let mut line = format!("epoch {}", float(e.gnss.time));
        push_floats(
            &mut line,
            &[
                t.position.east,
                t.position.north,
                t.position.up,
                t.velocity.x,
                t.velocity.y,
                t.velocity.z,
                t.clock_bias,
                t.clock_drift,
            ],
        );
        let _ = writeln!(s, "{line} {} {}", e.segment, e.gnss.satellites.len());
        for sat in &e.gnss.satellites {
            let mut line = "sat".to_string();
            push_floats(
                &mut line,
                &[
                    sat.position.east,
                    sat.position.north,
                    sat.position.up,
                    sat.velocity.x,
                    sat.velocity.y,
                    sat.velocity.z,
                    sat.pseudorange,
                    sat.pseudorange_rate,
                    sat.range_sigma,
                    sat.rate_sigma,
                ],
            );
            let _ = writeln!(s, "{line}");
        }
    }
    Ok(s)
}

/// Parses a drive file. With `graph`, truth segment ids are checked against
/// it.
pub fn parse_drive(text: &str, graph: Option<&RoadGraph>) -> Result<DriveRecord, FormatError> {
    let mut r = Records::new(text);
    r.header(DRIVE_HEADER)?;
    let network = r.expect("network")?.rest().to_string();
    let seed_rec = r.expect("seed")?;
    let seed = seed_rec.get(0, "seed")?;
    let mut config_text = String::new();
    let mut config_line = 0;
    while r.peek_tag() == Some("config") {
        let rec = r.expect("config")?;
        config_line = config_line.max(rec.line);
        config_text.push_str(rec.rest());
        config_text.push('\n');
    }
    let config: ScenarioConfig = toml::from_str(&config_text).map_err(|e| FormatError::Parse {
        line: config_line,
        message: format!("scenario config: {e}"),
    })?;
    let n_rec = r.expect("epochs")?;
    let n: usize = n_rec.get(0, "epoch count")?;
    let mut epochs = Vec::with_capacity(n);
    for _ in 0..n {
        let rec = r.expect("epoch")?;
        rec.expect_len(11)?;
        let v = rec.floats::<9>(0, "epoch value")?;
        if let Some(prev) = epochs.last().map(|e: &DriveEpoch| e.gnss.time) {
            if v[0] <= prev {
                return Err(rec.error(format!("time {} does not increase", v[0])));
            }
        }
        let segment: usize = rec.get(9, "segment id")?;
        if let Some(g) = graph {
            if segment >= g.len() {
                return Err(rec.reference(format!("segment id {segment} not in a network of {} segments", g.len())));
            }
        }
        let sats: usize = rec.get(10, "satellite count")?;
        let mut satellites = Vec::with_capacity(sats);
        for _ in 0..sats {
            let s = r.expect("sat")?;
            s.expect_len(10)?;
            let f = s.floats::<10>(0, "satellite value")?;
            if f[8] <= 0.0 || f[9] <= 0.0 {
                return Err(s.error("satellite sigmas must be positive"));
            }
            satellites.push(SatelliteObs {
                position: EnuPoint::new(f[0], f[1], f[2]),
                velocity: Vector3::new(f[3], f[4], f[5]),
                pseudorange: f[6],
                pseudorange_rate: f[7],
                range_sigma: f[8],
                rate_sigma: f[9],
            });
        }
        epochs.push(DriveEpoch {
            truth: TruthState {
                position: EnuPoint::new(v[1], v[2], v[3]),
                velocity: Vector3::new(v[4], v[5], v[6]),
                clock_bias: v[7],
                clock_drift: v[8],
            },
            segment,
            gnss: GnssEpoch { time: v[0], satellites },
        });
    }
    r.finish()?;
    Ok(DriveRecord {
        network,
        seed,
        config,
        epochs,
    })
}

/// Checks truth segment ids of an already loaded drive.
pub fn validate_drive(drive: &DriveRecord, graph: &RoadGraph) -> Result<(), FormatError> {
    match drive.epochs.iter().position(|e| e.segment >= graph.len()) {
        None => Ok(()),
        Some(t) => Err(FormatError::Reference {
            line: 0,
            message: format!("epoch {t}: segment id {} not in the network", drive.epochs[t].segment),
        }),
    }
}

pub fn write_drive(path: &Path, drive: &DriveRecord) -> Result<(), FormatError> {
    write_atomic(path, format_drive(drive)?.as_bytes())
}

pub fn read_drive(path: &Path, graph: Option<&RoadGraph>) -> Result<DriveRecord, FormatError> {
    parse_drive(&read_text(path)?, graph)
}

/// Oracle labels of one drive.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub network: String,
    pub seed: u64,
    pub labels: Vec<Option<usize>>,
}

impl LabelFile {
    pub fn for_drive(drive: &DriveRecord, labels: Vec<Option<usize>>) -> Self {
        Self {
            network: drive.network.clone(),
            seed: drive.seed,
            labels,
        }
    }

    /// Labels must belong to `drive` and cover each of its epochs.
    pub fn check(&self, drive: &DriveRecord) -> Result<(), FormatError> {
        if self.network != drive.network || self.seed != drive.seed {
            return Err(FormatError::Reference {
                line: 2,
                message: format!(
                    "labels are for drive {}/{}, not {}/{}",
                    self.network, self.seed, drive.network, drive.seed
                ),
            });
        }
        if self.labels.len() != drive.epochs.len() {
            return Err(FormatError::Reference {
                line: 3,
                message: format!("{} labels for {} epochs", self.labels.len(), drive.epochs.len()),
            });
        }
        Ok(())
    }
}

pub fn format_labels(labels: &LabelFile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{LABELS_HEADER}");
    let _ = writeln!(s, "drive {} {}", labels.network, labels.seed);
    let _ = writeln!(s, "epochs {}", labels.labels.len());
    for (t, l) in labels.labels.iter().enumerate() {
        let _ = writeln!(s, "label {t} {}", opt(*l));
    }
    s
}

pub fn parse_labels(text: &str) -> Result<LabelFile, FormatError> {
    let mut r = Records::new(text);
    r.header(LABELS_HEADER)?;
    let d = r.expect("drive")?;
    d.expect_len(2)?;
    let network = d.str(0)?.to_string();
    let seed = d.get(1, "seed")?;
    let n: usize = r.expect("epochs")?.get(0, "epoch count")?;
    let mut labels = Vec::with_capacity(n);
    for t in 0..n {
        let rec = r.expect("label")?;
        rec.expect_len(2)?;
        let idx: usize = rec.get(0, "epoch index")?;
        if idx != t {
            return Err(rec.error(format!("expected epoch {t}, found {idx}")));
        }
        labels.push(rec.optional(1, "segment id")?);
    }
    r.finish()?;
    Ok(LabelFile { network, seed, labels })
}

pub fn write_labels(path: &Path, labels: &LabelFile) -> Result<(), FormatError> {
    write_atomic(path, format_labels(labels).as_bytes())
}

pub fn read_labels(path: &Path) -> Result<LabelFile, FormatError> {
    parse_labels(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::RoadDefaults;
    use crate::sim::{generate_drive, generate_network};

    fn sample() -> (RoadGraph, DriveRecord) {
        let mut scenario = ScenarioConfig::urban();
        scenario.drive.duration = 20.0;
        let graph = generate_network(&scenario.network, 1)
            .unwrap()
            .build_graph(&RoadDefaults::default())
            .unwrap();
        let drive = generate_drive(&graph, "region0", &scenario, 5).unwrap();
        (graph, drive)
    }

    #[test]
    fn drives_round_trip_exactly() {
        let (graph, drive) = sample();
        let text = format_drive(&drive).unwrap();
        assert_eq!(parse_drive(&text, Some(&graph)).unwrap(), drive);
        assert_eq!(format_drive(&parse_drive(&text, None).unwrap()).unwrap(), text);
    }

    #[test]
    fn corrupt_segment_reference_is_rejected_with_its_line() {
        let (graph, drive) = sample();
        let text = format_drive(&drive).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let (i, line) = lines.iter().enumerate().filter(|(_, l)| l.starts_with("epoch ")).nth(3).unwrap();
        let mut fields: Vec<String> = line.split_whitespace().map(String::from).collect();
        fields[10] = (graph.len() + 5).to_string();
        let mut corrupted: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
        corrupted[i] = fields.join(" ");
        let err = parse_drive(&corrupted.join("\n"), Some(&graph)).unwrap_err();
        assert!(matches!(err, FormatError::Reference { line, .. } if line == i + 1), "{err}");
        assert!(err.to_string().starts_with(&format!("line {}:", i + 1)));
    }

    #[test]
    fn time_must_increase_and_truncation_is_reported() {
        let (_, mut drive) = sample();
        let text = format_drive(&drive).unwrap();
        let cut = &text[..text.len() / 2];
        let cut = &cut[..cut.rfind('\n').unwrap()];
        assert!(matches!(parse_drive(cut, None), Err(FormatError::Truncated(_))));
        drive.epochs[2].gnss.time = drive.epochs[1].gnss.time;
        let err = parse_drive(&format_drive(&drive).unwrap(), None).unwrap_err();
        assert!(err.to_string().contains("does not increase"), "{err}");
    }

    #[test]
    fn labels_round_trip_and_check_their_drive() {
        let (_, drive) = sample();
        let mut labels: Vec<Option<usize>> = drive.epochs.iter().map(|e| Some(e.segment)).collect();
        labels[3] = None;
        let file = LabelFile::for_drive(&drive, labels);
        let back = parse_labels(&format_labels(&file)).unwrap();
        assert_eq!(back, file);
        back.check(&drive).unwrap();
        let mut short = back.clone();
        short.labels.pop();
        assert!(short.check(&drive).is_err());
        let mut other = back;
        other.seed += 1;
        assert!(other.check(&drive).is_err());
    }
}

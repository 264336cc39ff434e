use std::fmt::Write;
use std::path::Path;

use super::records::{float, Records};
use super::{read_text, write_atomic};
use crate::error::FormatError;
use crate::geo::EnuPoint;
use crate::harness::{Method, ResultRow};

pub const RESULTS_HEADER: &str = "roadkf-results 1";
pub const CSV_HEADER: &str = "method,fold,seed,he50_m,he95_m,epochs,drives";

/// Per-epoch output of one method on one drive.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultFile {
    pub method: Method,
    pub network: String,
    pub seed: u64,
    pub positions: Vec<EnuPoint>,
    pub errors: Vec<f64>,
}

pub fn format_results(r: &ResultFile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{RESULTS_HEADER}");
    let _ = writeln!(s, "method {}", r.method);
    let _ = writeln!(s, "drive {} {}", r.network, r.seed);
    let _ = writeln!(s, "epochs {}", r.positions.len());
    for (t, (p, e)) in r.positions.iter().zip(&r.errors).enumerate() {
        let _ = writeln!(s, "result {t} {} {} {} {}", float(p.east), float(p.north), float(p.up), float(*e));
    }
    s
}

pub fn parse_results(text: &str) -> Result<ResultFile, FormatError> {
    let mut r = Records::new(text);
    r.header(RESULTS_HEADER)?;
    let m = r.expect("method")?;
    let method: Method = m.rest().parse().map_err(|_| m.error(format!("unknown method {:?}", m.rest())))?;
    let d = r.expect("drive")?;
    d.expect_len(2)?;
    let network = d.str(0)?.to_string();
    let seed = d.get(1, "seed")?;
    let n: usize = r.expect("epochs")?.get(0, "epoch count")?;
    let (mut positions, mut errors) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for t in 0..n {
        let rec = r.expect("result")?;
        rec.expect_len(5)?;
        if rec.get::<usize>(0, "epoch index")? != t {
            return Err(rec.error(format!("expected epoch {t}")));
        }
        let [e, no, u, err] = rec.floats::<4>(1, "result value")?;
        if err < 0.0 {
            return Err(rec.error("negative horizontal error"));
        }
        positions.push(EnuPoint::new(e, no, u));
        errors.push(err);
    }
    r.finish()?;
    Ok(ResultFile {
        method,
        network,
        seed,
        positions,
        errors,
    })
}

pub fn write_results(path: &Path, r: &ResultFile) -> Result<(), FormatError> {
    write_atomic(path, format_results(r).as_bytes())
}

pub fn read_results(path: &Path) -> Result<ResultFile, FormatError> {
    parse_results(&read_text(path)?)
}

/// Evaluation rows as CSV; deterministic methods leave the seed empty.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{CSV_HEADER}");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method,
            r.fold,
            r.seed.map_or(String::new(), |v| v.to_string()),
            float(r.he50_m),
            float(r.he95_m),
            r.epochs,
            r.drives
        );
    }
    s
}

pub fn read_results_csv(text: &str) -> Result<Vec<ResultRow>, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(FormatError::Version {
                line: 1,
                found: h.to_string(),
                expected: CSV_HEADER,
            })
        }
        None => return Err(FormatError::Truncated("empty results table".into())),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let err = |m: String| FormatError::Parse { line: i + 1, message: m };
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(err(format!("expected 7 columns, found {}", f.len())));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| err(format!("invalid number {:?}", f[k])));
            let int = |k: usize| f[k].parse::<usize>().map_err(|_| err(format!("invalid count {:?}", f[k])));
            Ok(ResultRow {
                method: f[0].parse().map_err(|_| err(format!("unknown method {:?}", f[0])))?,
                fold: int(1)?,
                seed: match f[2] {
                    "" => None,
                    s => Some(s.parse().map_err(|_| err(format!("invalid seed {s:?}")))?),
                },
                he50_m: num(3)?,
                he95_m: num(4)?,
                epochs: int(5)?,
                drives: int(6)?,
            })
        })
        .collect()
}

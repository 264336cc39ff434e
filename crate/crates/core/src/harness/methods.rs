use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pipeline::{
    positions, run_kf, run_ls, InstantSelector, OracleSelector, PipelineConfig, RoadVariances, ViterbiSelector,
};
use crate::error::{Error, Result};
use crate::geo::EnuPoint;
use crate::roadnet::RoadGraph;
use crate::selection::RoadHmm;
use crate::sim::DriveRecord;
use crate::tgnn::{Model, ModelKind, TgnnSelector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "KF")]
    Kf,
    #[serde(rename = "KF+Instant")]
    Instant,
    #[serde(rename = "KF+Viterbi")]
    Viterbi,
    #[serde(rename = "KF+Oracle")]
    Oracle,
    #[serde(rename = "KF+TGNN")]
    Tgnn,
    #[serde(rename = "KF+GNN")]
    Gnn,
    #[serde(rename = "KF+MLP")]
    Mlp,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ls,
        Method::Kf,
        Method::Instant,
        Method::Viterbi,
        Method::Oracle,
        Method::Tgnn,
        Method::Gnn,
        Method::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ls => "LS",
            Method::Kf => "KF",
            Method::Instant => "KF+Instant",
            Method::Viterbi => "KF+Viterbi",
            Method::Oracle => "KF+Oracle",
            Method::Tgnn => "KF+TGNN",
            Method::Gnn => "KF+GNN",
            Method::Mlp => "KF+MLP",
        }
    }

    /// Network architecture behind a learned method.
    pub fn model_kind(self) -> Option<ModelKind> {
        match self {
            Method::Tgnn => Some(ModelKind::Tgnn),
            Method::Gnn => Some(ModelKind::Gnn),
            Method::Mlp => Some(ModelKind::Mlp),
            _ => None,
        }
    }

    pub fn is_learned(self) -> bool {
        self.model_kind().is_some()
    }

    /// Classical selectors whose road variances are tuned by grid search.
    pub fn is_tuned(self) -> bool {
        matches!(self, Method::Instant | Method::Viterbi)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts the display name, with or without the `KF+` prefix.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Method::ALL
            .into_iter()
            .find(|m| {
                let name = m.name();
                name.eq_ignore_ascii_case(s) || name.strip_prefix("KF+").is_some_and(|n| n.eq_ignore_ascii_case(s))
            })
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// Everything a method may need besides the drive.
#[derive(Clone, Copy, Default)]
pub struct MethodInputs<'a> {
    /// Road variances of the classical selectors, or an override for the
    /// learned ones.
    pub variances: Option<RoadVariances>,
    pub labels: Option<&'a [Option<usize>]>,
    pub model: Option<&'a Model>,
}

/// Runs `method` over one drive and returns the position of every epoch.
pub fn run_method(
    method: Method,
    drive: &DriveRecord,
    graph: &RoadGraph,
    inputs: &MethodInputs<'_>,
    cfg: &PipelineConfig,
) -> Result<Vec<EnuPoint>> {
    let missing = |what: &str| Error::Config(format!("{method} needs {what}"));
    let estimates = match method {
        Method::Ls => return run_ls(drive),
        Method::Kf => run_kf(drive, graph, None, cfg)?,
        Method::Instant => {
            let variances = inputs.variances.ok_or_else(|| missing("road variances"))?;
            let mut sel = InstantSelector { graph, variances };
            run_kf(drive, graph, Some(&mut sel), cfg)?
        }
        Method::Viterbi => {
            let variances = inputs.variances.ok_or_else(|| missing("road variances"))?;
            let hmm = RoadHmm::new(graph, cfg.emission);
            let mut sel = ViterbiSelector::new(&hmm, variances);
            run_kf(drive, graph, Some(&mut sel), cfg)?
        }
        Method::Oracle => {
            let labels = inputs.labels.ok_or_else(|| missing("oracle labels"))?;
            if labels.len() != drive.epochs.len() {
                return Err(Error::Invalid(format!(
                    "{} oracle labels for {} epochs",
                    labels.len(),
                    drive.epochs.len()
                )));
            }
            let mut sel = OracleSelector { labels };
            run_kf(drive, graph, Some(&mut sel), cfg)?
        }
        Method::Tgnn | Method::Gnn | Method::Mlp => {
            let model = inputs.model.ok_or_else(|| missing("a model checkpoint"))?;
            if Some(model.kind()) != method.model_kind() {
                return Err(Error::Config(format!("{method} given a {} model", model.kind())));
            }
            let mut sel = TgnnSelector::new(model, graph, cfg.emission);
            sel.variances = inputs.variances;
            run_kf(drive, graph, Some(&mut sel), cfg)?
        }
    };
    Ok(positions(&estimates))
}

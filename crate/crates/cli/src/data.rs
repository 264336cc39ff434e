//! On-disk layout of a benchmark:
//!
//! ```text
//! DIR/region0/network.txt
//! DIR/region0/drive_00.txt
//! DIR/region0/labels_00.txt
//! DIR/region1/...
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use roadkf::harness::FoldData;
use roadkf::io::{read_drive, read_labels, read_network};
use roadkf::roadnet::{RoadDefaults, RoadGraph};
use roadkf::sim::DriveRecord;

pub fn region_dir(root: &Path, region: usize) -> PathBuf {
    root.join(format!("region{region}"))
}

pub fn network_path(region: &Path) -> PathBuf {
    region.join("network.txt")
}

pub fn drive_path(region: &Path, d: usize) -> PathBuf {
    region.join(format!("drive_{d:02}.txt"))
}

pub fn labels_path(region: &Path, d: usize) -> PathBuf {
    region.join(format!("labels_{d:02}.txt"))
}

/// Region directories under `root`, in index order.
pub fn regions(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    while region_dir(root, out.len()).is_dir() {
        out.push(region_dir(root, out.len()));
    }
    if out.is_empty() {
        bail!("no region0 directory under {}", root.display());
    }
    Ok(out)
}

/// Drive indices present in a region directory.
pub fn drive_count(region: &Path) -> usize {
    (0..).take_while(|&d| drive_path(region, d).is_file()).count()
}

pub struct RegionFiles {
    pub name: String,
    pub graph: RoadGraph,
    pub drives: Vec<DriveRecord>,
    pub labels: Option<Vec<Vec<Option<usize>>>>,
}

impl RegionFiles {
    pub fn load(dir: &Path, defaults: &RoadDefaults, with_labels: bool) -> Result<Self> {
        let name = dir.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        let net_path = network_path(dir);
        let network = read_network(&net_path).with_context(|| format!("{}", net_path.display()))?;
        let graph = network.build_graph(defaults).with_context(|| format!("{}", net_path.display()))?;
        let mut drives = Vec::new();
        let mut labels = Vec::new();
        for d in 0..drive_count(dir) {
            let p = drive_path(dir, d);
            let drive = read_drive(&p, Some(&graph)).with_context(|| format!("{}", p.display()))?;
            if with_labels {
                let lp = labels_path(dir, d);
                let file = read_labels(&lp).with_context(|| format!("{} (run label-oracle first)", lp.display()))?;
                file.check(&drive).with_context(|| format!("{}", lp.display()))?;
                labels.push(file.labels);
            }
            drives.push(drive);
        }
        if drives.is_empty() {
            bail!("no drives in {} (run gen-drives first)", dir.display());
        }
        Ok(Self {
            name,
            graph,
            drives,
            labels: with_labels.then_some(labels),
        })
    }

    pub fn fold(&self) -> Result<FoldData<'_>> {
        let labels = self.labels.clone().context("labels not loaded")?;
        Ok(FoldData::new(self.name.clone(), &self.graph, &self.drives, labels)?)
    }
}

pub fn load_all(root: &Path, defaults: &RoadDefaults, with_labels: bool) -> Result<Vec<RegionFiles>> {
    regions(root)?
        .iter()
        .map(|r| RegionFiles::load(r, defaults, with_labels))
        .collect()
}

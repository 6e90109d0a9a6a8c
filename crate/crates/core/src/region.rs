//! Region membership shared by the simulator, the detector and the estimator.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// A coherent region: its member buses, the branches crossing its boundary
/// and, when known, its true aggregate inertia in seconds on the system base.
///
/// A tie-line entry names a measured flow channel. The flow is read as export
/// from the region; prefix the id with `-` when the channel is metered in the
/// opposite direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub region_id: String,
    pub buses: Vec<String>,
    #[serde(default)]
    pub tie_lines: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_true: Option<f64>,
}

/// Splits a tie-line entry into its channel id and orientation sign.
pub fn tie_orientation(entry: &str) -> (&str, f64) {
    match entry.strip_prefix('-') {
        Some(id) => (id, -1.0),
        None => (entry, 1.0),
    }
}

pub fn load_regions(path: &Path) -> Result<Vec<RegionSpec>, std::io::Error> {
    let file = File::open(path)?;
    serde_json::from_reader(file).map_err(std::io::Error::other)
}

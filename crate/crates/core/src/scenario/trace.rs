//! Line-delimited JSON episode traces for offline visualization.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{Event, FactoredAction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceAction {
    pub group: String,
    /// Action executed in the environment.
    pub taken: FactoredAction,
    pub command: String,
    /// Action sampled from the benign observation, when recorded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benign: Option<FactoredAction>,
    /// Action sampled from the perturbed observation, when recorded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subverted: Option<FactoredAction>,
    /// Whether the attack changed the per-head argmax action.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flipped: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode: usize,
    pub timestep: u32,
    pub actions: Vec<TraceAction>,
    pub reward: f64,
    pub events: Vec<Event>,
}

pub fn write_trace<W: Write>(mut w: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace(text: &str) -> Result<Vec<TraceRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

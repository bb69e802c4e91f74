use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AssignmentEvent, MaintenanceInterval};
use crate::error::{Error, Result};
use crate::scenario::{DemandTier, EpisodeInstance, ScenarioConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario: String,
    pub fingerprint: String,
    pub tier: DemandTier,
    pub episode_seed: u64,
    pub breakdown_seed: u64,
    pub horizon_ticks: u32,
}

/// Assignment events plus realised maintenance, in time order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<AssignmentEvent>,
    pub maintenance: Vec<MaintenanceInterval>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header(TraceHeader),
    Assign(AssignmentEvent),
    Maintenance(MaintenanceInterval),
}

impl Trace {
    pub fn new(
        config: &ScenarioConfig,
        episode: &EpisodeInstance,
        events: Vec<AssignmentEvent>,
        maintenance: Vec<MaintenanceInterval>,
    ) -> Trace {
        Trace {
            header: TraceHeader {
                scenario: config.name.clone(),
                fingerprint: config.fingerprint(),
                tier: episode.tier,
                episode_seed: episode.seed,
                breakdown_seed: episode.breakdown_trace_seed,
                horizon_ticks: episode.horizon_ticks(config),
            },
            events,
            maintenance,
        }
    }

    /// One JSON record per line: the header, then assignments, then maintenance.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |r: &Record| {
            let line = serde_json::to_string(r).expect("trace record serializes");
            writeln!(out, "{line}").expect("string write");
        };
        push(&Record::Header(self.header.clone()));
        for e in &self.events {
            push(&Record::Assign(*e));
        }
        for m in &self.maintenance {
            push(&Record::Maintenance(*m));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace> {
        let mut header = None;
        let mut events = Vec::new();
        let mut maintenance = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("trace line {}: {e}", n + 1)))?;
            match record {
                Record::Header(h) => {
                    if header.replace(h).is_some() {
                        return Err(Error::MalformedTrace("duplicate header".into()));
                    }
                }
                Record::Assign(e) => events.push(e),
                Record::Maintenance(m) => maintenance.push(m),
            }
        }
        let header = header.ok_or_else(|| Error::MalformedTrace("missing header".into()))?;
        Ok(Trace {
            header,
            events,
            maintenance,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Trace> {
        Trace::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

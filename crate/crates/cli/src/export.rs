//! Per-tick, per-agent tables of an episode.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use canal_core::engine::EpisodeLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    /// One JSON object per line, after a line listing the columns.
    Records,
    Csv,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "records" => Ok(ExportFormat::Records),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(format!("unknown export format `{other}`; expected records or csv")),
        }
    }
}

impl ExportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ExportFormat::Records => "records.jsonl",
            ExportFormat::Csv => "csv",
        }
    }
}

pub const COLUMNS: [&str; 18] = [
    "time_s",
    "tick",
    "agent_id",
    "x_m",
    "y_m",
    "heading_rad",
    "surge_mps",
    "sway_mps",
    "yaw_rate_radps",
    "f1_n",
    "f2_n",
    "f3_n",
    "f4_n",
    "goal_x_m",
    "goal_y_m",
    "violation",
    "collision",
    "terminal",
];

/// One agent on one tick. `goal_*` is the local goal in force on that tick;
/// `violation` is set when the agent is part of a flagged pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub time_s: f64,
    pub tick: u64,
    pub agent_id: u32,
    pub x_m: f64,
    pub y_m: f64,
    pub heading_rad: f64,
    pub surge_mps: f64,
    pub sway_mps: f64,
    pub yaw_rate_radps: f64,
    pub f1_n: f64,
    pub f2_n: f64,
    pub f3_n: f64,
    pub f4_n: f64,
    pub goal_x_m: f64,
    pub goal_y_m: f64,
    pub violation: u8,
    pub collision: u8,
    pub terminal: u8,
}

pub fn episode_rows(log: &EpisodeLog) -> Vec<EpisodeRow> {
    let mut rows = Vec::with_capacity(log.ticks.len() * log.agents.len());
    for t in &log.ticks {
        for (i, a) in log.agents.iter().enumerate() {
            let s = &t.states[i];
            let u = t.inputs[i].0;
            let g = t.local_goals[i];
            rows.push(EpisodeRow {
                time_s: t.time_s,
                tick: t.tick,
                agent_id: a.id,
                x_m: s.x,
                y_m: s.y,
                heading_rad: s.heading,
                surge_mps: s.surge,
                sway_mps: s.sway,
                yaw_rate_radps: s.yaw_rate,
                f1_n: u[0],
                f2_n: u[1],
                f3_n: u[2],
                f4_n: u[3],
                goal_x_m: g.x,
                goal_y_m: g.y,
                violation: t.violations.iter().any(|p| p.contains(&a.id)) as u8,
                collision: t.collision as u8,
                terminal: t.terminal as u8,
            });
        }
    }
    rows
}

pub fn export_episode(log: &EpisodeLog, format: ExportFormat, path: &Path) -> std::io::Result<()> {
    let rows = episode_rows(log);
    match format {
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
            w.write_record(COLUMNS)?;
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()
        }
        ExportFormat::Records => {
            let mut w = BufWriter::new(File::create(path)?);
            serde_json::to_writer(&mut w, &serde_json::json!({ "columns": COLUMNS }))?;
            writeln!(w)?;
            for r in &rows {
                serde_json::to_writer(&mut w, r)?;
                writeln!(w)?;
            }
            w.flush()
        }
    }
}

pub fn import_csv(path: &Path) -> Result<Vec<EpisodeRow>, csv::Error> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().collect()
}

pub fn import_records(path: &Path) -> std::io::Result<Vec<EpisodeRow>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines().skip(1) {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

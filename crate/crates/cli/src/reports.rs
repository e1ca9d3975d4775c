//! Flat-file outputs: CSV series and JSON results.
//!
//! CSV is the plotting contract; no figure rendering happens here. Floats
//! use Rust's shortest round-trip formatting, so identical runs produce
//! byte-identical files.

use crate::error::CliError;
use beamopt::cloud::LabeledPointCloud;
use beamopt::features::{BeamStats, StatsTable};
use beamopt::locenv::RouteReport;
use beamopt::search::{ExhaustiveTable, SearchResult, StepKind};
use beamopt::sim::MapCloud;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Envelope written around every search result.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultFile {
    pub tool_version: String,
    pub config_hash: String,
    pub result: SearchResult,
}

pub fn tool_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

/// Provenance comment prepended to CSV and text outputs so every file
/// carries the tool version and the hash of the inputs that produced it.
pub fn with_provenance(content: &str, input_hash: &str) -> String {
    format!(
        "# beamopt {} input {}\n{}",
        tool_version(),
        input_hash,
        content
    )
}

pub fn result_json(result: &SearchResult, config_hash: &str) -> String {
    let file = ResultFile {
        tool_version: tool_version(),
        config_hash: config_hash.to_string(),
        result: result.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("result serializes");
    text.push('\n');
    text
}

pub fn read_result(path: &Path) -> Result<ResultFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn action_cell(kind: &StepKind) -> String {
    match kind {
        StepKind::WarmStart => "warm".to_string(),
        StepKind::Explore => "explore".to_string(),
        StepKind::Greedy(action) => {
            let mut cell = String::from("greedy(");
            for (i, d) in action.deltas().iter().enumerate() {
                if i > 0 {
                    cell.push(';');
                }
                let _ = write!(cell, "{d}");
            }
            cell.push(')');
            cell
        }
    }
}

/// One row per visited state: `step,beam_ids,value,epsilon_draw,action`.
pub fn history_csv(result: &SearchResult) -> String {
    let mut out = String::from("step,beam_ids,value,epsilon_draw,action\n");
    for record in &result.history {
        let draw = record
            .epsilon_draw
            .map(|d| d.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            record.step,
            record.config.canonical_key(),
            record.value,
            draw,
            action_cell(&record.kind)
        );
    }
    out
}

/// `step,best_value`: the running maximum of the true value.
pub fn best_so_far_csv(result: &SearchResult) -> String {
    let mut out = String::from("step,best_value\n");
    for (record, best) in result.history.iter().zip(result.best_so_far()) {
        let _ = writeln!(out, "{},{}", record.step, best);
    }
    out
}

/// Per-pose localization report.
pub fn route_csv(report: &RouteReport) -> String {
    let mut out = String::from("pose_id,tx,ty,tz,trans_err,rot_err,hit1,hit2,hit3\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.pose_id,
            row.est_position[0],
            row.est_position[1],
            row.est_position[2],
            row.translation_error,
            row.rotation_error_deg,
            row.hits[0] as u8,
            row.hits[1] as u8,
            row.hits[2] as u8,
        );
    }
    out
}

const STATS_HEADER: &str = "beam_id,mean_points,points_road,points_building,points_vegetation,points_dynamic,points_other,mean_distance,mean_distance_std,mean_elevation";

/// One row per beam: id plus the nine per-beam features.
pub fn stats_csv(stats: &StatsTable) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for (beam_id, s) in stats.iter() {
        let _ = write!(out, "{beam_id}");
        for v in s.as_values() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parses a CSV produced by [`stats_csv`] back into a table (the bridge
/// feature source).
pub fn parse_stats_csv(text: &str) -> Result<StatsTable, CliError> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config("stats csv is empty".into()))?;
    if header.trim() != STATS_HEADER {
        return Err(CliError::Config(format!(
            "stats csv header mismatch: {header:?}"
        )));
    }
    let mut table = StatsTable::new();
    for (line_no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(CliError::Config(format!(
                "stats csv line {}: expected 10 fields, got {}",
                line_no + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, CliError> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("stats csv line {}: {e}", line_no + 2)))
        };
        let beam_id: u32 = fields[0]
            .trim()
            .parse()
            .map_err(|e| CliError::Config(format!("stats csv line {}: {e}", line_no + 2)))?;
        table.insert(
            beam_id,
            BeamStats {
                mean_points: parse(fields[1])?,
                mean_class_points: [
                    parse(fields[2])?,
                    parse(fields[3])?,
                    parse(fields[4])?,
                    parse(fields[5])?,
                    parse(fields[6])?,
                ],
                mean_distance: parse(fields[7])?,
                mean_distance_std: parse(fields[8])?,
                mean_elevation: parse(fields[9])?,
                num_scans: 0,
            },
        );
    }
    Ok(table)
}

/// Full exhaustive table: `beam_ids,value` in lexicographic order.
pub fn table_csv(table: &ExhaustiveTable) -> String {
    let mut out = String::from("beam_ids,value\n");
    for (config, value) in &table.entries {
        let _ = writeln!(out, "{},{}", config.canonical_key(), value);
    }
    out
}

/// Point cloud export: `x,y,z,class,beam` (beam 0 for map points).
pub fn cloud_csv(cloud: &LabeledPointCloud) -> String {
    let mut out = String::from("x,y,z,class,beam\n");
    for p in &cloud.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.position.x,
            p.position.y,
            p.position.z,
            p.class.label(),
            p.beam_id
        );
    }
    out
}

pub fn map_csv(map: &MapCloud) -> String {
    let mut out = String::from("x,y,z,class,beam\n");
    for (point, class) in map.points.iter().zip(&map.classes) {
        let _ = writeln!(
            out,
            "{},{},{},{},0",
            point.x,
            point.y,
            point.z,
            class.label()
        );
    }
    out
}

/// Plain-text comparison table over result files.
pub fn summary_text(results: &[(String, &ResultFile)]) -> String {
    let mut out = String::from(
        "method        seed    env_calls  best_value  best_config\n",
    );
    for (name, file) in results {
        let r = &file.result;
        let _ = writeln!(
            out,
            "{:<12}  {:<6}  {:<9}  {:<10.6}  {}  ({name})",
            r.method,
            r.params.seed,
            r.env_calls,
            r.best_value,
            r.best.canonical_key(),
        );
    }
    out
}

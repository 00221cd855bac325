//! File artifacts: the JSONL run log, the front CSV, and DOT renderings
//! of committed fusion graphs. Writers are deterministic so re-exports
//! of the same inputs are byte-identical.

use std::fs;
use std::path::Path;

use fusenas_core::engine::{AblationRow, RunRecord};
use fusenas_core::moo::{eval_score, ObjectivePoint, ACC_LAT_ERGY};
use fusenas_core::searchspace::SpaceConfig;
use fusenas_core::{Error, Result};

pub fn read_log(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| {
                Error::parse(path.display().to_string(), format!("line {}: {e}", i + 1))
            })
        })
        .collect()
}

pub fn front_csv_header(modalities: &[String]) -> String {
    let genomes: Vec<String> = modalities.iter().map(|m| format!("genome_{m}")).collect();
    format!(
        "candidate_id,generation,{},C,D,acc,lat_ms,ergy_mj,rank,crowding",
        genomes.join(",")
    )
}

/// Front CSV: one row per non-dominated candidate, ranked and crowded
/// against the *whole* log. Columns: candidate_id, generation, one
/// encoded genome per modality, the macro shape, the three objectives,
/// rank, crowding.
pub fn front_csv(
    log: &[RunRecord],
    front: &[RunRecord],
    modalities: &[String],
    space: &SpaceConfig,
) -> Result<String> {
    let mut out = front_csv_header(modalities);
    out.push('\n');
    if front.is_empty() {
        return Ok(out);
    }
    let points: Vec<ObjectivePoint> = log
        .iter()
        .map(|r| {
            ObjectivePoint::new(
                r.candidate_id,
                vec![r.multimodal.acc, r.multimodal.lat_ms, r.multimodal.ergy_mj],
            )
        })
        .collect();
    let scored = eval_score(&points, &ACC_LAT_ERGY)?;
    for rec in front {
        let score = scored
            .iter()
            .find(|s| s.point.id == rec.candidate_id)
            .ok_or_else(|| Error::invalid("front", "front member missing from the log"))?;
        let mut row = format!("{},{}", rec.candidate_id, rec.generation);
        for name in modalities {
            let backbone = rec
                .genome
                .backbones
                .iter()
                .find(|b| &b.modality == name)
                .ok_or_else(|| {
                    Error::invalid("log", format!("candidate {} lacks modality {name}", rec.candidate_id))
                })?;
            let enc: Vec<String> =
                backbone.encode(space)?.into_iter().map(|v| v.to_string()).collect();
            row.push(',');
            row.push_str(&enc.join("-"));
        }
        row.push_str(&format!(
            ",{},{},{},{},{},{},{}",
            rec.genome.macro_cfg.cells,
            rec.genome.macro_cfg.nodes,
            rec.multimodal.acc,
            rec.multimodal.lat_ms,
            rec.multimodal.ergy_mj,
            score.rank,
            score.crowding
        ));
        out.push_str(&row);
        out.push('\n');
    }
    Ok(out)
}

/// A parsed front CSV row; the loader half of the round-trip contract.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontRow {
    pub candidate_id: u64,
    pub generation: usize,
    pub genomes: Vec<Vec<usize>>,
    pub cells: usize,
    pub nodes: usize,
    pub acc: f64,
    pub lat_ms: f64,
    pub ergy_mj: f64,
    pub rank: usize,
    pub crowding: f64,
}

pub fn parse_front_csv(text: &str) -> Result<(Vec<String>, Vec<FrontRow>)> {
    let bad = |detail: String| Error::parse("front csv", detail);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.len();
    if n < 10 || cols[0] != "candidate_id" || cols[n - 1] != "crowding" {
        return Err(bad(format!("unexpected header `{header}`")));
    }
    let modalities: Vec<String> = cols[2..n - 7]
        .iter()
        .map(|c| {
            c.strip_prefix("genome_")
                .map(str::to_string)
                .ok_or_else(|| bad(format!("unexpected column `{c}`")))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n {
            return Err(bad(format!("row {}: {} fields, want {n}", i + 2, fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| bad(format!("row {}: bad number `{s}`", i + 2)))
        };
        let int = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| bad(format!("row {}: bad count `{s}`", i + 2)))
        };
        let genomes: Vec<Vec<usize>> = fields[2..2 + modalities.len()]
            .iter()
            .map(|f| f.split('-').map(int).collect())
            .collect::<Result<_>>()?;
        let tail = &fields[2 + modalities.len()..];
        rows.push(FrontRow {
            candidate_id: fields[0]
                .parse()
                .map_err(|_| bad(format!("row {}: bad id `{}`", i + 2, fields[0])))?,
            generation: int(fields[1])?,
            genomes,
            cells: int(tail[0])?,
            nodes: int(tail[1])?,
            acc: num(tail[2])?,
            lat_ms: num(tail[3])?,
            ergy_mj: num(tail[4])?,
            rank: int(tail[5])?,
            crowding: num(tail[6])?,
        });
    }
    Ok((modalities, rows))
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("label,acc,lat_ms,ergy_mj\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.label, r.acc, r.lat_ms, r.ergy_mj));
    }
    out
}

/// Render a committed candidate as DOT: the graph's own rendering plus a
/// header comment tying the file back to its run-log entry.
pub fn graph_dot(rec: &RunRecord) -> String {
    format!(
        "// candidate {} (generation {}): acc {}, lat {} ms, energy {} mJ\n{}",
        rec.candidate_id,
        rec.generation,
        rec.multimodal.acc,
        rec.multimodal.lat_ms,
        rec.multimodal.ergy_mj,
        rec.graph.to_dot()
    )
}

#![allow(dead_code)]

use serde::Deserialize;
use sketchnav_core::command::{parse_instruction, ClarificationSlot, ParseResult, TaskSpec};
use sketchnav_core::constraints::SemanticMap;
use std::path::{Path, PathBuf};

pub fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[derive(Debug, Deserialize)]
pub struct Canonical {
    pub text: String,
    #[serde(default)]
    pub task: Option<TaskSpec>,
    #[serde(default)]
    pub virtual_obstacles: usize,
    #[serde(default)]
    pub keep_out_zones: usize,
    #[serde(default)]
    pub radius: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct Ambiguous {
    pub text: String,
    pub slot: String,
}

#[derive(Debug, Deserialize)]
pub struct Corpus {
    pub map: String,
    pub pedestrians: Vec<String>,
    pub canonical: Vec<Canonical>,
    pub ambiguous: Vec<Ambiguous>,
}

pub fn corpus() -> (Corpus, SemanticMap) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let c: Corpus = serde_json::from_str(&std::fs::read_to_string(dir.join("parser_corpus.json")).unwrap()).unwrap();
    let map = SemanticMap::load(dir.join(&c.map)).unwrap();
    (c, map)
}

fn slot_name(s: &ClarificationSlot) -> &'static str {
    match s {
        ClarificationSlot::Task => "Task",
        ClarificationSlot::Goal => "Goal",
        ClarificationSlot::Vip => "Vip",
        ClarificationSlot::Fixture(_) => "Fixture",
        ClarificationSlot::HazardLocation => "HazardLocation",
    }
}

/// Checks one canonical entry; `Err` carries a description of the mismatch.
pub fn check_canonical(e: &Canonical, map: &SemanticMap, peds: &[String]) -> Result<(), String> {
    match parse_instruction(&e.text, map, peds) {
        ParseResult::Parsed { task, constraints } => {
            if task != e.task {
                return Err(format!("{:?}: task {task:?}, expected {:?}", e.text, e.task));
            }
            let (v, k) = (constraints.virtual_obstacles.len(), constraints.keep_out_zones.len());
            if (v, k) != (e.virtual_obstacles, e.keep_out_zones) {
                return Err(format!("{:?}: {v} virtual / {k} keep-out, expected {} / {}", e.text, e.virtual_obstacles, e.keep_out_zones));
            }
            if let Some(r) = e.radius {
                // Every zone is a fixture footprint grown by r on each side.
                for region in constraints.virtual_obstacles.iter().chain(&constraints.keep_out_zones) {
                    let (lo, hi) = region.parts[0].bounding_box();
                    let size = hi - lo;
                    let fits = map.fixtures().iter().any(|f| {
                        let c = (lo + hi) * 0.5;
                        c.distance(f.center) < 1e-9 && (size.x - f.length - 2.0 * r).abs() < 1e-9 && (size.y - f.width - 2.0 * r).abs() < 1e-9
                    });
                    if !fits {
                        return Err(format!("{:?}: zone {size:?} is not a footprint grown by {r}", e.text));
                    }
                }
            }
            Ok(())
        }
        ParseResult::NeedsClarification(c) => Err(format!("{:?}: asked {:?}", e.text, c.question)),
    }
}

pub fn check_ambiguous(e: &Ambiguous, map: &SemanticMap, peds: &[String]) -> Result<(), String> {
    match parse_instruction(&e.text, map, peds) {
        ParseResult::NeedsClarification(c) if slot_name(&c.slot) == e.slot => Ok(()),
        other => Err(format!("{:?}: {other:?}, expected a {} question", e.text, e.slot)),
    }
}

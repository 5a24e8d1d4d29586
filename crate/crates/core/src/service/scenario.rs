//! Scenario files: a world, a semantic map, pedestrians, a robot start and a
//! list of scripted tests.

use crate::command::Place;
use crate::constraints::{SemanticMap, SemanticMapFile, Sketch};
use crate::crowd::{PedestrianConfig, PedestrianModel};
use crate::world::{Pose, World, WorldFile};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioMode {
    Static,
    Pedestrian,
}

/// Either a path (relative to the scenario file) or the value inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ref<T> {
    Path(String),
    Inline(T),
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| ScenarioError::Parse { path: path.into(), source })
}

impl<T: DeserializeOwned + Clone> Ref<T> {
    fn resolve(&self, base: &Path) -> Result<T, ScenarioError> {
        match self {
            Ref::Inline(v) => Ok(v.clone()),
            Ref::Path(p) => read_json(&base.join(p)),
        }
    }
}

/// One scripted run inside a scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TestCase {
    pub name: String,
    /// Natural-language instruction issued at the start.
    pub instruction: Option<String>,
    /// Sketches placed before the start.
    pub sketches: Vec<Sketch>,
    /// Goal used when the instruction gives none.
    pub goal: Option<Place>,
    /// Points the robot must pass; missing one is a γ failure.
    pub expected_vias: Vec<Place>,
    pub start: Option<Pose>,
    /// Uniform jitter applied to the start position (m) in evaluation.
    pub start_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub mode: ScenarioMode,
    pub world: Ref<WorldFile>,
    #[serde(default)]
    pub map: Option<Ref<SemanticMapFile>>,
    #[serde(default)]
    pub pedestrians: Vec<PedestrianConfig>,
    pub robot_start: Pose,
    #[serde(default)]
    pub tests: Vec<TestCase>,
    /// Replaces the required moving-pedestrian count of the mode.
    #[serde(default)]
    pub pedestrian_count_override: Option<usize>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    400
}

/// A scenario with every reference loaded and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub mode: ScenarioMode,
    pub world: World,
    pub map: SemanticMap,
    pub pedestrians: Vec<PedestrianConfig>,
    pub robot_start: Pose,
    pub tests: Vec<TestCase>,
    pub pedestrian_count_override: Option<usize>,
    pub max_steps: usize,
}

pub const PEDESTRIAN_MODE_COUNT: usize = 3;

fn is_moving(p: &PedestrianConfig) -> bool {
    match p.model {
        PedestrianModel::Scripted => p.trajectory.len() > 1,
        _ => p.waypoints.iter().any(|w| w.distance(p.start) > 1e-9),
    }
}

impl Scenario {
    pub fn from_file(file: &ScenarioFile, base: &Path) -> Result<Self, ScenarioError> {
        let world_file = file.world.resolve(base)?;
        let world = World::try_from(world_file).map_err(|e| ScenarioError::Invalid(format!("world: {e}")))?;
        let map = match &file.map {
            Some(r) => SemanticMap::try_from(r.resolve(base)?).map_err(|e| ScenarioError::Invalid(format!("map: {e}")))?,
            None => SemanticMap::default(),
        };
        let s = Scenario {
            name: file.name.clone(),
            description: file.description.clone(),
            mode: file.mode,
            world,
            map,
            pedestrians: file.pedestrians.clone(),
            robot_start: file.robot_start,
            tests: file.tests.clone(),
            pedestrian_count_override: file.pedestrian_count_override,
            max_steps: file.max_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let file: ScenarioFile = read_json(path)?;
        Scenario::from_file(&file, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn moving_pedestrians(&self) -> usize {
        self.pedestrians.iter().filter(|p| is_moving(p) && !p.vip).count()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        if !self.world.is_free(self.robot_start.position()) {
            return bad("robot start is not in free space".into());
        }
        let mut ids: Vec<&str> = self.pedestrians.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0].eq_ignore_ascii_case(w[1])) {
            return bad("duplicate pedestrian id".into());
        }
        let moving = self.moving_pedestrians();
        match (self.mode, self.pedestrian_count_override) {
            (_, Some(n)) if moving != n => return bad(format!("expected {n} moving pedestrians, found {moving}")),
            (ScenarioMode::Static, None) if self.pedestrians.iter().any(is_moving) => {
                return bad("static scenario has moving pedestrians".into())
            }
            (ScenarioMode::Pedestrian, None) if moving != PEDESTRIAN_MODE_COUNT => {
                return bad(format!("pedestrian scenario needs {PEDESTRIAN_MODE_COUNT} moving pedestrians, found {moving}"))
            }
            _ => {}
        }
        for (k, t) in self.tests.iter().enumerate() {
            if t.instruction.is_none() && t.goal.is_none() && !t.sketches.iter().any(|s| s.kind == crate::constraints::SketchKind::GoalMark) {
                return bad(format!("test {k} has no instruction and no goal"));
            }
            if !(t.start_jitter >= 0.0) {
                return bad(format!("test {k} has a negative start jitter"));
            }
            for s in &t.sketches {
                s.validate().map_err(|e| ScenarioError::Invalid(format!("test {k} sketch: {e}")))?;
            }
        }
        Ok(())
    }

    /// Self-contained file form with the world and map inline.
    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            name: self.name.clone(),
            description: self.description.clone(),
            mode: self.mode,
            world: Ref::Inline(WorldFile::from(self.world.clone())),
            map: Some(Ref::Inline(SemanticMapFile::from(self.map.clone()))),
            pedestrians: self.pedestrians.clone(),
            robot_start: self.robot_start,
            tests: self.tests.clone(),
            pedestrian_count_override: self.pedestrian_count_override,
            max_steps: self.max_steps,
        }
    }

    pub fn test_names(&self) -> Vec<String> {
        self.tests.iter().map(|t| t.name.clone()).collect()
    }
}

//! Per-episode records and aggregate outcome rates.

use crate::geometry::Vec2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    /// Contact with a virtual obstacle.
    Alpha,
    /// Entry into a keep-out zone.
    Beta,
    /// Goal reached without passing every required via point.
    Gamma,
    Timeout,
    /// Contact with physical geometry or a pedestrian.
    Collision,
}

impl Outcome {
    pub const ALL: [Outcome; 6] =
        [Outcome::Success, Outcome::Alpha, Outcome::Beta, Outcome::Gamma, Outcome::Timeout, Outcome::Collision];

    pub fn label(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Alpha => "alpha",
            Outcome::Beta => "beta",
            Outcome::Gamma => "gamma",
            Outcome::Timeout => "timeout",
            Outcome::Collision => "collision",
        }
    }
}

/// How the robot was driven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Policy fed the merged scan.
    Fused,
    /// Policy fed the physical scan only.
    PhysicalOnly,
    /// Operator teleoperation with constraints displayed.
    Manual,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Fused => "fused",
            Method::PhysicalOnly => "physical-only",
            Method::Manual => "manual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scenario: String,
    pub test: String,
    pub episode: u64,
    pub method: Method,
    pub outcome: Outcome,
    pub ticks: u64,
    pub time_s: f64,
    pub path_length: f64,
    pub vias_passed: Vec<bool>,
    pub trajectory: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rates {
    pub success: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub timeout: f64,
    pub collision: f64,
}

impl Rates {
    pub fn get(&self, o: Outcome) -> f64 {
        match o {
            Outcome::Success => self.success,
            Outcome::Alpha => self.alpha,
            Outcome::Beta => self.beta,
            Outcome::Gamma => self.gamma,
            Outcome::Timeout => self.timeout,
            Outcome::Collision => self.collision,
        }
    }

    pub fn total(&self) -> f64 {
        Outcome::ALL.iter().map(|&o| self.get(o)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no episodes recorded")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: Vec<EpisodeRecord>,
}

impl Metrics {
    pub fn new(episodes: Vec<EpisodeRecord>) -> Self {
        Metrics { episodes }
    }

    pub fn push(&mut self, r: EpisodeRecord) {
        self.episodes.push(r);
    }

    pub fn count(&self, o: Outcome) -> usize {
        self.episodes.iter().filter(|e| e.outcome == o).count()
    }

    /// Outcome fractions. The categories partition the episodes, so the
    /// rates sum to one up to rounding.
    pub fn rates(&self) -> Result<Rates, MetricsError> {
        let n = self.episodes.len();
        if n == 0 {
            return Err(MetricsError::Empty);
        }
        let f = |o| self.count(o) as f64 / n as f64;
        Ok(Rates {
            success: f(Outcome::Success),
            alpha: f(Outcome::Alpha),
            beta: f(Outcome::Beta),
            gamma: f(Outcome::Gamma),
            timeout: f(Outcome::Timeout),
            collision: f(Outcome::Collision),
        })
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.episodes.iter().map(|e| e.method).collect();
        m.sort_unstable();
        m.dedup();
        m
    }

    pub fn for_method(&self, m: Method) -> Metrics {
        Metrics::new(self.episodes.iter().filter(|e| e.method == m).cloned().collect())
    }

    /// Mean time and path length over successful episodes.
    pub fn mean_success_time_and_length(&self) -> Option<(f64, f64)> {
        let ok: Vec<_> = self.episodes.iter().filter(|e| e.outcome == Outcome::Success).collect();
        if ok.is_empty() {
            return None;
        }
        let n = ok.len() as f64;
        Some((ok.iter().map(|e| e.time_s).sum::<f64>() / n, ok.iter().map(|e| e.path_length).sum::<f64>() / n))
    }
}

#[cfg(test)]
pub(crate) fn record(outcome: Outcome, method: Method) -> EpisodeRecord {
    EpisodeRecord {
        scenario: "s".into(),
        test: "t".into(),
        episode: 0,
        method,
        outcome,
        ticks: 10,
        time_s: 1.0,
        path_length: 1.0,
        vias_passed: vec![],
        trajectory: vec![Vec2::ZERO, Vec2::new(1.0, 0.0)],
    }
}
